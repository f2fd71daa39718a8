"""Rotated grasp rectangles: exact IoU, angle metrics, and success accounting.

Exact intersection areas come from convex polygon clipping; an independent
Monte-Carlo estimator is provided for verification and benchmarking.  Both are
implemented twice: once in Cython (``_geomcore``) and once in plain Python
(``_geomref``).  The compiled core is preferred when importable; set
``LANGGRASP_GEOM_BACKEND=python`` or ``=compiled`` to force a choice.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "GEOM_BACKEND",
    "GraspRect",
    "EvalReport",
    "rect_to_polygon",
    "convex_intersection_area",
    "rotated_iou",
    "mc_rotated_iou",
    "angle_diff",
    "is_success",
    "harmonic_mean",
    "evaluate_split",
    "IOU_THRESHOLD",
    "ANGLE_THRESHOLD_DEG",
]

_choice = os.environ.get("LANGGRASP_GEOM_BACKEND", "auto")
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"LANGGRASP_GEOM_BACKEND must be auto, compiled, or python, got {_choice!r}")
if _choice == "python":
    from . import _geomref as _kernels
else:
    try:
        from . import _geomcore as _kernels  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise
        from . import _geomref as _kernels

GEOM_BACKEND: str = _kernels.BACKEND

# A predicted grasp counts as a hit only when it clears both bars (strictly).
IOU_THRESHOLD = 0.25
ANGLE_THRESHOLD_DEG = 30.0


@dataclass(frozen=True)
class GraspRect:
    """An oriented grasp rectangle in normalized image coordinates.

    ``x, y`` locate the center, ``w, h`` are the side lengths, and ``theta``
    is the orientation in degrees, canonicalized into [-90, 90).  A rectangle
    is symmetric under 180-degree rotation, so that half-open range covers
    every distinct pose.
    """

    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"rect sides must be positive, got w={self.w}, h={self.h}")
        canonical = math.fmod(float(self.theta) + 90.0, 180.0)
        if canonical < 0:
            canonical += 180.0
        object.__setattr__(self, "theta", canonical - 90.0)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))

    @property
    def area(self) -> float:
        return self.w * self.h


def rect_to_polygon(rect: GraspRect) -> np.ndarray:
    """Corner coordinates of ``rect`` as a 4 x 2 array in CCW order."""
    t = math.radians(rect.theta)
    ct, st = math.cos(t), math.sin(t)
    hw, hh = rect.w / 2.0, rect.h / 2.0
    corners = ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))
    out = np.empty((4, 2))
    for i, (u, v) in enumerate(corners):
        out[i, 0] = rect.x + u * ct - v * st
        out[i, 1] = rect.y + u * st + v * ct
    return out


def _polygon_area(poly: np.ndarray) -> float:
    x = poly[:, 0]
    y = poly[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


def convex_intersection_area(poly_a, poly_b) -> float:
    """Exact intersection area of two convex CCW polygons (0.0 when degenerate)."""
    a = np.ascontiguousarray(poly_a, dtype=np.float64)
    b = np.ascontiguousarray(poly_b, dtype=np.float64)
    for name, p in (("first", a), ("second", b)):
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValueError(f"{name} polygon must be (n >= 3) x 2, got shape {p.shape}")
    if _polygon_area(a) == 0.0 or _polygon_area(b) == 0.0:
        return 0.0
    return float(_kernels.polygon_clip_area(a, b))


def rotated_iou(a: GraspRect, b: GraspRect) -> float:
    """Exact intersection-over-union of two oriented rectangles."""
    inter = convex_intersection_area(rect_to_polygon(a), rect_to_polygon(b))
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _rect_kernel_params(rect: GraspRect) -> np.ndarray:
    t = math.radians(rect.theta)
    return np.array(
        [rect.x, rect.y, rect.w / 2.0, rect.h / 2.0, math.cos(t), math.sin(t)]
    )


def mc_rotated_iou(
    a: GraspRect,
    b: GraspRect,
    samples: int = 1_000_000,
    seed: int = 0,
    points: Optional[np.ndarray] = None,
) -> float:
    """Monte-Carlo IoU estimate, independent of the clipping path.

    Uniform samples are thrown over the joint bounding box of both rects and
    the IoU is the ratio of hits in both rects to hits in either.  Pass a
    pre-generated unit-square ``points`` array to reuse one sample cloud
    across many pairs; otherwise ``samples`` points are drawn from ``seed``.
    """
    if points is None:
        if samples < 1:
            raise ValueError(f"need at least one sample, got {samples}")
        points = np.random.default_rng(seed).random((samples, 2))
    pts = np.ascontiguousarray(points, dtype=np.float64)
    corners = np.vstack([rect_to_polygon(a), rect_to_polygon(b)])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    both, either = _kernels.mc_overlap_counts(
        pts,
        float(lo[0]),
        float(lo[1]),
        float(hi[0] - lo[0]),
        float(hi[1] - lo[1]),
        _rect_kernel_params(a),
        _rect_kernel_params(b),
    )
    if either == 0:
        return 0.0
    return both / either


def angle_diff(a_deg: float, b_deg: float) -> float:
    """Smallest angular distance in degrees under 180-degree rectangle symmetry."""
    d = math.fmod(abs(float(a_deg) - float(b_deg)), 180.0)
    return min(d, 180.0 - d)


def is_success(pred: GraspRect, gt_rects: Sequence[GraspRect]) -> bool:
    """Whether ``pred`` hits any ground-truth rect: IoU > 0.25 and angle < 30 deg.

    Both thresholds are strict, so landing exactly on one does not count.
    """
    gt_rects = list(gt_rects)
    if not gt_rects:
        raise ValueError("is_success needs at least one ground-truth rect")
    for gt in gt_rects:
        if (
            rotated_iou(pred, gt) > IOU_THRESHOLD
            and angle_diff(pred.theta, gt.theta) < ANGLE_THRESHOLD_DEG
        ):
            return True
    return False


def harmonic_mean(seen: float, unseen: float) -> float:
    """2su/(s+u), defined as 0 when both rates are 0."""
    if seen + unseen == 0.0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


@dataclass(frozen=True)
class EvalReport:
    """Success rates per category split plus their harmonic mean."""

    seen_success: float
    unseen_success: float
    harmonic: float
    seen_count: int
    unseen_count: int


def evaluate_split(results: Iterable[tuple[bool, bool]]) -> EvalReport:
    """Aggregate per-scene ``(success, is_unseen)`` flags into an EvalReport.

    Both splits must be represented; an empty split is a contract error named
    in the exception.
    """
    seen_hits = seen_total = unseen_hits = unseen_total = 0
    for success, is_unseen in results:
        if is_unseen:
            unseen_total += 1
            unseen_hits += bool(success)
        else:
            seen_total += 1
            seen_hits += bool(success)
    if seen_total == 0:
        raise ValueError("evaluate_split: the seen split is empty")
    if unseen_total == 0:
        raise ValueError("evaluate_split: the unseen split is empty")
    seen_rate = seen_hits / seen_total
    unseen_rate = unseen_hits / unseen_total
    return EvalReport(
        seen_success=seen_rate,
        unseen_success=unseen_rate,
        harmonic=harmonic_mean(seen_rate, unseen_rate),
        seen_count=seen_total,
        unseen_count=unseen_total,
    )
