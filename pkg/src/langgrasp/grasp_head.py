"""Grasp scoring and rectangle regression on top of the attended features.

Each proposal's attended visual embedding is concatenated with the pooled
text embedding, pushed through a two-layer fusion MLP (relu between the
layers), and split into a two-logit graspable/ungraspable score head and a
five-parameter rectangle head.  Rect centers and sides are predicted directly
in [0,1]-normalized image coordinates; the orientation passes through tanh and
is scaled to degrees, which keeps it inside the canonical [-90, 90) range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .geometry import GraspRect

__all__ = ["GraspHeadParams", "GraspPrediction", "fuse_and_score", "select_best"]

# Sides below this floor would make a degenerate rect; only relevant for
# untrained heads, whose raw outputs may sit anywhere.
_MIN_SIDE = 1e-6

_FIELD_ORDER = (
    "w_fuse1", "b_fuse1", "w_fuse2", "b_fuse2",
    "w_score", "b_score", "w_rect", "b_rect",
)


@dataclass
class GraspHeadParams:
    """Fusion MLP plus the score and rectangle output heads.

    The fusion input is 2d wide (visual embedding next to pooled text) and the
    hidden width is ``d_hidden``; the score head emits 2 logits per proposal
    and the rect head 5 parameters.
    """

    dim: int
    d_hidden: int
    w_fuse1: Tensor
    b_fuse1: Tensor
    w_fuse2: Tensor
    b_fuse2: Tensor
    w_score: Tensor
    b_score: Tensor
    w_rect: Tensor
    b_rect: Tensor

    def __post_init__(self):
        d, h = self.dim, self.d_hidden
        if d < 1 or h < 1:
            raise ShapeError(f"need positive widths, got dim={d}, d_hidden={h}")
        expected = {
            "w_fuse1": (2 * d, h),
            "b_fuse1": (1, h),
            "w_fuse2": (h, h),
            "b_fuse2": (1, h),
            "w_score": (h, 2),
            "b_score": (1, 2),
            "w_rect": (h, 5),
            "b_rect": (1, 5),
        }
        for name, shape in expected.items():
            t = getattr(self, name)
            if t.data.shape != shape:
                raise ShapeError(f"{name} must be {shape}, got {t.data.shape}")

    def named(self):
        """Yield ``(dotted_name, tensor)`` pairs in a fixed, documented order."""
        for name in _FIELD_ORDER:
            yield f"head.{name}", getattr(self, name)


@dataclass
class GraspPrediction:
    """Per-proposal grasp outputs for one scene.

    ``logits`` (m x 2, graspable first) and ``rect_params`` (m x 5 with the
    angle as theta/90 in (-1, 1)) stay on the tape for the losses; ``scores``,
    ``rects`` and ``best_index`` are detached conveniences for evaluation.
    """

    logits: Tensor
    rect_params: Tensor
    scores: np.ndarray
    rects: List[GraspRect]
    best_index: int


def _decode_rect(row: np.ndarray) -> GraspRect:
    if not np.isfinite(row).all():
        # a poisoned forward still has to reach the loss, whose non-finite
        # value is what aborts training with the offending scene named;
        # crashing here instead would mask that diagnostic
        return GraspRect(0.5, 0.5, _MIN_SIDE, _MIN_SIDE, 0.0)
    return GraspRect(
        x=float(np.clip(row[0], 0.0, 1.0)),
        y=float(np.clip(row[1], 0.0, 1.0)),
        w=float(max(row[2], _MIN_SIDE)),
        h=float(max(row[3], _MIN_SIDE)),
        theta=90.0 * float(row[4]),
    )


def fuse_and_score(z_text: Tensor, z_vis: Tensor, params: GraspHeadParams) -> GraspPrediction:
    """Score every proposal against the pooled instruction and regress its rect."""
    if z_vis.cols != params.dim or z_text.cols != params.dim:
        raise ShapeError(
            f"feature width mismatch: head expects {params.dim}, "
            f"got text {z_text.cols} and vis {z_vis.cols}"
        )
    m = z_vis.rows
    pooled = ad.mean_rows(z_text)
    fused_in = ad.concat_cols(z_vis, ad.repeat_rows(pooled, m))
    hidden = ad.relu(ad.add_row(ad.matmul(fused_in, params.w_fuse1), params.b_fuse1))
    hidden = ad.add_row(ad.matmul(hidden, params.w_fuse2), params.b_fuse2)
    logits = ad.add_row(ad.matmul(hidden, params.w_score), params.b_score)
    raw_rect = ad.add_row(ad.matmul(hidden, params.w_rect), params.b_rect)
    rect_params = ad.concat_cols(
        ad.slice_cols(raw_rect, 0, 4), ad.tanh(ad.slice_cols(raw_rect, 4, 5))
    )

    # detached convenience copy of the graspable probability; the losses
    # recompute their own softmax from the taped logits
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    scores = e[:, 0] / e.sum(axis=1)
    rects = [_decode_rect(rect_params.data[i]) for i in range(m)]
    best_index = int(np.argmax(scores))
    return GraspPrediction(
        logits=logits,
        rect_params=rect_params,
        scores=scores,
        rects=rects,
        best_index=best_index,
    )


def select_best(pred: GraspPrediction) -> tuple[GraspRect, int]:
    """The most confidently graspable proposal; ties go to the lowest index."""
    if len(pred.rects) == 0:
        raise ValueError("prediction holds no proposals")
    idx = int(np.argmax(pred.scores))
    return pred.rects[idx], idx
