"""Training objectives: triplet correspondence alignment and the grasp loss.

The correspondence loss pulls each proposal's attended visual embedding toward
its own attended segmentation embedding and pushes it away from the hardest
impostor in the scene, mined per anchor on both sides of the similarity
matrix.  The grasp loss combines cross-entropy over the graspable logits with
a smooth-L1 penalty on the positive proposals' rectangle parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import GraspRect
from .grasp_head import GraspPrediction

__all__ = [
    "LossConfig",
    "similarity",
    "mine_hard_negatives",
    "correspondence_loss",
    "grasp_loss",
    "total_loss",
    "rect_regression_target",
]

# keeps log() finite even if a softmax output saturates
_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters: triplet margin, rect-regression weight, and the
    mixing weight of the correspondence term in the total objective."""

    alpha: float = 0.1
    beta: float = 1.4
    lambda_cor: float = 0.8
    smooth_l1_delta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"margin alpha must be positive, got {self.alpha}")
        if self.beta < 0 or self.lambda_cor < 0:
            raise ValueError(
                f"loss weights must be non-negative, got beta={self.beta}, "
                f"lambda_cor={self.lambda_cor}"
            )
        if self.smooth_l1_delta <= 0:
            raise ValueError(f"smooth_l1_delta must be positive, got {self.smooth_l1_delta}")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.where(norms >= 1e-12, norms, 1.0)


def similarity(a: Tensor, b: Tensor) -> float:
    """Cosine-style similarity: inner product of the L2-normalized rows."""
    if a.rows != 1 or b.rows != 1 or a.cols != b.cols:
        raise ad.ShapeError(
            f"similarity expects two rows of equal width, got {a.shape} and {b.shape}"
        )
    return float((_unit_rows(a.data) * _unit_rows(b.data)).sum())


def mine_hard_negatives(z_vis: Tensor, z_seg: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Hardest impostor per anchor on both sides of the similarity matrix.

    For anchor m, ``i[m]`` is the off-diagonal segmentation embedding most
    similar to the m-th visual embedding (row direction) and ``j[m]`` the
    off-diagonal visual embedding most similar to the m-th segmentation
    embedding (column direction).  Ties resolve to the lowest index, and no
    gradient flows through the selection.
    """
    _check_pair(z_vis, z_seg)
    sim = _unit_rows(z_vis.data) @ _unit_rows(z_seg.data).T
    np.fill_diagonal(sim, -np.inf)
    return sim.argmax(axis=1), sim.argmax(axis=0)


def _check_pair(z_vis: Tensor, z_seg: Tensor) -> None:
    if z_vis.data.shape != z_seg.data.shape:
        raise ad.ShapeError(
            f"embedding shapes disagree: {z_vis.data.shape} vs {z_seg.data.shape}"
        )
    if z_vis.rows < 2:
        raise ValueError(f"correspondence mining needs at least 2 proposals, got {z_vis.rows}")


def correspondence_loss(z_vis: Tensor, z_seg: Tensor, cfg: LossConfig) -> Tensor:
    """Two-sided triplet hinge over the per-proposal similarity matrix."""
    _check_pair(z_vis, z_seg)
    m = z_vis.rows
    sim = ad.matmul(ad.l2_normalize_rows(z_vis), ad.transpose(ad.l2_normalize_rows(z_seg)))
    hard_i, hard_j = mine_hard_negatives(z_vis, z_seg)
    anchors = np.arange(m)
    pos = ad.gather(sim, anchors, anchors)
    neg_row = ad.gather(sim, anchors, hard_i)
    neg_col = ad.gather(sim, hard_j, anchors)
    margin = Tensor(np.full((1, m), cfg.alpha))
    row_hinge = ad.relu(ad.add(ad.sub(neg_row, pos), margin))
    col_hinge = ad.relu(ad.add(ad.sub(neg_col, pos), margin))
    return ad.add(ad.sum(row_hinge), ad.sum(col_hinge))


def rect_regression_target(rect: GraspRect) -> np.ndarray:
    """A rect as the 5 regression coordinates (x, y, w, h, theta/90)."""
    return np.array([rect.x, rect.y, rect.w, rect.h, rect.theta / 90.0])


def grasp_loss(
    pred: GraspPrediction,
    labels: Sequence[bool],
    gt_rects: Sequence[GraspRect],
    cfg: LossConfig,
) -> Tensor:
    """Cross-entropy on graspability plus smooth-L1 on positive rect params.

    Negative-log-likelihood of the correct class for every proposal, plus
    ``beta`` times the smooth-L1 distance between each positive proposal's
    predicted rect parameters and its ground truth.
    """
    m = pred.logits.rows
    flags = np.asarray(labels, dtype=bool)
    if flags.shape != (m,):
        raise ValueError(f"need one label per proposal: {flags.shape} vs {m} proposals")
    if len(gt_rects) != m:
        raise ValueError(f"need one gt rect per proposal: {len(gt_rects)} vs {m}")
    if not flags.any():
        raise ValueError("grasp_loss needs at least one positive proposal")

    probs = ad.clamp(ad.row_softmax(pred.logits), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    log_probs = ad.log(probs)
    # column 0 is the graspable class
    picked = ad.gather(log_probs, np.arange(m), np.where(flags, 0, 1))
    classification = ad.scale(ad.sum(picked), -1.0)

    targets = np.stack([rect_regression_target(r) for r in gt_rects])
    residual = ad.smooth_l1(ad.sub(pred.rect_params, Tensor(targets)), cfg.smooth_l1_delta)
    positive_rows = np.repeat(flags[:, None], 5, axis=1).astype(float)
    regression = ad.sum(ad.mul(residual, Tensor(positive_rows)))
    return ad.add(classification, ad.scale(regression, cfg.beta))


def total_loss(l_grasp: Tensor, l_cor: Tensor, cfg: LossConfig) -> Tensor:
    """Full objective: grasp loss plus ``lambda_cor`` times the correspondence loss."""
    return ad.add(l_grasp, ad.scale(l_cor, cfg.lambda_cor))
