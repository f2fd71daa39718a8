"""Grasp head: fusion MLP, scoring, rect decoding, selection."""

import numpy as np
import pytest

from langgrasp import autodiff as ad
from langgrasp.autodiff import ShapeError, Tensor
from langgrasp.grasp_head import (
    GraspHeadParams,
    GraspPrediction,
    fuse_and_score,
    select_best,
)

import oracles
from conftest import random_head

ATOL = 1e-12


def make_prediction(scores, rects=None):
    from langgrasp.geometry import GraspRect

    scores = np.asarray(scores, dtype=np.float64)
    if rects is None:
        rects = [GraspRect(0.5, 0.5, 0.2, 0.1, 0.0) for _ in scores]
    m = len(scores)
    return GraspPrediction(
        logits=Tensor(np.zeros((max(m, 1), 2))),
        rect_params=Tensor(np.zeros((max(m, 1), 5))),
        scores=scores,
        rects=list(rects),
        best_index=int(np.argmax(scores)) if m else 0,
    )


class TestForward:
    def test_zero_score_weights_give_half_probability(self):
        rng = np.random.default_rng(0)
        params = random_head(rng, 6, 12)
        params.w_score.data[:] = 0.0
        params.b_score.data[:] = 0.0
        z_text = Tensor(rng.normal(size=(2, 6)))
        z_vis = Tensor(rng.normal(size=(4, 6)))
        pred = fuse_and_score(z_text, z_vis, params)
        assert np.allclose(pred.scores, 0.5, atol=ATOL)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            params = random_head(rng, 8, 16)
            z_text = rng.normal(size=(3, 8))
            z_vis = rng.normal(size=(5, 8))
            pred = fuse_and_score(Tensor(z_text), Tensor(z_vis), params)
            logits, rect_params, scores = oracles.grasp_head_forward(
                z_text, z_vis, params
            )
            assert np.allclose(pred.scores, scores, atol=ATOL)
            decoded = np.array(
                [[r.x, r.y, r.w, r.h, r.theta / 90.0] for r in pred.rects]
            )
            want = np.stack(
                [
                    np.clip(rect_params[:, 0], 0.0, 1.0),
                    np.clip(rect_params[:, 1], 0.0, 1.0),
                    np.maximum(rect_params[:, 2], 1e-6),
                    np.maximum(rect_params[:, 3], 1e-6),
                    rect_params[:, 4],
                ],
                axis=1,
            )
            assert np.allclose(decoded, want, atol=1e-9)

    def test_probabilities_complement_to_one(self):
        rng = np.random.default_rng(2)
        params = random_head(rng, 6, 12)
        pred = fuse_and_score(
            Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(6, 6))), params
        )
        assert ((pred.scores >= 0.0) & (pred.scores <= 1.0)).all()
        probs = oracles.softmax_rows(pred.logits.data)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=ATOL)
        assert np.allclose(probs[:, 0], pred.scores, atol=ATOL)

    def test_decoded_rect_bounds(self):
        rng = np.random.default_rng(3)
        params = random_head(rng, 6, 12)
        # huge weights force raw outputs far outside the valid box
        params.w_rect.data[:] *= 200.0
        pred = fuse_and_score(
            Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(5, 6))), params
        )
        for r in pred.rects:
            assert 0.0 <= r.x <= 1.0 and 0.0 <= r.y <= 1.0
            assert r.w >= 1e-6 and r.h >= 1e-6
            # tanh saturates to exactly +-1 in float64, so the canonical
            # boundary -90 itself is reachable
            assert -90.0 <= r.theta < 90.0

    def test_angle_decoding_uses_tanh_times_ninety(self):
        rng = np.random.default_rng(4)
        params = random_head(rng, 6, 12)
        z_text = Tensor(rng.normal(size=(2, 6)))
        z_vis = Tensor(rng.normal(size=(3, 6)))
        pred = fuse_and_score(z_text, z_vis, params)
        _, rect_params, _ = oracles.grasp_head_forward(
            z_text.data, z_vis.data, params
        )
        for row, rect in zip(rect_params, pred.rects):
            assert rect.theta == pytest.approx(90.0 * row[4], abs=1e-9)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(5)
        params = random_head(rng, 6, 12)
        with pytest.raises(ShapeError):
            fuse_and_score(
                Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 6))), params
            )

    def test_head_param_width_validation(self):
        rng = np.random.default_rng(6)
        good = random_head(rng, 6, 12)
        with pytest.raises(ShapeError, match="w_score"):
            GraspHeadParams(
                dim=6, d_hidden=12,
                w_fuse1=good.w_fuse1, b_fuse1=good.b_fuse1,
                w_fuse2=good.w_fuse2, b_fuse2=good.b_fuse2,
                w_score=Tensor(np.zeros((12, 3))), b_score=Tensor(np.zeros((1, 3))),
                w_rect=good.w_rect, b_rect=good.b_rect,
            )


class TestSelectBest:
    def test_hand_example(self):
        pred = make_prediction([0.2, 0.9, 0.1])
        rect, idx = select_best(pred)
        assert idx == 1
        assert rect is pred.rects[1]

    def test_all_equal_scores_pick_first(self):
        _, idx = select_best(make_prediction([0.4, 0.4, 0.4]))
        assert idx == 0

    def test_forced_logits_prefer_first_max(self):
        rng = np.random.default_rng(7)
        params = random_head(rng, 6, 12)
        params.w_score.data[:] = 0.0
        params.b_score.data[:] = 0.0
        # every proposal ties at 0.5, so argmax falls to index 0
        pred = fuse_and_score(
            Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(3, 6))), params
        )
        assert pred.best_index == 0

    def test_monotone_transform_keeps_best_index(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(0.01, 0.99, 6)
        base = select_best(make_prediction(scores))[1]
        for f in (lambda s: s ** 3, lambda s: 2.0 * s + 0.1, np.tanh):
            assert select_best(make_prediction(f(scores)))[1] == base

    def test_empty_prediction_rejected(self):
        with pytest.raises(ValueError, match="no proposals"):
            select_best(make_prediction(np.array([])))


class TestGradients:
    def test_grad_check_through_fuse_and_score(self):
        rng = np.random.default_rng(9)
        params = random_head(rng, 6, 12, grad=True)
        z_text = Tensor(rng.normal(size=(2, 6)))
        z_vis = Tensor(rng.normal(size=(3, 6)))
        w_logit = Tensor(rng.uniform(-1, 1, (3, 2)))
        w_rect = Tensor(rng.uniform(-1, 1, (3, 5)))
        tensors = [t for _, t in params.named()]

        def f():
            pred = fuse_and_score(z_text, z_vis, params)
            return ad.add(
                ad.sum(ad.mul(pred.logits, w_logit)),
                ad.sum(ad.mul(pred.rect_params, w_rect)),
            )

        assert ad.grad_check(f, tensors) < 1e-4
