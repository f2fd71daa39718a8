"""Shared builders for randomized model parameters and the reference run."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from langgrasp.attention import AttentionParams, StreamWeights
from langgrasp.autodiff import Tensor
from langgrasp.grasp_head import GraspHeadParams

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def reference_run():
    """The benchmark training run: 3,000 train scenes, 30 epochs, seed 42.

    Several minutes of work, shared by the trainer invariants and the
    end-to-end acceptance checks, so it runs at most once per session.
    """
    import time

    from langgrasp.data import GeneratorConfig, generate_dataset
    from langgrasp.train import TrainConfig, train

    gen_cfg = GeneratorConfig(seed=42)
    train_scenes, eval_seen, eval_unseen = generate_dataset(gen_cfg, 3000, 500, 500)
    train_cfg = TrainConfig(epochs=30, seed=13)
    start = time.monotonic()
    ckpt = train(train_cfg, train_scenes)
    elapsed = time.monotonic() - start
    return {
        "gen_cfg": gen_cfg,
        "train_cfg": train_cfg,
        "ckpt": ckpt,
        "eval_seen": eval_seen,
        "eval_unseen": eval_unseen,
        "train_seconds": elapsed,
    }


def random_stream(rng, dim, grad=False):
    scale = 1.0 / np.sqrt(dim)
    return StreamWeights(
        w_q=Tensor(rng.normal(0.0, scale, (dim, dim)), requires_grad=grad),
        w_k=Tensor(rng.normal(0.0, scale, (dim, dim)), requires_grad=grad),
        w_v=Tensor(rng.normal(0.0, scale, (dim, dim)), requires_grad=grad),
        w_o=Tensor(rng.normal(0.0, scale, (dim, dim)), requires_grad=grad),
        ln_gain=Tensor(rng.uniform(0.5, 1.5, (1, dim)), requires_grad=grad),
        ln_bias=Tensor(0.1 * rng.normal(size=(1, dim)), requires_grad=grad),
    )


def random_attention(rng, dim, heads, grad=False):
    return AttentionParams(
        dim=dim,
        heads=heads,
        text=random_stream(rng, dim, grad),
        vis=random_stream(rng, dim, grad),
        seg=random_stream(rng, dim, grad),
    )


def random_head(rng, dim, hidden, grad=False):
    def w(rows, cols):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(rows), (rows, cols)), requires_grad=grad)

    return GraspHeadParams(
        dim=dim,
        d_hidden=hidden,
        w_fuse1=w(2 * dim, hidden),
        b_fuse1=Tensor(0.1 * rng.normal(size=(1, hidden)), requires_grad=grad),
        w_fuse2=w(hidden, hidden),
        b_fuse2=Tensor(0.1 * rng.normal(size=(1, hidden)), requires_grad=grad),
        w_score=w(hidden, 2),
        b_score=Tensor(0.1 * rng.normal(size=(1, 2)), requires_grad=grad),
        w_rect=w(hidden, 5),
        b_rect=Tensor(0.1 * rng.normal(size=(1, 5)), requires_grad=grad),
    )
