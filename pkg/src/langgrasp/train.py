"""Training loop, Adam optimizer, evaluation, and checkpoint persistence.

The trainable state is the attention weights plus the grasp head; backbone
features (including the text tokens) stay frozen, so no gradient ever reaches
the inputs.  Scenes are shuffled each epoch and processed in mini-batches
whose per-scene gradients are averaged before each Adam step.

Checkpoints are single JSON documents (named parameter arrays, config, epoch,
optimizer RNG state, metric history).  JSON keeps them human-inspectable and,
because floats round-trip through repr, loading restores every bit, which the
determinism guarantees rely on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionParams,
    QueryMode,
    StreamFeatures,
    StreamWeights,
    language_vision_cross_attention,
    mask_guided_forward,
    text_self_attention,
)
from .autodiff import Tape, Tensor
from .data import Scene
from .geometry import EvalReport, evaluate_split, is_success
from .grasp_head import GraspHeadParams, fuse_and_score, select_best
from .losses import LossConfig, correspondence_loss, grasp_loss, total_loss

__all__ = [
    "TrainConfig",
    "ModelParams",
    "Checkpoint",
    "Adam",
    "NonFiniteLossError",
    "init_params",
    "scene_loss",
    "train",
    "predict_scene",
    "evaluate_model",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Training hit a NaN/inf loss; the message names the offending scene."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters and model-shape choices."""

    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    heads: int = 4
    query_mode: str = QueryMode.TEXT_QUERY.value
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    disable_seg_stream: bool = False
    disable_correspondence_loss: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.heads < 1:
            raise ValueError(f"heads must be at least 1, got {self.heads}")
        QueryMode(self.query_mode)  # rejects unknown modes


@dataclass
class ModelParams:
    """All trainable tensors: the attention block plus the grasp head."""

    attention: AttentionParams
    head: GraspHeadParams

    def named(self):
        yield from self.attention.named()
        yield from self.head.named()

    def tensors(self) -> List[Tensor]:
        return [t for _, t in self.named()]


def _uniform(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True)


def init_params(dim: int, heads: int, seed: int) -> ModelParams:
    """Scaled-uniform init: every matrix is drawn from +/- 1/sqrt(fan_in).

    Draw order is fixed (text, vis, seg streams, then the head), so a seed
    pins every parameter bit.  Layer-norm gains start at one, biases at zero.
    """
    rng = np.random.default_rng((seed, 3))
    streams = {}
    for stream in ("text", "vis", "seg"):
        streams[stream] = StreamWeights(
            w_q=_uniform(rng, dim, dim, dim),
            w_k=_uniform(rng, dim, dim, dim),
            w_v=_uniform(rng, dim, dim, dim),
            w_o=_uniform(rng, dim, dim, dim),
            ln_gain=Tensor(np.ones((1, dim)), requires_grad=True),
            ln_bias=Tensor(np.zeros((1, dim)), requires_grad=True),
        )
    attention = AttentionParams(dim=dim, heads=heads, **streams)
    hidden = 2 * dim
    head = GraspHeadParams(
        dim=dim,
        d_hidden=hidden,
        w_fuse1=_uniform(rng, 2 * dim, hidden, 2 * dim),
        b_fuse1=Tensor(np.zeros((1, hidden)), requires_grad=True),
        w_fuse2=_uniform(rng, hidden, hidden, hidden),
        b_fuse2=Tensor(np.zeros((1, hidden)), requires_grad=True),
        w_score=_uniform(rng, hidden, 2, hidden),
        b_score=Tensor(np.zeros((1, 2)), requires_grad=True),
        w_rect=_uniform(rng, hidden, 5, hidden),
        b_rect=Tensor(np.zeros((1, 5)), requires_grad=True),
    )
    return ModelParams(attention=attention, head=head)


class Adam:
    """Adam with bias correction over a fixed list of named tensors."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in self.params}
        self._v = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self) -> None:
        """Apply one update from the gradients currently on the tensors."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def scene_loss(
    params: ModelParams,
    scene: Scene,
    cfg: TrainConfig,
) -> Tensor:
    """Forward one scene and return its total training loss (on the tape)."""
    feats = StreamFeatures(
        text=Tensor(scene.text), vis=Tensor(scene.vis), seg=Tensor(scene.seg)
    )
    mode = QueryMode(cfg.query_mode)
    if cfg.disable_seg_stream:
        # segmentation embeddings are zeroed out of the objective, which
        # reduces to dropping the correspondence term entirely
        _, z_text = text_self_attention(feats.text, params.attention)
        _, z_vis = language_vision_cross_attention(
            feats.text, feats.vis, params.attention, mode
        )
        pred = fuse_and_score(z_text, z_vis, params.head)
        return grasp_loss(pred, scene.labels, scene.gt_rects, cfg.loss)
    out = mask_guided_forward(feats, params.attention, mode)
    pred = fuse_and_score(out.z_text, out.z_vis, params.head)
    l_grasp = grasp_loss(pred, scene.labels, scene.gt_rects, cfg.loss)
    l_cor = correspondence_loss(out.z_vis, out.z_seg, cfg.loss)
    effective = cfg.loss if not cfg.disable_correspondence_loss else replace(
        cfg.loss, lambda_cor=0.0
    )
    return total_loss(l_grasp, l_cor, effective)


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to resume or audit the run."""

    params: ModelParams
    config: TrainConfig
    epoch: int
    rng_state: dict
    history: List[dict]


def train(
    cfg: TrainConfig,
    train_scenes: Sequence[Scene],
    eval_scenes: Optional[Sequence[Scene]] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> Checkpoint:
    """Optimize fresh parameters on ``train_scenes`` for ``cfg.epochs`` epochs.

    When ``eval_scenes`` is given, success rates are measured after every
    epoch and included in the per-epoch history record, which is also passed
    to ``on_epoch`` as it is produced.
    """
    if not train_scenes:
        raise ValueError("train() needs a nonempty training set")
    dim = train_scenes[0].vis.shape[1]
    if dim % cfg.heads != 0:
        raise ValueError(
            f"head count must divide the feature width: dim={dim}, heads={cfg.heads}"
        )
    params = init_params(dim, cfg.heads, cfg.seed)
    opt = Adam(
        list(params.named()), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
    )
    shuffle_rng = np.random.default_rng((cfg.seed, 4))
    history: List[dict] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_scenes))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                scene = train_scenes[idx]
                with Tape() as tape:
                    loss = scene_loss(params, scene, cfg)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteLossError(
                        f"non-finite loss {value} at scene {scene.scene_id} "
                        f"in epoch {epoch}"
                    )
                total += value
                tape.backward(loss)
            if len(batch) > 1:
                inv = 1.0 / len(batch)
                for _, p in opt.params:
                    if p.grad is not None:
                        p.grad *= inv
            opt.step()
        record = {"epoch": epoch + 1, "loss": total / len(train_scenes)}
        if eval_scenes:
            report = evaluate_model(params, eval_scenes, cfg)
            record.update(
                seen=report.seen_success,
                unseen=report.unseen_success,
                h=report.harmonic,
            )
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

    return Checkpoint(
        params=params,
        config=cfg,
        epoch=cfg.epochs,
        rng_state=shuffle_rng.bit_generator.state,
        history=history,
    )


def predict_scene(params: ModelParams, scene: Scene, cfg: TrainConfig):
    """Best grasp for one scene: (rect, proposal index).  Runs tape-free."""
    feats = StreamFeatures(
        text=Tensor(scene.text), vis=Tensor(scene.vis), seg=Tensor(scene.seg)
    )
    out = mask_guided_forward(feats, params.attention, QueryMode(cfg.query_mode))
    pred = fuse_and_score(out.z_text, out.z_vis, params.head)
    return select_best(pred)


def evaluate_model(
    params: ModelParams,
    eval_scenes: Sequence[Scene],
    cfg: TrainConfig,
) -> EvalReport:
    """Success rates of the best predicted grasp against each scene's target rect."""
    if not eval_scenes:
        raise ValueError("evaluate_model needs a nonempty eval set")
    dim = eval_scenes[0].vis.shape[1]
    if dim != params.attention.dim:
        raise ValueError(
            f"checkpoint width {params.attention.dim} does not match data width {dim}"
        )
    results = []
    for scene in eval_scenes:
        rect, _ = predict_scene(params, scene, cfg)
        hit = is_success(rect, [scene.gt_rects[scene.target_index]])
        results.append((hit, scene.is_unseen))
    return evaluate_split(results)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dim": ckpt.params.attention.dim,
        "heads": ckpt.params.attention.heads,
        "d_hidden": ckpt.params.head.d_hidden,
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "rng_state": _encode_rng(ckpt.rng_state),
        "history": ckpt.history,
        "params": {
            name: t.data.tolist() for name, t in ckpt.params.named()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {version!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    cfg_doc = dict(doc["config"])
    cfg_doc["loss"] = LossConfig(**cfg_doc["loss"])
    cfg = TrainConfig(**cfg_doc)
    params = init_params(doc["dim"], doc["heads"], cfg.seed)
    stored = doc["params"]
    for name, t in params.named():
        if name not in stored:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        arr = np.asarray(stored[name], dtype=np.float64)
        if arr.shape != t.data.shape:
            raise ValueError(
                f"parameter {name!r} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data = arr
    return Checkpoint(
        params=params,
        config=cfg,
        epoch=int(doc["epoch"]),
        rng_state=_decode_rng(doc["rng_state"]),
        history=list(doc["history"]),
    )


def _encode_rng(state: dict) -> dict:
    # numpy nests plain ints inside the state dict; JSON handles those as-is
    return json.loads(json.dumps(state))


def _decode_rng(state: dict) -> dict:
    return state
