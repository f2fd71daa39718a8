"""Deterministic synthetic scenes for language-conditioned grasp detection.

Every scene is built from seed-derived fixed structures: unit-Gaussian
category prototypes and random orthogonal maps that play the role of frozen
encoders.  Text and vision share one map (the streams live in a common
semantic space, the way a contrastively pretrained backbone aligns captions
with crops); segmentation gets an independent map.  A scene shows m
proposals; one is the target (drawn from the requested category), one to
three are distractors from other categories of the same split, and the rest
are pure noise.  Visual rows pack a proposal-probability scalar, the rect
center, a linear encoding of the proposal's own rect parameters, and
appearance features into the d columns:

    col 0      rho, the proposal probability
    cols 1:3   rect center (x, y)
    col 3      constant beacon; it dominates the row second moment so the
               row-normalization a downstream model applies becomes a nearly
               fixed affine map instead of a per-row distortion
    cols 4:10  rect parameters, centered and per-parameter gained, through a
               fixed 6x5 encoder with orthonormal columns, each orthogonal
               to the all-ones direction; the decode (E^T then undo the
               gains) is linear, exact at zero noise, and immune to
               constant shifts of the whole row
    cols 10:d  appearance: the trailing d-10 components of A @ c for real
               objects (index-aligned with the same components of the text
               rows), standard-normal draws for noise proposals

Each real object is a jittered instance of its category prototype (see
JITTER_SCALE), consistently across streams.  Segmentation rows are B @ c for
real objects (noise proposals get standard-normal garbage) and text tokens
are K noisy copies of A @ c_target.  All streams receive N(0, noise_sigma^2)
measurement noise.  Occlusion mode afterwards blends each distractor's
visual row halfway toward the target's, leaving segmentation clean, so the
segmentation stream becomes the reliable disambiguator.

RNG discipline: structures use stream (seed, 0), category assignment uses
(seed, 1), and scene i uses (seed, 2, i), so scenes are reproducible in
isolation and in parallel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np

from .geometry import GraspRect

__all__ = [
    "GeneratorConfig",
    "Structures",
    "Scene",
    "DatasetError",
    "derive_structures",
    "encode_rect",
    "decode_rect_cols",
    "generate_scene",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
]

SCHEMA_VERSION = 1

# Leading visual columns holding rho, the center, the beacon, and the rect
# encoding; appearance fills the rest.
STRUCTURED_COLS = 10
_BEACON_COL = 3
_RECT_COLS = slice(4, 10)

BEACON = 10.0
# Gains and offsets conditioning the rect encoding: centering keeps the
# encoded values small so row normalization barely distorts them, gains lift
# each parameter well above the measurement noise.  Decode error per
# parameter is about noise_sigma / gain.
RECT_GAINS = np.array([10.0, 10.0, 12.0, 14.0, 4.0])
RECT_OFFSETS = np.array([0.5, 0.5, 0.25, 0.15, 0.0])

_OCCLUSION_BLEND = 0.5

# Each real object is its own instance of the category: its prototype is
# perturbed by a per-row draw at JITTER_SCALE times the measurement noise,
# applied consistently to the visual, segmentation, and (for the target)
# text streams.  Categories become clusters rather than points, so a model
# has to learn the matching function instead of memorizing the seen
# prototypes.  Proportionality to noise_sigma keeps the zero-noise case
# exactly on the prototype.
JITTER_SCALE = 8.0


class DatasetError(ValueError):
    """A dataset file is malformed; the message names the offending line."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape and difficulty of the synthetic task.

    ``categories`` are split 70/30 into seen and unseen (rounded); training
    scenes draw only from the seen pool.
    """

    dim: int = 32
    proposals: int = 8
    tokens: int = 4
    categories: int = 20
    noise_sigma: float = 0.1
    occlusion: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim < STRUCTURED_COLS + 1:
            raise ValueError(
                f"dim must leave room for appearance columns: need >= "
                f"{STRUCTURED_COLS + 1}, got {self.dim}"
            )
        if self.proposals < 2:
            raise ValueError(f"need at least 2 proposals, got {self.proposals}")
        if self.tokens < 1:
            raise ValueError(f"need at least 1 text token, got {self.tokens}")
        if self.categories < 2:
            raise ValueError(f"need at least 2 categories, got {self.categories}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")

    @property
    def seen_count(self) -> int:
        n = round(0.7 * self.categories)
        return min(max(n, 1), self.categories - 1)

    @property
    def seen_categories(self) -> tuple:
        return tuple(range(self.seen_count))

    @property
    def unseen_categories(self) -> tuple:
        return tuple(range(self.seen_count, self.categories))


@dataclass(frozen=True)
class Structures:
    """Seed-derived fixed encoders shared by every scene of a config.

    ``map_text`` is ``map_vis``: both streams embed the same prototypes
    through the same rotation, so matching a caption to a crop is a
    coordinate-wise comparison rather than an arbitrary change of basis.
    """

    prototypes: np.ndarray  # categories x d, unit-Gaussian rows
    map_vis: np.ndarray     # d x d orthogonal
    map_seg: np.ndarray     # d x d orthogonal
    map_text: np.ndarray    # d x d orthogonal, same object as map_vis
    rect_encoder: np.ndarray  # 6 x 5, orthonormal columns, all sum to zero


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # sign fix makes the factorization unique, hence reproducible
    return q * np.sign(np.diag(r))


def _rect_encoder(rng: np.random.Generator) -> np.ndarray:
    # Orthonormal basis of the hyperplane orthogonal to (1,...,1) in R^6,
    # mixed by a random rotation.  E^T E = I, and 1^T E = 0 means a constant
    # added to all six columns (a row-mean shift under normalization) lands
    # in the encoder's null space instead of biasing the decoded rect.
    seeded = np.zeros((6, 6))
    seeded[:, 0] = 1.0
    seeded[np.arange(5), np.arange(1, 6)] = 1.0
    basis = np.linalg.qr(seeded)[0][:, 1:]
    return basis @ _random_orthogonal(rng, 5)


@lru_cache(maxsize=32)
def derive_structures(cfg: GeneratorConfig) -> Structures:
    rng = np.random.default_rng((cfg.seed, 0))
    prototypes = rng.standard_normal((cfg.categories, cfg.dim))
    map_vis = _random_orthogonal(rng, cfg.dim)
    return Structures(
        prototypes=prototypes,
        map_vis=map_vis,
        map_seg=_random_orthogonal(rng, cfg.dim),
        map_text=map_vis,
        rect_encoder=_rect_encoder(rng),
    )


@dataclass
class Scene:
    """One synthetic scene with exactly one positive proposal."""

    scene_id: int
    category_id: int
    is_unseen: bool
    target_index: int
    text: np.ndarray   # K x d
    vis: np.ndarray    # m x d
    seg: np.ndarray    # m x d
    labels: np.ndarray  # m bools, True only at target_index
    gt_rects: List[GraspRect]


def _rect_params(rect: GraspRect) -> np.ndarray:
    return np.array([rect.x, rect.y, rect.w, rect.h, rect.theta / 90.0])


def encode_rect(s: Structures, rect: GraspRect) -> np.ndarray:
    """Six reserved-column values carrying the rect parameters."""
    return s.rect_encoder @ (RECT_GAINS * (_rect_params(rect) - RECT_OFFSETS))


def decode_rect_cols(s: Structures, cols: np.ndarray) -> np.ndarray:
    """Invert :func:`encode_rect`; exact when the columns are noise-free."""
    return s.rect_encoder.T @ cols / RECT_GAINS + RECT_OFFSETS


def generate_scene(cfg: GeneratorConfig, category: int, scene_index: int) -> Scene:
    """Build scene ``scene_index`` with the target drawn from ``category``."""
    if not 0 <= category < cfg.categories:
        raise ValueError(f"category {category} out of range [0, {cfg.categories})")
    s = derive_structures(cfg)
    rng = np.random.default_rng((cfg.seed, 2, scene_index))
    m, d, k = cfg.proposals, cfg.dim, cfg.tokens
    is_unseen = category >= cfg.seen_count
    pool = cfg.unseen_categories if is_unseen else cfg.seen_categories

    # fixed draw order; changing it changes every dataset
    target = int(rng.integers(m))
    others = [i for i in range(m) if i != target]
    candidates = [c for c in pool if c != category]
    n_distract = int(rng.integers(1, 4))
    n_distract = min(n_distract, len(others), len(candidates))
    slots = [int(i) for i in rng.choice(others, size=n_distract, replace=False)]
    picks = [int(c) for c in rng.choice(candidates, size=n_distract, replace=False)]

    xs = rng.uniform(0.2, 0.8, m)
    ys = rng.uniform(0.2, 0.8, m)
    ws = rng.uniform(0.1, 0.4, m)
    hs = rng.uniform(0.05, 0.25, m)
    thetas = rng.uniform(-90.0, 90.0, m)
    rects = [
        GraspRect(float(xs[i]), float(ys[i]), float(ws[i]), float(hs[i]), float(thetas[i]))
        for i in range(m)
    ]

    rho_raw = rng.uniform(0.0, 1.0, m)
    junk_appearance = rng.standard_normal((m, d - STRUCTURED_COLS))
    junk_seg = rng.standard_normal((m, d))
    jitter = rng.normal(0.0, JITTER_SCALE * cfg.noise_sigma, (m, d))
    vis_noise = rng.normal(0.0, cfg.noise_sigma, (m, d))
    seg_noise = rng.normal(0.0, cfg.noise_sigma, (m, d))
    text_noise = rng.normal(0.0, cfg.noise_sigma, (k, d))

    real = np.zeros(m, dtype=bool)
    real[target] = True
    real[slots] = True
    cat_of = {target: category, **dict(zip(slots, picks))}

    vis = np.zeros((m, d))
    vis[:, 0] = np.where(real, 0.5 + 0.5 * rho_raw, 0.5 * rho_raw)
    vis[:, 1] = xs
    vis[:, 2] = ys
    vis[:, _BEACON_COL] = BEACON
    for i in range(m):
        vis[i, _RECT_COLS] = encode_rect(s, rects[i])
    seg = junk_seg.copy()
    vis[:, STRUCTURED_COLS:] = junk_appearance
    for i, cat in cat_of.items():
        instance = s.prototypes[cat] + jitter[i]
        # trailing slice, so column j matches column j of the text rows
        vis[i, STRUCTURED_COLS:] = (s.map_vis @ instance)[STRUCTURED_COLS:]
        seg[i] = s.map_seg @ instance
    vis += vis_noise
    seg += seg_noise

    # the caption describes the concrete target instance, jitter included
    text = np.tile(s.map_text @ (s.prototypes[category] + jitter[target]), (k, 1))
    text += text_noise

    if cfg.occlusion:
        for i in slots:
            vis[i] = (1.0 - _OCCLUSION_BLEND) * vis[i] + _OCCLUSION_BLEND * vis[target]

    labels = np.zeros(m, dtype=bool)
    labels[target] = True
    return Scene(
        scene_id=scene_index,
        category_id=category,
        is_unseen=bool(is_unseen),
        target_index=target,
        text=text,
        vis=vis,
        seg=seg,
        labels=labels,
        gt_rects=rects,
    )


def generate_dataset(
    cfg: GeneratorConfig,
    n_train: int,
    n_eval_seen: int,
    n_eval_unseen: int,
) -> tuple[List[Scene], List[Scene], List[Scene]]:
    """Train/eval splits with disjoint scene ids and per-split category pools."""
    for name, n in (("n_train", n_train), ("n_eval_seen", n_eval_seen),
                    ("n_eval_unseen", n_eval_unseen)):
        if n < 0:
            raise ValueError(f"{name} must be non-negative, got {n}")
    cat_rng = np.random.default_rng((cfg.seed, 1))
    seen = cfg.seen_categories
    unseen = cfg.unseen_categories
    plan = (
        [seen] * n_train + [seen] * n_eval_seen + [unseen] * n_eval_unseen
    )
    categories = [int(cat_rng.choice(pool)) for pool in plan]
    scenes = [generate_scene(cfg, cat, idx) for idx, cat in enumerate(categories)]
    train = scenes[:n_train]
    eval_seen = scenes[n_train:n_train + n_eval_seen]
    eval_unseen = scenes[n_train + n_eval_seen:]
    return train, eval_seen, eval_unseen


def write_dataset(path, cfg: GeneratorConfig, scenes: Sequence[Scene]) -> None:
    """Write a config header line plus one JSON record per scene.

    Floats go through Python's shortest-round-trip repr, so reading the file
    back reproduces every bit.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {"schema_version": SCHEMA_VERSION, "config": asdict(cfg)}
        fh.write(json.dumps(header) + "\n")
        for scene in scenes:
            record = {
                "scene_id": scene.scene_id,
                "category_id": scene.category_id,
                "is_unseen": scene.is_unseen,
                "target_index": scene.target_index,
                "text": scene.text.tolist(),
                "vis": scene.vis.tolist(),
                "seg": scene.seg.tolist(),
                "labels": [int(v) for v in scene.labels],
                "gt_rects": [[r.x, r.y, r.w, r.h, r.theta] for r in scene.gt_rects],
            }
            fh.write(json.dumps(record) + "\n")


_RECORD_FIELDS = (
    "scene_id", "category_id", "is_unseen", "target_index",
    "text", "vis", "seg", "labels", "gt_rects",
)


def read_dataset(path) -> tuple[GeneratorConfig, List[Scene]]:
    """Parse a dataset file, validating the header and every record."""
    scenes: List[Scene] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"line 1: empty dataset file {path}")
    header = _parse_json(lines[0], 1)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"line 1: field 'schema_version': expected {SCHEMA_VERSION}, "
            f"got {header.get('schema_version')!r}"
        )
    if "config" not in header:
        raise DatasetError("line 1: field 'config' missing from header")
    try:
        cfg = GeneratorConfig(**header["config"])
    except (TypeError, ValueError) as err:
        raise DatasetError(f"line 1: field 'config': {err}") from err

    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            raise DatasetError(f"line {lineno}: blank line inside dataset")
        rec = _parse_json(raw, lineno)
        for fieldname in _RECORD_FIELDS:
            if fieldname not in rec:
                raise DatasetError(f"line {lineno}: field {fieldname!r} missing")
        try:
            scene = Scene(
                scene_id=int(rec["scene_id"]),
                category_id=int(rec["category_id"]),
                is_unseen=bool(rec["is_unseen"]),
                target_index=int(rec["target_index"]),
                text=np.asarray(rec["text"], dtype=np.float64),
                vis=np.asarray(rec["vis"], dtype=np.float64),
                seg=np.asarray(rec["seg"], dtype=np.float64),
                labels=np.asarray(rec["labels"], dtype=bool),
                gt_rects=[GraspRect(*vals) for vals in rec["gt_rects"]],
            )
        except (TypeError, ValueError) as err:
            raise DatasetError(f"line {lineno}: {err}") from err
        _validate_scene(scene, cfg, lineno)
        scenes.append(scene)
    return cfg, scenes


def _parse_json(raw: str, lineno: int) -> dict:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as err:
        raise DatasetError(f"line {lineno}: invalid JSON: {err.msg}") from err
    if not isinstance(value, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    return value


def _validate_scene(scene: Scene, cfg: GeneratorConfig, lineno: int) -> None:
    m, d, k = cfg.proposals, cfg.dim, cfg.tokens
    checks = {
        "text": (scene.text.shape, (k, d)),
        "vis": (scene.vis.shape, (m, d)),
        "seg": (scene.seg.shape, (m, d)),
        "labels": (scene.labels.shape, (m,)),
    }
    for fieldname, (got, want) in checks.items():
        if got != want:
            raise DatasetError(
                f"line {lineno}: field {fieldname!r}: shape {got} does not match "
                f"config {want}"
            )
    if len(scene.gt_rects) != m:
        raise DatasetError(
            f"line {lineno}: field 'gt_rects': {len(scene.gt_rects)} rects for {m} proposals"
        )
    if not 0 <= scene.target_index < m:
        raise DatasetError(
            f"line {lineno}: field 'target_index': {scene.target_index} out of range"
        )
    if scene.labels.sum() != 1 or not scene.labels[scene.target_index]:
        raise DatasetError(
            f"line {lineno}: field 'labels': expected exactly one positive at the target"
        )
