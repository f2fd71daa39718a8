"""Command-line interface: gen, train, eval, gradcheck, and iou subcommands.

All subcommands stream line-delimited JSON records to stdout (``--pretty``
switches to human-readable lines).  Exit codes: 0 success, 1 usage error,
2 runtime failure, 3 check failure (the gradcheck gate).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from .attention import (
    QueryMode,
    StreamFeatures,
    language_vision_cross_attention,
    mask_guided_forward,
    text_self_attention,
    vision_segmentation_cross_attention,
)
from .autodiff import Tensor
from .data import (
    DatasetError,
    GeneratorConfig,
    Scene,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .geometry import GraspRect, angle_diff, is_success, rotated_iou
from .losses import LossConfig
from .train import (
    NonFiniteLossError,
    TrainConfig,
    init_params,
    load_checkpoint,
    predict_scene,
    save_checkpoint,
    scene_loss,
    train,
)

__all__ = ["main", "entry", "run_gradient_checks", "GRADCHECK_TOLERANCE"]

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    """Invalid flag values discovered after parsing; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _emit(record: dict, pretty: bool) -> None:
    if pretty:
        parts = [f"{k}={_fmt(v)}" for k, v in record.items() if k != "record_type"]
        print(f"[{record['record_type']}] " + "  ".join(parts))
    else:
        print(json.dumps(record))
    sys.stdout.flush()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def build_parser() -> _Parser:
    parser = _Parser(prog="langgrasp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate synthetic train/eval datasets")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--scenes", type=int, default=1000, help="training scenes")
    gen.add_argument("--eval-seen", type=int, default=200)
    gen.add_argument("--eval-unseen", type=int, default=200)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--proposals", type=int, default=8)
    gen.add_argument("--tokens", type=int, default=4)
    gen.add_argument("--categories", type=int, default=20)
    gen.add_argument("--noise-sigma", type=float, default=0.1)
    gen.add_argument("--occlusion", type=_parse_bool, default=False,
                     metavar="BOOL", help="blend distractor visuals toward the target")
    gen.add_argument("--pretty", action="store_true")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True, help="training dataset file")
    tr.add_argument("--ckpt", required=True, help="checkpoint output path")
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--lambda-cor", type=float, default=0.8)
    tr.add_argument("--beta", type=float, default=1.4)
    tr.add_argument("--alpha", type=float, default=0.1)
    tr.add_argument("--heads", type=int, default=4)
    tr.add_argument("--mode", choices=[m.value for m in QueryMode],
                    default=QueryMode.TEXT_QUERY.value)
    tr.add_argument("--no-seg", action="store_true",
                    help="drop the segmentation stream and the correspondence loss")
    tr.add_argument("--no-cor", action="store_true",
                    help="keep the streams but weight the correspondence loss at zero")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--batch-size", type=int, default=8)
    tr.add_argument("--eval", help="optional eval dataset for per-epoch metrics")
    tr.add_argument("--pretty", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--dump-features", help="write per-proposal attended features here")
    ev.add_argument("--pretty", action="store_true")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser(
        "gradcheck", help="finite-difference check of every tracked gradient"
    )
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    gc.add_argument("--pretty", action="store_true")
    gc.set_defaults(func=cmd_gradcheck)

    iou = sub.add_parser("iou", help="exact IoU and angle distance of two rects")
    iou.add_argument("--rect1", required=True, metavar="X,Y,W,H,THETA")
    iou.add_argument("--rect2", required=True, metavar="X,Y,W,H,THETA")
    iou.add_argument("--pretty", action="store_true")
    iou.set_defaults(func=cmd_iou)

    return parser


def cmd_gen(args) -> int:
    if args.scenes < 1:
        raise UsageError(f"--scenes must be at least 1, got {args.scenes}")
    if args.eval_seen < 0 or args.eval_unseen < 0:
        raise UsageError("eval scene counts must be non-negative")
    try:
        cfg = GeneratorConfig(
            dim=args.dim,
            proposals=args.proposals,
            tokens=args.tokens,
            categories=args.categories,
            noise_sigma=args.noise_sigma,
            occlusion=args.occlusion,
            seed=args.seed,
        )
    except ValueError as err:
        raise UsageError(str(err)) from err
    train_scenes, eval_seen, eval_unseen = generate_dataset(
        cfg, args.scenes, args.eval_seen, args.eval_unseen
    )
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.jsonl")
    eval_path = os.path.join(args.out, "eval.jsonl")
    write_dataset(train_path, cfg, train_scenes)
    write_dataset(eval_path, cfg, eval_seen + eval_unseen)
    _emit({"record_type": "dataset", "split": "train", "path": train_path,
           "scenes": len(train_scenes)}, args.pretty)
    _emit({"record_type": "dataset", "split": "eval", "path": eval_path,
           "scenes": len(eval_seen) + len(eval_unseen),
           "seen": len(eval_seen), "unseen": len(eval_unseen)}, args.pretty)
    return 0


def _train_config_from_args(args, dim: int) -> TrainConfig:
    if args.heads < 1 or dim % args.heads != 0:
        raise UsageError(
            f"--heads must divide the feature width: dim={dim}, heads={args.heads}"
        )
    try:
        loss = LossConfig(alpha=args.alpha, beta=args.beta, lambda_cor=args.lambda_cor)
        return TrainConfig(
            epochs=args.epochs,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            heads=args.heads,
            query_mode=args.mode,
            loss=loss,
            seed=args.seed,
            disable_seg_stream=args.no_seg,
            disable_correspondence_loss=args.no_cor,
        )
    except ValueError as err:
        raise UsageError(str(err)) from err


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise UsageError(f"--epochs must be at least 1, got {args.epochs}")
    _, train_scenes = read_dataset(args.data)
    if not train_scenes:
        raise UsageError(f"training dataset {args.data} holds no scenes")
    dim = train_scenes[0].vis.shape[1]
    cfg = _train_config_from_args(args, dim)
    eval_scenes = None
    if args.eval:
        _, eval_scenes = read_dataset(args.eval)

    def stream(record: dict) -> None:
        _emit({
            "record_type": "epoch",
            "epoch": record["epoch"],
            "loss": record["loss"],
            "seen": record.get("seen"),
            "unseen": record.get("unseen"),
            "h": record.get("h"),
        }, args.pretty)

    ckpt = train(cfg, train_scenes, eval_scenes, on_epoch=stream)
    save_checkpoint(args.ckpt, ckpt)
    _emit({"record_type": "checkpoint", "path": args.ckpt, "epochs": ckpt.epoch},
          args.pretty)
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    _, scenes = read_dataset(args.data)
    if not scenes:
        raise UsageError(f"eval dataset {args.data} holds no scenes")
    dim = scenes[0].vis.shape[1]
    if dim != ckpt.params.attention.dim:
        raise ValueError(
            f"checkpoint width {ckpt.params.attention.dim} does not match "
            f"data width {dim}"
        )
    results = []
    for scene in scenes:
        rect, _ = predict_scene(ckpt.params, scene, ckpt.config)
        hit = is_success(rect, [scene.gt_rects[scene.target_index]])
        results.append((hit, scene.is_unseen))
    seen = [hit for hit, unseen in results if not unseen]
    unseen = [hit for hit, unseen in results if unseen]
    seen_rate = (sum(seen) / len(seen)) if seen else None
    unseen_rate = (sum(unseen) / len(unseen)) if unseen else None
    if seen_rate is not None and unseen_rate is not None:
        h = (
            0.0 if seen_rate + unseen_rate == 0
            else 2 * seen_rate * unseen_rate / (seen_rate + unseen_rate)
        )
    else:
        h = None
    _emit({
        "record_type": "eval",
        "seen": seen_rate,
        "unseen": unseen_rate,
        "h": h,
        "seen_count": len(seen),
        "unseen_count": len(unseen),
    }, args.pretty)
    if args.dump_features:
        _dump_features(args.dump_features, ckpt, scenes)
        _emit({"record_type": "features", "path": args.dump_features,
               "rows": len(scenes) * scenes[0].vis.shape[0]}, args.pretty)
    return 0


def _dump_features(path, ckpt, scenes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            feats = StreamFeatures(
                text=Tensor(scene.text), vis=Tensor(scene.vis), seg=Tensor(scene.seg)
            )
            out = mask_guided_forward(
                feats, ckpt.params.attention, QueryMode(ckpt.config.query_mode)
            )
            for i in range(out.z_vis.rows):
                fh.write(json.dumps({
                    "scene_id": scene.scene_id,
                    "proposal": i,
                    "positive": bool(scene.labels[i]),
                    "z_vis": out.z_vis.data[i].tolist(),
                }) + "\n")


def cmd_iou(args) -> int:
    try:
        r1 = _parse_rect(args.rect1)
        r2 = _parse_rect(args.rect2)
    except ValueError as err:
        raise UsageError(str(err)) from err
    iou = rotated_iou(r1, r2)
    d_theta = angle_diff(r1.theta, r2.theta)
    _emit({
        "record_type": "iou",
        "iou": iou,
        "angle_diff": d_theta,
        "success": is_success(r1, [r2]),
    }, args.pretty)
    return 0


def _parse_rect(text: str) -> GraspRect:
    parts = text.split(",")
    if len(parts) != 5:
        raise ValueError(f"rect needs 5 comma-separated numbers, got {text!r}")
    try:
        x, y, w, h, theta = (float(p) for p in parts)
    except ValueError as err:
        raise ValueError(f"rect has a non-numeric component: {text!r}") from err
    return GraspRect(x, y, w, h, theta)


def cmd_gradcheck(args) -> int:
    worst_name = None
    worst = -1.0
    ok = True
    for name, err in run_gradient_checks(corrupt=args.corrupt):
        err = float(err)
        passed = err < GRADCHECK_TOLERANCE
        ok = ok and passed
        if err > worst:
            worst, worst_name = err, name
        _emit({"record_type": "gradcheck", "op": name,
               "max_rel_err": err, "ok": passed}, args.pretty)
    _emit({"record_type": "gradcheck_summary", "worst_op": worst_name,
           "max_rel_err": worst, "ok": ok}, args.pretty)
    return 0 if ok else 3


def run_gradient_checks(corrupt: bool = False):
    """Yield ``(check_name, max_rel_err)`` over every op and composed graphs.

    Inputs are fixed small tensors drawn away from the kinks of relu, clamp,
    the hinges, and smooth-L1, so the central differences stay clean.  With
    ``corrupt`` an intentionally wrong gradient path is appended; the gate
    must catch it.
    """
    rng = np.random.default_rng(7)

    def away_from(vals, *, kinks=(0.0,), margin=0.05):
        flat = vals.reshape(-1)
        for k in kinks:
            close = np.abs(flat - k) < margin
            flat[close] = k + np.where(flat[close] >= k, margin, -margin)
        return vals

    def t(rows, cols, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, (rows, cols)), requires_grad=True)

    def weighted(out, weights):
        return ad.sum(ad.mul(out, weights))

    def const(rows, cols):
        return Tensor(rng.uniform(-1.0, 1.0, (rows, cols)))

    checks: List[tuple[str, Callable[[], float]]] = []

    def isolated(name, make):
        checks.append((name, make))

    def check_binary(name, op, shape_a, shape_b, out_shape):
        def run():
            a = t(*shape_a)
            b = t(*shape_b)
            w = const(*out_shape)
            return ad.grad_check(lambda: weighted(op(a, b), w), [a, b])
        isolated(name, run)

    check_binary("matmul", ad.matmul, (3, 4), (4, 2), (3, 2))
    check_binary("add", ad.add, (3, 4), (3, 4), (3, 4))
    check_binary("sub", ad.sub, (3, 4), (3, 4), (3, 4))
    check_binary("mul", ad.mul, (3, 4), (3, 4), (3, 4))
    check_binary("add_row", ad.add_row, (4, 3), (1, 3), (4, 3))
    check_binary("concat_cols", ad.concat_cols, (3, 2), (3, 4), (3, 6))

    def check_unary(name, op, shape, out_shape, lo=-1.0, hi=1.0, kinks=None):
        def run():
            a = Tensor(rng.uniform(lo, hi, shape), requires_grad=True)
            if kinks:
                away_from(a.data, kinks=kinks)
            w = const(*out_shape)
            return ad.grad_check(lambda: weighted(op(a), w), [a])
        isolated(name, run)

    check_unary("transpose", ad.transpose, (3, 4), (4, 3))
    check_unary("scale", lambda a: ad.scale(a, -1.7), (3, 4), (3, 4))
    check_unary("repeat_rows", lambda a: ad.repeat_rows(a, 5), (1, 4), (5, 4))
    check_unary("slice_rows", lambda a: ad.slice_rows(a, 1, 3), (4, 3), (2, 3))
    check_unary("slice_cols", lambda a: ad.slice_cols(a, 1, 4), (3, 5), (3, 3))
    check_unary("sum", lambda a: ad.sum(a), (3, 4), (1, 1))
    check_unary("mean_rows", ad.mean_rows, (4, 3), (1, 3))
    check_unary("relu", ad.relu, (4, 4), (4, 4), kinks=(0.0,))
    check_unary("tanh", ad.tanh, (3, 4), (3, 4))
    check_unary("exp", ad.exp, (3, 4), (3, 4))
    check_unary("log", ad.log, (3, 4), (3, 4), lo=0.2, hi=2.0)
    check_unary("clamp", lambda a: ad.clamp(a, -0.5, 0.5), (4, 4), (4, 4),
                kinks=(-0.5, 0.5))
    check_unary("smooth_l1", lambda a: ad.smooth_l1(a, 0.6), (4, 4), (4, 4),
                kinks=(-0.6, 0.6))
    check_unary("row_softmax", ad.row_softmax, (3, 5), (3, 5), lo=-2.0, hi=2.0)
    check_unary("l2_normalize_rows", ad.l2_normalize_rows, (3, 4), (3, 4))

    def check_gather():
        a = t(4, 5)
        w = const(1, 3)
        rows = np.array([0, 2, 3])
        cols = np.array([1, 1, 4])
        return ad.grad_check(lambda: weighted(ad.gather(a, rows, cols), w), [a])
    isolated("gather", check_gather)

    def check_layer_norm():
        a = t(3, 6)
        gain = Tensor(rng.uniform(0.5, 1.5, (1, 6)), requires_grad=True)
        bias = t(1, 6)
        w = const(3, 6)
        return ad.grad_check(
            lambda: weighted(ad.layer_norm(a, gain, bias), w), [a, gain, bias]
        )
    isolated("layer_norm", check_layer_norm)

    checks.extend(_composed_checks(rng))

    if corrupt:
        def corrupted():
            a = t(3, 3)
            # detached copy of a enters the product, so the tape sees only
            # half of the true dependency: the analytic gradient is wrong
            return ad.grad_check(lambda: ad.sum(ad.mul(a, Tensor(a.data.copy()))), [a])
        isolated("corrupted-op (test hook)", corrupted)

    for name, run in checks:
        yield name, run()


def _composed_checks(rng):
    def attention_checks(heads):
        dim, m, k = 12, 3, 2
        params = init_params(dim, heads, seed=11).attention
        f_text = Tensor(rng.uniform(-1, 1, (k, dim)))
        f_vis = Tensor(rng.uniform(-1, 1, (m, dim)))
        f_seg = Tensor(rng.uniform(-1, 1, (m, dim)))
        tensors = [t for _, t in params.named()]
        w_text = Tensor(rng.uniform(-1, 1, (k, dim)))
        w_vis = Tensor(rng.uniform(-1, 1, (m, dim)))
        suffix = f"heads={heads}"

        def text_check():
            def f():
                _, z = text_self_attention(f_text, params)
                return ad.sum(ad.mul(z, w_text))
            return ad.grad_check(f, tensors)

        def vis_check(mode):
            def f():
                _, z = language_vision_cross_attention(f_text, f_vis, params, mode)
                return ad.sum(ad.mul(z, w_vis))
            return ad.grad_check(f, tensors)

        def seg_check():
            def f():
                _, z = vision_segmentation_cross_attention(f_vis, f_seg, params)
                return ad.sum(ad.mul(z, w_vis))
            return ad.grad_check(f, tensors)

        yield f"text_self_attention ({suffix})", text_check
        yield (
            f"language_vision_cross_attention (text-query, {suffix})",
            lambda: vis_check(QueryMode.TEXT_QUERY),
        )
        yield (
            f"language_vision_cross_attention (region-query, {suffix})",
            lambda: vis_check(QueryMode.REGION_QUERY),
        )
        yield f"vision_segmentation_cross_attention ({suffix})", seg_check

    composed = []
    for heads in (1, 3):
        composed.extend(attention_checks(heads))

    def full_model(mode):
        # generator scenes carry structured columns an order of magnitude
        # above the rest; at that scale the central differences lose a digit
        # on near-zero gradient entries, so the composed check runs on O(1)
        # probe data instead
        data_rng = np.random.default_rng(2)
        scene = Scene(
            scene_id=0,
            category_id=1,
            is_unseen=False,
            target_index=0,
            text=data_rng.uniform(-1, 1, (2, 12)),
            vis=data_rng.uniform(-1, 1, (3, 12)),
            seg=data_rng.uniform(-1, 1, (3, 12)),
            labels=np.array([True, False, False]),
            gt_rects=[
                GraspRect(0.45, 0.62, 0.30, 0.18, 20.0),
                GraspRect(0.25, 0.35, 0.22, 0.12, -40.0),
                GraspRect(0.70, 0.55, 0.26, 0.15, 65.0),
            ],
        )
        cfg = TrainConfig(heads=3, seed=13, query_mode=mode.value)
        params = init_params(12, 3, cfg.seed)
        tensors = params.tensors()

        def f():
            return scene_loss(params, scene, cfg)
        return ad.grad_check(f, tensors)

    composed.append((
        "full model loss (text-query)", lambda: full_model(QueryMode.TEXT_QUERY)
    ))
    composed.append((
        "full model loss (region-query)", lambda: full_model(QueryMode.REGION_QUERY)
    ))
    return composed


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (DatasetError, NonFiniteLossError, OSError, ValueError,
            RuntimeError, ad.ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
