"""Command-line front door: train / infer / bench / analyze / grad-check.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
``LWA_SEED`` overrides the config seed; an explicit ``--seed`` flag wins
over both.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import analysis, data, network, training
from .errors import ConfigError, DataError, LwanetError, WeightFormatError
from .network import NetworkConfig, build

_CONFIG_SECTIONS = {"network", "train", "augment", "data_root"}


class UsageError(Exception):
    pass


def _parse_size(text):
    """'960x544' (width x height) -> (h, w) divisible by 32."""
    try:
        w, h = (int(v) for v in text.lower().replace("×", "x").split("x"))
    except ValueError:
        raise UsageError(f"bad --size {text!r}, expected WIDTHxHEIGHT") from None
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise UsageError(f"--size {text}: both sides must be multiples of 32")
    return h, w


def _load_config_file(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: invalid JSON: {exc}") from None
    unknown = set(cfg) - _CONFIG_SECTIONS
    if unknown:
        raise UsageError(f"unknown config section(s): {sorted(unknown)}")
    return cfg


def _resolve_seed(args, file_cfg):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("LWA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"LWA_SEED must be an integer, got {env!r}") from None
    return int(file_cfg.get("train", {}).get("seed", 0))


def _network_config(args, file_cfg, num_classes_default=3):
    d = dict(file_cfg.get("network", {}))
    d.setdefault("num_classes", num_classes_default)
    if getattr(args, "size", None):
        d["input_hw"] = _parse_size(args.size)
    if getattr(args, "num_classes", None):
        d["num_classes"] = args.num_classes
    if getattr(args, "no_afb", False):
        d["afb_enabled"] = False
    return NetworkConfig.from_dict(d)


def _train_config(args, file_cfg, seed):
    d = dict(file_cfg.get("train", {}))
    for key, flag in (("epochs", "epochs"), ("lr", "lr"),
                      ("batch_size", "batch_size"), ("gamma", "gamma")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    d["seed"] = seed
    return training.TrainConfig.from_dict(d)


def _emit(payload, as_json, text):
    if as_json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _val_split(samples, fraction=0.1):
    """Deterministic held-out split by filename hash."""
    cut = int(fraction * 256)
    val, tr = [], []
    for s in samples:
        h = hashlib.sha256(s.stem.encode("utf-8")).digest()[0]
        (val if h < cut else tr).append(s)
    if not tr:  # degenerate tiny dataset: train on everything
        return samples, val
    return tr, val


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _resolve_seed(args, file_cfg)
    net_cfg = _network_config(args, file_cfg)
    tr_cfg = _train_config(args, file_cfg, seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.synthetic:
        h, w = net_cfg.input_hw
        if h != w:
            raise UsageError("--synthetic needs a square --size")
        samples = data.synth_shapes(args.synthetic, h, net_cfg.num_classes, seed=seed)
        train_s, val_s = samples, samples  # overfit-style sanity run
    else:
        root = file_cfg.get("data_root") or args.data_root
        if not root:
            raise UsageError("no dataset: pass --synthetic N or --data-root/config data_root")
        ds = data.load_dataset(root, "train")
        if ds.num_classes != net_cfg.num_classes:
            raise UsageError(
                f"dataset has {ds.num_classes} classes, config says {net_cfg.num_classes}"
            )
        train_s, val_s = _val_split(ds.samples)

    aug_cfg = None
    if "augment" in file_cfg:
        aug_cfg = data.AugmentConfig(**file_cfg["augment"])

    model = build(net_cfg, seed=seed)
    effective = {"network": net_cfg.to_dict(), "train": tr_cfg.to_dict(),
                 "augment": vars(aug_cfg) if aug_cfg else None,
                 "n_train": len(train_s), "n_val": len(val_s)}
    if not args.json:
        print(f"training: {len(train_s)} train / {len(val_s)} val samples, "
              f"{tr_cfg.epochs} epochs, seed {seed}")

    def log(rec):
        if not args.json:
            print(f"epoch {rec['epoch']:4d}  lr {rec['lr']:.3e}  "
                  f"loss {rec['train_loss']:.5f}  mdice {rec['val_mdice']}")

    resume = args.resume if args.resume else None
    model, history = training.train(model, train_s, val_s, tr_cfg,
                                    out_dir=out_dir, augment_cfg=aug_cfg,
                                    resume=resume, log=log)
    network.save_weights(model, out_dir / "model.lwaw", {"train": tr_cfg.to_dict()})
    payload = {"config": effective, "history": history,
               "model": str(out_dir / "model.lwaw")}
    _emit(payload, args.json, f"wrote {out_dir / 'model.lwaw'}")
    return 0


def _overlay(image_rgb, mask, colors):
    colored = np.zeros_like(image_rgb)
    for cls, col in enumerate(colors):
        colored[mask == cls] = col
    out = image_rgb.copy()
    fg = mask > 0
    out[fg] = (0.5 * image_rgb[fg] + 0.5 * colored[fg]).astype(np.uint8)
    return out


def cmd_infer(args) -> int:
    model = network.load_model(args.weights)
    num_classes = model.config.num_classes
    if args.classes:
        _, colors = data.read_classes_json(args.classes)
    else:
        colors = data.default_palette(num_classes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    results = []
    for path in args.images:
        try:
            img = Image.open(path).convert("RGB")
        except (FileNotFoundError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        w, h = img.size
        if h % 32 or w % 32:
            if not args.resize:
                print(f"error: {path}: size {w}x{h} not divisible by 32 "
                      f"(pass --resize)", file=sys.stderr)
                failures += 1
                continue
            img = img.resize((max(32, w // 32 * 32), max(32, h // 32 * 32)),
                             Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None] / 255.0
        mask = model.predict_masks(arr)[0]
        stem = Path(path).stem
        Image.fromarray(mask.astype(np.uint8), mode="L").save(out_dir / f"{stem}_mask.png")
        rgb = np.asarray(img, dtype=np.uint8)
        Image.fromarray(_overlay(rgb, mask, colors)).save(out_dir / f"{stem}_overlay.png")
        results.append({"input": str(path), "mask": str(out_dir / f"{stem}_mask.png"),
                        "overlay": str(out_dir / f"{stem}_overlay.png"),
                        "classes_found": np.unique(mask).tolist()})
    payload = {"config": {"network": model.config.to_dict()}, "results": results,
               "failures": failures}
    _emit(payload, args.json,
          f"wrote {2 * len(results)} file(s) to {out_dir}" +
          (f", {failures} failure(s)" if failures else ""))
    return 1 if failures else 0


def _model_for_profiling(args, file_cfg, seed):
    if getattr(args, "weights", None):
        model = network.load_model(args.weights, seed=seed)
        if args.size:
            # profile at the requested size, architecture from the file
            d = model.config.to_dict()
            d["input_hw"] = _parse_size(args.size)
            model.config = NetworkConfig.from_dict(d)
        return model
    return build(_network_config(args, file_cfg), seed=seed)


def cmd_bench(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _resolve_seed(args, file_cfg)
    model = _model_for_profiling(args, file_cfg, seed)
    h, w = model.config.input_hw
    stats = analysis.benchmark_latency(model, (h, w), warmup=args.warmup,
                                       iters=args.iters, seed=seed)
    payload = {"config": {"network": model.config.to_dict(), "seed": seed}, **stats}
    table = "\n".join([
        f"input          {w}x{h}",
        f"iters          {stats['iters']} (+{stats['warmup']} warmup)",
        f"mean latency   {stats['mean_ms']:.2f} ms",
        f"p50 latency    {stats['p50_ms']:.2f} ms",
        f"p95 latency    {stats['p95_ms']:.2f} ms",
        f"fps            {stats['fps']:.2f}",
    ])
    _emit(payload, args.json, table)
    return 0


def cmd_analyze(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _resolve_seed(args, file_cfg)
    model = _model_for_profiling(args, file_cfg, seed)
    h, w = model.config.input_hw
    report = analysis.count_model(model, (1, 3, h, w))
    payload = {"config": {"network": model.config.to_dict()}, **report.to_json()}
    _emit(payload, args.json, report.format_table())
    return 0


def cmd_grad_check(args) -> int:
    # exercise every differentiable op and composite through the harness
    from . import ops
    from .autodiff import grad_check, sample_smooth_inputs
    from .blocks import AttentionFusion, DepthwiseSeparableConv, UpsampleBlock
    from .losses import FocalConfig, focal_loss
    from .ops import ConvSpec
    from .tensor import Tensor

    rng = np.random.default_rng(_resolve_seed(args, {}))
    checks = []

    def check(name, closure, inputs):
        err = grad_check(closure, inputs)
        checks.append({"name": name, "max_rel_err": err})
        if not args.json:
            print(f"{name:<28} {err:.3e}")

    x = sample_smooth_inputs(rng, (2, 3, 5, 5))
    w = sample_smooth_inputs(rng, (4, 3, 3, 3), scale=0.5)
    spec = ConvSpec(3, 4, 3, 1, 1)
    check("conv2d", lambda a, b: ops.conv2d(a, b, None, spec).sum(), [x, w])

    xt = sample_smooth_inputs(rng, (1, 3, 4, 4))
    wt = sample_smooth_inputs(rng, (3, 2, 2, 2), scale=0.5)
    tspec = ConvSpec(3, 2, 2, 2, 0)
    check("transposed_conv2d",
          lambda a, b: ops.transposed_conv2d(a, b, tspec).sum(), [xt, wt])

    for name, fn in (("relu", ops.relu), ("relu6", ops.relu6),
                     ("sigmoid", ops.sigmoid)):
        xi = sample_smooth_inputs(rng, (2, 4, 3, 3))
        check(name, lambda a, f=fn: f(a).sum(), [xi])

    xg = sample_smooth_inputs(rng, (2, 4, 5, 5))
    check("global_avg_pool",
          lambda a: ops.sigmoid(ops.global_avg_pool(a)).sum(), [xg])
    xb = sample_smooth_inputs(rng, (1, 3, 6, 6))
    check("bilinear_upsample", lambda a: ops.bilinear_upsample(a, 2).sum(), [xb])

    xs = sample_smooth_inputs(rng, (1, 3, 2, 2))
    wsm = Tensor(rng.standard_normal((1, 3, 1, 1)))
    check("softmax_channels",
          lambda a: ops.sigmoid(
              ops.broadcast_mul_channels(ops.softmax_channels(a), wsm)).sum(), [xs])

    ds = DepthwiseSeparableConv(3, 4, rng=rng)
    for p in (ds.dw.weight, ds.pw.weight):
        p.data = p.data.astype(np.float64)
    xd = sample_smooth_inputs(rng, (1, 3, 5, 5))
    check("depthwise_separable",
          lambda a, *ws: ds.forward(a, mode="eval").sum(),
          [xd, ds.dw.weight, ds.pw.weight])

    afb = AttentionFusion(4, 2, rng=rng)
    for gate in (afb.low_gate, afb.high_gate):
        for conv in (gate.squeeze, gate.excite):
            conv.weight.data = conv.weight.data.astype(np.float64)
            conv.bias.data = conv.bias.data.astype(np.float64)
    lo = sample_smooth_inputs(rng, (1, 4, 2, 2))
    hi = sample_smooth_inputs(rng, (1, 4, 2, 2))
    check("attention_fusion",
          lambda a, b, *ws: afb.forward(a, b, mode="eval").sum(),
          [lo, hi, afb.low_gate.squeeze.weight, afb.high_gate.excite.weight])

    up = UpsampleBlock(3, 2, rng=rng)
    up.tconv.weight.data = up.tconv.weight.data.astype(np.float64)
    xu = sample_smooth_inputs(rng, (1, 3, 3, 3))
    check("upsample_block",
          lambda a, *ws: up.forward(a, mode="eval").sum(), [xu, up.tconv.weight])

    target = rng.integers(0, 3, (1, 3, 3))
    for gamma in (0.0, 2.0, 6.0):
        xf = sample_smooth_inputs(rng, (1, 3, 3, 3))
        check(f"focal_loss_gamma{gamma:g}",
              lambda a, g=gamma: focal_loss(a, target, FocalConfig(gamma=g)), [xf])

    worst = max(c["max_rel_err"] for c in checks)
    ok = worst < 1e-4
    payload = {"checks": checks, "max_rel_err": worst, "threshold": 1e-4, "pass": ok}
    _emit(payload, args.json,
          f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} at 1e-4)")
    return 0 if ok else 1


def _add_common(p):
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (beats LWA_SEED and config file)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--config", default=None, help="JSON config file")


def make_parser():
    parser = argparse.ArgumentParser(prog="lwanet",
                                     description="lightweight attention segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="train on N generated synthetic samples")
    p.add_argument("--data-root", default=None)
    p.add_argument("--size", default=None, help="input size WIDTHxHEIGHT")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--no-afb", action="store_true", help="disable attention fusion")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment images with a trained model")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--classes", default=None, help="classes.json for colors")
    p.add_argument("--resize", action="store_true",
                   help="round sizes down to a multiple of 32")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="wall-clock latency benchmark")
    _add_common(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--size", default="960x544")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--no-afb", action="store_true")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="static MACs/parameter report")
    _add_common(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--size", default="960x544")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--no-afb", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    _add_common(p)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LwanetError, DataError, WeightFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
