"""Command-line entry point.

Subcommands: train, enhance, eval, ablate, gradcheck.  Exit codes: 0 on
success, 1 on runtime/validation failures (divergence, unreadable images,
failed gradient check), 2 on usage or configuration errors.

Geometry fixups live here: the model core only accepts sizes divisible by 4,
so images are reflect-padded on the way in and cropped back on the way out.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import ConfigError, LossWeights, config_dict, load_config, parse_config
from .fileio import FormatError, load_checkpoint, read_ppm, write_ppm
from .gradcheck import battery
from .metrics import psnr, ssim
from .model import Model, build_model, param_count
from .tensor import Tensor, no_grad
from .train import TrainingDiverged, train

GRADCHECK_TOL = 1e-3
MIN_SIDE = 8


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load_configs(path):
    """Config file (or defaults) -> (ModelConfig, TrainConfig, LossWeights)."""
    if path is None:
        return parse_config({})
    try:
        return load_config(path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e


def _model_from_checkpoint(path: str) -> Model:
    config, tensors = load_checkpoint(path)
    model_cfg, _, _ = parse_config(config)
    model = build_model(model_cfg, 0)
    model.load_state(tensors)
    return model


def _pad_to_multiple(img: np.ndarray, multiple: int = 4):
    """Reflect-pad [3, H, W] on the bottom/right so H and W divide evenly."""
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, h, w


def _enhance_array(model: Model, img: np.ndarray) -> np.ndarray:
    padded, h, w = _pad_to_multiple(img)
    with no_grad():
        out = model.forward(Tensor(padded[None]))
    return np.clip(out.y.data[0, :, :h, :w], 0.0, 1.0)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    model_cfg, train_cfg, weights = _load_configs(args.config)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        _err(f"output directory {args.out} is not writable: {e}")
        return 2
    try:
        result = train(model_cfg, train_cfg, weights, args.out)
    except TrainingDiverged as e:
        _err(str(e))
        return 1
    print(
        f"done: best val PSNR {result.best_val_psnr:.2f} dB at step {result.best_step}; "
        f"log at {result.log_path}"
    )
    return 0


# ---------------------------------------------------------------- enhance


def _read_chw(path: str) -> np.ndarray:
    """Load a PPM as the channel-first layout the model uses."""
    img = read_ppm(path)
    h, w = img.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"{path}: image is {w}x{h}; both sides must be >= {MIN_SIDE}")
    return np.transpose(img, (2, 0, 1))


def _enhance_one(model: Model, src: str, out_dir: str) -> None:
    chw = _read_chw(src)
    enhanced = _enhance_array(model, chw)
    write_ppm(os.path.join(out_dir, os.path.basename(src)), np.transpose(enhanced, (1, 2, 0)))


def cmd_enhance(args) -> int:
    try:
        model = _model_from_checkpoint(args.ckpt)
    except (OSError, FormatError, ValueError) as e:
        _err(f"cannot load checkpoint {args.ckpt}: {e}")
        return 1
    os.makedirs(args.out, exist_ok=True)
    failed = 0
    for src in args.inputs:
        try:
            _enhance_one(model, src, args.out)
        except (OSError, FormatError, ValueError) as e:
            _err(str(e))
            failed += 1
    return 1 if failed else 0


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    try:
        model = _model_from_checkpoint(args.ckpt)
    except (OSError, FormatError, ValueError) as e:
        _err(f"cannot load checkpoint {args.ckpt}: {e}")
        return 1
    x_dir = os.path.join(args.pairs, "x")
    gt_dir = os.path.join(args.pairs, "gt")
    try:
        x_names = set(os.listdir(x_dir))
        gt_names = set(os.listdir(gt_dir))
    except OSError as e:
        _err(f"pairs directory must contain x/ and gt/: {e}")
        return 1
    matched = sorted(x_names & gt_names)
    unmatched = sorted(x_names ^ gt_names)
    for name in unmatched:
        side = "x" if name in x_names else "gt"
        _err(f"unmatched pair: {name} only in {side}/")
    if not matched:
        _err("no matching pairs")
        return 1

    rows = []
    failed = 0
    for name in matched:
        try:
            x = _read_chw(os.path.join(x_dir, name))
            gt = np.transpose(read_ppm(os.path.join(gt_dir, name)), (2, 0, 1))
            y = _enhance_array(model, x)
            if y.shape != gt.shape:
                raise ValueError(f"{name}: enhanced {y.shape} vs ground truth {gt.shape}")
            rows.append((name, psnr(y, gt), ssim(y, gt)))
        except (OSError, FormatError, ValueError) as e:
            _err(str(e))
            failed += 1
    if not rows:
        return 1
    with open(args.csv, "w", encoding="utf-8") as fh:
        fh.write("image_id,psnr,ssim\n")
        for name, p, s in rows:
            fh.write(f"{name},{_fmt(p)},{_fmt(s)}\n")
        mean_p = sum(p for _, p, _ in rows) / len(rows)
        mean_s = sum(s for _, _, s in rows) / len(rows)
        fh.write(f"mean,{_fmt(mean_p)},{_fmt(mean_s)}\n")
    print(f"{len(rows)} pairs: mean PSNR {mean_p:.2f} dB, mean SSIM {mean_s:.4f}")
    return 1 if (failed or unmatched) else 0


# ---------------------------------------------------------------- ablate

# single-exchange rows, then the cumulative rows; the second table reuses
# its first entry so that run is trained once and emitted twice
_BLOCK_ROWS = [
    ("Model-O", (False, False, False, False, False)),
    ("Model-A", (True, False, False, False, False)),
    ("Model-B", (False, True, False, False, False)),
    ("Model-C", (False, False, True, False, False)),
    ("Model-D", (False, False, False, True, False)),
    ("Model-E", (False, False, False, False, True)),
    ("Model-A", (True, False, False, False, False)),
    ("Model-F", (True, True, False, False, False)),
    ("Model-G", (True, True, True, False, False)),
    ("Model-H", (True, True, True, True, False)),
    ("Model-I", (True, True, True, True, True)),
]


def _suite_variants(suite, model_cfg, weights):
    """Rows of (label, extra_columns, model_cfg, weights) for one suite."""
    if suite == "fusion":
        return [
            (mode, {}, dataclasses.replace(model_cfg, fusion_mode=mode), weights)
            for mode in ("concat", "l2g", "g2l", "mutual")
        ]
    if suite == "partition":
        return [
            (str(k), {"partitions": str(k)},
             dataclasses.replace(model_cfg, partitions=k), weights)
            for k in (1, 2, 4, 8, 12, 16)
        ]
    if suite == "blocks":
        return [
            (label, {"mask": "".join("1" if b else "0" for b in mask)},
             dataclasses.replace(model_cfg, block_mask=mask), weights)
            for label, mask in _BLOCK_ROWS
        ]
    # loss: final term alone, each auxiliary term alone, then full supervision
    combos = [
        ("L_f", 0.0, 0.0),
        ("L_f+L_g", weights.alpha_g, 0.0),
        ("L_f+L_l", 0.0, weights.alpha_l),
        ("L_f+L_g+L_l", weights.alpha_g, weights.alpha_l),
    ]
    return [
        (label, {"alpha_g": _fmt(ag), "alpha_l": _fmt(al)},
         model_cfg, LossWeights(ag, al))
        for label, ag, al in combos
    ]


def cmd_ablate(args) -> int:
    model_cfg, train_cfg, weights = _load_configs(args.config)
    os.makedirs(args.out, exist_ok=True)
    variants = _suite_variants(args.suite, model_cfg, weights)
    extra_cols = list(variants[0][1].keys())

    cache = {}
    rows = []
    for i, (label, extra, cfg, wts) in enumerate(variants):
        key = json.dumps(config_dict(cfg, train_cfg, wts), sort_keys=True)
        if key not in cache:
            run_dir = os.path.join(args.out, args.suite, f"{i:02d}-{label}")
            print(f"[{args.suite}] training {label} ...", flush=True)
            try:
                result = train(cfg, train_cfg, wts, run_dir, quiet=True)
            except TrainingDiverged as e:
                _err(f"{label}: {e}")
                return 1
            cache[key] = result
        r = cache[key]
        model = build_model(cfg, train_cfg.seed)
        rows.append((label, extra, param_count(model), r))

    csv_path = os.path.join(args.out, f"{args.suite}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["variant"] + extra_cols
                          + ["params", "best_val_psnr", "final_val_psnr", "final_val_ssim"]) + "\n")
        for label, extra, params, r in rows:
            fh.write(",".join(
                [label] + [extra[c] for c in extra_cols]
                + [str(params), _fmt(r.best_val_psnr), _fmt(r.final_val_psnr),
                   _fmt(r.final_val_ssim)]) + "\n")
    print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    model_cfg, _, _ = _load_configs(args.config)
    max_err, layer_rows = battery(model_cfg, seed=args.seed)
    width = max(len(name) for name, _ in layer_rows)
    for name, err in layer_rows:
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    print(f"max relative error {max_err:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    bad = [name for name, err in layer_rows if err >= GRADCHECK_TOL]
    if bad:
        _err("gradient check failed for: " + ", ".join(bad))
        return 1
    return 0


# ---------------------------------------------------------------- parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgn", description="Two-branch image enhancement toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config")
    p.add_argument("--config", help="JSON config file (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and log")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="run a checkpoint over images")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="IMG",
                   help="input PPM images")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM of enhanced images against ground truth")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--pairs", required=True,
                   help="directory holding x/ and gt/ with matching file names")
    p.add_argument("--csv", required=True, help="output CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare a suite of variants")
    p.add_argument("--suite", required=True, choices=("fusion", "partition", "blocks", "loss"))
    p.add_argument("--config", help="JSON config shared by every variant")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else int(e.code)
    try:
        return args.func(args)
    except ConfigError as e:
        _err(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
