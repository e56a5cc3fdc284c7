"""Batch command-line entry point (``coarse-loftr``).

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .config import TEACHER_RUN, RunConfig, format_config, load_config
from .dataio import find_pair, load_image, load_pair, load_weights, scan_dataset
from .errors import (
    BehindCameraError,
    ConfigError,
    ContractError,
    DatasetError,
    DimensionError,
    FormatError,
    NumericError,
    ValidationError,
)
from .geometry import generate_ground_truth
from .layers import param_count
from .matching import cell_center, extract_matches, mae
from .model import CoarseMatcher
from . import numerics as nx
from .synthetic import generate_synthetic_dataset
from .trainer import PairDataset, train

log = logging.getLogger("coarse_loftr")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _size(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None


def _pair_key(text: str) -> str:
    if text.count(":") != 2:
        raise argparse.ArgumentTypeError(f"expected SCENE:IDA:IDB, got {text!r}")
    return text


def _run_config(config: str | None, weights: str | None = None, fallback: RunConfig = RunConfig()) -> RunConfig:
    if config:
        return load_config(config)
    if weights:
        sibling = Path(weights).parent / "run.cfg"
        if sibling.exists():
            return load_config(sibling)
    return fallback


def _load_model(weights: str, cfg: RunConfig) -> CoarseMatcher:
    model = CoarseMatcher(cfg.model_config(), seed=cfg.seed)
    model.load_arrays(load_weights(weights))
    return model


def cmd_synth_data(args) -> int:
    h, w = args.size
    generate_synthetic_dataset(args.out, args.scenes, (h, w), args.seed, force=args.force)
    print(f"wrote {args.scenes} scenes ({h}x{w}) to {args.out}")
    return 0


def cmd_gen_gt(args) -> int:
    desc = find_pair(args.data, args.pair)
    sp = load_pair(desc)
    gt = generate_ground_truth(sp.depthA, sp.depthB, sp.camA, sp.camB, args.step, args.tol)
    with open(args.out, "w") as fh:
        for (ca, cb), (ua, va), (ub, vb) in zip(gt.pairs, gt.pixelsA, gt.pixelsB):
            fh.write(f"{ca} {cb} {ua:.6f} {va:.6f} {ub:.6f} {vb:.6f}\n")
    print(f"{len(gt)} ground-truth matches written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    dataset = PairDataset(scan_dataset(args.data), cfg.grid_step, cfg.depth_tol)
    teacher = None
    if args.teacher:
        tcfg = _run_config(args.teacher_config, args.teacher, TEACHER_RUN)
        teacher = _load_model(args.teacher, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(format_config(cfg))
    student = CoarseMatcher(cfg.model_config(), seed=cfg.seed)
    rows = train(student, teacher, dataset, cfg.train_config(), cfg.distill_config(), out)
    if rows:
        print(f"trained {cfg.epochs} epochs, final loss {rows[-1]['loss']:.6g}, final mae {rows[-1]['mae']:.6g}")
    print(f"checkpoints and metrics in {out}")
    return 0


def cmd_match(args) -> int:
    cfg = _run_config(args.config, args.weights)
    model = _load_model(args.weights, cfg)
    a, b = load_image(args.imageA), load_image(args.imageB)
    with nx.no_grad():
        out = model(a, b)
    mset = extract_matches(out.P, args.threshold, mnn=not args.no_mnn)
    step = cfg.grid_step
    with open(args.out, "w") as fh:
        for i, j, conf in mset.matches:
            ua, va = cell_center(i, out.gridA[1], step)
            ub, vb = cell_center(j, out.gridB[1], step)
            fh.write(f"{ua} {va} {ub} {vb} {conf:.6f}\n")
    print(f"{len(mset)} matches written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args.config, args.weights)
    model = _load_model(args.weights, cfg)
    data = PairDataset(scan_dataset(args.data), cfg.grid_step, cfg.depth_tol)
    values = []
    with nx.no_grad():
        for i in range(len(data)):
            s = data[i]
            values.append(mae(model(s.imageA, s.imageB).P, s.gt.dense))
    mean = float(np.mean(values)) if values else float("nan")
    with open(args.out, "w") as fh:
        fh.write("n_pairs,mae\n")
        fh.write(f"{len(values)},{mean:.9g}\n")
    print(f"mean mae over {len(values)} pairs: {mean:.6g}")
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args.config, args.weights)
    model = _load_model(args.weights, cfg).astype(np.float32)
    w, h = args.size
    ms = benchmod.time_pipeline(model, h, w, args.iters)
    print(f"median_ms={ms:.3f} fps={1000.0 / ms:.3f}")
    n = args.ref_tokens
    ref, fast = benchmod.attention_speedup(n, cfg.d_model, cfg.n_heads, max(args.iters, 3))
    print(f"attention_tokens={n} reference_ms={ref:.3f} fast_ms={fast:.3f} speedup={ref / fast:.2f}")
    print(f"params={param_count(model)} (reported for the reduced model: {benchmod.REPORTED_PARAMS_REDUCED})")
    print("reported fps: " + ", ".join(f"{k} ~{v:g}" for k, v in benchmod.REPORTED_FPS.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coarse-loftr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic plane-scene dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--size", type=_size, required=True, help="HxW, both multiples of 16")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("gen-gt", help="depth-based ground-truth matches for one pair")
    s.add_argument("--data", required=True)
    s.add_argument("--pair", type=_pair_key, required=True, help="SCENE:IDA:IDB")
    s.add_argument("--step", type=int, default=16)
    s.add_argument("--tol", type=float, default=0.02, help="relative depth tolerance")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_gt)

    defaults = "\n".join("  " + line for line in format_config(RunConfig()).splitlines())
    s = sub.add_parser(
        "train",
        help="train a student model",
        description="Train with optional distillation. Config keys and defaults:\n" + defaults,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="key = value run configuration")
    s.add_argument("--teacher", help="teacher weights; without it c_d is forced to 0")
    s.add_argument("--teacher-config", help="teacher architecture (default: run.cfg beside the weights)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("match", help="match two PGM images")
    s.add_argument("--weights", required=True)
    s.add_argument("--imageA", required=True)
    s.add_argument("--imageB", required=True)
    s.add_argument("--threshold", type=float, default=0.2)
    s.add_argument("--no-mnn", action="store_true", help="disable mutual-nearest-neighbour filtering")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("eval", help="mean MAE over every pair of a dataset")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time the inference pipeline")
    s.add_argument("--weights", required=True)
    s.add_argument("--size", type=_size, default=(640, 480), help="WxH")
    s.add_argument("--iters", type=int, default=5)
    s.add_argument("--ref-tokens", type=int, default=1200, help="sequence length for the attention comparison")
    s.add_argument("--config")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DatasetError, DimensionError, ValidationError, ContractError, BehindCameraError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
