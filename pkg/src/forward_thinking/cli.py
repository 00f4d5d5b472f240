"""Command line entry point: ``forward-thinking <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input (bad config,
missing run directory, argument errors).

Environment:
    FT_OUTPUT_DIR   overrides ``output_dir`` of a run config
    FT_THREADS      caps BLAS/OpenMP threads
    FT_MNIST_DIR    default for ``dataset.mnist_dir``
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import urllib.request
from contextlib import nullcontext
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .baseline import DeepNet, compare_runs, train_backprop
from .config import ConfigError, ExperimentConfig, load_config
from .data import (IdxParseError, augment, load_idx, load_mnist, split, synth_squares,
                   synth_xor)
from .errors import ContractError
from .gradcheck import EPSILON, PRESETS, TOLERANCE, run_preset
from .modelio import save_model
from .shallow import EpochMetrics
from .stacking import train_forward_thinking, train_forward_thinking_conv
from .tensor import SeededRng

METRIC_COLUMNS = ("phase", "stage", "epoch", "train_loss", "train_acc", "val_acc", "test_acc",
                  "wall_seconds")

MNIST_FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)


class UsageError(Exception):
    """Bad user input; reported with exit code 2."""


# -- metrics.csv -------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def metric_row(phase: str, stage, m: EpochMetrics) -> dict:
    return {"phase": phase, "stage": "" if stage is None else stage, "epoch": m.epoch,
            "train_loss": m.train_loss, "train_acc": m.train_acc, "val_acc": m.val_acc,
            "test_acc": m.test_acc, "wall_seconds": m.seconds}


def write_metrics(path: Path, rows: List[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def read_metrics(path: Path) -> List[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise UsageError(f"{path}: header {reader.fieldnames} is not {list(METRIC_COLUMNS)}")
        return list(reader)


def _num(s: str) -> float:
    return float(s) if s != "" else float("nan")


def rows_to_metrics(rows: List[dict]) -> List[EpochMetrics]:
    out = []
    for r in rows:
        test = _num(r["test_acc"])
        out.append(EpochMetrics(int(r["epoch"]), _num(r["train_loss"]), _num(r["train_acc"]),
                                _num(r["val_acc"]), float(r["wall_seconds"]),
                                None if math.isnan(test) else test))
    return out


# -- run -------------------------------------------------------------------

def _thread_limit():
    n = os.environ.get("FT_THREADS")
    if not n:
        return nullcontext()
    try:
        count = int(n)
    except ValueError:
        raise UsageError(f"FT_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=count)


def _uses_images(cfg: ExperimentConfig) -> bool:
    if cfg.mode == "ft_conv":
        return True
    return cfg.mode == "backprop" and cfg.architecture.kind == "conv"


def build_datasets(cfg: ExperimentConfig):
    """``(train, val, test)`` for a resolved config; ``test`` may be None."""
    ds = cfg.dataset
    images = _uses_images(cfg)
    test = None
    if ds.source == "mnist":
        d = Path(ds.mnist_dir)
        if not d.is_dir():
            raise UsageError(f"dataset.mnist_dir: directory {d} does not exist")
        layout = "image" if images or ds.augment else "flat"
        full = load_mnist(d, "train", layout, ds.train_limit)
        test = load_mnist(d, "t10k", layout, ds.test_limit)
    elif ds.source == "xor":
        if images:
            raise UsageError("dataset.source: xor data has no image layout for conv modes")
        full = synth_xor(ds.n, ds.noise, cfg.seed)
    else:
        full = synth_squares(ds.n, cfg.seed)
    if ds.augment is not None and not full.is_image:
        raise UsageError("dataset.augment: augmentation needs image data")
    train, val = split(full, ds.val_fraction, ds.split_seed)
    if ds.augment is not None:
        train = augment(train, cfg.augment_config())
    if not images:
        train, val = train.flat(), val.flat()
        test = test.flat() if test is not None else None
    return train, val, test


def execute(cfg: ExperimentConfig, out: Path) -> dict:
    """Run a resolved config, writing every artifact into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.canonical_json() + "\n")
    train, val, test = build_datasets(cfg)
    rows: List[dict] = []
    summary = {"mode": cfg.mode, "config_hash": cfg.config_hash(),
               "n_train": len(train), "n_val": len(val), "n_test": len(test) if test else 0}

    def on_epoch(phase, stage, m):
        rows.append(metric_row(phase, stage, m))

    if cfg.mode == "backprop":
        a = cfg.architecture
        rng = SeededRng(a.init_seed)
        if a.kind == "dense":
            net = DeepNet.dense(rng, train.sample_shape[0], a.widths, train.n_classes,
                                a.dropout.after_stage)
        else:
            net = DeepNet.conv(rng, train.sample_shape, a.widths, a.fc_width, train.n_classes,
                               a.dropout.after_stage, a.dropout.after_fc)
        model, metrics = train_backprop(net, train, val, cfg.train_config(), test=test,
                                        on_epoch=lambda m: on_epoch("backprop", None, m))
        final = metrics[-1] if metrics else None
    else:
        kwargs = dict(policy=cfg.stopping_policy(), test=test, on_epoch=on_epoch)
        if cfg.mode == "ft_dense":
            res = train_forward_thinking(train, val, cfg.stage_specs(),
                                         final_config=cfg.final_head_config(),
                                         retain_last_head=cfg.retain_last_head, **kwargs)
        else:
            res = train_forward_thinking_conv(train, val, cfg.stage_specs(), **kwargs)
        model = res.model
        for st in model.stages:
            if st.param_hash() != st.digest:
                raise ContractError(f"frozen stage {st.index} changed after it was frozen")
        summary["stage_digests"] = [st.digest for st in model.stages]
        summary["frozen_hashes_unchanged"] = True
        summary["stages_used"] = len(model.stages)
        summary["stopped_early"] = res.stopped_early
        final = (res.final_metrics or res.stages[-1].metrics or [None])[-1]
    write_metrics(out / "metrics.csv", rows)
    save_model(model, out / "model.ftm",
               provenance={"config_hash": cfg.config_hash(), "mode": cfg.mode, "seed": cfg.seed})
    if final is not None:
        summary.update(final_val_acc=final.val_acc, final_test_acc=final.test_acc)
    summary["total_seconds"] = sum(r["wall_seconds"] for r in rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    out = Path(cfg.output_dir)
    with _thread_limit():
        summary = execute(cfg, out)
    test = summary.get("final_test_acc")
    print(f"run complete: {out}")
    print(f"  final val acc  {summary.get('final_val_acc')}")
    if test is not None:
        print(f"  final test acc {test}")
    print(f"  train seconds  {summary['total_seconds']:.2f}")
    return 0


# -- compare ---------------------------------------------------------------

def _load_run(d: Path):
    if not d.is_dir():
        raise UsageError(f"run directory {d} does not exist")
    p = d / "metrics.csv"
    if not p.is_file():
        raise UsageError(f"{d} has no metrics.csv")
    rows = read_metrics(p)
    if not rows:
        raise UsageError(f"{p} has no rows")
    return rows


def first_stage_seconds(rows: List[dict]) -> float:
    """Cumulative time at which stage 0 (including its transform) finished."""
    t = 0.0
    seen = False
    for r in rows:
        if r["phase"] in ("stage", "transform") and r["stage"] == "0":
            seen = True
        elif seen:
            break
        t += float(r["wall_seconds"])
    return t if seen else 0.0


def cmd_compare(args) -> int:
    a_dir, b_dir = Path(args.run_a), Path(args.run_b)
    rows_a, rows_b = _load_run(a_dir), _load_run(b_dir)
    names = (a_dir.name or "a", b_dir.name or "b")
    if names[0] == names[1]:
        names = (names[0] + "_a", names[1] + "_b")
    rep = compare_runs(rows_to_metrics(rows_a), rows_to_metrics(rows_b),
                       ft_after_seconds=first_stage_seconds(rows_a), labels=names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seconds", f"{names[0]}_accuracy", f"{names[1]}_accuracy",
                    f"{names[0]}_ahead"])
        for s in rep.samples:
            w.writerow([_fmt(s["seconds"]), _fmt(s["ft_accuracy"]), _fmt(s["bp_accuracy"]),
                        int(s["ft_ahead"])])
    lines = []
    for r in rep.rows:
        spe = r["seconds_per_epoch"]
        lines.append(f"{r['method']}: final accuracy {r['final_accuracy']}, "
                     f"{r['total_seconds']:.2f} s total over {r['epochs']} epochs"
                     + (f" ({spe:.2f} s/epoch)" if spe is not None else ""))
    sm = rep.summary
    lines.append(f"accuracy delta ({names[0]} - {names[1]}): {sm['accuracy_delta']}")
    lines.append(f"speed ratio ({names[1]} seconds / {names[0]} seconds): {sm['speed_ratio']}")
    lines.append(f"{names[0]} ahead at all {sm['n_samples']} equal-time samples: {sm['ft_ahead']}")
    text = "\n".join(lines)
    (out / "summary.txt").write_text(text + "\n")
    (out / "summary.json").write_text(json.dumps({"runs": rep.rows, **sm}, indent=2,
                                                 sort_keys=True) + "\n")
    print(text)
    return 0


# -- gradcheck -------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    presets = PRESETS if args.preset == "all" else (args.preset,)
    worst = 0.0
    for p in presets:
        for seed in range(args.seed, args.seed + args.seeds):
            errs = run_preset(p, seed, epsilon=args.epsilon, corrupt=args.corrupt)
            worst = max([worst] + list(errs.values()))
            detail = "  ".join(f"{k}={v:.3e}" for k, v in errs.items())
            print(f"seed {seed:3d}  {detail}")
    ok = worst <= TOLERANCE
    print(f"max relative error {worst:.3e} ({'pass' if ok else 'FAIL'}, tolerance {TOLERANCE:g})")
    return 0 if ok else 1


# -- data --------------------------------------------------------------------

def cmd_inspect(args) -> int:
    try:
        raw = load_idx(args.images, args.labels)
    except (IdxParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    n, h, w = raw.images.shape
    counts = np.bincount(raw.labels, minlength=10)
    print(f"images: {n} x {h} x {w} (uint8)")
    print(f"pixel mean {raw.images.mean():.4f}, min {raw.images.min()}, max {raw.images.max()}")
    print("label counts: " + " ".join(f"{i}:{c}" for i, c in enumerate(counts)))
    return 0


def cmd_fetch(args) -> int:
    d = Path(args.directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, md5 in MNIST_FILES.items():
        if (d / name).is_file() and hashlib.md5((d / name).read_bytes()).hexdigest() == md5:
            print(f"{name}: present")
            continue
        blob, errors = None, []
        for base in MNIST_MIRRORS:
            try:
                with urllib.request.urlopen(base + name, timeout=60) as resp:
                    blob = resp.read()
            except OSError as e:
                errors.append(f"{base}: {e}")
                continue
            if hashlib.md5(blob).hexdigest() == md5:
                break
            errors.append(f"{base}: md5 mismatch")
            blob = None
        if blob is None:
            print(f"error: could not fetch {name}: " + "; ".join(errors), file=sys.stderr)
            return 1
        (d / name).write_bytes(blob)
        print(f"{name}: downloaded ({len(blob)} bytes)")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forward-thinking",
                                description="Greedy layer-wise training experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train according to a YAML/JSON config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="accuracy-vs-time comparison of two run directories")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", default="comparison", help="directory for report.csv (default: %(default)s)")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check on toy presets")
    g.add_argument("--preset", choices=PRESETS + ("all",), default="all")
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--seeds", type=int, default=20, help="number of seeds per preset")
    g.add_argument("--epsilon", type=float, default=EPSILON)
    g.add_argument("--corrupt", action="store_true",
                   help="perturb the analytic gradient (the check must then fail)")
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect-data", help="summarise an IDX image/label pair")
    i.add_argument("images")
    i.add_argument("labels")
    i.set_defaults(func=cmd_inspect)

    f = sub.add_parser("fetch-mnist", help="download MNIST (needs network access)")
    f.add_argument("directory")
    f.set_defaults(func=cmd_fetch)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
