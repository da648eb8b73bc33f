"""Command line entry point: ``oialr train | analyze | inspect``."""

import argparse
import csv
import glob
import io
import json
import logging
import os
import re
import sys
from contextlib import nullcontext
from dataclasses import asdict

import numpy as np

from . import checkpoint
from .config import build_dataset, build_model, load_config
from .exceptions import CheckpointError, OIALRError
from .metrics import STABILITY_MODES, lagged_report, take_snapshot
from .telemetry import telemetry_csv
from .trainer import train

EXIT_CONFIG = 1
EXIT_RUNTIME = 2
STABILITY_HEADER = ("epoch", "layer_id", "stability", "similarity")
_SNAP_RE = re.compile(r"snap_(\d+)\.ckpt$")

logger = logging.getLogger("oialr")


def _write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def _err(msg):
    print(f"oialr: error: {msg}", file=sys.stderr)


def cmd_train(config_path, baseline=False, out=None, seed=None):
    try:
        cfg = load_config(config_path, seed=seed)
        dataset = build_dataset(cfg)
        model = build_model(cfg, dataset)
        cfg.train.resolve(dataset.n_train)
    except (OIALRError, ValueError, TypeError, OSError) as exc:
        _err(exc)
        return EXIT_CONFIG
    out_dir = out or cfg.out_dir or "run"
    if not os.path.isabs(out_dir) and out is None and cfg.out_dir:
        out_dir = os.path.join(cfg.base_dir, out_dir)
    os.makedirs(out_dir, exist_ok=True)

    every = cfg.train.stability_every

    def on_epoch_end(epoch, result):
        if epoch % every == 0:
            checkpoint.save_model(os.path.join(out_dir, f"snap_{epoch}.ckpt"), result.model, result.optimizer)

    try:
        result = train(model, cfg.train, dataset, low_rank=not baseline, on_epoch_end=on_epoch_end)
    except (OIALRError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _err(exc)
        return EXIT_RUNTIME

    _write_text(os.path.join(out_dir, "telemetry.csv"), telemetry_csv(result.telemetry, dataset.task))
    checkpoint.save_model(os.path.join(out_dir, "final.ckpt"), result.model, result.optimizer)
    resolved = {"baseline": baseline, "seed": cfg.seed, "model": cfg.model, "dataset": cfg.dataset, "train": asdict(result.config)}
    _write_text(os.path.join(out_dir, "run.json"), json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    last = result.telemetry[-1]
    metric = "acc" if dataset.task == "classification" else "mse"
    val = last.val_metric if last.val_metric is not None else last.train_metric
    print(
        f"{'baseline' if baseline else 'oialr'}: epochs={last.epoch} steps={last.step} "
        f"loss={last.train_loss:.6g} {metric}={val:.6g} "
        f"compression={last.compression_pct:.2f}% trainable={last.trainable_pct:.2f}%"
    )
    return 0


def list_snapshots(run_dir):
    """``[(epoch, path)]`` of epoch checkpoints, sorted by epoch."""
    found = []
    for path in glob.glob(os.path.join(run_dir, "snap_*.ckpt")):
        m = _SNAP_RE.search(os.path.basename(path))
        if m:
            found.append((int(m.group(1)), path))
    return sorted(found)


def stability_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STABILITY_HEADER)
    for r in records:
        w.writerow([r.epoch_i, r.layer_id, repr(r.stability), repr(r.similarity)])
    return buf.getvalue()


def cmd_analyze(run_dir, lag=5, mode="min_rank"):
    snaps = list_snapshots(run_dir)
    if len(snaps) < lag + 1:
        _err(f"need at least {lag + 1} epoch checkpoints in {run_dir}, found {len(snaps)}")
        return EXIT_CONFIG
    try:
        history = []
        for epoch, path in snaps:
            model, _ = checkpoint.restore_model(checkpoint.load(path))
            history.append(take_snapshot(model, epoch))
        records = lagged_report(history, lag, mode)
    except CheckpointError as exc:
        _err(f"{exc}")
        return EXIT_CONFIG
    except OIALRError as exc:
        _err(exc)
        return EXIT_RUNTIME
    _write_text(os.path.join(run_dir, "stability.csv"), stability_csv(records))
    print(f"wrote {len(records)} rows from {len(snaps)} checkpoints (lag {lag})")
    return 0


def _sigma_rank(sigma, tol=1e-10):
    off = sigma - np.diag(np.diag(sigma))
    if np.any(off != 0):
        return None
    return int(np.count_nonzero(np.diag(sigma) >= tol))


def cmd_inspect(path):
    try:
        tensors = checkpoint.load(path)
    except CheckpointError as exc:
        _err(f"{path}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(exc)
        return EXIT_CONFIG
    print(f"{'name':32s} {'role':9s} {'shape':16s} rank")
    trainable = frozen = 0
    full_equiv = 0
    shapes = {}
    for t in tensors:
        role = checkpoint.ROLE_NAMES.get(t.role, f"?{t.role}")
        rank = ""
        if t.role == checkpoint.ROLE_SIGMA:
            r = _sigma_rank(t.data)
            rank = "dense" if r is None else str(r)
        print(f"{t.name:32s} {role:9s} {'x'.join(map(str, t.data.shape)):16s} {rank}")
        lid = t.name.rsplit(".", 1)[0]
        if t.role in (checkpoint.ROLE_WEIGHT, checkpoint.ROLE_SIGMA, checkpoint.ROLE_BIAS):
            trainable += t.data.size
        elif t.role in (checkpoint.ROLE_U, checkpoint.ROLE_V):
            frozen += t.data.size
        if t.role == checkpoint.ROLE_WEIGHT or t.role == checkpoint.ROLE_BIAS:
            full_equiv += t.data.size
        elif t.role in (checkpoint.ROLE_U, checkpoint.ROLE_V):
            shapes.setdefault(lid, []).append(t.data.shape[0])
    full_equiv += sum(m * n for m, n in shapes.values())
    total = trainable + frozen
    print(f"trainable={trainable} frozen={frozen} total={total}")
    print(f"compression={100.0 * total / full_equiv:.2f}% trainable={100.0 * trainable / full_equiv:.2f}% (vs full-rank {full_equiv})")
    return 0


def _thread_limit():
    raw = os.environ.get("OIALR_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser():
    parser = argparse.ArgumentParser(prog="oialr", description="Adaptive low-rank training experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("config")
    p.add_argument("--baseline", action="store_true", help="plain full-rank training")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("analyze", help="lagged stability of a run's epoch checkpoints")
    p.add_argument("run_dir")
    p.add_argument("--lag", type=int, default=5)
    p.add_argument("--mode", choices=STABILITY_MODES, default="min_rank")

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    with _thread_limit():
        if args.command == "train":
            return cmd_train(args.config, args.baseline, args.out, args.seed)
        if args.command == "analyze":
            if args.lag < 1:
                _err("--lag must be >= 1")
                return EXIT_CONFIG
            return cmd_analyze(args.run_dir, args.lag, args.mode)
        return cmd_inspect(args.checkpoint)


if __name__ == "__main__":
    sys.exit(main())
