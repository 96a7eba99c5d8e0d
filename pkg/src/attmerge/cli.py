"""``attmerge`` command line: gen-data, train, evaluate, inspect-weights, gradcheck, grid.

Every command reads an optional ``--config`` file; flags given on the
command line override config values.  Outputs go to ``--out`` and appear
atomically.  Exit status is 0 on success, 1 when a gradient check fails and
2 for usage, config or data errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataio import (
    FormatError,
    atomic_write_text,
    generate_synthetic,
    load_dataset,
    load_params,
    save_params,
    staged_directory,
    write_dataset,
    write_score_file,
)
from .evaluation import ScoreSet, average_eer, compute_eer, det_points
from .experiments import grid_csv, load_named, log_csv, train_model, truncation_grid
from .gradcheck import BLOCKS, TOLERANCE, check_block
from .linm import normalized_weights
from .model import Model
from .trainer import make_batches, score_utterances

CHECKPOINT = "checkpoint.prm"
TRAIN_LOG = "train_log.csv"
EER_SUMMARY = "eer_summary.csv"

log = logging.getLogger("attmerge")


class UsageError(Exception):
    """A problem with the inputs, reported before any work is done."""


# -- helpers ------------------------------------------------------------------


def _config(args, **extra) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None), **extra}
    return load_config(args.config, **overrides)


def _check_data(utts, cfg_h: int, k: int, where: str) -> None:
    if not utts:
        raise UsageError(f"{where}: dataset is empty")
    _, h, l = utts[0].data.shape
    if h != cfg_h:
        raise UsageError(f"{where}: stacks have H={h} but the model expects H={cfg_h}")
    if l < k:
        raise UsageError(f"{where}: stacks have L={l} layers, fewer than the layer cap K={k}")


def _load_capped(path, cfg: RunConfig, where: str):
    if path is None:
        raise UsageError(f"{where} is not set (config key or flag)")
    if not Path(path).is_dir():
        raise UsageError(f"{where}: {path} is not a directory")
    utts = load_dataset(path)
    _check_data(utts, cfg.hidden_dim, cfg.layer_cap, where)
    return [type(u)(u.utterance_id, u.data[..., : cfg.layer_cap], u.label) for u in utts]


def _load_model(path) -> Model:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    arrays, meta = load_params(path)
    if "model" not in meta:
        raise UsageError(f"{path} is not a model checkpoint")
    return Model.from_arrays(arrays, meta)


def _check_model_matches(model: Model, cfg: RunConfig) -> None:
    mc = model.config
    wanted = cfg.model_config()
    for name in ("num_layers", "hidden_dim", "num_heads", "ffn_dim", "layer_cap", "merge", "head"):
        if getattr(mc, name) != getattr(wanted, name):
            raise UsageError(
                f"checkpoint {name}={getattr(mc, name)!r} does not match config {name}={getattr(wanted, name)!r}"
            )


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    split = args.split or cfg.data_split
    spec = cfg.synthetic_spec(split)
    items = generate_synthetic(spec)
    out = write_dataset(args.out, items, spec, force=args.force)
    print(f"wrote {len(items)} stacks to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(
        args,
        merge=args.merge,
        head=args.head,
        strategy=args.strategy,
        layer_cap=args.layer_cap,
        total_epochs=args.epochs,
        train_data=args.train,
        dev_data=args.dev,
    )
    cfg.check_paths("train_data", "dev_data")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists (use --force to overwrite)")
    train = _load_capped(cfg.train_data, cfg, "train_data")
    dev = _load_capped(cfg.dev_data, cfg, "dev_data") if cfg.dev_data else []

    model, rows = train_model(cfg, train, dev)
    meta = {
        **model.meta(),
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "best_dev_eer": min((r.dev_eer for r in rows), default=float("nan")),
    }
    with staged_directory(out, force=args.force) as tmp:
        save_params(tmp / CHECKPOINT, model.named_tensors(), meta)
        (tmp / TRAIN_LOG).write_text(log_csv(rows), encoding="utf-8")
    print(f"trained {len(rows)} epochs; checkpoint in {out / CHECKPOINT}")
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model(args.checkpoint)
    if args.config is not None:
        _check_model_matches(model, _config(args))
    mc = model.config
    paths = args.datasets
    if not paths:
        cfg = _config(args)
        cfg.check_paths("eval_data")
        paths = cfg.eval_data
    if not paths:
        raise UsageError("no datasets given (positional arguments or eval_data)")
    # Load and validate every dataset before scoring or writing anything.
    datasets = load_named(paths)
    for name, utts in datasets.items():
        _check_data(utts, mc.hidden_dim, mc.layer_cap, name)
    eers = {}
    with staged_directory(args.out, force=args.force) as tmp:
        for name, utts in datasets.items():
            capped = [type(u)(u.utterance_id, u.data[..., : mc.layer_cap], u.label) for u in utts]
            scores = score_utterances(model, capped, workers=args.workers)
            keys = {u.utterance_id: u.label for u in utts}
            score_set = ScoreSet.join(keys, scores)
            eers[name] = compute_eer(score_set)
            write_score_file(tmp / f"{name}.scores.txt", scores)
            det = "far,frr\n" + "".join(f"{a!r},{b!r}\n" for a, b in det_points(score_set))
            (tmp / f"{name}.det.csv").write_text(det, encoding="utf-8")
        avg = average_eer(list(eers.values()))
        lines = ["dataset,eer"] + [f"{n},{e!r}" for n, e in eers.items()] + [f"Avg,{avg!r}"]
        (tmp / EER_SUMMARY).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, e in eers.items():
        print(f"{name}: EER {100 * e:.3f}%")
    print(f"Avg: EER {100 * avg:.3f}%")
    return 0


def layer_weight_rows(model: Model, utts=None, workers: int = 1) -> np.ndarray:
    """Normalized LinM weights, or AttM weights averaged over ``utts``."""
    mc = model.config
    if mc.merge == "linm":
        return normalized_weights(model.merge)
    if mc.merge != "attm":
        raise UsageError("checkpoint has no merging parameters (merge=none)")
    if not utts:
        raise UsageError("AttM inspection needs a dataset (--data)")
    total = np.zeros(mc.layer_cap)
    for batch in make_batches(utts, 64):
        total += model.attention_weights(batch.x).sum(axis=0)
    return total / len(utts)


def cmd_inspect_weights(args) -> int:
    model = _load_model(args.checkpoint)
    utts = None
    if args.data is not None:
        utts = _load_capped(args.data, _config(args).replace(
            hidden_dim=model.config.hidden_dim, layer_cap=model.config.layer_cap,
            num_layers=model.config.num_layers), "--data")
    weights = layer_weight_rows(model, utts)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer_index", "weight"])
    for i, w in enumerate(weights, start=1):
        writer.writerow([i, repr(float(w))])
    if args.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        if Path(args.out).exists() and not args.force:
            raise FileExistsError(f"{args.out} exists (use --force to overwrite)")
        atomic_write_text(args.out, buf.getvalue())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    failed = False
    for name in BLOCKS:
        err = check_block(name, cfg.seed)
        ok = err < TOLERANCE
        failed |= not ok
        print(f"{name:<15} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}", flush=True)
    return 1 if failed else 0


def cmd_grid(args) -> int:
    cfg = _config(args, train_data=args.train, dev_data=args.dev)
    try:
        caps = [int(k) for k in args.layers.split(",")]
    except ValueError:
        raise UsageError(f"--layers must be comma-separated integers, got {args.layers!r}") from None
    for k in caps:
        if not 1 <= k <= cfg.num_layers:
            raise UsageError(f"layer cap K={k} outside [1, {cfg.num_layers}]")
    full = cfg.replace(layer_cap=max(caps))
    train = _load_capped(cfg.train_data, full, "train_data")
    dev = _load_capped(cfg.dev_data, full, "dev_data") if cfg.dev_data else []
    evals = load_named(args.datasets or cfg.eval_data)
    if not evals:
        raise UsageError("no evaluation datasets given")
    for name, utts in evals.items():
        _check_data(utts, cfg.hidden_dim, max(caps), name)
    if Path(args.out).exists() and not args.force:
        raise FileExistsError(f"{args.out} exists (use --force to overwrite)")
    rows = truncation_grid(cfg, caps, train, dev, evals, workers=args.workers)
    text = grid_csv(rows)
    atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="attmerge", description="Attentive and linear merging of layer embeddings: data, training, scoring.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic layer-band dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--split", help="split name used in utterance ids (default: data.split)")
    p.add_argument("--force", action="store_true", help="replace an existing directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model; write checkpoint and log")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--train", help="training dataset directory")
    p.add_argument("--dev", help="development dataset directory")
    p.add_argument("--merge", choices=("attm", "linm", "none"))
    p.add_argument("--head", choices=("recurrent", "pooling"))
    p.add_argument("--strategy", choices=("fine-tuned", "fixed"))
    p.add_argument("--layer-cap", type=int, dest="layer_cap")
    p.add_argument("--epochs", type=int, help="override total_epochs")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score datasets; report EER per set and Avg")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="directory for score files and the EER summary")
    p.add_argument("--workers", type=int, default=1, help="threads used for scoring")
    p.add_argument("--force", action="store_true")
    p.add_argument("datasets", nargs="*", help="dataset directories (default: eval_data)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-weights", parents=[common], help="export per-layer merge weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset to average AttM weights over (required for AttM)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_inspect_weights)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every block")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("grid", parents=[common], help="layer-truncation grid, one row per K")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--layers", default="2,3,4,6", help="comma-separated layer caps")
    p.add_argument("--train", help="training dataset directory")
    p.add_argument("--dev", help="development dataset directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.add_argument("datasets", nargs="*", help="evaluation dataset directories (default: eval_data)")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError, FileExistsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
