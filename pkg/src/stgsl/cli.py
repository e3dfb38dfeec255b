"""Command-line interface.

Commands: synth, train, crossval, predict, interpret, gradcheck.
Configuration precedence: command-line flags beat the --config file,
which beats built-in defaults. Exit codes: 0 success, 1 numeric failure,
2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__, data, interpret, stgc_net, train_eval
from .data import DataError
from .gradcheck import run_gradcheck
from .train_eval import TrainConfig, TrainingDivergedError

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2

# flat key=value config keys: TrainConfig plus synthesis and path settings
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_SYNTH_KEYS = {"n_rois", "n_timepoints", "n_subjects_per_class", "edge_density",
               "coupling", "noise_std", "n_diff_edges"}
_PATH_KEYS = {"manifest", "checkpoint", "out_dir"}
_ALL_KEYS = _TRAIN_KEYS | _SYNTH_KEYS | _PATH_KEYS

_INT_KEYS = {"epochs", "batch_size", "window", "seed", "patience",
             "eval_stride", "val_stride", "channels", "n_blocks", "folds",
             "n_rois", "n_timepoints", "n_subjects_per_class", "n_diff_edges",
             "eval_graph_samples", "val_graph_samples", "val_every"}
_FLOAT_KEYS = {"lr", "weight_decay", "sparsity_weight", "temperature",
               "dropout", "validation_fraction", "threshold", "edge_density",
               "coupling", "noise_std"}
_BOOL_KEYS = {"decoupled_weight_decay"}


def read_config(path: str) -> dict:
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _ALL_KEYS:
                raise DataError(f"{path}:{lineno}: unknown config key '{key}'")
            if key in _INT_KEYS:
                cfg[key] = int(value)
            elif key in _FLOAT_KEYS:
                cfg[key] = float(value)
            elif key in _BOOL_KEYS:
                cfg[key] = value.lower() in ("1", "true", "yes")
            else:
                cfg[key] = value
    return cfg


def _merge(args, cfg: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def build_train_config(args, cfg: dict) -> TrainConfig:
    defaults = TrainConfig()
    kwargs = {f.name: _merge(args, cfg, f.name, getattr(defaults, f.name))
              for f in fields(TrainConfig)}
    return TrainConfig(**kwargs)


def _add_shared(parser):
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", dest="out_dir", default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--precision", choices=["double", "single"],
                        default="double")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stgsl",
        description="Spatio-temporal graph convolution with self-learned "
                    "sparse structure")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-graph dataset")
    _add_shared(p)
    p.add_argument("--n-rois", dest="n_rois", type=int, default=None)
    p.add_argument("--subjects", dest="n_subjects_per_class", type=int,
                   default=None, help="subjects per class")
    p.add_argument("--timepoints", dest="n_timepoints", type=int, default=None)
    p.add_argument("--edge-density", dest="edge_density", type=float, default=None)
    p.add_argument("--coupling", dest="coupling", type=float, default=None)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    p.add_argument("--k-diff", dest="n_diff_edges", type=int, default=None)

    p = sub.add_parser("train", help="train on a manifest, write a checkpoint")
    _add_shared(p)
    p.add_argument("--manifest", default=None)
    _add_train_flags(p)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    _add_shared(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--folds", type=int, default=None)
    _add_train_flags(p)

    p = sub.add_parser("predict", help="slice-averaged subject probabilities")
    _add_shared(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--stride", dest="eval_stride", type=int, default=None)
    p.add_argument("--timepoints", dest="n_timepoints", type=int, default=None,
                   help="series length used after truncation")
    p.add_argument("--graph-samples", dest="eval_graph_samples", type=int,
                   default=None,
                   help="binary graphs averaged per subject prediction")

    p = sub.add_parser("interpret", help="salience scores from a checkpoint")
    _add_shared(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--fraction", type=float, default=0.10)
    p.add_argument("--sum-rows", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_shared(p)
    p.add_argument("--break-st", action="store_true",
                   help="debug: disable the straight-through adjoint")
    return parser


def _add_train_flags(p):
    p.add_argument("--timepoints", dest="n_timepoints", type=int, default=None,
                   help="series length used after truncation")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--sparsity-weight", dest="sparsity_weight", type=float,
                   default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--eval-stride", dest="eval_stride", type=int, default=None)
    p.add_argument("--val-stride", dest="val_stride", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--n-blocks", dest="n_blocks", type=int, default=None)
    p.add_argument("--graph-samples", dest="eval_graph_samples", type=int,
                   default=None,
                   help="binary graphs averaged per subject prediction")


def _out_dir(args, cfg) -> str:
    out = _merge(args, cfg, "out_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_synth(args, cfg) -> int:
    spec = data.SynthSpec(
        n_rois=_merge(args, cfg, "n_rois", 16),
        n_timepoints=_merge(args, cfg, "n_timepoints", data.DEFAULT_TIMEPOINTS),
        n_subjects_per_class=_merge(args, cfg, "n_subjects_per_class", 40),
        edge_density=_merge(args, cfg, "edge_density", 0.2),
        coupling=_merge(args, cfg, "coupling", 0.9),
        noise_std=_merge(args, cfg, "noise_std", 0.1),
        n_diff_edges=_merge(args, cfg, "n_diff_edges", 8),
        seed=_merge(args, cfg, "seed", 0))
    out = _out_dir(args, cfg)
    result = data.synth_generate(spec)
    manifest = data.write_dataset(result.series, out)
    planted = data.write_planted(result, out)
    print(f"wrote {manifest} ({len(result.series)} subjects) and {planted}")
    return EXIT_OK


def _load_manifest(args, cfg, config: TrainConfig):
    manifest = _merge(args, cfg, "manifest", None)
    if not manifest:
        raise DataError("a manifest is required (--manifest or config)")
    z = max(config.window, _merge(args, cfg, "n_timepoints", data.DEFAULT_TIMEPOINTS))
    return data.load_dataset(manifest, n_timepoints=z)


def cmd_train(args, cfg) -> int:
    config = build_train_config(args, cfg)
    dataset = _load_manifest(args, cfg, config)
    out = _out_dir(args, cfg)
    labels = np.array([s.label for s in dataset])
    rng = data.substream(config.seed, "folds")
    val_idx: list = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        n_val = max(1, int(round(config.validation_fraction * len(members))))
        val_idx.extend(int(i) for i in rng.choice(members, size=n_val, replace=False))
    val_set = [dataset[i] for i in sorted(val_idx)]
    train_set = [dataset[i] for i in range(len(dataset)) if i not in set(val_idx)]
    model, history = train_eval.train(config, train_set, val_set)
    stgc_net.save_checkpoint(model, os.path.join(out, "checkpoint.npz"))
    train_eval.write_history(history, os.path.join(out, "history.csv"))
    stgc_net.export_adjacency(model, os.path.join(out, "adjacency.json"))
    print(f"trained {len(history)} epochs; best val_acc="
          f"{max(h.val_acc for h in history):.3f}; wrote {out}/checkpoint.npz")
    return EXIT_OK


def cmd_crossval(args, cfg) -> int:
    config = build_train_config(args, cfg)
    dataset = _load_manifest(args, cfg, config)
    out = _out_dir(args, cfg)
    report, models, histories = train_eval.crossval(config, dataset,
                                                    jobs=args.jobs or 1)
    train_eval.write_metrics(report, config, os.path.join(out, "metrics.json"),
                             version=__version__)
    for f, (model, history) in enumerate(zip(models, histories)):
        fold_dir = os.path.join(out, f"fold{f}")
        os.makedirs(fold_dir, exist_ok=True)
        stgc_net.save_checkpoint(model, os.path.join(fold_dir, "checkpoint.npz"))
        train_eval.write_history(history, os.path.join(fold_dir, "history.csv"))
        stgc_net.export_adjacency(model, os.path.join(fold_dir, "adjacency.json"))
        interpret.write_salience(interpret.salience_scores(model), fold_dir)
    for key in ("ACC", "AUC", "SEN", "SPE"):
        print(report.format_row(key))
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    ckpt = _merge(args, cfg, "checkpoint", None)
    if not ckpt:
        raise DataError("a checkpoint is required (--checkpoint or config)")
    model = stgc_net.load_checkpoint(ckpt)
    stride = args.eval_stride or cfg.get("eval_stride", 1)
    manifest = _merge(args, cfg, "manifest", None)
    if not manifest:
        raise DataError("a manifest is required (--manifest or config)")
    z = max(model.hyper.window,
            _merge(args, cfg, "n_timepoints", data.DEFAULT_TIMEPOINTS))
    dataset = data.load_dataset(manifest, n_timepoints=z)
    out = _out_dir(args, cfg)
    path = os.path.join(out, "predictions.csv")
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "probability", "label"])
        samples = _merge(args, cfg, "eval_graph_samples",
                         train_eval.TrainConfig().eval_graph_samples)
        for s in dataset:
            prob = train_eval.predict_subject(model, s, model.hyper.window,
                                              stride, samples)
            writer.writerow([s.subject_id, f"{prob:.10f}", s.label])
    os.replace(tmp, path)
    print(f"wrote {path} ({len(dataset)} subjects)")
    return EXIT_OK


def cmd_interpret(args, cfg) -> int:
    ckpt = _merge(args, cfg, "checkpoint", None)
    if not ckpt:
        raise DataError("a checkpoint is required (--checkpoint or config)")
    model = stgc_net.load_checkpoint(ckpt)
    out = _out_dir(args, cfg)
    report = interpret.salience_scores(model, sum_rows=args.sum_rows)
    if report.degenerate:
        print("warning: degenerate salience (all-equal contributions); "
              "scores are all zero", file=sys.stderr)
    interpret.write_salience(report, out)
    for i, name, score in interpret.top_fraction(report, args.fraction):
        print(f"{name:24s} {i + 1:4d} {score:.3f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    seed = _merge(args, cfg, "seed", 0)
    report = run_gradcheck(seed=seed, precision=args.precision,
                           break_st=args.break_st, verbose_print=print)
    print(f"tolerance {report.tolerance:g}: "
          f"{'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "predict": cmd_predict,
    "interpret": cmd_interpret,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = read_config(args.config) if args.config else {}
        return _COMMANDS[args.command](args, cfg)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
