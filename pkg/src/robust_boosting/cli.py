"""Command-line entry point: train, certify, attack, eval and sweep."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import THREADS_ENV, backend_name, set_num_threads
from .attack import AttackConfig, cube_attack_batch, min_radius_estimate
from .certify import MultiClassModel, certified_margins, evaluate
from .dataset import load_dataset, prepare_task
from .errors import RobustBoostingError
from .model_io import export_report, read_model_file, save_model
from .stumps import MODES, StumpEnsemble, min_perturbation_stumps
from .training import MODEL_KINDS, TrainConfig, train

log = logging.getLogger("robust_boosting")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing

def _data_args(p, required=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=required, help="training csv or libsvm file (.gz ok)")
    g.add_argument("--format", choices=("csv", "libsvm"), help="default: from the file name")
    g.add_argument("--label-column", default="label")
    g.add_argument("--n-features", type=int, help="libsvm width (default: largest index)")
    g.add_argument("--test-data", help="separate test file; otherwise a split of --data")
    g.add_argument("--positive-class", default=None,
                   help="class id mapped to +1, or 'one-vs-all' (default: largest label)")
    g.add_argument("--val-frac", type=float, default=0.2)
    g.add_argument("--test-frac", type=float, default=0.2)
    g.add_argument("--max-train", type=int, help="subsample the training pool to this size")
    g.add_argument("--norm-bounds", type=float, nargs=2, metavar=("LO", "HI"),
                   help="fixed raw feature range instead of train min/max")
    g.add_argument("--seed", type=int, default=0)


def _train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--model", dest="model_kind", choices=MODEL_KINDS, default="trees")
    g.add_argument("--mode", choices=MODES, default="robust_bound")
    g.add_argument("--rounds", type=int, default=100)
    g.add_argument("--depth", type=int, default=4)
    g.add_argument("--min-samples-leaf", type=int, default=10)
    g.add_argument("--w-max", type=float, default=1.0)
    g.add_argument("--shrinkage", type=float, default=0.2)
    g.add_argument("--loss", choices=("exponential", "logistic"), default="exponential")
    g.add_argument("--no-prune", action="store_true")


def _eval_args(p, eps_required=False):
    p.add_argument("--model-file", "-m", required=True)
    p.add_argument("--eps", type=float, required=eps_required,
                   help="default: the radius the model was trained for")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--data", help="evaluate on this file instead of the stored split")
    p.add_argument("--limit", type=int, help="only the first N points")


def _attack_args(p, iters=20):
    p.add_argument("--attack-iters", type=int, default=iters)
    p.add_argument("--attack-p", type=float, default=0.5)
    p.add_argument("--attack-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="robust-boosting",
                                  description="Provably robust boosted stumps and trees.")
    top.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int,
                        help=f"worker thread cap (default: ${THREADS_ENV} or all cores)")
    common.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model and write a model file")
    _data_args(p)
    _train_args(p)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--out", "-o", required=True, help="model file to write")
    _attack_args(p, iters=10)

    p = sub.add_parser("eval", parents=[common], help="TE / LRTE / URTE report and CSVs")
    _eval_args(p)
    _attack_args(p)
    p.add_argument("--exact", action="store_true", help="exact RTE for trees via the cell oracle")
    p.add_argument("--out-dir", help="write metrics.csv, points.csv, thresholds.csv, ...")

    p = sub.add_parser("certify", parents=[common], help="per-point certificates")
    _eval_args(p)
    p.add_argument("--radius", action="store_true",
                   help="also print the minimal adversarial radius (stumps only)")

    p = sub.add_parser("attack", parents=[common], help="cube attack per point")
    _eval_args(p)
    _attack_args(p)
    p.add_argument("--radius", action="store_true", help="estimate the radius by bisection")
    p.add_argument("--eps-max", type=float, default=1.0)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate over several eps")
    _data_args(p)
    _train_args(p)
    _attack_args(p)
    p.add_argument("--eps-grid", type=float, nargs="+", required=True)
    p.add_argument("--adv-iters", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    return top


# ------------------------------------------------------------------ helpers

def _data_config(args) -> dict:
    pc = args.positive_class
    return {"data": args.data, "format": args.format, "label_column": args.label_column,
            "n_features": args.n_features, "test_data": args.test_data, "positive_class": pc,
            "val_frac": args.val_frac, "test_frac": args.test_frac, "max_train": args.max_train,
            "norm_bounds": args.norm_bounds, "seed": args.seed}


def _load_task(dc: dict, eps: float):
    fmt, lc, nf = dc.get("format"), dc.get("label_column", "label"), dc.get("n_features")
    raw = load_dataset(dc["data"], fmt, lc, nf)
    test = None
    if dc.get("test_data"):
        test = load_dataset(dc["test_data"], fmt, lc, nf or raw.d)
    pc = dc.get("positive_class")
    if pc is None:
        pc = int(np.max(raw.labels))
    elif pc not in ("one-vs-all", "one_vs_all"):
        try:
            pc = int(pc)
        except ValueError:
            raise UsageError(f"--positive-class must be an integer or 'one-vs-all', got {pc!r}")
    norm = None
    if dc.get("norm_bounds"):
        lo, hi = dc["norm_bounds"]
        norm = np.vstack((np.full(raw.d, lo), np.full(raw.d, hi)))
    return prepare_task(raw, pc, eps=eps, val_frac=dc["val_frac"], seed=dc["seed"], test=test,
                        test_frac=dc["test_frac"], norm_stats=norm, max_train=dc.get("max_train"))


def _train_config(args, eps) -> TrainConfig:
    try:
        return TrainConfig(model_kind=args.model_kind, mode=args.mode, eps=eps,
                           n_rounds=args.rounds, max_depth=args.depth,
                           min_samples_leaf=args.min_samples_leaf, w_max=args.w_max,
                           shrinkage=args.shrinkage, loss_kind=args.loss, seed=args.seed,
                           val_frac=args.val_frac, prune=not args.no_prune,
                           adv_iters=getattr(args, "adv_iters", args.attack_iters),
                           adv_flip_prob=args.attack_p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _labels_for(model, task, split):
    if isinstance(model, MultiClassModel):
        return task.labels(split)
    return task.split(split)[1]


def _eval_data(args, model, meta):
    """(X, y, eps) for eval-like commands."""
    eps = args.eps if args.eps is not None else _members_eps(model)
    if eps < 0:
        raise UsageError("--eps must be >= 0")
    dc = dict(meta.get("data_config") or {})
    if args.data:
        # a plain file: normalise it with the stored training statistics
        raw = load_dataset(args.data, dc.get("format"), dc.get("label_column", "label"),
                           model.n_features)
        from .dataset import normalize
        stats = meta.get("norm_stats")
        if stats is None:
            log.warning("model has no stored normalisation; using the min/max of %s", args.data)
            stats = np.vstack((raw.features.min(axis=0), raw.features.max(axis=0)))
        X = normalize(raw.features, np.asarray(stats, dtype=float))
        if isinstance(model, MultiClassModel):
            y = raw.labels
        else:
            pos = (meta.get("classes_encoded") or [int(np.max(raw.labels))])[0]
            y = np.where(raw.labels == pos, 1.0, -1.0)
    else:
        if not dc:
            raise RobustBoostingError("model file has no stored data config; pass --data")
        task = _load_task(dc, eps)
        X = task.split(args.split)[0]
        y = _labels_for(model, task, args.split)
    if X.shape[1] != model.n_features:
        raise RobustBoostingError(f"data has {X.shape[1]} features, model expects "
                                  f"{model.n_features}")
    if args.limit is not None:
        X, y = X[:args.limit], y[:args.limit]
    return X, y, eps


def _members_eps(model):
    m = model.per_class[0] if isinstance(model, MultiClassModel) else model
    return m.eps_trained


def _attack_cfg(args):
    try:
        return AttackConfig(n_iters=args.attack_iters, flip_prob=args.attack_p,
                            seed=args.attack_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = _train_config(args, args.eps)
    dc = _data_config(args)
    log.info("config %s", json.dumps({"train": cfg.as_dict(), "data": dc,
                                      "backend": backend_name()}, sort_keys=True))
    task = _load_task(dc, cfg.eps)
    log.info("train=%d val=%d test=%d d=%d", len(task.X_train), len(task.X_val),
             len(task.X_test), task.d)

    def progress(r, info):
        if r % 10 == 0:
            log.debug("round %d objective %.6g", r, info.objective_after)

    res = train(cfg, task, on_round=progress)
    meta = {"train_config": cfg.as_dict(), "data_config": dc,
            "norm_stats": task.norm_stats, "classes_encoded": list(task.classes),
            "best_round": res.best_round}
    save_model(res.model, args.out, meta)
    log.info("kept %s rounds, %.1fs, wrote %s", res.best_round, res.seconds, args.out)
    return 0


def cmd_eval(args) -> int:
    model, meta = read_model_file(args.model_file)
    X, y, eps = _eval_data(args, model, meta)
    cfg = _attack_cfg(args)
    log.info("config %s", json.dumps({"eval": {"model": args.model_file, "eps": eps,
                                               "split": args.split, "attack": vars(cfg),
                                               "exact": args.exact}}, sort_keys=True))
    rep = evaluate(model, X, y, eps, cfg, want_exact=args.exact)
    _emit({**rep.summary(), "wall_times": rep.wall_times})
    if args.out_dir:
        export_report(model, rep, args.out_dir)
    return 0


def cmd_certify(args) -> int:
    model, meta = read_model_file(args.model_file)
    X, y, eps = _eval_data(args, model, meta)
    log.info("config %s", json.dumps({"certify": {"model": args.model_file, "eps": eps,
                                                  "split": args.split}}, sort_keys=True))
    margins = certified_margins(model, X, y, eps)
    exact = isinstance(model, StumpEnsemble)
    for i in range(X.shape[0]):
        row = {"index": i, "label": _plain(y[i]), "margin": float(margins[i]),
               "robust": bool(margins[i] > 0), "exact": exact}
        if args.radius:
            if not exact:
                raise UsageError("--radius is only available for binary stump models")
            r, _ = min_perturbation_stumps(model, X[i], int(y[i]))
            row["radius"] = None if math.isinf(r) else r
        _emit(row)
    return 0


def cmd_attack(args) -> int:
    model, meta = read_model_file(args.model_file)
    X, y, eps = _eval_data(args, model, meta)
    cfg = _attack_cfg(args)
    log.info("config %s", json.dumps({"attack": {"model": args.model_file, "eps": eps,
                                                 "cfg": vars(cfg), "radius": args.radius}},
                                     sort_keys=True))
    deltas, margins, queries = cube_attack_batch(model, X, y, eps, cfg)
    for i in range(X.shape[0]):
        row = {"index": i, "label": _plain(y[i]), "margin": float(margins[i]),
               "success": bool(margins[i] <= 0), "queries": int(queries[i])}
        if args.radius:
            r = min_radius_estimate(model, X[i], _plain(y[i]), args.eps_max, cfg)
            row["radius"] = None if math.isinf(r) else r
        _emit(row)
    return 0


def cmd_sweep(args) -> int:
    dc = _data_config(args)
    rows = []
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    acfg = _attack_cfg(args)
    for eps in args.eps_grid:
        cfg = _train_config(args, eps)
        log.info("config %s", json.dumps({"sweep": cfg.as_dict(), "data": dc}, sort_keys=True))
        task = _load_task(dc, eps)
        res = train(cfg, task)
        model = res.model
        y = task.labels_test if task.one_vs_all else task.y_test
        rep = evaluate(model, task.X_test, y, eps, acfg)
        rows.append((eps, rep.te, rep.lrte, rep.urte))
        _emit({"eps": eps, **rep.summary()})
        save_model(model, out / f"model-eps{eps:g}.json",
                   {"train_config": cfg.as_dict(), "data_config": dc,
                    "norm_stats": task.norm_stats, "classes_encoded": list(task.classes)})
    export_report(model, None, out, sweep_rows=rows)
    return 0


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "certify": cmd_certify,
            "attack": cmd_attack, "sweep": cmd_sweep}


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        set_num_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (RobustBoostingError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
