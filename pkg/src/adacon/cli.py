"""Command-line front end: train, compare, gradcheck, eval, plotdata, gen.

A run is fully described by a flat key=value config; flags win over the
config file, which wins over defaults. The resolved config is echoed into
the output directory before any work starts, and re-feeding that file
reproduces the identical run.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from adacon import data as datamod
from adacon import evalviz
from adacon.ecdf import fit_ecdf
from adacon.losses import gradcheck_random
from adacon.model import forward, load_checkpoint, save_checkpoint
from adacon.trainer import make_config, run_training

OUT_ROOT_ENV = "ADACON_OUT"

_CONVERTERS = {
    "dataset": str, "dataset_csv": str, "n": int, "dim": int, "noise": float,
    "data_seed": int, "split_seed": int,
    "regression_kind": str, "contrastive_kind": str, "huber_delta": float,
    "gamma_reg": float, "gamma_con": lambda v: v if v == "auto" else float(v),
    "temperature": float, "base_batch_size": int, "augment_multiple": int,
    "lr": float, "momentum": float, "weight_decay": float, "iterations": int,
    "milestones": lambda v: tuple(int(x) for x in v.split(",") if x),
    "sigma_aug": float, "seed": int, "mode": str, "eval_every": int,
    "hidden": lambda v: tuple(int(x) for x in v.split(",") if x),
    "proj_dim": int, "activation": str,
}

DEFAULTS = {
    "dataset": "ring", "dataset_csv": "", "n": 2000, "dim": 16, "noise": 0.05,
    "data_seed": 1, "split_seed": 1,
    "regression_kind": "l1", "contrastive_kind": "adacon", "huber_delta": 0.05,
    "gamma_reg": 1.0, "gamma_con": "auto", "temperature": 10.0,
    "base_batch_size": 8, "augment_multiple": 8,
    "lr": 1e-2, "momentum": 0.9, "weight_decay": 1e-4, "iterations": 6000,
    "milestones": (3000, 4500), "sigma_aug": 0.1, "seed": 0,
    "mode": "multi-task", "eval_every": 250,
    "hidden": (64, 64), "proj_dim": 128, "activation": "relu",
}


class UsageError(Exception):
    pass


def _parse_kv_line(line, where):
    line = line.strip()
    if not line or line.startswith("#"):
        return None
    if "=" not in line:
        raise UsageError(f"{where}: expected key=value, got {line!r}")
    key, _, value = line.partition("=")
    key = key.strip()
    if key not in _CONVERTERS:
        raise UsageError(f"{where}: unknown config key {key!r}")
    try:
        return key, _CONVERTERS[key](value.strip())
    except ValueError:
        raise UsageError(f"{where}: bad value for {key}: {value!r}") from None


def resolve_config(config_path=None, overrides=()):
    """defaults <- config file <- --set overrides, fully typed."""
    cfg = dict(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        for raw in path.read_text(encoding="utf-8").splitlines():
            parsed = _parse_kv_line(raw, str(path))
            if parsed:
                cfg[parsed[0]] = parsed[1]
    for item in overrides:
        parsed = _parse_kv_line(item, "--set")
        if parsed:
            cfg[parsed[0]] = parsed[1]
    return cfg


def echo_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key in DEFAULTS:
            value = cfg[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={value}\n")


def _out_dir(args, default_id):
    root = args.out or os.environ.get(OUT_ROOT_ENV, "runs")
    run_id = args.run_id or default_id
    out = Path(root) / run_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_splits(cfg):
    if cfg["dataset_csv"]:
        full = datamod.load_csv(cfg["dataset_csv"])
    else:
        full = datamod.generate_dataset(cfg["dataset"], cfg["n"], cfg["dim"],
                                        cfg["noise"], cfg["data_seed"])
    return datamod.split_dataset(full, cfg["split_seed"])


def _train_config(cfg, **extra):
    keys = ("regression_kind", "contrastive_kind", "huber_delta", "gamma_reg",
            "gamma_con", "temperature", "base_batch_size", "augment_multiple",
            "lr", "momentum", "weight_decay", "iterations", "milestones",
            "sigma_aug", "seed", "mode", "eval_every", "hidden", "proj_dim",
            "activation")
    kwargs = {k: cfg[k] for k in keys}
    kwargs.update(extra)
    return make_config(**kwargs)


def _evaluate(params, dataset, table, scatter_seed=0):
    """Test metrics plus the similarity-vs-rank-distance diagnostic."""
    batch, preds, _ = forward(params, dataset.features, dataset.labels)
    report = evalviz.regression_metrics(preds, dataset.labels)
    diag = evalviz.pairwise_scatter(batch, table, seed=scatter_seed)
    return report, diag, batch


def _write_kv(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in mapping.items():
            fh.write(f"{k}={v}\n")


def _run_one(cfg, out_dir):
    train, val, test = _build_splits(cfg)
    record, params = run_training(_train_config(cfg), train, val)
    table = fit_ecdf(train.labels)
    report, diag, _ = _evaluate(params, test, table)
    save_checkpoint(params, out_dir / "best.bin")
    record.export_csv(out_dir / "record.csv")
    summary = dict(report.as_dict())
    summary["spearman_rho"] = ("undefined" if diag.spearman_rho is None
                               else diag.spearman_rho)
    record.export_summary(out_dir / "summary.kv", extra=summary)
    return record, params, report, diag


def cmd_train(args):
    cfg = resolve_config(args.config, args.set or ())
    out = _out_dir(args, f"train-{cfg['contrastive_kind']}-seed{cfg['seed']}")
    echo_config(cfg, out / "config.cfg")
    record, _, report, _ = _run_one(cfg, out)
    status = "aborted" if record.aborted else "done"
    print(f"{status} test_mae={report.mae:.6g} rmse={report.rmse:.6g} "
          f"gamma_con={record.resolved_gamma_con}")
    return 0


def cmd_compare(args):
    cfg = resolve_config(args.config, args.set or ())
    losses = [kind.strip() for kind in args.losses.split(",") if kind.strip()]
    out = _out_dir(args, "compare")
    echo_config(cfg, out / "config.cfg")
    rows = []
    for kind in losses:
        for seed in range(args.seeds):
            run_cfg = dict(cfg)
            run_cfg["contrastive_kind"] = kind
            run_cfg["seed"] = seed
            sub = out / f"{kind}-seed{seed}"
            sub.mkdir(exist_ok=True)
            echo_config(run_cfg, sub / "config.cfg")
            _, _, report, diag = _run_one(run_cfg, sub)
            rho = diag.spearman_rho
            rows.append((kind, seed, report.mae, report.rmse, report.r2, rho))
            print(f"{kind} seed={seed} mae={report.mae:.6g}")
    with open(out / "compare.csv", "w", encoding="utf-8") as fh:
        fh.write("loss,seed,mae,rmse,r2,spearman_rho\n")
        for kind, seed, mae, rmse, r2, rho in rows:
            fh.write(f"{kind},{seed},{mae!r},{rmse!r},{r2!r},{rho!r}\n")
        for kind in losses:
            maes = [r[2] for r in rows if r[0] == kind]
            fh.write(f"{kind},median,{statistics.median(maes)!r},,,\n")
            print(f"{kind} median_mae={statistics.median(maes):.6g}")
    return 0


def cmd_gradcheck(args):
    err = gradcheck_random(args.loss, args.trials, args.seed, step=args.step)
    print(f"max relative gradient error: {err:.3e}")
    return 0 if err < args.tol else 2


def cmd_eval(args):
    cfg = resolve_config(args.config, args.set or ())
    params = load_checkpoint(args.checkpoint)
    train, _, test = _build_splits(cfg)
    table = fit_ecdf(train.labels)
    report, diag, _ = _evaluate(params, test, table)
    out = _out_dir(args, "eval")
    summary = dict(report.as_dict())
    summary["spearman_rho"] = ("undefined" if diag.spearman_rho is None
                               else diag.spearman_rho)
    _write_kv(out / "metrics.kv", summary)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_plotdata(args):
    cfg = resolve_config(args.config, args.set or ())
    params = load_checkpoint(args.checkpoint)
    train, _, test = _build_splits(cfg)
    table = fit_ecdf(train.labels)
    _, diag, batch = _evaluate(params, test, table)
    out = _out_dir(args, "plotdata")
    evalviz.export_scatter_csv(diag, out / "scatter.csv")
    evalviz.export_layout_csv(evalviz.angular_layout(batch), out / "layout.csv")
    print(f"wrote {out / 'scatter.csv'} and {out / 'layout.csv'}")
    return 0


def cmd_gen(args):
    cfg = resolve_config(args.config, args.set or ())
    ds = datamod.generate_dataset(cfg["dataset"], cfg["n"], cfg["dim"],
                                  cfg["noise"], cfg["data_seed"])
    datamod.save_csv(ds, args.path)
    print(f"wrote {args.path} ({ds.n} rows, {ds.dim} features)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adacon",
        description="Adaptive-margin contrastive learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", help=f"output root (default ${OUT_ROOT_ENV} or ./runs)")
        p.add_argument("--run-id", help="run directory name")

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="multi-loss multi-seed sweep")
    common(p)
    p.add_argument("--losses", default="adacon,supcon,none")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--dataset", help="dataset kind shortcut")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--loss", required=True,
                   choices=["adacon", "supcon", "npair", "triplet",
                            "l1", "mse", "huber"])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plotdata", help="export scatter/layout CSVs")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("gen", help="write a synthetic dataset CSV")
    common(p)
    p.add_argument("path")
    p.set_defaults(func=cmd_gen)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if getattr(args, "dataset", None) and args.command == "compare":
        args.set = (args.set or []) + [f"dataset={args.dataset}"]
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
