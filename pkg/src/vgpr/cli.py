"""Command-line interface: simulate, fit, predict and benchmark-kl."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (DataError, Dataset, SimulationSpec, load_covariates, load_csv, paper_theta,
                   save_csv, simulate, standardize, train_oos_split)
from .kernel import KERNEL_FAMILIES, Hyperparameters
from .oracle import DENSE_LIMIT, benchmark_kl, figure1_spec, summarize_kl, write_kl_csv
from .optimizer import write_trace
from .ordering import STRATEGIES
from .predict import destandardize, predict, write_predictions
from .selection import VGPRConfig, stopping_record, vgpr_path, write_path_csv, write_relevance_csv

SCHEMA_VERSION = 1
log = logging.getLogger("vgpr")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def nonnegative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {v}")
    return v


def int_list(text: str):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return vals


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> None:
    theta = paper_theta(args.d, args.kernel)
    mode = "lhs" if args.mode == "indep" else "normal"
    rho = args.rho if args.mode == "dep" else 0.0
    ds = simulate(SimulationSpec(args.n, args.d, theta, mode, rho, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out / "data.csv", "y")
    truth = {
        "theta_true": theta.to_dict(),
        "true_support": [int(l) for l in np.flatnonzero(theta.sr > 0)],
        "columns": list(ds.columns),
        "n": args.n, "d": args.d, "mode": args.mode, "rho": rho, "seed": args.seed,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    print(f"wrote {out / 'data.csv'} and {out / 'truth.json'}")


# ---------------------------------------------------------------- model files

def build_model(ds: Dataset, theta: Hyperparameters, zeta, config: VGPRConfig) -> dict:
    """Everything needed to predict: fitted parameters, scaling and conditioning data."""
    sel = sorted(int(l) for l in zeta)
    return {
        "schema_version": SCHEMA_VERSION,
        "response": ds.response,
        "columns": list(ds.columns),
        "selected": sel,
        "selected_columns": [ds.columns[l] for l in sel],
        "theta": theta.to_dict(),
        "standardization": {
            "col_means": [float(v) for v in ds.col_means],
            "col_sds": [float(v) for v in ds.col_sds],
            "y_mean": ds.y_mean, "y_sd": ds.y_sd,
            "constant_cols": list(ds.constant_cols),
        },
        "config": {"m": config.m, "k": config.k, "gamma": config.gamma, "kappa": config.kappa,
                   "batch": config.batch_size or 0, "seed": config.seed,
                   "kernel": config.kernel_family},
        "train_X": ds.X[:, sel].tolist(),
        "train_y": ds.y.tolist(),
    }


def save_model(model: dict, path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(model) + "\n")


def load_model(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    model = json.loads(path.read_text())
    if model.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {model.get('schema_version')!r}")
    return model


def model_predict(model: dict, X_raw: np.ndarray, m: Optional[int] = None, latent: bool = False):
    """Predict on the original response scale from raw covariates (selected columns only)."""
    sel = model["selected"]
    st = model["standardization"]
    theta_full = Hyperparameters.from_dict(model["theta"])
    y = np.asarray(model["train_y"], dtype=float)
    if sel:
        means = np.asarray(st["col_means"])[sel]
        sds = np.asarray(st["col_sds"])[sel]
        Xtr = np.asarray(model["train_X"], dtype=float).reshape(len(y), len(sel))
        Xte = (np.asarray(X_raw, dtype=float) - means) / sds
        theta = Hyperparameters(theta_full.sigma2, theta_full.sr[sel], theta_full.tau2,
                                theta_full.kernel_family)
    else:
        # constant kernel: a single zero column carries no information
        Xtr = np.zeros((len(y), 1))
        Xte = np.zeros((np.asarray(X_raw).shape[0], 1))
        theta = Hyperparameters(theta_full.sigma2, [0.0], theta_full.tau2, theta_full.kernel_family)
    train = Dataset(Xtr, y)
    mean, var = predict(train, theta, Xte, m or model["config"]["m"], True, latent=latent)
    mean = mean * st["y_sd"] + st["y_mean"]
    return mean, var * st["y_sd"] ** 2


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> None:
    raw = load_csv(args.data, args.response)
    if raw.n < 8:
        raise DataError(f"need at least 8 rows, got {raw.n}")
    ds = standardize(raw)
    train, oos = train_oos_split(ds, args.seed)
    if args.batch > train.n:
        raise UsageError(f"--batch {args.batch} exceeds the training size {train.n}")
    kappa = args.kappa if args.kappa is not None else (2 if args.batch else 0)
    config = VGPRConfig(m=args.m, k=args.k, gamma=args.gamma, kappa=kappa,
                        batch_size=args.batch or None, seed=args.seed, max_iter=args.max_iter,
                        kernel_family=args.kernel)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    trace = []
    records = vgpr_path(train, oos, config, trace)
    best = stopping_record(records)
    model = build_model(ds, best.theta, best.zeta, config)
    model["oos_rmse"] = best.oos_rmse
    model["lambda"] = best.lam
    save_model(model, out / "model.json")
    write_path_csv(records, out / "path.csv")
    write_relevance_csv(records, out / "relevance_path.csv", ds.columns)
    write_trace(trace, out / "trace.csv")
    names = ", ".join(ds.columns[l] for l in sorted(best.zeta)) or "(none)"
    print(f"selected {len(best.zeta)} covariate(s): {names}; OOS RMSE {best.oos_rmse:.5f} "
          f"(standardized); {time.perf_counter() - t0:.1f} s")


# ---------------------------------------------------------------- predict

def cmd_predict(args) -> None:
    model = load_model(args.model)
    X = load_covariates(args.data, model["selected_columns"])
    mean, var = model_predict(model, X, args.m, args.latent)
    write_predictions(args.out, mean, var)
    print(f"wrote {len(mean)} predictions to {args.out}")


# ---------------------------------------------------------------- benchmark-kl

def cmd_benchmark_kl(args) -> None:
    if args.n > DENSE_LIMIT:
        raise UsageError(f"--n {args.n} exceeds the dense limit {DENSE_LIMIT}")
    m_list = []
    for m in args.m_list:
        if m >= args.n:
            log.warning("m=%d clipped to n-1=%d", m, args.n - 1)
            m = args.n - 1
        m_list.append(m)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategy {bad[0]!r}; choose from {', '.join(STRATEGIES)}")
    rows = benchmark_kl(figure1_spec(args.n, args.d, args.seed), m_list, strategies, args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kl_csv(rows, out / "kl_benchmark.csv")
    for (s, m), kl in sorted(summarize_kl(rows).items()):
        print(f"{s:12s} m={m:4d} mean KL {kl:.6g}")


# ---------------------------------------------------------------- entry point

def build_parser() -> Parser:
    p = Parser(prog="vgpr", description="Scaled-Vecchia GP regression with variable selection.")
    p.add_argument("--threads", type=positive_int, default=None, help="cap on BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("simulate", help="simulate a dataset with five true covariates")
    s.add_argument("--n", type=positive_int, default=2000)
    s.add_argument("--d", type=positive_int, default=20)
    s.add_argument("--mode", choices=("indep", "dep"), default="indep")
    s.add_argument("--rho", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kernel", choices=KERNEL_FAMILIES, default="matern25")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the regularization path and save the selected model")
    f.add_argument("--data", required=True)
    f.add_argument("--response", default="y")
    f.add_argument("--m", type=positive_int, default=100)
    f.add_argument("--k", type=positive_int, default=3)
    f.add_argument("--gamma", type=float, default=0.25)
    f.add_argument("--kappa", type=nonnegative_int, default=None,
                   help="adaptive penalty memory (default 0 full batch, 2 mini-batch)")
    f.add_argument("--batch", type=nonnegative_int, default=0, help="mini-batch size, 0 = full batch")
    f.add_argument("--max-iter", type=positive_int, default=None)
    f.add_argument("--kernel", choices=KERNEL_FAMILIES, default="matern25")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out-dir", default=".")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", help="predict at new covariates with a saved model")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--m", type=positive_int, default=None)
    q.add_argument("--latent", action="store_true", help="report noise-free variance")
    q.add_argument("--out", default="predictions.csv")
    q.set_defaults(func=cmd_predict)

    b = sub.add_parser("benchmark-kl", help="KL divergence of Vecchia approximations")
    b.add_argument("--n", type=positive_int, default=1000)
    b.add_argument("--d", type=positive_int, default=10)
    b.add_argument("--m-list", type=int_list, default=[5, 10, 20, 40])
    b.add_argument("--strategies", default="fic,unscaled-nn,scaled-nn")
    b.add_argument("--reps", type=positive_int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=".")
    b.set_defaults(func=cmd_benchmark_kl)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as a single line for scripts
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
