"""Command-line entry point: ``fit``, ``simulate``, ``predict``, ``cv`` and ``score``.

Exit codes: 0 success/converged, 1 input error, 2 numerical failure,
3 iteration limit reached (outputs are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import math
import os
import sys

import numpy as np

from . import io
from .coef import BMethod, estimate_b
from .io import InputError
from .metrics import ScoreReport, score
from .model import Hyperparams, ModelState, NotPositiveDefiniteError, compute_sufficient_stats
from .penalty import InclusionProbs
from .predict import CvPlan, PredictionTask, cross_validate, predict_conditional, \
    predict_unconditional, prediction_error
from .simulate import SETUPS, SimConfig, gen_dataset, replication_seed, run_replications, setup_config
from .solver import SolverConfig, fit

log = logging.getLogger("gcrf_ssl")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_MAXITER = 0, 1, 2, 3

HP_FIELDS = {f.name: f.type for f in dataclasses.fields(Hyperparams)}
SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)}
SIM_FIELDS = {f.name for f in dataclasses.fields(SimConfig)} - {"n", "seed"}
EXTRA_KEYS = {"nu0_scale", "b_method", "p_threshold", "center"}
DEFAULT_NU0_SCALE = 0.3


def _parse_scalar(key, value, kind):
    try:
        if kind == "int":
            return int(value)
        if kind == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise InputError(f"bad value for {key}: {value!r}") from None


def _kind(key):
    if key in ("max_outer_iters", "max_inner_iters", "p_threshold", "p", "q", "s_lambda", "s_theta",
               "continuation_steps"):
        return "int"
    if key == "center":
        return "bool"
    if key in ("b_method", "theta_method", "s_theta_scope", "signal_range"):
        return "str"
    return "float"


def check_keys(cfg: dict, allowed):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")


def resolve_hyperparams(cfg: dict, n, p, q, threshold=None) -> Hyperparams:
    """Hyperparameters from config values; unset spike scales follow ``nu0_scale / sqrt(n log(p+q))``."""
    kw = {k: _parse_scalar(k, v, _kind(k)) for k, v in cfg.items() if k in HP_FIELDS}
    scale = float(cfg.get("nu0_scale", DEFAULT_NU0_SCALE))
    if threshold is not None:
        kw["threshold_t"] = threshold
    try:
        if "nu0_theta" in kw and "nu0_lambda" in kw:
            return Hyperparams(**kw)
        return Hyperparams.scaled(n, p, q, spike=scale, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def resolve_solver(cfg: dict) -> SolverConfig:
    kw = {k: _parse_scalar(k, v, _kind(k)) for k, v in cfg.items() if k in SOLVER_FIELDS}
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _echo(hp: Hyperparams, solver: SolverConfig, extra: dict) -> dict:
    out = dataclasses.asdict(hp)
    out.update(dataclasses.asdict(solver))
    out.update(extra)
    return out


def _load_config(path):
    return io.read_config(path) if path else {}


def _setup_logging():
    level = os.environ.get("GCRF_SSL_LOG", "quiet").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_fit_outputs(out, state, probs, b, trace):
    io.write_matrix(os.path.join(out, "theta.csv"), state.theta)
    io.write_matrix(os.path.join(out, "lambda.csv"), state.lam)
    io.write_matrix(os.path.join(out, "b.csv"), b.b)
    io.write_matrix(os.path.join(out, "inclusion_theta.csv"), probs.p_theta)
    io.write_matrix(os.path.join(out, "inclusion_lambda.csv"), probs.p_lambda)
    io.write_table(os.path.join(out, "trace.csv"), ["outer_iter", "objective"],
                   [(i, float(v)) for i, v in enumerate(trace.objective_per_outer_iter)])


def cmd_fit(args) -> int:
    x = io.read_matrix(args.x, args.header)
    y = io.read_matrix(args.y, args.header)
    if x.shape[0] != y.shape[0]:
        raise InputError(f"row count mismatch: x has {x.shape[0]} rows, y has {y.shape[0]} rows")
    cfg = _load_config(args.config)
    check_keys(cfg, set(HP_FIELDS) | SOLVER_FIELDS | EXTRA_KEYS)
    center = _parse_scalar("center", cfg.get("center", "false"), "bool")
    stats = compute_sufficient_stats(x, y, center=center)
    hp = resolve_hyperparams(cfg, *x.shape[:1], y.shape[1], x.shape[1], args.threshold)
    solver = resolve_solver(cfg)
    b_method = cfg.get("b_method", "auto")
    p_threshold = _parse_scalar("p_threshold", cfg.get("p_threshold", "100"), "int")

    state, probs, trace = fit(stats, hp, solver)
    if trace.stalled and not trace.step_sizes:
        log.error("line search stalled before any progress")
        return EXIT_NUMERICAL
    method = None if b_method == "auto" else BMethod(b_method)
    b = estimate_b(state, x, y, method=method, p_threshold=p_threshold)

    out = io.ensure_dir(args.out)
    _write_fit_outputs(out, state, probs, b, trace)
    io.write_config(os.path.join(out, "config.resolved"), _echo(hp, solver, {
        "b_method": b.method.value, "p_threshold": p_threshold, "center": center,
        "x": args.x, "y": args.y, "header": args.header,
    }))
    io.write_config(os.path.join(out, "summary.txt"), {
        "converged": trace.converged, "outer_iters": trace.outer_iters_used,
        "inner_iters": trace.inner_iters_used, "stalled": trace.stalled,
        "skipped_coords": trace.skipped_coords, "start": trace.start,
        "final_objective": float(trace.objective_per_outer_iter[-1]),
    })
    return EXIT_OK if trace.converged else EXIT_MAXITER


def _sim_config(args, cfg, n, seed) -> SimConfig:
    sim_kw = {}
    for k, v in cfg.items():
        if k not in SIM_FIELDS:
            continue
        if k == "signal_range":
            parts = v.split(",")
            if len(parts) != 2:
                raise InputError(f"signal_range needs lo,hi, got {v!r}")
            sim_kw[k] = tuple(_parse_scalar(k, s, "float") for s in parts)
        else:
            sim_kw[k] = _parse_scalar(k, v, _kind(k))
    try:
        if args.setup:
            return setup_config(args.setup, n=n, seed=seed, **sim_kw)
        return SimConfig(n=n, seed=seed, **sim_kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _parse_int_list(text, name):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--{name} expects comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise InputError(f"--{name} values must be positive integers")
    return vals


METRICS = [f.name for f in dataclasses.fields(ScoreReport)]


def cmd_simulate(args) -> int:
    if args.setup_name and args.setup and args.setup_name != args.setup:
        raise InputError(f"conflicting setups {args.setup_name!r} and {args.setup!r}")
    args.setup = args.setup or args.setup_name
    if args.reps < 1:
        raise InputError("--reps must be at least 1")
    cfg = _load_config(args.config)
    check_keys(cfg, set(HP_FIELDS) | SOLVER_FIELDS | EXTRA_KEYS | SIM_FIELDS | {"fix_truth"})
    if not args.setup and not (set(cfg) & SIM_FIELDS):
        raise InputError(f"need --setup (one of {', '.join(sorted(SETUPS))}) or simulation keys in --config")
    fix_truth = _parse_scalar("fix_truth", cfg.get("fix_truth", "false"), "bool")
    solver = resolve_solver(cfg)
    out = io.ensure_dir(args.out)
    rows, agg_rows = [], []
    echo = {}
    for n in _parse_int_list(args.n, "n"):
        sim = _sim_config(args, cfg, n, args.seed)
        hp = resolve_hyperparams(cfg, n, sim.p, sim.q, args.threshold)
        echo.update({f"sim.{k}": _echo_value(v) for k, v in dataclasses.asdict(sim).items() if k != "n"})
        echo[f"n{n}.nu0_theta"] = hp.nu0_theta
        echo[f"n{n}.nu0_lambda"] = hp.nu0_lambda
        if args.export_data:
            _export_datasets(os.path.join(out, "data"), sim, args.reps)
        agg = run_replications(sim, hp, solver, reps=args.reps, jobs=args.jobs, fix_truth=fix_truth)
        for r in agg.results:
            rows.append([args.setup or "custom", n, r.rep, r.seed, r.converged, r.outer_iters]
                        + [getattr(r.report, m) for m in METRICS])
        mean, se = agg.mean(), agg.stderr()
        agg_rows.append([args.setup or "custom", n, args.reps]
                        + [mean[m] for m in METRICS] + [se[m] for m in METRICS])
        log.info("n=%d: %s", n, mean)
    io.write_table(os.path.join(out, "scores.csv"),
                   ["setup", "n", "rep", "seed", "converged", "outer_iters"] + METRICS, rows)
    io.write_table(os.path.join(out, "aggregate.csv"),
                   ["setup", "n", "reps"] + [f"mean_{m}" for m in METRICS] + [f"se_{m}" for m in METRICS],
                   agg_rows)
    base = {k: v for k, v in dataclasses.asdict(hp).items() if not k.startswith("nu0_")}
    base.update(dataclasses.asdict(solver))
    base.update(echo)
    base.update({"setup": args.setup or "custom", "n": args.n, "reps": args.reps, "seed": args.seed,
                 "fix_truth": fix_truth, "nu0_scale": float(cfg.get("nu0_scale", DEFAULT_NU0_SCALE))})
    io.write_config(os.path.join(out, "config.resolved"), base)
    return EXIT_OK


def _echo_value(v):
    if hasattr(v, "value"):
        return v.value
    if isinstance(v, tuple):
        return ",".join(io.format_value(e) for e in v)
    return v


def _export_datasets(root, sim: SimConfig, reps):
    for r in range(reps):
        cfg = dataclasses.replace(sim, seed=replication_seed(sim.seed, r))
        x, y, truth = gen_dataset(cfg, np.random.default_rng(cfg.seed))
        d = io.ensure_dir(os.path.join(root, f"n{sim.n}_rep{r}"))
        io.write_matrix(os.path.join(d, "x.csv"), x)
        io.write_matrix(os.path.join(d, "y.csv"), y)
        io.write_matrix(os.path.join(d, "theta0.csv"), truth.theta)
        io.write_matrix(os.path.join(d, "lambda0.csv"), truth.lam)
        io.write_matrix(os.path.join(d, "b0.csv"), truth.b)


def _load_model(model_dir):
    theta = io.read_matrix(os.path.join(model_dir, "theta.csv"))
    lam = io.read_matrix(os.path.join(model_dir, "lambda.csv"))
    b = io.read_matrix(os.path.join(model_dir, "b.csv"))
    if lam.shape != (theta.shape[1],) * 2 or b.shape != (theta.shape[1], theta.shape[0]):
        raise InputError(f"inconsistent model shapes: theta {theta.shape}, lambda {lam.shape}, b {b.shape}")
    try:
        state = ModelState(theta, lam)
    except NotPositiveDefiniteError:
        raise InputError("model lambda.csv is not positive definite") from None
    return state, b


def cmd_predict(args) -> int:
    state, b = _load_model(args.model)
    x = io.read_matrix(args.x, args.header)
    if x.shape[1] != b.shape[1]:
        raise InputError(f"x has {x.shape[1]} columns, model expects {b.shape[1]}")
    unknown = None
    if args.mask:
        mask = io.read_matrix(args.mask, args.header) != 0
        if not args.y_known:
            raise InputError("--mask requires --y-known")
        y_known = io.read_matrix(args.y_known, args.header)
        if mask.shape != (x.shape[0], b.shape[0]) or y_known.shape != mask.shape:
            raise InputError(f"mask {mask.shape} and y-known {y_known.shape} must both be "
                             f"{x.shape[0]}x{b.shape[0]}")
        pred = predict_conditional(state, b, PredictionTask(x, mask, y_known))
        unknown = ~mask
    else:
        pred = predict_unconditional(b, x)
    out = io.ensure_dir(args.out)
    io.write_matrix(os.path.join(out, "predictions.csv"), pred)
    if args.y_true:
        y_true = io.read_matrix(args.y_true, args.header)
        if y_true.shape != pred.shape:
            raise InputError(f"y-true shape {y_true.shape} does not match predictions {pred.shape}")
        err = prediction_error(y_true, pred, unknown)
        io.write_config(os.path.join(out, "error.txt"), {"prediction_error": err})
    return EXIT_OK


def expand_grid(cfg: dict) -> list:
    """Cartesian product over comma-separated values; other keys are shared."""
    keys = sorted(cfg)
    values = [[v.strip() for v in cfg[k].split(",")] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def cmd_cv(args) -> int:
    x = io.read_matrix(args.x, args.header)
    y = io.read_matrix(args.y, args.header)
    if x.shape[0] != y.shape[0]:
        raise InputError(f"row count mismatch: x has {x.shape[0]} rows, y has {y.shape[0]} rows")
    base = _load_config(args.config)
    check_keys(base, set(HP_FIELDS) | SOLVER_FIELDS | EXTRA_KEYS)
    grid_cfg = _load_config(args.grid) if args.grid else {}
    check_keys(grid_cfg, set(HP_FIELDS) | {"nu0_scale"})
    if not grid_cfg:
        grid_cfg = {"nu0_theta": "0.0005,0.001,0.005,0.01,0.05"}
    if "nu0_theta" in grid_cfg and "nu0_lambda" not in grid_cfg and "nu0_lambda" not in base:
        tie_spikes = True
    else:
        tie_spikes = False
    n_train = x.shape[0] - int(math.ceil(x.shape[0] / args.k))
    candidates, echoes = [], []
    for combo in expand_grid(grid_cfg):
        merged = {**base, **combo}
        if tie_spikes:
            merged["nu0_lambda"] = merged["nu0_theta"]
        hp = resolve_hyperparams(merged, n_train, y.shape[1], x.shape[1], args.threshold)
        candidates.append(hp)
        echoes.append(combo)
    if x.shape[0] < args.k:
        raise InputError(f"need at least k={args.k} rows, got {x.shape[0]}")
    solver = resolve_solver(base)
    plan = CvPlan(grid=candidates, k=args.k, seed=args.seed)
    res = cross_validate(x, y, plan, solver, jobs=args.jobs)
    out = io.ensure_dir(args.out)
    hp_keys = list(HP_FIELDS)
    io.write_table(os.path.join(out, "cv_table.csv"), ["candidate"] + hp_keys + ["mean_error"],
                   [[i] + [getattr(hp, k) for k in hp_keys] + [err]
                    for i, (hp, err) in enumerate(zip(candidates, res.mean_errors))])
    io.write_config(os.path.join(out, "best_config"), _echo(res.best, solver, {
        "cv_candidate": res.best_index, "cv_k": args.k, "cv_seed": args.seed,
        "cv_mean_error": res.mean_errors[res.best_index],
    }))
    return EXIT_OK


def cmd_score(args) -> int:
    state, b = _load_model(args.model)
    p_theta = io.read_matrix(os.path.join(args.model, "inclusion_theta.csv"))
    p_lambda = io.read_matrix(os.path.join(args.model, "inclusion_lambda.csv"))
    probs = InclusionProbs(p_theta, p_lambda, p_theta.max(axis=1))
    theta0 = io.read_matrix(os.path.join(args.truth, "theta0.csv"))
    lam0 = io.read_matrix(os.path.join(args.truth, "lambda0.csv"))
    b0 = io.read_matrix(os.path.join(args.truth, "b0.csv"))
    t = 0.5 if args.threshold is None else args.threshold
    try:
        report = score(state.theta, state.lam, b, probs, theta0, lam0, b0, t)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = io.ensure_dir(args.out)
    with open(os.path.join(out, "score.txt"), "w") as fh:
        fh.write(report.to_text())
    io.write_table(os.path.join(out, "score.csv"), ["threshold"] + METRICS,
                   [[float(t)] + [getattr(report, m) for m in METRICS]])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcrf-ssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        if data:
            p.add_argument("--x", required=True, help="covariates CSV (n x q)")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--header", action="store_true", help="skip one header line in input CSVs")
        p.add_argument("--threshold", type=float, help="inclusion-probability threshold t")

    p = sub.add_parser("fit", help="fit the model to data")
    common(p)
    p.add_argument("--y", required=True, help="responses CSV (n x p)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulation study over sample sizes and replications")
    common(p, data=False)
    p.add_argument("setup_name", nargs="?", help="setup name (same as --setup)")
    p.add_argument("--setup", help=f"one of {', '.join(sorted(SETUPS))}")
    p.add_argument("--n", default="200", help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--export-data", action="store_true", help="also write each generated dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="predict responses from a fitted model directory")
    common(p)
    p.add_argument("--model", required=True, help="directory written by fit")
    p.add_argument("--mask", help="CSV, nonzero where the response is known")
    p.add_argument("--y-known", help="CSV of known responses (read where mask is nonzero)")
    p.add_argument("--y-true", help="CSV of true responses for the error report")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="K-fold cross-validation over a hyperparameter grid")
    common(p)
    p.add_argument("--y", required=True)
    p.add_argument("--grid", help="key=v1,v2,... grid file (Cartesian product)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("score", help="score a fitted model against truth matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True, help="directory with theta0.csv, lambda0.csv, b0.csv")
    p.add_argument("--out", default=".")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotPositiveDefiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
