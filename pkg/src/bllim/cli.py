"""Command-line front end: fit, predict, simulate, cv, bench and
export-network, plus the benchmark replicate runners they delegate to.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import em, serialize, simulate
from .errors import BllimError, DataError
from .model import Dataset, forward_from_inverse, predict
from .selection import PipelineConfig, bllim_pipeline
from .simulate import (
    ManifoldSpec,
    PlanASpec,
    generate_manifold,
    generate_plan_a,
    rmse,
    sample_manifold_observations,
    sample_plan_a_params,
    snr,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FIT = 3


@dataclass(frozen=True)
class RunConfig:
    """Pipeline settings shared by the fitting commands."""

    k_range: tuple[int, ...] = (1, 2, 3, 4, 5)
    max_structures: int | None = None
    selection: str = "slope"
    threshold_scale: str = "covariance"
    max_iterations: int = 200
    tol_fraction: float = 1e-3
    restarts: int = 5
    ridge_scale: float = 1e-8
    min_mass: float | None = None
    seed: int = 0
    out: str = "."

    def pipeline_config(self, diagonal_only: bool = False) -> PipelineConfig:
        return PipelineConfig(
            max_structures=self.max_structures,
            selection="bic" if diagonal_only else self.selection,
            threshold_scale=self.threshold_scale,
            diagonal_only=diagonal_only,
            em=em.EmConfig(max_iterations=self.max_iterations,
                           tol_fraction=self.tol_fraction,
                           restarts=self.restarts,
                           ridge_scale=self.ridge_scale,
                           min_mass=self.min_mass,
                           seed=self.seed),
        )


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_k_range(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ":" in text:
        low, high = text.split(":", 1)
        values = range(int(low), int(high) + 1)
    else:
        values = [int(part) for part in text.split(",") if part]
    values = tuple(sorted(set(int(v) for v in values)))
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("cluster counts must be positive")
    return values


def _default_seed() -> int:
    return int(os.environ.get("BLLIM_SEED", "0"))


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k-range", type=_parse_k_range, default=(1, 2, 3, 4, 5),
                        help="cluster counts to try, e.g. 1:5 or 2,3,4")
    parser.add_argument("--max-structures", type=int, default=None,
                        help="candidate structures per cluster count "
                             "(default: covariate dimension)")
    parser.add_argument("--selection", choices=("slope", "bic"), default="slope")
    parser.add_argument("--threshold-scale",
                        choices=("covariance", "correlation"),
                        default="covariance")
    parser.add_argument("--max-iterations", type=int, default=200)
    parser.add_argument("--tol-fraction", type=float, default=1e-3)
    parser.add_argument("--restarts", type=int, default=5)
    parser.add_argument("--ridge-scale", type=float, default=1e-8)
    parser.add_argument("--min-mass", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $BLLIM_SEED or 0)")


def _run_config(args, out: str) -> RunConfig:
    seed = args.seed if args.seed is not None else _default_seed()
    return RunConfig(k_range=args.k_range,
                     max_structures=args.max_structures,
                     selection=args.selection,
                     threshold_scale=args.threshold_scale,
                     max_iterations=args.max_iterations,
                     tol_fraction=args.tol_fraction,
                     restarts=args.restarts,
                     ridge_scale=args.ridge_scale,
                     min_mass=args.min_mass,
                     seed=seed,
                     out=out)


def _load_dataset(x_path: str, y_path: str) -> Dataset:
    x, _ = serialize.read_matrix_csv(x_path)
    y, _ = serialize.read_matrix_csv(y_path)
    if x.shape[0] != y.shape[0]:
        raise DataError(
            f"row counts differ: {x_path} has {x.shape[0]} rows, "
            f"{y_path} has {y.shape[0]}")
    return Dataset(x, y)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    config = _run_config(args, args.out)
    data = _load_dataset(args.x, args.y)
    os.makedirs(config.out, exist_ok=True)
    result = bllim_pipeline(data, config.k_range, config.pipeline_config())
    report = result.report.to_dict()
    serialize.save_model(os.path.join(config.out, "model.json"),
                         result.fit.theta, report)
    serialize.atomic_write_text(os.path.join(config.out, "report.json"),
                                serialize.canonical_json(report))
    print(f"selected {result.n_clusters} clusters, "
          f"dimension {result.fit.delta}; model written to {config.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    theta, _ = serialize.load_model(args.model)
    x, _ = serialize.read_matrix_csv(args.x)
    if x.shape[1] != theta.covariate_dim:
        raise DataError(
            f"model expects {theta.covariate_dim} covariates but "
            f"{args.x} has {x.shape[1]} columns", source=args.x)
    star = forward_from_inverse(theta)
    predictions, weights = predict(star, x)
    columns = [f"y{j + 1}" for j in range(theta.response_dim)]
    out = predictions
    if args.weights:
        columns += [f"w{k + 1}" for k in range(theta.n_clusters)]
        out = np.hstack([predictions, weights])
    serialize.write_matrix_csv(args.out, out, columns)
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    os.makedirs(args.out, exist_ok=True)
    if args.plan == "plan-a":
        spec = PlanASpec(n=args.n, n_clusters=args.clusters,
                         response_dim=args.response_dim,
                         covariate_dim=args.dim, rho=args.rho,
                         coeff_scale=args.coeff_scale, seed=seed)
        theta = sample_plan_a_params(spec)
        data, labels = generate_plan_a(theta, spec.n, seed=[seed, 1])
        per_cluster, overall = snr(theta)
        truth = serialize.model_to_dict(theta)
        truth["labels"] = labels.tolist()
        truth["snr"] = {"per_cluster": per_cluster.tolist(),
                        "overall": overall}
    else:
        spec = ManifoldSpec(function=args.fn, covariance=args.cov,
                            n_obs=args.n, dim=args.dim,
                            factor_rank=args.rank, seed=seed)
        sample = generate_manifold(spec)
        data = sample.data
        truth = {
            "function": spec.function,
            "covariance": spec.covariance,
            "noise_cov": sample.noise_cov.tolist(),
            "hidden": sample.hidden.tolist(),
            "amplitude": sample.amplitude.tolist(),
            "frequency": sample.frequency.tolist(),
            "phase": sample.phase.tolist(),
            "hidden_gain": sample.hidden_gain.tolist(),
            "cubic_gain": sample.cubic_gain.tolist(),
        }
    serialize.write_matrix_csv(
        os.path.join(args.out, "X.csv"), data.X,
        [f"x{j + 1}" for j in range(data.covariate_dim)])
    serialize.write_matrix_csv(
        os.path.join(args.out, "Y.csv"), data.Y,
        [f"y{j + 1}" for j in range(data.response_dim)])
    serialize.atomic_write_text(os.path.join(args.out, "truth.json"),
                                serialize.canonical_json(truth))
    print(f"wrote {data.n} observations to {args.out}")
    return EXIT_OK


def _pipeline_predictor(config: RunConfig, diagonal_only: bool = False):
    pipeline_config = config.pipeline_config(diagonal_only)

    def fit_predict(train: Dataset, x_test: np.ndarray) -> np.ndarray:
        result = bllim_pipeline(train, config.k_range, pipeline_config)
        predictions, _ = predict(result.forward, x_test)
        return predictions

    return fit_predict


def cmd_cv(args) -> int:
    config = _run_config(args, os.path.dirname(args.out) or ".")
    data = _load_dataset(args.x, args.y)
    fit_predict = _pipeline_predictor(config, diagonal_only=args.method == "gllim")
    result = simulate.cross_validate(data, fit_predict, folds=args.folds,
                                     repetitions=args.reps, seed=config.seed)
    stats = {
        "method": args.method,
        "folds": args.folds,
        "repetitions": args.reps,
        "mean": result.mean.tolist(),
        "sd": result.sd.tolist(),
        "evaluations": result.evaluations,
        "failures": result.failures,
    }
    serialize.atomic_write_text(args.out, serialize.canonical_json(stats))
    print(f"cv: {result.evaluations} evaluations, {result.failures} failures, "
          f"mean RMSE {np.round(result.mean, 4).tolist()}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Benchmark replicates
# ---------------------------------------------------------------------------

def _replicate_seeds(seed: int, replicate: int, count: int) -> list[int]:
    state = np.random.SeedSequence([seed, replicate]).generate_state(count)
    return [int(v) for v in state]


def bench_table1_replicate(replicate: int, config: RunConfig,
                           n_train: int = 4162, n_test: int = 10000,
                           dim: int = 100, n_clusters: int = 5,
                           response_dim: int = 2) -> dict[str, np.ndarray]:
    """One mixture-plan replicate: per-method RMSE on an independent test set."""
    theta_seed, train_seed, test_seed = _replicate_seeds(config.seed, replicate, 3)
    spec = PlanASpec(n=n_train, n_clusters=n_clusters,
                     response_dim=response_dim, covariate_dim=dim,
                     seed=theta_seed)
    theta = sample_plan_a_params(spec)
    train, _ = generate_plan_a(theta, n_train, seed=train_seed)
    test, _ = generate_plan_a(theta, n_test, seed=test_seed)
    out = {}
    for method, diagonal_only in (("bllim", False), ("gllim", True)):
        result = bllim_pipeline(train, config.k_range,
                                config.pipeline_config(diagonal_only))
        predictions, _ = predict(result.forward, test.X)
        out[method] = rmse(test.Y, predictions)
    return out


def bench_table2_replicate(replicate: int, config: RunConfig,
                           function: str = "g", covariance: str = "blocks",
                           n_obs: int = 200, n_test: int = 200,
                           dim: int = 50) -> dict[str, np.ndarray]:
    """One manifold replicate: per-method RMSE on an independent test set."""
    train_seed, test_seed = _replicate_seeds(config.seed, replicate, 2)
    spec = ManifoldSpec(function=function, covariance=covariance,
                        n_obs=n_obs, dim=dim, seed=train_seed)
    sample = generate_manifold(spec)
    test, _ = sample_manifold_observations(sample, n_test, seed=test_seed)
    out = {}
    for method, diagonal_only in (("bllim", False), ("gllim", True)):
        result = bllim_pipeline(sample.data, config.k_range,
                                config.pipeline_config(diagonal_only))
        predictions, _ = predict(result.forward, test.X)
        out[method] = rmse(test.Y, predictions)
    return out


def cmd_bench(args) -> int:
    config = _run_config(args, args.out)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    collected: dict[str, list[np.ndarray]] = {"bllim": [], "gllim": []}
    failures = []
    for replicate in range(args.replicates):
        try:
            if args.table == "table1":
                scores = bench_table1_replicate(
                    replicate, config, n_train=args.n, n_test=args.test_n,
                    dim=args.dim)
            else:
                scores = bench_table2_replicate(
                    replicate, config, function=args.fn, covariance=args.cov,
                    n_obs=args.n, n_test=args.test_n, dim=args.dim)
        except BllimError as exc:
            failures.append({"replicate": replicate, "error": str(exc)})
            continue
        for method, values in scores.items():
            collected[method].append(values)
            for response, value in enumerate(values):
                rows.append((replicate, method, response + 1, float(value)))

    records = os.path.join(args.out, "records.csv")
    lines = ["replicate,method,response,rmse"]
    lines += [f"{r},{m},{resp},{v!r}" for r, m, resp, v in rows]
    serialize.atomic_write_text(records, "\n".join(lines) + "\n")

    summary = {"table": args.table, "replicates": args.replicates,
               "failures": failures, "methods": {}}
    for method, values in collected.items():
        if values:
            arr = np.asarray(values)
            summary["methods"][method] = {
                "mean": arr.mean(axis=0).tolist(),
                "sd": (arr.std(axis=0, ddof=1) if len(values) > 1
                       else np.zeros(arr.shape[1])).tolist(),
            }
    serialize.atomic_write_text(os.path.join(args.out, "summary.json"),
                                serialize.canonical_json(summary))
    for method, stats in summary["methods"].items():
        pretty = ", ".join(f"{m:.3f} ({s:.3f})"
                           for m, s in zip(stats["mean"], stats["sd"]))
        print(f"{args.table} {method}: {pretty}")
    return EXIT_OK


def cmd_export_network(args) -> int:
    theta, _ = serialize.load_model(args.model)
    k = args.cluster - 1
    if not 0 <= k < theta.n_clusters:
        raise DataError(f"cluster {args.cluster} out of range 1..{theta.n_clusters}")
    sigma = theta.residual_covs[k]
    lines = ["node_i\tnode_j\tvalue"]
    isolated = []
    for group in theta.structure.groups[k]:
        if len(group) == 1:
            isolated.append(group[0])
            continue
        for a_pos, i in enumerate(group):
            for j in group[a_pos + 1:]:
                if sigma[i, j] != 0.0:
                    lines.append(f"{i + 1}\t{j + 1}\t{float(sigma[i, j])!r}")
    lines.append("")
    lines.append("# isolated")
    lines += [str(i + 1) for i in sorted(isolated)]
    serialize.atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"exported {len(lines) - 3 - len(isolated)} edges, "
          f"{len(isolated)} isolated variables")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bllim",
                     description="Locally-linear Gaussian prediction with "
                                 "block-diagonal residual covariances")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from CSV data")
    p_fit.add_argument("--x", required=True, help="covariates CSV")
    p_fit.add_argument("--y", required=True, help="responses CSV")
    p_fit.add_argument("--out", required=True, help="output directory")
    _add_pipeline_flags(p_fit)
    p_fit.set_defaults(handler=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict responses for new covariates")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--x", required=True)
    p_pred.add_argument("--out", required=True, help="predictions CSV path")
    p_pred.add_argument("--weights", action="store_true",
                        help="append per-row gating weight columns")
    p_pred.set_defaults(handler=cmd_predict)

    p_sim = sub.add_parser("simulate", help="generate synthetic datasets")
    sim_sub = p_sim.add_subparsers(dest="plan", required=True)
    p_plana = sim_sub.add_parser("plan-a", help="mixture with block-Toeplitz noise")
    p_plana.add_argument("--n", type=int, default=4162)
    p_plana.add_argument("--clusters", type=int, default=5)
    p_plana.add_argument("--response-dim", type=int, default=2)
    p_plana.add_argument("--dim", type=int, default=100)
    p_plana.add_argument("--rho", type=float, default=0.9)
    p_plana.add_argument("--coeff-scale", type=float,
                         default=float(np.sqrt(0.5)))
    p_plana.add_argument("--seed", type=int, default=None)
    p_plana.add_argument("--out", required=True)
    p_plana.set_defaults(handler=cmd_simulate)
    p_mani = sim_sub.add_parser("manifold", help="nonlinear manifold data")
    p_mani.add_argument("--fn", choices=("f", "g", "h"), default="f")
    p_mani.add_argument("--cov",
                        choices=("factor", "toeplitz", "identity", "blocks"),
                        default="identity")
    p_mani.add_argument("--n", type=int, default=200)
    p_mani.add_argument("--dim", type=int, default=50)
    p_mani.add_argument("--rank", type=int, default=5)
    p_mani.add_argument("--seed", type=int, default=None)
    p_mani.add_argument("--out", required=True)
    p_mani.set_defaults(handler=cmd_simulate)

    p_cv = sub.add_parser("cv", help="repeated k-fold cross-validation")
    p_cv.add_argument("--x", required=True)
    p_cv.add_argument("--y", required=True)
    p_cv.add_argument("--out", required=True, help="statistics JSON path")
    p_cv.add_argument("--folds", type=int, default=10)
    p_cv.add_argument("--reps", type=int, default=50)
    p_cv.add_argument("--method", choices=("bllim", "gllim"), default="bllim")
    _add_pipeline_flags(p_cv)
    p_cv.set_defaults(handler=cmd_cv)

    p_bench = sub.add_parser("bench", help="simulation benchmarks")
    p_bench.add_argument("--table", choices=("table1", "table2"),
                         required=True)
    p_bench.add_argument("--replicates", type=int, default=20)
    p_bench.add_argument("--n", type=int, default=None,
                         help="training size (default per table)")
    p_bench.add_argument("--test-n", type=int, default=None)
    p_bench.add_argument("--dim", type=int, default=None)
    p_bench.add_argument("--fn", choices=("f", "g", "h"), default="g")
    p_bench.add_argument("--cov",
                         choices=("factor", "toeplitz", "identity", "blocks"),
                         default="blocks")
    p_bench.add_argument("--out", required=True)
    _add_pipeline_flags(p_bench)
    p_bench.set_defaults(handler=cmd_bench)

    p_net = sub.add_parser("export-network",
                           help="export one cluster's interaction edges")
    p_net.add_argument("--model", required=True)
    p_net.add_argument("--cluster", type=int, required=True,
                       help="1-based cluster index")
    p_net.add_argument("--out", required=True)
    p_net.set_defaults(handler=cmd_export_network)
    return parser


def _apply_table_defaults(args) -> None:
    if getattr(args, "command", None) != "bench":
        return
    defaults = ({"n": 4162, "test_n": 10000, "dim": 100}
                if args.table == "table1"
                else {"n": 200, "test_n": 200, "dim": 50})
    for name, value in defaults.items():
        if getattr(args, name) is None:
            setattr(args, name, value)


def _emit_error(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("source", "line", "column"):
        value = getattr(exc, attr, None)
        if value is not None:
            record[attr] = value
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _apply_table_defaults(args)
    try:
        return args.handler(args)
    except DataError as exc:
        _emit_error(exc)
        return EXIT_DATA
    except (BllimError, ValueError) as exc:
        _emit_error(exc)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
