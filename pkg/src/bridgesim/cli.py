"""Command-line interface: run ensembles, print exact references for
linear models, and validate configurations."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig, config_digest, parse_config
from .errors import BridgeSimError, InvalidConfigurationError, error_kind
from .estimator import WeightedEnsemble, run_ensemble, weighted_mean_se
from .oracle import GaussianLaw, condition, joint_law, observation_selector
from .sde import build_grid
from .weights import normalize_log_weights

THREADS_ENV = "BRIDGESIM_THREADS"


def _fmt(x: float) -> str:
    """17 significant digits: lossless for doubles and byte-stable."""
    return format(float(x), ".17g")


def _resolve_threads(cli_value: Optional[int],
                     config_value: Optional[int]) -> int:
    if cli_value is not None:
        return cli_value
    if config_value is not None:
        return config_value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InvalidConfigurationError(
                f"{THREADS_ENV} must be an integer, got {env!r}")
        if value < 1:
            raise InvalidConfigurationError(f"{THREADS_ENV} must be >= 1")
        return value
    return 1


def _functional_values(config: RunConfig, ensemble: WeightedEnsemble):
    """Raw per-path functional values, one column per functional."""
    cols = []
    for f in config.functionals:
        idx = ensemble.grid.index_of(f.time)
        cols.append(ensemble.states[:, idx, f.coordinate])
    return np.column_stack(cols) if cols else np.zeros((ensemble.size, 0))


def _estimates(config: RunConfig, ensemble: WeightedEnsemble,
               fvals: np.ndarray):
    weights, log_norm, ess = normalize_log_weights(ensemble.log_weights)
    out = []
    for i, f in enumerate(config.functionals):
        col = fvals[:, i]
        mean, mean_se = weighted_mean_se(weights, col[:, None])
        mean, mean_se = float(mean[0]), float(mean_se[0])
        if f.kind == "marginal_var":
            dev = (col - mean) ** 2
            var, var_se = weighted_mean_se(weights, dev[:, None])
            value, se = float(var[0]), float(var_se[0])
        else:
            value, se = mean, mean_se
        out.append({"type": f.kind, "time": f.time, "coordinate": f.coordinate,
                    "value": value, "std_error": se})
    return out, log_norm, ess


def _oracle_law(config: RunConfig) -> Optional[tuple[GaussianLaw, np.ndarray]]:
    built = config.build_model()
    lm = built.linear_reference(config.initial_state)
    if lm is None:
        return None
    times = {f.time for f in config.functionals if f.time > 0.0}
    times.update(float(ob.time) for ob in config.observations.items)
    times = np.array(sorted(times))
    law = joint_law(lm, times)
    sel, val = observation_selector(times, lm.dim, config.observations)
    return condition(law, sel, val), times


def _oracle_entries(config: RunConfig, conditioned: GaussianLaw,
                    times: np.ndarray, estimates) -> list[dict]:
    dim = config.build_model().spec.dim
    out = []
    for f, est in zip(config.functionals, estimates):
        if f.time <= 0.0:
            block = None
        else:
            block = int(np.nonzero(np.isclose(times, f.time))[0][0])
        if block is None:
            # time zero is deterministic
            exact_mean = float(config.initial_state[f.coordinate])
            exact_var = 0.0
        else:
            i = block * dim + f.coordinate
            exact_mean = float(conditioned.mean[i])
            exact_var = float(conditioned.cov[i, i])
        exact = exact_var if f.kind == "marginal_var" else exact_mean
        dev = abs(est["value"] - exact)
        se = est["std_error"]
        out.append({"type": f.kind, "time": f.time, "coordinate": f.coordinate,
                    "oracle_value": exact, "abs_deviation": dev,
                    "deviation_over_se": dev / se if se > 0 else float("inf")})
    return out


def _write_csv(path: str, config: RunConfig, ensemble: WeightedEnsemble,
               fvals: np.ndarray) -> None:
    n_obs = len(config.observations.items)
    header = ["path_id", "log_weight"]
    for k in range(n_obs):
        header += [f"log_eta_{k}", f"boundary_{k}", f"drift_{k}",
                   f"dA_{k}", f"covar_{k}"]
    header.append("girsanov")
    header += [f"f_{i}" for i in range(len(config.functionals))]
    bd = ensemble.breakdown
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(header)
        for i in range(ensemble.size):
            row = [str(int(ensemble.path_ids[i])),
                   _fmt(ensemble.log_weights[i])]
            for k in range(n_obs):
                row += [_fmt(bd["log_eta"][i, k]), _fmt(bd["boundary"][i, k]),
                        _fmt(bd["drift_term"][i, k]), _fmt(bd["dA_term"][i, k]),
                        _fmt(bd["covar_term"][i, k])]
            row.append(_fmt(bd["girsanov"][i]))
            row += [_fmt(fvals[i, j]) for j in range(fvals.shape[1])]
            writer.writerow(row)


def run(config: RunConfig, threads: Optional[int] = None):
    """Execute a run configuration; returns (exit_status, report dict)."""
    built = config.build_model()
    grid = build_grid(
        config.horizon, config.observations, config.grid.dt_base,
        config.grid.dt_min, config.grid.refine_ratio,
        include_times=[f.time for f in config.functionals])
    ensemble = run_ensemble(
        built.spec, config.observations, grid, config.initial_state,
        config.n_paths, config.seed,
        threads=_resolve_threads(threads, config.threads),
        validate=config.validate_coefficients, config_digest=config.digest)
    fvals = _functional_values(config, ensemble)
    estimates, log_norm, ess = _estimates(config, ensemble, fvals)
    report = {
        "schema_version": 1,
        "version": __version__,
        "config_digest": config.digest,
        "seed": config.seed,
        "n_paths": ensemble.size,
        "n_failed": ensemble.n_failed,
        "ess": ess,
        "log_norm": log_norm,
        "estimates": estimates,
    }
    oracle_info = _oracle_law(config)
    if oracle_info is not None:
        conditioned, times = oracle_info
        report["oracle"] = {
            "comparisons": _oracle_entries(config, conditioned, times,
                                           estimates)}
    else:
        report["oracle"] = None
    if config.ensemble_csv:
        _write_csv(config.ensemble_csv, config, ensemble, fvals)
    payload = json.dumps(report, indent=2)
    if config.report_path:
        with open(config.report_path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0, report


def run_oracle(config: RunConfig):
    """Exact conditional marginals for a linear model configuration."""
    oracle_info = _oracle_law(config)
    if oracle_info is None:
        raise InvalidConfigurationError(
            f"model '{config.model_name}' has no closed-form reference")
    conditioned, times = oracle_info
    dim = config.build_model().spec.dim
    values = []
    for f in config.functionals:
        if f.time <= 0.0:
            mean = float(config.initial_state[f.coordinate])
            var = 0.0
        else:
            block = int(np.nonzero(np.isclose(times, f.time))[0][0])
            i = block * dim + f.coordinate
            mean = float(conditioned.mean[i])
            var = float(conditioned.cov[i, i])
        values.append({"type": f.kind, "time": f.time,
                       "coordinate": f.coordinate,
                       "value": var if f.kind == "marginal_var" else mean})
    report = {"schema_version": 1, "config_digest": config.digest,
              "oracle_values": values}
    print(json.dumps(report, indent=2))
    return 0, report


def run_validate(config: RunConfig):
    report = {"ok": True, "config_digest": config.digest,
              "n_observations": len(config.observations.items),
              "n_functionals": len(config.functionals)}
    print(json.dumps(report, indent=2))
    return 0, report


def _load(path: str, overrides: argparse.Namespace) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidConfigurationError("config must be a JSON object")
    # overrides are applied before digesting so reruns agree byte for byte
    if getattr(overrides, "seed", None) is not None:
        raw["seed"] = overrides.seed
    if getattr(overrides, "paths", None) is not None:
        raw["n_paths"] = overrides.paths
    return parse_config(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bridgesim",
        description="Monte Carlo estimation for diffusions conditioned on "
                    "partial linear observations.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate an ensemble and report "
                                       "estimates")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--paths", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="print exact conditional "
                                             "marginals for linear models")
    p_oracle.add_argument("config")

    p_val = sub.add_parser("validate", help="check a configuration file")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    try:
        config = _load(args.config, args)
        if args.command == "run":
            status, _ = run(config, threads=args.threads)
        elif args.command == "oracle":
            status, _ = run_oracle(config)
        else:
            status, _ = run_validate(config)
        return status
    except BridgeSimError as exc:
        payload = {"error": {"type": error_kind(exc), "message": str(exc)}}
        field = getattr(exc, "field", None)
        if field:
            payload["error"]["field"] = field
        print(json.dumps(payload), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": {"type": "io-error", "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
