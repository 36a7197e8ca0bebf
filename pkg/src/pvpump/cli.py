"""Command-line front end.

One JSON config file drives every subcommand.  Its top-level keys are the
experiment settings (see :class:`~pvpump.harness.ExperimentConfig`) plus a
few path fields resolved at load time:

``network_file``
    JSON description of the truth network, replacing the inline block.
``price_file`` / ``demand_file``
    CSV with one value per hour of the day, replacing the inline profiles.
``pv_file``
    Measured PV dataset (``day,slot,power_kw`` rows) for ``fit-forecaster``;
    without it the forecaster is trained on the synthetic history.
``out_dir``
    Default output directory, overridden by ``--out``.

Exit codes: 0 success, 1 unreadable or unparseable input file, 2 numerical
failure, 3 invalid configuration.  Validation runs to completion before any
output file is touched, and reruns with the same config and seed write
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controller import NoHistory, PeriodicityGap, solve_periodic
from .forecast import (AllZeroDay, DegenerateShape, Forecaster,
                       InsufficientHistory, SamplingGrid, load_pv_csv)
from .plant import ExcitationDesign, IllConditioned, identify_linear_model
from .harness import (ExperimentConfig, compare_so_do, derived_seeds,
                      prepare_experiment, run_closed_loop, write_trace_csv)

EXIT_OK = 0
EXIT_IO = 1
EXIT_NUMERICAL = 2
EXIT_CONFIG = 3

_NUMERICAL_FAILURES = (IllConditioned, PeriodicityGap, NoHistory,
                       InsufficientHistory, DegenerateShape, AllZeroDay,
                       np.linalg.LinAlgError, FloatingPointError)


@dataclass
class CliConfig:
    """Validated invocation state: experiment settings plus plumbing."""

    experiment: ExperimentConfig
    out_dir: str
    pv_file: Optional[str] = None


def _load_profile_csv(path, expected: int) -> tuple:
    values = np.loadtxt(path, delimiter=",", dtype=float).ravel()
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} hourly values, "
                         f"found {values.size}")
    return tuple(float(v) for v in values)


def load_cli_config(path: Optional[str], seed: Optional[int],
                    out: Optional[str]) -> CliConfig:
    """Read, resolve and fully validate the configuration.

    Raises OSError for unreadable files, json.JSONDecodeError for files
    that do not parse, and ValueError for settings that fail validation;
    nothing is written here.
    """
    raw: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config root must be a JSON object")
    out_dir = raw.pop("out_dir", ".")
    pv_file = raw.pop("pv_file", None)
    network_file = raw.pop("network_file", None)
    price_file = raw.pop("price_file", None)
    demand_file = raw.pop("demand_file", None)
    if network_file is not None:
        with open(network_file, encoding="utf-8") as fh:
            raw["network"] = json.load(fh)
    steps = 24
    if "controller" in raw:
        dt = raw["controller"].get("dt_hours", 1.0)
        day = raw["controller"].get("day_hours", 24.0)
        steps = int(round(day / dt))
    if price_file is not None:
        raw["price"] = _load_profile_csv(price_file, steps)
    if demand_file is not None:
        raw["demand_base"] = _load_profile_csv(demand_file, steps)
    if seed is not None:
        raw["seed"] = seed
    experiment = ExperimentConfig.from_dict(raw)
    if pv_file is not None and not os.path.isfile(pv_file):
        raise FileNotFoundError(f"PV file not found: {pv_file}")
    if out is not None:
        out_dir = out
    return CliConfig(experiment=experiment, out_dir=str(out_dir),
                     pv_file=pv_file)


def _identification(config: ExperimentConfig):
    _, _, ident_seed = derived_seeds(config.seed)
    design = ExcitationDesign(seed=ident_seed, u_max=config.controller.u_max)
    return identify_linear_model(config.network, design,
                                 config.controller.dt_hours)


def _write_text(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    target = os.path.join(out_dir, name)
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")
    return target


def cmd_identify(cli: CliConfig, args) -> int:
    report = _identification(cli.experiment)
    path = _write_text(cli.out_dir, "model.json", report.model.to_json())
    fmt = " ".join(f"{v:.4f}" for v in np.atleast_1d(report.r2_levels))
    print(f"level R^2: {fmt}")
    fmt = " ".join(f"{v:.4f}" for v in np.atleast_1d(report.r2_pressure))
    print(f"pressure R^2: {fmt}")
    fmt = " ".join(f"{v:.5f}" for v in np.atleast_1d(report.rmse_onestep))
    print(f"holdout one-step RMSE (m): {fmt}")
    print(f"condition number: {report.condition_number:.1f}")
    print(f"samples: {report.n_samples}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_fit_forecaster(cli: CliConfig, args) -> int:
    config = cli.experiment
    if cli.pv_file is not None:
        profiles = load_pv_csv(cli.pv_file)
        grid = SamplingGrid(day_hours=config.controller.day_hours,
                            step_hours=config.controller.dt_pv_hours)
        if profiles[0].samples.size != grid.slots_per_day:
            raise ValueError("PV file slot count does not match the "
                             "controller's sub-step grid")
        forecaster = Forecaster(grid=grid)
        for day in profiles:
            forecaster.observe_day(day)
        if forecaster.error_model is None or forecaster.arma is None:
            raise InsufficientHistory("PV file too short to fit the "
                                      "forecast models")
        snapshot = forecaster.to_json()
        n_days = len(profiles)
    else:
        setup = prepare_experiment(config)
        snapshot = setup.forecaster_snapshot
        n_days = config.history_days
    path = _write_text(cli.out_dir, "forecaster.json", snapshot)
    state = json.loads(snapshot)
    arma = state["arma"]
    print(f"observed days: {n_days}")
    print(f"multiplier model: mu={arma['mu']:.4f} phi={arma['phi']:.4f} "
          f"theta={arma['theta']:.4f} sigma2={arma['sigma2_prior']:.5f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_periodic(cli: CliConfig, args) -> int:
    config = cli.experiment
    report = _identification(config)
    reference = solve_periodic(report.model,
                               np.asarray(config.demand_base),
                               np.asarray(config.price), config.controller)
    path = _write_text(cli.out_dir, "periodic.json", reference.to_json())
    print(f"daily cost: {reference.objective:.4f}")
    print(f"periodicity residual: {reference.residual:.2e}")
    anchor = " ".join(f"{v:.4f}" for v in reference.anchor)
    print(f"anchor levels (m): {anchor}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(cli: CliConfig, args) -> int:
    result = run_closed_loop(cli.experiment, args.method)
    metrics_path = _write_text(cli.out_dir, "metrics.json",
                               result.metrics.to_json())
    os.makedirs(cli.out_dir, exist_ok=True)
    trace_path = os.path.join(cli.out_dir, "trace.csv")
    write_trace_csv(trace_path, result.trace)
    m = result.metrics
    print(f"method: {m.method}")
    print(f"total cost: {m.total_cost:.4f}")
    print(f"pv share of pump energy: {m.pv_share:.4f}")
    print(f"violations: {m.violations}  fallback steps: {m.fallback_steps}")
    print(f"wrote {metrics_path}")
    print(f"wrote {trace_path}")
    return EXIT_OK


def cmd_compare(cli: CliConfig, args) -> int:
    report = compare_so_do(cli.experiment)
    os.makedirs(cli.out_dir, exist_ok=True)
    path = os.path.join(cli.out_dir, "comparison.csv")
    report.to_csv(path)
    print("case cost_ratio grid_energy_ratio")
    for label, cost_ratio, grid_ratio in report.rows:
        print(f"{label} {cost_ratio:.4f} {grid_ratio:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvpump",
        description="Pump scheduling experiments for a water network "
                    "with on-site photovoltaics.")
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config file (defaults apply without it)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the experiment seed")
    parser.add_argument("--out", metavar="DIR",
                        help="output directory (default: config out_dir or .)")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")
    sub.add_parser("identify",
                   help="fit the linear tank model and write model.json")
    sub.add_parser("fit-forecaster",
                   help="train the PV forecaster and write forecaster.json")
    sub.add_parser("periodic",
                   help="solve the one-day periodic reference and write "
                        "periodic.json")
    run = sub.add_parser("run",
                         help="closed-loop run; writes metrics.json and "
                              "trace.csv")
    run.add_argument("--method", choices=("so", "do"), default="so",
                     help="stochastic (so) or deterministic (do) controller")
    sub.add_parser("compare",
                   help="stochastic vs deterministic campaign; writes "
                        "comparison.csv")
    return parser


_DISPATCH = {
    "identify": cmd_identify,
    "fit-forecaster": cmd_fit_forecaster,
    "periodic": cmd_periodic,
    "run": cmd_run,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cli = load_cli_config(args.config, args.seed, args.out)
    except json.JSONDecodeError as exc:
        print(f"error: cannot parse input file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _DISPATCH[args.command](cli, args)
    except _NUMERICAL_FAILURES as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
