#!/usr/bin/env python3

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from analysis import (
    SweepGrid,
    decay_points,
    model_selection,
    period_ratios,
    run_sweep,
    spectral_gap,
    table_grid,
)
from classical import EquilibriumMatrix, analytic_delta, convergence_report
from compound import RngStream, mc_estimate, sample_timeline, timeline_factors
from config import CONFIG_KEYS, RunConfig, parse_config
from csvio import write_csv
from errors import ConfigurationError, DomainError, InvariantError, NumericalError
from model import (
    DecoherenceParams,
    DensityMatrix,
    GeneratorSpec,
    ScheduleForm,
    ScheduleParams,
    evolve,
    pure_evolve_fast,
)
from verify import ORACLE_TOL, oracle_gap, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _spec(config: RunConfig) -> GeneratorSpec:
    return GeneratorSpec(config.graph, config.dim, config.coupling)


def _sched(config: RunConfig) -> ScheduleParams:
    return ScheduleParams(config.zeta, config.schedule)


def _trajectory(config: RunConfig):
    spec = _spec(config)
    rho0 = DensityMatrix.basis(spec.dim, config.start)
    return evolve(rho0, spec, _sched(config), DecoherenceParams(config.p), config.horizon)


def handle_evolve(config: RunConfig) -> int:
    traj = _trajectory(config)
    write_csv(config.out, traj.csv_header(), traj.csv_rows())
    return EXIT_OK


def handle_sample(config: RunConfig) -> int:
    est = mc_estimate(config.start, _spec(config), _sched(config), DecoherenceParams(config.p),
                      config.horizon, config.samples, RngStream(config.seed), workers=config.workers)
    write_csv(config.out, est.csv_header(), est.csv_rows())
    return EXIT_OK


def handle_oracle_check(config: RunConfig) -> int:
    gap = oracle_gap(_spec(config), _sched(config), DecoherenceParams(config.p), config.horizon, config.start)
    print(f"max |enumerate_paths - evolve| = {gap:.3e}", file=sys.stderr)
    write_csv(config.out, ["t", "max_difference", "tolerance"], [[config.horizon, gap, ORACLE_TOL]])
    return EXIT_OK if gap <= ORACLE_TOL else EXIT_NUMERICAL


def handle_period(config: RunConfig) -> int:
    spec = _spec(config)
    if config.p == 0 and config.schedule is ScheduleForm.EXPONENTIAL:
        series = pure_evolve_fast(config.start, spec, _sched(config), config.horizon).series(config.start)
    else:
        series = _trajectory(config).series(config.start)
    ratios = period_ratios(series, spectral_gap(spec.generator), config.zeta)
    rows = ([r.anchor, r.detected, r.predicted, r.ratio] for r in ratios)
    write_csv(config.out, ["anchor", "detected", "predicted", "ratio"], rows)
    return EXIT_OK


def handle_fit(config: RunConfig) -> int:
    series = _trajectory(config).series(config.start)
    raw = config.p >= config.switchover
    points = decay_points(series, config.p, config.switchover)
    selection = model_selection(points, config.dim, raw=raw)
    rows = []
    for fit in (selection.exponential, selection.rational):
        if fit is not None:
            rows.append([fit.model.value, fit.c, fit.r, fit.r_squared, fit.adjusted_r_squared,
                         fit.n_points, fit.converged, fit.model is selection.selected])
    header = ["model", "c", "r", "r2", "adj_r2", "n_points", "converged", "selected"]
    write_csv(config.out, header, rows)
    return EXIT_OK


def _sweep_grid(config: RunConfig) -> SweepGrid:
    common = dict(graph=config.graph, start=config.start, switchover=config.switchover, form=config.schedule)
    if config.t is not None:
        common["horizon"] = config.t
    if config.table is not None:
        return table_grid(config.table, **common)
    return SweepGrid(
        p_values=config.p_values,
        zeta_values=config.zeta_values,
        lambda_values=config.lambda_values,
        dims=config.dims,
        **common,
    )


def handle_sweep(config: RunConfig) -> int:
    rows = run_sweep(_sweep_grid(config), workers=config.workers)
    write_csv(config.out, list(rows[0].HEADER), (row.values() for row in rows))
    failed = sum(1 for row in rows if row.status != "ok")
    if failed:
        print(f"{failed} of {len(rows)} cells without a usable fit", file=sys.stderr)
    return EXIT_OK


def handle_verify(config: RunConfig) -> int:
    results = run_suite(config.seed)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}", file=sys.stderr)
    write_csv(config.out, ["check", "passed", "detail"], ([r.name, r.passed, r.detail] for r in results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def handle_certify(config: RunConfig) -> int:
    spec = _spec(config)
    timeline = sample_timeline(config.p, config.horizon, RngStream(config.seed))
    qs, _ = timeline_factors(timeline, spec, _sched(config))
    analytic = None
    eps0 = spec.epsilon0
    if eps0 > 0:
        arrivals = timeline.within()
        analytic = [analytic_delta(spec.dim, eps0, gap, sigma, config.zeta)
                    for gap, sigma in zip(timeline.gaps, arrivals)]
    cert = convergence_report(qs, EquilibriumMatrix(spec.dim), analytic)
    write_csv(config.out, cert.csv_header(), cert.csv_rows())
    if analytic:
        print(f"realised delta mean {np.mean(cert.deltas):.3e}, analytic delta mean {np.mean(analytic):.3e}",
              file=sys.stderr)
    print(f"{len(qs)} factors, final deviation {cert.final_deviation:.3e}, bound {cert.product_bound:.3e}",
          file=sys.stderr)
    return EXIT_OK


HANDLERS = {
    "evolve": handle_evolve,
    "sample": handle_sample,
    "oracle-check": handle_oracle_check,
    "period": handle_period,
    "fit": handle_fit,
    "sweep": handle_sweep,
    "verify": handle_verify,
    "certify": handle_certify,
}

HELP = {
    "evolve": "Exact channel evolution; CSV n,p1..pm",
    "sample": "Monte Carlo estimate via sampled measurement timelines",
    "oracle-check": "Compare path enumeration with channel evolution",
    "period": "Detected vs predicted oscillation periods",
    "fit": "Fit exponential and rational decay to the return probability",
    "sweep": "Evolve and fit over a parameter grid or a table preset",
    "verify": "Run the cross-module property suite",
    "certify": "Contraction certificate for one sampled timeline",
}


def _flag_type(key: str):
    convert = CONFIG_KEYS[key][1]

    def parse(text: str):
        return convert(text)
    parse.__name__ = key
    return parse


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--dim", dest="dims", type=_flag_type("dim"), help="State-space dimension m")
    common.add_argument("--lambda", dest="lambda_values", type=_flag_type("lambda"), help="Coupling lambda")
    common.add_argument("--zeta", dest="zeta_values", type=_flag_type("zeta"), help="Schedule exponent")
    common.add_argument("--p", dest="p_values", type=_flag_type("p"), help="Decoherence probability")
    common.add_argument("--t", type=int, help="Horizon (number of steps)")
    common.add_argument("--start", type=int, help="Initial basis state, 1-based")
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--graph", choices=["full", "cyclic"], help="Generator graph")
    common.add_argument("--schedule", choices=["exp", "sqrt2x2"], help="Unitary schedule form")
    common.add_argument("--out", help="Output CSV path (default: stdout)")
    common.add_argument("--workers", type=int, help="Worker processes (default: $QMC_WORKERS or 1)")
    common.add_argument("--table", type=int, help="Rate-table preset 1..8 for sweep")
    common.add_argument("--switchover", type=float, help="p at which fits switch from maxima to raw values")
    common.add_argument("--config", help="Config file of key = value lines")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    parser = ArgumentParser(
        description="Inhomogeneous quantum Markov chain toolkit"
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")
    for name, handler in HANDLERS.items():
        subparsers.add_parser(name, parents=[common], help=HELP[name])
    return parser


def configure_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entrypoint; returns the process exit code."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INPUT

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    configure_logging(args.verbose)

    fields = ("dims", "lambda_values", "zeta_values", "p_values", "t", "start", "samples", "seed", "graph",
              "schedule", "out", "workers", "table", "switchover", "verbose")
    overrides: Dict[str, Any] = {name: getattr(args, name) for name in fields}
    try:
        config = parse_config(args.config, command=args.command, overrides=overrides)
        return HANDLERS[args.command](config)
    except (ConfigurationError, DomainError, InvariantError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
