#!/usr/bin/env python3

"""Cross-module property checks run by ``cli.py verify``."""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from classical import EquilibriumMatrix, convergence_report, semigroup_bounds_check, semigroup_theta0
from compound import (
    RngStream,
    enumerate_distribution,
    q_matrix,
    sample_timeline,
    timeline_factors,
    w_matrix,
)
from linalg import max_abs, random_hermitian, unitary_exp
from model import (
    DecoherenceParams,
    DensityMatrix,
    GeneratorSpec,
    ScheduleParams,
    apply_channel,
    evolve,
)

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-10
STOCHASTIC_TOL = 1e-12
TRACE_TOL = 1e-12
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def oracle_gap(spec: GeneratorSpec, sched: ScheduleParams, dec: DecoherenceParams, t: int, start: int = 1) -> float:
    """Max |enumeration - channel evolution| over the final distribution."""
    exact = enumerate_distribution(start, spec, sched, dec, t)
    traj = evolve(DensityMatrix.basis(spec.dim, start), spec, sched, dec, t)
    return max_abs(exact - traj.final())


def check_double_stochasticity(rng: np.random.Generator, generators: int = 1000, per_generator: int = 10) -> CheckResult:
    worst = 0.0
    for _ in range(generators):
        m = int(rng.integers(2, 5))
        g = random_hermitian(m, rng, max_modulus=2.0)
        zeta = float(rng.uniform(0.0, 2.0))
        for _ in range(per_generator // 2):
            sigma = int(rng.integers(0, 1000))
            gap = int(rng.integers(1, 50))
            q = q_matrix(g, zeta, sigma, gap)
            w = w_matrix(g, zeta, sigma, sigma + int(rng.integers(0, 50)))
            for mat in (q, w):
                worst = max(worst, max_abs(mat.row_sums() - 1.0), max_abs(mat.column_sums() - 1.0))
    count = generators * (per_generator // 2) * 2
    return CheckResult("double_stochasticity", worst <= STOCHASTIC_TOL,
                       f"{count} matrices, worst sum error {worst:.3e}")


def check_trace_preservation(rng: np.random.Generator, trials: int = 500) -> CheckResult:
    worst_trace = 0.0
    lowest = np.inf
    for _ in range(trials):
        m = int(rng.integers(2, 6))
        rho = DensityMatrix.random(m, rng)
        u = unitary_exp(random_hermitian(m, rng), float(rng.uniform(0.0, 3.0)))
        out = apply_channel(rho, u, float(rng.uniform()))
        worst_trace = max(worst_trace, abs(np.trace(out.entries) - 1.0))
        lowest = min(lowest, float(np.min(np.linalg.eigvalsh(out.entries))))
    return CheckResult("trace_preservation", worst_trace <= TRACE_TOL and lowest >= -1e-10,
                       f"{trials} channels, worst trace error {worst_trace:.3e}, lowest eigenvalue {lowest:.3e}")


def check_oracle_equivalence(max_t: int = 6) -> CheckResult:
    worst = 0.0
    grid = itertools.product((2, 3), range(1, max_t + 1), (0.2, 0.7, 1.0), (0.0, 0.5, 1.0), (0.5, 1.0))
    cases = 0
    for m, t, p, zeta, lam in grid:
        gap = oracle_gap(GeneratorSpec(dim=m, coupling=lam), ScheduleParams(zeta), DecoherenceParams(p), t)
        worst = max(worst, gap)
        cases += 1
    return CheckResult("oracle_equivalence", worst <= ORACLE_TOL, f"{cases} cases, max difference {worst:.3e}")


def check_semigroup_bounds(rng: np.random.Generator, trials: int = 1000) -> CheckResult:
    failures = 0
    for _ in range(trials):
        m = int(rng.integers(2, 6))
        g = random_hermitian(m, rng, min_modulus=0.1, max_modulus=1.0)
        theta = float(rng.uniform(0.0, semigroup_theta0(g)))
        if not semigroup_bounds_check(g, theta).passed:
            failures += 1
    return CheckResult("semigroup_bounds", failures == 0, f"{trials} generators, {failures} failures")


def check_contraction_bound(seed: int, timelines: int = 20, t: int = 2000) -> CheckResult:
    spec = GeneratorSpec(dim=2, coupling=1.0)
    sched = ScheduleParams(0.5)
    pi = EquilibriumMatrix(2)
    parent = RngStream(seed)
    failures = 0
    worst = 0.0
    for k in range(timelines):
        timeline = sample_timeline(0.5, t, parent.spawn(k))
        qs, _ = timeline_factors(timeline, spec, sched)
        cert = convergence_report(qs, pi)
        if not cert.holds(BOUND_SLACK):
            failures += 1
        worst = max(worst, cert.final_deviation)
    return CheckResult("contraction_bound", failures == 0,
                       f"{timelines} timelines, {failures} violations, worst final deviation {worst:.3e}")


def run_suite(seed: int) -> List[CheckResult]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_double_stochasticity(rng),
        lambda: check_trace_preservation(rng),
        check_oracle_equivalence,
        lambda: check_semigroup_bounds(rng),
        lambda: check_contraction_bound(seed),
    ]
    results = []
    for check in checks:
        result = check()
        logger.info("%s: %s (%s)", result.name, "pass" if result.passed else "FAIL", result.detail)
        results.append(result)
    return results
