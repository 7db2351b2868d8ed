#!/usr/bin/env python3

"""Inhomogeneous products of stochastic matrices and their convergence certificates."""

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from compound import StochasticMatrix
from errors import ConfigurationError, ContractViolation, DomainError
from linalg import HermitianMatrix, max_abs, unitary_exp

logger = logging.getLogger(__name__)

PRODUCT_TOL = 1e-10
COLUMN_SUM_TOL = 1e-12
ENTRY_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class EquilibriumMatrix:
    """Rank-one matrix with every entry 1/m."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}", key="dim")

    @property
    def entries(self) -> np.ndarray:
        return np.full((self.dim, self.dim), 1.0 / self.dim)

    @property
    def pi(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.dim)


@dataclass(frozen=True)
class ContractionCertificate:
    """Minorization constants delta_k with running bounds prod(1 - delta_k)."""

    deltas: np.ndarray
    deviations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    analytic_deltas: Optional[np.ndarray] = None

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - np.asarray(self.deltas)

    @property
    def running_bounds(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def product_bound(self) -> float:
        return float(self.running_bounds[-1]) if len(self.deltas) else 1.0

    @property
    def final_deviation(self) -> float:
        return float(self.deviations[-1]) if len(self.deviations) else float("nan")

    def holds(self, slack: float = 1e-9) -> bool:
        """Every prefix deviation sits below its running bound."""
        return bool(np.all(self.deviations <= self.running_bounds + slack))

    def csv_header(self) -> List[str]:
        header = ["k", "delta", "alpha", "running_bound", "running_deviation"]
        if self.analytic_deltas is not None:
            header.append("analytic_delta")
        return header

    def csv_rows(self) -> Iterator[list]:
        rows = zip(self.deltas, self.alphas, self.running_bounds, self.deviations)
        for k, (d, a, b, dev) in enumerate(rows, start=1):
            row = [k, d, a, b, dev]
            if self.analytic_deltas is not None:
                row.append(self.analytic_deltas[k - 1])
            yield row


def _check_dims(ps: Sequence[StochasticMatrix], dim: Optional[int]) -> int:
    dims = {p.dim for p in ps}
    if dim is not None:
        dims.add(dim)
    if len(dims) > 1:
        raise ConfigurationError(f"factor dimensions disagree: {sorted(dims)}", key="dim")
    if not dims:
        raise ConfigurationError("empty product needs an explicit dimension", key="dim")
    return dims.pop()


def minorization_delta(p: StochasticMatrix, pi: EquilibriumMatrix) -> float:
    """Largest delta with P >= delta * Pi entrywise."""
    _check_dims([p], pi.dim)
    return float(np.clip(pi.dim * p.entries.min(), 0.0, 1.0))


def inhomogeneous_product(ps: Sequence[StochasticMatrix], dim: Optional[int] = None) -> StochasticMatrix:
    """Ordered product P_1 P_2 ... P_n; the empty product is the identity."""
    m = _check_dims(ps, dim)
    out = np.eye(m)
    for p in ps:
        out = out @ p.entries
    return StochasticMatrix(out, tol=PRODUCT_TOL)


def convergence_report(ps: Sequence[StochasticMatrix], pi: EquilibriumMatrix,
                       analytic: Optional[Sequence[float]] = None) -> ContractionCertificate:
    """Certificate for the prefixes of P_1 ... P_n against Pi.

    The contraction bound needs Pi P_k = Pi, which for uniform Pi means unit
    column sums; factors failing that are logged and still included.

    Args:
        ps: ordered factors
        pi: equilibrium matrix
        analytic: optional theoretical deltas reported alongside

    Returns:
        ContractionCertificate with realized deltas and prefix deviations
    """
    _check_dims(ps, pi.dim)
    target = pi.entries
    deltas = np.empty(len(ps))
    deviations = np.empty(len(ps))
    prefix = np.eye(pi.dim)
    for k, p in enumerate(ps):
        if not np.all(np.abs(p.column_sums() - 1.0) <= COLUMN_SUM_TOL):
            logger.warning("factor %d is not doubly stochastic; bound not guaranteed", k + 1)
        deltas[k] = minorization_delta(p, pi)
        prefix = prefix @ p.entries
        deviations[k] = max_abs(prefix - target)
    analytic_arr = None if analytic is None else np.asarray(analytic, dtype=float)
    if analytic_arr is not None and len(analytic_arr) != len(ps):
        raise ContractViolation(f"{len(analytic_arr)} analytic deltas for {len(ps)} factors", key="analytic")
    return ContractionCertificate(deltas, deviations, analytic_arr)


def analytic_delta(dim: int, epsilon0: float, gap: int, sigma: int, zeta: float) -> float:
    """Theoretical minorization constant m eps0^2 T^2 / (4 sigma^zeta), capped at 1."""
    if sigma < 1:
        return float("nan")
    return float(min(1.0, dim * epsilon0 ** 2 * gap ** 2 / (4.0 * sigma ** zeta)))


@dataclass(frozen=True)
class SemigroupReport:
    theta: float
    theta0: float
    in_hypothesis: bool
    off_diagonal_lower: bool
    off_diagonal_upper: bool
    diagonal_lower: bool

    @property
    def asserted(self) -> bool:
        return self.in_hypothesis

    @property
    def passed(self) -> bool:
        return self.off_diagonal_lower and self.off_diagonal_upper and self.diagonal_lower


def semigroup_theta0(g: HermitianMatrix) -> float:
    eps0 = g.min_modulus()
    if eps0 <= 0.0:
        raise DomainError("entry bounds need every |G_ij| > 0", key="epsilon0")
    norm = g.inf_norm()
    return min(eps0 / (4.0 * norm ** 2), 1.0 / (4.0 * norm))


def semigroup_bounds_check(g: HermitianMatrix, theta: float) -> SemigroupReport:
    """Entry bounds of e^{i theta G} for small theta.

    For 0 <= theta <= theta0 = min(eps0 / (4 |G|^2), 1 / (4 |G|)) with the
    infinity norm: theta eps0 / 2 <= |U_jk| <= 2 theta |G| off the diagonal
    and |U_jj| >= 1/2. Outside that range the booleans are still computed but
    the report is marked out of hypothesis.
    """
    theta0 = semigroup_theta0(g)
    if not np.isfinite(theta) or theta < 0:
        raise DomainError(f"theta must be a nonnegative real, got {theta}", key="theta")
    eps0 = g.min_modulus()
    norm = g.inf_norm()
    u = np.abs(unitary_exp(g, theta).entries)
    off = ~np.eye(g.dim, dtype=bool)
    lower = theta * eps0 / 2.0
    upper = 2.0 * theta * norm
    report = SemigroupReport(
        theta=float(theta),
        theta0=theta0,
        in_hypothesis=theta <= theta0,
        off_diagonal_lower=bool(np.all(u[off] >= lower - ENTRY_BOUND_SLACK)),
        off_diagonal_upper=bool(np.all(u[off] <= upper + ENTRY_BOUND_SLACK)),
        diagonal_lower=bool(np.all(u.diagonal() >= 0.5 - ENTRY_BOUND_SLACK)),
    )
    if not report.in_hypothesis:
        logger.info("theta=%g exceeds theta0=%g; bounds not asserted", theta, theta0)
    return report
