#!/usr/bin/env python3

"""Generators, unitary schedules, the decoherent channel and exact evolution.

The n-th step applies U_n and then, with probability p, a projective
measurement in the site basis. In Kraus form the family is
A_0 = sqrt(1-p) I and A_i = sqrt(p) |i><i|, which sums to the identity.

State indices in this module's public functions are 1-based (|1>, ..., |m>).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, DomainError, InvariantError
from linalg import (
    ComplexMatrix,
    HermitianMatrix,
    UnitaryMatrix,
    as_hermitian,
    compensated_cumsum,
    compensated_sum,
    max_abs,
    unitary_exp,
)

logger = logging.getLogger(__name__)

DENSITY_HERMITIAN_TOL = 1e-12
DENSITY_TRACE_TOL = 1e-12
DENSITY_EIGEN_FLOOR = -1e-10
PROBABILITY_SUM_TOL = 1e-10
PROBABILITY_CLAMP_TOL = 1e-12


class GraphKind(str, Enum):
    FULLY_CONNECTED = "full"
    CYCLIC = "cyclic"
    CUSTOM = "custom"


class ScheduleForm(str, Enum):
    EXPONENTIAL = "exp"
    TWO_BY_TWO_SQRT = "sqrt2x2"


def check_state(j: int, m: int, key: str = "state") -> int:
    """Validate a 1-based state index and return its 0-based position."""
    if not isinstance(j, (int, np.integer)) or not 1 <= j <= m:
        raise DomainError(f"{key} must be an integer in 1..{m}, got {j!r}", key=key)
    return int(j) - 1


def check_probability(p: float, key: str = "p") -> float:
    if not np.isfinite(p) or not 0.0 <= p <= 1.0:
        raise DomainError(f"{key} must lie in [0, 1], got {p}", key=key)
    return float(p)


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Which Hermitian generator G drives the chain.

    ``coupling`` is the lambda of the fully connected and cyclic graphs.
    """

    kind: GraphKind = GraphKind.FULLY_CONNECTED
    dim: int = 2
    coupling: float = 1.0
    custom: Optional[HermitianMatrix] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GraphKind(self.kind))
        if self.kind is GraphKind.CUSTOM:
            if self.custom is None:
                raise ConfigurationError("custom generator requires a matrix", key="graph")
            custom = as_hermitian(self.custom, name="custom generator")
            object.__setattr__(self, "custom", custom)
            if self.dim != custom.dim:
                raise ConfigurationError(
                    f"dim={self.dim} does not match custom matrix of size {custom.dim}", key="dim")
        elif not np.isfinite(self.coupling) or self.coupling <= 0:
            raise DomainError(f"lambda must be positive, got {self.coupling}", key="lambda")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 2:
            raise DomainError(f"dim must be an integer >= 2, got {self.dim!r}", key="dim")

    @cached_property
    def generator(self) -> HermitianMatrix:
        return build_generator(self)

    @property
    def epsilon0(self) -> float:
        return self.generator.min_modulus()


@dataclass(frozen=True)
class ScheduleParams:
    zeta: float = 0.0
    form: ScheduleForm = ScheduleForm.EXPONENTIAL

    def __post_init__(self):
        object.__setattr__(self, "form", ScheduleForm(self.form))
        if not np.isfinite(self.zeta) or self.zeta < 0:
            raise DomainError(f"zeta must be a nonnegative real, got {self.zeta}", key="zeta")


@dataclass(frozen=True)
class DecoherenceParams:
    p: float = 0.0

    def __post_init__(self):
        check_probability(self.p)

    @property
    def q(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True, eq=False)
class DensityMatrix(ComplexMatrix):
    """Hermitian, unit-trace, positive semidefinite up to 1e-10 noise."""

    def __post_init__(self):
        super().__post_init__()
        rho = self.entries
        asym = max_abs(rho - rho.conj().T)
        if asym > DENSITY_HERMITIAN_TOL:
            raise InvariantError(f"density matrix is not Hermitian (asymmetry {asym:.3e})")
        trace = np.trace(rho)
        if abs(trace - 1.0) > DENSITY_TRACE_TOL:
            raise InvariantError(f"density matrix trace is {trace.real:.15g}, expected 1")
        lowest = float(np.min(np.linalg.eigvalsh(rho)))
        if lowest < DENSITY_EIGEN_FLOOR:
            raise InvariantError(f"density matrix has negative eigenvalue {lowest:.3e}")

    @classmethod
    def basis(cls, m: int, i: int) -> "DensityMatrix":
        """The pure state |i><i| (1-based)."""
        k = check_state(i, m, key="start")
        rho = np.zeros((m, m), dtype=np.complex128)
        rho[k, k] = 1.0
        return cls(rho)

    @classmethod
    def maximally_mixed(cls, m: int) -> "DensityMatrix":
        return cls(np.eye(m, dtype=np.complex128) / m)

    @classmethod
    def random(cls, m: int, rng: np.random.Generator) -> "DensityMatrix":
        """Random full-rank state A A* / tr(A A*) with Gaussian A."""
        a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        rho = a @ a.conj().T
        rho = 0.5 * (rho + rho.conj().T)
        return cls(rho / np.trace(rho).real)

    def diagonal(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()


def _normalized_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    sums = rows.sum(axis=1)
    drift = float(np.max(np.abs(sums - 1.0))) if len(sums) else 0.0
    if drift > PROBABILITY_SUM_TOL:
        raise InvariantError(f"probability vector sums drift by {drift:.3e}")
    if rows.size and (rows.min() < -PROBABILITY_CLAMP_TOL or rows.max() > 1.0 + PROBABILITY_CLAMP_TOL):
        raise InvariantError("probability entries outside [0, 1] beyond rounding noise")
    return np.clip(rows, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Site probabilities P_n(i, .) for n = 0..t, one row per step."""

    probabilities: np.ndarray
    states: Optional[List[DensityMatrix]] = None

    def __post_init__(self):
        rows = _normalized_rows(self.probabilities)
        rows.setflags(write=False)
        object.__setattr__(self, "probabilities", rows)

    @property
    def horizon(self) -> int:
        return self.probabilities.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.probabilities.shape[1]

    @property
    def steps(self) -> Iterator[Tuple[int, np.ndarray]]:
        return iter(enumerate(self.probabilities))

    def series(self, j: int) -> np.ndarray:
        """Probability of state j (1-based) at every step."""
        return self.probabilities[:, check_state(j, self.dim)]

    def final(self) -> np.ndarray:
        return self.probabilities[-1]

    def csv_header(self) -> List[str]:
        return ["n"] + [f"p{j}" for j in range(1, self.dim + 1)]

    def csv_rows(self) -> Iterator[list]:
        for n, row in self.steps:
            yield [n, *row]


def build_generator(spec: GeneratorSpec) -> HermitianMatrix:
    """Assemble G for the requested graph.

    The cyclic graph puts lambda on the two cyclic off-diagonals; for m = 2
    both coincide, giving a single edge.
    """
    m = spec.dim
    if spec.kind is GraphKind.FULLY_CONNECTED:
        return HermitianMatrix(np.full((m, m), spec.coupling, dtype=np.complex128))
    if spec.kind is GraphKind.CYCLIC:
        g = np.zeros((m, m), dtype=np.complex128)
        for k in range(m):
            g[k, (k + 1) % m] = spec.coupling
            g[(k + 1) % m, k] = spec.coupling
        return HermitianMatrix(g)
    if spec.custom is None:
        raise ConfigurationError("custom generator requires a matrix", key="graph")
    return spec.custom


def angle_terms(zeta: float, start: int, stop: int) -> np.ndarray:
    """Rotation angles k^(-zeta/2) for k = start+1..stop."""
    k = np.arange(start + 1, stop + 1, dtype=float)
    return k ** (-0.5 * zeta)


def cumulative_angles(zeta: float, t: int) -> np.ndarray:
    """S_0..S_t with S_n = sum_{k<=n} k^(-zeta/2), compensated."""
    return compensated_cumsum(angle_terms(zeta, 0, t))


def segment_angle(zeta: float, start: int, stop: int) -> float:
    """Total angle of U_stop...U_{start+1}; all factors share G so angles add."""
    return compensated_sum(angle_terms(zeta, start, stop))


def step_unitary(g: HermitianMatrix, zeta: float, n: int) -> UnitaryMatrix:
    """U_n = e^{i G n^(-zeta/2)}."""
    if n < 1:
        raise DomainError(f"step index must be >= 1, got {n}", key="n")
    return unitary_exp(g, float(n) ** (-0.5 * zeta))


def _sqrt_entries(coupling: float, zeta: float, n: int) -> np.ndarray:
    x = coupling / float(n) ** zeta
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"lambda/n^zeta = {x:.6g} outside [0, 1] at n={n}", key="lambda")
    a, b = np.sqrt(1.0 - x), np.sqrt(x)
    return np.array([[a, b], [b, -a]], dtype=np.complex128)


def sqrt_schedule_unitary(coupling: float, zeta: float, n: int) -> UnitaryMatrix:
    """Real orthogonal 2x2 step [[sqrt(1-x), sqrt(x)], [sqrt(x), -sqrt(1-x)]], x = lambda/n^zeta."""
    if n < 1:
        raise DomainError(f"step index must be >= 1, got {n}", key="n")
    return UnitaryMatrix(_sqrt_entries(coupling, zeta, n))


def hadamard() -> UnitaryMatrix:
    """The homogeneous fair coin."""
    h = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / np.sqrt(2.0)
    return UnitaryMatrix(h)


def unitary_source(spec: GeneratorSpec, sched: ScheduleParams) -> Callable[[int], np.ndarray]:
    """Map n -> raw U_n array for the configured schedule form."""
    if sched.form is ScheduleForm.TWO_BY_TWO_SQRT:
        if spec.dim != 2:
            raise ConfigurationError("sqrt2x2 schedule requires dim=2", key="schedule")
        if spec.coupling > 1.0:
            raise DomainError(f"sqrt2x2 schedule requires lambda <= 1, got {spec.coupling}", key="lambda")
        return lambda n: _sqrt_entries(spec.coupling, sched.zeta, n)
    spectrum = spec.generator.spectrum
    return lambda n: spectrum.propagator(float(n) ** (-0.5 * sched.zeta))


def _channel(rho: np.ndarray, u: np.ndarray, p: float) -> np.ndarray:
    conj = u @ rho @ u.conj().T
    out = conj * (1.0 - p)
    np.fill_diagonal(out, conj.diagonal())
    return 0.5 * (out + out.conj().T)


def apply_channel(rho: DensityMatrix, u: UnitaryMatrix, p: float) -> DensityMatrix:
    """Phi(rho) = (1-p) U rho U* + p diag(U rho U*)."""
    p = check_probability(p)
    if rho.dim != u.dim:
        raise ConfigurationError(f"state of size {rho.dim} does not match unitary of size {u.dim}")
    return DensityMatrix(_channel(rho.entries, u.entries, p))


def evolve(rho0: DensityMatrix, spec: GeneratorSpec, sched: ScheduleParams, dec: DecoherenceParams,
           t: int, keep_states: bool = False) -> Trajectory:
    """Iterate Phi_n...Phi_1 on rho0 and record the diagonal after every step.

    Args:
        rho0: initial state
        spec: generator description
        sched: schedule exponent and form
        dec: decoherence probability
        t: number of steps
        keep_states: also keep every intermediate DensityMatrix

    Returns:
        Trajectory with t+1 rows; row 0 is rho0's diagonal
    """
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")
    if rho0.dim != spec.dim:
        raise ConfigurationError(f"initial state has size {rho0.dim}, generator has {spec.dim}")
    source = unitary_source(spec, sched)
    p = dec.p
    logger.info("evolve: kind=%s m=%d lambda=%g zeta=%g p=%g t=%d",
                spec.kind.value, spec.dim, spec.coupling, sched.zeta, p, t)

    probs = np.empty((t + 1, spec.dim), dtype=float)
    rho = np.array(rho0.entries)
    probs[0] = rho.diagonal().real
    states = [rho0] if keep_states else None
    for n in range(1, t + 1):
        rho = _channel(rho, source(n), p)
        probs[n] = rho.diagonal().real
        if keep_states:
            states.append(DensityMatrix(rho))
    return Trajectory(probs, states)


def pure_evolve_fast(i: int, spec: GeneratorSpec, sched: ScheduleParams, t: int) -> Trajectory:
    """Coherent (p = 0) evolution from |i> in O(t m^2) after one diagonalization.

    The product U_n...U_1 collapses to e^{i G S_n} because every factor is a
    function of the same G.
    """
    if sched.form is not ScheduleForm.EXPONENTIAL:
        raise ConfigurationError("fast pure evolution needs the exponential schedule", key="schedule")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")
    k = check_state(i, spec.dim, key="start")
    spectrum = spec.generator.spectrum
    b = spectrum.eigenvectors.entries
    angles = cumulative_angles(sched.zeta, t)
    phases = np.exp(1j * np.outer(angles, spectrum.eigenvalues))
    amplitudes = (phases * b[k].conj()) @ b.T
    probs = np.abs(amplitudes) ** 2
    probs[0] = 0.0
    probs[0, k] = 1.0
    return Trajectory(probs)


def site_probability(rho: DensityMatrix, j: int) -> float:
    """Tr(|j><j| rho), clamped to [0, 1]."""
    k = check_state(j, rho.dim, key="j")
    return float(np.clip(rho.entries[k, k].real, 0.0, 1.0))
