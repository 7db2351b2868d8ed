#!/usr/bin/env python3

"""Compound Markov chain representation of the decoherent walk.

Measurements happen at geometric times sigma_1 < sigma_2 < ...; between two of
them the walk evolves unitarily, so the measured sites form a classical chain
whose kernel for the segment (sigma, sigma + T] is Q(i, j) = |<j|U...U|i>|^2.
The site probabilities after t steps are the expectation over timelines of
row i of Q_{sigma_0} ... Q_{sigma_{n_t - 1}} W_{sigma_{n_t}}.

Random numbers come from numpy's Philox4x64-10 counter-based generator. A
stream is keyed by (seed, path); child streams append their index to the
path, which numpy feeds to SeedSequence as ``spawn_key``. Monte Carlo block b
of a run keyed (seed, s) draws from (seed, (s, b)).
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from errors import ContractViolation, DomainError, InvariantError, SizeError
from linalg import HermitianMatrix
from model import (
    DecoherenceParams,
    GeneratorSpec,
    ScheduleForm,
    ScheduleParams,
    check_state,
    cumulative_angles,
    segment_angle,
    unitary_source,
)

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240101
BLOCK_SIZE = 8192
STOCHASTIC_TOL = 1e-12
MAX_ENUMERATION_STEPS = 12
MAX_ENUMERATION_DIM = 4


@dataclass(frozen=True)
class MeasurementTimeline:
    """Gaps T_1, T_2, ... between measurements, materialized past the horizon."""

    gaps: Tuple[int, ...]
    horizon: int

    def __post_init__(self):
        gaps = tuple(int(g) for g in self.gaps)
        if any(g < 1 for g in gaps):
            raise InvariantError("measurement gaps must be >= 1")
        if self.horizon < 0:
            raise DomainError(f"horizon must be >= 0, got {self.horizon}", key="t")
        object.__setattr__(self, "gaps", gaps)

    @property
    def arrivals(self) -> Tuple[int, ...]:
        return tuple(itertools.accumulate(self.gaps))

    @property
    def count(self) -> int:
        """n_t, the number of measurements at or before the horizon."""
        return sum(1 for s in self.arrivals if s <= self.horizon)

    def within(self) -> Tuple[int, ...]:
        return self.arrivals[:self.count]

    @property
    def last_arrival(self) -> int:
        inside = self.within()
        return inside[-1] if inside else 0


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Nonnegative real square matrix whose rows sum to one within ``tol``."""

    entries: np.ndarray
    tol: float = STOCHASTIC_TOL

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvariantError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvariantError("stochastic matrix has NaN or infinite entries")
        if a.min() < -self.tol:
            raise InvariantError(f"stochastic matrix has negative entry {a.min():.3e}")
        drift = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
        if drift > self.tol:
            raise InvariantError(f"row sums deviate from 1 by {drift:.3e}")
        a = np.clip(a, 0.0, None)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def identity(cls, m: int) -> "StochasticMatrix":
        return cls(np.eye(m))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def is_doubly_stochastic(self, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        return bool(np.max(np.abs(self.column_sums() - 1.0)) <= tol
                    and np.max(np.abs(self.row_sums() - 1.0)) <= tol)


class RngStream:
    """Reproducible random stream keyed by a seed and a stream path."""

    def __init__(self, seed: int = DEFAULT_SEED, stream: int = 0, parent: Tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}", key="seed")
        if int(stream) < 0:
            raise DomainError(f"stream index must be >= 0, got {stream}", key="stream")
        self.seed = int(seed)
        self.key = tuple(parent) + (int(stream),)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    @property
    def stream(self) -> int:
        return self.key[-1]

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, index, parent=self.key)

    def uniform(self, size=None):
        """Uniform draws on (0, 1]."""
        return 1.0 - self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def geometric_gaps(p: float, u) -> np.ndarray:
    """Inverse-CDF geometric variates on {1, 2, ...} with mean 1/p from u in (0, 1]."""
    u = np.asarray(u, dtype=float)
    if p == 1.0:
        return np.ones(u.shape, dtype=np.int64)
    gaps = np.ceil(np.log(u) / np.log1p(-p))
    return np.maximum(gaps, 1.0).astype(np.int64)


def _check_measurement_probability(p: float) -> float:
    if not np.isfinite(p) or not 0.0 < p <= 1.0:
        raise DomainError(f"p must lie in (0, 1] for measurement timelines, got {p}", key="p")
    return float(p)


def sample_timeline(p: float, t: int, rng: RngStream) -> MeasurementTimeline:
    """Draw gaps until the first arrival beyond t."""
    p = _check_measurement_probability(p)
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")
    gaps = []
    sigma = 0
    while sigma <= t:
        gap = int(geometric_gaps(p, rng.uniform()))
        gaps.append(gap)
        sigma += gap
    return MeasurementTimeline(tuple(gaps), t)


def _squared_moduli(v: np.ndarray) -> np.ndarray:
    # Q(i, j) = |V(j, i)|^2
    return np.swapaxes(np.abs(v) ** 2, -1, -2)


def q_matrix(g: HermitianMatrix, zeta: float, sigma_prev: int, gap: int) -> StochasticMatrix:
    """Transition kernel of the segment (sigma_prev, sigma_prev + gap]."""
    if sigma_prev < 0:
        raise DomainError(f"sigma_prev must be >= 0, got {sigma_prev}", key="sigma_prev")
    if gap < 1:
        raise DomainError(f"gap must be >= 1, got {gap}", key="gap")
    theta = segment_angle(zeta, sigma_prev, sigma_prev + gap)
    return StochasticMatrix(_squared_moduli(g.spectrum.propagator(theta)))


def w_matrix(g: HermitianMatrix, zeta: float, sigma_last: int, t: int) -> StochasticMatrix:
    """Terminal kernel from the last measurement to the horizon."""
    if sigma_last > t:
        raise ContractViolation(f"sigma_last={sigma_last} exceeds horizon t={t}", key="sigma_last")
    if sigma_last < 0:
        raise DomainError(f"sigma_last must be >= 0, got {sigma_last}", key="sigma_last")
    if sigma_last == t:
        return StochasticMatrix.identity(g.dim)
    theta = segment_angle(zeta, sigma_last, t)
    return StochasticMatrix(_squared_moduli(g.spectrum.propagator(theta)))


class TransitionKernel:
    """Segment kernels Q(start, stop) for one generator and schedule.

    The exponential schedule uses prefix angles S_n, so a segment is
    e^{i G (S_stop - S_start)}. The sqrt2x2 schedule keeps prefix products
    P_n = U_n ... U_1 and forms P_stop P_start*.
    """

    def __init__(self, spec: GeneratorSpec, sched: ScheduleParams):
        self.spec = spec
        self.sched = sched
        self.dim = spec.dim
        self._source = unitary_source(spec, sched)
        self._exponential = sched.form is ScheduleForm.EXPONENTIAL
        self._angles = np.zeros(1)
        self._products = np.eye(self.dim, dtype=np.complex128)[None]

    def _extend(self, stop: int) -> None:
        size = len(self._angles) if self._exponential else len(self._products)
        if stop < size:
            return
        target = max(stop, 2 * (size - 1), 64)
        if self._exponential:
            self._angles = cumulative_angles(self.sched.zeta, target)
            return
        grown = np.empty((target + 1, self.dim, self.dim), dtype=np.complex128)
        grown[:size] = self._products
        for n in range(size, target + 1):
            grown[n] = self._source(n) @ grown[n - 1]
        self._products = grown

    def unitaries(self, starts, stops) -> np.ndarray:
        """Stack of segment propagators U_stop ... U_{start+1}."""
        starts = np.asarray(starts, dtype=np.int64)
        stops = np.asarray(stops, dtype=np.int64)
        if starts.size and (starts.min() < 0 or np.any(stops < starts)):
            raise ContractViolation("segments need 0 <= start <= stop")
        self._extend(int(stops.max()) if stops.size else 0)
        if self._exponential:
            thetas = self._angles[stops] - self._angles[starts]
            return self.spec.generator.spectrum.propagators(thetas)
        out = self._products[stops] @ np.swapaxes(self._products[starts].conj(), -1, -2)
        out[starts == stops] = np.eye(self.dim)
        return out

    def batch(self, starts, stops) -> np.ndarray:
        return _squared_moduli(self.unitaries(starts, stops))

    def matrix(self, start: int, stop: int) -> np.ndarray:
        return self.batch([start], [stop])[0]


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimates: np.ndarray
    stderrs: np.ndarray
    samples: int
    seed: int

    def __iter__(self):
        return iter((self.estimates, self.stderrs))

    def csv_header(self) -> List[str]:
        return ["j", "estimate", "stderr", "n_samples", "seed"]

    def csv_rows(self) -> Iterator[list]:
        for j, (e, s) in enumerate(zip(self.estimates, self.stderrs), start=1):
            yield [j, e, s, self.samples, self.seed]


def _block_sums(kernel: TransitionKernel, p: float, t: int, k: int, count: int,
                rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """Propagate ``count`` independent timelines in lockstep.

    Every live sample advances by one measurement per round; samples whose
    next arrival passes t take the terminal kernel and retire.
    """
    m = kernel.dim
    rows = np.zeros((count, m))
    rows[:, k] = 1.0
    sigma = np.zeros(count, dtype=np.int64)
    out = np.empty((count, m))
    active = np.arange(count)
    while active.size:
        nxt = sigma[active] + geometric_gaps(p, rng.uniform(active.size))
        inside = nxt <= t
        done = active[~inside]
        if done.size:
            w = kernel.batch(sigma[done], np.full(done.size, t))
            out[done] = np.einsum("ni,nij->nj", rows[done], w)
        live = active[inside]
        if live.size:
            q = kernel.batch(sigma[live], nxt[inside])
            rows[live] = np.einsum("ni,nij->nj", rows[live], q)
            sigma[live] = nxt[inside]
        active = live
    return out.sum(axis=0), (out ** 2).sum(axis=0)


def _block_job(job) -> Tuple[np.ndarray, np.ndarray]:
    spec, sched, p, t, k, count, seed, key = job
    rng = RngStream(seed, key[-1], parent=key[:-1])
    return _block_sums(TransitionKernel(spec, sched), p, t, k, count, rng)


def mc_estimate(i: int, spec: GeneratorSpec, sched: ScheduleParams, dec: DecoherenceParams, t: int,
                samples: int, rng: RngStream, workers: int = 1) -> MonteCarloEstimate:
    """Monte Carlo estimate of P_t(i, .) from sampled measurement timelines.

    Samples are cut into blocks of BLOCK_SIZE; block b draws from
    ``rng.spawn(b)`` and block sums are added in block order, so the result
    does not depend on ``workers``.

    Args:
        i: starting state (1-based)
        spec: generator description
        sched: schedule exponent and form
        dec: decoherence probability, must be positive
        t: horizon
        samples: number of sampled timelines
        rng: parent stream
        workers: process count for block evaluation

    Returns:
        MonteCarloEstimate; unpacks as (estimates, stderrs)
    """
    p = _check_measurement_probability(dec.p)
    k = check_state(i, spec.dim, key="start")
    if samples < 1:
        raise DomainError(f"samples must be >= 1, got {samples}", key="samples")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")

    counts = [min(BLOCK_SIZE, samples - start) for start in range(0, samples, BLOCK_SIZE)]
    logger.info("mc_estimate: N=%d blocks=%d t=%d p=%g workers=%d", samples, len(counts), t, p, workers)
    if workers > 1 and len(counts) > 1:
        jobs = [(spec, sched, p, t, k, n, rng.seed, rng.spawn(b).key) for b, n in enumerate(counts)]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_block_job, jobs))
    else:
        kernel = TransitionKernel(spec, sched)
        results = [_block_sums(kernel, p, t, k, n, rng.spawn(b)) for b, n in enumerate(counts)]

    total = np.zeros(spec.dim)
    total_sq = np.zeros(spec.dim)
    for s, sq in results:
        total += s
        total_sq += sq
    mean = total / samples
    if samples > 1:
        var = np.maximum(total_sq - samples * mean ** 2, 0.0) / (samples - 1)
        stderr = np.sqrt(var / samples)
    else:
        stderr = np.full(spec.dim, np.nan)
    return MonteCarloEstimate(mean, stderr, samples, rng.seed)


def enumerate_distribution(i: int, spec: GeneratorSpec, sched: ScheduleParams, dec: DecoherenceParams,
                           t: int) -> np.ndarray:
    """Exact P_t(i, .) as a sum over every set of decoherence times in {1..t}.

    Each subset with k measurements carries weight p^k q^(t-k); intermediate
    sites are summed by chaining the segment kernels, so the cost per subset
    is O(t m^2) rather than O(m^t).
    """
    m = spec.dim
    if t > MAX_ENUMERATION_STEPS or m > MAX_ENUMERATION_DIM:
        raise SizeError(f"enumeration limited to t <= {MAX_ENUMERATION_STEPS} and m <= {MAX_ENUMERATION_DIM},"
                        f" got t={t} m={m}", key="t")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")
    a = check_state(i, m, key="start")
    p, q = dec.p, dec.q

    starts, stops = zip(*((s, e) for s in range(t + 1) for e in range(s, t + 1)))
    kernel = TransitionKernel(spec, sched)
    segments = dict(zip(zip(starts, stops), kernel.batch(starts, stops)))

    terms = []
    for mask in range(1 << t):
        times = [n + 1 for n in range(t) if mask >> n & 1]
        weight = p ** len(times) * q ** (t - len(times))
        if weight == 0.0:
            continue
        row = np.zeros(m)
        row[a] = 1.0
        prev = 0
        for s in times:
            row = row @ segments[prev, s]
            prev = s
        terms.append(weight * (row @ segments[prev, t]))
    return np.array([math.fsum(col) for col in zip(*terms)])


def enumerate_paths(i: int, j: int, spec: GeneratorSpec, sched: ScheduleParams, dec: DecoherenceParams,
                    t: int) -> float:
    """Exact P_t(i, j) by brute force over decoherence times."""
    b = check_state(j, spec.dim, key="j")
    return float(enumerate_distribution(i, spec, sched, dec, t)[b])


def timeline_factors(timeline: MeasurementTimeline, spec: GeneratorSpec,
                     sched: ScheduleParams) -> Tuple[List[StochasticMatrix], StochasticMatrix]:
    """The Q sequence of a timeline and its terminal W."""
    kernel = TransitionKernel(spec, sched)
    bounds = (0,) + timeline.within()
    qs = [StochasticMatrix(kernel.matrix(a, b)) for a, b in zip(bounds, bounds[1:])]
    return qs, StochasticMatrix(kernel.matrix(bounds[-1], timeline.horizon))


def sample_outcomes(i: int, timeline: MeasurementTimeline, spec: GeneratorSpec, sched: ScheduleParams,
                    rng: RngStream) -> List[int]:
    """Measured sites X_1..X_{n_t}, a Markov chain with kernels Q per segment."""
    x = check_state(i, spec.dim, key="start")
    kernel = TransitionKernel(spec, sched)
    bounds = (0,) + timeline.within()
    outcomes = []
    for a, b in zip(bounds, bounds[1:]):
        cdf = np.cumsum(kernel.matrix(a, b)[x])
        u = rng.generator.random()
        x = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), spec.dim - 1)
        outcomes.append(x + 1)
    return outcomes


def path_probability(i: int, outcomes: List[int], timeline: MeasurementTimeline, spec: GeneratorSpec,
                     sched: ScheduleParams) -> float:
    """Q(i, x_1) Q(x_1, x_2) ... along the timeline's segments."""
    bounds = (0,) + timeline.within()
    if len(outcomes) != len(bounds) - 1:
        raise ContractViolation(f"expected {len(bounds) - 1} outcomes, got {len(outcomes)}")
    kernel = TransitionKernel(spec, sched)
    prob = 1.0
    x = check_state(i, spec.dim, key="start")
    for (a, b), nxt in zip(zip(bounds, bounds[1:]), outcomes):
        y = check_state(nxt, spec.dim, key="outcome")
        prob *= kernel.matrix(a, b)[x, y]
        x = y
    return prob
