#!/usr/bin/env python3

"""Periodicity, decay-rate regression and parameter sweeps.

The 2x2 all-lambda chain has a closed form for P_n(1,1); its oscillation
period grows with n for zeta < 2 and is predicted from the prefix angle S_n.
Under decoherence the return probability relaxes toward 1/m either
exponentially, c e^{-rt} + 1/m, or as a power law, c t^{-r} + 1/m. Both are
fitted with a damped Gauss-Newton (Levenberg-Marquardt) iteration.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, DegenerateFitError, DomainError, FitError
from linalg import HermitianMatrix
from model import (
    DecoherenceParams,
    DensityMatrix,
    GeneratorSpec,
    GraphKind,
    ScheduleForm,
    ScheduleParams,
    check_probability,
    cumulative_angles,
    evolve,
    segment_angle,
)

logger = logging.getLogger(__name__)

PLATEAU_TOL = 1e-12
ZETA_SNAP = 1e-9
SCALING_TOL = 0.05

MIN_FIT_POINTS = 4
FIT_PARAMETERS = 2
MAX_ITERATIONS = 200
PARAMETER_TOL = 1e-10
INITIAL_DAMPING = 1e-3
MAX_DAMPING = 1e16
BASELINE_TOL = 1e-15

SMALL_P = (0.005, 0.01, 0.015, 0.02, 0.025)
LARGE_P = (0.6, 0.7, 0.8, 0.9, 1.0)
TABLE_ZETAS = tuple(round(0.1 * k, 1) for k in range(1, 11))


class DecayModel(str, Enum):
    EXPONENTIAL = "exponential"
    RATIONAL = "rational"

    @property
    def code(self) -> int:
        """Fitness code of the rate tables: 1 exponential, 2 rational."""
        return 1 if self is DecayModel.EXPONENTIAL else 2


@dataclass(frozen=True)
class PeriodEstimate:
    anchor: int
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError(f"period length must be positive, got {self.length}", key="length")


@dataclass(frozen=True)
class PeriodRatio:
    anchor: int
    detected: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.detected / self.predicted


@dataclass(frozen=True)
class ScalingReport:
    zeta: float
    n: int
    c: float
    ratio: float

    @property
    def passed(self) -> bool:
        return abs(self.ratio - 1.0) <= SCALING_TOL


@dataclass(frozen=True)
class FitResult:
    model: DecayModel
    c: float
    r: float
    baseline: float
    r_squared: float
    adjusted_r_squared: float
    n_points: int
    converged: bool
    iterations: int = 0

    def predict(self, steps) -> np.ndarray:
        return _predict(self.model, np.asarray(steps, dtype=float), np.array([self.c, self.r]), self.baseline)


@dataclass(frozen=True)
class ModelSelection:
    selected: DecayModel
    exponential: Optional[FitResult]
    rational: Optional[FitResult]

    @property
    def best(self) -> FitResult:
        return self.exponential if self.selected is DecayModel.EXPONENTIAL else self.rational


def closed_form_p11(coupling: float, zeta: float, n: int) -> float:
    """P_n(1,1) = 1 - (1 - cos(2 lambda S_n)) / 2 for the all-lambda 2x2 generator."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}", key="n")
    return 1.0 - 0.5 * (1.0 - math.cos(2.0 * coupling * segment_angle(zeta, 0, n)))


def closed_form_series(coupling: float, zeta: float, t: int) -> np.ndarray:
    """P_n(1,1) for n = 0..t."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}", key="t")
    return 1.0 - 0.5 * (1.0 - np.cos(2.0 * coupling * cumulative_angles(zeta, t)))


def closed_form_p21(coupling: float, zeta: float, n: int) -> float:
    return 1.0 - closed_form_p11(coupling, zeta, n)


def spectral_gap(g: HermitianMatrix) -> float:
    """lambda_1 - lambda_2, the frequency that sets the oscillation period."""
    if g.dim < 2:
        raise DomainError("spectral gap needs dim >= 2", key="dim")
    ev = g.spectrum.eigenvalues
    return float(ev[0] - ev[1])


def _snap_zeta(zeta: float) -> float:
    if abs(zeta - 2.0) < ZETA_SNAP:
        return 2.0
    if not 0.0 <= zeta <= 2.0:
        raise DomainError(f"periods exist only for 0 <= zeta <= 2, got {zeta}", key="zeta")
    return float(zeta)


def predict_period(delta_lambda: float, zeta: float, n: int) -> PeriodEstimate:
    """First period after step n.

    With a = 1 - zeta/2 the period is (a 2 pi / Delta + n^a)^(1/a) - n, and
    n (e^{2 pi / Delta} - 1) at zeta = 2. The first form is evaluated as
    n expm1(log1p(a 2 pi / (Delta n^a)) / a) so that it stays accurate for
    large n and for zeta close to 2.
    """
    if not delta_lambda > 0:
        raise DomainError(f"spectral gap must be positive, got {delta_lambda}", key="delta_lambda")
    zeta = _snap_zeta(zeta)
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}", key="n")
    turn = 2.0 * math.pi / delta_lambda
    if zeta == 2.0:
        if n < 1:
            raise DomainError("zeta=2 periods need n >= 1", key="n")
        return PeriodEstimate(n, n * math.expm1(turn))
    a = 1.0 - 0.5 * zeta
    if n == 0:
        return PeriodEstimate(0, (a * turn) ** (1.0 / a))
    length = n * math.expm1(math.log1p(a * turn * n ** (-a)) / a)
    return PeriodEstimate(n, length)


def lambda_scaling_check(zeta: float, n: int, c: float, delta_lambda: float = 2.0) -> ScalingReport:
    """Compare the period at gap c*Delta with the period at Delta divided by c."""
    if not c > 0:
        raise DomainError(f"scale factor must be positive, got {c}", key="c")
    scaled = predict_period(c * delta_lambda, zeta, n).length
    base = predict_period(delta_lambda, zeta, n).length
    return ScalingReport(zeta, n, c, scaled / (base / c))


def local_maxima(series, tol: float = PLATEAU_TOL) -> np.ndarray:
    """Indices of strict interior local maxima; a plateau counts once at its midpoint."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise DomainError("series needs at least 3 points", key="series")
    breaks = np.flatnonzero(np.abs(np.diff(x)) > tol) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [x.size])) - 1
    values = x[starts]
    if values.size < 3:
        return np.zeros(0, dtype=np.int64)
    inner = np.arange(1, values.size - 1)
    peak = (values[inner] > values[inner - 1]) & (values[inner] > values[inner + 1])
    k = inner[peak]
    return (starts[k] + ends[k]) // 2


def detect_periods(series) -> List[PeriodEstimate]:
    """Distances between consecutive local maxima, anchored at the earlier one."""
    peaks = local_maxima(series)
    return [PeriodEstimate(int(a), float(b - a)) for a, b in zip(peaks, peaks[1:])]


def period_ratios(series, delta_lambda: float, zeta: float, min_anchor: int = 0) -> List[PeriodRatio]:
    out = []
    for est in detect_periods(series):
        if est.anchor < max(min_anchor, 1):
            continue
        predicted = predict_period(delta_lambda, zeta, est.anchor).length
        out.append(PeriodRatio(est.anchor, est.length, predicted))
    return out


def decay_points(series, p: float, switchover: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Points to fit: local maxima below the switchover p, raw values from n=1 above it."""
    check_probability(p)
    x = np.asarray(series, dtype=float)
    if p < switchover:
        steps = local_maxima(x)
    else:
        steps = np.arange(1, x.size)
    return steps.astype(float), x[steps]


def _as_points(points) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(points, tuple) and len(points) == 2 and np.ndim(points[0]) == 1:
        steps, values = points
    else:
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        steps, values = arr[:, 0], arr[:, 1]
    return np.asarray(steps, dtype=float), np.asarray(values, dtype=float)


def _predict(model: DecayModel, t: np.ndarray, params: np.ndarray, baseline: float) -> np.ndarray:
    c, r = params
    with np.errstate(over="ignore", invalid="ignore"):
        if model is DecayModel.EXPONENTIAL:
            return c * np.exp(-r * t) + baseline
        return c * t ** (-r) + baseline


def _jacobian(model: DecayModel, t: np.ndarray, params: np.ndarray) -> np.ndarray:
    c, r = params
    with np.errstate(over="ignore", invalid="ignore"):
        if model is DecayModel.EXPONENTIAL:
            shape = np.exp(-r * t)
            return np.column_stack((shape, -c * t * shape))
        shape = t ** (-r)
        return np.column_stack((shape, -c * np.log(t) * shape))


def _log_linear_start(model: DecayModel, t: np.ndarray, excess: np.ndarray) -> np.ndarray:
    keep = excess > 0
    x = t[keep] if model is DecayModel.EXPONENTIAL else np.log(t[keep])
    if np.unique(x).size < 2:
        raise DegenerateFitError("fewer than two points above baseline")
    slope, intercept = np.polyfit(x, np.log(excess[keep]), 1)
    return np.array([math.exp(intercept), -slope])


def _levenberg_marquardt(model: DecayModel, t: np.ndarray, y: np.ndarray, baseline: float,
                         params: np.ndarray) -> Tuple[np.ndarray, float, bool, int]:
    resid = y - _predict(model, t, params, baseline)
    sse = float(resid @ resid)
    damping = INITIAL_DAMPING
    converged = sse == 0.0
    iterations = 0
    while not converged and iterations < MAX_ITERATIONS:
        iterations += 1
        jac = _jacobian(model, t, params)
        alpha0 = jac.T @ jac
        beta = jac.T @ resid
        alpha = alpha0 * (1.0 + damping * np.identity(len(params)))
        try:
            step = np.linalg.solve(alpha, beta)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(alpha, beta, rcond=None)[0]
        small = bool(np.all(np.abs(step) <= PARAMETER_TOL * (np.abs(params) + PARAMETER_TOL)))
        trial = params + step
        trial_resid = y - _predict(model, t, trial, baseline)
        trial_sse = float(trial_resid @ trial_resid)
        if np.isfinite(trial_sse) and trial_sse < sse:
            params, resid, sse = trial, trial_resid, trial_sse
            damping /= 10.0
        else:
            damping *= 10.0
        if small or sse == 0.0:
            converged = True
        elif damping > MAX_DAMPING:
            logger.debug("damping exhausted after %d iterations", iterations)
            break
    return params, sse, converged, iterations


def fit_decay(points, model: DecayModel, m: int) -> FitResult:
    """Fit c e^{-rt} + 1/m or c t^{-r} + 1/m by Levenberg-Marquardt.

    Args:
        points: sequence of (step, value) pairs, or a (steps, values) tuple of arrays
        model: decay law to fit
        m: dimension; the baseline is 1/m

    Returns:
        FitResult; ``converged`` is False when the iteration stalls or the
        fitted amplitude or rate is not positive

    Raises:
        DegenerateFitError: fewer than four points, or no signal above baseline
    """
    model = DecayModel(model)
    t, y = _as_points(points)
    if t.size < MIN_FIT_POINTS:
        raise DegenerateFitError(f"need at least {MIN_FIT_POINTS} points, got {t.size}")
    if model is DecayModel.RATIONAL and np.any(t <= 0):
        raise DomainError("rational decay needs positive steps", key="points")
    baseline = 1.0 / m
    excess = y - baseline
    if np.all(np.abs(excess) <= BASELINE_TOL):
        raise DegenerateFitError("all values sit at the baseline")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise DegenerateFitError("constant data")

    start = _log_linear_start(model, t, excess)
    params, sse, converged, iterations = _levenberg_marquardt(model, t, y, baseline, start)
    c, r = (float(v) for v in params)
    if converged and not (c > 0 and r > 0):
        logger.warning("%s fit ended at non-decaying parameters c=%g r=%g", model.value, c, r)
        converged = False
    if not converged:
        logger.warning("%s fit did not converge after %d iterations", model.value, iterations)

    n = t.size
    r2 = 1.0 - sse / sst
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - FIT_PARAMETERS - 1)
    return FitResult(model, c, r, baseline, r2, adj, n, converged, iterations)


def model_selection(points, m: int, raw: bool = False) -> ModelSelection:
    """Fit both laws and keep the better one.

    Raw probability data is compared by R^2, local maxima by adjusted R^2.
    """
    fits = {}
    for model in DecayModel:
        try:
            fit = fit_decay(points, model, m)
        except FitError as e:
            logger.info("%s fit failed: %s", model.value, e)
            continue
        if fit.converged:
            fits[model] = fit
    if not fits:
        raise FitError("neither decay model could be fitted")

    def score(fit):
        return fit.r_squared if raw else fit.adjusted_r_squared

    selected = max(fits, key=lambda k: score(fits[k]))
    return ModelSelection(selected, fits.get(DecayModel.EXPONENTIAL), fits.get(DecayModel.RATIONAL))


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid of runs, enumerated dims, lambda, p, zeta (slowest first).

    ``model`` None means each cell picks its law by model selection.
    """

    p_values: Tuple[float, ...]
    zeta_values: Tuple[float, ...]
    lambda_values: Tuple[float, ...]
    dims: Tuple[int, ...] = (2,)
    graph: GraphKind = GraphKind.FULLY_CONNECTED
    horizon: int = 2000
    start: int = 1
    model: Optional[DecayModel] = None
    switchover: float = 0.5
    form: ScheduleForm = ScheduleForm.EXPONENTIAL

    def __post_init__(self):
        for name in ("p_values", "zeta_values", "lambda_values", "dims"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigurationError(f"sweep grid needs at least one value in {name}", key=name)
            object.__setattr__(self, name, values)
        object.__setattr__(self, "graph", GraphKind(self.graph))
        if self.graph is GraphKind.CUSTOM:
            raise ConfigurationError("sweeps run on the full or cyclic graph", key="graph")
        if self.model is not None:
            object.__setattr__(self, "model", DecayModel(self.model))
        for p in self.p_values:
            check_probability(p)
        for z in self.zeta_values:
            ScheduleParams(z, self.form)
        for m in self.dims:
            if m < 2:
                raise DomainError(f"dim must be >= 2, got {m}", key="dim")
            if not 1 <= self.start <= m:
                raise DomainError(f"start must be in 1..{m}, got {self.start}", key="start")
        for lam in self.lambda_values:
            if not lam > 0:
                raise DomainError(f"lambda must be positive, got {lam}", key="lambda")
        if self.horizon < 3:
            raise DomainError(f"sweep horizon must be >= 3, got {self.horizon}", key="t")

    def cells(self) -> Iterator[Tuple[int, float, float, float]]:
        return itertools.product(self.dims, self.lambda_values, self.p_values, self.zeta_values)

    def __len__(self) -> int:
        return len(self.dims) * len(self.lambda_values) * len(self.p_values) * len(self.zeta_values)


@dataclass(frozen=True)
class SweepRow:
    p: float
    zeta: float
    coupling: float
    dim: int
    graph: str
    model: str
    c: float
    r: float
    r2: float
    adj_r2: float
    final_deviation: float
    status: str

    HEADER = ("p", "zeta", "lambda", "dim", "graph", "model", "c", "r", "r2", "adj_r2",
              "final_deviation", "status")

    def values(self) -> list:
        return [self.p, self.zeta, self.coupling, self.dim, self.graph, self.model, self.c, self.r,
                self.r2, self.adj_r2, self.final_deviation, self.status]


def _sweep_cell(job) -> SweepRow:
    grid, dim, coupling, p, zeta = job
    spec = GeneratorSpec(grid.graph, dim, coupling)
    traj = evolve(DensityMatrix.basis(dim, grid.start), spec, ScheduleParams(zeta, grid.form),
                  DecoherenceParams(p), grid.horizon)
    deviation = float(np.max(np.abs(traj.final() - 1.0 / dim)))
    raw = p >= grid.switchover
    points = decay_points(traj.series(grid.start), p, grid.switchover)

    fit, status = None, "ok"
    try:
        if grid.model is None:
            fit = model_selection(points, dim, raw=raw).best
        else:
            fit = fit_decay(points, grid.model, dim)
            if not fit.converged:
                status = "fit_failed"
    except DegenerateFitError as e:
        logger.info("cell p=%g zeta=%g lambda=%g dim=%d degenerate: %s", p, zeta, coupling, dim, e)
        status = "degenerate"
    except FitError as e:
        logger.info("cell p=%g zeta=%g lambda=%g dim=%d fit failed: %s", p, zeta, coupling, dim, e)
        status = "fit_failed"

    nan = float("nan")
    return SweepRow(
        p=p, zeta=zeta, coupling=coupling, dim=dim, graph=grid.graph.value,
        model=fit.model.value if fit else "",
        c=fit.c if fit else nan,
        r=fit.r if fit else nan,
        r2=fit.r_squared if fit else nan,
        adj_r2=fit.adjusted_r_squared if fit else nan,
        final_deviation=deviation,
        status=status,
    )


def run_sweep(grid: SweepGrid, workers: int = 1) -> List[SweepRow]:
    """Evolve and fit every grid cell; rows come back in grid order."""
    jobs = [(grid, *cell) for cell in grid.cells()]
    logger.info("sweep: %d cells, t=%d, workers=%d", len(jobs), grid.horizon, workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(_sweep_cell, jobs))
    return [_sweep_cell(job) for job in jobs]


TABLE_PRESETS = {
    1: dict(lambda_values=(0.2,), dims=(2,), p_values=SMALL_P, horizon=2000, model=DecayModel.EXPONENTIAL),
    2: dict(lambda_values=(0.35,), dims=(2,), p_values=SMALL_P, horizon=2000, model=DecayModel.EXPONENTIAL),
    3: dict(lambda_values=(0.5,), dims=(2,), p_values=SMALL_P, horizon=2000, model=DecayModel.EXPONENTIAL),
    4: dict(lambda_values=(0.5,), dims=(2,), p_values=LARGE_P, horizon=200, model=None),
    5: dict(lambda_values=(0.35,), dims=(2,), p_values=LARGE_P, horizon=200, model=None),
    6: dict(lambda_values=(0.2,), dims=(2,), p_values=LARGE_P, horizon=200, model=None),
    7: dict(lambda_values=(0.5,), dims=(5,), p_values=SMALL_P, horizon=2000, model=DecayModel.EXPONENTIAL),
    8: dict(lambda_values=(0.2,), dims=(5,), p_values=LARGE_P, horizon=200, model=None),
}


def table_grid(table: int, **overrides) -> SweepGrid:
    """Grid of a rate-table preset, with optional field overrides."""
    if table not in TABLE_PRESETS:
        raise ConfigurationError(f"unknown table {table}; choose 1..{len(TABLE_PRESETS)}", key="table")
    fields = dict(zeta_values=TABLE_ZETAS, **TABLE_PRESETS[table])
    fields.update(overrides)
    return SweepGrid(**fields)
