#!/usr/bin/env python3

"""Dense complex matrices, a cyclic Jacobi eigensolver and spectral exponentials.

Everything else in the toolkit sits on top of this module. Matrices are small
(m <= 64) so clarity wins over speed; the only hot path, batched propagators
for Monte Carlo, is vectorised with numpy.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from errors import ConvergenceError, DomainError, InvariantError

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-13
MAX_SWEEPS = 100
MAX_DIM = 64

# accepted asymmetry before symmetrization, relative to 1 + max|entry|
HERMITIAN_INPUT_TOL = 1e-10
UNITARY_TOL = 1e-12
RECONSTRUCTION_TOL = 1e-11


def max_abs(a: np.ndarray) -> float:
    """Largest absolute entry (the max-norm used in every report)."""
    return float(np.max(np.abs(a))) if a.size else 0.0


def compensated_cumsum(terms: np.ndarray) -> np.ndarray:
    """Running sums of ``terms`` with Neumaier compensation.

    Returns an array one longer than ``terms`` whose entry n is the sum of the
    first n terms, so entry 0 is the empty sum.
    """
    out = np.empty(len(terms) + 1, dtype=float)
    out[0] = 0.0
    total = 0.0
    carry = 0.0
    for n, x in enumerate(terms, start=1):
        x = float(x)
        s = total + x
        if abs(total) >= abs(x):
            carry += (total - s) + x
        else:
            carry += (x - s) + total
        total = s
        out[n] = total + carry
    return out


def compensated_sum(terms) -> float:
    return float(compensated_cumsum(np.asarray(terms, dtype=float))[-1])


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    """Square, finite, complex matrix. The stored array is read-only."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvariantError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvariantError("matrix has NaN or infinite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> np.ndarray:
        return self.entries.conj().T


@dataclass(frozen=True, eq=False)
class HermitianMatrix(ComplexMatrix):
    """Self-adjoint matrix, symmetrized exactly on construction."""

    def __post_init__(self):
        super().__post_init__()
        a = self.entries
        asym = max_abs(a - a.conj().T)
        if asym > HERMITIAN_INPUT_TOL * (1.0 + max_abs(a)):
            raise InvariantError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
        h = 0.5 * (a + a.conj().T)
        h.setflags(write=False)
        object.__setattr__(self, "entries", h)

    @cached_property
    def spectrum(self) -> "SpectralDecomposition":
        return eigh(self)

    def inf_norm(self) -> float:
        """Operator infinity-norm: largest absolute row sum."""
        return float(np.max(np.sum(np.abs(self.entries), axis=1)))

    def min_modulus(self) -> float:
        """Smallest |G_ij| over all entries (the epsilon_0 of the convergence theorems)."""
        return float(np.min(np.abs(self.entries)))


@dataclass(frozen=True, eq=False)
class UnitaryMatrix(ComplexMatrix):

    def __post_init__(self):
        super().__post_init__()
        u = self.entries
        err = max_abs(u @ u.conj().T - np.eye(self.dim))
        if err > UNITARY_TOL:
            raise InvariantError(f"matrix is not unitary (|UU* - I|_max = {err:.3e})")


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """G = B diag(eigenvalues) B*, eigenvalues sorted descending."""

    eigenvalues: np.ndarray
    eigenvectors: UnitaryMatrix

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        b = self.eigenvectors.entries
        return (b * self.eigenvalues) @ b.conj().T

    def propagator(self, theta: float) -> np.ndarray:
        """Raw array for e^{i theta G}; exactly the identity at theta = 0."""
        if theta == 0.0:
            return np.eye(self.dim, dtype=np.complex128)
        b = self.eigenvectors.entries
        return (b * np.exp(1j * theta * self.eigenvalues)) @ b.conj().T

    def propagators(self, thetas: np.ndarray) -> np.ndarray:
        """Stack of e^{i theta_n G} for a vector of angles, shape (N, m, m)."""
        thetas = np.asarray(thetas, dtype=float)
        b = self.eigenvectors.entries
        phases = np.exp(1j * np.outer(thetas, self.eigenvalues))
        out = np.einsum("ik,nk,jk->nij", b, phases, b.conj())
        zero = thetas == 0.0
        if np.any(zero):
            out[zero] = np.eye(self.dim)
        return out


def _off_diagonal_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    """Annihilate a[p, q] with a complex Jacobi rotation, in place."""
    g = a[p, q]
    mag = abs(g)
    if mag == 0.0:
        return
    phase = g / mag
    tau = (a[q, q].real - a[p, p].real) / (2.0 * mag)
    t = 1.0 / (abs(tau) + np.sqrt(1.0 + tau * tau))
    if tau < 0.0:
        t = -t
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    # phase-align the pair, then a real rotation
    r = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
    idx = [p, q]
    a[:, idx] = a[:, idx] @ r
    a[idx, :] = r.conj().T @ a[idx, :]
    v[:, idx] = v[:, idx] @ r
    a[p, q] = 0.0
    a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real


def eigh(h: HermitianMatrix, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS) -> SpectralDecomposition:
    """Diagonalize a Hermitian matrix by cyclic Jacobi sweeps.

    Args:
        h: matrix to diagonalize
        tol: stop once the off-diagonal Frobenius norm is below tol * |G|_F
        max_sweeps: sweeps allowed before giving up

    Returns:
        SpectralDecomposition with eigenvalues sorted descending (stable on ties)

    Raises:
        ConvergenceError: off-diagonal mass still above threshold after max_sweeps
    """
    if h.dim > MAX_DIM:
        raise DomainError(f"dimension {h.dim} exceeds supported maximum {MAX_DIM}", key="dim")
    a = np.array(h.entries, dtype=np.complex128)
    m = a.shape[0]
    v = np.eye(m, dtype=np.complex128)
    threshold = tol * float(np.linalg.norm(a))

    sweeps = 0
    off = _off_diagonal_norm(a)
    while off > threshold:
        if sweeps == max_sweeps:
            raise ConvergenceError("Jacobi eigensolver did not converge", residual=off, sweeps=sweeps)
        for p in range(m - 1):
            for q in range(p + 1, m):
                _rotate(a, v, p, q)
        sweeps += 1
        off = _off_diagonal_norm(a)
    logger.debug("jacobi converged: m=%d sweeps=%d off=%.3e", m, sweeps, off)

    w = np.diag(a).real.copy()
    order = np.argsort(-w, kind="stable")
    spectrum = SpectralDecomposition(
        eigenvalues=w[order],
        eigenvectors=UnitaryMatrix(v[:, order]),
    )
    residual = max_abs(h.entries - spectrum.reconstruct())
    if residual > RECONSTRUCTION_TOL * (1.0 + max_abs(h.entries)):
        raise ConvergenceError("eigen-decomposition does not reconstruct the input", residual=residual, sweeps=sweeps)
    return spectrum


def unitary_exp(h: HermitianMatrix, theta: float) -> UnitaryMatrix:
    """e^{i theta H} through the spectral decomposition of H."""
    if not np.isfinite(theta):
        raise DomainError(f"theta must be finite, got {theta}", key="theta")
    return UnitaryMatrix(h.spectrum.propagator(float(theta)))


def random_hermitian(m: int, rng: np.random.Generator, min_modulus: float = 0.0,
                     max_modulus: float = 1.0) -> HermitianMatrix:
    """Random Hermitian matrix whose entries all have modulus in [min_modulus, max_modulus]."""
    moduli = rng.uniform(min_modulus, max_modulus, size=(m, m))
    phases = np.exp(2j * np.pi * rng.uniform(size=(m, m)))
    a = np.triu(moduli * phases, 1)
    diag = moduli.diagonal() * rng.choice([-1.0, 1.0], size=m)
    return HermitianMatrix(a + a.conj().T + np.diag(diag))


def as_hermitian(a, name: Optional[str] = None) -> HermitianMatrix:
    """Coerce arrays to HermitianMatrix, passing existing instances through."""
    if isinstance(a, HermitianMatrix):
        return a
    try:
        return HermitianMatrix(np.asarray(a))
    except InvariantError as e:
        raise InvariantError(f"{name or 'matrix'}: {e}") from e
