from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

from heatlab.core.errors import ConvergenceError

logger = logging.getLogger(__name__)

MatVec = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KrylovResult:
    vector: np.ndarray
    dim: int
    residual: float
    breakdown: bool


class _Basis:
    """Orthonormal Lanczos vectors stored row-wise in a buffer that grows on demand."""

    def __init__(self, n: int, dtype: np.dtype, capacity: int = 32) -> None:
        self._buf = np.zeros((capacity, n), dtype=dtype)
        self.count = 0

    def append(self, v: np.ndarray) -> None:
        if self.count == self._buf.shape[0]:
            grown = np.zeros((2 * self._buf.shape[0], self._buf.shape[1]), dtype=self._buf.dtype)
            grown[: self.count] = self._buf[: self.count]
            self._buf = grown
        self._buf[self.count] = v
        self.count += 1

    @property
    def rows(self) -> np.ndarray:
        return self._buf[: self.count]


def _exp_first_column(alpha: np.ndarray, beta: np.ndarray, s: float) -> np.ndarray:
    theta, u = eigh_tridiagonal(alpha, beta)
    return u @ (np.exp(-s * theta) * u[0, :].conj())


def expm_lanczos(
    matvec: MatVec,
    v: np.ndarray,
    s: float,
    *,
    tol: float = 1e-10,
    max_dim: int = 400,
    check_every: int = 4,
) -> KrylovResult:
    """
    exp(-s A) v for Hermitian positive semidefinite A given as a matvec.

    Hermitian Lanczos with full reorthogonalization. The dimension grows until the
    a-posteriori estimate beta_m |[exp(-s T_m)]_{m,1}| drops below `tol` (relative to
    ||v||); an invariant subspace (lucky breakdown) makes the result exact.
    """
    if s < 0:
        raise ValueError(f"heat time must be nonnegative, got {s}")
    v = np.asarray(v)
    if s == 0:
        return KrylovResult(vector=v.astype(complex, copy=True), dim=0, residual=0.0, breakdown=False)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        return KrylovResult(vector=np.zeros_like(v, dtype=complex), dim=0, residual=0.0, breakdown=False)

    n = v.shape[0]
    basis = _Basis(n, np.dtype(complex))
    basis.append(v.astype(complex) / nrm)
    alpha: list[float] = []
    beta: list[float] = []
    best = np.inf
    eps = np.finfo(float).eps
    limit = min(max_dim, n)

    for j in range(limit):
        w = matvec(basis.rows[j])
        a = float(np.vdot(basis.rows[j], w).real)
        alpha.append(a)
        w = w - a * basis.rows[j]
        if j > 0:
            w = w - beta[j - 1] * basis.rows[j - 1]
        # full reorthogonalization, applied twice
        for _ in range(2):
            w = w - basis.rows.T @ (basis.rows.conj() @ w)
        b = float(np.linalg.norm(w))
        m = j + 1

        if b <= 100 * n * eps * max(1.0, abs(a)):
            y = _exp_first_column(np.array(alpha), np.array(beta), s)
            logger.debug("lanczos expm: invariant subspace at dim %d", m)
            return KrylovResult(vector=nrm * (basis.rows.T @ y), dim=m, residual=0.0, breakdown=True)

        if m % check_every == 0 or m == limit:
            y = _exp_first_column(np.array(alpha), np.array(beta), s)
            residual = b * abs(y[-1])
            best = min(best, residual)
            if residual <= tol:
                logger.debug("lanczos expm: dim %d residual %.2e", m, residual)
                return KrylovResult(vector=nrm * (basis.rows.T @ y), dim=m, residual=residual, breakdown=False)

        beta.append(b)
        basis.append(w / b)

    raise ConvergenceError("Krylov exponential did not converge", best_residual=float(best), iterations=limit)


def estimate_lambda_max(matvec: MatVec, n: int, *, steps: int = 50, seed: int = 0) -> float:
    """Power iteration for the largest eigenvalue of a Hermitian PSD operator."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(steps):
        w = matvec(v)
        lam = float(np.vdot(v, w).real)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    return max(lam, float(np.linalg.norm(matvec(v))))
