"""
Wave equation d^2u/ds^2 + BoxTilde u = 0 on the grid: leapfrog evolution, energy in
backward cones, measured propagation speed, heat-wave subordination and the
Gaussian tail estimate used to split functions of sqrt(BoxTilde).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sps
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad, trapezoid

from heatlab.core.discretize import Grid, OperatorKind, SparseOperator, assemble_first_order
from heatlab.core.errors import CFLViolationError, DomainCapacityError
from heatlab.core.krylov import estimate_lambda_max
from heatlab.core.semigroup import SpectralDecomposition, heat_kernel_column, source_vector

logger = logging.getLogger(__name__)

CFL_MAX = 0.5
DRIFT_TOL = 1e-3
# group velocity of the box is at most 1/2; leapfrog adds a few percent
WAVE_SPEED = 0.6
HORIZON_CUTOFF = 1e-8
TAIL_EPS = 1e-16


def _matvec(op: Any) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(op, SparseOperator):
        return op.apply
    return lambda v: op @ v


def _dim(op: Any) -> int:
    return op.dim if isinstance(op, SparseOperator) else int(op.shape[0])


@dataclass(frozen=True, eq=False)
class WaveTrajectory:
    op: Any
    dt: float
    stride: int
    times: np.ndarray
    snapshots: np.ndarray
    velocities: np.ndarray
    cfl: float
    lambda_max: float
    staggered_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def grid(self) -> Grid | None:
        return self.op.grid if isinstance(self.op, SparseOperator) else None

    def __len__(self) -> int:
        return int(self.times.size)


def wave_evolve(
    op: Any,
    u0: np.ndarray,
    v0: np.ndarray,
    T: float,
    dt: float,
    *,
    stride: int = 1,
    lambda_max: float | None = None,
) -> WaveTrajectory:
    """
    Leapfrog u_{k+1} = 2u_k - u_{k-1} - dt^2 A u_k, started with the Taylor step.

    Velocities are central differences; the staggered energy
    ||(u_{k+1} - u_k)/dt||^2 + <A u_{k+1}, u_k> is what the scheme conserves exactly.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    apply = _matvec(op)
    n = _dim(op)
    lam = float(lambda_max) if lambda_max is not None else estimate_lambda_max(apply, n)
    ratio = dt * np.sqrt(max(lam, 0.0))
    if ratio > CFL_MAX:
        raise CFLViolationError(float(ratio), CFL_MAX / np.sqrt(lam))

    steps = max(int(np.ceil(T / dt - 1e-9)), 1)
    u_prev = np.asarray(u0, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    u_curr = u_prev + dt * v0 - 0.5 * dt**2 * apply(u_prev)

    times, snaps, vels, energy = [0.0], [u_prev.copy()], [v0.copy()], []
    for k in range(1, steps + 1):
        u_next = 2.0 * u_curr - u_prev - dt**2 * apply(u_curr)
        diff = (u_curr - u_prev) / dt
        energy.append(float(np.vdot(diff, diff).real + np.vdot(u_curr, apply(u_prev)).real))
        if k % stride == 0 or k == steps:
            times.append(k * dt)
            snaps.append(u_curr.copy())
            vels.append((u_next - u_prev) / (2.0 * dt))
        u_prev, u_curr = u_curr, u_next

    logger.debug("leapfrog: %d steps dt=%.4g cfl=%.3f", steps, dt, ratio)
    return WaveTrajectory(
        op=op,
        dt=float(dt),
        stride=stride,
        times=np.array(times),
        snapshots=np.array(snaps),
        velocities=np.array(vels),
        cfl=float(ratio),
        lambda_max=lam,
        staggered_energy=np.array(energy),
    )


def stable_step(op: Any, *, ratio: float = 0.45) -> tuple[float, float]:
    """(dt, lambda_max) with dt sqrt(lambda_max) = ratio."""
    lam = estimate_lambda_max(_matvec(op), _dim(op))
    return ratio / np.sqrt(max(lam, np.finfo(float).tiny)), lam


@dataclass(frozen=True)
class ConeReport:
    center: complex
    horizon: float
    times: tuple[float, ...]
    energies: tuple[float, ...]
    outside_fraction: tuple[float, ...]
    drift: float

    @property
    def nonincreasing(self) -> bool:
        e = self.energies
        return all(b <= a * (1.0 + DRIFT_TOL) + 1e-300 for a, b in zip(e, e[1:]))


def step_drift(energies: Sequence[float]) -> float:
    """Largest relative growth between consecutive cone energies."""
    growth = [b / a - 1.0 for a, b in zip(energies, energies[1:]) if a > 0]
    return max([0.0, *growth])


def _zbar_for(traj: WaveTrajectory) -> sps.csr_matrix:
    op = traj.op
    if not isinstance(op, SparseOperator) or op.kind is not OperatorKind.BOX_TILDE:
        raise ValueError("cone energies need a trajectory of BoxTilde")
    return assemble_first_order(OperatorKind.ZBAR, op.grid, op.p, op.tau).matrix


def cone_energy(traj: WaveTrajectory, z0: complex, s0: float) -> ConeReport:
    """e[u](s) = int over D(z0, s0 - s) of |u_s|^2 + |ZBar u|^2, for snapshots with s <= s0."""
    grid = traj.grid
    zbar = _zbar_for(traj)
    if grid.boundary_distance(z0) < s0 + 2.0 * grid.h:
        raise DomainCapacityError(f"cone D({z0}, {s0}) leaves the grid")
    h2 = grid.h**2
    dist = np.abs(grid.z - z0)
    times, energies, outside = [], [], []
    for t, u, v in zip(traj.times, traj.snapshots, traj.velocities):
        if t > s0 + 1e-12:
            break
        density = np.abs(v) ** 2 + np.abs(zbar @ u) ** 2
        inside = dist < s0 - t
        e_in = h2 * float(np.sum(density[inside]))
        total = h2 * float(np.sum(density))
        times.append(float(t))
        energies.append(e_in)
        outside.append((total - e_in) / total if total > 0 else 0.0)
    drift = step_drift(energies)
    report = ConeReport(complex(z0), float(s0), tuple(times), tuple(energies), tuple(outside), float(drift))
    if not report.nonincreasing:
        logger.warning("cone energy at %s grew by %.2e", z0, drift)
    return report


def total_energy(traj: WaveTrajectory) -> np.ndarray:
    zbar = _zbar_for(traj)
    h2 = traj.grid.h**2
    return np.array(
        [h2 * float(np.sum(np.abs(v) ** 2 + np.abs(zbar @ u) ** 2)) for u, v in zip(traj.snapshots, traj.velocities)]
    )


@dataclass(frozen=True)
class SpeedReport:
    times: tuple[float, ...]
    radii: tuple[float, ...]
    speed: float


def mass_radius(grid: Grid, values: np.ndarray, z0: complex, threshold: float) -> float:
    """Smallest r such that all but `threshold` of sum |u|^2 lies in the closed disk D(z0, r)."""
    mass = np.abs(values) ** 2
    total = float(np.sum(mass))
    if total == 0.0:
        return 0.0
    dist = np.abs(grid.z - z0)
    order = np.argsort(dist, kind="stable")
    tail = total - np.cumsum(mass[order])
    ok = np.flatnonzero(tail <= threshold * total)
    return float(dist[order][ok[0]]) if ok.size else float(dist.max())


def propagation_speed(
    traj: WaveTrajectory, z0: complex, support_radius0: float, *, threshold: float = 1e-6
) -> SpeedReport:
    """
    Growth rate of the threshold-mass radius, fitted by least squares through
    (0, support_radius0). The grid spacing is the resolution of every radius.
    """
    grid = traj.grid
    if grid is None:
        raise ValueError("propagation speed needs a grid trajectory")
    radii = np.array([mass_radius(grid, u, z0, threshold) for u in traj.snapshots])
    t = traj.times
    growth = np.maximum(radii - support_radius0, 0.0)
    denom = float(np.dot(t, t))
    speed = float(np.dot(t, growth) / denom) if denom > 0 else 0.0
    logger.info("propagation speed from %s: %.3f", z0, speed)
    return SpeedReport(tuple(float(x) for x in t), tuple(float(r) for r in radii), speed)


def stencil_reach(op: SparseOperator) -> int:
    coo = op.matrix.tocoo()
    n = op.grid.n
    da = np.abs(coo.row % n - coo.col % n)
    db = np.abs(coo.row // n - coo.col // n)
    return int(max(da.max(initial=0), db.max(initial=0)))


def support_radius_nodes(grid: Grid, values: np.ndarray, center: int) -> int:
    """Chebyshev radius, in nodes, of the exact support of `values` around `center`."""
    nz = np.flatnonzero(values != 0)
    if nz.size == 0:
        return 0
    a0, b0 = grid.node(center)
    return int(max(np.max(np.abs(nz % grid.n - a0)), np.max(np.abs(nz // grid.n - b0))))


def subordinate(traj: WaveTrajectory, s: float) -> np.ndarray:
    """
    (1/sqrt(pi s)) int_0^R u(r) exp(-r^2/4s) dr by the trapezoid rule over the snapshots.
    u(r) = cos(r sqrt(A)) u0 makes this exp(-s A) u0.
    """
    weights = np.exp(-(traj.times**2) / (4.0 * s))
    return trapezoid(weights[:, None] * traj.snapshots, traj.times, axis=0) / np.sqrt(np.pi * s)


def horizon(s: float) -> float:
    """Wave time beyond which the subordination weight drops below 1e-8."""
    return float(np.sqrt(-4.0 * s * np.log(HORIZON_CUTOFF)))


@dataclass(frozen=True)
class SubordinationReport:
    s: float
    source: int
    probes: tuple[int, ...]
    errors: tuple[float, ...]
    horizon: float
    steps: int

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0


def subordination_check(
    box_tilde: SparseOperator,
    s: float,
    w: int,
    probes: Sequence[int],
    *,
    tol: float = 1e-10,
    cfl: float = 0.4,
) -> SubordinationReport:
    """Compare the Gaussian-weighted wave trajectory from delta_w with the Krylov heat column."""
    grid = box_tilde.grid
    r_max = horizon(s)
    room = float(grid.boundary_distance(grid.z[w]))
    if WAVE_SPEED * r_max > room:
        raise DomainCapacityError(f"horizon {r_max:.3f} needs {WAVE_SPEED * r_max:.3f} of room, have {room:.3f}")
    dt, lam = stable_step(box_tilde, ratio=cfl)
    delta = source_vector(grid, w)
    traj = wave_evolve(box_tilde, delta, np.zeros_like(delta), r_max, dt, lambda_max=lam)
    approx = subordinate(traj, s)
    exact = heat_kernel_column(box_tilde, s, w, tol=tol).values
    scale = float(np.max(np.abs(exact)))
    errors = []
    for z in probes:
        ref = max(abs(exact[z]), 1e-3 * scale)
        errors.append(float(abs(approx[z] - exact[z]) / ref))
    logger.info("subordination s=%.3g: max relative error %.3e over %d probes", s, max(errors, default=0.0), len(errors))
    return SubordinationReport(float(s), w, tuple(int(z) for z in probes), tuple(errors), r_max, int(traj.times.size))


def _smooth_step(x: np.ndarray) -> np.ndarray:
    """0 for x <= 0, 1 for x >= 1, C-infinity in between (ratio of exp(-1/x) bumps)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        g = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
        return np.where(f + g > 0, f / (f + g), 0.0)


@dataclass(frozen=True)
class Mollifier:
    """Even cutoff: 0 on |x| <= ell/2, 1 on |x| >= ell. ell = 0 means no cutoff."""

    ell: float

    def __post_init__(self) -> None:
        if self.ell < 0:
            raise ValueError("ell must be nonnegative")

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        x = np.abs(np.asarray(x, dtype=float))
        if self.ell == 0:
            return np.ones_like(x)
        half = 0.5 * self.ell
        return _smooth_step((x - half) / half)

    def derivative_scale(self, order: int, *, samples: int = 8001) -> float:
        """max |phi^(order)| * ell^order, by repeated finite differences on [0, 1.5 ell]."""
        if self.ell == 0:
            return 0.0
        x = np.linspace(0.0, 1.5 * self.ell, samples)
        y = self(x)
        for _ in range(order):
            y = np.gradient(y, x)
        return float(np.max(np.abs(y)) * self.ell**order)

    def properties(self, *, samples: int = 4001) -> dict[str, bool]:
        x = np.linspace(-2.0 * max(self.ell, 1.0), 2.0 * max(self.ell, 1.0), samples)
        y = self(x)
        ax = np.abs(x)
        return {
            "even": bool(np.allclose(y, self(-x), atol=0.0)),
            "zero_inside": bool(np.all(y[ax <= 0.5 * self.ell] == 0.0)) if self.ell else True,
            "one_outside": bool(np.all(y[ax >= self.ell] == 1.0)),
            "bounded": bool(np.all((y >= 0.0) & (y <= 1.0))),
        }


@dataclass(frozen=True)
class TailEstimate:
    ell: float
    lam: float
    N: int
    value: float
    shape: float
    C_N: float | None = None

    @property
    def bound(self) -> float | None:
        return None if self.C_N is None else self.C_N * self.shape

    @property
    def margin(self) -> float | None:
        return None if self.C_N is None else 1.0 - abs(self.value) / (self.C_N * self.shape)


def tail_shape(ell: float, lam: float, N: int) -> float:
    return float(np.exp(-(ell**2) / 16.0) * (ell**2 + lam**2) ** (-N / 2.0))


def gaussian_tail(ell: float, lam: float, N: int) -> TailEstimate:
    """
    (1/2pi) int phi_ell(xi) exp(-xi^2/4) exp(i lam xi) dxi. The integrand is even, so this
    is (1/pi) int_0^Xi phi_ell(xi) exp(-xi^2/4) cos(lam xi) dxi with exp(-Xi^2/4) = 1e-16.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    moll = Mollifier(ell)
    cut = float(np.sqrt(-4.0 * np.log(TAIL_EPS)))
    pieces = [0.0, cut] if ell == 0 else [0.5 * ell, ell, cut]
    pieces = sorted({min(x, cut) for x in pieces})
    weight = {"weight": "cos", "wvar": lam} if lam > 0 else {}
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        if hi <= lo:
            continue
        part, _ = quad(
            lambda x: float(moll(x)) * np.exp(-(x**2) / 4.0), lo, hi, limit=200, epsabs=1e-15, epsrel=1e-12, **weight,
        )
        total += part
    value = total / np.pi
    shape = tail_shape(ell, lam, N) if ell > 0 else float("nan")
    return TailEstimate(float(ell), float(lam), int(N), float(value), shape)


def fit_tail_constants(estimates: Sequence[TailEstimate]) -> tuple[list[TailEstimate], dict[int, dict[str, Any]]]:
    """C_N = max |value| / shape per N; stability compares the fit on every other sample with the full fit."""
    out: list[TailEstimate] = []
    summary: dict[int, dict[str, Any]] = {}
    for N in sorted({e.N for e in estimates}):
        group = [e for e in estimates if e.N == N]
        ratios = np.array([abs(e.value) / e.shape for e in group])
        c_all = float(np.max(ratios))
        c_half = float(np.max(ratios[::2]))
        summary[N] = {"C_N": c_all, "C_N_half": c_half, "stable": c_all < 2.0 * c_half, "samples": len(group)}
        out.extend(TailEstimate(e.ell, e.lam, e.N, e.value, e.shape, c_all) for e in group)
    return out, summary


@dataclass(frozen=True)
class SupportReport:
    s: float
    radius: float
    inside_max: float
    outside_max: float

    @property
    def ratio(self) -> float:
        return self.outside_max / self.inside_max if self.inside_max > 0 else 0.0


def band_limited_profile(support: float, x: np.ndarray, *, nodes: int = 400) -> np.ndarray:
    """
    F(x) = 2 int_0^support Fhat(xi) cos(x xi) dxi with Fhat = 1 - phi_support, so Fhat is
    smooth, even and supported in [-support, support].
    """
    t, wts = leggauss(nodes)
    xi = 0.5 * support * (t + 1.0)
    wts = 0.5 * support * wts
    fhat = 1.0 - Mollifier(support)(xi)
    return 2.0 * np.cos(np.outer(np.asarray(x, dtype=float), xi)) @ (fhat * wts)


def support_condition_check(decomp: SpectralDecomposition, s: float, w: int, support: float) -> SupportReport:
    """
    Kernel of F(sqrt(s BoxTilde)) at (., w) for a band-limited F; by finite propagation
    speed it vanishes where |z - w| > sqrt(s) * support.
    """
    if not decomp.complete:
        raise ValueError("the support check needs a complete decomposition")
    grid = decomp.op.grid
    x = np.sqrt(np.maximum(s * decomp.eigenvalues, 0.0))
    row = np.conj(decomp.kernel_row(w, band_limited_profile(support, x)))
    radius = float(np.sqrt(s) * support)
    dist = np.abs(grid.z - grid.z[w])
    outside = dist > radius
    inside_max = float(np.max(np.abs(row[~outside])))
    outside_max = float(np.max(np.abs(row[outside]))) if outside.any() else 0.0
    return SupportReport(float(s), radius, inside_max, outside_max)
