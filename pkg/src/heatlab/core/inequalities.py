"""
Discrete checks of the embedding, Poincare, cancellation and scalar inequalities,
and of the intertwining between the two boxes.

Integrals are h^2-weighted sums over the nodes of the region. The sharp-constant
inequalities get the slack factor (1 + 5h/delta); the others fit their constant.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from heatlab.core.bounds import KernelWorkbench
from heatlab.core.discretize import Grid, OperatorKind, assemble_first_order, interior_bumps, l2_norm
from heatlab.core.errors import UnsupportedKernelError
from heatlab.core.fitting import BoundReport, constant_report
from heatlab.core.polygeom import SubharmonicPolynomial
from heatlab.core.semigroup import (
    DerivativeSpec,
    decompose,
    derivative_kernel,
    green_apply,
    heat_apply,
    heat_kernel_column,
    intertwining_residual,
    kernel_context,
    product_bound,
    word_matrix,
)

logger = logging.getLogger(__name__)

SLACK = 5.0
MAX_REDRAWS = 50


class InequalityCase(str, enum.Enum):
    POINCARE = "poincare"
    SOBOLEV = "sobolev"
    POINCARE_COMPACT = "poincare_compact"
    CANCEL_HEAT = "cancel_heat"
    CANCEL_GREEN = "cancel_green"
    SCALAR_MAX = "scalar_max"
    PRODUCTS = "products"


@dataclass(frozen=True)
class InequalityReport:
    case: InequalityCase
    trials: int
    failures: int
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    seed: int
    slack: float | None = None
    fitted: BoundReport | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.failures > 0 or (self.fitted is not None and self.fitted.failed)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "case": self.case.value,
            "trials": self.trials,
            "failures": self.failures,
            "seed": self.seed,
            "min_margin": float(np.min(1.0 - np.array(self.lhs) / np.array(self.rhs))) if self.lhs else None,
            "provenance": dict(self.provenance),
        }
        if self.slack is not None:
            out["slack"] = self.slack
        if self.fitted is not None:
            out["fitted"] = self.fitted.to_dict()
        return out


def bump(grid: Grid, center: complex, radius: float, amp: complex = 1.0, wave: complex = 0j) -> np.ndarray:
    """amp * exp(-1/(1 - rho^2)) * exp(i Re(conj(wave) (z - center))), supported in D(center, radius)."""
    rho2 = np.abs(grid.z - center) ** 2 / radius**2
    out = np.zeros(grid.size, dtype=complex)
    inside = rho2 < 1.0
    phase = np.exp(1j * np.real(np.conj(wave) * (grid.z[inside] - center)))
    out[inside] = amp * np.exp(-1.0 / (1.0 - rho2[inside])) * phase
    return out


def _random_point(rng: np.random.Generator, reach: float) -> complex:
    return complex(rng.uniform(-reach, reach), rng.uniform(-reach, reach))


def _random_amp(rng: np.random.Generator) -> complex:
    return complex(rng.normal(), rng.normal())


def _in_square(grid: Grid, center: complex, side: float) -> np.ndarray:
    d = grid.z - center
    return (np.abs(d.real) <= 0.5 * side) & (np.abs(d.imag) <= 0.5 * side)


def _integral(grid: Grid, values: np.ndarray, mask: np.ndarray | None = None) -> float:
    sq = np.abs(values) ** 2
    return float(grid.h**2 * np.sum(sq[mask] if mask is not None else sq))


def _check_poincare(bench: KernelWorkbench, rng: np.random.Generator) -> tuple[float, float, dict[str, Any]]:
    grid = bench.grid
    x1 = assemble_first_order(OperatorKind.X1, grid, bench.p, bench.tau).matrix
    x2 = assemble_first_order(OperatorKind.X2, grid, bench.p, bench.tau).matrix
    L, h = grid.half_width, grid.h
    delta = rng.uniform(8.0 * h, L / 3.0)
    center = _random_point(rng, L - 0.5 * delta - 4.0 * h)
    radius = rng.uniform(delta, 3.0 * delta)
    f = bump(grid, center + _random_point(rng, 0.5 * delta), radius, _random_amp(rng), _random_point(rng, 1.0 / radius))
    mask = _in_square(grid, center, delta)
    nodes = np.flatnonzero(mask)
    x = int(rng.choice(nodes))
    x1f = x1 @ f
    rhs = 4.0 * (
        _integral(grid, f, mask) / delta**2
        + _integral(grid, x1f, mask)
        + _integral(grid, x2 @ f, mask)
        + delta**2 * _integral(grid, x2 @ x1f, mask)
    )
    return float(abs(f[x]) ** 2), rhs * (1.0 + SLACK * h / delta), {"delta": delta}


def _check_poincare_compact(bench: KernelWorkbench, rng: np.random.Generator) -> tuple[float, float, dict[str, Any]]:
    grid = bench.grid
    j = int(rng.integers(1, 3))
    xj = assemble_first_order(OperatorKind(f"X{j}"), grid, bench.p, bench.tau).matrix
    L, h = grid.half_width, grid.h
    delta = rng.uniform(8.0 * h, L / 3.0)
    center = _random_point(rng, L - 0.5 * delta - 4.0 * h)
    radius = 0.5 * delta * rng.uniform(0.6, 1.0)
    phi = bump(grid, center, radius, _random_amp(rng), _random_point(rng, 1.0 / radius))
    lhs = l2_norm(grid, phi)
    rhs = np.sqrt(2.0) * delta * l2_norm(grid, xj @ phi)
    return lhs, rhs * (1.0 + SLACK * h / delta), {"delta": delta, "j": j}


def _disk_setup(grid: Grid, rng: np.random.Generator, bench: KernelWorkbench) -> tuple[complex, float, int]:
    L, h = grid.half_width, grid.h
    delta = rng.uniform(6.0 * h, L / 4.0)
    z = grid.nearest(_random_point(rng, L - delta - 4.0 * h))
    return complex(grid.z[z]), delta, z


def _supported_bump(grid: Grid, rng: np.random.Generator, z: complex, delta: float) -> np.ndarray:
    # support D(c, r) inside D(z, delta) and containing z
    r = delta * rng.uniform(0.5, 0.9)
    offset = (delta - r) * rng.uniform(0.0, 0.9) * np.exp(2j * np.pi * rng.uniform())
    offset = offset if abs(offset) < r else offset * 0.5 * r / abs(offset)
    return bump(grid, z + offset, r, _random_amp(rng), _random_point(rng, 1.0 / r))


def _check_sobolev(bench: KernelWorkbench, rng: np.random.Generator) -> tuple[float, float, dict[str, Any]]:
    grid = bench.grid
    zc, delta, z = _disk_setup(grid, rng, bench)
    f = _supported_bump(grid, rng, zc, delta)
    disk = np.abs(grid.z - zc) < delta
    box_f = bench.box.matrix @ f
    rhs = (np.sqrt(_integral(grid, f, disk)) + delta**2 * np.sqrt(_integral(grid, box_f, disk))) / delta
    return float(abs(f[z])), float(rhs), {"delta": delta}


def _box_power_norm(bench: KernelWorkbench, phi: np.ndarray, k: int) -> float:
    v = phi
    for _ in range(k):
        v = bench.box.matrix @ v
    return l2_norm(bench.grid, v)


def _random_word(rng: np.random.Generator, length: int) -> tuple[str, ...]:
    return tuple(str(x) for x in rng.choice(["Z", "ZBar"], size=length))


def _cancel_rhs(bench: KernelWorkbench, phi: np.ndarray, order: int, delta: float, scale: float) -> float:
    k = order // 2
    if order % 2 == 0:
        return scale * (_box_power_norm(bench, phi, k) + delta**2 * _box_power_norm(bench, phi, k + 1))
    return scale * (delta * _box_power_norm(bench, phi, k + 1) + delta**3 * _box_power_norm(bench, phi, k + 2))


def _check_cancel_heat(bench: KernelWorkbench, rng: np.random.Generator) -> tuple[float, float, dict[str, Any]]:
    grid = bench.grid
    zc, delta, z = _disk_setup(grid, rng, bench)
    phi = _supported_bump(grid, rng, zc, delta)
    order = int(rng.integers(0, 3))
    word = _random_word(rng, order)
    s = float(np.exp(rng.uniform(np.log(4.0 * grid.h**2), np.log(4.0))))
    u = heat_apply(bench.box, s, phi - _project(bench, phi), tol=bench.tol)
    lhs = abs((word_matrix(word, grid, bench.p, bench.tau) @ u)[z])
    return float(lhs), _cancel_rhs(bench, phi, order, delta, 1.0 / delta), {"delta": delta, "word": list(word), "s": s}


def _project(bench: KernelWorkbench, v: np.ndarray) -> np.ndarray:
    d = bench.deflation
    return np.zeros_like(v) if d is None else d @ (d.conj().T @ v)


def _check_cancel_green(bench: KernelWorkbench, rng: np.random.Generator) -> tuple[float, float, dict[str, Any]]:
    grid = bench.grid
    zc, delta, z = _disk_setup(grid, rng, bench)
    phi = _supported_bump(grid, rng, zc, delta)
    order = int(rng.integers(0, 3))
    word = _random_word(rng, order)
    u = green_apply(bench.box, phi, bench.deflation)
    lhs = abs((word_matrix(word, grid, bench.p, bench.tau) @ u)[z])
    mu = float(bench.mu(np.array([zc]))[0])
    if order == 0 and delta < mu:
        rhs = delta * (np.log(2.0 * mu / delta) * l2_norm(grid, phi) + delta**2 * _box_power_norm(bench, phi, 1))
        branch = "log"
    else:
        rhs = _cancel_rhs(bench, phi, order, delta, delta)
        branch = "power"
    return float(lhs), float(rhs), {"delta": delta, "word": list(word), "branch": branch}


def scalar_max_sides(a: float, b: float, s: np.ndarray, d: np.ndarray, mu: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Product of two max-of-regime factors against the merged max, the right side with c halved;
    mu is mu at z and d >= mu.
    """
    gauss = np.exp(-c * d**2 / s)
    left = (
        gauss
        * np.maximum(s**-a, mu ** (-2 * a))
        * np.maximum(np.exp(-c * s / mu**2) / s**b, np.exp(-c * d / mu) / mu ** (2 * b))
    )
    half = 0.5 * c
    right = np.exp(-half * d**2 / s) * np.maximum(
        np.exp(-half * s / mu**2) / s ** (a + b), np.exp(-half * d / mu) / mu ** (2 * (a + b))
    )
    return left, right


def _scalar_max(trials: int, seed: int, c: float = 1.0) -> list[InequalityReport]:
    rng = np.random.default_rng(seed)
    reports = []
    for a in (0.5, 1.0, 1.5):
        for b in (0.5, 1.0, 1.5):
            mu = np.exp(rng.uniform(np.log(0.1), np.log(10.0), trials))
            d = mu * rng.uniform(1.0, 10.0, trials)
            s = mu**2 * np.exp(rng.uniform(np.log(1e-2), np.log(1e2), trials))
            left, right = scalar_max_sides(a, b, s, d, mu, c)
            fitted = constant_report(f"scalar_max_a{a}_b{b}", left, right, provenance={"a": a, "b": b, "c": c})
            reports.append(
                InequalityReport(
                    InequalityCase.SCALAR_MAX, trials, fitted.violations,
                    tuple(float(x) for x in left), tuple(float(fitted.C * x) for x in right), seed,
                    fitted=fitted, provenance={"a": a, "b": b, "C": fitted.C},
                )
            )
    return reports


def _products(bench: KernelWorkbench, trials: int, seed: int) -> InequalityReport:
    grid = bench.grid
    if grid.size > bench.dense_limit:
        raise UnsupportedKernelError("the product check needs a grid within the dense limit")
    decomp = decompose(bench.box_tilde, "full", dense_limit=bench.dense_limit)
    rng = np.random.default_rng(seed)
    lhs, rhs = [], []
    failures = 0
    root = np.sqrt(np.maximum(decomp.eigenvalues, 0.0))
    for _ in range(trials):
        s = float(np.exp(rng.uniform(np.log(1e-2), np.log(4.0))))
        z = grid.nearest(_random_point(rng, 0.5 * grid.half_width))
        g = rng.uniform(0.2, 2.0) * np.cos(rng.uniform(0.0, 5.0) * root + rng.uniform(0.0, 2.0 * np.pi))
        left, right = product_bound(decomp, z, np.exp(-s * decomp.eigenvalues), g)
        lhs.append(left)
        rhs.append(right + 1e-8)
        failures += int(left > right + 1e-8)
    return InequalityReport(InequalityCase.PRODUCTS, trials, failures, tuple(lhs), tuple(rhs), seed)


_CHECKS: dict[InequalityCase, Callable[[KernelWorkbench, np.random.Generator], tuple[float, float, dict[str, Any]]]] = {
    InequalityCase.POINCARE: _check_poincare,
    InequalityCase.POINCARE_COMPACT: _check_poincare_compact,
    InequalityCase.SOBOLEV: _check_sobolev,
    InequalityCase.CANCEL_HEAT: _check_cancel_heat,
    InequalityCase.CANCEL_GREEN: _check_cancel_green,
}
_SHARP = {InequalityCase.POINCARE, InequalityCase.POINCARE_COMPACT}


def verify_inequality(
    case: InequalityCase | str,
    p: SubharmonicPolynomial | None,
    tau: float,
    grid: Grid,
    *,
    trials: int = 100,
    seed: int = 0,
    bench: KernelWorkbench | None = None,
) -> InequalityReport | list[InequalityReport]:
    """
    Run one inequality over seeded random trials. The scalar max inequality returns
    one report per (a, b) pair.
    """
    case = InequalityCase(case)
    if case is InequalityCase.SCALAR_MAX:
        return _scalar_max(max(trials, 1000), seed)
    bench = bench or KernelWorkbench(p, tau, grid)
    if case is InequalityCase.PRODUCTS:
        return _products(bench, trials, seed)
    if case in (InequalityCase.SOBOLEV, InequalityCase.CANCEL_HEAT, InequalityCase.CANCEL_GREEN) and bench.tau <= 0:
        raise ValueError(f"{case.value} needs tau > 0")

    rng = np.random.default_rng(seed)
    check = _CHECKS[case]
    lhs, rhs, meta = [], [], []
    redraws = 0
    while len(lhs) < trials:
        left, right, info = check(bench, rng)
        if not np.isfinite(right) or right <= 0:
            redraws += 1
            if redraws > MAX_REDRAWS * trials:
                raise RuntimeError(f"{case.value}: could not draw admissible trials")
            continue
        lhs.append(left)
        rhs.append(right)
        meta.append(info)
    provenance = {"tau": bench.tau, "n": grid.n, "L": grid.half_width, "redraws": redraws}
    lhs_a, rhs_a = np.array(lhs), np.array(rhs)
    if case in _SHARP:
        failures = int(np.sum(lhs_a > rhs_a))
        if failures:
            logger.warning("%s: %d of %d trials fail", case.value, failures, trials)
        return InequalityReport(case, trials, failures, tuple(lhs), tuple(rhs), seed, slack=SLACK, provenance=provenance)
    fitted = constant_report(case.value, lhs_a, rhs_a, provenance=provenance)
    if case is InequalityCase.CANCEL_GREEN:
        provenance["log_branch"] = sum(1 for m in meta if m["branch"] == "log")
    return InequalityReport(
        case, trials, fitted.violations, tuple(lhs), tuple(float(fitted.C * r) for r in rhs), seed,
        fitted=fitted, provenance=provenance,
    )


@dataclass(frozen=True)
class IntertwiningReport:
    matrix_defect: float
    krylov_residual: float
    kernel_residual: float
    trials: int
    s_values: tuple[float, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return self.matrix_defect <= 1e-12 and self.krylov_residual <= 1e-8 and self.kernel_residual <= 1e-8

    def to_dict(self) -> dict[str, Any]:
        return {
            "matrix_defect": self.matrix_defect,
            "krylov_residual": self.krylov_residual,
            "kernel_residual": self.kernel_residual,
            "trials": self.trials,
            "s_values": list(self.s_values),
            "passed": self.passed,
        }


def verify_intertwining(
    p: SubharmonicPolynomial,
    tau: float,
    grid: Grid,
    s_values: tuple[float, ...] = (0.1, 0.5, 2.0),
    *,
    trials: int = 10,
    seed: int = 0,
    tol: float = 1e-12,
    bench: KernelWorkbench | None = None,
) -> IntertwiningReport:
    """
    Box ZBar = ZBar BoxTilde as matrices (relative to the largest entry), through the
    semigroups on random bumps, and on kernels as ZBar_z H~ = -WBar_w H.
    """
    if tau <= 0:
        raise ValueError(f"intertwining is checked for tau > 0, got {tau}")
    bench = bench or KernelWorkbench(p, tau, grid, tol=tol)
    box, box_t, zbar = bench.box, bench.box_tilde, bench.zbar
    diff = (box.matrix @ zbar.matrix - zbar.matrix @ box_t.matrix).tocsr()
    scale = float(np.max(np.abs((box.matrix @ zbar.matrix).data)))
    matrix_defect = float(np.max(np.abs(diff.data))) / scale if diff.nnz else 0.0

    rng = np.random.default_rng(seed)
    worst = 0.0
    for f in interior_bumps(grid, trials, rng):
        for s in s_values:
            worst = max(worst, *intertwining_residual(box, box_t, zbar, s, f, tol=tol))

    w = grid.nearest(0j)
    kernel_worst = 0.0
    for s in s_values:
        lhs = zbar.matrix @ heat_kernel_column(box_t, s, w, tol=tol).values
        h_slice = heat_kernel_column(box, s, w, tol=tol)
        rhs = derivative_kernel(h_slice, DerivativeSpec(w_word=("WBar",)), kernel_context(h_slice, op=box, tol=tol))
        kernel_worst = max(kernel_worst, float(np.max(np.abs(lhs + rhs.values)) / np.max(np.abs(lhs))))
    report = IntertwiningReport(matrix_defect, float(worst), kernel_worst, trials, tuple(s_values), tol)
    logger.info("intertwining tau=%s: matrix %.2e krylov %.2e kernel %.2e", tau, matrix_defect, worst, kernel_worst)
    return report
