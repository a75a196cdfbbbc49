"""
Pointwise kernel estimates as fittable bound shapes, and the probe sweeps that
feed them.

Column names shared by the predictors: s (heat time), d = |z - w|, mu_z and mu_w
(mu_p(., 1/tau) at the two points), order (|alpha|), n (s-derivatives), lam.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from heatlab.core.discretize import Grid, OperatorKind, SparseOperator, assemble_box, assemble_first_order
from heatlab.core.errors import SzegoTruncationError, UnknownTheoremError
from heatlab.core.fitting import BoundReport, BoundSpec, Columns, SampleSet, constant_report, fit_bound
from heatlab.core.polygeom import SubharmonicPolynomial, mu_field
from heatlab.core.semigroup import (
    DENSE_LIMIT,
    DerivativeSpec,
    KernelSlice,
    SliceKind,
    SzegoProjector,
    collar_warnings,
    derivative_kernel,
    g_tilde_column,
    green_and_relative,
    heat_apply,
    heat_kernel_column,
    kernel_context,
    resolvent_column,
    spectral_szego,
    szego_projector,
    word_matrix,
)

logger = logging.getLogger(__name__)


def _gauss(col: Columns, c: float) -> np.ndarray:
    return np.exp(-c * col["d"] ** 2 / col["s"])


def _time_decay(col: Columns, c: float) -> np.ndarray:
    return np.exp(-c * col["s"] / col["mu_w"] ** 2 - c * col["s"] / col["mu_z"] ** 2)


def _space_decay(col: Columns, c: float) -> np.ndarray:
    return np.exp(-c * col["d"] / col["mu_z"] - c * col["d"] / col["mu_w"])


def _s_power(col: Columns) -> np.ndarray:
    return col["s"] ** (1.0 + col["n"] + 0.5 * col["order"])


def _mu_power(col: Columns) -> np.ndarray:
    return col["mu_w"] ** (2.0 + 2.0 * col["n"] + col["order"])


def _heat_first(col: Columns, c: float) -> np.ndarray:
    return _gauss(col, c) * _time_decay(col, c) / _s_power(col)


def _heat_second(col: Columns, c: float) -> np.ndarray:
    return _gauss(col, c) * _space_decay(col, c) / _mu_power(col)


def _relative_first(col: Columns, c: float) -> np.ndarray:
    return _time_decay(col, c) * _gauss(col, c) / _s_power(col)


def _relative_second(col: Columns, c: float) -> np.ndarray:
    return _time_decay(col, c) * _space_decay(col, c) / _mu_power(col)


def _relative_solution(col: Columns, c: float) -> np.ndarray:
    near = col["d"] ** (-1.0 - col["order"])
    far = col["mu_z"] ** (-1.0 - col["order"]) * _space_decay(col, c)
    return np.where(col["d"] <= col["mu_z"], near, far)


def _szego(col: Columns, c: float) -> np.ndarray:
    return col["mu_z"] ** (-2.0 - col["order"]) * _space_decay(col, c)


def _off_diagonal(col: Columns, c: float) -> np.ndarray:
    return _gauss(col, c) * np.maximum(1.0 / (col["mu_z"] * col["mu_w"]), 1.0 / col["s"])


def _free(col: Columns, c: float) -> np.ndarray:
    return _gauss(col, c) / col["s"]


SPECS: dict[str, BoundSpec] = {
    "heat_tilde": BoundSpec(
        "heat_tilde",
        lambda col, c: np.maximum(_heat_first(col, c), _heat_second(col, c)),
        description="H~ and derivatives: Gaussian times the larger of the time-decay and Szego regimes",
        regimes=(_heat_first, _heat_second),
    ),
    "heat_tilde_simplified": BoundSpec(
        "heat_tilde_simplified", _heat_first, description="derivatives of H~ that annihilate S"
    ),
    "relative_heat": BoundSpec(
        "relative_heat",
        lambda col, c: np.maximum(_relative_first(col, c), _relative_second(col, c)),
        description="G~: time decay outside, Gaussian or Szego-type decay inside the max",
        regimes=(_relative_first, _relative_second),
    ),
    "relative_heat_simplified": BoundSpec(
        "relative_heat_simplified", _heat_first, description="derivatives of G~ that annihilate S"
    ),
    "heat": BoundSpec("heat", _heat_first, description="H and derivatives"),
    "relative_solution": BoundSpec("relative_solution", _relative_solution, description="R = Z G"),
    "szego": BoundSpec("szego", _szego, description="Szego kernel"),
    "off_diagonal": BoundSpec(
        "off_diagonal", _off_diagonal, description="H~ for |z - w| > sqrt(s)"
    ),
    "free_heat": BoundSpec("free_heat", _free, description="tau = 0 control: Gaussian over s"),
}

THEOREMS = (
    "heat_tilde",
    "relative_heat",
    "heat",
    "relative_solution",
    "szego",
    "off_diagonal",
    "free_heat",
    "heat_l2",
    "resolvent_l2",
)


def check_theorem(name: str) -> str:
    if name not in THEOREMS:
        raise UnknownTheoremError(f"unknown theorem {name!r}; known: {', '.join(THEOREMS)}")
    return name


@dataclass(frozen=True)
class ProbePolicy:
    """Probe lattice: sources, rays from each source, s ladder and distance ladder."""

    bases: tuple[complex, ...] = (0j,)
    rays: int = 3
    s_count: int = 16
    s_min_factor: float = 4.0
    s_max: float | None = None
    distances: int = 8
    lambdas: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    edge_nodes: int = 4
    # tau = 0: the Gaussian is only resolved a few widths out and for s well above h^2
    free_s_min_factor: float = 32.0
    free_reach: float = 2.0


class KernelWorkbench:
    """Operators and Szego data for one (p, tau, grid), built on first use."""

    def __init__(
        self,
        p: SubharmonicPolynomial | None,
        tau: float,
        grid: Grid,
        *,
        tol: float = 1e-10,
        dense_limit: int = DENSE_LIMIT,
        szego_degree: int | None = None,
    ) -> None:
        self.p = p
        self.tau = float(tau)
        self.grid = grid
        self.tol = tol
        self.dense_limit = dense_limit
        self.szego_degree = szego_degree

    @cached_property
    def box(self) -> SparseOperator:
        return assemble_box(self.p, self.tau, self.grid, twiddle=False)

    @cached_property
    def box_tilde(self) -> SparseOperator:
        return assemble_box(self.p, self.tau, self.grid, twiddle=True)

    @cached_property
    def zbar(self) -> SparseOperator:
        return assemble_first_order(OperatorKind.ZBAR, self.grid, self.p, self.tau)

    @cached_property
    def projector(self) -> SzegoProjector | None:
        if self.tau <= 0 or self.p is None:
            return None
        if self.grid.size <= self.dense_limit:
            return spectral_szego(self.box_tilde, dense_limit=self.dense_limit)
        try:
            return szego_projector(self.p, self.tau, self.grid, self.szego_degree, cross_check=False)
        except SzegoTruncationError as exc:
            logger.warning("%s; falling back to the spectral projector", exc)
            return spectral_szego(self.box_tilde, k=4 * (exc.max_admissible + 2) + 32, dense_limit=self.dense_limit)

    @cached_property
    def deflation(self) -> np.ndarray | None:
        proj = self.projector
        return None if proj is None else proj.image_basis(self.zbar)

    def mu(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.tau <= 0 or self.p is None:
            return np.full(z.shape, np.inf)
        return np.asarray(mu_field(self.p, z, 1.0 / self.tau), dtype=float)


@dataclass
class _Collected:
    columns: dict[str, list[float]] = field(default_factory=dict)
    values: list[float] = field(default_factory=list)
    excluded: int = 0
    warnings: list[str] = field(default_factory=list)

    def add(self, row: dict[str, float], value: float) -> None:
        for k, v in row.items():
            self.columns.setdefault(k, []).append(float(v))
        self.values.append(float(value))

    def sample_set(self) -> SampleSet:
        return SampleSet({k: np.array(v) for k, v in self.columns.items()}, np.array(self.values))


def _ray_nodes(bench: KernelWorkbench, w: int, d_max: float, policy: ProbePolicy) -> tuple[np.ndarray, np.ndarray, int]:
    grid = bench.grid
    wz = complex(grid.z[w])
    seen: dict[int, float] = {}
    dropped = 0
    for k in range(policy.rays):
        theta = 2.0 * np.pi * k / policy.rays + 0.3
        for d in np.linspace(0.0, d_max, policy.distances):
            z = wz + d * np.exp(1j * theta)
            if grid.boundary_distance(z) < policy.edge_nodes * grid.h:
                dropped += 1
                continue
            idx = grid.nearest(z)
            seen.setdefault(idx, abs(complex(grid.z[idx]) - wz))
    nodes = np.array(sorted(seen), dtype=int)
    return nodes, np.array([seen[i] for i in nodes]), dropped


def _s_ladder(bench: KernelWorkbench, wz: complex, policy: ProbePolicy) -> np.ndarray:
    grid = bench.grid
    mu = float(bench.mu(np.array([wz]))[0])
    room = float(grid.boundary_distance(wz)) - 2.0 * grid.h
    top = policy.s_max if policy.s_max is not None else 4.0 * max(1.0, mu**2 if np.isfinite(mu) else 1.0)
    top = min(top, (room / 3.0) ** 2)
    factor = policy.s_min_factor if np.isfinite(mu) else policy.free_s_min_factor
    bottom = factor * grid.h**2
    if top <= bottom:
        return np.array([bottom])
    return np.geomspace(bottom, top, policy.s_count)


def _source_nodes(bench: KernelWorkbench, policy: ProbePolicy) -> list[int]:
    return sorted({bench.grid.nearest(complex(b)) for b in policy.bases})


def _heat_slice(theorem: str, bench: KernelWorkbench, s: float, w: int) -> KernelSlice:
    if theorem == "heat":
        return heat_kernel_column(bench.box, s, w, tol=bench.tol, deflate=bench.deflation)
    if theorem == "relative_heat":
        return g_tilde_column(bench.box_tilde, bench.projector, s, w, tol=bench.tol)
    return heat_kernel_column(bench.box_tilde, s, w, tol=bench.tol)


def apply_derivative(slice_: KernelSlice, bench: KernelWorkbench, spec: DerivativeSpec) -> KernelSlice:
    if not (spec.z_word or spec.w_word or spec.s_order):
        return slice_
    physical = slice_.kind is SliceKind.H
    ctx = kernel_context(
        slice_,
        op=bench.box if physical else bench.box_tilde,
        projector=bench.projector,
        tol=bench.tol,
        deflate=bench.deflation if physical else None,
    )
    return derivative_kernel(slice_, spec, ctx)


def _collect_heat(theorem: str, bench: KernelWorkbench, policy: ProbePolicy, spec: DerivativeSpec) -> _Collected:
    out = _Collected()
    grid = bench.grid
    for w in _source_nodes(bench, policy):
        wz = complex(grid.z[w])
        out.warnings.extend(collar_warnings(grid, w, s=None, p=bench.p, tau=bench.tau))
        mu_w = float(bench.mu(np.array([wz]))[0])
        for s in _s_ladder(bench, wz, policy):
            reach = 3.0 * max(np.sqrt(s), min(mu_w, 3.0)) if np.isfinite(mu_w) else policy.free_reach * np.sqrt(s)
            d_max = min(float(grid.boundary_distance(wz)), reach)
            nodes, dist, dropped = _ray_nodes(bench, w, d_max, policy)
            out.excluded += dropped
            slice_ = apply_derivative(_heat_slice(theorem, bench, s, w), bench, spec)
            values = slice_.density()
            mu_z = bench.mu(grid.z[nodes])
            for z, d, mz in zip(nodes, dist, mu_z):
                if theorem == "off_diagonal" and d <= np.sqrt(s):
                    out.excluded += 1
                    continue
                row = {"s": s, "d": d, "mu_z": mz, "mu_w": mu_w, "order": spec.order, "n": spec.s_order}
                out.add(row, abs(values[z]))
    return out


def _collect_static(theorem: str, bench: KernelWorkbench, policy: ProbePolicy, spec: DerivativeSpec) -> _Collected:
    out = _Collected()
    grid = bench.grid
    for w in _source_nodes(bench, policy):
        wz = complex(grid.z[w])
        mu_w = float(bench.mu(np.array([wz]))[0])
        d_max = min(float(grid.boundary_distance(wz)), 3.0 * min(mu_w, 3.0))
        nodes, dist, dropped = _ray_nodes(bench, w, d_max, policy)
        out.excluded += dropped
        if theorem == "szego":
            slice_ = bench.projector.column(w)
            slice_ = derivative_kernel(slice_, spec, kernel_context(slice_, projector=bench.projector))
            order = spec.order
        else:
            _, rel = green_and_relative(bench.p, bench.tau, grid, w, projector=bench.projector)
            out.warnings.extend(rel.warnings)
            if spec.z_word:
                rel = rel.with_values(word_matrix(spec.z_word, grid, bench.p, bench.tau) @ rel.values)
            order = len(spec.z_word)
        values = slice_.density() if theorem == "szego" else rel.density()
        mu_z = bench.mu(grid.z[nodes])
        for z, d, mz in zip(nodes, dist, mu_z):
            if theorem == "relative_solution" and d == 0.0:
                out.excluded += 1
                continue
            out.add({"d": d, "mu_z": mz, "mu_w": mu_w, "order": order}, abs(values[z]))
    return out


def _ablation(report: BoundReport, spec: BoundSpec, samples: SampleSet) -> dict[str, int]:
    if not spec.regimes or report.c is None:
        return {}
    counts = {}
    for i, regime in enumerate(spec.regimes):
        pred = report.C * regime(samples.columns, report.c)
        counts[f"regime_{i + 1}"] = int(np.sum(samples.values > pred * (1.0 + 1e-12)))
    return counts


def _heat_l2(bench: KernelWorkbench, policy: ProbePolicy, spec: DerivativeSpec) -> BoundReport:
    """||Y^alpha_z H~(s, z, .)||: the row of Y e^{-s A} is exp(-s A) applied to conj(row of Y) / h^2."""
    grid = bench.grid
    lhs, rhs = [], []
    for z in _source_nodes(bench, policy):
        zz = complex(grid.z[z])
        mu = float(bench.mu(np.array([zz]))[0])
        row = word_matrix(spec.z_word, grid, bench.p, bench.tau).getrow(z).toarray().ravel()
        for s in _s_ladder(bench, zz, policy):
            vec = heat_apply(bench.box_tilde, s, np.conj(row) / grid.h**2, tol=bench.tol)
            lhs.append(grid.h * float(np.linalg.norm(vec)))
            rhs.append(max(s ** (-0.5 - 0.5 * spec.order), mu ** (-1.0 - spec.order)))
    return constant_report(
        "heat_l2", np.array(lhs), np.array(rhs),
        provenance={"tau": bench.tau, "n": grid.n, "L": grid.half_width, "derivative": spec.label},
    )


def _resolvent_l2(bench: KernelWorkbench, policy: ProbePolicy) -> BoundReport:
    grid = bench.grid
    lhs, rhs = [], []
    for w in _source_nodes(bench, policy):
        mu = float(bench.mu(np.array([complex(grid.z[w])]))[0])
        for lam in policy.lambdas:
            lhs.append(resolvent_column(bench.box_tilde, lam, w).norm())
            rhs.append(max(1.0 / (lam * mu), lam**-0.5))
    return constant_report(
        "resolvent_l2", np.array(lhs), np.array(rhs),
        provenance={"tau": bench.tau, "n": grid.n, "L": grid.half_width, "lambdas": list(policy.lambdas)},
    )


def verify_kernel_bound(
    theorem: str,
    p: SubharmonicPolynomial | None,
    tau: float,
    grid: Grid,
    *,
    probes: ProbePolicy | None = None,
    derivative: DerivativeSpec | None = None,
    bench: KernelWorkbench | None = None,
    tol: float = 1e-10,
) -> BoundReport:
    """
    Sweep the probe lattice for one estimate and fit its constants.

    For the two-regime estimates on H~ and G~, derivative words that annihilate S are
    checked against the simplified single-regime shape.
    """
    check_theorem(theorem)
    policy = probes or ProbePolicy()
    spec_d = derivative or DerivativeSpec()
    bench = bench or KernelWorkbench(p, tau, grid, tol=tol)
    if theorem in ("relative_heat", "relative_solution", "szego", "heat") and bench.tau <= 0:
        raise ValueError(f"{theorem} needs tau > 0")
    if theorem == "heat_l2":
        return _heat_l2(bench, policy, spec_d)
    if theorem == "resolvent_l2":
        return _resolvent_l2(bench, policy)

    if theorem in ("szego", "relative_solution"):
        collected = _collect_static(theorem, bench, policy, spec_d)
        spec = SPECS[theorem]
    else:
        collected = _collect_heat(theorem, bench, policy, spec_d)
        name = theorem
        if theorem in ("heat_tilde", "relative_heat") and spec_d.annihilates_szego():
            name = f"{theorem}_simplified"
        spec = SPECS[name]
    samples = collected.sample_set()
    provenance: dict[str, Any] = {
        "tau": bench.tau,
        "n": grid.n,
        "L": grid.half_width,
        "h": grid.h,
        "derivative": spec_d.label,
        "bases": [[complex(b).real, complex(b).imag] for b in policy.bases],
        "collar_warnings": len(collected.warnings),
    }
    report = fit_bound(samples, spec, provenance=provenance, excluded=collected.excluded)
    ablation = _ablation(report, spec, samples)
    if ablation:
        report.provenance["single_regime_violations"] = ablation
    logger.info("%s tau=%s: c=%s C=%.3e violations=%d", spec.name, bench.tau, report.c, report.C, report.violations)
    return report


def tau_spread(reports: Sequence[BoundReport]) -> dict[str, Any]:
    """Spread of fitted constants across tau for one estimate."""
    cs = [r.c for r in reports if r.c is not None]
    Cs = [r.C for r in reports]
    out: dict[str, Any] = {"C_min": min(Cs), "C_max": max(Cs), "C_ratio": max(Cs) / min(Cs) if min(Cs) > 0 else np.inf}
    if cs:
        out.update({"c_min": min(cs), "c_max": max(cs)})
    return out


def refinement_drift(coarse: BoundReport, fine: BoundReport) -> float:
    if coarse.c is None or fine.c is None:
        return 0.0
    top = max(abs(coarse.c), abs(fine.c))
    return abs(coarse.c - fine.c) / top if top > 0 else 0.0
