from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from heatlab.core.discretize import Grid, SparseOperator, assemble_box
from heatlab.core.errors import DomainCapacityError
from heatlab.core.inequalities import bump
from heatlab.core.io import trajectory_frame, write_frame, write_json
from heatlab.core.models import ExperimentConfig, as_complex
from heatlab.core.semigroup import DENSE_LIMIT, decompose, source_vector
from heatlab.core.wavecheck import (
    Mollifier,
    cone_energy,
    fit_tail_constants,
    gaussian_tail,
    propagation_speed,
    stable_step,
    stencil_reach,
    subordination_check,
    support_condition_check,
    support_radius_nodes,
    total_energy,
    wave_evolve,
)
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

SPEED_LIMIT = 1.05
OUTSIDE_LIMIT = 1e-6
SUBORDINATION_LIMIT = 0.05
SUPPORT_WIDTH = 4.0
LOCALITY_STEPS = 6


def _locality(box_t: SparseOperator, w: int, dt: float, lam: float) -> dict[str, Any]:
    """Single-node data: the support may grow by at most one stencil reach per leapfrog step."""
    delta = source_vector(box_t.grid, w)
    traj = wave_evolve(box_t, delta, np.zeros_like(delta), LOCALITY_STEPS * dt, dt, lambda_max=lam)
    reach = stencil_reach(box_t)
    radii = [support_radius_nodes(box_t.grid, u, w) for u in traj.snapshots]
    ok = all(r <= reach * k for k, r in enumerate(radii))
    return {"reach": reach, "radii": radii, "ok": ok}


def _annulus(grid: Grid, center: complex, inner: float, outer: float) -> np.ndarray:
    """Smooth data vanishing on D(center, inner): a radial bump on the annulus."""
    r = np.abs(grid.z - center)
    t = (r - inner) / (outer - inner)
    out = np.zeros(grid.size, dtype=complex)
    inside = (t > 0) & (t < 1)
    out[inside] = np.exp(-1.0 / (1.0 - (2.0 * t[inside] - 1.0) ** 2))
    return out


def _probe_nodes(grid: Grid, w: int, count: int, spread: float) -> list[int]:
    zw = complex(grid.z[w])
    angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    radii = np.linspace(0.0, spread, count)
    return [grid.nearest(zw + r * np.exp(1j * a)) for r, a in zip(radii, angles)]


class WaveModule(ExperimentModule):
    @property
    def name(self) -> str:
        return "wave"

    @property
    def description(self) -> str:
        return "Leapfrog wave runs: cone energies, propagation speed, heat-wave subordination, Gaussian tails."

    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        plot = bool(kwargs.get("plot", config.plot))
        wcfg = config.wave
        grid = cell.grid.build()
        p = config.build_polynomial()
        box_t = assemble_box(p, cell.tau, grid, twiddle=True)
        target = cell.directory(out_dir, self.name)
        files: list[Path] = []
        failed = False

        dt, lam = stable_step(box_t, ratio=0.45)
        if wcfg.dt is not None:
            dt = wcfg.dt
        z0 = as_complex(wcfg.cone_center)
        s0 = wcfg.cone_radius
        T = min(wcfg.horizon, s0)
        r0 = 0.4 * s0

        u0 = bump(grid, z0, r0)
        traj = wave_evolve(box_t, u0, np.zeros_like(u0), T, dt, stride=wcfg.stride, lambda_max=lam)
        cone = cone_energy(traj, z0, s0)
        speed = propagation_speed(traj, z0, r0)
        files.append(write_frame(target / "trajectory.csv", trajectory_frame(cone)))
        if plot:
            from heatlab.core.plots import energy_plot

            files.append(energy_plot(target / "energy.svg", cone, total_energy(traj)))

        # ZBar reaches three nodes; the data starts twice that past the cone base
        inner = s0 + 6.0 * grid.h
        outer = min(inner + 1.0, float(grid.boundary_distance(z0)) - 2.0 * grid.h)
        leak = 0.0
        if outer > inner + 4.0 * grid.h:
            u_out = _annulus(grid, z0, inner, outer)
            outside_traj = wave_evolve(box_t, u_out, np.zeros_like(u_out), T, dt, stride=wcfg.stride, lambda_max=lam)
            outside_cone = cone_energy(outside_traj, z0, s0)
            totals = total_energy(outside_traj)
            leak = max((e / t for e, t in zip(outside_cone.energies, totals) if t > 0), default=0.0)
        else:
            logger.warning("wave %s: no room outside the cone for the vanishing-data run", cell.key)

        staggered = traj.staggered_energy
        cone_block = {
            "center": z0,
            "horizon": s0,
            "nonincreasing": cone.nonincreasing,
            "drift": cone.drift,
            "staggered_energy_drift": float(np.ptp(staggered) / staggered[0]) if staggered.size and staggered[0] else 0.0,
            "outside_data_leak": float(leak),
            "cfl": traj.cfl,
            "dt": traj.dt,
        }
        failed |= not cone.nonincreasing or leak > OUTSIDE_LIMIT
        speed_block = {"speed": speed.speed, "limit": SPEED_LIMIT, "times": speed.times, "radii": speed.radii}
        failed |= speed.speed > SPEED_LIMIT

        subordination: dict[str, Any] | None = None
        if wcfg.subordination_probes:
            w = grid.nearest(z0)
            probes = _probe_nodes(grid, w, wcfg.subordination_probes, 2.0 * np.sqrt(wcfg.subordination_s))
            try:
                report = subordination_check(box_t, wcfg.subordination_s, w, probes, tol=config.engine.tol)
                subordination = {
                    "s": report.s,
                    "errors": report.errors,
                    "max_error": report.max_error,
                    "horizon": report.horizon,
                    "steps": report.steps,
                }
                failed |= report.max_error > SUBORDINATION_LIMIT
            except DomainCapacityError as exc:
                logger.warning("wave %s: subordination skipped: %s", cell.key, exc)
                subordination = {"skipped": str(exc)}

        locality = _locality(box_t, grid.nearest(z0), dt, lam)
        failed |= not locality["ok"]

        support: dict[str, Any] | None = None
        dense_limit = config.engine.dense_limit or kwargs.get("dense_limit") or DENSE_LIMIT
        if grid.size <= dense_limit:
            check = support_condition_check(
                decompose(box_t, dense_limit=dense_limit), wcfg.subordination_s, grid.nearest(z0), SUPPORT_WIDTH
            )
            support = {
                "s": check.s,
                "radius": check.radius,
                "inside_max": check.inside_max,
                "outside_max": check.outside_max,
                "ratio": check.ratio,
            }

        estimates = [
            gaussian_tail(ell, lam_, N) for ell in wcfg.tail_ells for lam_ in wcfg.tail_lambdas for N in wcfg.tail_orders
        ]
        fitted, constants = fit_tail_constants(estimates)
        failed |= not all(c["stable"] for c in constants.values())
        tails = {
            "constants": {str(k): v for k, v in constants.items()},
            "samples": [{"ell": e.ell, "lam": e.lam, "N": e.N, "value": e.value, "margin": e.margin} for e in fitted],
            "mollifier": {
                str(ell): {**Mollifier(ell).properties(), "derivative_scale": [Mollifier(ell).derivative_scale(k) for k in (1, 2)]}
                for ell in wcfg.tail_ells
            },
            "no_cutoff": {str(l_): gaussian_tail(0.0, l_, 1).value for l_ in wcfg.tail_lambdas},
        }

        summary = {
            "tau": cell.tau,
            "cone": cone_block,
            "speed": speed_block,
            "subordination": subordination,
            "locality": locality,
            "support": support,
            "tails": tails,
        }
        files.append(write_json(target / "wave_report.json", summary))
        logger.info("wave %s: speed=%.3f drift=%.2e leak=%.2e", cell.key, speed.speed, cone.drift, leak)
        return {"status": "success", "failed": failed, "summary": {"speed": speed.speed}, "output_files": [str(f) for f in files]}
