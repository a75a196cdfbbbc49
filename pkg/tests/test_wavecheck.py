from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.discretize import Grid, assemble_box
from heatlab.core.errors import CFLViolationError, DomainCapacityError
from heatlab.core.inequalities import bump
from heatlab.core.polygeom import SubharmonicPolynomial
from heatlab.core.semigroup import decompose, source_vector
from heatlab.core.wavecheck import (
    ConeReport,
    Mollifier,
    cone_energy,
    fit_tail_constants,
    gaussian_tail,
    horizon,
    propagation_speed,
    stable_step,
    stencil_reach,
    step_drift,
    subordination_check,
    support_condition_check,
    support_radius_nodes,
    wave_evolve,
)


@pytest.fixture(scope="module")
def box_tilde():
    p = SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])
    return assemble_box(p, 1.0, Grid(half_width=4.0, n=33), twiddle=True)


def test_cfl_violation_suggests_a_step(box_tilde) -> None:
    dt, lam = stable_step(box_tilde)
    u0 = source_vector(box_tilde.grid, 0)
    with pytest.raises(CFLViolationError) as info:
        wave_evolve(box_tilde, u0, np.zeros_like(u0), 1.0, 2.0 * dt, lambda_max=lam)
    assert info.value.suggested_dt == pytest.approx(0.5 / np.sqrt(lam))


def test_leapfrog_conserves_staggered_energy(box_tilde) -> None:
    grid = box_tilde.grid
    dt, lam = stable_step(box_tilde)
    u0 = bump(grid, 0.3 + 0.2j, 1.0)
    traj = wave_evolve(box_tilde, u0, np.zeros_like(u0), 1.0, dt, stride=5, lambda_max=lam)
    energy = traj.staggered_energy
    assert np.ptp(energy) < 1e-10 * energy[0]
    assert traj.times[-1] == pytest.approx(np.ceil(1.0 / dt) * dt)


def test_single_node_data_spreads_one_reach_per_step(box_tilde) -> None:
    grid = box_tilde.grid
    dt, lam = stable_step(box_tilde)
    w = grid.nearest(0j)
    delta = source_vector(grid, w)
    traj = wave_evolve(box_tilde, delta, np.zeros_like(delta), 5 * dt, dt, lambda_max=lam)
    reach = stencil_reach(box_tilde)
    assert reach == 6
    for k, u in enumerate(traj.snapshots):
        assert support_radius_nodes(grid, u, w) <= reach * k


def test_cone_energy_and_speed(box_tilde) -> None:
    grid = box_tilde.grid
    dt, lam = stable_step(box_tilde)
    s0, r0 = 1.5, 0.6
    u0 = bump(grid, 0j, r0)
    traj = wave_evolve(box_tilde, u0, np.zeros_like(u0), s0, dt, stride=2, lambda_max=lam)
    cone = cone_energy(traj, 0j, s0)
    assert cone.times[0] == 0.0
    assert cone.energies[-1] < cone.energies[0]
    assert all(0.0 <= f <= 1.0 for f in cone.outside_fraction)
    assert propagation_speed(traj, 0j, r0).speed < 1.05
    with pytest.raises(DomainCapacityError):
        cone_energy(traj, 3.5 + 0j, s0)


def test_subordination_rebuilds_the_heat_kernel(box_tilde) -> None:
    grid = box_tilde.grid
    w = grid.nearest(0j)
    probes = [w, grid.nearest(0.25 + 0j), grid.nearest(-0.25 + 0.25j)]
    report = subordination_check(box_tilde, 0.1, w, probes)
    assert report.max_error < 0.05
    assert np.exp(-report.horizon**2 / 0.4) == pytest.approx(1e-8)
    with pytest.raises(DomainCapacityError):
        subordination_check(box_tilde, 0.1, grid.nearest(3.8 + 0j), probes)


def test_horizon_is_monotone() -> None:
    assert horizon(0.1) < horizon(0.3)


def test_mollifier_properties() -> None:
    with pytest.raises(ValueError):
        Mollifier(-1.0)
    props = Mollifier(2.0).properties()
    assert all(props.values())
    assert Mollifier(0.0)(np.array([0.0, 5.0])).tolist() == [1.0, 1.0]
    assert Mollifier(2.0).derivative_scale(1) > 0


def test_gaussian_tail_without_cutoff_is_closed_form() -> None:
    for lam in (0.0, 1.5):
        assert gaussian_tail(0.0, lam, 1).value == pytest.approx(np.exp(-(lam**2)) / np.sqrt(np.pi), rel=1e-8)


def test_tail_constants_cover_every_sample() -> None:
    estimates = [gaussian_tail(ell, lam, N) for ell in (2.0, 4.0, 6.0) for lam in (0.0, 1.0, 3.0) for N in (1, 2)]
    fitted, summary = fit_tail_constants(estimates)
    assert set(summary) == {1, 2}
    assert all(e.margin is not None and e.margin >= -1e-12 for e in fitted)
    with pytest.raises(ValueError):
        gaussian_tail(1.0, -1.0, 1)


def test_band_limited_kernel_is_concentrated() -> None:
    p = SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])
    box_t = assemble_box(p, 1.0, Grid(half_width=4.0, n=21), twiddle=True)
    report = support_condition_check(decompose(box_t), 0.1, box_t.grid.nearest(0j), 4.0)
    assert report.radius == pytest.approx(np.sqrt(0.1) * 4.0)
    assert report.inside_max > 0
    assert report.ratio < 1.0


def test_cone_energy_must_fall_at_every_step() -> None:
    rising_late = ConeReport(0j, 1.0, (0.0, 0.5, 1.0), (1.0, 0.5, 0.9), (0.0, 0.0, 0.0), step_drift([1.0, 0.5, 0.9]))
    assert not rising_late.nonincreasing
    assert rising_late.drift == pytest.approx(0.8)
    falling = ConeReport(0j, 1.0, (0.0, 0.5, 1.0), (1.0, 0.5, 0.4999), (0.0, 0.0, 0.0), step_drift([1.0, 0.5, 0.4999]))
    assert falling.nonincreasing
    assert falling.drift == 0.0
    assert step_drift([1.0, 1.0 + 5e-4]) == pytest.approx(5e-4)
