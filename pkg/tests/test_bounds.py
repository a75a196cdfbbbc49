from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.bounds import (
    THEOREMS,
    KernelWorkbench,
    ProbePolicy,
    _s_ladder,
    check_theorem,
    refinement_drift,
    tau_spread,
    verify_kernel_bound,
)
from heatlab.core.discretize import Grid
from heatlab.core.errors import UnknownTheoremError
from heatlab.core.fitting import constant_report
from heatlab.core.polygeom import SubharmonicPolynomial
from heatlab.core.semigroup import DerivativeSpec

SMALL = ProbePolicy(bases=(0j,), rays=2, s_count=6, distances=6, lambdas=(1.0, 4.0))
WIDE = ProbePolicy(bases=(0j,), rays=4, distances=8)


@pytest.fixture(scope="module")
def fock_bench() -> KernelWorkbench:
    p = SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])
    return KernelWorkbench(p, 1.0, Grid(half_width=4.0, n=25))


def test_theorem_names() -> None:
    assert check_theorem("szego") == "szego"
    assert "free_heat" in THEOREMS
    with pytest.raises(UnknownTheoremError, match="known"):
        check_theorem("no_such_bound")


def test_free_heat_kernel_is_gaussian() -> None:
    report = verify_kernel_bound("free_heat", None, 0.0, Grid(half_width=8.0, n=65), probes=SMALL)
    assert report.spec == "free_heat"
    assert report.violations == 0
    assert report.c is not None and 0.8 <= report.c <= 1.1
    assert not report.unstable
    assert report.provenance["n"] == 65


def test_free_heat_ladder_stays_in_the_resolved_range() -> None:
    bench = KernelWorkbench(None, 0.0, Grid(half_width=8.0, n=65))
    ladder = _s_ladder(bench, 0j, SMALL)
    assert ladder[0] == pytest.approx(SMALL.free_s_min_factor * bench.grid.h**2)
    assert ladder[-1] == pytest.approx(4.0)


def test_tau_dependent_theorems_need_positive_tau() -> None:
    with pytest.raises(ValueError):
        verify_kernel_bound("szego", None, 0.0, Grid(half_width=2.0, n=9), probes=SMALL)


def test_heat_tilde_with_and_without_szego_annihilation(fock_bench) -> None:
    plain = verify_kernel_bound("heat_tilde", None, 1.0, fock_bench.grid, probes=SMALL, bench=fock_bench)
    assert plain.spec == "heat_tilde"
    assert plain.violations == 0
    assert plain.samples >= 20
    assert "single_regime_violations" in plain.provenance

    derived = verify_kernel_bound(
        "heat_tilde", None, 1.0, fock_bench.grid, probes=SMALL, bench=fock_bench,
        derivative=DerivativeSpec(z_word=("ZBar",)),
    )
    assert derived.spec == "heat_tilde_simplified"
    assert derived.provenance["derivative"] == "z:ZBar"


def test_szego_kernel_bound(fock_bench) -> None:
    report = verify_kernel_bound("szego", None, 1.0, fock_bench.grid, probes=WIDE, bench=fock_bench)
    assert report.spec == "szego"
    assert report.violations == 0


def test_l2_bounds_are_constant_fits(fock_bench) -> None:
    heat = verify_kernel_bound("heat_l2", None, 1.0, fock_bench.grid, probes=SMALL, bench=fock_bench)
    resolvent = verify_kernel_bound("resolvent_l2", None, 1.0, fock_bench.grid, probes=SMALL, bench=fock_bench)
    assert heat.c is None and resolvent.c is None
    assert heat.samples == 6
    assert resolvent.samples == 2
    assert np.isfinite(heat.C) and np.isfinite(resolvent.C)


def test_workbench_mu_and_deflation(fock_bench) -> None:
    np.testing.assert_allclose(fock_bench.mu(np.array([0j, 1.0 + 1.0j])), 1.0)
    assert fock_bench.projector is not None
    assert fock_bench.deflation.shape[1] <= fock_bench.projector.rank
    free = KernelWorkbench(None, 0.0, Grid(half_width=2.0, n=9))
    assert free.projector is None
    assert np.isinf(free.mu(np.array([0j]))).all()


def test_spread_and_drift() -> None:
    a = constant_report("x", np.array([1.0, 2.0]), np.array([1.0, 1.0]))
    b = constant_report("x", np.array([4.0, 1.0]), np.array([1.0, 1.0]))
    spread = tau_spread([a, b])
    assert spread["C_ratio"] == pytest.approx(2.0)
    assert "c_min" not in spread
    assert refinement_drift(a, b) == 0.0
