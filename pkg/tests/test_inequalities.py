from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.bounds import KernelWorkbench
from heatlab.core.discretize import Grid
from heatlab.core.inequalities import (
    SLACK,
    InequalityCase,
    bump,
    scalar_max_sides,
    verify_inequality,
    verify_intertwining,
)
from heatlab.core.polygeom import SubharmonicPolynomial


@pytest.fixture(scope="module")
def fock() -> SubharmonicPolynomial:
    return SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])


@pytest.fixture(scope="module")
def bench(fock) -> KernelWorkbench:
    return KernelWorkbench(fock, 1.0, Grid(half_width=4.0, n=25))


def test_bump_is_supported_in_its_disk() -> None:
    grid = Grid(half_width=2.0, n=41)
    f = bump(grid, 0.5 + 0.5j, 0.6, amp=2.0, wave=1.0 + 0j)
    outside = np.abs(grid.z - (0.5 + 0.5j)) >= 0.6
    assert np.all(f[outside] == 0)
    assert np.max(np.abs(f)) <= 2.0 * np.exp(-1.0) + 1e-12


def test_scalar_max_runs_every_pair() -> None:
    reports = verify_inequality("scalar_max", None, 0.0, Grid(half_width=1.0, n=5), trials=10, seed=3)
    assert len(reports) == 9
    assert {(r.provenance["a"], r.provenance["b"]) for r in reports} == {
        (a, b) for a in (0.5, 1.0, 1.5) for b in (0.5, 1.0, 1.5)
    }
    for report in reports:
        assert report.case is InequalityCase.SCALAR_MAX
        assert report.trials >= 1000
        assert report.failures == 0
        assert np.isfinite(report.provenance["C"])


def test_scalar_max_sides_agree_in_the_heat_regime() -> None:
    mu = np.array([1.0])
    left, right = scalar_max_sides(1.0, 1.0, np.array([1e-3]), mu, mu, 1.0)
    assert left[0] > 0 and right[0] > 0


def test_compact_poincare_holds(bench) -> None:
    report = verify_inequality("poincare_compact", None, 1.0, bench.grid, trials=12, seed=1, bench=bench)
    assert report.slack == SLACK
    assert report.failures == 0
    assert report.fitted is None
    assert len(report.lhs) == len(report.rhs) == 12


def test_poincare_counts_its_failures(bench) -> None:
    report = verify_inequality("poincare", None, 1.0, bench.grid, trials=12, seed=2, bench=bench)
    assert report.failures == sum(1 for l_, r in zip(report.lhs, report.rhs) if l_ > r)
    assert report.provenance["n"] == 25
    assert report.to_dict()["case"] == "poincare"


@pytest.mark.parametrize("case", ["sobolev", "cancel_heat", "cancel_green"])
def test_fitted_inequalities_cover_every_trial(bench, case) -> None:
    report = verify_inequality(case, None, 1.0, bench.grid, trials=8, seed=5, bench=bench)
    assert report.fitted is not None
    assert report.fitted.violations == 0
    assert report.failures == 0
    assert all(l_ <= r * (1 + 1e-12) for l_, r in zip(report.lhs, report.rhs))
    if case == "cancel_green":
        assert 0 <= report.provenance["log_branch"] <= 8


@pytest.mark.parametrize("case", ["sobolev", "cancel_heat", "cancel_green"])
def test_tau_dependent_inequalities_refuse_tau_zero(fock, case) -> None:
    with pytest.raises(ValueError, match="tau"):
        verify_inequality(case, fock, 0.0, Grid(half_width=2.0, n=9), trials=2)


def test_products_never_exceed_the_bound(bench) -> None:
    report = verify_inequality("products", None, 1.0, bench.grid, trials=10, seed=7, bench=bench)
    assert report.case is InequalityCase.PRODUCTS
    assert report.failures == 0


def test_unknown_case_is_rejected(bench) -> None:
    with pytest.raises(ValueError):
        verify_inequality("no_such_case", None, 1.0, bench.grid, bench=bench)


def test_intertwining(fock, bench) -> None:
    with pytest.raises(ValueError):
        verify_intertwining(fock, 0.0, bench.grid)
    report = verify_intertwining(fock, 1.0, Grid(half_width=4.0, n=21), trials=3)
    assert report.matrix_defect <= 1e-12
    assert report.krylov_residual <= 1e-8
    assert report.passed
    assert report.to_dict()["s_values"] == [0.1, 0.5, 2.0]
