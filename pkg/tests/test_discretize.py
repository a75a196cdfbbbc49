from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.discretize import (
    Grid,
    GridFunction,
    OperatorKind,
    assemble_box,
    assemble_first_order,
    build_grid,
    conjugation_residual,
    direct_box_residual,
    doubler_filter,
    interior_bumps,
    l2_norm,
    swap_permutation,
    symmetry_swap_residual,
)
from heatlab.core.errors import GridError, OperatorKindError
from heatlab.core.polygeom import SubharmonicPolynomial


def _fock() -> SubharmonicPolynomial:
    return SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])


def _tilted() -> SubharmonicPolynomial:
    # not symmetric under x1 <-> x2, so the swap check sees two different weights
    return SubharmonicPolynomial.from_real_poly(
        [{"a": 4, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}, {"a": 1, "b": 1, "c": 0.5}]
    )


def test_grid_geometry() -> None:
    grid = Grid(half_width=2.0, n=9)
    assert grid.h == pytest.approx(0.5)
    assert grid.size == 81
    assert grid.z[0] == pytest.approx(-2.0 - 2.0j)
    assert grid.z[grid.index(8, 0)] == pytest.approx(2.0 - 2.0j)
    assert grid.node(grid.index(3, 5)) == (3, 5)
    assert grid.nearest(0.1 + 0.2j) == grid.index(4, 4)
    assert grid.boundary_distance(0.5 - 1.5j) == pytest.approx(0.5)
    assert grid.in_collar(1.9 + 0j, 0.5)
    assert not grid.in_collar(0j, 0.5)


def test_grid_rejects_bad_shapes() -> None:
    with pytest.raises(GridError):
        Grid(half_width=0.0, n=9)
    with pytest.raises(GridError):
        Grid(half_width=1.0, n=4)
    grid = Grid(half_width=1.0, n=9)
    with pytest.raises(GridError):
        grid.index(9, 0)
    with pytest.raises(GridError):
        GridFunction(grid, np.zeros(10))


def test_build_grid_spacing() -> None:
    assert build_grid(8.0, 129).h == pytest.approx(0.125)
    assert build_grid(6.0, 96).h == pytest.approx(12.0 / 95.0)
    with pytest.raises(GridError):
        build_grid(1.0, 3)


def test_delta_integrates_to_one() -> None:
    grid = Grid(half_width=2.0, n=9)
    delta = GridFunction.delta(grid, grid.index(4, 4))
    ones = GridFunction(grid, np.ones(grid.size, dtype=complex))
    assert delta.inner(ones) == pytest.approx(1.0)
    assert delta.norm() == pytest.approx(1.0 / grid.h)


def test_adjoint_pairs_are_exact() -> None:
    grid = Grid(half_width=3.0, n=17)
    p = _fock()
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, p, 1.0)
    z = assemble_first_order(OperatorKind.Z, grid, p, 1.0)
    wbar = assemble_first_order(OperatorKind.WBAR, grid, p, 1.0)
    assert abs(z.matrix + zbar.adjoint).max() == 0.0
    # the transpose of ZBar is -WBar for the symmetric multiplier stencil
    assert abs(zbar.matrix.T + wbar.matrix).max() < 1e-14


def test_first_order_needs_a_weight() -> None:
    grid = Grid(half_width=1.0, n=9)
    with pytest.raises(OperatorKindError):
        assemble_first_order(OperatorKind.ZBAR, grid, None, 1.0)
    with pytest.raises(OperatorKindError):
        assemble_first_order(OperatorKind.BOX, grid, _fock(), 1.0)
    free = assemble_first_order(OperatorKind.ZBAR, grid, None, 0.0)
    assert free.matrix.shape == (grid.size, grid.size)


def test_boxes_are_hermitian_and_positive() -> None:
    grid = Grid(half_width=3.0, n=13)
    p = _fock()
    rng = np.random.default_rng(0)
    for twiddle in (False, True):
        box = assemble_box(p, 1.0, grid, twiddle)
        assert box.hermitian_defect() == 0.0
        assert box.kind is (OperatorKind.BOX_TILDE if twiddle else OperatorKind.BOX)
        v = rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)
        assert np.vdot(v, box.apply(v)).real >= -1e-10


def test_free_box_matches_direct_form_exactly() -> None:
    grid = Grid(half_width=3.0, n=17)
    assert direct_box_residual(None, 0.0, grid, twiddle=False, trials=4) < 1e-12


def test_direct_form_converges_under_refinement() -> None:
    p = _fock()
    coarse = direct_box_residual(p, 1.0, Grid(half_width=4.0, n=17), twiddle=True, trials=4)
    fine = direct_box_residual(p, 1.0, Grid(half_width=4.0, n=33), twiddle=True, trials=4)
    assert fine < coarse


def test_swap_and_conjugation_symmetries() -> None:
    grid = Grid(half_width=2.0, n=13)
    perm = swap_permutation(grid)
    np.testing.assert_array_equal(perm[perm], np.arange(grid.size))
    p = _tilted()
    assert symmetry_swap_residual(p, 0.7, grid, trials=4) < 1e-10
    assert conjugation_residual(p, 0.7, grid) < 1e-10


def test_doubler_filter_removes_checkerboard() -> None:
    grid = Grid(half_width=2.0, n=17)
    a = np.tile(np.arange(grid.n), grid.n)
    b = np.repeat(np.arange(grid.n), grid.n)
    checker = (-1.0) ** (a + b)
    out = doubler_filter(grid, checker).reshape(grid.n, grid.n)
    np.testing.assert_allclose(out[3:-3, 3:-3], 0.0, atol=1e-15)
    smooth = np.ones(grid.size)
    np.testing.assert_allclose(doubler_filter(grid, smooth).reshape(grid.n, grid.n)[3:-3, 3:-3], 1.0)


def test_doubler_filter_interpolates_a_parity_class() -> None:
    grid = Grid(half_width=4.0, n=33)
    a = np.tile(np.arange(grid.n), grid.n)
    b = np.repeat(np.arange(grid.n), grid.n)
    x, y = grid.z.real, grid.z.imag
    quadratic = 1.0 + 0.3 * x - 0.2 * y + 0.05 * x * y
    # a column living on the even class carries four times the density
    on_class = np.where((a % 2 == 0) & (b % 2 == 0), 4.0 * quadratic, 0.0)
    out = doubler_filter(grid, on_class).reshape(grid.n, grid.n)
    np.testing.assert_allclose(out[3:-3, 3:-3], quadratic.reshape(grid.n, grid.n)[3:-3, 3:-3], atol=1e-12)


def test_interior_bumps_are_normalized() -> None:
    grid = Grid(half_width=3.0, n=25)
    bumps = interior_bumps(grid, 5, np.random.default_rng(2))
    assert bumps.shape == (5, grid.size)
    for f in bumps:
        assert l2_norm(grid, f) == pytest.approx(1.0)
