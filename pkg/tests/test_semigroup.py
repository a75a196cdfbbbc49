from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.discretize import Grid, OperatorKind, assemble_box, assemble_first_order, interior_bumps
from heatlab.core.errors import NotHermitianError, SzegoTruncationError, UnsupportedKernelError
from heatlab.core.polygeom import SubharmonicPolynomial
from heatlab.core.semigroup import (
    DerivativeSpec,
    SliceKind,
    collar_warnings,
    containment_angle,
    decompose,
    derivative_kernel,
    g_tilde_column,
    g_tilde_norm_ladder,
    green_and_relative,
    heat_apply,
    heat_kernel_column,
    intertwining_residual,
    kernel_context,
    landau_levels,
    level_spacing,
    laplace_quadrature,
    product_bound,
    relative_identity_residual,
    resolvent_column,
    spectral_gap,
    spectral_szego,
    szego_projector,
)

TAU = 1.0


@pytest.fixture(scope="module")
def fock() -> SubharmonicPolynomial:
    return SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])


@pytest.fixture(scope="module")
def grid() -> Grid:
    return Grid(half_width=4.0, n=21)


@pytest.fixture(scope="module")
def box_tilde(fock, grid):
    return assemble_box(fock, TAU, grid, twiddle=True)


@pytest.fixture(scope="module")
def box(fock, grid):
    return assemble_box(fock, TAU, grid, twiddle=False)


@pytest.fixture(scope="module")
def decomp(box_tilde):
    return decompose(box_tilde)


def test_spectral_helpers_on_synthetic_spectra() -> None:
    assert spectral_gap(np.array([1e-9, 2e-9, 1.0, 1.5])) == (2, 1.0)
    # an edge state at 0.3 stays in the null cluster once the level spacing is known
    assert spectral_gap(np.array([1e-6, 3e-4, 0.3, 1.9, 2.0]), scale=2.0) == (3, 1.9)
    assert spectral_gap(np.array([1e-6, 3e-4]), scale=2.0) == (2, float("inf"))

    clusters = landau_levels(np.array([0.0, 0.0, 1.5, 2.0, 2.01, 2.02, 3.98, 4.0, 4.01, 5.2]), 2.0)
    assert [c.level for c in clusters] == [1, 2]
    assert clusters[0].center == pytest.approx(2.01)
    assert clusters[0].count == 3
    assert clusters[1].center == pytest.approx(11.99 / 3.0)
    assert clusters[1].relative_error < 1e-2
    assert clusters[1].to_dict()["expected"] == 4.0
    with pytest.raises(ValueError):
        landau_levels(np.array([1.0]), 0.0)


def test_level_spacing_of_the_fock_weight(fock, grid) -> None:
    assert level_spacing(fock, 1.5, grid) == pytest.approx(3.0)


def test_sparse_branch_matches_dense(box_tilde) -> None:
    dense = decompose(box_tilde, 40)
    sparse = decompose(box_tilde, 40, dense_limit=100)
    assert not sparse.complete
    np.testing.assert_allclose(sparse.eigenvalues, dense.eigenvalues, atol=1e-8)
    assert sparse.orthogonality_defect() < 1e-8
    assert np.max(sparse.residuals()) < 1e-8


def test_free_heat_column_matches_the_gaussian() -> None:
    grid = Grid(half_width=8.0, n=129)
    free = assemble_box(None, 0.0, grid, twiddle=True)
    s = 0.5
    w = grid.nearest(0j)
    density = heat_kernel_column(free, s, w).density().real
    r = np.abs(grid.z - grid.z[w])
    exact = np.exp(-(r**2) / s) / (np.pi * s)
    disk = r <= 3.0 * np.sqrt(s)
    assert np.max(np.abs(density[disk] - exact[disk])) <= 0.02 * exact[w]
    assert grid.h**2 * np.sum(density) == pytest.approx(1.0, abs=1e-3)


def test_full_decomposition(decomp, grid) -> None:
    assert decomp.complete
    assert decomp.k == grid.size
    assert np.all(np.diff(decomp.eigenvalues) >= 0)
    assert decomp.eigenvalues[0] > -1e-10
    assert decomp.orthogonality_defect() < 1e-10
    cut, gap = decomp.null_split()
    assert cut >= 1
    assert gap > decomp.eigenvalues[cut - 1]


def test_decompose_rejects_non_hermitian(fock, grid) -> None:
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, fock, TAU)
    with pytest.raises(NotHermitianError):
        decompose(zbar)


def test_semigroup_law(box_tilde, grid) -> None:
    f = interior_bumps(grid, 1, np.random.default_rng(0))[0]
    two_steps = heat_apply(box_tilde, 0.2, heat_apply(box_tilde, 0.3, f))
    one_step = heat_apply(box_tilde, 0.5, f)
    assert np.linalg.norm(two_steps - one_step) < 1e-8 * np.linalg.norm(f)


def test_heat_kernel_is_hermitian_symmetric(box_tilde, grid) -> None:
    w1, w2 = grid.nearest(0.4 + 0.0j), grid.nearest(-0.8 + 0.4j)
    k1 = heat_kernel_column(box_tilde, 0.25, w1)
    k2 = heat_kernel_column(box_tilde, 0.25, w2)
    assert k1.kind is SliceKind.HTILDE
    assert abs(k1.values[w2] - np.conj(k2.values[w1])) < 1e-7 * abs(k1.diagonal)
    assert k1.diagonal.real > 0


def test_heat_kernel_column_guards(fock, grid, box_tilde) -> None:
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, fock, TAU)
    with pytest.raises(UnsupportedKernelError):
        heat_kernel_column(zbar, 0.1, 0)
    with pytest.raises(ValueError):
        heat_kernel_column(box_tilde, 0.0, 0)


def test_collar_rule(fock, grid) -> None:
    assert collar_warnings(grid, 0, s=0.5, p=fock, tau=TAU)
    assert collar_warnings(grid, grid.nearest(0j), s=0.01, p=fock, tau=TAU) == []


def test_zbar_of_h_tilde_is_minus_wbar_of_h(box, box_tilde, grid) -> None:
    w = grid.nearest(0.4 - 0.4j)
    h_tilde = heat_kernel_column(box_tilde, 0.3, w, tol=1e-12)
    h = heat_kernel_column(box, 0.3, w, tol=1e-12)
    left = derivative_kernel(h_tilde, DerivativeSpec(z_word=("ZBar",)), kernel_context(h_tilde, op=box_tilde, tol=1e-12))
    right = derivative_kernel(h, DerivativeSpec(w_word=("WBar",)), kernel_context(h, op=box, tol=1e-12))
    scale = np.max(np.abs(left.values))
    assert np.max(np.abs(left.values + right.values)) < 1e-8 * scale
    assert left.extras["derivative"] == "z:ZBar"


def test_intertwining(fock, grid, box, box_tilde) -> None:
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, fock, TAU)
    f = interior_bumps(grid, 1, np.random.default_rng(4))[0]
    fwd, bwd = intertwining_residual(box, box_tilde, zbar, 0.5, f)
    assert fwd < 1e-8
    assert bwd < 1e-8


def test_derivative_spec() -> None:
    with pytest.raises(ValueError):
        DerivativeSpec(z_word=("W",))
    assert DerivativeSpec().label == "identity"
    assert DerivativeSpec(z_word=("Z", "ZBar")).annihilates_szego()
    assert not DerivativeSpec(z_word=("ZBar", "Z")).annihilates_szego()
    assert DerivativeSpec(w_word=("W",)).annihilates_szego()
    assert DerivativeSpec(s_order=1).annihilates_szego()
    assert DerivativeSpec(z_word=("X1",), w_word=("U2",)).order == 2


def test_monomial_szego_truncation(fock, grid) -> None:
    with pytest.raises(ValueError):
        szego_projector(fock, 0.0, grid)
    proj = szego_projector(fock, TAU, grid, cross_check=False)
    assert proj.method == "monomial"
    assert proj.rank >= 1
    with pytest.raises(SzegoTruncationError) as info:
        szego_projector(fock, TAU, grid, K=proj.max_admissible + 1, cross_check=False)
    assert info.value.max_admissible == proj.max_admissible


def test_spectral_szego_and_g_tilde_decay(box_tilde, decomp, grid) -> None:
    proj = spectral_szego(box_tilde, decomposition=decomp)
    assert proj.rank >= 1
    f = interior_bumps(grid, 1, np.random.default_rng(5))[0]
    np.testing.assert_allclose(proj.apply(proj.apply(f)), proj.apply(f), atol=1e-10)
    norms, rate = g_tilde_norm_ladder(box_tilde, proj, grid.nearest(0j), [0.1, 0.2, 0.4, 0.8, 1.6])
    assert np.all(np.diff(norms) < 0)
    assert rate > 0


def test_green_inverts_box_off_the_szego_image(fock, grid, box_tilde, decomp) -> None:
    proj = spectral_szego(box_tilde, decomposition=decomp)
    with pytest.raises(ValueError):
        green_and_relative(fock, 0.0, grid, 0, projector=proj)
    green, rel = green_and_relative(fock, TAU, grid, grid.nearest(0j), projector=proj)
    assert green.kind is SliceKind.GREEN and rel.kind is SliceKind.R
    assert green.extras["residual"] < 1e-8
    rng = np.random.default_rng(6)
    phis = interior_bumps(grid, 2, rng)
    psis = interior_bumps(grid, 2, rng)
    assert relative_identity_residual(fock, TAU, grid, proj, phis, psis) < 1e-6


def test_resolvent_is_laplace_transform_of_heat(box_tilde, grid) -> None:
    w = grid.nearest(0j)
    with pytest.raises(ValueError):
        resolvent_column(box_tilde, 0.0, w)
    res = resolvent_column(box_tilde, 4.0, w)
    assert res.lam == 4.0
    assert res.extras["residual"] < 1e-8
    quad = laplace_quadrature(box_tilde, w, 4.0, t_max=10.0)
    assert np.linalg.norm(quad - res.values) < 1e-2 * np.linalg.norm(res.values)


def test_product_bound(decomp, grid) -> None:
    f = np.exp(-0.5 * decomp.eigenvalues)
    g = np.cos(decomp.eigenvalues)
    lhs, rhs = product_bound(decomp, grid.nearest(0j), f, g)
    assert lhs <= rhs * (1 + 1e-12)
    same, same_rhs = product_bound(decomp, grid.nearest(0j), f, np.ones_like(f))
    assert same == pytest.approx(same_rhs)


def test_g_tilde_splits_the_heat_kernel(box, box_tilde, decomp, grid) -> None:
    proj = spectral_szego(box_tilde, decomposition=decomp)
    w = grid.nearest(0j)
    g = g_tilde_column(box_tilde, proj, 0.4, w)
    assert g.kind is SliceKind.GTILDE
    assert g.extras["decomposition_residual"] < 1e-8
    assert 0.0 <= g.extras["szego_drift"] < 0.5
    with pytest.raises(UnsupportedKernelError):
        g_tilde_column(box, proj, 0.4, w)


@pytest.fixture(scope="module")
def desk(fock):
    grid = Grid(half_width=4.0, n=49)
    box_t = assemble_box(fock, TAU, grid, twiddle=True)
    return grid, box_t, decompose(box_t)


def test_landau_clusters_sit_at_even_multiples_of_tau(desk, fock) -> None:
    grid, _, dec = desk
    assert dec.eigenvalues[0] <= 1e-3
    spacing = level_spacing(fock, TAU, grid)
    assert spacing == pytest.approx(2.0 * TAU)
    clusters = landau_levels(dec.eigenvalues, spacing, levels=2)
    assert [c.level for c in clusters] == [1, 2]
    for cluster in clusters:
        assert cluster.count >= 2
        assert cluster.relative_error <= 0.05


def test_both_boxes_share_their_nonzero_spectrum(fock, grid, decomp) -> None:
    other = decompose(assemble_box(fock, TAU, grid, twiddle=False)).eigenvalues
    mine = decomp.eigenvalues
    np.testing.assert_allclose(other[other > 1e-6], mine[mine > 1e-6], atol=1e-8)


def test_polished_monomials_lie_in_the_null_cluster(desk, fock) -> None:
    grid, _, dec = desk
    cut, _ = dec.null_split()
    proj = szego_projector(fock, TAU, grid, cross_check=False)
    assert containment_angle(proj.basis, dec.vectors[:, :cut]) <= 1e-3
    raw = szego_projector(fock, TAU, grid, refine=0, cross_check=False)
    assert containment_angle(raw.basis, dec.vectors[:, :cut]) > containment_angle(proj.basis, dec.vectors[:, :cut])

    f = interior_bumps(grid, 3, np.random.default_rng(9)).T
    once = proj.apply(f)
    assert np.linalg.norm(proj.apply(once) - once) <= 1e-10 * np.linalg.norm(f)


def test_cross_check_reports_the_containment_angle(fock, grid) -> None:
    proj = szego_projector(fock, TAU, grid)
    assert proj.subspace_angle is not None
    assert 0.0 <= proj.subspace_angle < 0.1
    assert 0.0 < proj.threshold < 0.25 * level_spacing(fock, TAU, grid)


@pytest.mark.parametrize("method", ["monomial", "spectral"])
def test_szego_diagonal_matches_fock(desk, fock, method) -> None:
    grid, box_t, dec = desk
    if method == "monomial":
        proj = szego_projector(fock, TAU, grid, cross_check=False)
    else:
        proj = spectral_szego(box_t, decomposition=dec)
    expected = 2.0 * TAU / np.pi
    for w in np.flatnonzero(np.abs(grid.z) <= 1.0):
        diag = proj.column(int(w)).density()[w].real
        assert abs(diag - expected) <= 0.05 * expected


def test_monomial_truncation_error_shrinks_under_refinement(fock) -> None:
    defects = []
    for n in (21, 41):
        grid = Grid(half_width=4.0, n=n)
        proj = szego_projector(fock, TAU, grid, K=4, refine=0, cross_check=False)
        zbar = assemble_first_order(OperatorKind.ZBAR, grid, fock, TAU)
        inner = np.abs(grid.z) <= 0.5 * grid.half_width
        defects.append(float(np.max(np.linalg.norm((zbar.matrix @ proj.basis)[inner], axis=0))))
    coarse, fine = defects
    assert fine < 0.5 * coarse
