from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.errors import GeometryError, InvalidPolynomialError
from heatlab.core.polygeom import (
    SubharmonicPolynomial,
    approx_inverse_report,
    geometry_sweep,
    lambda_field,
    mu_field,
    mu_ratio_check,
    power_intuition,
    size_lambda,
    size_mu,
    wirtinger_coeffs,
)

FOCK = [{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}]


def _fock() -> SubharmonicPolynomial:
    return SubharmonicPolynomial.from_real_poly(FOCK)


def _quartic() -> SubharmonicPolynomial:
    return SubharmonicPolynomial.from_real_poly([{"a": 4, "b": 0, "c": 1.0}])


def test_fock_weight_is_z_zbar() -> None:
    p = _fock()
    assert p.degree == 2
    assert p.coeffs[1, 1] == pytest.approx(1.0)
    assert abs(p.coeffs[2, 0]) < 1e-15
    z = np.array([0.3 - 1.2j, 2.0 + 0.5j])
    np.testing.assert_allclose(p(z), np.abs(z) ** 2)
    np.testing.assert_allclose(p.laplacian(z), 4.0)


def test_harmonic_polynomial_is_rejected() -> None:
    with pytest.raises(InvalidPolynomialError, match="harmonic"):
        SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": -1.0}])


def test_non_subharmonic_polynomial_is_rejected() -> None:
    with pytest.raises(InvalidPolynomialError, match="subharmonic"):
        SubharmonicPolynomial.from_real_poly(FOCK[:1] + [{"a": 0, "b": 2, "c": -3.0}])


def test_non_real_monomials_are_rejected() -> None:
    with pytest.raises(InvalidPolynomialError, match="real"):
        SubharmonicPolynomial.from_monomials([{"j": 1, "k": 1, "re": 1.0}, {"j": 2, "k": 0, "re": 1.0}])


def test_literal_needs_exactly_one_form() -> None:
    with pytest.raises(InvalidPolynomialError):
        SubharmonicPolynomial.from_literal({})
    with pytest.raises(InvalidPolynomialError):
        SubharmonicPolynomial.from_literal({"monomials": [], "real_poly": FOCK})

    p = SubharmonicPolynomial.from_literal({"monomials": [{"j": 1, "k": 1, "re": 1.0}]})
    again = SubharmonicPolynomial.from_literal(p.literal())
    assert again.terms == p.terms


def test_wirtinger_coeffs_exact_matches_float() -> None:
    p = _quartic()
    z = 0.5 - 0.25j
    exact = wirtinger_coeffs(p, z, exact=True)
    approx = wirtinger_coeffs(p, z)
    assert exact.exact
    for key, value in exact.entries.items():
        assert approx.entries[key] == pytest.approx(value, abs=1e-12)
    w = np.array([0.1 + 0.2j, -1.0 + 0.4j])
    np.testing.assert_allclose(np.real(approx.taylor(w)), p(w), atol=1e-12)


def test_fock_lambda_and_mu_are_explicit() -> None:
    p = _fock()
    for z in (0.0, 1.5 - 2.0j):
        for delta in (0.01, 1.0, 9.0):
            assert size_lambda(p, z, delta) == pytest.approx(delta**2)
            assert size_mu(p, z, delta) == pytest.approx(np.sqrt(delta))


def test_quartic_at_origin() -> None:
    p = _quartic()
    assert size_mu(p, 0.0, 1.0) == pytest.approx((8.0 / 3.0) ** 0.25)
    # A_13 = A_31 = 1/4 and A_22 = 3/8 at the origin
    assert size_lambda(p, 0.0, 1.0) == pytest.approx(0.25 + 0.25 + 0.375)


def test_mu_rejects_nonpositive_delta() -> None:
    p = _fock()
    with pytest.raises(GeometryError):
        mu_field(p, 0.0, 0.0)
    with pytest.raises(GeometryError):
        lambda_field(p, 0.0, -1.0)


def test_mu_is_monotone_in_delta() -> None:
    p = _quartic()
    deltas = np.logspace(-3, 2, 12)
    mus = mu_field(p, np.full(deltas.shape, 0.7 + 0.1j), deltas)
    assert np.all(np.diff(mus) > 0)


def test_approx_inverse_constant_is_small() -> None:
    p = _quartic()
    probes = [(z, d) for z in (0.0, 1.0 + 1.0j, -2.0) for d in (1e-3, 1.0, 10.0)]
    report = approx_inverse_report(p, probes)
    assert 1.0 <= report.kappa <= 10.0
    assert len(report.ratios) == len(probes)


def test_mu_ratio_check_excludes_close_pairs() -> None:
    p = _quartic()
    rng = np.random.default_rng(3)
    pairs = [(complex(*rng.uniform(-2, 2, 2)), complex(*rng.uniform(-2, 2, 2))) for _ in range(60)]
    pairs.append((0.0, 0.0))
    report = mu_ratio_check(p, 1.0, pairs)
    assert report.excluded >= 1
    assert report.spec == "mu_ratio"
    assert report.violations == 0
    assert np.isfinite(report.C)


def test_power_intuition_stays_within_a_fixed_factor() -> None:
    frame = power_intuition(2, np.linspace(-2.0, 2.0, 9), np.logspace(-3, 1, 5))
    assert set(frame.columns) >= {"mu", "ratio_min", "ratio_sum"}
    assert frame["ratio_min"].between(1.0 / 8.0, 8.0).all()
    at_origin = frame[frame["x"] == 0.0]
    np.testing.assert_allclose(at_origin["ratio_min"], (8.0 / 3.0) ** 0.25)


def test_geometry_sweep_layout() -> None:
    frame = geometry_sweep(_fock(), [0.0, 1.0j], [0.5, 2.0])
    assert list(frame.columns) == ["z_re", "z_im", "delta", "lambda", "mu"]
    assert len(frame) == 4
    np.testing.assert_allclose(frame["mu"], np.sqrt(frame["delta"]))
