"""
Exact polynomial calculus for the weight p and the size functions Lambda and mu.

p is stored in the Wirtinger monomial basis: p(z) = sum a_jk z^j zbar^k. The
coefficients are kept twice, as exact sympy numbers and as a dense complex array
used by the vectorized evaluators.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import sympy as sp

from heatlab.core.errors import GeometryError, InvalidPolynomialError
from heatlab.core.fitting import BoundReport, constant_report

logger = logging.getLogger(__name__)

Z, ZB = sp.symbols("z zb")

VALIDATION_POINTS = 64
PHANTOM_REL = 1e-14


def _exact(value: float) -> sp.Rational:
    return sp.Rational(repr(float(value)))


def _exact_complex(value: complex) -> sp.Expr:
    value = complex(value)
    return _exact(value.real) + sp.I * _exact(value.imag)


def _eval_array(coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """sum_jk c[j,k] z^j zbar^k, vectorized over z."""
    z = np.asarray(z, dtype=complex)
    d = coeffs.shape[0]
    powers = np.arange(d)
    zp = z[..., None] ** powers
    zbp = np.conj(z)[..., None] ** powers
    return np.einsum("...j,jk,...k->...", zp, coeffs, zbp)


@dataclass(frozen=True)
class SubharmonicPolynomial:
    """
    Real-valued, subharmonic, nonharmonic polynomial p(z) = sum a_jk z^j zbar^k.

    Construction validates reality (a_jk = conj a_kj), nonharmonicity (a mixed
    coefficient with j,k >= 1 is nonzero) and subharmonicity (Laplacian sampled on a
    64x64 lattice over [-W, W]^2 is >= -eps_sub).
    """

    terms: tuple[tuple[int, int, sp.Expr], ...]
    eps_sub: float = 0.0
    validation_half_width: float = 4.0

    def __post_init__(self) -> None:
        if not self.terms:
            raise InvalidPolynomialError("polynomial has no terms")
        for j, k, _ in self.terms:
            if j < 0 or k < 0:
                raise InvalidPolynomialError(f"negative exponent in monomial ({j}, {k})")
        self._validate()

    # construction -------------------------------------------------------------
    @classmethod
    def from_exact(cls, coeffs: Mapping[tuple[int, int], Any], **kwargs: Any) -> "SubharmonicPolynomial":
        merged: dict[tuple[int, int], sp.Expr] = {}
        for (j, k), c in coeffs.items():
            merged[(int(j), int(k))] = sp.expand(merged.get((int(j), int(k)), 0) + sp.sympify(c))
        terms = tuple(sorted((j, k, c) for (j, k), c in merged.items() if c != 0))
        return cls(terms=terms, **kwargs)

    @classmethod
    def from_expr(cls, expr: sp.Expr, **kwargs: Any) -> "SubharmonicPolynomial":
        """From a sympy expression in the symbols `Z` and `ZB`."""
        poly = sp.Poly(sp.expand(expr), Z, ZB)
        return cls.from_exact({(j, k): c for (j, k), c in poly.terms()}, **kwargs)

    @classmethod
    def from_monomials(cls, monomials: Iterable[Mapping[str, Any]], **kwargs: Any) -> "SubharmonicPolynomial":
        coeffs: dict[tuple[int, int], sp.Expr] = {}
        for m in monomials:
            key = (int(m["j"]), int(m["k"]))
            coeffs[key] = coeffs.get(key, 0) + _exact_complex(complex(m.get("re", 0.0), m.get("im", 0.0)))
        return cls.from_exact(coeffs, **kwargs)

    @classmethod
    def from_real_poly(cls, terms: Iterable[Mapping[str, Any]], **kwargs: Any) -> "SubharmonicPolynomial":
        """sum c x1^a x2^b, converted exactly with x1 = (z+zb)/2, x2 = (z-zb)/(2i)."""
        x1 = (Z + ZB) / 2
        x2 = (Z - ZB) / (2 * sp.I)
        expr = sp.Integer(0)
        for t in terms:
            a, b = int(t["a"]), int(t["b"])
            if a < 0 or b < 0:
                raise InvalidPolynomialError(f"negative exponent in real monomial ({a}, {b})")
            expr += _exact(t["c"]) * x1**a * x2**b
        return cls.from_expr(expr, **kwargs)

    @classmethod
    def from_literal(cls, literal: Mapping[str, Any], **kwargs: Any) -> "SubharmonicPolynomial":
        if "monomials" in literal and "real_poly" not in literal:
            return cls.from_monomials(literal["monomials"], **kwargs)
        if "real_poly" in literal and "monomials" not in literal:
            return cls.from_real_poly(literal["real_poly"], **kwargs)
        raise InvalidPolynomialError("polynomial literal needs exactly one of 'monomials' or 'real_poly'")

    def literal(self) -> dict[str, Any]:
        return {
            "monomials": [
                {"j": j, "k": k, "re": float(sp.re(c)), "im": float(sp.im(c))} for j, k, c in self.terms
            ]
        }

    # structure ------------------------------------------------------------------
    @property
    def degree(self) -> int:
        return max(j + k for j, k, _ in self.terms)

    @cached_property
    def coeffs(self) -> np.ndarray:
        d = self.degree + 1
        arr = np.zeros((d, d), dtype=complex)
        for j, k, c in self.terms:
            arr[j, k] = complex(c)
        return arr

    @cached_property
    def expr(self) -> sp.Expr:
        return sum((c * Z**j * ZB**k for j, k, c in self.terms), sp.Integer(0))

    def _validate(self) -> None:
        a = self.coeffs
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.conj().T)) > 1e-12 * scale:
            raise InvalidPolynomialError("p is not real-valued: a_jk != conj(a_kj)")
        mixed = np.abs(a[1:, 1:])
        if mixed.size == 0 or np.max(mixed) <= PHANTOM_REL * scale:
            raise InvalidPolynomialError("p is harmonic: every mixed coefficient a_jk (j,k >= 1) vanishes")
        w = self.validation_half_width
        t = np.linspace(-w, w, VALIDATION_POINTS)
        xx, yy = np.meshgrid(t, t)
        lap = self.laplacian(xx + 1j * yy)
        tol = self.eps_sub + 1e-10 * max(1.0, float(np.max(np.abs(lap))))
        if float(np.min(lap)) < -tol:
            raise InvalidPolynomialError(f"p is not subharmonic: min sampled Laplacian {float(np.min(lap)):.3e}")

    # evaluation -----------------------------------------------------------------
    def __call__(self, z: np.ndarray | complex) -> np.ndarray:
        return np.real(_eval_array(self.coeffs, z))

    @cached_property
    def _dz(self) -> np.ndarray:
        a = self.coeffs
        out = np.zeros_like(a)
        j = np.arange(a.shape[0])[:, None]
        out[:-1, :] = (j * a)[1:, :]
        return out

    @cached_property
    def _dzdzb(self) -> np.ndarray:
        a = self.coeffs
        out = np.zeros_like(a)
        jk = np.outer(np.arange(a.shape[0]), np.arange(a.shape[0]))
        out[:-1, :-1] = (jk * a)[1:, 1:]
        return out

    def p_z(self, z: np.ndarray | complex) -> np.ndarray:
        return _eval_array(self._dz, z)

    def p_zbar(self, z: np.ndarray | complex) -> np.ndarray:
        return np.conj(self.p_z(z))

    def gradient(self, z: np.ndarray | complex) -> tuple[np.ndarray, np.ndarray]:
        pz = self.p_z(z)
        return 2.0 * np.real(pz), -2.0 * np.imag(pz)

    def laplacian(self, z: np.ndarray | complex) -> np.ndarray:
        return 4.0 * np.real(_eval_array(self._dzdzb, z))

    def swapped(self) -> "SubharmonicPolynomial":
        """p~(x1, x2) = p(x2, x1), i.e. p~(z) = p(i zbar)."""
        coeffs = {(k, j): sp.expand(sp.I**j * (-sp.I) ** k * c) for j, k, c in self.terms}
        return SubharmonicPolynomial.from_exact(
            coeffs, eps_sub=self.eps_sub, validation_half_width=self.validation_half_width
        )


@dataclass(frozen=True)
class CoeffTable:
    center: complex
    entries: dict[tuple[int, int], complex] = field(default_factory=dict)
    exact: bool = False

    def mixed(self) -> dict[tuple[int, int], complex]:
        return {(j, k): v for (j, k), v in self.entries.items() if j >= 1 and k >= 1}

    def taylor(self, w: np.ndarray | complex) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        dw = w - self.center
        total = np.zeros(w.shape, dtype=complex)
        for (j, k), v in self.entries.items():
            total = total + v * dw**j * np.conj(dw) ** k
        return total


@dataclass(frozen=True)
class GeometryProbe:
    z: complex
    delta: float
    lambda_: float
    mu: float


@dataclass(frozen=True)
class ApproxInverseReport:
    kappa: float
    ratios: tuple[tuple[float, float, float, float], ...]


def _binomial_shift(z: np.ndarray, d: int) -> np.ndarray:
    """B[..., J, j] = C(J, j) z^(J-j) for J >= j, else 0."""
    J = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    comb = np.array([[math.comb(int(a), int(b)) if a >= b else 0 for b in range(d)] for a in range(d)], dtype=float)
    expo = np.clip(J - j, 0, None)
    return comb * (np.asarray(z, dtype=complex)[..., None, None] ** expo)


def coefficient_arrays(p: SubharmonicPolynomial, z: np.ndarray | complex) -> np.ndarray:
    """A_jk(z) for every (j, k), vectorized over z; shape z.shape + (d+1, d+1)."""
    z = np.asarray(z, dtype=complex)
    d = p.coeffs.shape[0]
    bz = _binomial_shift(z, d)
    bzb = _binomial_shift(np.conj(z), d)
    return np.einsum("...Jj,JK,...Kk->...jk", bz, p.coeffs, bzb)


def wirtinger_coeffs(p: SubharmonicPolynomial, z: complex, *, exact: bool = False) -> CoeffTable:
    """
    A_jk(z) = (1/(j! k!)) d^j/dz^j d^k/dzbar^k p(z), the Taylor coefficients of p at z.

    With `exact=True` the derivatives are taken symbolically at the rational
    representative of z; otherwise the binomial re-expansion runs in double precision.
    """
    z = complex(z)
    if exact:
        z0 = _exact_complex(z)
        entries: dict[tuple[int, int], complex] = {}
        d = p.degree
        for j in range(d + 1):
            dj = sp.diff(p.expr, Z, j) if j else p.expr
            for k in range(d + 1 - j):
                djk = sp.diff(dj, ZB, k) if k else dj
                val = djk.subs({Z: z0, ZB: sp.conjugate(z0)}) / (sp.factorial(j) * sp.factorial(k))
                val = sp.expand(val)
                if val != 0:
                    entries[(j, k)] = complex(val)
        return CoeffTable(center=z, entries=entries, exact=True)

    arr = coefficient_arrays(p, z)
    entries = {(j, k): complex(arr[j, k]) for j in range(arr.shape[0]) for k in range(arr.shape[1]) if arr[j, k] != 0}
    return CoeffTable(center=z, entries=entries)


def _mixed_abs(p: SubharmonicPolynomial, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = np.abs(coefficient_arrays(p, z)[..., 1:, 1:])
    d = arr.shape[-1]
    order = (np.arange(d)[:, None] + 1) + (np.arange(d)[None, :] + 1)
    return arr, order


def lambda_field(p: SubharmonicPolynomial, z: np.ndarray | complex, delta: np.ndarray | float) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise GeometryError("delta must be positive")
    arr, order = _mixed_abs(p, z)
    z_b, d_b = np.broadcast_arrays(z, delta)
    arr = np.broadcast_to(arr, z_b.shape + arr.shape[-2:])
    return np.sum(arr * d_b[..., None, None] ** order, axis=(-2, -1))


def mu_field(p: SubharmonicPolynomial, z: np.ndarray | complex, delta: np.ndarray | float) -> np.ndarray:
    """
    mu_p(z, delta) = min over mixed (j, k) of (delta / |A_jk(z)|)^(1/(j+k)).

    Terms below 1e-14 of the largest mixed magnitude at z are treated as zero.
    """
    z = np.asarray(z, dtype=complex)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise GeometryError("delta must be positive")
    arr, order = _mixed_abs(p, z)
    top = np.max(arr, axis=(-2, -1), keepdims=True)
    live = arr > PHANTOM_REL * top
    if np.any(top <= 0):
        raise GeometryError("every mixed coefficient A_jk vanishes; mu is undefined")
    z_b, d_b = np.broadcast_arrays(z, delta)
    arr = np.broadcast_to(arr, z_b.shape + arr.shape[-2:])
    live = np.broadcast_to(live, arr.shape)
    with np.errstate(divide="ignore"):
        cand = np.where(live, (d_b[..., None, None] / np.where(live, arr, 1.0)) ** (1.0 / order), np.inf)
    return np.min(cand, axis=(-2, -1))


def size_lambda(p: SubharmonicPolynomial, z: complex, delta: float) -> float:
    return float(lambda_field(p, complex(z), float(delta)))


def size_mu(p: SubharmonicPolynomial, z: complex, delta: float) -> float:
    return float(mu_field(p, complex(z), float(delta)))


def probe(p: SubharmonicPolynomial, z: complex, delta: float) -> GeometryProbe:
    return GeometryProbe(z=complex(z), delta=float(delta), lambda_=size_lambda(p, z, delta), mu=size_mu(p, z, delta))


def approx_inverse_report(p: SubharmonicPolynomial, probes: Sequence[tuple[complex, float]]) -> ApproxInverseReport:
    if not probes:
        raise GeometryError("no probes given")
    zs = np.array([complex(z) for z, _ in probes])
    ds = np.array([float(d) for _, d in probes])
    lam = lambda_field(p, zs, ds)
    mu_of_lam = mu_field(p, zs, lam)
    lam_of_mu = lambda_field(p, zs, mu_field(p, zs, ds))
    ratios = tuple(
        (float(a / d), float(d / a), float(b / d), float(d / b)) for a, b, d in zip(mu_of_lam, lam_of_mu, ds)
    )
    kappa = max(max(r) for r in ratios)
    return ApproxInverseReport(kappa=float(kappa), ratios=ratios)


def mu_ratio_check(
    p: SubharmonicPolynomial, tau: float, pairs: Sequence[tuple[complex, complex]]
) -> BoundReport:
    """Fit C in mu(z)/mu(w) + mu(w)/mu(z) <= C (|z-w| / mu(w))^deg p, with mu = mu_p(., 1/tau)."""
    zs = np.array([complex(z) for z, _ in pairs])
    ws = np.array([complex(w) for _, w in pairs])
    mz = mu_field(p, zs, 1.0 / tau)
    mw = mu_field(p, ws, 1.0 / tau)
    dist = np.abs(zs - ws)
    keep = dist > mw
    flagged = int(np.sum(~keep))
    if flagged:
        logger.warning("mu_ratio_check: %d pair(s) with |z-w| <= mu(w, 1/tau) excluded", flagged)
    lhs = mz[keep] / mw[keep] + mw[keep] / mz[keep]
    rhs = (dist[keep] / mw[keep]) ** p.degree
    return constant_report(
        "mu_ratio",
        lhs,
        rhs,
        provenance={"tau": tau, "degree": p.degree, "flagged": flagged},
        excluded=flagged,
    )


def power_intuition(m: int, xs: np.ndarray, deltas: np.ndarray) -> pd.DataFrame:
    """
    mu for p = x^(2m) against the heuristic scales delta^(1/2)/|x|^(m-1) and delta^(1/(2m)).

    `ratio_min` compares with the smaller of the two scales (mu is an infimum);
    `ratio_sum` with their printed sum.
    """
    p = SubharmonicPolynomial.from_real_poly([{"a": 2 * m, "b": 0, "c": 1.0}])
    xx, dd = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(deltas, dtype=float), indexing="ij")
    xx, dd = xx.ravel(), dd.ravel()
    mu = mu_field(p, xx.astype(complex), dd)
    with np.errstate(divide="ignore"):
        first = np.where(xx != 0, np.sqrt(dd) / np.abs(xx) ** (m - 1), np.inf)
    second = dd ** (1.0 / (2 * m))
    return pd.DataFrame(
        {
            "x": xx,
            "delta": dd,
            "mu": mu,
            "sum_form": first + second,
            "min_form": np.minimum(first, second),
            "ratio_sum": mu / (first + second),
            "ratio_min": mu / np.minimum(first, second),
        }
    )


def geometry_sweep(p: SubharmonicPolynomial, zs: Sequence[complex], deltas: Sequence[float]) -> pd.DataFrame:
    rows_z = np.repeat(np.asarray(zs, dtype=complex), len(deltas))
    rows_d = np.tile(np.asarray(deltas, dtype=float), len(zs))
    return pd.DataFrame(
        {
            "z_re": rows_z.real,
            "z_im": rows_z.imag,
            "delta": rows_d,
            "lambda": lambda_field(p, rows_z, rows_d),
            "mu": mu_field(p, rows_z, rows_d),
        }
    )
