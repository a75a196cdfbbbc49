"""
Heat semigroups of the two boxes and the kernels derived from them.

Every kernel is returned as a column: the operator applied to the discrete delta
delta_w / h^2, so the values approximate the continuum density against dA.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sps
from scipy import linalg as sla
from scipy.integrate import trapezoid
from scipy.sparse import linalg as spla

from heatlab.core.discretize import (
    Grid,
    GridFunction,
    OperatorKind,
    SparseOperator,
    assemble_box,
    assemble_first_order,
    doubler_filter,
    l2_norm,
)
from heatlab.core.errors import (
    ConvergenceError,
    NotHermitianError,
    SolverError,
    SzegoTruncationError,
    UnsupportedKernelError,
)
from heatlab.core.krylov import expm_lanczos
from heatlab.core.polygeom import SubharmonicPolynomial, size_mu

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
PAIR_TOL = 1e-8
MASS_FRACTION = 0.999
SHIFT = -1e-2
COLLAR_SIGMAS = 3.0
NULL_FRACTION = 0.25
POLISH_SWEEPS = 3


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    op: SparseOperator
    eigenvalues: np.ndarray
    vectors: np.ndarray
    complete: bool

    @property
    def k(self) -> int:
        return int(self.eigenvalues.size)

    def residuals(self) -> np.ndarray:
        av = self.op.matrix @ self.vectors
        return np.linalg.norm(av - self.vectors * self.eigenvalues[None, :], axis=0)

    def orthogonality_defect(self) -> float:
        gram = self.vectors.conj().T @ self.vectors
        return float(np.max(np.abs(gram - np.eye(self.k)))) if self.k else 0.0

    def eigenfunction(self, i: int) -> GridFunction:
        # unit Euclidean vectors rescaled to unit discrete L2 norm
        return GridFunction(self.op.grid, self.vectors[:, i] / self.op.grid.h)

    def null_split(self) -> tuple[int, float]:
        op = self.op
        scale = level_spacing(op.p, op.tau, op.grid) if op.p is not None and op.tau > 0 else None
        return spectral_gap(self.eigenvalues, scale)

    def kernel_row(self, z: int, weights: np.ndarray) -> np.ndarray:
        """Kernel of F(op) at (z, .) for F sampled on the eigenvalues; needs a complete decomposition."""
        h2 = self.op.grid.h**2
        return (self.vectors[z, :] * weights) @ self.vectors.conj().T / h2


def level_spacing(p: SubharmonicPolynomial, tau: float, grid: Grid) -> float:
    """tau/2 times the median of Lap p over |z| <= L/2; equals 2 tau for p = |z|^2."""
    z = grid.z[np.abs(grid.z) <= 0.5 * grid.half_width]
    return float(0.5 * tau * np.median(np.real(p.laplacian(z))))


def spectral_gap(eigenvalues: np.ndarray, scale: float | None = None) -> tuple[int, float]:
    """
    Returns (size of the near-null cluster, first eigenvalue above it) of a spectrum.

    With a level spacing the cluster is everything below NULL_FRACTION * scale. Without
    one the spectrum is split at its largest absolute jump. On grids the null space of
    BoxTilde is only approximately null, so an exact zero test is useless.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    if lam.size == 0:
        return 0, 0.0
    if scale is not None and scale > 0:
        cut = int(np.searchsorted(lam, NULL_FRACTION * scale))
    elif lam.size < 2:
        return 0, float(lam[0])
    else:
        cut = int(np.argmax(np.diff(lam))) + 1
    return cut, float(lam[cut]) if cut < lam.size else float("inf")


@dataclass(frozen=True)
class LandauCluster:
    level: int
    expected: float
    center: float
    count: int

    @property
    def relative_error(self) -> float:
        return abs(self.center - self.expected) / self.expected

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "expected": self.expected,
            "center": self.center,
            "count": self.count,
            "relative_error": self.relative_error,
        }


def landau_levels(
    eigenvalues: np.ndarray, spacing: float, *, levels: int = 4, window: float = 0.1
) -> list[LandauCluster]:
    """
    Locate the clusters k * spacing, k = 1..levels. Inside each band [(k-1/2), (k+1/2)] * spacing
    the densest run of eigenvalues of width window * spacing is the cluster; boundary states
    spread thinly through the band and do not move it. Bands the spectrum does not reach are skipped.
    """
    if spacing <= 0:
        raise ValueError(f"level spacing must be positive, got {spacing}")
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    width = window * spacing
    out: list[LandauCluster] = []
    for k in range(1, levels + 1):
        lo, hi = (k - 0.5) * spacing, (k + 0.5) * spacing
        if lam.size == 0 or lam[-1] < hi:
            break
        band = lam[(lam >= lo) & (lam < hi)]
        if band.size == 0:
            out.append(LandauCluster(k, k * spacing, float("nan"), 0))
            continue
        ends = np.searchsorted(band, band + width, side="right")
        i = int(np.argmax(ends - np.arange(band.size)))
        run = band[i : ends[i]]
        out.append(LandauCluster(k, k * spacing, float(np.mean(run)), int(run.size)))
    return out


def _rayleigh_ritz(op: SparseOperator, vectors: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormalize a block of approximate eigenvectors and diagonalize op on its span; keeps the lowest k."""
    q = sla.orth(vectors)
    if q.shape[1] < k:
        raise ConvergenceError(f"eigensolver block has rank {q.shape[1]} < {k}", best_residual=float("inf"), iterations=0)
    proj = q.conj().T @ (op.matrix @ q)
    lam, rot = sla.eigh(0.5 * (proj + proj.conj().T))
    return lam[:k], (q @ rot[:, :k])


def _check_hermitian(op: SparseOperator) -> None:
    scale = max(1.0, float(np.max(np.abs(op.matrix.data))) if op.matrix.nnz else 1.0)
    defect = op.hermitian_defect()
    if not op.hermitian or defect > 1e-12 * scale:
        raise NotHermitianError(f"{op.kind.value} is not Hermitian (defect {defect:.3e})")


def decompose(
    op: SparseOperator,
    k: int | str = "full",
    *,
    dense_limit: int = DENSE_LIMIT,
    maxiter: int | None = None,
) -> SpectralDecomposition:
    """Lowest k eigenpairs (or all of them) of a Hermitian operator."""
    _check_hermitian(op)
    n = op.dim
    full = k == "full"
    if not full and (int(k) < 1 or int(k) > n):
        raise ValueError(f"k must lie in [1, {n}], got {k}")

    if n <= dense_limit:
        lam, vec = sla.eigh(op.matrix.toarray())
        if not full:
            lam, vec = lam[: int(k)], vec[:, : int(k)]
        complete = lam.size == n
    else:
        if full:
            raise ValueError(f"a full decomposition needs n^2 <= {dense_limit}, got {n}")
        kk = int(k)
        # padding keeps a degenerate cluster from being cut at the k-th vector
        want = min(kk + max(8, kk // 10), n - 1)
        ncv = min(n, max(2 * want + 1, want + 64))
        try:
            _, vec = spla.eigsh(
                op.matrix.tocsc(), k=want, sigma=SHIFT, which="LM", ncv=ncv, tol=1e-12, maxiter=maxiter
            )
        except spla.ArpackNoConvergence as exc:
            partial = exc.eigenvalues
            best = float("inf")
            if partial is not None and len(partial):
                best = float(np.min(np.linalg.norm(op.matrix @ exc.eigenvectors - exc.eigenvectors * partial, axis=0)))
            raise ConvergenceError("Lanczos eigensolver stalled", best_residual=best, iterations=maxiter or 0) from exc
        lam, vec = _rayleigh_ritz(op, vec, kk)
        complete = kk == n

    decomp = SpectralDecomposition(op=op, eigenvalues=np.asarray(lam, dtype=float), vectors=vec, complete=complete)
    res = decomp.residuals()
    tol = PAIR_TOL * np.maximum(1.0, np.abs(decomp.eigenvalues))
    if np.any(res > tol):
        worst = float(np.max(res))
        raise ConvergenceError("eigenpair residual above tolerance", best_residual=worst, iterations=maxiter or 0)
    ortho = decomp.orthogonality_defect()
    if ortho > PAIR_TOL:
        raise ConvergenceError("eigenvectors lost orthogonality", best_residual=ortho, iterations=maxiter or 0)
    if decomp.k and decomp.eigenvalues[0] < -1e-10 * max(1.0, float(np.max(np.abs(decomp.eigenvalues)))):
        logger.warning("negative eigenvalue %.3e in a positive operator", decomp.eigenvalues[0])
    logger.debug("decomposed %s: n=%d k=%d complete=%s", op.kind.value, n, decomp.k, complete)
    return decomp


def heat_apply(op: SparseOperator, s: float, f: GridFunction | np.ndarray, *, tol: float = 1e-10) -> Any:
    """exp(-s op) f; returns the same container type as f."""
    values = f.values if isinstance(f, GridFunction) else np.asarray(f)
    out = expm_lanczos(op.apply, values, float(s), tol=tol).vector
    if isinstance(f, GridFunction):
        return GridFunction(f.grid, out)
    return out


class SliceKind(str, enum.Enum):
    H = "H"
    HTILDE = "HTilde"
    GTILDE = "GTilde"
    SZEGO = "Szego"
    GREEN = "Green"
    R = "R"
    RESOLVENT = "Resolvent"


@dataclass(frozen=True, eq=False)
class KernelSlice:
    kind: SliceKind
    grid: Grid
    source: int
    values: np.ndarray
    tau: float = 0.0
    s: float | None = None
    lam: float | None = None
    warnings: tuple[str, ...] = ()
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def param(self) -> float | None:
        return self.s if self.s is not None else self.lam

    @property
    def diagonal(self) -> complex:
        return complex(self.values[self.source])

    def function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def density(self) -> np.ndarray:
        """Values with the three doubler species filtered out."""
        return doubler_filter(self.grid, self.values)

    def norm(self) -> float:
        return l2_norm(self.grid, self.values)

    def with_values(self, values: np.ndarray, **changes: Any) -> "KernelSlice":
        data = {
            "kind": self.kind,
            "grid": self.grid,
            "source": self.source,
            "values": values,
            "tau": self.tau,
            "s": self.s,
            "lam": self.lam,
            "warnings": self.warnings,
            "extras": dict(self.extras),
        }
        data.update(changes)
        return KernelSlice(**data)


def source_vector(grid: Grid, w: int) -> np.ndarray:
    return GridFunction.delta(grid, w).values


def collar_warnings(grid: Grid, w: int, *, s: float | None, p: SubharmonicPolynomial | None, tau: float) -> list[str]:
    """
    The placement rule: the source sits at least 3 kernel widths plus 2h from the edge.
    The width is sqrt(s) for the heat kernels, capped by mu(w, 1/tau) when tau > 0.
    """
    zw = complex(grid.z[w])
    width = np.sqrt(s) if s is not None else np.inf
    if p is not None and tau > 0:
        width = min(width, size_mu(p, zw, 1.0 / tau))
    if not np.isfinite(width):
        return []
    need = COLLAR_SIGMAS * width + 2.0 * grid.h
    dist = float(grid.boundary_distance(zw))
    if dist >= need:
        return []
    msg = f"source {zw:.3f} is {dist:.3f} from the boundary; placement rule asks for {need:.3f}"
    logger.warning(msg)
    return [msg]


def _deflate(values: np.ndarray, basis: np.ndarray | None) -> np.ndarray:
    if basis is None or basis.shape[1] == 0:
        return values
    return values - basis @ (basis.conj().T @ values)


def heat_kernel_column(
    op: SparseOperator,
    s: float,
    w: int,
    *,
    tol: float = 1e-10,
    deflate: np.ndarray | None = None,
) -> KernelSlice:
    """
    Column of exp(-s op) at the source node w.

    `deflate` is an orthonormal basis (columns) removed from the source first; for Box
    it is the span of ZBar applied to the discrete Szego modes.
    """
    if op.kind not in (OperatorKind.BOX, OperatorKind.BOX_TILDE):
        raise UnsupportedKernelError(f"heat kernels exist for the boxes only, not {op.kind.value}")
    if s <= 0:
        raise ValueError(f"heat time must be positive, got {s}")
    kind = SliceKind.HTILDE if op.kind is OperatorKind.BOX_TILDE else SliceKind.H
    warnings = collar_warnings(op.grid, w, s=s, p=op.p, tau=op.tau)
    src = _deflate(source_vector(op.grid, w), deflate)
    values = heat_apply(op, s, src, tol=tol)
    diag = complex(values[w])
    if diag.real < -1e-8 or abs(diag.imag) > 1e-8 * max(1.0, abs(diag)):
        logger.warning("%s diagonal %s at node %d is not real nonnegative", kind.value, diag, w)
    return KernelSlice(
        kind=kind, grid=op.grid, source=w, values=values, tau=op.tau, s=float(s), warnings=tuple(warnings),
        extras={"deflated": 0 if deflate is None else int(deflate.shape[1])},
    )


@dataclass(frozen=True, eq=False)
class SzegoProjector:
    """Orthogonal projector onto a discrete approximation of Null ZBar, S = Q Q^H."""

    grid: Grid
    tau: float
    basis: np.ndarray
    method: str
    degree: int | None = None
    max_admissible: int | None = None
    subspace_angle: float | None = None
    threshold: float | None = None

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.conj().T @ values)

    def complement(self, values: np.ndarray) -> np.ndarray:
        return values - self.apply(values)

    def column(self, w: int) -> KernelSlice:
        values = self.basis @ self.basis[w, :].conj() / self.grid.h**2
        return KernelSlice(kind=SliceKind.SZEGO, grid=self.grid, source=w, values=values, tau=self.tau)

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def image_basis(self, zbar: SparseOperator) -> np.ndarray:
        """Orthonormal basis of ZBar applied to the Szego modes: the near-null space of Box."""
        image = zbar.matrix @ self.basis
        if image.shape[1] == 0:
            return image
        q, r, _ = sla.qr(image, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > 1e-10 * diag[0])) if diag.size and diag[0] > 0 else 0
        return q[:, :rank]


def _weighted_monomials(p: SubharmonicPolynomial, tau: float, grid: Grid, K: int) -> np.ndarray:
    z = grid.z
    weight = np.exp(-tau * np.real(p(z)))
    return np.stack([weight * z**k for k in range(K + 1)], axis=1)


def szego_mass_profile(p: SubharmonicPolynomial, tau: float, grid: Grid, K: int) -> np.ndarray:
    """
    Fraction of the discrete mass of exp(-tau p) z^k on nodes at least L/4 from the
    boundary, for k = 0..K.
    """
    cols = np.abs(_weighted_monomials(p, tau, grid, K)) ** 2
    inside = grid.boundary_distance(grid.z) >= 0.25 * grid.half_width
    total = np.sum(cols, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, np.sum(cols[inside], axis=0) / total, 0.0)
    return frac


def max_admissible_degree(p: SubharmonicPolynomial, tau: float, grid: Grid, *, search: int = 96) -> int:
    frac = szego_mass_profile(p, tau, grid, search)
    bad = np.flatnonzero(frac < MASS_FRACTION)
    return int(bad[0]) - 1 if bad.size else search


def _doubler_species(grid: Grid, weight: np.ndarray, K: int) -> list[np.ndarray]:
    # both stencils couple odd offsets only: modulation by (-1)^a or (-1)^b turns ZBar into
    # -conj(ZBar), so those copies are antiholomorphic; (-1)^(a+b) commutes with ZBar up to sign
    a = np.tile(np.arange(grid.n), grid.n)
    b = np.repeat(np.arange(grid.n), grid.n)
    z = grid.z
    sa, sb = (-1.0) ** a, (-1.0) ** b
    out = []
    for k in range(K + 1):
        out.append(sa * weight * np.conj(z) ** k)
        out.append(sb * weight * np.conj(z) ** k)
        out.append(sa * sb * weight * z**k)
    return out


def polish_basis(box_tilde: SparseOperator, basis: np.ndarray, sweeps: int = POLISH_SWEEPS) -> np.ndarray:
    """Block inverse iteration with (BoxTilde - SHIFT)^-1, re-orthonormalized after every sweep."""
    if sweeps <= 0 or basis.shape[1] == 0:
        return basis
    shifted = (box_tilde.matrix - SHIFT * sps.identity(box_tilde.dim, format="csr")).tocsc()
    lu = spla.splu(shifted)
    for _ in range(sweeps):
        basis, _ = np.linalg.qr(lu.solve(basis))
    return basis


def containment_angle(basis: np.ndarray, low: np.ndarray) -> float:
    """sin of the largest principal angle between span(basis) and its projection onto span(low)."""
    if basis.shape[1] == 0:
        return 0.0
    if low.shape[1] == 0:
        return 1.0
    resid = basis - low @ (low.conj().T @ basis)
    return float(np.linalg.norm(resid, 2))


def szego_projector(
    p: SubharmonicPolynomial,
    tau: float,
    grid: Grid,
    K: int | None = None,
    *,
    include_doublers: bool = True,
    refine: int = POLISH_SWEEPS,
    cross_check: bool = True,
    dense_limit: int = DENSE_LIMIT,
) -> SzegoProjector:
    """
    S from the weighted monomials exp(-tau p) z^k, 0 <= k <= K, orthonormalized by
    pivoted QR and then polished by `refine` sweeps of inverse iteration on BoxTilde.
    K defaults to the largest degree passing the mass criterion.

    The cross-check measures how far the span sticks out of the near-null eigenspace
    of BoxTilde.
    """
    if tau <= 0:
        raise ValueError(f"the Szego projector needs tau > 0, got {tau}")
    max_k = max_admissible_degree(p, tau, grid)
    if K is None:
        K = max_k
    if K < 0 or K > max_k:
        raise SzegoTruncationError(int(K), max_k)

    physical = _weighted_monomials(p, tau, grid, K)
    cols = [physical[:, k] for k in range(K + 1)]
    if include_doublers:
        weight = np.exp(-tau * np.real(p(grid.z)))
        cols.extend(_doubler_species(grid, weight, K))
    mat = np.stack(cols, axis=1)
    mat = mat / np.linalg.norm(mat, axis=0, keepdims=True)
    q, r, _ = sla.qr(mat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    basis = q[:, :rank]
    box_tilde = assemble_box(p, tau, grid, twiddle=True) if refine > 0 or cross_check else None
    if refine > 0:
        basis = polish_basis(box_tilde, basis, refine)

    angle = None
    threshold = None
    if cross_check:
        k = "full" if grid.size <= dense_limit else min(grid.size - 2, 2 * rank + 32)
        decomp = decompose(box_tilde, k, dense_limit=dense_limit)
        cut, _ = decomp.null_split()
        threshold = float(decomp.eigenvalues[cut - 1]) if cut else 0.0
        angle = containment_angle(basis, decomp.vectors[:, :cut])
        logger.info("Szego QR rank %d vs %d low modes, containment angle %.3e", rank, cut, angle)
    return SzegoProjector(
        grid=grid, tau=float(tau), basis=basis, method="monomial", degree=int(K), max_admissible=max_k,
        subspace_angle=angle, threshold=threshold,
    )


def spectral_szego(
    box_tilde: SparseOperator,
    *,
    k: int | None = None,
    threshold: float | None = None,
    decomposition: SpectralDecomposition | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> SzegoProjector:
    """
    S spanned by the eigenvectors of BoxTilde in the near-null cluster, or below
    `threshold` when one is given.
    """
    if box_tilde.kind is not OperatorKind.BOX_TILDE:
        raise UnsupportedKernelError("the spectral Szego projector is built from BoxTilde")
    if box_tilde.tau <= 0:
        raise ValueError(f"the Szego projector needs tau > 0, got {box_tilde.tau}")
    decomp = decomposition
    if decomp is None:
        size = "full" if box_tilde.dim <= dense_limit else (k or 64)
        decomp = decompose(box_tilde, size, dense_limit=dense_limit)
    if threshold is None:
        cut, _ = decomp.null_split()
        keep = np.arange(decomp.k) < cut
        threshold = float(decomp.eigenvalues[cut - 1]) if cut else 0.0
    else:
        keep = decomp.eigenvalues <= threshold
    if keep.all() and not decomp.complete:
        logger.warning("all %d computed eigenpairs lie in the null cluster; raise k", decomp.k)
    return SzegoProjector(
        grid=box_tilde.grid, tau=box_tilde.tau, basis=decomp.vectors[:, keep], method="spectral",
        threshold=float(threshold),
    )



def g_tilde_column(
    box_tilde: SparseOperator, projector: SzegoProjector, s: float, w: int, *, tol: float = 1e-10
) -> KernelSlice:
    """
    Column of exp(-s BoxTilde)(I - S). The slice records how well H~ splits into G~ plus
    the evolved Szego column (`decomposition_residual`, relative to ||delta||) and how far
    the evolved Szego column drifts from the static one (`szego_drift`).
    """
    if box_tilde.kind is not OperatorKind.BOX_TILDE:
        raise UnsupportedKernelError("G~ is defined through BoxTilde")
    if box_tilde.tau <= 0 or s <= 0:
        raise ValueError("G~ needs tau > 0 and s > 0")
    delta = source_vector(box_tilde.grid, w)
    sd = projector.apply(delta)
    g = heat_apply(box_tilde, s, delta - sd, tol=tol)
    full = heat_apply(box_tilde, s, delta, tol=tol)
    evolved = heat_apply(box_tilde, s, sd, tol=tol)
    scale = float(np.linalg.norm(delta))
    residual = float(np.max(np.abs(full - g - evolved))) / scale
    drift = float(np.max(np.abs(evolved - sd)) / max(float(np.max(np.abs(sd))), np.finfo(float).tiny))
    return KernelSlice(
        kind=SliceKind.GTILDE, grid=box_tilde.grid, source=w, values=g, tau=box_tilde.tau, s=float(s),
        warnings=tuple(collar_warnings(box_tilde.grid, w, s=s, p=box_tilde.p, tau=box_tilde.tau)),
        extras={"decomposition_residual": residual, "szego_drift": drift},
    )


def green_apply(box: SparseOperator, rhs: np.ndarray, deflate: np.ndarray | None, *, rtol: float = 1e-10) -> np.ndarray:
    """
    Solve Box x = (I - P) rhs on the complement of the deflation space P.

    Without deflation this is a sparse direct solve. With it, CG runs on
    Box + P, which is positive definite and agrees with Box on the complement.
    """
    if box.kind is not OperatorKind.BOX:
        raise UnsupportedKernelError("the Green operator inverts Box")
    b = _deflate(np.asarray(rhs, dtype=complex), deflate)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    if deflate is None or deflate.shape[1] == 0:
        x = spla.spsolve(box.matrix.tocsc(), b)
    else:
        def matvec(v: np.ndarray) -> np.ndarray:
            return box.matrix @ v + deflate @ (deflate.conj().T @ v)

        lin = spla.LinearOperator(box.matrix.shape, matvec=matvec, dtype=complex)
        x, info = spla.cg(lin, b, rtol=rtol * 1e-2, maxiter=20 * box.dim)
        if info != 0:
            res = float(np.linalg.norm(matvec(x) - b)) / bnorm
            raise SolverError(f"CG stopped with info={info}", residual=res)
        x = _deflate(x, deflate)
    res = float(np.linalg.norm(box.matrix @ x - b)) / bnorm
    if not np.isfinite(res) or res > 1e-8:
        raise SolverError("Green solve missed its residual target", residual=res)
    logger.debug("Green solve residual %.2e", res)
    return x


def green_and_relative(
    p: SubharmonicPolynomial,
    tau: float,
    grid: Grid,
    w: int,
    *,
    projector: SzegoProjector | None = None,
) -> tuple[KernelSlice, KernelSlice]:
    """
    Green column (Box^{-1} delta_w) and the relative solution column R = Z G.

    On a grid Box is not exactly invertible: the images ZBar q of the discrete Szego modes
    have eigenvalues near zero. Passing the projector removes them first.
    """
    if tau <= 0:
        raise ValueError(f"the Green operator needs tau > 0, got {tau}")
    box = assemble_box(p, tau, grid, twiddle=False)
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, p, tau)
    z_op = assemble_first_order(OperatorKind.Z, grid, p, tau)
    deflate = projector.image_basis(zbar) if projector is not None else None
    delta = source_vector(grid, w)
    x = green_apply(box, delta, deflate)
    res = float(np.linalg.norm(box.matrix @ x - _deflate(delta, deflate)) / np.linalg.norm(_deflate(delta, deflate)))
    warnings = tuple(collar_warnings(grid, w, s=None, p=p, tau=tau))
    extras = {"residual": res, "deflated": 0 if deflate is None else int(deflate.shape[1])}
    green = KernelSlice(kind=SliceKind.GREEN, grid=grid, source=w, values=x, tau=tau, warnings=warnings, extras=extras)
    rel = KernelSlice(
        kind=SliceKind.R, grid=grid, source=w, values=z_op.apply(x), tau=tau, warnings=warnings, extras=dict(extras)
    )
    return green, rel


def relative_identity_residual(
    p: SubharmonicPolynomial,
    tau: float,
    grid: Grid,
    projector: SzegoProjector,
    phis: np.ndarray,
    psis: np.ndarray,
) -> float:
    """
    Largest |<(Z G) ZBar phi, psi> + <(I - S) phi, psi>| over test pairs, relative to ||phi|| ||psi||.
    With Z = -ZBar^* the composition R ZBar equals -(I - S).
    """
    box = assemble_box(p, tau, grid, twiddle=False)
    zbar = assemble_first_order(OperatorKind.ZBAR, grid, p, tau)
    z_op = assemble_first_order(OperatorKind.Z, grid, p, tau)
    deflate = projector.image_basis(zbar)
    worst = 0.0
    h2 = grid.h**2
    for phi, psi in zip(phis, psis):
        lhs = z_op.apply(green_apply(box, zbar.apply(phi), deflate))
        rhs = projector.complement(phi)
        gap = abs(h2 * np.vdot(psi, lhs + rhs))
        worst = max(worst, gap / (l2_norm(grid, phi) * l2_norm(grid, psi)))
    return float(worst)


def resolvent_column(op: SparseOperator, lam: float, w: int) -> KernelSlice:
    """Column of (lam + op)^{-1}: the Laplace transform in s of the heat kernel."""
    if lam <= 0:
        raise ValueError(f"resolvent parameter must be positive, got {lam}")
    _check_hermitian(op)
    delta = source_vector(op.grid, w)
    mat = (op.matrix + lam * sps.identity(op.dim, format="csr")).tocsc()
    x = spla.spsolve(mat, delta)
    res = float(np.linalg.norm(mat @ x - delta) / np.linalg.norm(delta))
    if not np.isfinite(res) or res > 1e-8:
        raise SolverError("resolvent solve missed its residual target", residual=res)
    out = KernelSlice(
        kind=SliceKind.RESOLVENT, grid=op.grid, source=w, values=x, tau=op.tau, lam=float(lam),
        warnings=tuple(collar_warnings(op.grid, w, s=1.0 / lam, p=op.p, tau=op.tau)),
        extras={"residual": res},
    )
    out.extras["norm"] = out.norm()
    return out


def laplace_quadrature(
    op: SparseOperator,
    w: int,
    lam: float,
    *,
    t_max: float,
    nodes: int = 160,
    s_min: float = 1e-4,
    tol: float = 1e-10,
    deflate: np.ndarray | None = None,
) -> np.ndarray:
    """
    int_0^t_max exp(-lam s) exp(-s op) delta_w ds by the trapezoid rule on [0] + a
    log-spaced ladder, marching the semigroup from node to node.
    """
    s_nodes = np.concatenate([[0.0], np.geomspace(s_min, t_max, nodes)])
    current = _deflate(source_vector(op.grid, w), deflate)
    samples = np.empty((s_nodes.size, op.dim), dtype=complex)
    samples[0] = current
    for i in range(1, s_nodes.size):
        current = heat_apply(op, s_nodes[i] - s_nodes[i - 1], current, tol=tol)
        samples[i] = current
    return trapezoid(np.exp(-lam * s_nodes)[:, None] * samples, s_nodes, axis=0)


@dataclass(frozen=True)
class DerivativeSpec:
    """Y-words applied right to left: the last letter acts first."""

    z_word: tuple[str, ...] = ()
    w_word: tuple[str, ...] = ()
    s_order: int = 0

    Z_LETTERS = frozenset({"X1", "X2", "Z", "ZBar"})
    W_LETTERS = frozenset({"U1", "U2", "W", "WBar"})

    def __post_init__(self) -> None:
        bad = [x for x in self.z_word if x not in self.Z_LETTERS] + [x for x in self.w_word if x not in self.W_LETTERS]
        if bad:
            raise ValueError(f"unknown derivative letters: {bad}")
        if self.s_order < 0:
            raise ValueError("s_order must be nonnegative")

    @property
    def order(self) -> int:
        return len(self.z_word) + len(self.w_word)

    @property
    def label(self) -> str:
        parts = [f"z:{'.'.join(self.z_word)}" if self.z_word else "", f"w:{'.'.join(self.w_word)}" if self.w_word else ""]
        if self.s_order:
            parts.append(f"s^{self.s_order}")
        return " ".join(x for x in parts if x) or "identity"

    def annihilates_szego(self) -> bool:
        # ZBar_z S = 0, W_w S = 0, and S does not depend on s
        return self.s_order >= 1 or (bool(self.z_word) and self.z_word[-1] == "ZBar") or (
            bool(self.w_word) and self.w_word[-1] == "W"
        )


@dataclass(frozen=True, eq=False)
class KernelContext:
    """How to rebuild a slice from an arbitrary source vector, plus its generator."""

    generator: SparseOperator | None
    rebuild: Callable[[np.ndarray], np.ndarray]
    p: SubharmonicPolynomial | None
    tau: float


def kernel_context(
    slice_: KernelSlice,
    *,
    op: SparseOperator | None = None,
    projector: SzegoProjector | None = None,
    tol: float = 1e-10,
    deflate: np.ndarray | None = None,
) -> KernelContext:
    kind = slice_.kind
    if kind is SliceKind.SZEGO:
        if projector is None:
            raise UnsupportedKernelError("a Szego slice needs its projector")
        return KernelContext(generator=None, rebuild=projector.apply, p=None, tau=slice_.tau)
    if kind not in (SliceKind.H, SliceKind.HTILDE, SliceKind.GTILDE):
        raise UnsupportedKernelError(f"derivatives are not supported for {kind.value} slices")
    if op is None:
        raise UnsupportedKernelError(f"{kind.value} slices need their generating box")
    s = float(slice_.s or 0.0)
    if kind is SliceKind.GTILDE:
        if projector is None:
            raise UnsupportedKernelError("a G~ slice needs its projector")
        return KernelContext(op, lambda b: heat_apply(op, s, projector.complement(b), tol=tol), op.p, op.tau)
    return KernelContext(op, lambda b: heat_apply(op, s, _deflate(b, deflate), tol=tol), op.p, op.tau)


def word_matrix(word: Sequence[str], grid: Grid, p: SubharmonicPolynomial | None, tau: float) -> sps.csr_matrix:
    out = sps.identity(grid.size, dtype=complex, format="csr")
    for letter in word:
        out = (out @ assemble_first_order(OperatorKind(letter), grid, p, tau).matrix).tocsr()
    return out


def derivative_kernel(slice_: KernelSlice, spec: DerivativeSpec, ctx: KernelContext) -> KernelSlice:
    """
    Y^alpha_z Y^beta_w d_s^n applied to a kernel slice.

    A w-word V acts on the second variable as K(z, w) -> sum_v V[w, v] K(z, v), so
    the slice is rebuilt from the source V^T e_w / h^2 in one application.
    s-derivatives are (-generator)^n, applied before the z-word.
    """
    grid = slice_.grid
    if slice_.kind not in (SliceKind.H, SliceKind.HTILDE, SliceKind.GTILDE, SliceKind.SZEGO):
        raise UnsupportedKernelError(f"derivatives are not supported for {slice_.kind.value} slices")
    values = slice_.values
    if spec.w_word:
        row = word_matrix(spec.w_word, grid, ctx.p, ctx.tau).getrow(slice_.source).toarray().ravel()
        values = ctx.rebuild(row / grid.h**2)
    if spec.s_order:
        if ctx.generator is None:
            values = np.zeros_like(values)
        else:
            for _ in range(spec.s_order):
                values = -(ctx.generator.matrix @ values)
    if spec.z_word:
        values = word_matrix(spec.z_word, grid, ctx.p, ctx.tau) @ values
    extras = dict(slice_.extras)
    extras["derivative"] = spec.label
    return slice_.with_values(np.asarray(values, dtype=complex), extras=extras)


def intertwining_residual(
    box: SparseOperator, box_tilde: SparseOperator, zbar: SparseOperator, s: float, f: np.ndarray, *, tol: float = 1e-12
) -> tuple[float, float]:
    """
    (||exp(-s Box) ZBar f - ZBar exp(-s BoxTilde) f||, same with Z and the boxes swapped),
    both relative to ||f||.
    """
    z_mat = (-zbar.matrix.conj().T).tocsr()
    nf = float(np.linalg.norm(f))
    first = heat_apply(box, s, zbar.matrix @ f, tol=tol) - zbar.matrix @ heat_apply(box_tilde, s, f, tol=tol)
    second = heat_apply(box_tilde, s, z_mat @ f, tol=tol) - z_mat @ heat_apply(box, s, f, tol=tol)
    return float(np.linalg.norm(first)) / nf, float(np.linalg.norm(second)) / nf


def g_tilde_norm_ladder(
    box_tilde: SparseOperator, projector: SzegoProjector, w: int, s_values: Sequence[float], *, tol: float = 1e-12
) -> tuple[np.ndarray, float]:
    """
    ||G~(s, ., w)|| along an increasing s ladder and the decay rate fitted on its upper half.

    G~ is H~ with the heat-evolved Szego column removed, so this is the distance of H~ to
    its s -> infinity limit without the drift of the slightly non-null grid modes.
    """
    s_values = np.asarray(sorted(s_values), dtype=float)
    current = projector.complement(source_vector(box_tilde.grid, w))
    norms = np.empty(s_values.size)
    last = 0.0
    for i, s in enumerate(s_values):
        current = heat_apply(box_tilde, s - last, current, tol=tol)
        last = s
        norms[i] = l2_norm(box_tilde.grid, current)
    half = s_values.size // 2
    slope = np.polyfit(s_values[half:], np.log(norms[half:]), 1)[0]
    return norms, float(-slope)


def product_bound(
    decomp: SpectralDecomposition, z: int, f_values: np.ndarray, g_values: np.ndarray
) -> tuple[float, float]:
    """(||K_FG(z, .)||, max|G| ||K_F(z, .)||) for F, G sampled on the eigenvalues."""
    if not decomp.complete:
        raise UnsupportedKernelError("kernel rows need a complete decomposition")
    grid = decomp.op.grid
    k_f = decomp.kernel_row(z, f_values)
    k_fg = decomp.kernel_row(z, f_values * g_values)
    return l2_norm(grid, k_fg), float(np.max(np.abs(g_values))) * l2_norm(grid, k_f)
