"""
Finite-difference assembly of the weighted first-order operators and both boxes.

Nodes are z_ab = (-L + a h) + i(-L + b h), stored row-major with flat index a + n*b.
Values outside the grid are zero. The first-order operators share one stencil:

    ZBar = 1/2 (D1 + i D2) + tau/2 (M1 + i M2)

where D_j is a zero-extended fourth-order difference along x_j on the odd offsets 1 and 3,
and M_j is the symmetric multiplier carrying dp/dx_j at the midpoints of the same node
pairs. With this choice Z = -ZBar^H holds on every row and the coordinate swap maps
ZBar_{-tau,p} onto ZBar_{tau,p~}^H. Both stencils only couple nodes an odd distance apart,
so the boxes act on parity classes of the lattice and the four species share one spectrum.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sps
from scipy import ndimage

from heatlab.core.errors import GridError, OperatorKindError
from heatlab.core.polygeom import SubharmonicPolynomial

logger = logging.getLogger(__name__)

MIN_POINTS = 8


@dataclass(frozen=True)
class Grid:
    half_width: float
    n: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise GridError(f"half width must be positive, got {self.half_width}")
        if int(self.n) != self.n or self.n < MIN_POINTS:
            raise GridError(f"need at least {MIN_POINTS} points per side, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def size(self) -> int:
        return self.n * self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n)

    @cached_property
    def z(self) -> np.ndarray:
        t = self.axis
        return (t[None, :] + 1j * t[:, None]).ravel()

    def index(self, a: int, b: int) -> int:
        if not (0 <= a < self.n and 0 <= b < self.n):
            raise GridError(f"node ({a}, {b}) outside a {self.n}x{self.n} grid")
        return int(a + self.n * b)

    def node(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.size:
            raise GridError(f"node index {index} outside grid of {self.size} nodes")
        return int(index % self.n), int(index // self.n)

    def nearest(self, z: complex) -> int:
        a = int(np.clip(np.rint((z.real + self.half_width) / self.h), 0, self.n - 1))
        b = int(np.clip(np.rint((z.imag + self.half_width) / self.h), 0, self.n - 1))
        return self.index(a, b)

    def boundary_distance(self, z: complex | np.ndarray) -> np.ndarray | float:
        z = np.asarray(z, dtype=complex)
        return self.half_width - np.maximum(np.abs(z.real), np.abs(z.imag))

    def in_collar(self, z: complex, width: float) -> bool:
        return bool(self.boundary_distance(z) < width)


def build_grid(L: float, n: int) -> Grid:
    grid = Grid(half_width=float(L), n=int(n))
    logger.debug("grid n=%d L=%g h=%g", grid.n, grid.half_width, grid.h)
    return grid


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.size,):
            raise GridError(f"expected {self.grid.size} values, got shape {self.values.shape}")

    @classmethod
    def delta(cls, grid: Grid, index: int) -> "GridFunction":
        """Discrete delta at a node, normalized by 1/h^2 so it integrates to 1 against dA."""
        v = np.zeros(grid.size, dtype=complex)
        v[index] = 1.0 / grid.h**2
        return cls(grid, v)

    @classmethod
    def sample(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.z), dtype=complex))

    def inner(self, other: "GridFunction") -> complex:
        return complex(self.grid.h**2 * np.vdot(other.values, self.values))

    def norm(self) -> float:
        return float(self.grid.h * np.linalg.norm(self.values))


def l2_norm(grid: Grid, values: np.ndarray) -> float:
    return float(grid.h * np.linalg.norm(values))


def l2_inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> complex:
    return complex(grid.h**2 * np.vdot(g, f))


class OperatorKind(str, enum.Enum):
    ZBAR = "ZBar"
    Z = "Z"
    WBAR = "WBar"
    W = "W"
    X1 = "X1"
    X2 = "X2"
    U1 = "U1"
    U2 = "U2"
    BOX = "Box"
    BOX_TILDE = "BoxTilde"

    @property
    def first_order(self) -> bool:
        return self not in (OperatorKind.BOX, OperatorKind.BOX_TILDE)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    kind: OperatorKind
    matrix: sps.csr_matrix
    grid: Grid
    tau: float
    p: SubharmonicPolynomial | None = None
    hermitian: bool = False
    positive_semidefinite: bool = False
    meta: dict[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def __matmul__(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    @cached_property
    def adjoint(self) -> sps.csr_matrix:
        # the discrete L2 weight h^2 is uniform, so the adjoint is the conjugate transpose
        return self.matrix.conj().T.tocsr()

    def hermitian_defect(self) -> float:
        diff = self.matrix - self.adjoint
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0


# odd node offsets and their weights: derivative of the cubic midpoint interpolant
DIFF_WEIGHTS = {1: 27.0 / 48.0, 3: -1.0 / 48.0}
AVERAGE_WEIGHTS = {1: 9.0 / 16.0, 3: -1.0 / 16.0}


def difference_matrices(grid: Grid) -> tuple[sps.csr_matrix, sps.csr_matrix]:
    """
    Zero-extended fourth-order differences along x1 and x2 on the odd offsets 1 and 3.
    The symbol is 9/8 sin(theta) - 1/24 sin(3 theta) = theta - 0.075 theta^5.
    """
    n, h = grid.n, grid.h
    diagonals, offsets = [], []
    for off, weight in DIFF_WEIGHTS.items():
        diagonals += [weight * np.ones(n - off), -weight * np.ones(n - off)]
        offsets += [off, -off]
    d1 = sps.diags(diagonals, offsets, shape=(n, n)) / h
    eye = sps.identity(n, format="csr")
    return sps.kron(eye, d1, format="csr"), sps.kron(d1, eye, format="csr")


def edge_multipliers(p: SubharmonicPolynomial, grid: Grid) -> tuple[sps.csr_matrix, sps.csr_matrix]:
    """
    Symmetric averaging operators carrying dp/dx1 and dp/dx2, sampled at the midpoint of
    every pair of nodes the difference stencil couples.
    """
    n, h = grid.n, grid.h
    t = grid.axis
    shape = (grid.size, grid.size)
    m1 = sps.coo_matrix(shape, dtype=float)
    m2 = sps.coo_matrix(shape, dtype=float)
    for off, weight in AVERAGE_WEIGHTS.items():
        a, b = np.meshgrid(np.arange(n - off), np.arange(n), indexing="xy")
        a, b = a.ravel(), b.ravel()
        mid = t[a] + 0.5 * off * h
        # pairs (a, b) -- (a+off, b) along x1
        px, _ = p.gradient(mid + 1j * t[b])
        rows = a + n * b
        m1 = m1 + sps.coo_matrix((weight * px, (rows, rows + off)), shape=shape)
        # pairs (b, a) -- (b, a+off) along x2
        _, py = p.gradient(t[b] + 1j * mid)
        rows = b + n * a
        m2 = m2 + sps.coo_matrix((weight * py, (rows, rows + n * off)), shape=shape)
    m1 = sps.csr_matrix(m1)
    m2 = sps.csr_matrix(m2)
    return (m1 + m1.T).tocsr(), (m2 + m2.T).tocsr()


def _weighted_dbar(grid: Grid, p: SubharmonicPolynomial | None, tau: float, sign: float) -> sps.csr_matrix:
    d1, d2 = difference_matrices(grid)
    out = 0.5 * (d1 + 1j * d2)
    if tau != 0.0:
        if p is None:
            raise OperatorKindError("a weight polynomial is required when tau != 0")
        m1, m2 = edge_multipliers(p, grid)
        out = out + sign * 0.5 * tau * (m1 + 1j * m2)
    return sps.csr_matrix(out, dtype=complex)


def assemble_first_order(
    kind: OperatorKind, grid: Grid, p: SubharmonicPolynomial | None, tau: float
) -> SparseOperator:
    """
    Assemble one of ZBar, Z, WBar, W, X1, X2, U1, U2.

    Z and W are the negative conjugate transposes of ZBar and WBar; X and U are
    formed from the assembled Z-type matrices so their defining identities are exact.
    """
    kind = OperatorKind(kind)
    if not kind.first_order:
        raise OperatorKindError(f"{kind.value} is second order; use assemble_box")
    zbar = _weighted_dbar(grid, p, tau, +1.0)
    wbar = _weighted_dbar(grid, p, tau, -1.0)
    z = (-zbar.conj().T).tocsr()
    w = (-wbar.conj().T).tocsr()
    table = {
        OperatorKind.ZBAR: zbar,
        OperatorKind.Z: z,
        OperatorKind.WBAR: wbar,
        OperatorKind.W: w,
        OperatorKind.X1: (z + zbar).tocsr(),
        OperatorKind.X2: (1j * (z - zbar)).tocsr(),
        OperatorKind.U1: (w + wbar).tocsr(),
        OperatorKind.U2: (1j * (w - wbar)).tocsr(),
    }
    return SparseOperator(kind=kind, matrix=table[kind], grid=grid, tau=float(tau), p=p)


def assemble_box(p: SubharmonicPolynomial | None, tau: float, grid: Grid, twiddle: bool) -> SparseOperator:
    """Box = ZBar ZBar^H, BoxTilde = ZBar^H ZBar, symmetrized so both are exactly Hermitian."""
    zbar = _weighted_dbar(grid, p, tau, +1.0)
    zbar_h = zbar.conj().T.tocsr()
    prod = (zbar_h @ zbar) if twiddle else (zbar @ zbar_h)
    prod = (0.5 * (prod + prod.conj().T)).tocsr()
    prod.eliminate_zeros()
    kind = OperatorKind.BOX_TILDE if twiddle else OperatorKind.BOX
    return SparseOperator(
        kind=kind, matrix=prod, grid=grid, tau=float(tau), p=p, hermitian=True, positive_semidefinite=True
    )


def direct_box_matrix(p: SubharmonicPolynomial | None, tau: float, grid: Grid, twiddle: bool) -> sps.csr_matrix:
    """
    Real form -1/4 Lap -+ 1/4 tau Lap(p) + tau^2/4 |grad p|^2 + i/2 tau (p_x1 d_x2 - p_x2 d_x1),
    discretized with the same differences (second derivatives as D_j D_j).
    """
    d1, d2 = difference_matrices(grid)
    out = -0.25 * (d1 @ d1 + d2 @ d2)
    if tau != 0.0:
        if p is None:
            raise OperatorKindError("a weight polynomial is required when tau != 0")
        px, py = p.gradient(grid.z)
        lap = p.laplacian(grid.z)
        sign = -1.0 if twiddle else 1.0
        pxm = sps.diags(px)
        pym = sps.diags(py)
        potential = sign * 0.25 * tau * lap + 0.25 * tau**2 * (px**2 + py**2)
        magnetic = (pxm @ d2 + d2 @ pxm) - (pym @ d1 + d1 @ pym)
        out = out + sps.diags(potential) + 0.25j * tau * magnetic
    return sps.csr_matrix(out, dtype=complex)


def interior_bumps(grid: Grid, count: int, rng: np.random.Generator, margin: float | None = None) -> np.ndarray:
    """
    Smooth compactly supported test functions exp(-1/(1-rho^2)) with random center,
    radius and complex amplitude, normalized to unit discrete L2 norm; shape (count, n^2).
    """
    L = grid.half_width
    margin = 2.0 * grid.h if margin is None else margin
    out = np.zeros((count, grid.size), dtype=complex)
    for i in range(count):
        r = rng.uniform(0.2, 0.4) * L
        room = max(L - r - margin, 0.0)
        c = complex(rng.uniform(-room, room), rng.uniform(-room, room)) * 0.5
        amp = complex(rng.normal(), rng.normal())
        rho2 = np.abs(grid.z - c) ** 2 / r**2
        vals = np.zeros(grid.size, dtype=complex)
        inside = rho2 < 1.0
        vals[inside] = amp * np.exp(-1.0 / (1.0 - rho2[inside]))
        if not inside.any():
            vals[grid.nearest(c)] = amp
        out[i] = vals / l2_norm(grid, vals)
    return out


def _operator_discrepancy(grid: Grid, a: sps.spmatrix, b: sps.spmatrix, trials: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for f in interior_bumps(grid, trials, rng):
        ref = max(1.0, l2_norm(grid, b @ f))
        worst = max(worst, l2_norm(grid, (a - b) @ f) / ref)
    return worst


def direct_box_residual(
    p: SubharmonicPolynomial | None, tau: float, grid: Grid, twiddle: bool, *, trials: int = 10, seed: int = 0
) -> float:
    box = assemble_box(p, tau, grid, twiddle)
    direct = direct_box_matrix(p, tau, grid, twiddle)
    residual = _operator_discrepancy(grid, direct, box.matrix, trials, seed)
    logger.debug("direct box residual n=%d tau=%s twiddle=%s: %.3e", grid.n, tau, twiddle, residual)
    return residual


def swap_permutation(grid: Grid) -> np.ndarray:
    """perm[a + n b] = b + n a: the node map of (x1, x2) -> (x2, x1)."""
    n = grid.n
    idx = np.arange(grid.size)
    return (idx // n) + n * (idx % n)


def symmetry_swap_residual(
    p: SubharmonicPolynomial, tau: float, grid: Grid, *, trials: int = 10, seed: int = 0
) -> float:
    """Discrepancy between P Box_{-tau,p} P and BoxTilde_{tau,p~} on interior test functions."""
    perm = swap_permutation(grid)
    left = assemble_box(p, -tau, grid, twiddle=False).matrix[perm][:, perm]
    right = assemble_box(p.swapped(), tau, grid, twiddle=True).matrix
    return _operator_discrepancy(grid, left, right, trials, seed)


def conjugation_residual(p: SubharmonicPolynomial, tau: float, grid: Grid) -> float:
    """Max entry of Box_{-tau,p} - conj(BoxTilde_{tau,p}); exactly zero for this stencil."""
    left = assemble_box(p, -tau, grid, twiddle=False).matrix
    right = assemble_box(p, tau, grid, twiddle=True).matrix.conj()
    diff = (left - right).tocsr()
    return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0


def doubler_filter(grid: Grid, values: np.ndarray) -> np.ndarray:
    """
    Species filter along both axes with taps (-1, 0, 9, 16, 9, 0, -1)/32. It removes the
    wave number pi per axis, keeps values on a parity class and fills the other class by
    cubic midpoint interpolation, so a column living on one class comes back as a density.
    """
    arr = np.asarray(values).reshape(grid.n, grid.n)
    weights = np.array([-1.0, 0.0, 9.0, 16.0, 9.0, 0.0, -1.0]) / 32.0

    def smooth(x: np.ndarray) -> np.ndarray:
        x = ndimage.convolve1d(x, weights, axis=0, mode="constant")
        return ndimage.convolve1d(x, weights, axis=1, mode="constant")

    if np.iscomplexobj(arr):
        return (smooth(arr.real) + 1j * smooth(arr.imag)).ravel()
    return smooth(arr).ravel()
