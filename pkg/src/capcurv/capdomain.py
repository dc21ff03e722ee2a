"""Discrete geometry of the spherical cap C_theta.

Grid layout (n = 2): latitude rows theta1_i = (i + 1/2) * theta / N1, longitude
columns theta2_j = 2 pi j / N2.  Fields are stored latitude-major, node index
p = i * N2 + j.  Two ghost rows close the difference stencils:

* row -1 is the across-pole image, F(-theta1, theta2) = F(theta1, theta2 + pi);
* row N1 lies half a cell outside the boundary theta1 = theta and is eliminated
  with a third-order Robin extrapolation from the last three rows, so every
  stencil keeps at most 3 x 3 nodes.

Stencils that end up divided by sin(theta1) (first differences, the
theta2 second difference and the mixed difference) carry trigonometric
correction factors Delta / sin Delta and Delta^2 / (2 - 2 cos Delta).  Near the
pole this keeps the sin(theta1)-modes (horizontal translations) second order
instead of first order.  The plain theta1 second difference is left as is.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, MissingBoundaryPolicyError, PositivityError, UnsupportedAngleError

POLICIES = ("robin", "even_reflection_only", "none")


@dataclass(frozen=True)
class CapGrid:
    """Staggered latitude-longitude grid on C_theta."""

    theta: float
    n: int
    N1: int
    N2: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.theta <= 0.5 * np.pi + 1e-15):
            raise UnsupportedAngleError(f"contact angle must lie in (0, pi/2], got {self.theta}")
        if self.n != 2:
            raise ArgumentError("only the n = 2 grid is implemented")
        if self.N1 < 8:
            raise ArgumentError(f"N1 must be at least 8, got {self.N1}")
        if self.N2 < 16 or self.N2 % 2:
            raise ArgumentError(f"N2 must be even and at least 16, got {self.N2}")

    # -- coordinates ---------------------------------------------------------

    @property
    def shape(self):
        return (self.N1, self.N2)

    @property
    def size(self) -> int:
        return self.N1 * self.N2

    @property
    def d1(self) -> float:
        return self.theta / self.N1

    @property
    def d2(self) -> float:
        return 2.0 * np.pi / self.N2

    @cached_property
    def theta1(self) -> np.ndarray:
        return (np.arange(self.N1) + 0.5) * self.d1

    @cached_property
    def theta2(self) -> np.ndarray:
        return np.arange(self.N2) * self.d2

    @cached_property
    def mesh(self):
        """Node coordinates as two (N1, N2) arrays."""
        return np.meshgrid(self.theta1, self.theta2, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: midpoint in theta1, trapezoidal (periodic) in theta2."""
        w1 = np.sin(self.theta1) ** (self.n - 1) * self.d1 * self.d2
        return np.repeat(w1[:, None], self.N2, axis=1)

    @property
    def cos_theta(self) -> float:
        # exact zero for the hemisphere, where ell = 1 identically
        return 0.0 if self.theta == 0.5 * np.pi else float(np.cos(self.theta))

    @property
    def cot_theta(self) -> float:
        return self.cos_theta / float(np.sin(self.theta))

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit normals nu = xi - cos(theta) e at the nodes, shape (N1, N2, 3)."""
        t1, t2 = self.mesh
        return np.stack([np.sin(t1) * np.sin(t2), np.sin(t1) * np.cos(t2), np.cos(t1)], axis=-1)

    @cached_property
    def frame(self):
        """Ambient vectors of the orthonormal frame (e_1, e_2), each (N1, N2, 3)."""
        t1, t2 = self.mesh
        e1 = np.stack([np.cos(t1) * np.sin(t2), np.cos(t1) * np.cos(t2), -np.sin(t1)], axis=-1)
        e2 = np.stack([np.cos(t2), -np.sin(t2), np.zeros_like(t2)], axis=-1)
        return e1, e2

    def checksum(self) -> str:
        text = f"{self.theta!r}|{self.n}|{self.N1}|{self.N2}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # -- difference operators --------------------------------------------------

    def robin_ghost_weights(self, coef: float) -> np.ndarray:
        """Weights (w0, w1, w2) with ghost = w0 F[N1-1] + w1 F[N1-2] + w2 F[N1-3].

        Exact for every cubic in theta1 obeying dF/dtheta1 = coef * F at theta1 = theta.
        """
        kappa = coef * self.d1
        xs = np.array([-0.5, -1.5, -2.5])
        V = np.stack([1.0 + kappa * xs, xs**2, xs**3], axis=1)
        target = np.array([1.0 + 0.5 * kappa, 0.25, 0.125])
        return np.linalg.solve(V.T, target)

    def operators(self, coef: float | None = None) -> "DiffOperators":
        """Sparse difference operators with a Robin ghost of coefficient ``coef``.

        ``coef`` defaults to cot(theta) (the support-function condition);
        ``coef = 0`` gives the Neumann condition used for u = h / ell.
        """
        if coef is None:
            coef = self.cot_theta
        key = ("ops", float(coef))
        if key not in self._cache:
            self._cache[key] = _build_operators(self, float(coef))
        return self._cache[key]


@dataclass(frozen=True)
class DiffOperators:
    d1: sp.csr_matrix
    d2: sp.csr_matrix
    d11: sp.csr_matrix
    d22: sp.csr_matrix
    d12: sp.csr_matrix
    # frame components of the covariant Hessian
    h11: sp.csr_matrix
    h12: sp.csr_matrix
    h22: sp.csr_matrix

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return (self.h11 + self.h22).tocsr()


def _neighbor(grid: CapGrid, di: int, dj: int, ghost_w):
    """Columns and multipliers realizing node (i + di, j + dj) for every node.

    Returns a list of (cols, mult) pairs, each an array over all nodes.
    """
    N1, N2 = grid.shape
    i, j = np.meshgrid(np.arange(N1), np.arange(N2), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    ii = i + di
    jj = (j + dj) % N2
    pieces = []
    inside = (ii >= 0) & (ii < N1)
    pole = ii < 0
    outer = ii >= N1
    cols = np.where(inside, np.clip(ii, 0, N1 - 1) * N2 + jj, 0)
    pieces.append((cols, inside.astype(float)))
    # across-pole image
    pole_cols = ((jj + N2 // 2) % N2)
    pieces.append((pole_cols, pole.astype(float)))
    # Robin ghost row
    for back, w in enumerate(ghost_w):
        pieces.append(((N1 - 1 - back) * N2 + jj, outer * w))
    return pieces


def _stencil_matrix(grid: CapGrid, terms, ghost_w) -> sp.csr_matrix:
    """Assemble sum over (di, dj, coef) of coef * shift(di, dj)."""
    N = grid.size
    rows = np.arange(N)
    R, C, D = [], [], []
    for di, dj, coef in terms:
        coef = np.broadcast_to(np.asarray(coef, dtype=float), grid.shape).ravel()
        for cols, mult in _neighbor(grid, di, dj, ghost_w):
            keep = mult != 0.0
            R.append(rows[keep])
            C.append(cols[keep])
            D.append((coef * mult)[keep])
    M = sp.coo_matrix((np.concatenate(D), (np.concatenate(R), np.concatenate(C))), shape=(N, N))
    return M.tocsr()


def _build_operators(grid: CapGrid, coef: float) -> DiffOperators:
    gw = grid.robin_ghost_weights(coef)
    a, b = grid.d1, grid.d2
    s1 = 2.0 * np.sin(a)
    s2 = 2.0 * np.sin(b)
    c1 = a * a  # D11 is never divided by sin(theta1), so no fitting
    c2 = 2.0 - 2.0 * np.cos(b)
    d1 = _stencil_matrix(grid, [(1, 0, 1 / s1), (-1, 0, -1 / s1)], gw)
    d2 = _stencil_matrix(grid, [(0, 1, 1 / s2), (0, -1, -1 / s2)], gw)
    d11 = _stencil_matrix(grid, [(1, 0, 1 / c1), (0, 0, -2 / c1), (-1, 0, 1 / c1)], gw)
    d22 = _stencil_matrix(grid, [(0, 1, 1 / c2), (0, 0, -2 / c2), (0, -1, 1 / c2)], gw)
    q = 1.0 / (s1 * s2)
    d12 = _stencil_matrix(grid, [(1, 1, q), (1, -1, -q), (-1, 1, -q), (-1, -1, q)], gw)

    t1 = grid.mesh[0].ravel()
    inv_s = sp.diags(1.0 / np.sin(t1))
    cot = sp.diags(np.cos(t1) / np.sin(t1))
    h11 = d11
    h12 = (inv_s @ (d12 - cot @ d2)).tocsr()
    h22 = (inv_s @ inv_s @ d22 + cot @ d1).tocsr()
    return DiffOperators(d1=d1, d2=d2, d11=d11, d22=d22, d12=d12, h11=h11, h12=h12, h22=h22)


def build_grid(theta: float, n: int = 2, N1: int = 64, N2: int = 128) -> CapGrid:
    """Construct the staggered cap grid; see :class:`CapGrid` for the contract."""
    return CapGrid(float(theta), int(n), int(N1), int(N2))


# -- fields --------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """One value per node plus the rule used to extend it past the grid.

    ``policy`` is ``"robin"`` (pole image + Robin ghost with coefficient
    ``robin_coef``, default cot(theta)), ``"even_reflection_only"`` (data that
    may be reflected and integrated but not differentiated) or ``"none"``.
    """

    grid: CapGrid
    values: np.ndarray
    policy: str = "robin"
    robin_coef: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ArgumentError("field has non-finite values")
        if self.policy not in POLICIES:
            raise ArgumentError(f"unknown boundary policy {self.policy!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def replace(self, values=None, policy=None) -> "ScalarField":
        return ScalarField(
            self.grid,
            self.values if values is None else values,
            self.policy if policy is None else policy,
            self.robin_coef,
        )

    def __add__(self, other):
        other_vals = other.values if isinstance(other, ScalarField) else other
        return self.replace(values=self.values + other_vals)

    def __sub__(self, other):
        other_vals = other.values if isinstance(other, ScalarField) else other
        return self.replace(values=self.values - other_vals)

    def __mul__(self, c):
        other_vals = c.values if isinstance(c, ScalarField) else c
        return self.replace(values=self.values * other_vals)

    __rmul__ = __mul__


def field_from_function(grid: CapGrid, fn, policy: str = "robin") -> ScalarField:
    """Sample ``fn(theta1, theta2)`` at the nodes."""
    t1, t2 = grid.mesh
    return ScalarField(grid, np.broadcast_to(fn(t1, t2), grid.shape), policy)


def _ops_for(F: ScalarField) -> DiffOperators:
    if F.policy != "robin":
        raise MissingBoundaryPolicyError(
            f"field with policy {F.policy!r} cannot be differentiated up to the boundary"
        )
    return F.grid.operators(F.robin_coef)


@dataclass(frozen=True)
class FrameMatrixField:
    """Per-node symmetric 2x2 matrices in the frame (d/dtheta1, d/(sin theta1 dtheta2))."""

    grid: CapGrid
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    @property
    def matrices(self) -> np.ndarray:
        return np.stack(
            [np.stack([self.a11, self.a12], -1), np.stack([self.a12, self.a22], -1)], -2
        )

    @property
    def trace(self) -> np.ndarray:
        return self.a11 + self.a22

    @property
    def det(self) -> np.ndarray:
        return self.a11 * self.a22 - self.a12 * self.a12

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues, shape (N1, N2, 2)."""
        half_tr = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return np.stack([half_tr - rad, half_tr + rad], axis=-1)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(self.eigenvalues()[..., 0]))

    @property
    def max_eigenvalue(self) -> float:
        return float(np.max(self.eigenvalues()[..., 1]))

    def argmin_eigenvalue(self):
        lo = self.eigenvalues()[..., 0]
        return np.unravel_index(int(np.argmin(lo)), lo.shape)

    def __add__(self, other: "FrameMatrixField") -> "FrameMatrixField":
        return FrameMatrixField(self.grid, self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)

    def scaled(self, c: float) -> "FrameMatrixField":
        return FrameMatrixField(self.grid, c * self.a11, c * self.a12, c * self.a22)


def ell_field(grid: CapGrid) -> ScalarField:
    """ell = sin^2 theta + cos theta <xi, e> = 1 - cos(theta) cos(theta1)."""
    return ScalarField(grid, 1.0 - grid.cos_theta * np.cos(grid.mesh[0]))


def coord_field(grid: CapGrid, alpha: int) -> ScalarField:
    """<xi, E_alpha> at the nodes, alpha in 1..n+1.

    The horizontal coordinates obey the Robin condition; the vertical one
    does not, so derivatives of it are only meaningful away from the last row.
    """
    t1, t2 = grid.mesh
    if alpha == 1:
        vals = np.sin(t1) * np.sin(t2)
    elif alpha == 2:
        vals = np.sin(t1) * np.cos(t2)
    elif alpha == 3:
        vals = np.cos(t1) - grid.cos_theta
    else:
        raise ArgumentError(f"alpha must lie in 1..{grid.n + 1}, got {alpha}")
    return ScalarField(grid, vals)


def covariant_gradient(F: ScalarField) -> np.ndarray:
    """Frame components (dF/dtheta1, dF/(sin theta1 dtheta2)), shape (N1, N2, 2)."""
    ops = _ops_for(F)
    g = F.grid
    f = F.flat
    inv_s = 1.0 / np.sin(g.mesh[0])
    return np.stack([(ops.d1 @ f).reshape(g.shape), (ops.d2 @ f).reshape(g.shape) * inv_s], axis=-1)


def covariant_hessian(F: ScalarField) -> FrameMatrixField:
    ops = _ops_for(F)
    g = F.grid
    f = F.flat
    return FrameMatrixField(
        g,
        (ops.h11 @ f).reshape(g.shape),
        (ops.h12 @ f).reshape(g.shape),
        (ops.h22 @ f).reshape(g.shape),
    )


def radii_operator(h: ScalarField) -> FrameMatrixField:
    """A = Hess h + h sigma; its eigenvalues are the principal radii."""
    H = covariant_hessian(h)
    return FrameMatrixField(h.grid, H.a11 + h.values, H.a12, H.a22 + h.values)


def integrate(F) -> float:
    """Quadrature sum F * w over the cap.

    Antipodal columns are added first, so the sum is bitwise invariant under
    :func:`reflect`.
    """
    if isinstance(F, ScalarField):
        return _paired_sum(F.values, F.grid)
    raise ArgumentError("integrate expects a ScalarField")


def _paired_sum(values: np.ndarray, grid: CapGrid) -> float:
    half = grid.N2 // 2
    w = grid.weights[:, :half]
    return float(np.sum((values[:, :half] + values[:, half:]) * w))


def inner(F: ScalarField, G: ScalarField) -> float:
    return _paired_sum(F.values * G.values, F.grid)


def reflect(F: ScalarField) -> ScalarField:
    """F(xi_hat): horizontal coordinates negated, i.e. theta2 -> theta2 + pi."""
    return F.replace(values=np.roll(F.values, -(F.grid.N2 // 2), axis=1))


def is_capillary_even(F: ScalarField, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(F.values - reflect(F).values)) <= tol)


def even_part(values: np.ndarray, N2: int) -> np.ndarray:
    """Average with the reflected copy; exactly even in floating point."""
    return 0.5 * (values + np.roll(values, -(N2 // 2), axis=1))


def trig_weights(nodes, x0: float, deriv: int) -> np.ndarray:
    """Weights reproducing value (deriv=0) or derivative (deriv=1) at ``x0``.

    Exact for every function in span{1, cos x, sin x}; nodes are 3 points.
    """
    nodes = np.asarray(nodes, dtype=float)
    V = np.stack([np.ones_like(nodes), np.cos(nodes), np.sin(nodes)], axis=0)
    if deriv == 0:
        target = np.array([1.0, np.cos(x0), np.sin(x0)])
    elif deriv == 1:
        target = np.array([0.0, -np.sin(x0), np.cos(x0)])
    else:
        raise ArgumentError("deriv must be 0 or 1")
    return np.linalg.solve(V, target)


def boundary_extrapolation(values: np.ndarray, grid: CapGrid):
    """Value and theta1-derivative at theta1 = theta from the last three rows.

    One-sided and independent of the Robin ghost.  Second order in general,
    exact on span{1, cos theta1, sin theta1} in each column.
    """
    nodes = grid.theta1[-3:]
    w0 = trig_weights(nodes, grid.theta, 0)
    w1 = trig_weights(nodes, grid.theta, 1)
    last = values[-3:]
    return np.tensordot(w0, last, axes=(0, 0)), np.tensordot(w1, last, axes=(0, 0))


def robin_residual(h: ScalarField) -> np.ndarray:
    """Per-column value of dh/dmu - cot(theta) h at the boundary circle."""
    val, der = boundary_extrapolation(h.values, h.grid)
    return der - h.grid.cot_theta * val


def u_transform_check(h: ScalarField) -> float:
    """Max discrepancy between A(h) and its assembly through u = h / ell.

    The second assembly is ell Hess u + cos(theta) (grad u (x) e^T + e^T (x) grad u) + u sigma,
    with u differentiated under the Neumann condition.
    """
    if np.min(h.values) <= 0:
        raise PositivityError("u-transform needs a positive support function")
    g = h.grid
    ell = ell_field(g).values
    u = ScalarField(g, h.values / ell, "robin", robin_coef=0.0)
    Hu = covariant_hessian(u)
    du = covariant_gradient(u)
    et = np.sin(g.mesh[0])  # e^T = (sin theta1, 0) in the frame
    c = g.cos_theta
    b11 = ell * Hu.a11 + 2.0 * c * du[..., 0] * et + u.values
    b12 = ell * Hu.a12 + c * du[..., 1] * et
    b22 = ell * Hu.a22 + u.values
    A = radii_operator(h)
    return float(max(np.max(np.abs(A.a11 - b11)), np.max(np.abs(A.a12 - b12)), np.max(np.abs(A.a22 - b22))))


# -- CSV dumps -----------------------------------------------------------------


def field_to_csv(F: ScalarField) -> str:
    g = F.grid
    buf = io.StringIO()
    buf.write("i,j,theta1,theta2,value\n")
    for i in range(g.N1):
        for j in range(g.N2):
            buf.write(f"{i},{j},{g.theta1[i]:.17g},{g.theta2[j]:.17g},{F.values[i, j]:.17g}\n")
    return buf.getvalue()


def field_from_csv(text: str, grid: CapGrid, policy: str = "robin") -> ScalarField:
    """Parse a field dump; the node set must match ``grid`` exactly."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["i", "j", "theta1", "theta2", "value"]:
        raise ArgumentError(f"unexpected CSV header {reader.fieldnames}")
    vals = np.full(grid.shape, np.nan)
    count = 0
    for row in reader:
        i, j = int(row["i"]), int(row["j"])
        if not (0 <= i < grid.N1 and 0 <= j < grid.N2):
            raise ArgumentError(f"node ({i}, {j}) outside the {grid.N1}x{grid.N2} grid")
        if abs(float(row["theta1"]) - grid.theta1[i]) > 1e-12 or abs(float(row["theta2"]) - grid.theta2[j]) > 1e-12:
            raise ArgumentError(f"node ({i}, {j}) coordinates do not match the grid")
        vals[i, j] = float(row["value"])
        count += 1
    if count != grid.size or np.any(np.isnan(vals)):
        raise ArgumentError(f"CSV has {count} rows, grid needs {grid.size}")
    return ScalarField(grid, vals, policy)
