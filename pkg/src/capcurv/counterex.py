"""A non-even f whose equation has no solution at second order.

With v solving (Lap + n) v = n g for a source g orthogonal to the horizontal
coordinates, the family h_t = ell + t v has curvature moment

    I(t) = integral of <xi, E_1> (H_n / H_{n-k})(A(h_t))
         = -k (n - k) t^2 integral of <xi, E_1> g^2 + O(t^3),

which is non-zero for small t > 0.  For n = 2 the source is
g = cos(2 theta2) + sin(3 theta2).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import capdomain as cd
from .capdomain import CapGrid, FrameMatrixField, ScalarField
from .errors import (
    ArgumentError,
    FredholmCompatibilityError,
    NotAdmissibleError,
    SingularSystemError,
    TTooLargeError,
)

DEFAULT_T_SAMPLES = (0.01, 0.02, 0.04, 0.08)


def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def cutoff_eta(s):
    """Smooth plateau: 1 for |s| <= 1/2, 0 for |s| >= 3/4, exp-mollifier ramp between."""
    a = np.abs(np.asarray(s, dtype=float))
    up = _psi(0.75 - a)
    down = _psi(a - 0.5)
    out = up / (up + down)
    return out[()] if out.ndim == 0 else out


def g_field(grid: CapGrid) -> ScalarField:
    """The source g; for n = 2 no cutoff factors appear."""
    t2 = grid.mesh[1]
    return ScalarField(grid, np.cos(2 * t2) + np.sin(3 * t2))


def _kernel(grid: CapGrid) -> np.ndarray:
    return np.stack([cd.coord_field(grid, a).flat for a in range(1, grid.n + 1)], axis=1)


def solve_linearized(g: ScalarField, compat_tol: float = 1e-8) -> tuple:
    """Solve (Lap + n) v + sum c_a <xi, E_a> = n g with <v, <xi, E_a>> = 0.

    Returns ``(v, c)``.  v carries the Robin ghost of the support function.
    """
    grid = g.grid
    n = grid.n
    K = _kernel(grid)
    w = grid.weights.ravel()
    gnorm = float(np.sqrt(np.sum(g.flat**2 * w)))
    knorm = np.sqrt(np.sum(K**2 * w[:, None], axis=0))
    compat = (K * w[:, None]).T @ g.flat / (knorm * max(gnorm, 1e-300))
    if np.max(np.abs(compat)) > compat_tol:
        raise FredholmCompatibilityError(
            f"source is not orthogonal to the horizontal coordinates (relative moments {compat.tolist()})"
        )
    L = grid.operators().laplacian + n * sp.identity(grid.size)
    Kw = K * w[:, None]
    M = sp.bmat([[L, sp.csr_matrix(K)], [sp.csr_matrix(Kw.T), None]]).tocsc()
    rhs = np.concatenate([n * g.flat, np.zeros(n)])
    try:
        sol = spla.spsolve(M, rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("bordered system produced non-finite values")
    v = ScalarField(grid, sol[: grid.size].reshape(grid.shape))
    return v, sol[grid.size :]


def linearized_residual(v: ScalarField, g: ScalarField) -> float:
    n = v.grid.n
    L = v.grid.operators().laplacian
    return float(np.max(np.abs(L @ v.flat + n * v.flat - n * g.flat)))


def b_field(v: ScalarField) -> FrameMatrixField:
    return cd.radii_operator(v)


def max_admissible_t(v: ScalarField) -> float:
    """Largest t with Id + t B positive definite: 1 / max(0, -min eig B)."""
    lo = b_field(v).min_eigenvalue
    return float("inf") if lo >= 0 else -1.0 / lo


def bracket_admissible_t(v: ScalarField, tol: float = 1e-6, t_hi: float = 10.0) -> tuple:
    """Bisection bracket [a, b] of the admissibility threshold, b - a <= tol."""
    B = b_field(v)

    def ok(t):
        return (B.scaled(t).eigenvalues()[..., 0] + 1.0).min() > 0

    a, b = 0.0, t_hi
    if ok(b):
        return b, float("inf")
    while b - a > tol:
        m = 0.5 * (a + b)
        a, b = (m, b) if ok(m) else (a, m)
    return a, b


def family_member(v: ScalarField, t: float):
    """h_t = ell + t v and the convexity margin of A(h_t) = Id + t B."""
    if t < 0:
        raise ArgumentError("t must be non-negative")
    grid = v.grid
    h = ScalarField(grid, cd.ell_field(grid).values + t * v.values)
    margin = cd.radii_operator(h).min_eigenvalue
    if margin <= 0:
        raise TTooLargeError(f"A(h_t) is not positive definite at t = {t}", t_max=max_admissible_t(v))
    return h, margin


def _normalized_quotient(A: FrameMatrixField, n: int, k: int) -> np.ndarray:
    e = [np.ones_like(A.a11), A.trace, A.det]
    return (e[n] / comb(n, n)) / (e[n - k] / comb(n, n - k))


def minkowski_identity_check(v: ScalarField, i: int, alpha: int) -> float:
    """Integral of H_i(B) <xi, E_alpha> with B = Hess v + v sigma."""
    grid = v.grid
    n = grid.n
    if not 1 <= i <= n or not 1 <= alpha <= n:
        raise ArgumentError("need 1 <= i, alpha <= n")
    B = b_field(v)
    e = [np.ones_like(B.a11), B.trace, B.det]
    Hi = e[i] / comb(n, i)
    return float(np.sum(Hi * cd.coord_field(grid, alpha).values * grid.weights))


def curvature_moment(h: ScalarField, k: int, alpha: int = 1) -> float:
    """Integral of (H_n / H_{n-k})(A(h)) <xi, E_alpha>."""
    grid = h.grid
    A = cd.radii_operator(h)
    lo = A.min_eigenvalue
    if lo <= 0:
        raise NotAdmissibleError("A(h) is not positive definite", node=A.argmin_eigenvalue(), margin=lo)
    q = _normalized_quotient(A, grid.n, k)
    return float(np.sum(q * cd.coord_field(grid, alpha).values * grid.weights))


@dataclass
class CounterexampleRun:
    theta: float
    n: int
    k: int
    N1: int
    N2: int
    t_samples: list
    I_values: list
    fitted_c2: float
    fitted_c3: float
    target_c2: float
    linear_coef: float
    t_max: float
    t_bracket: list
    minkowski_residuals: dict
    convexity_margins: list
    multipliers: list
    linear_residual: float
    passed: bool = False
    checks: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return json.dumps(d, sort_keys=True, indent=2)


def expansion_verify(grid: CapGrid, k: int = 1, t_samples=DEFAULT_T_SAMPLES, rel_tol: float = 0.05, scale_samples: bool = True) -> CounterexampleRun:
    """Fit I(t) = c2 t^2 + c3 t^3 over the family and compare c2 with its target.

    With ``scale_samples`` the samples are multiplied by
    min(1, 0.5 t_max / max(t_samples)) to stay inside the convexity window;
    otherwise they are used as given and may raise :class:`TTooLargeError`.
    """
    n = grid.n
    if not 1 <= k <= n - 1:
        raise ArgumentError(f"k must lie in [1, {n - 1}]")
    if len(t_samples) < 4:
        raise ArgumentError("the fit needs at least four samples")
    g = g_field(grid)
    v, mult = solve_linearized(g)
    lin_res = linearized_residual(v, g)
    t_max = max_admissible_t(v)
    bracket = bracket_admissible_t(v)
    scale = min(1.0, 0.5 * t_max / max(t_samples)) if scale_samples else 1.0
    ts = np.array(t_samples, dtype=float) * scale
    I = []
    margins = []
    for t in ts:
        h, m = family_member(v, float(t))
        I.append(curvature_moment(h, k, 1))
        margins.append(m)
    I = np.array(I)
    V2 = np.column_stack([ts**2, ts**3])
    (c2, c3), *_ = np.linalg.lstsq(V2, I, rcond=None)
    V3 = np.column_stack([ts, ts**2, ts**3])
    (c1, _, _), *_ = np.linalg.lstsq(V3, I, rcond=None)
    x1 = cd.coord_field(grid, 1).values
    target = -k * (n - k) * float(np.sum(x1 * g.values**2 * grid.weights))
    mink = {f"i{i}_a{a}": minkowski_identity_check(v, i, a) for i in range(1, n + 1) for a in range(1, n + 1)}
    checks = {
        "c2_rel_error": float(abs(c2 - target) / abs(target)),
        "linear_ratio": float(abs(c1) / abs(target)),
        "nonvanishing": bool(np.all(np.abs(I) >= 0.5 * abs(target) * ts**2)),
    }
    passed = checks["c2_rel_error"] <= rel_tol and checks["linear_ratio"] <= 1e-3
    return CounterexampleRun(
        theta=grid.theta,
        n=n,
        k=k,
        N1=grid.N1,
        N2=grid.N2,
        t_samples=ts.tolist(),
        I_values=I.tolist(),
        fitted_c2=float(c2),
        fitted_c3=float(c3),
        target_c2=target,
        linear_coef=float(c1),
        t_max=t_max,
        t_bracket=list(bracket),
        minkowski_residuals=mink,
        convexity_margins=[float(m) for m in margins],
        multipliers=[float(x) for x in mult],
        linear_residual=lin_res,
        passed=bool(passed),
        checks=checks,
    )
