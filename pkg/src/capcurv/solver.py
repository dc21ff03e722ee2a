"""Newton solver with homotopy continuation for sigma_n(A)/sigma_{n-k}(A) = f^t.

The unknown is the support function h on the cap grid; A = Hess h + h * sigma
with the Robin condition folded into the difference stencils.  Linear solves
use a sparse LU factorization.  In the default mode the system is restricted
to capillary-even fields (longitude columns 0..N2/2-1), which removes the
kernel spanned by the horizontal coordinate functions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import capdomain as cd
from .capdomain import CapGrid, FrameMatrixField, ScalarField
from .errors import (
    ArgumentError,
    ContinuationStuckError,
    LostConvexityError,
    NoConvergenceError,
    NotAdmissibleError,
    PositivityError,
    SingularSystemError,
)

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
# residuals within this multiple of the rounding level count as converged
FLOOR_FACTOR = 8.0


@dataclass(frozen=True)
class SolverOptions:
    k: int = 1
    newton_tol: float = 1e-10
    max_newton: int = 30
    t_step_init: float = 0.1
    t_step_min: float = 1e-4
    damping: float = 0.5
    convexity_floor: float = 1e-8
    enforce_even: bool = True
    start: str = "ell"  # or "scaled": c~ ell against target (1-t) + t f^-1
    max_backtracks: int = 20

    def __post_init__(self):
        for name in ("newton_tol", "t_step_init", "t_step_min", "convexity_floor"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be positive")
        if not 0.0 < self.damping < 1.0:
            raise ArgumentError("damping must lie in (0, 1)")
        if self.max_newton < 0:
            raise ArgumentError("max_newton must be non-negative")
        if self.start not in ("ell", "scaled"):
            raise ArgumentError(f"unknown start mode {self.start!r}")


@dataclass
class SolveResult:
    h: ScalarField
    t: float
    residual_norm: float
    newton_iters: int
    convexity_margin: float
    robin_residual_norm: float
    evenness_defect: float
    # True when the residual stalled at the rounding floor above newton_tol
    converged_to_floor: bool = False
    rounding_floor: float = 0.0
    residual_history: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("h",)}
        return out


@dataclass
class SolutionPath:
    steps: list = field(default_factory=list)  # (t, SolveResult)
    step_history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> SolveResult:
        return self.steps[-1][1]

    @property
    def t_values(self):
        return [t for t, _ in self.steps]


# -- pointwise algebra (n = 2) -----------------------------------------------------


def _check_k(grid: CapGrid, k: int) -> None:
    if not 1 <= k <= grid.n:
        raise ArgumentError(f"k must lie in [1, {grid.n}], got {k}")


def field_quotient(A: FrameMatrixField, k: int) -> np.ndarray:
    """sigma_2/sigma_{2-k} per node (det/tr for k = 1, det for k = 2)."""
    det = A.det
    if k == 1:
        return det / A.trace
    if k == 2:
        return det
    raise ArgumentError(f"k must be 1 or 2 on the n = 2 grid, got {k}")


def field_quotient_gradient(A: FrameMatrixField, k: int):
    """Frame components (G11, G12, G22) of d quotient / dA per node."""
    if k == 1:
        tr = A.trace
        det = A.det
        inv = 1.0 / tr**2
        return (tr * A.a22 - det) * inv, -tr * A.a12 * inv, (tr * A.a11 - det) * inv
    if k == 2:
        return A.a22, -A.a12, A.a11
    raise ArgumentError(f"k must be 1 or 2 on the n = 2 grid, got {k}")


def _admissible_A(h: ScalarField) -> FrameMatrixField:
    A = cd.radii_operator(h)
    lo = A.eigenvalues()[..., 0]
    if not np.all(lo > 0):
        node = np.unravel_index(int(np.argmin(lo)), lo.shape)
        raise NotAdmissibleError(
            f"A(h) is not positive definite at node {tuple(int(x) for x in node)} (min eigenvalue {lo[node]:.3e})",
            node=tuple(int(x) for x in node),
            margin=float(lo[node]),
        )
    return A


# -- public operations ------------------------------------------------------------


def homotopy_target(f_inv: ScalarField, t: float, k: int) -> ScalarField:
    """f^t = (1 - t) / binom(n, k) + t f^-1."""
    if not 0.0 <= t <= 1.0:
        raise ArgumentError(f"t must lie in [0, 1], got {t}")
    if np.min(f_inv.values) <= 0:
        raise PositivityError("f^-1 must be positive everywhere")
    c = 1.0 / comb(f_inv.grid.n, k)
    return f_inv.replace(values=(1.0 - t) * c + t * f_inv.values, policy="even_reflection_only")


def scaled_target(f_inv: ScalarField, t: float) -> ScalarField:
    """(1 - t) + t f^-1; pairs with the start c~ ell."""
    if np.min(f_inv.values) <= 0:
        raise PositivityError("f^-1 must be positive everywhere")
    return f_inv.replace(values=(1.0 - t) + t * f_inv.values, policy="even_reflection_only")


def residual(h: ScalarField, f_t, k: int) -> ScalarField:
    """Per-node quotient of A(h) minus the target."""
    _check_k(h.grid, k)
    if np.min(h.values) <= 0:
        raise PositivityError("h must be positive")
    A = _admissible_A(h)
    target = f_t.values if isinstance(f_t, ScalarField) else f_t
    return ScalarField(h.grid, field_quotient(A, k) - target, "even_reflection_only")


def jacobian(h: ScalarField, k: int) -> sp.csr_matrix:
    """Sparse linearization of the residual at h (9-point stencil per node)."""
    _check_k(h.grid, k)
    A = _admissible_A(h)
    g11, g12, g22 = (x.ravel() for x in field_quotient_gradient(A, k))
    ops = h.grid.operators(h.robin_coef)
    eye = sp.identity(h.grid.size, format="csr")
    J = sp.diags(g11) @ (ops.h11 + eye) + sp.diags(2.0 * g12) @ ops.h12 + sp.diags(g22) @ (ops.h22 + eye)
    return J.tocsr()


def kernel_coefficient(grid: CapGrid, k: int, phis) -> dict:
    """Fit J(c~ ell) phi = a0 (Lap phi + n phi) for each phi; returns the a0 values.

    Each fit is least squares over all nodes; ``spread`` is the largest
    relative difference between the fitted a0 values.
    """
    c = comb(grid.n, k) ** (1.0 / k)
    h = ScalarField(grid, c * cd.ell_field(grid).values)
    J = jacobian(h, k)
    ops = grid.operators()
    a0 = []
    rel = []
    for phi in phis:
        v = np.asarray(phi.values if isinstance(phi, ScalarField) else phi).ravel()
        L = ops.laplacian @ v + grid.n * v
        Jv = J @ v
        a = float(L @ Jv / (L @ L))
        a0.append(a)
        rel.append(float(np.max(np.abs(Jv - a * L)) / np.max(np.abs(Jv))))
    spread = float((max(a0) - min(a0)) / abs(np.mean(a0)))
    return {"a0": a0, "fit_defect": rel, "spread": spread}


def _even_maps(grid: CapGrid):
    """Restriction R (full -> half columns) and expansion E (half -> even full)."""
    key = ("even_maps",)
    cache = grid._cache
    if key not in cache:
        N1, N2 = grid.shape
        half = N2 // 2
        i, j = np.meshgrid(np.arange(N1), np.arange(N2), indexing="ij")
        full = (i * N2 + j).ravel()
        red = (i * half + (j % half)).ravel()
        E = sp.csr_matrix((np.ones(full.size), (full, red)), shape=(grid.size, grid.size // 2))
        keep = (j < half).ravel()
        R = sp.csr_matrix((np.ones(int(keep.sum())), (red[keep], full[keep])), shape=(grid.size // 2, grid.size))
        cache[key] = (R, E)
    return cache[key]


def _kernel_basis(grid: CapGrid) -> np.ndarray:
    return np.stack([cd.coord_field(grid, a).flat for a in range(1, grid.n + 1)], axis=1)


def linear_solve(J: sp.csr_matrix, rhs: np.ndarray, grid: CapGrid, even: bool) -> np.ndarray:
    """Solve J x = rhs, either on the even subspace or with kernel bordering."""
    try:
        if even:
            R, E = _even_maps(grid)
            Je = (R @ J @ E).tocsc()
            x = E @ spla.spsolve(Je, R @ rhs)
        else:
            K = _kernel_basis(grid) * grid.weights.ravel()[:, None]
            m = K.shape[1]
            M = sp.bmat([[J, sp.csr_matrix(K)], [sp.csr_matrix(K.T), None]]).tocsc()
            sol = spla.spsolve(M, np.concatenate([rhs, np.zeros(m)]))
            x = sol[: grid.size]
    except RuntimeError as exc:  # splu reports exact singularity this way
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve produced non-finite values")
    return x


def _max_norm(v) -> float:
    return float(np.max(np.abs(v)))


def _rounding_floor(h: np.ndarray, J: sp.csr_matrix) -> float:
    """Size of residual noise produced by rounding h to double precision."""
    row_sum = float(np.max(np.abs(J).sum(axis=1)))
    return FLOOR_FACTOR * EPS * float(np.max(np.abs(h))) * row_sum


def _package(h: ScalarField, t: float, res: float, iters: int, floor_hit: bool, floor: float, history) -> SolveResult:
    A = cd.radii_operator(h)
    return SolveResult(
        h=h,
        t=float(t),
        residual_norm=float(res),
        newton_iters=int(iters),
        convexity_margin=A.min_eigenvalue,
        robin_residual_norm=_max_norm(cd.robin_residual(h)),
        evenness_defect=_max_norm(h.values - cd.reflect(h).values),
        converged_to_floor=bool(floor_hit),
        rounding_floor=float(floor),
        residual_history=[float(x) for x in history],
    )


def newton_solve(h0: ScalarField, f_t, k: int, opts: SolverOptions | None = None, t: float = 1.0) -> SolveResult:
    """Damped Newton iteration for quotient(A(h)) = f_t.

    Steps are halved until the max-norm residual does not increase and the
    smallest eigenvalue of A stays above ``opts.convexity_floor``.  Success
    means residual <= newton_tol, or, when that is below what double
    precision can resolve on this grid, a stalled residual within the
    rounding floor (flagged by ``converged_to_floor``).
    """
    opts = opts or SolverOptions(k=k)
    grid = h0.grid
    _check_k(grid, k)
    target = f_t.values if isinstance(f_t, ScalarField) else np.broadcast_to(f_t, grid.shape)
    target = np.asarray(target, dtype=float)
    N2 = grid.N2
    if opts.enforce_even:
        if not cd.is_capillary_even(h0, 1e-12 * max(1.0, _max_norm(h0.values))):
            raise ArgumentError("enforce_even requires a capillary-even start")
        if np.max(np.abs(target - np.roll(target, -(N2 // 2), axis=1))) > 1e-12 * max(1.0, _max_norm(target)):
            raise ArgumentError("enforce_even requires a capillary-even target")
        hv = cd.even_part(h0.values, N2)
    else:
        hv = np.array(h0.values)
    h = ScalarField(grid, hv, "robin", h0.robin_coef)
    r = residual(h, target, k).values
    rn = _max_norm(r)
    history = [rn]
    floor = 0.0
    for it in range(opts.max_newton + 1):
        J = jacobian(h, k)
        floor = _rounding_floor(h.values, J)
        if rn <= opts.newton_tol:
            return _package(h, t, rn, it, False, floor, history)
        if it == opts.max_newton:
            break
        dx = linear_solve(J, -r.ravel(), grid, opts.enforce_even).reshape(grid.shape)
        lam = 1.0
        accepted = False
        convex_fail = 0
        for _ in range(opts.max_backtracks + 1):
            trial = h.values + lam * dx
            if opts.enforce_even:
                trial = cd.even_part(trial, N2)
            cand = ScalarField(grid, trial, "robin", h0.robin_coef)
            margin = cd.radii_operator(cand).min_eigenvalue
            if margin >= opts.convexity_floor and np.min(trial) > 0:
                r_new = residual(cand, target, k).values
                rn_new = _max_norm(r_new)
                if rn_new <= rn:
                    accepted = True
                    break
            else:
                convex_fail += 1
            lam *= opts.damping
        if not accepted:
            if rn <= floor:
                return _package(h, t, rn, it, True, floor, history)
            if convex_fail == opts.max_backtracks + 1:
                raise LostConvexityError(
                    f"every damped step violated the convexity floor at iteration {it}", last_iterate=h
                )
            raise NoConvergenceError(
                f"line search failed at iteration {it} with residual {rn:.3e}", last_iterate=h, residual_norm=rn
            )
        stalled = rn_new > 0.5 * rn
        h, r, rn = cand, r_new, rn_new
        history.append(rn)
        log.debug("newton it=%d lam=%.3g residual=%.3e", it, lam, rn)
        if stalled and rn <= floor and rn > opts.newton_tol:
            return _package(h, t, rn, it + 1, True, floor, history)
    raise NoConvergenceError(
        f"no convergence after {opts.max_newton} iterations (residual {rn:.3e}, rounding floor {floor:.3e})",
        last_iterate=h,
        residual_norm=rn,
    )


def _target_at(f_inv: ScalarField, t: float, k: int, mode: str) -> ScalarField:
    return homotopy_target(f_inv, t, k) if mode == "ell" else scaled_target(f_inv, t)


def continuation(f_inv: ScalarField, k: int, opts: SolverOptions | None = None, h_start: ScalarField | None = None) -> SolutionPath:
    """Follow the homotopy from the round cap (t = 0) to the target (t = 1).

    The first trial jumps straight to t = 1; after a failure the step restarts
    from ``t_step_init`` and adapts (halve on failure, times 1.5 after two
    consecutive successes).  The predictor rescales the previous solution,
    since the quotient is homogeneous of degree k in h.
    """
    opts = opts or SolverOptions(k=k)
    grid = f_inv.grid
    _check_k(grid, k)
    if np.min(f_inv.values) <= 0:
        raise PositivityError("f^-1 must be positive everywhere")
    if opts.enforce_even and not cd.is_capillary_even(f_inv, 1e-12 * max(1.0, _max_norm(f_inv.values))):
        raise ArgumentError("enforce_even requires a capillary-even f^-1")
    ell = cd.ell_field(grid).values
    c = comb(grid.n, k) ** (1.0 / k)
    h = ScalarField(grid, ell if opts.start == "ell" else c * ell)
    if h_start is not None:
        h = h_start
    path = SolutionPath()
    tgt0 = _target_at(f_inv, 0.0, k, opts.start)
    res0 = newton_solve(h, tgt0, k, opts, t=0.0)
    path.steps.append((0.0, res0))
    margins = [res0.convexity_margin]
    t = 0.0
    step = 1.0
    successes = 0
    first = True
    while t < 1.0:
        t_new = min(1.0, t + step)
        prev = path.final
        tgt_old = _target_at(f_inv, t, k, opts.start)
        tgt_new = _target_at(f_inv, t_new, k, opts.start)
        scale = (np.mean(tgt_new.values) / np.mean(tgt_old.values)) ** (1.0 / k)
        guess = prev.h.replace(values=prev.h.values * scale)
        try:
            res = newton_solve(guess, tgt_new, k, opts, t=t_new)
        except (NoConvergenceError, LostConvexityError, NotAdmissibleError, SingularSystemError) as exc:
            path.step_history.append({"t_from": t, "step": step, "ok": False, "reason": type(exc).__name__})
            successes = 0
            step = opts.t_step_init if first else 0.5 * step
            first = False
            if step < opts.t_step_min:
                worst = None
                try:
                    r = residual(guess, tgt_new, k).values
                    worst = tuple(int(x) for x in np.unravel_index(int(np.argmax(np.abs(r))), r.shape))
                except NotAdmissibleError as inner:
                    worst = inner.node
                path.diagnostics = {
                    "t_reached": t,
                    "worst_residual_node": worst,
                    "convexity_margin_history": margins,
                    "last_error": str(exc),
                }
                raise ContinuationStuckError(
                    f"continuation step fell below {opts.t_step_min} at t = {t:.6g}", path=path, diagnostics=path.diagnostics
                ) from exc
            continue
        path.step_history.append({"t_from": t, "step": step, "ok": True, "iters": res.newton_iters})
        first = False
        t = t_new
        path.steps.append((t, res))
        margins.append(res.convexity_margin)
        successes += 1
        if successes >= 2:
            step = min(1.0, 1.5 * step)
            successes = 0
    path.diagnostics = {"convexity_margin_history": margins}
    return path


def integral_condition(f_inv: ScalarField) -> np.ndarray:
    """Horizontal moments of f^-1: integral of <xi, E_alpha> f^-1, alpha = 1..n."""
    g = f_inv.grid
    return np.array([float(np.sum(cd.coord_field(g, a).values * f_inv.values * g.weights)) for a in range(1, g.n + 1)])


def estimate_oracles(result: SolveResult, f_inv: ScalarField, k: int, slack: float = 0.02) -> dict:
    """Check the a priori bounds on a converged solution.

    * inner bound: min h/ell <= (binom(n,k) / min f)^(1/k);
    * gradient bound: max |grad h| <= sqrt(1 + cot^2 theta) max |h|;
    * lower bound sigma_n(A) >= (binom(n,k) f^-1)^(n/k) at every node.

    Each check allows the relative ``slack``.
    """
    h = result.h
    g = h.grid
    n = g.n
    C = comb(n, k)
    ell = cd.ell_field(g).values
    u = h.values / ell
    min_f = float(np.min(1.0 / f_inv.values))
    inner_lhs = float(np.min(u))
    inner_rhs = float((C / min_f) ** (1.0 / k))
    grad = cd.covariant_gradient(h)
    grad_lhs = float(np.max(np.linalg.norm(grad, axis=-1)))
    grad_rhs = float(np.sqrt(1.0 + g.cot_theta**2) * np.max(np.abs(h.values)))
    A = cd.radii_operator(h)
    eig = A.eigenvalues()
    sig_n = A.det
    lower = (C * f_inv.values) ** (n / k)
    ratio = sig_n / lower
    return {
        "inner_radius": {"min_u": inner_lhs, "bound": inner_rhs, "pass": bool(inner_lhs <= inner_rhs * (1 + slack))},
        "gradient": {"max_grad": grad_lhs, "bound": grad_rhs, "pass": bool(grad_lhs <= grad_rhs * (1 + slack))},
        "sigma_n_lower": {
            "min_ratio": float(np.min(ratio)),
            "pass": bool(np.min(ratio) >= 1 - slack),
        },
        "eigenvalues": {
            "min": float(np.min(eig[..., 0])),
            "max": float(np.max(eig[..., 1])),
            "max_h": float(np.max(h.values)),
        },
        "all_pass": bool(
            inner_lhs <= inner_rhs * (1 + slack)
            and grad_lhs <= grad_rhs * (1 + slack)
            and np.min(ratio) >= 1 - slack
        ),
    }


def even_mode_field(grid: CapGrid, coeffs) -> np.ndarray:
    """Even perturbation sum_m c_m sin^(2m)(theta1) exp(-(2m-1) cot(theta) theta1) cos(2 m theta2).

    Each mode is smooth at the pole and satisfies the Robin condition exactly.
    """
    t1, t2 = grid.mesh
    out = np.zeros(grid.shape)
    for m, cm in enumerate(coeffs, start=1):
        out += cm * np.sin(t1) ** (2 * m) * np.exp(-(2 * m - 1) * grid.cot_theta * t1) * np.cos(2 * m * t2)
    return out


def uniqueness_probe(f_inv: ScalarField, k: int, opts: SolverOptions | None = None, n_starts: int = 5, seed: int = 0, h_ref=None) -> dict:
    """Solve from several random admissible even starts and compare the results."""
    if n_starts < 2:
        raise ArgumentError("uniqueness probe needs at least two starts")
    if np.max(np.abs(f_inv.values - 1.0)) > 0.05:
        raise ArgumentError("uniqueness probe is limited to ||f^-1 - 1|| <= 0.05")
    opts = opts or SolverOptions(k=k)
    g = f_inv.grid
    rng = np.random.default_rng(seed)
    c = comb(g.n, k) ** (1.0 / k)
    ell = cd.ell_field(g).values
    sols = []
    reports = []
    for _ in range(n_starts):
        scale = float(np.exp(rng.uniform(-0.15, 0.15)))
        pert = even_mode_field(g, rng.uniform(-0.1, 0.1, size=3) / np.arange(1, 4) ** 2)
        h0 = ScalarField(g, c * scale * ell + pert)
        res = newton_solve(h0, f_inv, k, opts)
        sols.append(res.h.values)
        reports.append({"scale": scale, "iters": res.newton_iters, "residual": res.residual_norm})
    diffs = [_max_norm(a - b) for i, a in enumerate(sols) for b in sols[i + 1 :]]
    return {"n_starts": n_starts, "max_pairwise": float(max(diffs)), "starts": reports, "solutions": sols}


def bump_profile(grid: CapGrid) -> np.ndarray:
    """sin^2(theta1) exp(-cot(theta) theta1) cos(2 theta2).

    Adding any multiple of it to a support function preserves the Robin
    condition exactly.
    """
    t1, t2 = grid.mesh
    return np.sin(t1) ** 2 * np.exp(-grid.cot_theta * t1) * np.cos(2 * t2)


def manufactured_problem(grid: CapGrid, k: int = 1, amplitude: float = 0.05, refine: int = 4):
    """Exact h* = c~ ell + amplitude * bump and the matching f^-1 on ``grid``.

    f^-1 is the quotient of A(h*) assembled on a grid refined ``refine`` times
    in each direction, then brought back to the coarse nodes.  The coarse
    latitudes sit midway between two fine ones, so the transfer uses
    four-point midpoint interpolation (-1, 9, 9, -1) / 16; longitudes nest.
    """
    if refine != 4:
        raise ArgumentError("only 4x refinement is supported")
    c = comb(grid.n, k) ** (1.0 / k)
    fine = cd.build_grid(grid.theta, grid.n, refine * grid.N1, refine * grid.N2)
    hf = ScalarField(fine, c * cd.ell_field(fine).values + amplitude * bump_profile(fine))
    qf = field_quotient(_admissible_A(hf), k)
    q = (-qf[0::4] + 9.0 * qf[1::4] + 9.0 * qf[2::4] - qf[3::4]) / 16.0
    q = cd.even_part(q[:, 0::refine], grid.N2)
    h_star = ScalarField(grid, c * cd.ell_field(grid).values + amplitude * bump_profile(grid))
    return h_star, ScalarField(grid, q, "even_reflection_only")


def solver_report(path_or_result, f_inv: ScalarField, k: int, oracle: dict | None = None) -> dict:
    """JSON-ready report of a solve."""
    if isinstance(path_or_result, SolutionPath):
        results = [r for _, r in path_or_result.steps]
        t_hist = path_or_result.t_values
    else:
        results = [path_or_result]
        t_hist = [path_or_result.t]
    g = f_inv.grid
    final = results[-1]
    if oracle is None:
        oracle = estimate_oracles(final, f_inv, k)
    return {
        "theta": g.theta,
        "n": g.n,
        "k": k,
        "N1": g.N1,
        "N2": g.N2,
        "t_history": t_hist,
        "residual_norms": [r.residual_norm for r in results],
        "convexity_margins": [r.convexity_margin for r in results],
        "newton_iters": [r.newton_iters for r in results],
        "converged_to_floor": [r.converged_to_floor for r in results],
        "robin_residual_norm": final.robin_residual_norm,
        "evenness_defect": final.evenness_defect,
        "oracle_report": oracle,
    }


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.bool_,)):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x)}")
