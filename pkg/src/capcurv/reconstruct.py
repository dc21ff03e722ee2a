"""Rebuild the capillary surface from its support function and measure it.

X(xi) = grad h + h nu with nu = xi - cos(theta) e, so <X, nu> = h by
construction.  Vertex rows sit at the grid latitudes plus one extra row on the
boundary circle theta1 = theta, filled by one-sided extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import linprog, minimize

from . import capdomain as cd
from .capdomain import CapGrid, ScalarField
from .errors import NotAdmissibleError, OptimizerError


@dataclass(frozen=True)
class SurfaceMesh:
    grid: CapGrid
    vertices: np.ndarray  # (N1 + 1, N2, 3); last row is the boundary loop
    normals: np.ndarray  # (N1 + 1, N2, 3)
    radii: np.ndarray  # (N1, N2, 2) eigenvalues of A at the grid nodes
    support: np.ndarray  # (N1 + 1, N2) h at the vertex rows

    @property
    def boundary(self) -> np.ndarray:
        return self.vertices[-1]

    @property
    def vertex_latitudes(self) -> np.ndarray:
        return np.append(self.grid.theta1, self.grid.theta)

    def faces(self) -> np.ndarray:
        """Quad faces as 0-based vertex indices into the flattened vertex array."""
        rows, N2 = self.vertices.shape[:2]
        i, j = np.meshgrid(np.arange(rows - 1), np.arange(N2), indexing="ij")
        jn = (j + 1) % N2
        q = np.stack([i * N2 + j, i * N2 + jn, (i + 1) * N2 + jn, (i + 1) * N2 + j], axis=-1)
        return q.reshape(-1, 4)

    def to_text(self) -> str:
        """``v x y z`` lines, 1-based ``f`` quads, then the boundary loop as comments."""
        V = self.vertices.reshape(-1, 3)
        lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in V]
        lines += ["f " + " ".join(str(int(a) + 1) for a in q) for q in self.faces()]
        rows, N2 = self.vertices.shape[:2]
        start = (rows - 1) * N2
        loop = " ".join(str(start + j + 1) for j in range(N2))
        lines.append("# boundary loop (1-based vertex indices, theta1 = theta)")
        lines.append("# boundary " + loop)
        return "\n".join(lines) + "\n"


@dataclass
class RadiiReport:
    rho_minus_theta: float
    rho_plus_theta: float
    z_minus: list
    z_plus: list
    max_lambda: float = float("nan")
    cw_lhs: float = float("nan")
    cw_rhs: float = float("nan")
    cw_pass: bool | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# -- reconstruction ------------------------------------------------------------------


def _cap_gradient(values: np.ndarray, grid: CapGrid):
    """(d/dtheta1, d/dtheta2) of node data, exact on span{1, cos, sin} in each variable.

    Central differences with the across-pole image; the last row uses a
    one-sided trigonometric difference instead of any boundary ghost.
    """
    N1, N2 = grid.shape
    ext = np.vstack([np.roll(values[:1], -(N2 // 2), axis=1), values])
    d1 = np.empty_like(values)
    d1[: N1 - 1] = (ext[2:] - ext[: N1 - 1]) / (2.0 * np.sin(grid.d1))
    w = cd.trig_weights(grid.theta1[-3:], grid.theta1[-1], 1)
    d1[-1] = np.tensordot(w, values[-3:], axes=(0, 0))
    d2 = (np.roll(values, -1, axis=1) - np.roll(values, 1, axis=1)) / (2.0 * np.sin(grid.d2))
    return d1, d2


def embed(h: ScalarField) -> SurfaceMesh:
    """Vertices X = grad h + h nu, plus a boundary row on theta1 = theta."""
    g = h.grid
    A = cd.radii_operator(h)
    eig = A.eigenvalues()
    if not np.all(eig[..., 0] > 0):
        node = np.unravel_index(int(np.argmin(eig[..., 0])), g.shape)
        raise NotAdmissibleError("cannot embed non-convex support data", node=node, margin=float(eig[node][0]))
    hv = h.values
    d1, d2 = _cap_gradient(hv, g)
    e1, e2 = g.frame
    s1 = np.sin(g.mesh[0])
    X = d1[..., None] * e1 + (d2 / s1)[..., None] * e2 + hv[..., None] * g.normals

    hb, db1 = cd.boundary_extrapolation(hv, g)
    db2 = (np.roll(hb, -1) - np.roll(hb, 1)) / (2.0 * np.sin(g.d2))
    t2 = g.theta2
    th = g.theta
    nb = np.stack([np.sin(th) * np.sin(t2), np.sin(th) * np.cos(t2), np.full_like(t2, np.cos(th))], axis=-1)
    eb1 = np.stack([np.cos(th) * np.sin(t2), np.cos(th) * np.cos(t2), np.full_like(t2, -np.sin(th))], axis=-1)
    eb2 = np.stack([np.cos(t2), -np.sin(t2), np.zeros_like(t2)], axis=-1)
    Xb = db1[:, None] * eb1 + (db2 / np.sin(th))[:, None] * eb2 + hb[:, None] * nb
    return SurfaceMesh(
        grid=g,
        vertices=np.vstack([X, Xb[None]]),
        normals=np.vstack([g.normals, nb[None]]),
        radii=eig,
        support=np.vstack([hv, hb[None]]),
    )


def _row_derivative(rows: np.ndarray, lat: np.ndarray, at: float) -> np.ndarray:
    w = cd.trig_weights(lat, at, 1)
    return np.tensordot(w, rows, axes=(0, 0))


def mesh_normals_boundary(mesh: SurfaceMesh) -> np.ndarray:
    """Unit normals of the discrete surface at the boundary vertices.

    Tangents come from the vertex positions alone: a one-sided difference
    across the last three vertex rows (non-uniform spacing) and a central
    difference along the boundary loop.
    """
    g = mesh.grid
    lat = mesh.vertex_latitudes[-3:]
    T1 = _row_derivative(mesh.vertices[-3:], lat, g.theta)
    B = mesh.boundary
    T2 = (np.roll(B, -1, axis=0) - np.roll(B, 1, axis=0)) / (2.0 * np.sin(g.d2))
    n = np.cross(T2, T1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    # outward: agree with the Gauss-map normal
    sign = np.sign(np.sum(n * mesh.normals[-1], axis=-1))
    return n * sign[:, None]


def contact_angle(mesh: SurfaceMesh) -> np.ndarray:
    """Angle arccos(-<N, e>) = arccos(N_3) at each boundary vertex, in radians."""
    n = mesh_normals_boundary(mesh)
    return np.arccos(np.clip(n[:, 2], -1.0, 1.0))


def interior_normal_deviation(mesh: SurfaceMesh) -> float:
    """Largest angle (radians) between mesh normals and nu over interior vertex rows."""
    g = mesh.grid
    V = mesh.vertices[:-1]
    T1 = (V[2:] - V[:-2])[:, :, :] / (2.0 * np.sin(g.d1))
    Vr = V[1:-1]
    T2 = (np.roll(Vr, -1, axis=1) - np.roll(Vr, 1, axis=1)) / (2.0 * np.sin(g.d2))
    n = np.cross(T1, T2)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    c = np.clip(np.sum(n * mesh.normals[1:-2], axis=-1), -1.0, 1.0)
    return float(np.max(np.arccos(np.abs(c))))


def mesh_principal_radii(mesh: SurfaceMesh) -> np.ndarray:
    """Principal radii from the vertex positions only, rows 1..N1-2.

    First and second fundamental forms are assembled from central differences
    of X; the radii are the reciprocal eigenvalues of g^-1 b.
    """
    g = mesh.grid
    V = mesh.vertices[:-1]
    a, b = np.sin(g.d1), np.sin(g.d2)
    Xc = V[1:-1]
    X1 = (V[2:] - V[:-2]) / (2 * a)
    X2 = (np.roll(Xc, -1, axis=1) - np.roll(Xc, 1, axis=1)) / (2 * b)
    X11 = (V[2:] - 2 * Xc + V[:-2]) / g.d1**2
    X22 = (np.roll(Xc, -1, axis=1) - 2 * Xc + np.roll(Xc, 1, axis=1)) / (2 - 2 * np.cos(g.d2))
    Vp = np.roll(V, -1, axis=1)
    Vm = np.roll(V, 1, axis=1)
    X12 = (Vp[2:] - Vm[2:] - Vp[:-2] + Vm[:-2]) / (4 * a * b)
    N = np.cross(X1, X2)
    N /= np.linalg.norm(N, axis=-1, keepdims=True)
    G = np.empty(Xc.shape[:2] + (2, 2))
    Bf = np.empty_like(G)
    G[..., 0, 0] = np.sum(X1 * X1, -1)
    G[..., 0, 1] = G[..., 1, 0] = np.sum(X1 * X2, -1)
    G[..., 1, 1] = np.sum(X2 * X2, -1)
    Bf[..., 0, 0] = np.sum(X11 * N, -1)
    Bf[..., 0, 1] = Bf[..., 1, 0] = np.sum(X12 * N, -1)
    Bf[..., 1, 1] = np.sum(X22 * N, -1)
    # radii are the eigenvalues of b^-1 g; sign fixed so convex means positive
    R = np.linalg.solve(Bf, G)
    lam = np.sort(np.real(np.linalg.eigvals(R)), axis=-1)
    if np.mean(lam) < 0:
        lam = -lam[..., ::-1]
    return lam


def curvature_consistency(mesh: SurfaceMesh, f: ScalarField, k: int) -> dict:
    """Compare W_k of the reconstructed surface with the prescribed f.

    ``max_error`` uses the radii from A(h); ``mesh_radii_rel`` compares those
    radii with an independent estimate from the vertex positions (interior
    rows only).
    """
    lam = mesh.radii
    n = mesh.grid.n
    e = np.stack([np.ones(lam.shape[:-1]), lam.sum(-1), lam.prod(-1)], axis=-1)
    wk = e[..., n - k] / e[..., n]
    err = float(np.max(np.abs(wk - f.values)))
    lam_mesh = mesh_principal_radii(mesh)
    ref = np.sort(lam[1:-1], axis=-1)
    rel = float(np.max(np.abs(lam_mesh - ref) / ref))
    return {"max_error": err, "mesh_radii_rel": rel}


# -- radii ------------------------------------------------------------------------------


def _support_samples(h: ScalarField):
    """(h, ell, horizontal xi) at the nodes and on the boundary circle."""
    g = h.grid
    hb, _ = cd.boundary_extrapolation(h.values, g)
    hv = np.concatenate([h.flat, hb])
    t1, t2 = g.mesh
    ct = g.cos_theta
    ell = np.concatenate([(1 - ct * np.cos(t1)).ravel(), np.full(g.N2, 1 - ct * ct)])
    xi1 = np.concatenate([(np.sin(t1) * np.sin(t2)).ravel(), np.sin(g.theta) * np.sin(g.theta2)])
    xi2 = np.concatenate([(np.sin(t1) * np.cos(t2)).ravel(), np.sin(g.theta) * np.cos(g.theta2)])
    return hv, ell, np.stack([xi1, xi2], axis=1)


def _radius_lp(hv, ell, xi, inner: bool, box: float):
    # variables (r, z1, z2); inner: max r, r ell + <z, xi> <= h; outer: min r, >= h
    sign = 1.0 if inner else -1.0
    A = sign * np.column_stack([ell, xi])
    b = sign * hv
    c = np.array([-1.0, 0.0, 0.0]) if inner else np.array([1.0, 0.0, 0.0])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None), (-box, box), (-box, box)], method="highs")
    if res.status != 0:
        raise OptimizerError(f"radius LP failed: {res.message}")
    r, z1, z2 = res.x
    on_box = max(abs(z1), abs(z2)) >= box * (1 - 1e-9)
    return float(r), [float(z1), float(z2)], on_box


def capillary_radii(h: ScalarField) -> RadiiReport:
    """Largest inscribed and smallest enclosing capillary caps with horizontal centers.

    A cap C_{r,theta}(z) lies inside the body iff r ell + <z, xi> <= h on the
    whole cap, so both radii are linear programs in (r, z).
    """
    hv, ell, xi = _support_samples(h)
    if np.min(hv) <= 0:
        raise OptimizerError("capillary radii need a positive support function")
    out = []
    for inner in (True, False):
        box = 2.0 * float(np.max(hv))
        r, z, on_box = _radius_lp(hv, ell, xi, inner, box)
        if on_box:
            r, z, on_box = _radius_lp(hv, ell, xi, inner, 4.0 * box)
            if on_box:
                raise OptimizerError("capillary radius optimizer hit the enlarged search box")
        out.append((r, z))
    (rm, zm), (rp, zp) = out
    return RadiiReport(rho_minus_theta=rm, rho_plus_theta=rp, z_minus=zm, z_plus=zp)


def chou_wang_constant(n: int, theta: float) -> float:
    return (1.0 / (2 * n * n - 1)) ** 1.5 * (1 - np.cos(theta)) ** 2 / np.sin(theta)


def chou_wang_check(h: ScalarField, slack: float = 0.01) -> RadiiReport:
    """max principal radius >= C (1 - cos)^2 rho_+^2 / (sin rho_-), with the explicit C."""
    rep = capillary_radii(h)
    g = h.grid
    lam_max = cd.radii_operator(h).max_eigenvalue
    rhs = chou_wang_constant(g.n, g.theta) * rep.rho_plus_theta**2 / rep.rho_minus_theta
    rep.max_lambda = lam_max
    rep.cw_lhs = lam_max
    rep.cw_rhs = float(rhs)
    rep.cw_pass = bool(lam_max >= rhs * (1 - slack))
    return rep


def classical_inradius(mesh: SurfaceMesh):
    """Largest ball inside the body above the support plane (Chebyshev-center LP)."""
    nu = mesh.normals.reshape(-1, 3)
    hv = mesh.support.reshape(-1)
    # variables (c1, c2, c3, rho): <c, nu_i> + rho <= h_i, rho - c3 <= 0
    A = np.vstack([np.column_stack([nu, np.ones(len(nu))]), [[0.0, 0.0, -1.0, 1.0]]])
    b = np.concatenate([hv, [0.0]])
    res = linprog([0, 0, 0, -1.0], A_ub=A, b_ub=b, bounds=[(None, None)] * 3 + [(0, None)], method="highs")
    if res.status != 0:
        raise OptimizerError(f"inradius LP failed: {res.message}")
    return float(res.x[3]), res.x[:3].tolist()


def classical_circumradius(mesh: SurfaceMesh, tol: float = 1e-10):
    """Smallest ball with center in the closed upper half-space containing all vertices.

    Solved as min t + |c|^2 subject to |x_i|^2 - 2 <x_i, c> <= t (so the
    radius is sqrt(t + |c|^2)), with a working set of the farthest points.
    """
    P = mesh.vertices.reshape(-1, 3)
    sq = np.sum(P * P, axis=1)
    c = np.array([0.0, 0.0, 0.0])
    active = np.argsort(-sq)[:64]
    for _ in range(50):
        Pa, sa = P[active], sq[active]

        def obj(x):
            return x[3] + x[:3] @ x[:3]

        def jac(x):
            return np.concatenate([2 * x[:3], [1.0]])

        cons = [
            {
                "type": "ineq",
                "fun": lambda x, Pa=Pa, sa=sa: x[3] - sa + 2 * Pa @ x[:3],
                "jac": lambda x, Pa=Pa: np.column_stack([2 * Pa, np.ones(len(Pa))]),
            }
        ]
        t0 = float(np.max(sq - 2 * P @ c))
        res = minimize(
            obj,
            np.concatenate([c, [t0]]),
            jac=jac,
            constraints=cons,
            bounds=[(None, None), (None, None), (0.0, None), (None, None)],
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": 500},
        )
        # status 8 (line search stall) shows up on degenerate optima such as a
        # hemisphere where every point is active; feasibility is checked below
        if not (res.success or res.status == 8):
            raise OptimizerError(f"circumradius solve failed: {res.message}")
        c = res.x[:3]
        R2 = res.x[3] + c @ c
        d2 = np.sum((P - c) ** 2, axis=1)
        viol = np.nonzero(d2 > R2 * (1 + tol))[0]
        if viol.size == 0:
            return float(np.sqrt(np.max(d2))), c.tolist()
        worst = viol[np.argsort(-d2[viol])][:64]
        active = np.unique(np.concatenate([active, worst]))
    raise OptimizerError("circumradius working set did not settle")


def classical_radii_relation(h: ScalarField, mesh: SurfaceMesh | None = None, radii: RadiiReport | None = None, slack: float = 0.02) -> dict:
    """Check rho_-(theta) >= rho_- / sin(theta) and rho_+(theta) <= rho_+ / (1 - cos(theta))."""
    mesh = mesh or embed(h)
    radii = radii or capillary_radii(h)
    th = h.grid.theta
    rin, cin = classical_inradius(mesh)
    rout, cout = classical_circumradius(mesh)
    lower = rin / np.sin(th)
    upper = rout / (1 - np.cos(th))
    inner_ok = radii.rho_minus_theta >= lower * (1 - slack)
    outer_ok = radii.rho_plus_theta <= upper * (1 + slack)
    return {
        "classical_inradius": rin,
        "classical_incenter": cin,
        "classical_circumradius": rout,
        "classical_circumcenter": cout,
        "rho_minus_theta": radii.rho_minus_theta,
        "rho_plus_theta": radii.rho_plus_theta,
        "inner_bound": float(lower),
        "outer_bound": float(upper),
        "inner_pass": bool(inner_ok),
        "outer_pass": bool(outer_ok),
        "pass": bool(inner_ok and outer_ok),
    }
