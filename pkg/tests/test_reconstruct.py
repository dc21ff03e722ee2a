import numpy as np
import pytest

from capcurv import capdomain as cd
from capcurv import reconstruct as R
from capcurv import solver as S
from capcurv.errors import NotAdmissibleError

HALF = np.pi / 2
THIRD = np.pi / 3


def sphere_support(g, r=1.0, z=(0.0, 0.0)):
    return cd.ScalarField(
        g, r * cd.ell_field(g).values + z[0] * cd.coord_field(g, 1).values + z[1] * cd.coord_field(g, 2).values
    )


@pytest.mark.parametrize("th", [THIRD, HALF])
def test_embed_round_cap(th):
    g = cd.build_grid(th, 2, 32, 64)
    mesh = R.embed(sphere_support(g))
    V = mesh.vertices
    center = np.array([0.0, 0.0, -np.cos(th)])
    np.testing.assert_allclose(np.linalg.norm(V - center, axis=-1), 1.0, atol=1e-12)
    # boundary loop on the support plane, radius sin(theta)
    np.testing.assert_allclose(mesh.boundary[:, 2], 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(mesh.boundary[:, :2], axis=1), np.sin(th), atol=1e-12)
    np.testing.assert_allclose(mesh.radii, 1.0, atol=1e-3)


def test_support_is_recovered():
    g = cd.build_grid(THIRD, 2, 32, 64)
    h = cd.ScalarField(g, 2 * cd.ell_field(g).values + 0.1 * S.bump_profile(g))
    mesh = R.embed(h)
    got = np.sum(mesh.vertices * mesh.normals, axis=-1)
    np.testing.assert_allclose(got, mesh.support, atol=1e-12)
    np.testing.assert_allclose(got[:-1], h.values, atol=1e-12)


def test_embed_rejects_non_convex():
    g = cd.build_grid(THIRD, 2, 16, 32)
    h = cd.ScalarField(g, 2 * cd.ell_field(g).values + 3.0 * S.bump_profile(g))
    with pytest.raises(NotAdmissibleError):
        R.embed(h)


@pytest.mark.parametrize("th", [THIRD, HALF])
def test_contact_angle_of_round_cap(th):
    g = cd.build_grid(th, 2, 32, 64)
    ang = R.contact_angle(R.embed(sphere_support(g)))
    np.testing.assert_allclose(ang, th, atol=1e-10)
    # arccos near 1 resolves angles only down to about sqrt(eps)
    assert R.interior_normal_deviation(R.embed(sphere_support(g))) < 1e-7


def test_contact_angle_converges_on_perturbed_surface():
    errs = []
    for N in (16, 32):
        g = cd.build_grid(THIRD, 2, N, 2 * N)
        h = cd.ScalarField(g, 2 * cd.ell_field(g).values + 0.2 * S.bump_profile(g))
        errs.append(np.max(np.abs(R.contact_angle(R.embed(h)) - THIRD)))
    assert errs[-1] < 1e-4
    assert errs[0] > errs[1]


def test_mesh_text_layout():
    g = cd.build_grid(THIRD, 2, 8, 16)
    mesh = R.embed(sphere_support(g))
    lines = mesh.to_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 9 * 16
    assert sum(line.startswith("f ") for line in lines) == 8 * 16
    assert lines[-1].split()[2:] == [str(8 * 16 + j + 1) for j in range(16)]
    assert mesh.faces().max() == 9 * 16 - 1


def test_curvature_consistency_round():
    g = cd.build_grid(THIRD, 2, 32, 64)
    mesh = R.embed(sphere_support(g, 2.0))
    f = cd.ScalarField(g, np.full(g.shape, 1.0))
    rep = R.curvature_consistency(mesh, f, 1)
    # W_1 = sigma_1 / sigma_2 of radii (2, 2) is 1
    assert rep["max_error"] < 1e-3
    assert rep["mesh_radii_rel"] < 1e-3


def test_capillary_radii_of_translated_cap():
    g = cd.build_grid(THIRD, 2, 16, 32)
    rep = R.capillary_radii(sphere_support(g, 2.0, (0.3, 0.0)))
    assert rep.rho_minus_theta == pytest.approx(2.0, abs=1e-9)
    assert rep.rho_plus_theta == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(rep.z_minus, [0.3, 0.0], atol=1e-9)
    np.testing.assert_allclose(rep.z_plus, [0.3, 0.0], atol=1e-9)


def test_capillary_radii_bracket_perturbed_body():
    g = cd.build_grid(THIRD, 2, 16, 32)
    rep = R.capillary_radii(cd.ScalarField(g, 2 * cd.ell_field(g).values + 0.2 * S.bump_profile(g)))
    assert rep.rho_minus_theta < 2.0 < rep.rho_plus_theta


def test_chou_wang_on_round_caps():
    for th in (THIRD, HALF):
        g = cd.build_grid(th, 2, 16, 32)
        rep = R.chou_wang_check(sphere_support(g))
        assert rep.cw_pass
        assert rep.cw_rhs == pytest.approx(R.chou_wang_constant(2, th), rel=1e-9)
    assert R.chou_wang_constant(2, HALF) == pytest.approx(7 ** -1.5)


def test_classical_radii_of_hemisphere():
    g = cd.build_grid(HALF, 2, 32, 64)
    mesh = R.embed(sphere_support(g))
    rin, cin = R.classical_inradius(mesh)
    # a ball inside the unit half-ball touches both the sphere and the plane
    assert rin == pytest.approx(0.5, abs=2e-3)
    assert cin[2] == pytest.approx(rin, abs=1e-9)
    rout, cout = R.classical_circumradius(mesh)
    assert rout == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(cout, 0.0, atol=1e-6)


def test_classical_radii_relation_holds():
    g = cd.build_grid(THIRD, 2, 32, 64)
    rep = R.classical_radii_relation(cd.ScalarField(g, 2 * cd.ell_field(g).values + 0.2 * S.bump_profile(g)))
    assert rep["pass"]
    assert rep["rho_minus_theta"] >= rep["inner_bound"]
