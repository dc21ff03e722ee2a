import json

import numpy as np
import pytest

from capcurv import capdomain as cd
from capcurv import counterex as C
from capcurv.errors import ArgumentError, FredholmCompatibilityError, TTooLargeError

HALF = np.pi / 2
THIRD = np.pi / 3


def test_cutoff_eta_values():
    assert C.cutoff_eta(0.4) == 1.0
    assert C.cutoff_eta(-0.5) == 1.0
    assert C.cutoff_eta(0.9) == 0.0
    assert C.cutoff_eta(0.75) == 0.0
    assert C.cutoff_eta(0.625) == pytest.approx(0.5, abs=1e-15)
    s = np.linspace(0.5, 0.75, 50)
    assert np.all(np.diff(C.cutoff_eta(s)) <= 0)


def test_g_field_is_orthogonal_and_not_even():
    g = cd.build_grid(THIRD, 2, 16, 32)
    src = C.g_field(g)
    for a in (1, 2):
        assert abs(cd.inner(src, cd.coord_field(g, a))) < 1e-14
    assert not cd.is_capillary_even(src)


def test_compatibility_error():
    g = cd.build_grid(THIRD, 2, 16, 32)
    with pytest.raises(FredholmCompatibilityError):
        C.solve_linearized(cd.coord_field(g, 1))


def test_linearized_solution():
    g = cd.build_grid(THIRD, 2, 32, 64)
    src = C.g_field(g)
    v, c = C.solve_linearized(src)
    assert C.linearized_residual(v, src) < 1e-9
    np.testing.assert_allclose(c, 0.0, atol=1e-10)
    for a in (1, 2):
        assert abs(cd.inner(v, cd.coord_field(g, a))) < 1e-12


def test_modes_decouple():
    # the two Fourier modes of g solve independently
    g = cd.build_grid(THIRD, 2, 32, 64)
    t2 = g.mesh[1]
    v, _ = C.solve_linearized(C.g_field(g))
    v2, _ = C.solve_linearized(cd.ScalarField(g, np.cos(2 * t2)))
    v3, _ = C.solve_linearized(cd.ScalarField(g, np.sin(3 * t2)))
    np.testing.assert_allclose(v.values, v2.values + v3.values, atol=1e-12)
    # a cos(2 theta2) source gives a cos(2 theta2) response
    prof = v2.values[:, 0]
    np.testing.assert_allclose(v2.values, prof[:, None] * np.cos(2 * t2), atol=1e-12)


def test_margin_is_affine_in_t():
    g = cd.build_grid(THIRD, 2, 32, 64)
    v, _ = C.solve_linearized(C.g_field(g))
    t_max = C.max_admissible_t(v)
    assert np.isfinite(t_max) and t_max > 0
    # A(h_t) = Id + t B up to discretization, so the margin is near 1 - t / t_max
    ts = np.array([0.1, 0.3, 0.5]) * t_max
    margins = np.array([C.family_member(v, t)[1] for t in ts])
    np.testing.assert_allclose(margins, 1 - ts / t_max, atol=1e-3)
    lo, hi = C.bracket_admissible_t(v)
    assert hi - lo <= 1e-6
    assert lo - 1e-3 <= t_max <= hi + 1e-3


def test_family_member_errors():
    g = cd.build_grid(THIRD, 2, 16, 32)
    v, _ = C.solve_linearized(C.g_field(g))
    with pytest.raises(ArgumentError):
        C.family_member(v, -0.1)
    t_max = C.max_admissible_t(v)
    with pytest.raises(TTooLargeError) as info:
        C.family_member(v, 2 * t_max)
    assert info.value.t_max == pytest.approx(t_max)


def test_minkowski_identities_linear_order():
    g = cd.build_grid(THIRD, 2, 32, 64)
    v, _ = C.solve_linearized(C.g_field(g))
    # H_1(B) is a multiple of g, orthogonal to the horizontal coordinates
    for a in (1, 2):
        assert abs(C.minkowski_identity_check(v, 1, a)) < 1e-10
    with pytest.raises(ArgumentError):
        C.minkowski_identity_check(v, 3, 1)


def test_curvature_moment_vanishes_on_round_cap():
    g = cd.build_grid(THIRD, 2, 16, 32)
    assert abs(C.curvature_moment(cd.ell_field(g), 1)) < 1e-14


def test_expansion_small_grid_and_json():
    g = cd.build_grid(THIRD, 2, 32, 64)
    run = C.expansion_verify(g)
    assert run.checks["c2_rel_error"] < 0.05
    assert run.checks["linear_ratio"] < 1e-3
    assert run.passed
    d = json.loads(run.to_json())
    assert d["pass"] is True and "passed" not in d
    with pytest.raises(ArgumentError):
        C.expansion_verify(g, k=2)
    with pytest.raises(ArgumentError):
        C.expansion_verify(g, t_samples=(0.1, 0.2))


def test_expansion_unscaled_samples_beyond_window():
    g = cd.build_grid(THIRD, 2, 16, 32)
    v, _ = C.solve_linearized(C.g_field(g))
    t_max = C.max_admissible_t(v)
    with pytest.raises(TTooLargeError):
        C.expansion_verify(g, t_samples=(0.1, 0.5, 1.0, 2.0 * t_max), scale_samples=False)
