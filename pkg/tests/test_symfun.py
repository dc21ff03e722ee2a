from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capcurv import symfun
from capcurv.errors import ArgumentError, ConeMembershipError, DegenerateQuotientError


def test_sigma_k_small_cases():
    lam = [1.0, 2.0, 3.0]
    assert symfun.sigma_k(lam, 2) == 11.0
    assert symfun.sigma_k(lam, 0) == 1.0
    assert symfun.sigma_k(lam, 4) == 0.0
    for n in range(2, 7):
        for k in range(n + 1):
            assert symfun.sigma_k(np.ones(n), k) == comb(n, k)


def test_sigma_k_negative_order():
    with pytest.raises(ArgumentError):
        symfun.sigma_k([1.0, 2.0], -1)


def test_h_k():
    lam = [1.0, 2.0, 3.0]
    assert symfun.h_k(lam, 1) == pytest.approx(2.0)
    assert symfun.h_k(lam, 3) == pytest.approx(6.0)
    for k in range(4):
        assert symfun.h_k(np.full(3, 1.7), k) == pytest.approx(1.7**k, rel=1e-14)


def test_sigma_k_deleted():
    lam = [1.0, 2.0, 3.0]
    assert symfun.sigma_k_deleted(lam, 2, 0) == 6.0
    assert symfun.sigma_k_deleted(lam, 1, 2) == 3.0
    assert symfun.sigma_k_deleted(lam, 2, 1) + 2 * symfun.sigma_k_deleted(lam, 1, 1) == 11.0
    with pytest.raises(ArgumentError):
        symfun.sigma_k_deleted(lam, 1, 3)


def test_in_gamma_k():
    assert symfun.in_gamma_k([-1.0, 5.0], 1)
    assert not symfun.in_gamma_k([-1.0, 5.0], 2)
    assert symfun.in_gamma_k(np.ones(5), 5)


def test_quotient_value_examples():
    assert symfun.quotient_value(np.eye(2), 1) == pytest.approx(0.5)
    assert symfun.quotient_value(np.diag([1.0, 2.0]), 1) == pytest.approx(2.0 / 3.0)
    for n in range(2, 6):
        for k in range(1, n + 1):
            c = comb(n, k) ** (1.0 / k)
            assert symfun.quotient_value(c * np.eye(n), k) == pytest.approx(1.0, rel=1e-13)


def test_quotient_value_degenerate():
    with pytest.raises(DegenerateQuotientError):
        symfun.quotient_value(np.diag([1.0, -1.0]), 1)


def test_quotient_gradient_closed_forms():
    np.testing.assert_allclose(symfun.quotient_gradient(np.eye(2), 1), 0.25 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(symfun.quotient_gradient(np.diag([1.0, 2.0]), 1), np.diag([4 / 9, 1 / 9]), atol=1e-15)


def _fd_gradient(A, k, eps=1e-6):
    n = A.shape[0]
    G = np.zeros_like(A)
    for i in range(n):
        for j in range(i, n):
            E = np.zeros_like(A)
            E[i, j] = E[j, i] = 1.0
            d = (symfun.quotient_value(A + eps * E, k) - symfun.quotient_value(A - eps * E, k)) / (2 * eps)
            G[i, j] = G[j, i] = d if i == j else 0.5 * d
    return G


def test_quotient_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    np.testing.assert_allclose(_fd_gradient(np.eye(2), 1), 0.25 * np.eye(2), atol=1e-8)
    for n in range(2, 7):
        A = symfun.random_spd(rng, n, 1)[0]
        A = 0.5 * (A + A.T)
        for k in range(1, n + 1):
            G = symfun.quotient_gradient(A, k)
            np.testing.assert_allclose(G, _fd_gradient(A, k), rtol=1e-6, atol=1e-8 * np.abs(G).max())


def test_quotient_gradient_taylor_remainder_is_second_order():
    rng = np.random.default_rng(4)
    A = symfun.random_spd(rng, 4, 1)[0]
    A = 0.5 * (A + A.T)
    B = rng.standard_normal((4, 4))
    B = B + B.T
    G = symfun.quotient_gradient(A, 2)
    rem = []
    for eps in (1e-2, 5e-3):
        rem.append(abs(symfun.quotient_value(A + eps * B, 2) - symfun.quotient_value(A, 2) - eps * np.sum(G * B)))
    assert rem[0] / rem[1] == pytest.approx(4.0, rel=0.1)


def test_derivative_diagonal_in_eigenframe():
    rng = np.random.default_rng(5)
    A = symfun.random_spd(rng, 5, 1)[0]
    A = 0.5 * (A + A.T)
    _, Q = np.linalg.eigh(A)
    for r in range(5):
        D = Q.T @ symfun.newton_tensor(A, r) @ Q
        off = D - np.diag(np.diag(D))
        assert np.max(np.abs(off)) <= 1e-12 * max(1.0, np.max(np.abs(D)))


def test_newton_tensor_diagonal_entries_are_deleted_sigmas():
    lam = np.array([0.7, 1.3, 2.2, 4.0])
    for r in range(4):
        T = symfun.newton_tensor(np.diag(lam), r)
        for i in range(4):
            assert T[i, i] == pytest.approx(symfun.sigma_k_deleted(lam, r, i), rel=1e-13)


def test_maclaurin_examples():
    ok, lhs, rhs = symfun.maclaurin_chain_check([1.0, 2.0, 3.0], 3, 0, 1, 0)
    assert ok and lhs == pytest.approx(6 ** (1 / 3)) and rhs == pytest.approx(2.0)
    ok, lhs, rhs = symfun.maclaurin_chain_check([1.0, 2.0, 3.0], 2, 1, 1, 0)
    assert ok and lhs == pytest.approx(11 / 6) and rhs == pytest.approx(2.0)
    ok, lhs, rhs = symfun.maclaurin_chain_check(np.full(4, 2.5), 3, 1, 2, 0)
    assert ok and lhs == pytest.approx(rhs, rel=1e-14)


def test_maclaurin_rejects_outside_cone():
    with pytest.raises(ConeMembershipError):
        symfun.maclaurin_chain_check([-1.0, 0.5, 0.2], 3, 0, 1, 0)
    with pytest.raises(ArgumentError):
        symfun.maclaurin_chain_check([1.0, 2.0], 1, 0, 2, 0)


def test_concavity_examples():
    A = np.diag([1.0, 3.0])
    B = np.diag([3.0, 1.0])
    assert symfun.quotient_concavity_check(A, B, 1)
    assert symfun.quotient_concavity_check(A, A, 1)
    with pytest.raises(ConeMembershipError):
        symfun.quotient_concavity_check(np.diag([1.0, -1.0]), B, 1)


def test_bruteforce_oracle_agrees():
    rng = np.random.default_rng(7)
    for n in range(2, 9):
        lam = rng.uniform(-2, 3, size=n)
        for k in range(n + 1):
            assert symfun.sigma_k(lam, k) == pytest.approx(symfun.sigma_k_bruteforce(lam, k), rel=1e-12, abs=1e-12)


def test_recurrence_handles_many_entries():
    lam = np.linspace(0.5, 1.5, 20)
    assert symfun.sigma_k(lam, 20) == pytest.approx(np.prod(lam), rel=1e-13)
    assert symfun.sigma_k(lam, 1) == pytest.approx(lam.sum(), rel=1e-14)


def test_suites_small_runs():
    rng = np.random.default_rng(0)
    rep = symfun.maclaurin_suite(rng, 4, 2000)
    assert rep["violations"] == 0 and rep["diagonal_equality"]
    rep = symfun.concavity_suite(rng, 3, 2000)
    assert rep["violations"] == 0


def test_suite_is_deterministic():
    a = symfun.maclaurin_suite(np.random.default_rng(11), 3, 500)
    b = symfun.maclaurin_suite(np.random.default_rng(11), 3, 500)
    assert a == b


positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(positive, min_size=2, max_size=7), st.floats(min_value=0.1, max_value=10.0))
def test_homogeneity(lam, c):
    lam = np.array(lam)
    for k in range(len(lam) + 1):
        assert symfun.sigma_k(c * lam, k) == pytest.approx(c**k * symfun.sigma_k(lam, k), rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=2, max_size=7))
def test_deletion_recurrence(lam):
    lam = np.array(lam)
    n = len(lam)
    scale = max(1.0, np.max(np.abs(lam))) ** n
    for i in range(n):
        for k in range(1, n + 1):
            lhs = symfun.sigma_k(lam, k)
            rhs = symfun.sigma_k_deleted(lam, k, i) + lam[i] * symfun.sigma_k_deleted(lam, k - 1, i)
            assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13 * scale)
