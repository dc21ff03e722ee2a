"""Elementary symmetric functions of eigenvalues and small symmetric matrices.

The k-th elementary symmetric function is read off from the coefficients of
prod_i (1 + lambda_i x), built one factor at a time.  Matrix derivatives use
the Newton tensors T_r(A) = sum_j (-1)^j sigma_{r-j}(A) A^j, which stay valid
when eigenvalues coincide (the round cap has A = c*I).
"""

from __future__ import annotations

import itertools
from math import comb

import numpy as np

from .errors import ArgumentError, ConeMembershipError, DegenerateQuotientError

# relative slack used by the inequality checks
MACLAURIN_SLACK = 1e-10
CONCAVITY_SLACK = 1e-12


def _as_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0 or lam.shape[-1] < 1:
        raise ArgumentError("eigenvalue vector must have at least one entry")
    if not np.all(np.isfinite(lam)):
        raise ArgumentError("eigenvalue vector has non-finite entries")
    return lam


def _as_symmetric(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError("matrix has non-finite entries")
    if not np.array_equal(A, A.T):
        raise ArgumentError("matrix is not exactly symmetric")
    return A


def elementary_symmetric(lam) -> np.ndarray:
    """Return sigma_0, ..., sigma_n of ``lam`` along the last axis.

    Works on stacked inputs of shape ``(..., n)`` and returns ``(..., n+1)``.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for m in range(n):
        x = lam[..., m, None]
        # multiply the running polynomial by (1 + x t); top-down keeps it in place
        e[..., 1 : m + 2] = e[..., 1 : m + 2] + x * e[..., 0 : m + 1]
    return e


def sigma_k(lam, k: int) -> float:
    """k-th elementary symmetric polynomial of ``lam``.

    sigma_0 = 1 and sigma_k = 0 for k > n.
    """
    if k < 0:
        raise ArgumentError(f"k must be non-negative, got {k}")
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if k > n:
        return np.zeros(lam.shape[:-1])[()] if lam.ndim > 1 else 0.0
    out = elementary_symmetric(lam)[..., k]
    return out if lam.ndim > 1 else float(out)


def h_k(lam, k: int) -> float:
    """Normalized symmetric function sigma_k / binom(n, k)."""
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if k < 0 or k > n:
        raise ArgumentError(f"k must lie in [0, {n}], got {k}")
    return sigma_k(lam, k) / comb(n, k)


def sigma_k_deleted(lam, k: int, i: int) -> float:
    """sigma_k(lambda | i): sigma_k with the i-th entry set to zero."""
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if not 0 <= i < n:
        raise ArgumentError(f"index {i} out of range for n = {n}")
    if k < 0 or k > n:
        raise ArgumentError(f"k must lie in [0, {n}], got {k}")
    reduced = np.delete(lam, i, axis=-1)
    if reduced.shape[-1] == 0:
        return 1.0 if k == 0 else 0.0
    return sigma_k(reduced, k)


def in_gamma_k(lam, k: int) -> bool:
    """Membership in the open Garding cone: sigma_i > 0 for 1 <= i <= k.

    Strict inequality with zero tolerance; callers add their own slack.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise ArgumentError(f"k must lie in [1, {n}], got {k}")
    e = elementary_symmetric(lam)
    return bool(np.all(e[..., 1 : k + 1] > 0.0))


def _check_order(n: int, k: int) -> None:
    if not 1 <= k <= n:
        raise ArgumentError(f"curvature order k must lie in [1, {n}], got {k}")


def quotient_value(A, k: int) -> float:
    """sigma_n(A) / sigma_{n-k}(A), evaluated on the eigenvalues of A."""
    A = _as_symmetric(A)
    n = A.shape[0]
    _check_order(n, k)
    if n == 2 and k == 1:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        scale = max(abs(A[0, 0]), abs(A[1, 1]), abs(A[0, 1]), 1e-300)
        if abs(tr) <= 1e-14 * scale:
            raise DegenerateQuotientError("trace of A vanishes")
        return float(det / tr)
    e = elementary_symmetric(np.linalg.eigvalsh(A))
    denom = e[n - k]
    scale = max(float(np.max(np.abs(A))), 1e-300) ** (n - k)
    if abs(denom) <= 1e-14 * scale:
        raise DegenerateQuotientError(f"sigma_{n - k}(A) vanishes")
    return float(e[n] / denom)


def newton_tensor(A, r: int) -> np.ndarray:
    """T_r(A) = d sigma_{r+1}(A) / dA, as a symmetric matrix.

    T_r = sum_{j=0}^{r} (-1)^j sigma_{r-j}(A) A^j; T_{-1} = 0.
    """
    A = _as_symmetric(A)
    n = A.shape[0]
    if r < 0:
        return np.zeros_like(A)
    e = elementary_symmetric(np.linalg.eigvalsh(A))
    out = np.zeros_like(A)
    power = np.eye(n)
    for j in range(r + 1):
        if r - j <= n:
            out += (-1) ** j * e[r - j] * power
        power = power @ A
    return 0.5 * (out + out.T)


def quotient_gradient(A, k: int) -> np.ndarray:
    """Matrix derivative of sigma_n / sigma_{n-k} with respect to A.

    Returns G with d(quotient) = sum_ij G_ij dA_ij for symmetric dA.
    """
    A = _as_symmetric(A)
    n = A.shape[0]
    _check_order(n, k)
    e = elementary_symmetric(np.linalg.eigvalsh(A))
    num, den = e[n], e[n - k]
    scale = max(float(np.max(np.abs(A))), 1e-300) ** (n - k)
    if abs(den) <= 1e-14 * scale:
        raise DegenerateQuotientError(f"sigma_{n - k}(A) vanishes")
    G = (den * newton_tensor(A, n - 1) - num * newton_tensor(A, n - k - 1)) / den**2
    return 0.5 * (G + G.T)


def maclaurin_chain_check(lam, k: int, l: int, r: int, s: int):
    """Check (H_k/H_l)^(1/(k-l)) <= (H_r/H_s)^(1/(r-s)) for lambda in Gamma_k.

    Returns ``(holds, lhs, rhs)``; ``holds`` allows a relative slack of 1e-10.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if not (n >= k > l >= 0 and r > s >= 0 and k >= r and l >= s):
        raise ArgumentError(f"invalid index tuple (k, l, r, s) = {(k, l, r, s)}")
    if not in_gamma_k(lam, k):
        raise ConeMembershipError(f"lambda = {lam.tolist()} is not in Gamma_{k}")
    lhs = (h_k(lam, k) / h_k(lam, l)) ** (1.0 / (k - l))
    rhs = (h_k(lam, r) / h_k(lam, s)) ** (1.0 / (r - s))
    return bool(lhs <= rhs * (1.0 + MACLAURIN_SLACK)), float(lhs), float(rhs)


def _concave_quotient(lam_batch: np.ndarray, k: int) -> np.ndarray:
    n = lam_batch.shape[-1]
    e = elementary_symmetric(lam_batch)
    return (e[..., n] / e[..., n - k]) ** (1.0 / k)


def quotient_concavity_check(A, B, k: int) -> bool:
    """Midpoint concavity of F = (sigma_n / sigma_{n-k})^(1/k) on PD matrices."""
    A = _as_symmetric(A)
    B = _as_symmetric(B)
    if A.shape != B.shape:
        raise ArgumentError("A and B must have the same shape")
    n = A.shape[0]
    _check_order(n, k)
    lams = [np.linalg.eigvalsh(M) for M in (A, B, 0.5 * (A + B))]
    if np.min(lams[0]) <= 0 or np.min(lams[1]) <= 0:
        raise ConeMembershipError("concavity check needs positive definite A and B")
    fa, fb, fm = (_concave_quotient(lam, k) for lam in lams)
    return bool(fm >= 0.5 * (fa + fb) - CONCAVITY_SLACK * (1.0 + abs(fa) + abs(fb)))


# -- randomized suites --------------------------------------------------------


def admissible_index_tuples(n: int):
    """All (k, l, r, s) with n >= k > l >= 0, r > s >= 0, k >= r, l >= s."""
    out = []
    for k in range(1, n + 1):
        for l in range(k):
            for r in range(1, k + 1):
                for s in range(min(r, l + 1)):
                    out.append((k, l, r, s))
    return out


def maclaurin_suite(rng: np.random.Generator, n: int, count: int):
    """Check every admissible index tuple on ``count`` random points of Gamma_n.

    Points are log-uniform over six decades, plus a diagonal-ray sample on
    which equality must hold.  Returns a dict with the number of violations,
    the worst relative excess, and the offending sample if any.
    """
    lam = np.exp(rng.uniform(-3.0, 3.0, size=(count, n)))
    H = elementary_symmetric(lam) / np.array([comb(n, i) for i in range(n + 1)])
    violations = 0
    worst = -np.inf
    offender = None
    for k, l, r, s in admissible_index_tuples(n):
        lhs = (H[:, k] / H[:, l]) ** (1.0 / (k - l))
        rhs = (H[:, r] / H[:, s]) ** (1.0 / (r - s))
        excess = lhs / rhs - 1.0
        bad = excess > MACLAURIN_SLACK
        if np.any(bad):
            violations += int(np.count_nonzero(bad))
            if offender is None:
                idx = int(np.argmax(excess))
                offender = {"lambda": lam[idx].tolist(), "tuple": [k, l, r, s]}
        worst = max(worst, float(np.max(excess)))
    c = float(np.exp(rng.uniform(-3.0, 3.0)))
    diag_equal = all(
        abs(lhs - rhs) <= 1e-12 * rhs
        for lhs, rhs in (
            maclaurin_chain_check(np.full(n, c), *t)[1:] for t in admissible_index_tuples(n)
        )
    )
    return {
        "n": n,
        "samples": count,
        "tuples": len(admissible_index_tuples(n)),
        "violations": violations,
        "max_relative_excess": worst,
        "diagonal_equality": diag_equal,
        "offender": offender,
    }


def random_spd(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Stack of random symmetric positive definite matrices, shape (size, n, n)."""
    q, _ = np.linalg.qr(rng.standard_normal((size, n, n)))
    lam = np.exp(rng.uniform(-2.0, 2.0, size=(size, n)))
    M = np.einsum("sij,sj,skj->sik", q, lam, q)
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def concavity_suite(rng: np.random.Generator, n: int, count: int):
    """Midpoint concavity of (sigma_n/sigma_{n-k})^(1/k) on random PD pairs."""
    A = random_spd(rng, n, count)
    B = random_spd(rng, n, count)
    la = np.linalg.eigvalsh(A)
    lb = np.linalg.eigvalsh(B)
    lm = np.linalg.eigvalsh(0.5 * (A + B))
    violations = 0
    offender = None
    worst = -np.inf
    for k in range(1, n + 1):
        fa, fb, fm = (_concave_quotient(x, k) for x in (la, lb, lm))
        defect = 0.5 * (fa + fb) - fm
        bad = defect > CONCAVITY_SLACK * (1.0 + np.abs(fa) + np.abs(fb))
        if np.any(bad):
            violations += int(np.count_nonzero(bad))
            if offender is None:
                idx = int(np.argmax(defect))
                offender = {"A": A[idx].tolist(), "B": B[idx].tolist(), "k": k}
        worst = max(worst, float(np.max(defect)))
    return {
        "n": n,
        "pairs": count,
        "violations": violations,
        "max_defect": worst,
        "offender": offender,
    }


def sigma_k_bruteforce(lam, k: int) -> float:
    """Subset enumeration; exponential cost, used as a test oracle only."""
    lam = list(np.asarray(lam, dtype=float))
    if k == 0:
        return 1.0
    return float(sum(np.prod(c) for c in itertools.combinations(lam, k)))
