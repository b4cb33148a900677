"""Dense linear algebra on SO(n) and so(n).

Indices in the public API are 1-based, matching the W_ij notation; arrays are
0-based as usual.
"""
from __future__ import annotations

import itertools
from typing import Dict, Tuple

import numpy as np

from rollkit.errors import DomainError, DriftError

SkewIndex = Tuple[int, int]

RANK_TOL = 1e-8
SKEW_TOL = 1e-12
DRIFT_LIMIT = 0.5
_SERIES_ORDER = 12


def skew_pairs(n: int):
    """All SkewIndex pairs (i, j), 1 <= i < j <= n, in lexicographic order."""
    return list(itertools.combinations(range(1, n + 1), 2))


def skew_basis(n: int, idx: SkewIndex) -> np.ndarray:
    """E_ij - E_ji, the value of W_ij at the identity."""
    i, j = idx
    if not (1 <= i < j <= n):
        raise DomainError(f"skew index {idx} out of range for n={n}")
    W = np.zeros((n, n))
    W[i - 1, j - 1] = 1.0
    W[j - 1, i - 1] = -1.0
    return W


def _signed(a: int, b: int):
    # W_ab = -W_ba, W_aa = 0
    if a == b:
        return None, 0
    return ((a, b), 1) if a < b else ((b, a), -1)


def so_bracket_table(n: int) -> Dict[Tuple[SkewIndex, SkewIndex], Dict[SkewIndex, int]]:
    """[W_ij, W_kl] as a sparse signed combination of basis pairs.

    Uses [W_ij, W_kl] = d_jk W_il + d_il W_jk - d_ik W_jl - d_jl W_ik.
    """
    if n < 2:
        raise DomainError("so(n) bracket table needs n >= 2")
    table = {}
    for (i, j), (k, l) in itertools.product(skew_pairs(n), repeat=2):
        combo: Dict[SkewIndex, int] = {}
        terms = [
            (j == k, i, l, 1),
            (i == l, j, k, 1),
            (i == k, j, l, -1),
            (j == l, i, k, -1),
        ]
        for hit, a, b, sign in terms:
            if not hit:
                continue
            key, s = _signed(a, b)
            if key is None:
                continue
            combo[key] = combo.get(key, 0) + sign * s
        table[((i, j), (k, l))] = {key: c for key, c in combo.items() if c != 0}
    return table


def skew_from_combo(n: int, combo: Dict[SkewIndex, float]) -> np.ndarray:
    out = np.zeros((n, n))
    for idx, c in combo.items():
        out += c * skew_basis(n, idx)
    return out


def rank_of_span(vectors, tol: float = RANK_TOL) -> int:
    """Numerical rank of a set of vectors.

    Counts singular values above ``tol * sigma_max * max(shape)``.
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[None, :]
    if V.size == 0 or V.shape[0] == 0:
        raise DomainError("rank_of_span needs at least one vector")
    if not np.all(np.isfinite(V)):
        raise DomainError("rank_of_span got non-finite entries")
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0] * max(V.shape)))


def _check_skew(W: np.ndarray):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DomainError("expected a square matrix")
    if np.max(np.abs(W + W.T), initial=0.0) > SKEW_TOL * max(1.0, np.max(np.abs(W), initial=0.0)):
        raise DomainError("matrix is not skew-symmetric")
    return 0.5 * (W - W.T)


def exp_skew(W) -> np.ndarray:
    """Matrix exponential of a skew-symmetric matrix, landing in SO(n)."""
    W = _check_skew(W)
    n = W.shape[0]
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        c, s = np.cos(W[0, 1]), np.sin(W[0, 1])
        return np.array([[c, s], [-s, c]])
    if n == 3:
        # Rodrigues
        w = np.array([W[2, 1], W[0, 2], W[1, 0]])
        th = np.linalg.norm(w)
        if th < 1e-8:
            a, b = 1.0 - th**2 / 6.0, 0.5 - th**2 / 24.0
        else:
            a, b = np.sin(th) / th, (1.0 - np.cos(th)) / th**2
        return np.eye(3) + a * W + b * (W @ W)
    norm = np.linalg.norm(W, 1)
    s = max(0, int(np.ceil(np.log2(norm / 0.25))) if norm > 0 else 0)
    X = W / 2.0**s
    term = np.eye(n)
    Q = np.eye(n)
    for k in range(1, _SERIES_ORDER + 1):
        term = term @ X / k
        Q = Q + term
    for _ in range(s):
        Q = Q @ Q
    return Q


def project_to_SO(M) -> np.ndarray:
    """Polar factor of M, the nearest rotation in Frobenius norm."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError("expected a square matrix")
    n = M.shape[0]
    if np.linalg.det(M) <= 0:
        raise DriftError("determinant is not positive")
    drift = np.linalg.norm(M.T @ M - np.eye(n))
    if drift > DRIFT_LIMIT:
        raise DriftError(f"orthogonality drift {drift:.3g} exceeds {DRIFT_LIMIT}")
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def so_drift(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.norm(M.T @ M - np.eye(M.shape[0])))


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal(size=(n, n)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q

