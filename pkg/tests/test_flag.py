import numpy as np
import pytest

from rollkit.errors import FlagError
from rollkit.flag import (
    STEP_PAIR,
    FlagReport,
    VectorFieldHandle,
    bracket,
    compute_flag,
    controllability_report,
    lie_bracket_numeric,
)
from rollkit.manifold import cylinder, euclidean, sphere
from rollkit.matrix_core import random_rotation, skew_basis
from rollkit.rolling import ConfigPoint, ManifoldPair, config_dim, rolling_fields


def _pair():
    return ManifoldPair(sphere(2), euclidean(2))


def _q(pair, seed):
    rng = np.random.default_rng(seed)
    return ConfigPoint(pair.M.random_point(rng), pair.M_hat.random_point(rng), random_rotation(pair.n, rng))


def _fd_fields(pair):
    # the same fields without the traceable flag, to force finite differences
    return [VectorFieldHandle(f.evaluator, f.label) for f in rolling_fields(pair)]


def test_bracket_antisymmetry():
    pair = _pair()
    X, Y = _fd_fields(pair)
    p = _q(pair, 0).vector()
    a = lie_bracket_numeric(X, Y, p)
    b = lie_bracket_numeric(Y, X, p)
    assert np.abs(a + b).max() <= 1e-9 * max(1.0, np.abs(a).max())


def test_jacobi_identity():
    pair = ManifoldPair(sphere(2), cylinder())
    X, Y = _fd_fields(pair)
    Z = VectorFieldHandle(lambda p: 0.5 * X(p) - 0.2 * Y(p) * p[0], "Z")
    p = _q(pair, 1).vector()
    h = 1e-4
    J = (lie_bracket_numeric(X, bracket(Y, Z, h, exact=False), p, h)
         + lie_bracket_numeric(Y, bracket(Z, X, h, exact=False), p, h)
         + lie_bracket_numeric(Z, bracket(X, Y, h, exact=False), p, h))
    scale = np.abs(lie_bracket_numeric(X, Y, p, h)).max()
    assert np.abs(J).max() <= 1e-4 * max(1.0, scale)


def test_exact_and_numeric_brackets_agree():
    pair = _pair()
    X, Y = rolling_fields(pair)
    p = _q(pair, 2).vector()
    exact = np.asarray(bracket(X, Y)(p))
    num = lie_bracket_numeric(X, Y, p)
    assert np.abs(exact - num).max() < 1e-8


def test_brackets_stay_tangent_to_constraint_set():
    # A-block of a bracket at A must be A times a skew matrix
    pair = ManifoldPair(sphere(3), euclidean(3))
    X = rolling_fields(pair)
    q = _q(pair, 3)
    v = np.asarray(bracket(X[0], bracket(X[1], X[2]))(q.vector()))
    dA = v[4 + 3:].reshape(3, 3)
    S = q.A.T @ dA
    assert np.abs(S + S.T).max() <= 1e-6
    # tangency of the sphere part: x . xdot = 0
    assert abs(q.x @ v[:4]) <= 1e-6


@pytest.mark.parametrize("n", [3, 4, 5])
def test_so_n_generators_reach_full_algebra(n):
    # left-invariant W_1j at a random rotation generate so(n)
    gens = [VectorFieldHandle(lambda p, W=skew_basis(n, (1, j)): (p.reshape(n, n) @ W).ravel(), f"W1{j}")
            for j in range(2, n + 1)]
    A = random_rotation(n, np.random.default_rng(n))
    rep = compute_flag(gens, A.ravel(), config_dim=n * (n - 1) // 2)
    assert rep.orbit_dim == n * (n - 1) // 2
    assert rep.method == "fd"


def test_ranks_invariant_under_rotation_base_point_and_step():
    pair = _pair()
    d = config_dim(pair)
    fields = _fd_fields(pair)
    for seed in range(3):
        p = _q(pair, 10 + seed).vector()
        for h in STEP_PAIR:
            assert compute_flag(fields, p, config_dim=d, h=h).ranks == [2, 3, 5]


def test_flat_pair_and_report_json():
    rep = controllability_report(ManifoldPair(euclidean(2), euclidean(2)))
    assert rep.ranks == [2, 2] and rep.step == 1 and not rep.controllable
    js = rep.to_json()
    assert list(js) == ["ranks", "step", "config_dim", "orbit_dim", "controllable", "provenance"]
    assert js["provenance"] == [["X1", "X2"], []]


def test_provenance_sorted_and_deterministic():
    pair = _pair()
    a = controllability_report(pair)
    b = controllability_report(pair)
    assert a.provenance == b.provenance == [["X1", "X2"], ["[X1,X2]"], ["[X1,[X1,X2]]", "[X2,[X1,X2]]"]]
    assert a.nearby_ranks == [2, 3, 5] and a.rank_stable


def test_max_step_reached_is_reported():
    pair = _pair()
    rep = compute_flag(rolling_fields(pair), _q(pair, 4).vector(), max_step=2, config_dim=5)
    assert rep.ranks == [2, 3] and not rep.stabilized


def test_rank_tolerance_outside_sweep_is_unstable():
    rep = controllability_report(_pair(), tol=0.5)
    assert not rep.rank_stable


def test_flag_errors():
    with pytest.raises(FlagError):
        compute_flag([], np.zeros(3))
    X = VectorFieldHandle(lambda p: p, "X")
    with pytest.raises(FlagError):
        compute_flag([X], np.ones(3), method="exact")
    with pytest.raises(FlagError):
        lie_bracket_numeric(X, X, np.ones(3), h=0.0)


def test_report_is_plain_data():
    r = FlagReport([2, 2], 1, 5, 2, False, [["X1"], []])
    assert r.to_json()["orbit_dim"] == 2
