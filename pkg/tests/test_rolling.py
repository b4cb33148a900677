import numpy as np
import pytest

from rollkit import rolling as rl
from rollkit import suite
from rollkit.errors import ChartExitError, DomainError
from rollkit.manifold import circle, euclidean, line, se3, se3_flat, sphere, spiral
from rollkit.matrix_core import random_rotation

SQRT2 = np.sqrt(2.0)


def _sphere_plane():
    return rl.ManifoldPair(sphere(2), euclidean(2))


def test_pair_and_point_validation():
    with pytest.raises(DomainError):
        rl.ManifoldPair(sphere(2), euclidean(3))
    pair = _sphere_plane()
    with pytest.raises(DomainError):
        rl.ConfigPoint(pair.M.base_point, np.zeros(2), np.diag([1.0, -1.0])).validate(pair)
    with pytest.raises(DomainError):
        rl.ConfigPoint(pair.M.base_point, np.zeros(2), np.eye(3)).validate(pair)
    with pytest.raises(DomainError):
        rl.initial_point(_sphere_plane(), extended=True)


def test_config_dims():
    assert rl.config_dim(_sphere_plane()) == 5
    assert rl.config_dim(rl.ManifoldPair(se3(), se3_flat())) == 27
    assert rl.config_dim(rl.ManifoldPair(se3(), se3_flat()), extended=True) == 72


def test_piecewise_constant_validation():
    with pytest.raises(DomainError):
        rl.PiecewiseConstant([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(DomainError):
        rl.PiecewiseConstant([0.0], [[1.0], [2.0]])
    c = rl.PiecewiseConstant([0.0, 1.0], [[1.0], [2.0]])
    assert c(0.999)[0] == 1.0 and c(1.0)[0] == 2.0 and c(5.0)[0] == 2.0


def test_zero_control_keeps_state():
    pair = _sphere_plane()
    q0 = rl.initial_point(pair)
    tr = rl.integrate_rolling(pair, q0, rl.PiecewiseConstant.constant([0.0, 0.0]), 0.5, 0.1)
    assert np.all(tr.table()[:, 1:] == tr.table()[0, 1:])


def test_sphere_plane_rolling_conditions():
    pair = _sphere_plane()
    ctrl = rl.PiecewiseConstant([0.0, 0.4], [[1.0, 0.0], [0.2, 0.9]])
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), ctrl, 1.0, 1e-3)
    rep = rl.verify_rolling_conditions(pair, tr)
    assert rl.residuals_ok(rep)
    assert rep["notwist_normal"] is None or isinstance(rep["notwist_normal"], (float, str))
    assert tr.breaks == (400,)
    # plane side moves with unit speed then |(0.2, 0.9)|
    v = np.linalg.norm(np.diff(tr.x_hat, axis=0), axis=1) / np.diff(tr.t)
    assert abs(v[10] - 1.0) < 1e-6 and abs(v[-10] - np.hypot(0.2, 0.9)) < 1e-6


def test_rk4_and_exp_agree():
    pair = _sphere_plane()
    u = rl.PiecewiseConstant.constant([0.6, -0.3])
    a = rl.integrate_rolling(pair, rl.initial_point(pair), u, 0.8, 1e-3, method="exp")
    b = rl.integrate_rolling(pair, rl.initial_point(pair), lambda t: u(t), 0.8, 1e-3)
    assert np.abs(a.table() - b.table()).max() < 1e-8
    with pytest.raises(DomainError):
        rl.integrate_rolling(pair, rl.initial_point(pair), u, 0.8, 1e-3, method="euler")


def test_chart_exit_keeps_partial_trajectory():
    pair = _sphere_plane()
    with pytest.raises(ChartExitError) as info:
        rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([1.0, 0.0]), np.pi, 1e-3)
    err = info.value
    assert 1.0 < err.t < np.pi / 2 + 1e-2
    assert isinstance(err.partial, rl.RollingTrajectory) and len(err.partial) > 1000
    assert "# error:" in err.partial.to_csv(error=str(err))


def test_csv_round_trip():
    pair = rl.ManifoldPair(se3(), se3_flat())
    tr = suite.se3_ambient_trajectory(0.2, 1e-2)[1]
    back = rl.RollingTrajectory.from_csv(tr.to_csv(), pair)
    assert np.array_equal(back.table(), tr.table()) and back.B.shape == tr.B.shape
    with pytest.raises(DomainError):
        rl.RollingTrajectory.from_csv("# nothing\n", pair)


def test_se3_closed_form():
    pair = rl.ManifoldPair(se3(), se3_flat())
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([SQRT2, 0, 0, 0, 0, 1]),
                              1.0, 1e-2)
    assert suite._se3_error(tr, 1.0) < 1e-12


def test_ambient_isometry_matches_derived_form():
    # the reconstructed Abar in column-major coordinates is the transpose of
    # the reference matrix; rbar follows from x_hat = Abar x + rbar
    pair, tr = suite.se3_ambient_trajectory()
    for t in (0.0, 0.5, 1.0):
        th, Ab, rb = suite.ambient_isometry_at(pair, tr, t)
        assert np.abs(Ab - suite.reference_abar(th).T).max() < 1e-10
        want = np.zeros(16)
        want[[0, 5, 10, 15]] = -1.0
        want[1], want[4] = th, -th
        assert np.abs(rb - want).max() < 1e-10


def test_ambient_residuals_of_extended_rolling():
    pair, tr = suite.se3_ambient_trajectory(0.5, 1e-3)
    res = rl.ambient_rolling_residuals(pair, tr)
    assert res["orientation"]
    assert max(v for k, v in res.items() if k != "orientation") < 1e-6
    with pytest.raises(DomainError):
        rl.ambient_rolling_residuals(pair, rl.RollingTrajectory(tr.t, tr.u, tr.x, tr.x_hat, tr.A))


def test_extension_matches_extended_integration():
    pair = rl.ManifoldPair(se3(), se3_flat())
    u = rl.PiecewiseConstant.constant([SQRT2, 0, 0, 0, 0, 1])
    full = rl.integrate_rolling(pair, rl.initial_point(pair, extended=True), u, 0.5, 1e-3)
    base = rl.integrate_rolling(pair, rl.initial_point(pair), u, 0.5, 1e-3)
    ext = rl.extend_to_extrinsic(pair, base, np.eye(pair.nu))
    assert np.abs(ext.B - full.B).max() < 1e-6


def test_circle_on_line_keeps_normal_angle():
    _, tr = suite.circle_extension(line(2), T=1.0, theta0=0.3)
    assert np.abs(suite._angle(tr.B) - 0.3).max() < 1e-8


def test_notwist_normal_vacuous_for_codim_one():
    pair = rl.ManifoldPair(circle(1), line(1))
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([1.0]), 1.0, 1e-2)
    assert rl.verify_rolling_conditions(pair, tr)["notwist_normal"] == "vacuous"
    pair = _sphere_plane()
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([0.1, 0.0]), 0.1, 1e-2)
    assert rl.verify_rolling_conditions(pair, tr)["notwist_normal"] in (None, "vacuous")


def test_corrupted_trajectories_are_flagged():
    pair = _sphere_plane()
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([0.7, 0.2]), 1.0, 1e-3)
    assert rl.residuals_ok(rl.verify_rolling_conditions(pair, tr))
    bad = suite._corrupted(pair, tr)
    assert min(bad.values()) > 1e-3


def test_rolling_freedom():
    M = euclidean(3)
    t = np.linspace(0.0, 1.0, 11)
    c = rl.Curve(t, np.outer(t, [1.0, 0, 0]), None)
    assert rl.rolling_freedom(M, c) == 2
    c = rl.Curve(t, np.zeros((11, 3)), None)
    assert rl.rolling_freedom(M, c) == 3


def test_random_start_on_sphere_sphere_stays_valid():
    pair = rl.ManifoldPair(sphere(3), sphere(3))
    rng = np.random.default_rng(7)
    q = rl.ConfigPoint(pair.M.random_point(rng), pair.M_hat.random_point(rng), random_rotation(3, rng))
    tr = rl.integrate_rolling(pair, q, lambda t: np.array([0.3, np.sin(t), 0.1]), 0.5, 1e-3)
    assert rl.residuals_ok(rl.verify_rolling_conditions(pair, tr))
    assert rl.noslip_residual(pair, tr) < 1e-6


def test_ambient_dimensions_must_match():
    assert rl.ManifoldPair(circle(2), spiral()).nu == 2
    with pytest.raises(DomainError):
        rl.ManifoldPair(circle(1), spiral()).nu


def test_horizontality_agrees_with_drift():
    pair, tr = suite.se3_ambient_trajectory(0.5, 1e-3)
    tan, nor = rl.horizontality_residual(pair, tr)
    assert tan < 1e-6 and nor < 1e-6
    d_tan, d_nor = rl.frame_coefficient_drift(pair, tr, split=True)
    assert d_tan < 1e-6 and d_nor < 1e-6


def test_straight_roll_displaces_plane_point_by_arc_length():
    pair = _sphere_plane()
    tr = rl.integrate_rolling(pair, rl.initial_point(pair), rl.PiecewiseConstant.constant([1.0, 0.0]), 1.5, 1e-3)
    assert abs(np.linalg.norm(tr.x_hat[-1]) - 1.5) < 1e-6
    assert abs(np.arccos(tr.x[-1] @ tr.x[0]) - 1.5) < 1e-6
