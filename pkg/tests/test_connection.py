import numpy as np
import pytest

from rollkit.connection import (
    Curve,
    curve_from_callable,
    curve_from_samples,
    fd_derivative,
    geodesic,
    geodesic_residual,
    normal_parallel_transport,
    parallel_transport,
    structural_constants_2d,
)
from rollkit.errors import ChartExitError, DomainError
from rollkit.manifold import circle, euclidean, se3, sphere, spiral
from rollkit.scenarios import latitude, se3_example_curve

SQRT2 = np.sqrt(2.0)


def test_fd_derivative_respects_breaks():
    t = np.linspace(0.0, 2.0, 201)
    y = np.where(t < 1.0, t**2, 2.0 * t - 1.0 + 3.0 * (t - 1.0) ** 2)
    d = fd_derivative(t, y[:, None], breaks=(100,))[:, 0]
    want = np.where(t < 1.0, 2 * t, 2.0 + 6.0 * (t - 1.0))
    assert np.abs(d - want).max() < 1e-10
    with pytest.raises(DomainError):
        fd_derivative([0.0, 0.0], np.zeros((2, 1)))


def test_transport_along_line_is_constant():
    M = euclidean(3)
    t = np.linspace(0.0, 1.0, 51)
    c = curve_from_samples(M, t, np.outer(t, [1.0, 2.0, -1.0]))
    Z = parallel_transport(M, c, np.array([1.0, 0.0, 0.0]))
    assert np.abs(Z - [1.0, 0.0, 0.0]).max() == 0.0


@pytest.mark.parametrize("phi", [np.pi / 3, 0.7, 1.2])
def test_latitude_holonomy(phi):
    M, c = latitude(phi)
    Z = parallel_transport(M, c, np.array([1.0, 0.0]))
    ang = np.arctan2(Z[0, 0] * Z[-1, 1] - Z[0, 1] * Z[-1, 0], Z[0] @ Z[-1])
    want = 2 * np.pi * (1 - np.cos(phi))
    gap = min(abs((sg * ang - want + np.pi) % (2 * np.pi) - np.pi) for sg in (1, -1))
    assert gap < 1e-5
    assert abs(np.linalg.norm(Z[-1]) - 1.0) < 1e-10


def test_transport_preserves_inner_products():
    M = sphere(3)
    t = np.linspace(0.0, 1.0, 401)
    x = np.stack([0.3 * np.sin(t), 0.2 * t, 0.1 * np.cos(3 * t), np.ones_like(t)], axis=1)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    Z = parallel_transport(M, curve_from_samples(M, t, x), np.eye(3))
    assert np.abs(np.einsum("tji,tjk->tik", Z, Z) - np.eye(3)).max() < 1e-8


def test_geodesic_on_sphere_matches_great_circle():
    M = sphere(2)
    v = np.array([0.6, 0.8])
    g = geodesic(M, M.base_point, v, 1.3, 1e-3)
    E0 = np.asarray(M.frame(M.base_point))
    d = v @ E0
    want = np.cos(g.t)[:, None] * M.base_point + np.sin(g.t)[:, None] * d
    assert np.abs(g.x - want).max() < 1e-9
    assert geodesic_residual(M, g) < 1e-6


def test_geodesic_chart_exit_carries_partial_curve():
    M = sphere(2)
    with pytest.raises(ChartExitError) as info:
        geodesic(M, M.base_point, np.array([1.0, 0.0]), 2 * np.pi, 1e-3)
    err = info.value
    assert err.t < np.pi / 2 + 1e-2
    assert isinstance(err.partial, Curve) and err.partial.x.shape[0] > 100


def test_curve_from_callable_uses_exact_velocities():
    M, c = se3_example_curve(1.0, 201)
    c2 = curve_from_callable(M, lambda s: (c.x[0] if s == 0 else _se3_x(s), _se3_xdot(s)), c.t)
    assert np.abs(c2.u - [SQRT2, 0, 0, 0, 0, 1]).max() < 1e-12


def _se3_x(s):
    return np.array([np.cos(s), np.sin(s), 0, -np.sin(s), np.cos(s), 0, 0, 0, 1, 0, 0, s])


def _se3_xdot(s):
    return np.array([-np.sin(s), np.cos(s), 0, -np.cos(s), -np.sin(s), 0, 0, 0, 0, 0, 0, 1])


def test_se3_normal_frame_transport():
    # columns are the normal-parallel frame along the example curve
    M, c = se3_example_curve(1.0, 1001)
    W = normal_parallel_transport(M, c, np.eye(10))
    th = c.t[-1]
    co, si, h = np.cos(th), np.sin(th), th / 2
    R = np.zeros((10, 10))
    R[[0, 3, 4], 0] = [co, -si / SQRT2, si / SQRT2]
    R[[1, 2], 1] = [np.cos(h), np.sin(h)]
    R[[1, 2], 2] = [-np.sin(h), np.cos(h)]
    R[[0, 3, 4], 3] = [si / SQRT2, (co + 1) / 2, (1 - co) / 2]
    R[[0, 3, 4], 4] = [-si / SQRT2, (1 - co) / 2, (1 + co) / 2]
    R[5, 5] = 1.0
    R[6:, 6:] = np.eye(4)
    assert np.abs(W[-1] - R).max() < 1e-10


def test_normal_transport_along_spiral_rotates():
    M = spiral()
    t = np.linspace(0.0, 2.0, 401)
    c = Curve(t, t[:, None], np.ones((t.size, 1)))
    W = normal_parallel_transport(M, c, np.eye(2))
    a = t / SQRT2
    # z1' = z2 / sqrt2, z2' = -z1 / sqrt2
    want = np.stack([np.stack([np.cos(a), np.sin(a)], 1), np.stack([-np.sin(a), np.cos(a)], 1)], 1)
    assert np.abs(W - want).max() < 1e-10


def test_normal_transport_needs_ambient():
    c = Curve(np.linspace(0, 1, 5), np.zeros((5, 2)), np.zeros((5, 2)))
    with pytest.raises(DomainError):
        normal_parallel_transport(euclidean(2), c, np.eye(1))


def test_circle_normal_frame_is_parallel():
    M = circle(2)
    t = np.linspace(0.0, 2 * np.pi, 101)
    W = normal_parallel_transport(M, Curve(t, t[:, None], np.ones((101, 1))), np.eye(2))
    assert np.abs(W - np.eye(2)).max() < 1e-12


def test_structural_constants():
    M = sphere(2)
    x = M.require([0.3, 0.4, np.sqrt(0.75)])
    c1, c2 = structural_constants_2d(M, x)
    s1 = 0.16 + 0.75
    # [e2, e1] = x_0 / sqrt(s_0 s_1) e2
    assert abs(c1) < 1e-14 and abs(c2 + 0.3 / np.sqrt(s1)) < 1e-12
    with pytest.raises(DomainError):
        structural_constants_2d(sphere(3), sphere(3).base_point)
    with pytest.raises(DomainError):
        structural_constants_2d(se3(), se3().base_point)
