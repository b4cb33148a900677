"""Christoffel tensors, parallel transport and geodesics in frame coefficients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from rollkit.errors import ChartExitError, DomainError
from rollkit.manifold import FramedChart, directional_derivative

SPEED_TOL = 1e-6
RESOLUTION = 0.1


def christoffel(M: FramedChart, x, check: bool = True) -> np.ndarray:
    """gamma[k, j, i] = <nabla_{e_k} e_j, e_i> at x."""
    if check:
        x = M.require(x)
    if M.christoffel_closed_form is not None:
        return np.asarray(M.christoffel_closed_form(np.asarray(x, float)), dtype=float)
    return christoffel_numeric(M, x, check=False)


def _fd_step(x):
    return np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x))


def _ambient_derivative(M, fields, x, h=None):
    # D[k] = derivative of fields(x) (rows) along e_k, as ambient vectors
    if M.ambient is None:
        raise DomainError(f"{M.name} has no ambient data")
    if h is None:
        h = _fd_step(x)
    if h < 1e-14:
        raise DomainError("finite-difference step underflow")
    f = lambda y: np.asarray(fields(y), dtype=float)
    return np.stack([directional_derivative(M, f, x, k, h) for k in range(M.n)])


def christoffel_numeric(M: FramedChart, x, h=None, check: bool = True) -> np.ndarray:
    """Christoffel tensor from the embedding: the ambient derivative of
    e_j along e_k, projected on e_i."""
    if check:
        x = M.require(x)
    D = _ambient_derivative(M, M.ambient.frame_ambient, x, h)
    F = np.asarray(M.ambient.frame_ambient(x), dtype=float)
    return np.einsum("kjN,iN->kji", D, F)


def normal_christoffel(M: FramedChart, x, h=None, check: bool = True) -> np.ndarray:
    """gamma_perp[k, l, c] = <ambient derivative of eps_l along e_k, eps_c>."""
    if check:
        x = M.require(x)
    if M.ambient is None:
        raise DomainError(f"{M.name} has no normal frame")
    if M.ambient.nu == 0:
        return np.zeros((M.n, 0, 0))
    if M.ambient.normal_christoffel is not None:
        return np.asarray(M.ambient.normal_christoffel(x), dtype=float)
    return normal_christoffel_numeric(M, x, h, check=False)


def normal_christoffel_numeric(M: FramedChart, x, h=None, check: bool = True) -> np.ndarray:
    if check:
        x = M.require(x)
    D = _ambient_derivative(M, M.ambient.normal_frame, x, h)
    Nf = np.asarray(M.ambient.normal_frame(x), dtype=float)
    return np.einsum("klN,cN->klc", D, Nf)


def structural_constants_2d(M: FramedChart, x):
    """(c1, c2) with [e1, e2] = c1 e1 + c2 e2."""
    if M.n != 2:
        raise DomainError("structural constants need n = 2")
    G = christoffel(M, x)
    c = G[0, 1, :] - G[1, 0, :]
    return float(c[0]), float(c[1])


# ------------------------------------------------------------------- curves


@dataclass
class Curve:
    """Sampled curve with frame coordinates u of its velocity.

    ``breaks`` lists node indices where the velocity may jump; finite
    differences and interpolation never straddle them.  ``path``, when set,
    maps t to (x, u) exactly and is preferred over interpolation.
    """

    t: np.ndarray
    x: np.ndarray
    u: Optional[np.ndarray] = None
    breaks: Sequence[int] = field(default_factory=tuple)
    path: Optional[Callable] = None


def segments(K: int, breaks=()):
    edges = sorted({0, K - 1, *[int(b) for b in breaks if 0 < b < K - 1]})
    return list(zip(edges[:-1], edges[1:]))


def fd_derivative(t, Y, breaks=(), width: int = 5):
    """Derivative of samples Y(t) from local degree-4 interpolants.

    Each node uses up to ``width`` neighbours inside its own smooth segment;
    a break node belongs to the segment it starts.
    """
    t = np.asarray(t, dtype=float)
    Y = np.asarray(Y, dtype=float)
    K = t.shape[0]
    if K < 2 or np.any(np.diff(t) <= 0):
        raise DomainError("degenerate time grid")
    out = np.empty_like(Y)
    segs = segments(K, breaks)
    for s, (a, b) in enumerate(segs):
        last = s == len(segs) - 1
        w = min(width, b + 1 - a)
        nodes = np.arange(a, b + 1 if last else b)
        lo = np.clip(nodes - w // 2, a, b + 1 - w)
        win = lo[:, None] + np.arange(w)
        hs = t[win[:, -1]] - t[win[:, 0]]
        tau = (t[win] - t[nodes][:, None]) / hs[:, None]
        V = tau[:, None, :] ** np.arange(w)[None, :, None]
        rhs = np.zeros((nodes.size, w, 1))
        rhs[:, 1] = 1.0
        coef = np.linalg.solve(V, rhs)[..., 0] / hs[:, None]
        out[nodes] = np.einsum("iw,iw...->i...", coef, Y[win])
    return out


def frame_velocity(M: FramedChart, x, xdot):
    # frame coordinates of a velocity (frames are orthonormal in R^m)
    return np.einsum("kim,km->ki", np.stack([np.asarray(M.frame(xi), float) for xi in x]), xdot)


def curve_from_samples(M: FramedChart, t, x, breaks=()) -> Curve:
    x = np.asarray(x, dtype=float)
    u = frame_velocity(M, x, fd_derivative(t, x, breaks))
    return Curve(np.asarray(t, float), x, u, tuple(breaks))


def curve_from_callable(M: FramedChart, path: Callable, t) -> Curve:
    """``path(t) -> (x, xdot)``."""
    t = np.asarray(t, dtype=float)

    def xu(s):
        x, xd = path(s)
        x = np.asarray(x, float)
        return x, np.asarray(M.frame(x), float) @ np.asarray(xd, float)

    pts = [xu(s) for s in t]
    return Curve(t, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), (), xu)


def _ensure_u(M, curve):
    if curve.u is None:
        return curve_from_samples(M, curve.t, curve.x, curve.breaks)
    return curve


# ---------------------------------------------------------------- transport


def _generator_fn(M, curve, tensor):
    # returns G(t) with zdot = -G(t) z, and a per-node check
    K = curve.t.shape[0]
    for xi in curve.x:
        if not M.domain_test(xi):
            raise ChartExitError(f"curve leaves the domain of {M.name}")
    if curve.path is not None:
        def G(s, seg=None):
            x, u = curve.path(s)
            return np.einsum("k,kji->ij", u, tensor(M, M.retraction(x)))
        return G
    T = [tensor(M, curve.x[i]) for i in range(K)]
    nodes = np.stack([np.einsum("k,kji->ij", curve.u[i], T[i]) for i in range(K)])
    splines = []
    segs = segments(K, curve.breaks)
    for s, (a, b) in enumerate(segs):
        seg_nodes = nodes[a:b + 1].copy()
        if s < len(segs) - 1:
            # u jumps at a break; the node closing this segment takes the
            # left limit, extrapolated from the segment itself
            if b - a >= 2:
                u_left = CubicSpline(curve.t[a:b], curve.u[a:b], axis=0)(curve.t[b])
            else:
                u_left = curve.u[a]
            seg_nodes[-1] = np.einsum("k,kji->ij", u_left, T[b])
        if b - a >= 2:
            splines.append(CubicSpline(curve.t[a:b + 1], seg_nodes, axis=0))
        else:
            splines.append(lambda s, a=a, b=b, v=seg_nodes: v[0] + (s - curve.t[a]) / (curve.t[b] - curve.t[a])
                           * (v[1] - v[0]))

    def G(s, seg):
        return splines[seg](s)

    return G


def _transport(M, curve, z0, tensor):
    curve = _ensure_u(M, curve)
    G = _generator_fn(M, curve, tensor)
    z0 = np.asarray(z0, dtype=float)
    t = curve.t
    out = np.empty((t.shape[0],) + z0.shape)
    out[0] = z0
    z = z0
    for seg, (a, b) in enumerate(segments(t.shape[0], curve.breaks)):
        for i in range(a, b):
            h = t[i + 1] - t[i]
            g0, gm, g1 = G(t[i], seg), G(t[i] + h / 2, seg), G(t[i + 1], seg)
            k1 = -g0 @ z
            k2 = -gm @ (z + h / 2 * k1)
            k3 = -gm @ (z + h / 2 * k2)
            k4 = -g1 @ (z + h * k3)
            z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            out[i + 1] = z
    return out


def _tangent_tensor(M, x):
    return christoffel(M, x, check=False)


def _normal_tensor(M, x):
    return normal_christoffel(M, x, check=False)


def parallel_transport(M: FramedChart, curve: Curve, v0) -> np.ndarray:
    """Frame coefficients z(t) of a parallel field along the curve.

    v0 may be a vector (n,) or a matrix (n, r) whose columns are transported
    together.  Returns an array with a leading time axis.
    """
    return _transport(M, curve, v0, _tangent_tensor)


def normal_parallel_transport(M: FramedChart, curve: Curve, w0) -> np.ndarray:
    """Normal-frame coefficients of a normal-parallel field along the curve."""
    if M.ambient is None:
        raise DomainError(f"{M.name} has no normal frame")
    if M.ambient.nu == 0:
        return np.zeros((curve.t.shape[0],) + np.shape(w0))
    return _transport(M, curve, w0, _normal_tensor)


# ---------------------------------------------------------------- geodesics


def geodesic(M: FramedChart, x0, v0, T: float, dt: float = 1e-3) -> Curve:
    """Integrate xdot = u.e, udot_i = -gamma[k, j, i] u_k u_j with RK4."""
    x = M.require(x0)
    u = np.asarray(v0, dtype=float)
    speed = np.linalg.norm(u)
    steps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / steps

    def rhs(x, u):
        E = np.asarray(M.frame(x), float)
        G = christoffel(M, x, check=False)
        return u @ E, -np.einsum("k,j,kji->i", u, u, G)

    ts, xs, us = [0.0], [x], [u]
    for i in range(steps):
        a1, b1 = rhs(x, u)
        a2, b2 = rhs(x + h / 2 * a1, u + h / 2 * b1)
        a3, b3 = rhs(x + h / 2 * a2, u + h / 2 * b2)
        a4, b4 = rhs(x + h * a3, u + h * b3)
        x = M.retraction(x + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4))
        u = u + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        # near the chart boundary the frame degenerates (gamma blows up)
        # before the domain test trips: stop once a step no longer resolves
        # it, or once the conserved speed drifts
        if (not M.domain_test(x) or abs(np.linalg.norm(u) - speed) > SPEED_TOL * (1.0 + speed)
                or h * speed * np.max(np.abs(christoffel(M, x, check=False)), initial=0.0) > RESOLUTION):
            raise ChartExitError(f"geodesic leaves the domain of {M.name}",
                                 partial=Curve(np.array(ts), np.array(xs), np.array(us)), t=(i + 1) * h)
        ts.append((i + 1) * h)
        xs.append(x)
        us.append(u)
    return Curve(np.array(ts), np.array(xs), np.array(us))


def geodesic_residual(M: FramedChart, curve: Curve) -> float:
    """max |udot + gamma(u, u)| along a sampled curve."""
    curve = _ensure_u(M, curve)
    ud = fd_derivative(curve.t, curve.u, curve.breaks)
    acc = np.stack([np.einsum("k,j,kji->i", curve.u[i], curve.u[i], christoffel(M, curve.x[i], check=False))
                    for i in range(curve.t.shape[0])])
    return float(np.max(np.linalg.norm(ud + acc, axis=1)))
