"""Framed charts: manifolds in representation coordinates.

A chart lives in R^m with a constraint set, an orthonormal frame e_1..e_n
(rows of ``frame(x)``), a retraction back onto the constraint set, and
optionally an isometric embedding into R^N with a normal frame.

The chart inner product is the Euclidean one on R^m; every built-in frame
is orthonormal for it.  Christoffel tensors are indexed gamma[k, j, i] =
<nabla_{e_k} e_j, e_i>.

Frame and Christoffel formulas of the built-ins are written against a
generic array namespace so they can be traced by jax for exact brackets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from rollkit._xp import namespace
from rollkit.errors import DomainError
from rollkit.matrix_core import project_to_SO, random_rotation

EPS_DOM = 1e-6
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Ambient:
    N: int
    embedding: Callable
    frame_ambient: Callable
    normal_frame: Callable
    nu: int
    # gamma_perp[k, l, c], when known in closed form
    normal_christoffel: Optional[Callable] = None


@dataclass(frozen=True, eq=False)
class FramedChart:
    name: str
    n: int
    m: int
    frame: Callable
    domain_test: Callable
    retraction: Callable
    base_point: np.ndarray
    ambient: Optional[Ambient] = None
    christoffel_closed_form: Optional[Callable] = None
    sampler: Optional[Callable] = None
    traceable: bool = False
    spec: dict = field(default_factory=dict)

    def require(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,) or not self.domain_test(x):
            raise DomainError(f"point outside the domain of {self.name}")
        return x

    def random_point(self, rng):
        if self.sampler is None:
            raise DomainError(f"{self.name} has no sampler")
        return self.sampler(rng)

    def with_ambient(self, ambient: Ambient):
        return _replace(self, ambient=ambient)


def _replace(chart, **kw):
    from dataclasses import replace

    return replace(chart, **kw)


# ---------------------------------------------------------------- euclidean


def euclidean(n: int, codim: int = 0) -> FramedChart:
    """R^n with the standard frame.

    With ``codim > 0`` the chart is embedded as R^n x {0} in R^(n+codim).
    """
    if n < 1:
        raise DomainError("dimension must be >= 1")

    def frame(x):
        return namespace(x).eye(n)

    def gamma(x):
        return namespace(x).zeros((n, n, n))

    ambient = None
    if codim > 0:
        N = n + codim
        tang = np.eye(N)[:n]
        norm = np.eye(N)[n:]
        ambient = Ambient(
            N=N,
            embedding=lambda x: np.concatenate([np.asarray(x, float), np.zeros(codim)]),
            frame_ambient=lambda x: tang,
            normal_frame=lambda x: norm,
            nu=codim,
            normal_christoffel=lambda x: np.zeros((n, codim, codim)),
        )
    return FramedChart(
        name=f"euclidean({n})",
        n=n,
        m=n,
        frame=frame,
        domain_test=lambda x: bool(np.all(np.isfinite(x))),
        retraction=lambda x: np.asarray(x, dtype=float),
        base_point=np.zeros(n),
        ambient=ambient,
        christoffel_closed_form=gamma,
        sampler=lambda rng: rng.normal(size=n),
        traceable=True,
        spec={"type": "euclidean", "n": n},
    )


# ------------------------------------------------------------------- sphere


def _tails(x):
    xp = namespace(x)
    # s[j] = sum_{r >= j} x_r^2
    return xp.cumsum((x * x)[::-1])[::-1]


def sphere_frame(x):
    xp = namespace(x)
    n = x.shape[0] - 1
    s = _tails(x)
    J = np.arange(1, n + 1)
    mask = (np.arange(n + 1)[None, :] >= J[:, None]).astype(float)
    delta = (np.arange(n + 1)[None, :] == (J - 1)[:, None]).astype(float)
    coef = x[J - 1] / s[J]
    rows = -delta + coef[:, None] * x[None, :] * mask
    return xp.sqrt(s[J] / s[J - 1])[:, None] * rows


def sphere_christoffel(x):
    xp = namespace(x)
    n = x.shape[0] - 1
    s = _tails(x)
    c = x[:n] / xp.sqrt(s[:n] * s[1:])
    eye = np.eye(n)
    low = np.tril(np.ones((n, n)), -1)  # low[k, j] = 1 iff j < k
    t1 = eye.T[:, None, :] * (low * c[None, :])[:, :, None]
    t2 = eye[:, :, None] * (low * c[None, :])[:, None, :]
    return t1 - t2


def sphere(n: int, pole_sign: int = 1) -> FramedChart:
    """Unit sphere S^n in R^(n+1) on the hemisphere pole_sign * x_n > 0."""
    if n < 1:
        raise DomainError("dimension must be >= 1")
    sgn = 1 if pole_sign in (1, "+", "+1") else -1
    if pole_sign not in (1, -1, "+", "-", "+1", "-1"):
        raise DomainError("pole_sign must be + or -")

    def domain(x):
        x = np.asarray(x, dtype=float)
        if x.shape != (n + 1,) or not np.all(np.isfinite(x)):
            return False
        return abs(np.linalg.norm(x) - 1.0) <= EPS_DOM and sgn * x[n] > 0 and x[n] ** 2 > 1e-12

    def sampler(rng):
        while True:
            v = rng.normal(size=n + 1)
            v /= np.linalg.norm(v)
            v[n] = sgn * abs(v[n])
            if abs(v[n]) > 0.1:
                return v

    pole = np.zeros(n + 1)
    pole[n] = sgn
    return FramedChart(
        name=f"sphere({n})",
        n=n,
        m=n + 1,
        frame=sphere_frame,
        domain_test=domain,
        retraction=lambda x: np.asarray(x, float) / np.linalg.norm(x),
        base_point=pole,
        ambient=Ambient(
            N=n + 1,
            embedding=lambda x: np.asarray(x, dtype=float),
            frame_ambient=sphere_frame,
            normal_frame=lambda x: (np.asarray(x, float) / np.linalg.norm(x))[None, :],
            nu=1,
        ),
        christoffel_closed_form=sphere_christoffel,
        sampler=sampler,
        traceable=True,
        spec={"type": "sphere", "n": n, "pole_sign": "+" if sgn > 0 else "-"},
    )


# ----------------------------------------------------------------- cylinder


def cylinder() -> FramedChart:
    """Flat unit cylinder x^2 + y^2 = 1 in R^3."""

    def frame(p):
        xp = namespace(p)
        z = xp.zeros_like(p[0])
        o = xp.ones_like(p[0])
        return xp.stack([xp.stack([-p[1], p[0], z]), xp.stack([z, z, o])])

    def domain(p):
        p = np.asarray(p, dtype=float)
        return p.shape == (3,) and abs(np.hypot(p[0], p[1]) - 1.0) <= EPS_DOM

    def retract(p):
        p = np.array(p, dtype=float)
        p[:2] /= np.hypot(p[0], p[1])
        return p

    def sampler(rng):
        a = rng.uniform(0, 2 * np.pi)
        return np.array([np.cos(a), np.sin(a), rng.normal()])

    return FramedChart(
        name="cylinder",
        n=2,
        m=3,
        frame=frame,
        domain_test=domain,
        retraction=retract,
        base_point=np.array([1.0, 0.0, 0.0]),
        ambient=Ambient(
            N=3,
            embedding=lambda p: np.asarray(p, dtype=float),
            frame_ambient=frame,
            normal_frame=lambda p: np.array([[p[0], p[1], 0.0]]) / np.hypot(p[0], p[1]),
            nu=1,
        ),
        christoffel_closed_form=lambda p: namespace(p).zeros((2, 2, 2)),
        sampler=sampler,
        traceable=True,
        spec={"type": "cylinder"},
    )


# ------------------------------------------------------------------- SE(3)


def _E(i, j, n):
    M = np.zeros((n, n))
    M[i - 1, j - 1] = 1.0
    return M


# skew generators of the Y fields and symmetric generators of the normals
_K = np.stack([(_E(1, 2, 3) - _E(2, 1, 3)) / SQRT2,
               (_E(1, 3, 3) - _E(3, 1, 3)) / SQRT2,
               (_E(2, 3, 3) - _E(3, 2, 3)) / SQRT2])
_S = np.stack([(_E(1, 2, 3) + _E(2, 1, 3)) / SQRT2,
               (_E(1, 3, 3) + _E(3, 1, 3)) / SQRT2,
               (_E(2, 3, 3) + _E(3, 2, 3)) / SQRT2])
_D = np.stack([_E(l, l, 3) for l in (1, 2, 3)])


def _se3_gamma():
    G = np.zeros((6, 6, 6))
    a, b = 1.0 / (2.0 * SQRT2), 1.0 / SQRT2

    def put(k, j, i, v):
        G[k - 1, j - 1, i - 1] = v
        G[k - 1, i - 1, j - 1] = -v

    # order: Y1 Y2 Y3 X1 X2 X3
    put(1, 2, 3, -a)
    put(1, 3, 2, a)
    put(2, 3, 1, -a)
    put(3, 1, 2, -a)
    put(1, 5, 4, b)
    put(2, 6, 4, b)
    put(3, 6, 5, b)
    return G


SE3_GAMMA = _se3_gamma()


def se3_frame(x):
    xp = namespace(x)
    C = x[:9].reshape(3, 3)
    Y = xp.einsum("ij,ajk->aik", C, _K).reshape(3, 9)
    X = C.T  # X_k = C e_k in the r block
    z = np.zeros((3, 3))
    top = xp.concatenate([Y, z], axis=1)
    bot = xp.concatenate([np.zeros((3, 9)), X], axis=1)
    return xp.concatenate([top, bot], axis=0)


def _block4(C3):
    xp = namespace(C3)
    top = xp.concatenate([C3, xp.zeros((C3.shape[0], 3, 1))], axis=2)
    return xp.concatenate([top, xp.zeros((C3.shape[0], 1, 4))], axis=1)


def _se3_embedding(x):
    x = np.asarray(x, dtype=float)
    M = np.eye(4)
    M[:3, :3] = x[:9].reshape(3, 3)
    M[:3, 3] = x[9:]
    return M.ravel()


def _se3_frame_ambient(x):
    C = np.asarray(x, float)[:9].reshape(3, 3)
    Y = _block4(np.einsum("ij,ajk->aik", C, _K))
    X = np.zeros((3, 4, 4))
    X[:, :3, 3] = C.T
    return np.concatenate([Y, X]).reshape(6, 16)


def _se3_normal_frame(x):
    C = np.asarray(x, float)[:9].reshape(3, 3)
    U = _block4(np.einsum("ij,ajk->aik", C, _S))
    P = _block4(np.einsum("ij,ajk->aik", C, _D))
    Xi = np.stack([_E(4, mu, 4) for mu in (1, 2, 3, 4)])
    return np.concatenate([U, P, Xi]).reshape(10, 16)


def _se3_normal_gamma():
    # the normal frame is linear in C and left-invariant: moving along Y_a
    # replaces C by C K_a, moving along X_k leaves it fixed
    G = np.zeros((6, 10, 10))
    F0 = _se3_normal_frame(np.concatenate([np.eye(3).ravel(), np.zeros(3)]))
    for a in range(3):
        D = _se3_normal_frame(np.concatenate([_K[a].ravel(), np.zeros(3)]))
        D[6:] = 0.0
        G[a] = D @ F0.T
    return G


_SE3_GAMMA_PERP = _se3_normal_gamma()


def se3() -> FramedChart:
    """SE(3) as (C, r), flattened to R^12, with the left-invariant metric
    that declares (Y1, Y2, Y3, X1, X2, X3) orthonormal."""

    def domain(x):
        x = np.asarray(x, dtype=float)
        if x.shape != (12,) or not np.all(np.isfinite(x)):
            return False
        C = x[:9].reshape(3, 3)
        return np.linalg.norm(C.T @ C - np.eye(3)) <= EPS_DOM and np.linalg.det(C) > 0

    def retract(x):
        x = np.array(x, dtype=float)
        x[:9] = project_to_SO(x[:9].reshape(3, 3)).ravel()
        return x

    def sampler(rng):
        return np.concatenate([random_rotation(3, rng).ravel(), rng.normal(size=3)])

    return FramedChart(
        name="se3",
        n=6,
        m=12,
        frame=se3_frame,
        domain_test=domain,
        retraction=retract,
        base_point=np.concatenate([np.eye(3).ravel(), np.zeros(3)]),
        ambient=Ambient(N=16, embedding=_se3_embedding, frame_ambient=_se3_frame_ambient,
                        normal_frame=_se3_normal_frame, nu=10,
                        normal_christoffel=lambda x: _SE3_GAMMA_PERP),
        christoffel_closed_form=lambda x: namespace(x).asarray(SE3_GAMMA),
        sampler=sampler,
        traceable=True,
        spec={"type": "se3"},
    )


_SE3_FLAT_FRAME = np.stack([
    (_E(1, 2, 4) - _E(2, 1, 4)) / SQRT2,
    (_E(1, 3, 4) - _E(3, 1, 4)) / SQRT2,
    (_E(2, 3, 4) - _E(3, 2, 4)) / SQRT2,
    _E(1, 4, 4), _E(2, 4, 4), _E(3, 4, 4),
]).reshape(6, 16)
_SE3_FLAT_NORMAL = np.stack([
    (_E(1, 2, 4) + _E(2, 1, 4)) / SQRT2,
    (_E(1, 3, 4) + _E(3, 1, 4)) / SQRT2,
    (_E(2, 3, 4) + _E(3, 2, 4)) / SQRT2,
    _E(1, 1, 4), _E(2, 2, 4), _E(3, 3, 4),
    _E(4, 1, 4), _E(4, 2, 4), _E(4, 3, 4), _E(4, 4, 4),
]).reshape(10, 16)


def se3_flat() -> FramedChart:
    """se(3) identified with R^6, embedded in R^16 as 4x4 matrices."""
    base = euclidean(6)
    ambient = Ambient(
        N=16,
        embedding=lambda xh: np.asarray(xh, dtype=float) @ _SE3_FLAT_FRAME,
        frame_ambient=lambda xh: _SE3_FLAT_FRAME,
        normal_frame=lambda xh: _SE3_FLAT_NORMAL,
        nu=10,
        normal_christoffel=lambda xh: np.zeros((6, 10, 10)),
    )
    return _replace(base, name="se3_flat", ambient=ambient, spec={"type": "se3_flat"})


# ------------------------------------------------- curves for the circle example


def circle(codim: int = 2) -> FramedChart:
    """Unit circle parametrized by angle phi, embedded as
    (sin phi, 1 - cos phi[, 0]) in R^(1+codim)."""
    if codim not in (1, 2):
        raise DomainError("circle supports codim 1 or 2")
    N = 1 + codim

    def emb(x):
        phi = float(np.asarray(x).reshape(-1)[0])
        return np.array([np.sin(phi), 1.0 - np.cos(phi), 0.0][:N])

    def tang(x):
        phi = float(np.asarray(x).reshape(-1)[0])
        return np.array([[np.cos(phi), np.sin(phi), 0.0][:N]])

    def normals(x):
        phi = float(np.asarray(x).reshape(-1)[0])
        rows = [[-np.sin(phi), np.cos(phi), 0.0][:N]]
        if codim == 2:
            rows.append([0.0, 0.0, 1.0])
        return np.array(rows)

    return FramedChart(
        name=f"circle(codim={codim})",
        n=1,
        m=1,
        frame=lambda x: namespace(x).ones((1, 1)),
        domain_test=lambda x: bool(np.all(np.isfinite(x))),
        retraction=lambda x: np.asarray(x, dtype=float),
        base_point=np.zeros(1),
        ambient=Ambient(N=N, embedding=emb, frame_ambient=tang, normal_frame=normals, nu=codim,
                        normal_christoffel=lambda x: np.zeros((1, codim, codim))),
        christoffel_closed_form=lambda x: namespace(x).zeros((1, 1, 1)),
        sampler=lambda rng: rng.uniform(-np.pi, np.pi, size=1),
        traceable=True,
        spec={"type": "circle", "codim": codim},
    )


def line(codim: int = 2) -> FramedChart:
    return _replace(euclidean(1, codim=codim), name=f"line(codim={codim})",
                    spec={"type": "line", "codim": codim})


# eps_1' = eps_2 / sqrt2 along the arc length
_SPIRAL_GAMMA_PERP = np.array([[[0.0, 1.0], [-1.0, 0.0]]]) / SQRT2


def spiral() -> FramedChart:
    """R parametrized by arc length along (cos s, sin s, s)/sqrt(2)."""

    def emb(x):
        s = float(np.asarray(x).reshape(-1)[0])
        return np.array([np.cos(s), np.sin(s), s]) / SQRT2

    def tang(x):
        s = float(np.asarray(x).reshape(-1)[0])
        return np.array([[-np.sin(s), np.cos(s), 1.0]]) / SQRT2

    def normals(x):
        s = float(np.asarray(x).reshape(-1)[0])
        return np.array([[-np.sin(s) / SQRT2, np.cos(s) / SQRT2, -1.0 / SQRT2],
                         [-np.cos(s), -np.sin(s), 0.0]])

    return _replace(euclidean(1), name="spiral",
                    ambient=Ambient(N=3, embedding=emb, frame_ambient=tang, normal_frame=normals, nu=2,
                                    normal_christoffel=lambda x: _SPIRAL_GAMMA_PERP),
                    spec={"type": "spiral"})


# ---------------------------------------------------------------- JSON specs

_BUILDERS = {
    "euclidean": lambda d: euclidean(int(d["n"]), int(d.get("codim", 0))),
    "sphere": lambda d: sphere(int(d["n"]), d.get("pole_sign", "+")),
    "se3": lambda d: se3(),
    "se3_flat": lambda d: se3_flat(),
    "cylinder": lambda d: cylinder(),
    "circle": lambda d: circle(int(d.get("codim", 2))),
    "line": lambda d: line(int(d.get("codim", 2))),
    "spiral": lambda d: spiral(),
}


def chart_from_spec(spec: dict) -> FramedChart:
    if not isinstance(spec, dict) or spec.get("type") not in _BUILDERS:
        raise DomainError(f"unknown manifold spec: {spec!r}")
    try:
        return _BUILDERS[spec["type"]](spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed manifold spec {spec!r}: {exc}") from exc


# ------------------------------------------------------------- diagnostics


def orthonormality_residual(M: FramedChart, x) -> float:
    """Largest deviation of the frame Gram matrix from the identity.

    Uses the ambient frames (tangent and normal together) when an ambient
    is attached, otherwise the chart frame.
    """
    x = M.require(x)
    if M.ambient is not None:
        F = np.vstack([np.asarray(M.ambient.frame_ambient(x), float),
                       np.asarray(M.ambient.normal_frame(x), float)])
    else:
        F = np.asarray(M.frame(x), float)
    return float(np.max(np.abs(F @ F.T - np.eye(F.shape[0]))))


def directional_derivative(M: FramedChart, f, x, k: int, h=None, richardson: bool = False):
    """Central difference of f along e_k, following the retracted curve.

    With ``richardson`` the steps h and h/2 are combined to cancel the
    second-order error term.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x))
    e = np.asarray(M.frame(x), float)[k]

    def central(s):
        return (np.asarray(f(M.retraction(x + s * e))) - np.asarray(f(M.retraction(x - s * e)))) / (2.0 * s)

    if not richardson:
        return central(h)
    return (4.0 * central(h / 2) - central(h)) / 3.0


def gaussian_curvature(M: FramedChart, x) -> float:
    """<R(e1, e2) e2, e1> from the Christoffel tensor and its derivatives."""
    from rollkit.connection import christoffel

    if M.n != 2:
        raise DomainError("gaussian curvature needs n = 2")
    x = M.require(x)
    G = christoffel(M, x)
    g = lambda y: christoffel(M, M.retraction(y), check=False)
    d1 = directional_derivative(M, g, x, 0)
    d2 = directional_derivative(M, g, x, 1)
    t1 = d1[1, 1, 0] + G[1, 1, :] @ G[0, :, 0]
    t2 = d2[0, 1, 0] + G[0, 1, :] @ G[1, :, 0]
    c = G[0, 1, :] - G[1, 0, :]
    t3 = c @ G[:, 1, 0]
    return float(t1 - t2 - t3)
