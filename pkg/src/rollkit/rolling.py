"""Rolling configurations, distribution fields, integration and residuals.

Convention: A[i, k] = <q e_k, e^_i>, so q e_k = sum_i A[i, k] e^_i.
The same holds for B with the normal frames.  A state is packed into one
vector as (x, x_hat, A row-major[, B row-major]).
"""
from __future__ import annotations

import functools
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from rollkit import __version__
from rollkit._xp import namespace
from rollkit.connection import (
    RESOLUTION,
    Curve,
    christoffel,
    curve_from_samples,
    fd_derivative,
    normal_christoffel,
    normal_parallel_transport,
    parallel_transport,
    segments,
)
from rollkit.errors import ChartExitError, DomainError
from rollkit.flag import VectorFieldHandle
from rollkit.manifold import FramedChart
from rollkit.matrix_core import exp_skew, project_to_SO, rank_of_span, so_drift

SO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ManifoldPair:
    M: FramedChart
    M_hat: FramedChart

    def __post_init__(self):
        if self.M.n != self.M_hat.n:
            raise DomainError("rolling needs manifolds of equal dimension")

    @property
    def n(self):
        return self.M.n

    @property
    def nu(self):
        a, b = self.M.ambient, self.M_hat.ambient
        if a is None or b is None:
            return None
        if a.N != b.N:
            raise DomainError("ambient dimensions differ")
        return a.nu

    def sizes(self, extended=False):
        n = self.n
        s = [self.M.m, self.M_hat.m, n * n]
        if extended:
            s.append(self.require_nu() ** 2)
        return s

    def require_nu(self):
        nu = self.nu
        if nu is None:
            raise DomainError("extended configuration needs ambient data on both sides")
        return nu


@dataclass(frozen=True)
class ConfigPoint:
    x: np.ndarray
    x_hat: np.ndarray
    A: np.ndarray

    def vector(self):
        return np.concatenate([np.ravel(self.x), np.ravel(self.x_hat), np.ravel(self.A)])

    def validate(self, pair: ManifoldPair):
        pair.M.require(self.x)
        pair.M_hat.require(self.x_hat)
        _check_so(self.A, pair.n, "A")
        return self


@dataclass(frozen=True)
class ExtConfigPoint(ConfigPoint):
    B: np.ndarray = None

    def vector(self):
        return np.concatenate([super().vector(), np.ravel(self.B)])

    def validate(self, pair: ManifoldPair):
        super().validate(pair)
        _check_so(self.B, pair.require_nu(), "B")
        return self


def _check_so(R, n, name):
    R = np.asarray(R, dtype=float)
    if R.shape != (n, n):
        raise DomainError(f"{name} must be {n}x{n}")
    if n and (so_drift(R) > SO_TOL * max(1, n) or np.linalg.det(R) <= 0):
        raise DomainError(f"{name} is not in SO({n})")


def unpack(pair: ManifoldPair, p, extended=False):
    sizes = pair.sizes(extended)
    parts = []
    pos = 0
    for s in sizes:
        parts.append(p[pos:pos + s])
        pos += s
    n = pair.n
    x, xh, A = parts[0], parts[1], parts[2].reshape(n, n)
    if extended:
        nu = pair.require_nu()
        return x, xh, A, parts[3].reshape(nu, nu)
    return x, xh, A


def point_from_vector(pair, p, extended=False):
    parts = unpack(pair, np.asarray(p, dtype=float), extended)
    if extended:
        return ExtConfigPoint(*parts)
    return ConfigPoint(*parts)


def initial_point(pair: ManifoldPair, extended=False):
    x, xh = pair.M.base_point, pair.M_hat.base_point
    A = np.eye(pair.n)
    if extended:
        return ExtConfigPoint(x, xh, A, np.eye(pair.require_nu()))
    return ConfigPoint(x, xh, A)


def config_dim(pair: ManifoldPair, extended=False) -> int:
    n = pair.n
    d = n * (n + 3) // 2
    if extended:
        nu = pair.require_nu()
        d += nu * (nu - 1) // 2
    return d


# ------------------------------------------------------------ coefficients


def _omega_all(G, Gh, A):
    # Omega[k]_{ij} = G[k, j, i] - sum a_rk a_lj a_mi Gh[r, l, m]
    xp = namespace(G, Gh, A)
    H = xp.einsum("rk,rlm->klm", A, Gh)
    Om = xp.swapaxes(G, 1, 2) - xp.einsum("mi,klm,lj->kij", A, H, A)
    return 0.5 * (Om - xp.swapaxes(Om, 1, 2))


def _omega_perp_all(Gp, Gph, A, B):
    # Omega_perp[k]_{c l} = Gp[k, l, c] - sum a_rk b_ml b_sc Gph[r, m, s]
    xp = namespace(Gp, Gph, A, B)
    H = xp.einsum("rk,rms->kms", A, Gph)
    Om = xp.swapaxes(Gp, 1, 2) - xp.einsum("sc,kms,ml->kcl", B, H, B)
    return 0.5 * (Om - xp.swapaxes(Om, 1, 2))


def v_coefficients(pair: ManifoldPair, state: ConfigPoint, k: int) -> np.ndarray:
    """Omega^(k): Adot = A Omega^(k) for unit motion along e_k (k is 0-based)."""
    G = christoffel(pair.M, state.x)
    Gh = christoffel(pair.M_hat, state.x_hat)
    return _omega_all(G, Gh, np.asarray(state.A, float))[k]


def vperp_coefficients(pair: ManifoldPair, state: ExtConfigPoint, k: int) -> np.ndarray:
    """Omega_perp^(k): Bdot = B Omega_perp^(k) for unit motion along e_k."""
    nu = pair.require_nu()
    if nu <= 1:
        return np.zeros((nu, nu))
    Gp = normal_christoffel(pair.M, state.x)
    Gph = normal_christoffel(pair.M_hat, state.x_hat)
    return _omega_perp_all(Gp, Gph, np.asarray(state.A, float), np.asarray(state.B, float))[k]


def _gamma_fn(chart):
    if chart.christoffel_closed_form is not None:
        return chart.christoffel_closed_form
    return lambda x: christoffel(chart, x, check=False)


def field_matrix(pair: ManifoldPair, extended=False) -> Callable:
    """p -> (n, dim p) array whose row k is rolling field k at p."""
    M, Mh = pair.M, pair.M_hat
    gam, gamh = _gamma_fn(M), _gamma_fn(Mh)

    def fields(p):
        xp = namespace(p)
        parts = unpack(pair, p, extended)
        x, xh, A = parts[:3]
        E = M.frame(x)
        Eh = Mh.frame(xh)
        Om = _omega_all(gam(x), gamh(xh), A)
        cols = [E, A.T @ Eh, xp.einsum("ij,kjl->kil", A, Om).reshape(pair.n, -1)]
        if extended:
            B = parts[3]
            nu = B.shape[0]
            if nu > 1:
                Gp = normal_christoffel(M, np.asarray(x), check=False)
                Gph = normal_christoffel(Mh, np.asarray(xh), check=False)
                Op = _omega_perp_all(Gp, Gph, A, B)
                cols.append(xp.einsum("ij,kjl->kil", B, Op).reshape(pair.n, -1))
            else:
                cols.append(xp.zeros((pair.n, nu * nu)))
        return xp.concatenate([xp.asarray(c) for c in cols], axis=1)

    return fields


@functools.lru_cache(maxsize=64)
def rolling_fields(pair: ManifoldPair, extended: bool = False):
    """The n fields spanning the rolling distribution, X_1..X_n."""
    if extended:
        pair.require_nu()
    fm = field_matrix(pair, extended)
    traceable = (not extended and pair.M.traceable and pair.M_hat.traceable
                 and pair.M.christoffel_closed_form is not None
                 and pair.M_hat.christoffel_closed_form is not None)
    return tuple(
        VectorFieldHandle(
            evaluator=functools.partial(_row, fm, k),
            label=f"X{k + 1}",
            traceable=traceable,
            family=fm,
            index=k,
        )
        for k in range(pair.n)
    )


def _row(fm, k, p):
    return fm(p)[k]


# ------------------------------------------------------------- trajectories


@dataclass
class RollingTrajectory:
    t: np.ndarray
    u: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    A: np.ndarray
    B: Optional[np.ndarray] = None
    breaks: Sequence[int] = field(default_factory=tuple)

    @property
    def extended(self):
        return self.B is not None

    def state(self, i):
        if self.B is None:
            return ConfigPoint(self.x[i], self.x_hat[i], self.A[i])
        return ExtConfigPoint(self.x[i], self.x_hat[i], self.A[i], self.B[i])

    def __len__(self):
        return self.t.shape[0]

    def columns(self):
        n = self.u.shape[1]
        cols = ["t"] + [f"u{k + 1}" for k in range(n)]
        cols += [f"x{k + 1}" for k in range(self.x.shape[1])]
        cols += [f"xh{k + 1}" for k in range(self.x_hat.shape[1])]
        cols += [f"A{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        if self.B is not None:
            nu = self.B.shape[1]
            cols += [f"B{i + 1}_{j + 1}" for i in range(nu) for j in range(nu)]
        return cols

    def table(self):
        K = len(self)
        blocks = [self.t[:, None], self.u, self.x, self.x_hat, self.A.reshape(K, -1)]
        if self.B is not None:
            blocks.append(self.B.reshape(K, -1))
        return np.hstack(blocks)

    def write_csv(self, fh, error=None):
        fh.write(f"# rollkit {__version__}\n")
        if self.breaks:
            fh.write("# breaks: " + " ".join(str(int(b)) for b in self.breaks) + "\n")
        fh.write(",".join(self.columns()) + "\n")
        for row in self.table():
            fh.write(",".join(format_float(v) for v in row) + "\n")
        if error is not None:
            fh.write(f"# error: {error}\n")

    def to_csv(self, error=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf, error)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, pair: ManifoldPair):
        breaks = ()
        rows = []
        header = None
        for line in text.splitlines():
            if line.startswith("# breaks:"):
                breaks = tuple(int(b) for b in line.split(":", 1)[1].split())
            elif line.startswith("#") or not line.strip():
                continue
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
        if header is None or not rows:
            raise DomainError("empty trajectory CSV")
        data = np.array(rows)
        n, m, mh = pair.n, pair.M.m, pair.M_hat.m
        K = data.shape[0]
        pos = 0

        def take(w):
            nonlocal pos
            out = data[:, pos:pos + w]
            pos += w
            return out

        t = take(1)[:, 0]
        u, x, xh, A = take(n), take(m), take(mh), take(n * n).reshape(K, n, n)
        B = None
        rest = data.shape[1] - pos
        if rest:
            nu = int(round(np.sqrt(rest)))
            if nu * nu != rest:
                raise DomainError("trajectory CSV has a malformed B block")
            B = take(rest).reshape(K, nu, nu)
        return cls(t, u, x, xh, A, B, breaks)


def format_float(v):
    return format(float(v), ".17g")


# ----------------------------------------------------------------- controls


@dataclass(frozen=True)
class PiecewiseConstant:
    """values[i] applies on [knots[i], knots[i+1]); the last one to the end."""

    knots: Sequence[float]
    values: Sequence[Sequence[float]]

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or v.ndim != 2 or k.shape[0] != v.shape[0] or k.shape[0] == 0:
            raise DomainError("piecewise-constant control needs one value row per knot")
        if np.any(np.diff(k) <= 0):
            raise DomainError("control knots must be strictly increasing")

    def __call__(self, t):
        k = np.asarray(self.knots, dtype=float)
        i = int(np.clip(np.searchsorted(k, t, side="right") - 1, 0, len(k) - 1))
        return np.asarray(self.values[i], dtype=float)

    @classmethod
    def constant(cls, u):
        return cls([0.0], [list(np.asarray(u, dtype=float))])


def _time_grid(T, dt, knots=()):
    edges = [0.0] + sorted(float(k) for k in knots if 0.0 < k < T) + [float(T)]
    ts, breaks = [0.0], []
    for a, b in zip(edges[:-1], edges[1:]):
        steps = max(1, int(np.ceil((b - a) / dt - 1e-9)))
        if len(ts) > 1:
            breaks.append(len(ts) - 1)
        ts.extend(a + (b - a) * np.arange(1, steps + 1) / steps)
    return np.array(ts), tuple(breaks)


def _resolved(pair, x, xh, u, h):
    # frames degenerate at a chart boundary (gamma blows up) before the
    # domain test trips; a step that no longer resolves them counts as an exit
    g = max(np.max(np.abs(christoffel(pair.M, x, check=False)), initial=0.0),
            np.max(np.abs(christoffel(pair.M_hat, xh, check=False)), initial=0.0))
    return h * np.linalg.norm(u) * g <= RESOLUTION


def _dexpinv(Th, Om):
    # Theta_dot for A = A_n exp(Theta) with A_dot = A Om
    c1 = Th @ Om - Om @ Th
    return Om + 0.5 * c1 + (Th @ c1 - c1 @ Th) / 12.0


def integrate_rolling(pair: ManifoldPair, q0: ConfigPoint, control, T: float, dt: float = 1e-3,
                      method: str = "auto") -> RollingTrajectory:
    """Integrate a rolling driven by frame-coordinate controls u(t).

    ``method`` is "rk4" (classical RK4 on the packed state, then retraction)
    or "exp" (RK4 in exponential coordinates of the rotation blocks, exact
    when Omega is constant along a step).  "auto" picks "exp" for
    piecewise-constant controls.
    """
    extended = isinstance(q0, ExtConfigPoint)
    q0.validate(pair)
    if method == "auto":
        method = "exp" if isinstance(control, PiecewiseConstant) else "rk4"
    if method not in ("rk4", "exp"):
        raise DomainError(f"unknown integration method {method!r}")
    if not callable(control):
        raise DomainError("control must be callable")
    knots = control.knots if isinstance(control, PiecewiseConstant) else ()
    ts, breaks = _time_grid(T, dt, knots)
    fm = field_matrix(pair, extended)
    n = pair.n
    def u_at(t, i):
        if isinstance(control, PiecewiseConstant):
            # the value of the segment that contains step i
            return control(0.5 * (ts[i] + ts[min(i + 1, len(ts) - 1)]))
        return np.asarray(control(t), dtype=float)

    p = q0.vector().astype(float)
    states = [p]
    us = [np.asarray(control(ts[0]), dtype=float)]
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        ua, um, ub = u_at(ts[i], i), u_at(ts[i] + h / 2, i), u_at(ts[i + 1], i)
        if method == "rk4":
            p_new = _rk4_step(fm, p, h, ua, um, ub)
        else:
            p_new = _exp_step(pair, fm, p, h, ua, um, ub, extended)
        try:
            p = _retract(pair, p_new, extended)
        except Exception as exc:  # drift or domain
            raise ChartExitError(str(exc), partial=_assemble(pair, ts[:i + 1], us, states, breaks, extended),
                                 t=ts[i + 1]) from exc
        parts = unpack(pair, p, extended)
        if not (pair.M.domain_test(parts[0]) and pair.M_hat.domain_test(parts[1])
                and _resolved(pair, parts[0], parts[1], um, h)):
            raise ChartExitError(f"left the chart at t={ts[i + 1]:.6g}",
                                 partial=_assemble(pair, ts[:i + 1], us, states, breaks, extended), t=ts[i + 1])
        states.append(p)
        us.append(np.asarray(control(ts[i + 1]), dtype=float))
    return _assemble(pair, ts, us, states, breaks, extended)


def _assemble(pair, ts, us, states, breaks, extended):
    K = len(states)
    ts = np.asarray(ts[:K])
    parts = [unpack(pair, s, extended) for s in states]
    B = np.array([q[3] for q in parts]) if extended else None
    return RollingTrajectory(
        t=ts,
        u=np.array(us[:K]),
        x=np.array([q[0] for q in parts]),
        x_hat=np.array([q[1] for q in parts]),
        A=np.array([q[2] for q in parts]),
        B=B,
        breaks=tuple(b for b in breaks if b < K - 1),
    )


def _rk4_step(fm, p, h, ua, um, ub):
    k1 = ua @ fm(p)
    k2 = um @ fm(p + h / 2 * k1)
    k3 = um @ fm(p + h / 2 * k2)
    k4 = ub @ fm(p + h * k3)
    return p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _exp_step(pair, fm, p, h, ua, um, ub, extended):
    parts = unpack(pair, p, extended)
    x0, xh0, A0 = parts[:3]
    B0 = parts[3] if extended else None
    n = pair.n
    nu = B0.shape[0] if extended else 0
    lx, lxh = x0.size, xh0.size

    def rhs(y, u):
        x, xh = y[:lx], y[lx:lx + lxh]
        ThA = y[lx + lxh:lx + lxh + n * n].reshape(n, n)
        A = A0 @ exp_skew(ThA)
        blocks = [x, xh, A.ravel()]
        if extended:
            ThB = y[lx + lxh + n * n:].reshape(nu, nu)
            B = B0 @ exp_skew(ThB)
            blocks.append(B.ravel())
        d = u @ fm(np.concatenate(blocks))
        dx, dxh = d[:lx], d[lx:lx + lxh]
        OmA = A.T @ d[lx + lxh:lx + lxh + n * n].reshape(n, n)
        OmA = 0.5 * (OmA - OmA.T)
        out = [dx, dxh, _dexpinv(ThA, OmA).ravel()]
        if extended:
            OmB = B.T @ d[lx + lxh + n * n:].reshape(nu, nu)
            OmB = 0.5 * (OmB - OmB.T)
            out.append(_dexpinv(ThB, OmB).ravel())
        return np.concatenate(out)

    y0 = np.concatenate([x0, xh0, np.zeros(n * n), np.zeros(nu * nu)])
    k1 = rhs(y0, ua)
    k2 = rhs(y0 + h / 2 * k1, um)
    k3 = rhs(y0 + h / 2 * k2, um)
    k4 = rhs(y0 + h * k3, ub)
    y = y0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    ThA = y[lx + lxh:lx + lxh + n * n].reshape(n, n)
    blocks = [y[:lx], y[lx:lx + lxh], (A0 @ exp_skew(0.5 * (ThA - ThA.T))).ravel()]
    if extended:
        ThB = y[lx + lxh + n * n:].reshape(nu, nu)
        blocks.append((B0 @ exp_skew(0.5 * (ThB - ThB.T))).ravel())
    return np.concatenate(blocks)


def _retract(pair, p, extended):
    parts = unpack(pair, p, extended)
    out = [pair.M.retraction(parts[0]), pair.M_hat.retraction(parts[1]), project_to_SO(parts[2]).ravel()]
    if extended:
        B = parts[3]
        out.append(project_to_SO(B).ravel() if B.size else B.ravel())
    return np.concatenate(out)


# ---------------------------------------------------------------- residuals


def _frames(chart, xs):
    return np.stack([np.asarray(chart.frame(x), float) for x in xs])


def noslip_residual(pair: ManifoldPair, traj: RollingTrajectory) -> float:
    """max_t |xdot_hat - sum_k u_k sum_i a_ik e^_i| with finite-difference velocities."""
    xhd = fd_derivative(traj.t, traj.x_hat, traj.breaks)
    Eh = _frames(pair.M_hat, traj.x_hat)
    pred = np.einsum("tik,tk,tim->tm", traj.A, traj.u, Eh)
    return float(np.max(np.linalg.norm(xhd - pred, axis=1)))


def _hat_curve(pair, traj):
    return curve_from_samples(pair.M_hat, traj.t, traj.x_hat, traj.breaks)


def _base_curve(traj):
    return Curve(traj.t, traj.x, traj.u, traj.breaks)


def frame_coefficient_drift(pair: ManifoldPair, traj: RollingTrajectory, split: bool = False):
    """Deviation of q (and p) from constancy in parallel frames.

    Returns the max over both parts, or (tangential, normal) with ``split``;
    the normal part is None for intrinsic trajectories.
    """
    n = pair.n
    base, hat = _base_curve(traj), _hat_curve(pair, traj)
    Z = parallel_transport(pair.M, base, np.eye(n))
    Zh = parallel_transport(pair.M_hat, hat, np.eye(n))
    Ap = np.einsum("tji,tjk,tkl->til", Zh, traj.A, Z)
    tan = float(np.max(np.abs(Ap - Ap[0])))
    nor = None
    if traj.B is not None:
        nu = traj.B.shape[1]
        W = normal_parallel_transport(pair.M, base, np.eye(nu))
        Wh = normal_parallel_transport(pair.M_hat, hat, np.eye(nu))
        Bp = np.einsum("tji,tjk,tkl->til", Wh, traj.B, W)
        nor = float(np.max(np.abs(Bp - Bp[0]), initial=0.0))
    if split:
        return tan, nor
    return max(tan, nor or 0.0)


def horizontality_residual(pair: ManifoldPair, traj: RollingTrajectory):
    """Pointwise check of Adot = A Omega_u (and Bdot = B Omega_perp_u).

    Independent of transport; returns (tangential, normal or None).
    """
    Ad = fd_derivative(traj.t, traj.A.reshape(len(traj), -1), traj.breaks).reshape(traj.A.shape)
    tan, nor = 0.0, None
    Bd = None
    if traj.B is not None:
        Bd = fd_derivative(traj.t, traj.B.reshape(len(traj), -1), traj.breaks).reshape(traj.B.shape)
        nor = 0.0
    for i in range(len(traj)):
        G = christoffel(pair.M, traj.x[i], check=False)
        Gh = christoffel(pair.M_hat, traj.x_hat[i], check=False)
        Om = np.einsum("k,kij->ij", traj.u[i], _omega_all(G, Gh, traj.A[i]))
        tan = max(tan, float(np.max(np.abs(Ad[i] - traj.A[i] @ Om))))
        if Bd is not None and traj.B.shape[1] > 1:
            Gp = normal_christoffel(pair.M, traj.x[i], check=False)
            Gph = normal_christoffel(pair.M_hat, traj.x_hat[i], check=False)
            Op = np.einsum("k,kij->ij", traj.u[i], _omega_perp_all(Gp, Gph, traj.A[i], traj.B[i]))
            nor = max(nor, float(np.max(np.abs(Bd[i] - traj.B[i] @ Op))))
    return tan, nor


def verify_rolling_conditions(pair: ManifoldPair, traj: RollingTrajectory) -> dict:
    tan, nor = frame_coefficient_drift(pair, traj, split=True)
    nu = pair.nu
    if nu is not None and nu <= 1:
        nor = "vacuous"
    ok = all(np.linalg.det(a) > 0 and so_drift(a) <= 1e-9 for a in traj.A)
    if traj.B is not None and traj.B.shape[1] > 0:
        ok = ok and all(np.linalg.det(b) > 0 and so_drift(b) <= 1e-9 for b in traj.B)
    return {
        "noslip": noslip_residual(pair, traj),
        "notwist_tangential": tan,
        "notwist_normal": nor,
        "orientation": bool(ok),
    }


def residuals_ok(report: dict, tol: float = 1e-6) -> bool:
    nor = report["notwist_normal"]
    return (report["noslip"] <= tol and report["notwist_tangential"] <= tol
            and (not isinstance(nor, float) or nor <= tol) and report["orientation"])


# ------------------------------------------------------------ freedom, extension


def rolling_freedom(M_hat: FramedChart, curve: Curve, tol: float = 1e-8) -> int:
    """Dimension of the space of parallel fields along the curve that stay
    orthogonal to its velocity."""
    if curve.u is None:
        curve = curve_from_samples(M_hat, curve.t, curve.x, curve.breaks)
    Z = parallel_transport(M_hat, curve, np.eye(M_hat.n))
    rows = np.einsum("tji,tj->ti", Z, curve.u)
    norms = np.linalg.norm(rows, axis=1)
    if norms.max() == 0.0:
        return M_hat.n
    rows = rows[norms > 1e-12 * norms.max()]
    return M_hat.n - rank_of_span(rows, tol)


def extend_to_extrinsic(pair: ManifoldPair, traj: RollingTrajectory, B0) -> RollingTrajectory:
    """Extend an intrinsic rolling by the p(t) that is constant (= B0) in
    normal-parallel frames along x(t) and x_hat(t)."""
    nu = pair.require_nu()
    B0 = np.asarray(B0, dtype=float)
    _check_so(B0, nu, "B0")
    K = len(traj)
    if nu == 0:
        B = np.zeros((K, 0, 0))
    else:
        W = normal_parallel_transport(pair.M, _base_curve(traj), np.eye(nu))
        Wh = normal_parallel_transport(pair.M_hat, _hat_curve(pair, traj), np.eye(nu))
        B = np.stack([project_to_SO(Wh[i] @ B0 @ W[i].T) if nu > 1 else Wh[i] @ B0 @ W[i].T
                      for i in range(K)])
    return RollingTrajectory(traj.t, traj.u, traj.x, traj.x_hat, traj.A, B, traj.breaks)


def reconstruct_ambient_isometry(pair: ManifoldPair, state: ExtConfigPoint):
    """(Abar, rbar) with x_hat = Abar x + rbar in the common ambient space."""
    a, b = pair.M.ambient, pair.M_hat.ambient
    if a is None or b is None:
        raise DomainError("reconstruction needs ambient data on both sides")
    if a.N != b.N:
        raise DomainError("ambient dimensions differ")
    E = np.asarray(a.frame_ambient(state.x), float)
    Eh = np.asarray(b.frame_ambient(state.x_hat), float)
    Nf = np.asarray(a.normal_frame(state.x), float).reshape(-1, a.N)
    Nh = np.asarray(b.normal_frame(state.x_hat), float).reshape(-1, b.N)
    Abar = Eh.T @ np.asarray(state.A, float) @ E + Nh.T @ np.asarray(state.B, float).reshape(a.nu, a.nu) @ Nf
    rbar = np.asarray(b.embedding(state.x_hat), float) - Abar @ np.asarray(a.embedding(state.x), float)
    return Abar, rbar


def ambient_rolling_residuals(pair: ManifoldPair, traj: RollingTrajectory) -> dict:
    """Residuals of the ambient rolling conditions along g(t) = (Abar, rbar)."""
    if traj.B is None:
        raise DomainError("ambient residuals need an extended trajectory")
    a, b = pair.M.ambient, pair.M_hat.ambient
    K = len(traj)
    Ab = np.empty((K, a.N, a.N))
    rb = np.empty((K, a.N))
    for i in range(K):
        Ab[i], rb[i] = reconstruct_ambient_isometry(pair, traj.state(i))
    Abd = fd_derivative(traj.t, Ab.reshape(K, -1), traj.breaks).reshape(Ab.shape)
    rbd = fd_derivative(traj.t, rb, traj.breaks)
    out = {"isometry": 0.0, "orientation": True, "tangency": 0.0, "noslip": 0.0,
           "notwist_tangential": 0.0, "notwist_normal": 0.0}
    for i in range(K):
        x, xh = traj.x[i], traj.x_hat[i]
        E, Eh = np.asarray(a.frame_ambient(x), float), np.asarray(b.frame_ambient(xh), float)
        Nf = np.asarray(a.normal_frame(x), float).reshape(-1, a.N)
        Nh = np.asarray(b.normal_frame(xh), float).reshape(-1, b.N)
        out["isometry"] = max(out["isometry"], float(np.max(np.abs(Ab[i].T @ Ab[i] - np.eye(a.N)))))
        out["orientation"] = out["orientation"] and bool(np.linalg.det(Ab[i]) > 0)
        out["tangency"] = max(out["tangency"], float(np.max(np.abs(Nh @ Ab[i] @ E.T), initial=0.0)))
        out["noslip"] = max(out["noslip"], float(np.linalg.norm(Abd[i] @ a.embedding(x) + rbd[i])))
        out["notwist_tangential"] = max(out["notwist_tangential"], float(np.max(np.abs(Eh @ Abd[i] @ E.T))))
        out["notwist_normal"] = max(out["notwist_normal"], float(np.max(np.abs(Nh @ Abd[i] @ Nf.T), initial=0.0)))
    return out


Control = Union[Callable, PiecewiseConstant]
