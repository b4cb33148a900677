"""Named scenarios, controls and curves, and their JSON forms.

A scenario is a dict::

    {"manifold": {...}, "hat_manifold": {...},
     "initial": {"x": [...], "x_hat": [...], "A": [[...]], "B": [[...]]},
     "extended": false}

Everything but the two manifolds is optional; the default initial point is
the pair of base points with identity isometries.
"""
from __future__ import annotations

import json
import os

import numpy as np

from rollkit.connection import Curve, curve_from_samples
from rollkit.errors import DomainError
from rollkit.manifold import chart_from_spec, sphere
from rollkit.rolling import ConfigPoint, ExtConfigPoint, ManifoldPair, PiecewiseConstant, initial_point

SQRT2 = np.sqrt(2.0)

NAMED = {
    "sphere_plane_2d": {"manifold": {"type": "sphere", "n": 2}, "hat_manifold": {"type": "euclidean", "n": 2}},
    "sphere_plane_n": {"manifold": {"type": "sphere", "n": 3}, "hat_manifold": {"type": "euclidean", "n": 3}},
    "se3_example": {"manifold": {"type": "se3"}, "hat_manifold": {"type": "se3_flat"}, "extended": True},
    "circle_line": {"manifold": {"type": "circle", "codim": 2}, "hat_manifold": {"type": "line", "codim": 2},
                    "extended": True},
    "circle_spiral": {"manifold": {"type": "circle", "codim": 2}, "hat_manifold": {"type": "spiral"},
                      "extended": True},
}

# u = (sqrt2 theta', 0, 0, 0, 0, psi') with theta = psi = t
NAMED_CONTROLS = {
    "se3_example": {"type": "piecewise_constant", "knots": [0.0], "values": [[SQRT2, 0, 0, 0, 0, 1]]},
}


def seed() -> int:
    try:
        return int(os.environ.get("ROLLKIT_SEED", "0"))
    except ValueError as exc:
        raise DomainError("ROLLKIT_SEED must be an integer") from exc


def _load(ref, named, what):
    if isinstance(ref, dict):
        return ref
    if ref in named:
        return named[ref]
    name, _, arg = str(ref).partition(":")
    if name == "sphere_plane_n" and arg:
        n = int(arg)
        return {"manifold": {"type": "sphere", "n": n}, "hat_manifold": {"type": "euclidean", "n": n}}
    try:
        with open(ref) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DomainError(f"unknown {what} {ref!r}") from exc
    except json.JSONDecodeError as exc:
        raise DomainError(f"{what} {ref!r} is not valid JSON: {exc}") from exc


def load_scenario(ref):
    """Scenario dict from a name ("sphere_plane_n:4" sets n), a path or a dict."""
    sc = _load(ref, NAMED, "scenario")
    if not isinstance(sc, dict) or "manifold" not in sc or "hat_manifold" not in sc:
        raise DomainError("scenario needs 'manifold' and 'hat_manifold'")
    return sc


def pair_from_scenario(sc) -> ManifoldPair:
    return ManifoldPair(chart_from_spec(sc["manifold"]), chart_from_spec(sc["hat_manifold"]))


def point_from_scenario(sc, pair: ManifoldPair):
    extended = bool(sc.get("extended", False))
    q = initial_point(pair, extended)
    init = sc.get("initial") or {}
    if not isinstance(init, dict):
        raise DomainError("'initial' must be an object")
    try:
        x = np.asarray(init.get("x", q.x), dtype=float)
        xh = np.asarray(init.get("x_hat", q.x_hat), dtype=float)
        A = np.asarray(init.get("A", q.A), dtype=float)
        if extended:
            B = np.asarray(init.get("B", q.B), dtype=float)
            return ExtConfigPoint(x, xh, A, B).validate(pair)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"malformed initial configuration: {exc}") from exc
    return ConfigPoint(x, xh, A).validate(pair)


def control_from_spec(ref, n: int):
    spec = _load(ref, NAMED_CONTROLS, "control")
    if not isinstance(spec, dict) or spec.get("type") != "piecewise_constant":
        raise DomainError("control must be a piecewise_constant spec")
    try:
        pc = PiecewiseConstant(list(spec["knots"]), [list(v) for v in spec["values"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed control: {exc}") from exc
    if np.asarray(pc.values).shape[1] != n:
        raise DomainError(f"control values need {n} components")
    return pc


# ----------------------------------------------------------------- curves


def latitude(phi: float, K: int = 2001):
    """Circle of colatitude phi on the unit 2-sphere, once around."""
    M = sphere(2)
    t = np.linspace(0.0, 2.0 * np.pi, K)
    x = np.stack([np.sin(phi) * np.cos(t), np.sin(phi) * np.sin(t), np.full_like(t, np.cos(phi))], axis=1)
    return M, curve_from_samples(M, t, x)


def se3_example_curve(T: float = 1.0, K: int = 1001):
    """x(t) = (C(t), (0, 0, t)) with C a rotation by t about the third axis."""
    from rollkit.manifold import se3

    M = se3()
    t = np.linspace(0.0, T, K)
    x = np.array([np.concatenate([[np.cos(s), np.sin(s), 0, -np.sin(s), np.cos(s), 0, 0, 0, 1], [0, 0, s]])
                  for s in t])
    u = np.tile([SQRT2, 0, 0, 0, 0, 1.0], (K, 1))
    return M, Curve(t, x, u)


def named_curve(ref):
    name, _, arg = str(ref).partition(":")
    if name == "latitude":
        try:
            return latitude(float(arg) if arg else np.pi / 3)
        except ValueError as exc:
            raise DomainError(f"bad latitude {arg!r}") from exc
    if name == "se3_example":
        return se3_example_curve()
    return None


def read_curve_csv(text: str, M):
    """Curve from CSV with columns t, x1..xm and optionally u1..un."""
    breaks, rows, header = (), [], None
    for line in text.splitlines():
        if line.startswith("# breaks:"):
            breaks = tuple(int(b) for b in line.split(":", 1)[1].split())
        elif line.startswith("#") or not line.strip():
            continue
        elif header is None:
            header = [h.strip() for h in line.split(",")]
        else:
            rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise DomainError("empty curve CSV")
    data = np.array(rows)
    xcols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    ucols = [i for i, h in enumerate(header) if h.startswith("u") and h[1:].isdigit()]
    if header[0] != "t" or len(xcols) != M.m:
        raise DomainError(f"curve CSV needs columns t, x1..x{M.m}")
    t, x = data[:, 0], data[:, xcols]
    if ucols:
        if len(ucols) != M.n:
            raise DomainError(f"curve CSV needs u1..u{M.n}")
        return Curve(t, x, data[:, ucols], breaks)
    return curve_from_samples(M, t, x, breaks)
