"""Lie brackets of vector fields and the flag D^1 c D^2 c ... of a distribution.

Two bracket back ends:

* ``lie_bracket_numeric``: central differences, works for any evaluator.
* exact brackets by forward-mode differentiation (jax), used by
  ``compute_flag`` when every generator is traceable.  Nested finite
  differences lose roughly one factor of the step per level, which is too
  coarse for rank decisions at depth 3 and beyond.
"""
from __future__ import annotations

import collections
import functools
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from rollkit.errors import FlagError
from rollkit.matrix_core import RANK_TOL, rank_of_span

FD_STEP = 1e-5
STEP_PAIR = (1e-4, 1e-5)
TOL_SWEEP = (1e-10, 1e-6)


@dataclass(frozen=True, eq=False)
class VectorFieldHandle:
    """A vector field on R^M given by ``evaluator(p) -> R^M``.

    ``traceable`` marks evaluators written against a generic array namespace;
    ``family``/``index`` let a set of fields share one batched evaluator that
    returns all of them as rows.
    """

    evaluator: Callable
    label: str
    traceable: bool = False
    family: Optional[Callable] = None
    index: Optional[int] = None

    def __call__(self, p):
        return self.evaluator(p)


@dataclass
class FlagReport:
    ranks: List[int]
    step: int
    config_dim: int
    orbit_dim: int
    controllable: bool
    provenance: List[List[str]]
    stabilized: bool = True
    rank_stable: bool = True
    method: str = "exact"
    nearby_ranks: Optional[List[int]] = None

    def to_json(self):
        return {
            "ranks": list(self.ranks),
            "step": self.step,
            "config_dim": self.config_dim,
            "orbit_dim": self.orbit_dim,
            "controllable": self.controllable,
            "provenance": self.provenance,
        }


# ----------------------------------------------------------- numeric brackets


def _dir_derivative(Y, p, v, delta):
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros_like(p)
    d = v / nv
    return nv * (np.asarray(Y(p + delta * d)) - np.asarray(Y(p - delta * d))) / (2.0 * delta)


def lie_bracket_numeric(X: VectorFieldHandle, Y: VectorFieldHandle, p, h: float = FD_STEP):
    """[X, Y](p) = DY.X - DX.Y by central differences with step h (1 + |p|)."""
    p = np.asarray(p, dtype=float)
    if h <= 0:
        raise FlagError("bracket step must be positive")
    delta = h * (1.0 + np.linalg.norm(p))
    Xp, Yp = np.asarray(X(p), float), np.asarray(Y(p), float)
    return _dir_derivative(Y, p, Xp, delta) - _dir_derivative(X, p, Yp, delta)


def bracket(X: VectorFieldHandle, Y: VectorFieldHandle, h: float = FD_STEP, exact: bool = True):
    """The field [X, Y] as a new handle."""
    label = f"[{X.label},{Y.label}]"
    if exact and X.traceable and Y.traceable:
        jax, jnp = _jax()

        def ev(p):
            p = jnp.asarray(p)
            return (jax.jvp(Y.evaluator, (p,), (X.evaluator(p),))[1]
                    - jax.jvp(X.evaluator, (p,), (Y.evaluator(p),))[1])

        return VectorFieldHandle(ev, label, traceable=True)
    return VectorFieldHandle(lambda p: lie_bracket_numeric(X, Y, p, h), label)


# ------------------------------------------------------------- exact levels


@functools.lru_cache(maxsize=None)
def _jax():
    import jax

    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp

    return jax, jnp


def _batched(generators):
    fam = generators[0].family
    if fam is not None and all(g.family is fam for g in generators) and \
            [g.index for g in generators] == list(range(len(generators))):
        return fam
    evs = [g.evaluator for g in generators]

    def stacked(p):
        _, jnp = _jax()
        return jnp.stack([jnp.asarray(e(p)) for e in evs])

    return stacked


def _next_level(gens, L):
    jax, jnp = _jax()

    def f(p):
        G = gens(p)
        V = L(p)
        t1 = jax.vmap(lambda v: jax.jvp(L, (p,), (v,))[1])(G)   # DL.g : (ng, nl, M)
        t2 = jax.vmap(lambda w: jax.jvp(gens, (p,), (w,))[1])(V)  # Dg.f : (nl, ng, M)
        return (t1 - jnp.swapaxes(t2, 0, 1)).reshape(-1, p.shape[0])

    return f


class _LevelCache:
    """Compiled level functions per generator family (bounded LRU)."""

    def __init__(self, size=16):
        self.size = size
        self.store = collections.OrderedDict()

    def entry(self, generators):
        key = tuple(g.evaluator for g in generators)
        if key not in self.store:
            self.store[key] = {"gens": _batched(generators), "raw": [], "jit": []}
            while len(self.store) > self.size:
                self.store.popitem(last=False)
        self.store.move_to_end(key)
        return self.store[key]


_CACHE = _LevelCache()
_XLA_OPTIONS = {"xla_backend_optimization_level": 0, "xla_llvm_disable_expensive_passes": True}


def _exact_level(generators, p, i):
    """Level i (0-based) of the flag at p, as rows."""
    jax, jnp = _jax()
    e = _CACHE.entry(generators)
    pj = jnp.asarray(p)
    while len(e["raw"]) <= i:
        prev = e["raw"][-1] if e["raw"] else None
        e["raw"].append(e["gens"] if prev is None else _next_level(e["gens"], prev))
        # the graphs are small and run once per point; optimizing them costs
        # more than it saves
        e["jit"].append(jax.jit(e["raw"][-1]).lower(pj).compile(compiler_options=_XLA_OPTIONS))
    return np.asarray(e["jit"][i](pj))


def _fd_levels(generators, p, depth, h):
    levels = [list(generators)]
    for _ in range(depth - 1):
        levels.append([bracket(g, f, h, exact=False) for g in generators for f in levels[-1]])
    return [np.array([np.asarray(f(p), float) for f in lev]) for lev in levels]


def _labels(generators, depth):
    base = [g.label for g in generators]
    levels = [base]
    for _ in range(depth - 1):
        levels.append([f"[{g},{f}]" for g in base for f in levels[-1]])
    return levels


def _basis_labels(levels, labels, tol):
    # per level, greedy pick (in label order) of the fields that enlarge the span
    rows, out = [], []
    for V, lab in zip(levels, labels):
        chosen = []
        for i in np.argsort(lab, kind="stable"):
            if rank_of_span(rows + [V[i]], tol) > len(rows):
                rows.append(V[i])
                chosen.append(lab[i])
        out.append(chosen)
    return out


def _ranks(levels, labels, tol):
    ranks = []
    acc = np.zeros((0, levels[0].shape[1]))
    for V, lab in zip(levels, labels):
        order = np.argsort(lab, kind="stable")
        acc = np.vstack([acc, V[order]])
        ranks.append(rank_of_span(acc, tol))
    return ranks


def _truncate(ranks, config_dim):
    # stop at full rank or at the first repeat
    for i, r in enumerate(ranks):
        if r == config_dim:
            return i + 1, True
        if i > 0 and r == ranks[i - 1]:
            return i + 1, True
    return len(ranks), False


def compute_flag(generators: Sequence[VectorFieldHandle], p, max_step: int = 6,
                 config_dim: Optional[int] = None, h: float = FD_STEP,
                 method: str = "auto", tol: float = RANK_TOL) -> FlagReport:
    """Ranks of D^1 c D^2 c ... with D^(i+1) = D + [D, D^i], evaluated at p."""
    generators = list(generators)
    if not generators:
        raise FlagError("need at least one generator")
    p = np.asarray(p, dtype=float)
    if config_dim is None:
        config_dim = p.shape[0]
    if method == "auto":
        method = "exact" if all(g.traceable for g in generators) else "fd"
    if method == "exact" and not all(g.traceable for g in generators):
        raise FlagError("exact brackets need traceable generators")

    levels, ranks = [], []
    while len(levels) < max_step:
        i = len(levels)
        if method == "exact":
            levels.append(_exact_level(generators, p, i))
        else:
            levels = _fd_levels(generators, p, i + 1, h)
        ranks = _ranks(levels, _labels(generators, i + 1), tol)
        if _truncate(ranks, config_dim)[1]:
            break
    used, stabilized = _truncate(ranks, config_dim)
    ranks = ranks[:used]
    levels, labels_all = levels[:used], _labels(generators, used)

    # the same levels must give the same ranks over the tolerance sweep
    # (exact) or over the two prescribed steps (finite differences)
    if method == "exact":
        stable = all(_ranks(levels, labels_all, t) == ranks for t in TOL_SWEEP)
    else:
        stable = all(_ranks(_fd_levels(generators, p, used, hh), labels_all, tol) == ranks
                     for hh in STEP_PAIR)

    final = ranks[-1]
    step = ranks.index(final) + 1
    prov = _basis_labels(levels, labels_all, tol)
    return FlagReport(
        ranks=ranks,
        step=step,
        config_dim=int(config_dim),
        orbit_dim=final,
        controllable=final == config_dim,
        provenance=prov,
        stabilized=stabilized,
        rank_stable=stable,
        method=method,
    )


def controllability_report(pair, q0=None, max_step: int = 6, h: float = FD_STEP,
                           tol: float = RANK_TOL, method: str = "auto", seed: int = 0) -> FlagReport:
    """Flag of the rolling distribution at q0, plus a rank check at a nearby point."""
    from rollkit.matrix_core import exp_skew
    from rollkit.rolling import ConfigPoint, config_dim, initial_point, rolling_fields

    if q0 is None:
        q0 = initial_point(pair)
    q0.validate(pair)
    fields = rolling_fields(pair)
    d = config_dim(pair)
    rep = compute_flag(fields, q0.vector(), max_step, d, h, method, tol)

    rng = np.random.default_rng(seed)
    eps = 1e-3
    x = pair.M.retraction(q0.x + eps * (rng.normal(size=pair.n) @ np.asarray(pair.M.frame(q0.x), float)))
    xh = pair.M_hat.retraction(q0.x_hat + eps * (rng.normal(size=pair.n)
                                                 @ np.asarray(pair.M_hat.frame(q0.x_hat), float)))
    S = rng.normal(size=(pair.n, pair.n))
    A = q0.A @ exp_skew(eps * (S - S.T))
    near = ConfigPoint(x, xh, A)
    rep2 = compute_flag(fields, near.vector(), max_step, d, h, method, tol)
    rep.nearby_ranks = rep2.ranks
    rep.rank_stable = rep.rank_stable and rep2.rank_stable and rep2.ranks == rep.ranks
    return rep
