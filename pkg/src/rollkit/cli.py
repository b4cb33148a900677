"""rollkit command line.

Exit codes:
  0  success
  1  a check failed (verify table, or rolling residuals above 1e-6)
  2  malformed input (scenario, control, curve, flags)
  3  flag ranks are unstable under the step/tolerance sweep
  4  the integration left the chart (partial CSV written with an error marker)
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from rollkit import __version__
from rollkit.errors import ChartExitError, DomainError, RollkitError

EXIT_OK, EXIT_FAIL, EXIT_MALFORMED, EXIT_UNSTABLE, EXIT_CHART = 0, 1, 2, 3, 4


def _json(obj):
    return json.dumps(obj, indent=2, default=_plain)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _parse_spec(text):
    # inline JSON or a path to a JSON file
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"bad JSON: {exc}") from exc
    return text


# ------------------------------------------------------------------ commands


def cmd_analyze(args):
    from rollkit.flag import controllability_report
    from rollkit.scenarios import load_scenario, pair_from_scenario, point_from_scenario, seed

    sc = load_scenario(_parse_spec(args.scenario))
    if sc.get("extended"):
        sc = dict(sc, extended=False)
    pair = pair_from_scenario(sc)
    q0 = point_from_scenario(sc, pair)
    rep = controllability_report(pair, q0, max_step=args.max_step, h=args.fd_step, tol=args.rank_tol,
                                 method=args.method, seed=seed())
    print(_json(rep.to_json()))
    if not rep.rank_stable:
        print("rank-unstable: ranks change across the step/tolerance sweep or at a nearby point",
              file=sys.stderr)
        return EXIT_UNSTABLE
    if not rep.stabilized:
        print(f"flag did not stabilize within {args.max_step} levels", file=sys.stderr)
    return EXIT_OK


def _roll_report(pair, tr):
    from rollkit.rolling import residuals_ok, verify_rolling_conditions

    rep = verify_rolling_conditions(pair, tr)
    out = {"residuals": rep, "ok": residuals_ok(rep), "steps": len(tr) - 1, "T": float(tr.t[-1]),
           "final_x": tr.x[-1].tolist(), "final_x_hat": tr.x_hat[-1].tolist()}
    return out


def cmd_roll(args):
    from rollkit.rolling import integrate_rolling
    from rollkit.scenarios import control_from_spec, load_scenario, pair_from_scenario, point_from_scenario

    sc = load_scenario(_parse_spec(args.scenario))
    pair = pair_from_scenario(sc)
    q0 = point_from_scenario(sc, pair)
    control = control_from_spec(_parse_spec(args.control), pair.n)
    if not (args.T > 0 and args.dt > 0):
        raise DomainError("--T and --dt must be positive")
    try:
        tr = integrate_rolling(pair, q0, control, args.T, args.dt)
    except ChartExitError as exc:
        if exc.partial is not None:
            with open(args.out, "w") as fh:
                exc.partial.write_csv(fh, error=f"chart exit at t={exc.t:.17g}: {exc}")
        print(f"chart exit: {exc}", file=sys.stderr)
        return EXIT_CHART
    with open(args.out, "w") as fh:
        tr.write_csv(fh)
    rep = _roll_report(pair, tr)
    print(_json(rep))
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def _initial(text, n):
    if text in (None, "identity"):
        return np.eye(n)
    try:
        v = np.array([float(s) for s in text.split(",")])
    except ValueError as exc:
        raise DomainError(f"bad initial vector {text!r}") from exc
    return v


def cmd_transport(args):
    from rollkit.connection import normal_parallel_transport, parallel_transport
    from rollkit.manifold import chart_from_spec
    from rollkit.rolling import format_float
    from rollkit.scenarios import named_curve, read_curve_csv

    named = named_curve(args.curve)
    if named is not None:
        M, curve = named
    else:
        if args.manifold is None:
            raise DomainError("--manifold is required with a curve file")
        spec = _parse_spec(args.manifold)
        if not isinstance(spec, dict):
            try:
                with open(spec) as fh:
                    spec = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DomainError(f"cannot read manifold spec {spec!r}") from exc
        M = chart_from_spec(spec)
        try:
            with open(args.curve) as fh:
                curve = read_curve_csv(fh.read(), M)
        except OSError as exc:
            raise DomainError(f"cannot read curve {args.curve!r}") from exc
    if args.normal:
        if M.ambient is None:
            raise DomainError(f"{M.name} has no normal frame")
        dim = M.ambient.nu
    else:
        dim = M.n
    v0 = _initial(args.v0, dim)
    if v0.shape[0] != dim:
        raise DomainError(f"initial vector needs {dim} components")
    Z = (normal_parallel_transport if args.normal else parallel_transport)(M, curve, v0)
    K = Z.shape[0]
    flat = Z.reshape(K, -1)
    if v0.ndim == 1:
        cols = [f"z{i + 1}" for i in range(dim)]
    else:
        cols = [f"z{i + 1}_{j + 1}" for i in range(dim) for j in range(v0.shape[1])]
    lines = [f"# rollkit {__version__}", ",".join(["t"] + cols)]
    lines += [",".join(format_float(v) for v in [t, *row]) for t, row in zip(curve.t, flat)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    summary = {"steps": K - 1, "final": Z[-1].tolist()}
    closed = np.allclose(curve.x[0], curve.x[-1], atol=1e-9)
    if closed and dim == 2 and v0.ndim == 1:
        a, b = Z[0], Z[-1]
        summary["holonomy_angle"] = float(np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b))
    if args.out:
        print(_json(summary))
    return EXIT_OK


def cmd_verify(args):
    from rollkit import suite

    rows = suite.run(filter=args.filter, faults=tuple(args.inject_fault or ()))
    if not rows:
        raise DomainError(f"no suite row matches {args.filter!r}")
    print(f"# rollkit {__version__}")
    print(suite.format_table(rows))
    return EXIT_OK if all(r.ok for r in rows) else EXIT_FAIL


# ---------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="rollkit", description="Rolling of manifolds without slipping or twisting.")
    p.add_argument("--version", action="version", version=f"rollkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="flag ranks and controllability of a scenario")
    a.add_argument("--scenario", required=True, help="JSON file, inline JSON, or a built-in name")
    a.add_argument("--fd-step", type=float, default=1e-5, help="bracket step for finite differences")
    a.add_argument("--rank-tol", type=float, default=1e-8, help="relative singular value cutoff")
    a.add_argument("--max-step", type=int, default=6)
    a.add_argument("--method", choices=("auto", "exact", "fd"), default="auto")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("roll", help="integrate a rolling and check its residuals")
    r.add_argument("--scenario", required=True)
    r.add_argument("--control", required=True, help="JSON file, inline JSON, or a built-in name")
    r.add_argument("--T", type=float, default=1.0)
    r.add_argument("--dt", type=float, default=1e-3)
    r.add_argument("--out", required=True, help="trajectory CSV")
    r.set_defaults(func=cmd_roll)

    t = sub.add_parser("transport", help="parallel or normal-parallel transport along a curve")
    t.add_argument("--manifold", help="manifold spec (JSON file or inline JSON)")
    t.add_argument("--curve", required=True, help="curve CSV, latitude:PHI or se3_example")
    t.add_argument("--v0", help="comma-separated initial coefficients, or 'identity' (default)")
    t.add_argument("--normal", action="store_true", help="transport in the normal bundle")
    t.add_argument("--out", help="coefficient CSV (default stdout)")
    t.set_defaults(func=cmd_transport)

    v = sub.add_parser("verify", help="run the built-in suite")
    v.add_argument("--filter", help="only rows whose name contains this substring")
    v.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ChartExitError as exc:
        print(f"chart exit: {exc}", file=sys.stderr)
        return EXIT_CHART
    except (RollkitError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
