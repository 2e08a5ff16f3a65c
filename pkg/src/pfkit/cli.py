"""``pfkit`` command line.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Reports go to stdout (CSV by default, JSON with ``--json``); diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import report as rp
from .network import CaseError, load_case, powerflow_system, powerflow_variables

log = logging.getLogger("pfkit")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message: str, output: rp.Output | None = None):
        super().__init__(message)
        self.output = output


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _voltage_rows(net, vd, vq):
    rows = []
    for b, d, q in zip(net.buses, vd, vq):
        d, q = float(d) + 0.0, float(q) + 0.0
        rows.append((b.id, d, q, math.hypot(d, q), math.atan2(q, d) + 0.0))
    return rows


def _full_voltages(net, x):
    """Bus-ordered ``Vd, Vq`` from a power-flow solution over the non-slack buses."""
    m = len(net.non_slack)
    vd, vq = [0.0] * net.n, [0.0] * net.n
    vd[net.slack_index] = float(net.buses[net.slack_index].v_set)
    for j, k in enumerate(net.non_slack):
        vd[k], vq[k] = float(x[j]), float(x[m + j])
    return vd, vq


def _read_start(path: str, net) -> np.ndarray:
    """Start point from a ``solve`` report (CSV or JSON) or a plain CSV with bus,V_d,V_q."""
    text = Path(path).read_text()
    try:
        out = rp.parse(text)
        recs = out.table("voltages").records()
    except (ValueError, KeyError):
        import csv
        recs = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    try:
        by_bus = {int(r["bus"]): (float(r["V_d"]), float(r["V_q"])) for r in recs}
    except (KeyError, ValueError) as exc:
        raise UsageError(f"cannot read start point from {path}: {exc}") from None
    x = []
    for part in (0, 1):
        for k in net.non_slack:
            bid = net.buses[k].id
            if bid not in by_bus:
                raise UsageError(f"start file has no row for bus {bid}")
            x.append(by_bus[bid][part])
    return np.array(x)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> rp.Output:
    net = load_case(args.case)
    kinds = [b.kind for b in net.buses]
    rows = [("valid", True), ("n_buses", net.n), ("n_lines", len(net.lines)),
            ("slack", net.buses[net.slack_index].id), ("n_pv", kinds.count("pv")),
            ("n_pq", kinds.count("pq")),
            ("opf_limits", all(getattr(b, f) is not None for b in net.buses
                               for f in ("pmin", "pmax", "qmin", "qmax", "vmin", "vmax")))]
    return rp.Output("validate", args.seed, [rp.Table("summary", rp.KV, rows)])


def cmd_solve(args) -> rp.Output:
    from .network import flat_start
    from .newton import Diverged, NewtonOptions, SingularJacobian, newton_solve
    net = load_case(args.case)
    start = flat_start(net) if args.start == "flat" else _read_start(args.start, net)
    try:
        opts = NewtonOptions(max_iter=args.max_iter, tol=args.tol, damping=args.damping)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        res = newton_solve(powerflow_system(net), start, opts)
    except (Diverged, SingularJacobian) as exc:
        raise NumericalFailure(str(exc)) from None
    vd, vq = _full_voltages(net, res.solution)
    summary = [("iterations", res.iterations), ("residual", res.residual)]
    return rp.Output("solve", args.seed, [rp.Table("summary", rp.KV, summary),
                                          rp.Table("voltages", rp.VOLTAGES,
                                                   _voltage_rows(net, vd, vq))])


def _g10(v: float) -> str:
    return format(round(v, 10) + 0.0, ".10g")


def cmd_solve_all(args) -> rp.Output:
    from .homotopy import solve_all
    from .newton import NewtonOptions, newton_solve
    net = load_case(args.case)
    system = powerflow_system(net)
    names = powerflow_variables(net)
    sols = solve_all(system, seed=args.seed, n_buses=net.n, threads=args.threads)
    d = sols.diagnostics
    summary = [("paths_tracked", d["paths_tracked"]), ("cbb", sols.bounds["cbb"]),
               ("binomial", sols.bounds["binomial"]), ("n_found", d["n_found"]),
               ("n_real", d["n_real"]), ("converged", d["converged"]),
               ("diverged", d["diverged"]), ("tracking_failed", d["tracking_failed"]),
               ("duplicate_arrivals", d["duplicate_arrivals"]), ("retracked", d["retracked"])]
    cols = ("id", "real", "singular", "residual", "arrivals") + tuple(
        f"{part}({v})" for v in names for part in ("Re", "Im"))
    rows = []
    for k, s in enumerate(sols.solutions, start=1):
        coords = [_g10(float(c)) for z in s.x for c in (z.real, z.imag)]
        rows.append((k, s.is_real, s.singular, format(s.residual, ".3e"), s.arrivals, *coords))
    # real solutions refined by Newton so that reports agree across seeds
    comp = system.compile()
    real_rows = []
    for s in sols.solutions:
        if not s.is_real:
            continue
        x = s.x.real
        try:
            x = newton_solve(comp, x, NewtonOptions(max_iter=10, tol=1e-13)).solution
        except Exception:  # keep the tracked endpoint if refinement stalls at this tolerance
            pass
        real_rows.append(tuple(_g10(float(v)) for v in x))
    real_rows.sort(key=lambda r: tuple(float(v) for v in r))
    tables = [rp.Table("summary", rp.KV, summary), rp.Table("solutions", cols, rows),
              rp.Table("real_solutions", ("id",) + names,
                       [(k, *r) for k, r in enumerate(real_rows, start=1)])]
    out = rp.Output("solve-all", args.seed, tables)
    if d["tracking_failed"]:
        raise NumericalFailure(f"{d['tracking_failed']} paths failed to track", out)
    return out


def cmd_bounds(args) -> rp.Output:
    from .homotopy import binomial_bound, cbb
    net = load_case(args.case)
    rows = [("cbb", cbb(powerflow_system(net))), ("binomial", binomial_bound(net.n))]
    return rp.Output("bounds", args.seed, [rp.Table("bounds", rp.KV, rows)])


def cmd_groebner(args) -> rp.Output:
    from .groebner import BudgetExceeded, Ideal, buchberger, eliminate
    from .poly import Lex, parse
    order = [v.strip() for v in args.order.split(",") if v.strip()]
    if len(set(order)) != len(order) or not order:
        raise UsageError("--order must list distinct variable names")
    polys = []
    for lineno, line in enumerate(Path(args.system).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            polys.append(parse(line, order))
        except ValueError as exc:
            raise UsageError(f"{args.system}:{lineno}: {exc}") from None
    if not polys:
        raise UsageError(f"{args.system} contains no polynomials")
    lex = Lex(*order)
    try:
        ideal = Ideal(polys, lex)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    try:
        gb = buchberger(ideal, max_pairs=args.max_pairs)
    except BudgetExceeded as exc:
        raise NumericalFailure(str(exc)) from None
    basis = list(gb.basis)
    if args.eliminate is not None:
        if not 0 < args.eliminate <= len(order):
            raise UsageError("--eliminate must be between 1 and the number of variables")
        basis = eliminate(gb, args.eliminate)
    summary = [("generators", len(basis)), ("pairs_processed", gb.pairs_processed),
               ("unit_ideal", gb.is_unit())]
    rows = [(k, p.format(lex)) for k, p in enumerate(basis, start=1)]
    return rp.Output("groebner", args.seed, [rp.Table("summary", rp.KV, summary),
                                             rp.Table("basis", ("index", "polynomial"), rows)])


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers") from None
    if not vals:
        raise UsageError(f"{what} is empty")
    return vals


def cmd_loadability(args) -> rp.Output:
    # with s = P_L - Q_L, t = P_L + Q_L the boundary reads s^2 + 4 V^2 t - 4 V^4 = 0
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    rows = []
    for V in _floats(args.vset, "--vset"):
        if V <= 0:
            raise UsageError("--vset values must be positive")
        v2 = V * V
        for s in np.linspace(-2 * v2, 2 * v2, args.points):
            t = v2 - s * s / (4 * v2)
            rows.append((V, (t + s) / 2, (t - s) / 2))
    return rp.Output("loadability", args.seed,
                     [rp.Table("boundary", ("V", "P_L", "Q_L"), rows)])


def cmd_load_equivalent(args) -> rp.Output:
    from .groebner import buchberger, triangular_solve, two_bus_equivalencing
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    try:
        r, x = Fraction(args.r), Fraction(args.x)
    except ValueError:
        raise UsageError("--r and --x must be numbers") from None
    if r < 0 or (r == 0 and x == 0):
        raise UsageError("line impedance must have r >= 0 and be nonzero")
    gb = buchberger(two_bus_equivalencing(r, x))
    rows = []
    for V in np.linspace(args.vmin, args.vmax, args.points):
        res = triangular_solve(gb, {"V": float(V), "P_L": args.pl, "Q_L": args.ql})
        ring = list(res.variables)
        pts = {(round(s[ring.index("P")], 12), round(s[ring.index("Q")], 12))
               for s in res.real_solutions()}
        for P, Q in sorted(pts):
            rows.append((float(V), P + 0.0, Q + 0.0))
    return rp.Output("load-equivalent", args.seed, [rp.Table("curve", ("V", "P", "Q"), rows)])


def cmd_moment(args) -> rp.Output:
    from .moment import (build_mixed_sdpsocp, build_msos_c, build_msos_r,
                         check_exactness_and_extract)
    from .sdp import OverSize, SdpOptions, Status, solve
    from .sdpa import write_sdpa
    net = load_case(args.case)
    if args.gamma < 1:
        raise UsageError("--gamma must be at least 1")
    if args.complex and args.mixed:
        raise UsageError("--complex and --mixed cannot be combined")
    try:
        if args.complex:
            prob, mode = build_msos_c(net, args.gamma, max_size=args.max_size), "complex"
        elif args.mixed:
            prob, mode = build_mixed_sdpsocp(net, args.gamma, max_size=args.max_size), "mixed"
        else:
            prob, mode = build_msos_r(net, args.gamma, max_size=args.max_size), "real"
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    summary = [("mode", mode), ("gamma", args.gamma), ("lifted_variables", prob.nvars),
               ("moment_block", prob.blocks[0].size), ("blocks", len(prob.blocks)),
               ("total_dimension", prob.total_dimension)]
    tables = [rp.Table("summary", rp.KV, summary)]
    if args.export:
        write_sdpa(prob, args.export)
        summary.append(("export", str(args.export)))
        return rp.Output("moment", args.seed, tables)
    try:
        sol = solve(prob, SdpOptions(max_iter=args.max_iter))
    except OverSize as exc:
        raise NumericalFailure(str(exc)) from None
    rep = check_exactness_and_extract(sol, prob)
    summary += [("status", sol.status), ("message", sol.message),
                ("bound", sol.primal_objective), ("dual_bound", sol.dual_objective),
                ("iterations", sol.iterations), ("rank_estimate", rep.rank_estimate),
                ("eigenvalue_ratio", rep.eigenvalue_ratio), ("exact", rep.exact),
                ("certified", rep.certified)]
    if rep.exact:
        summary += [("max_violation", rep.max_violation),
                    ("objective_at_point", rep.objective_at_point)]
        V = rep.extracted_voltages
        tables.append(rp.Table("voltages", rp.VOLTAGES, _voltage_rows(net, V.real, V.imag)))
    out = rp.Output("moment", args.seed, tables)
    if sol.status != Status.OPTIMAL:
        raise NumericalFailure(f"SDP solve ended with {sol.status}: {sol.message}", out)
    return out


def cmd_sdp_solve(args) -> rp.Output:
    from .sdp import OverSize, SdpOptions, Status, solve
    from .sdpa import read_sdpa
    try:
        prob = read_sdpa(args.file)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {args.file}: {exc}") from None
    try:
        sol = solve(prob, SdpOptions(max_iter=args.max_iter))
    except OverSize as exc:
        raise NumericalFailure(str(exc)) from None
    summary = [("status", sol.status), ("message", sol.message),
               ("primal_objective", sol.primal_objective),
               ("dual_objective", sol.dual_objective), ("iterations", sol.iterations)]
    rows = [(k, float(v) + 0.0) for k, v in enumerate(sol.y[1:], start=1)]
    out = rp.Output("sdp-solve", args.seed, [rp.Table("summary", rp.KV, summary),
                                             rp.Table("solution", ("index", "value"), rows)])
    if sol.status != Status.OPTIMAL:
        raise NumericalFailure(f"SDP solve ended with {sol.status}: {sol.message}", out)
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _seed_default() -> int:
    env = os.environ.get("PFKIT_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PFKIT_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $PFKIT_SEED or 0)")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv")
    common.add_argument("--output", metavar="FILE", help="also write the report to FILE")
    common.add_argument("-v", "--verbose", action="count", default=0)

    plots = argparse.ArgumentParser(add_help=False)
    plots.add_argument("--plot", metavar="FILE", help="render a figure of the report to FILE")
    plots.add_argument("--emit-plot-script", metavar="FILE",
                       help="write a standalone plotting script for the CSV report")

    p = _Parser(prog="pfkit", description="Polynomial tools for power-flow analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", parents=[common], help="check a case file")
    s.add_argument("case")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", parents=[common, plots], help="Newton-Raphson power flow")
    s.add_argument("case")
    s.add_argument("--start", default="flat", help="'flat' or a voltages CSV/JSON report")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--damping", type=float, default=1.0)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("solve-all", parents=[common, plots],
                       help="all power-flow solutions by homotopy continuation")
    s.add_argument("case")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_solve_all)

    s = sub.add_parser("bounds", parents=[common], help="solution-count bounds")
    s.add_argument("case")
    s.set_defaults(func=cmd_bounds, default_format="json")

    s = sub.add_parser("groebner", parents=[common], help="lex Groebner basis of a system file")
    s.add_argument("system", help="one polynomial per line; '#' starts a comment")
    s.add_argument("--order", required=True, help="variables, highest precedence first")
    s.add_argument("--eliminate", type=int, help="keep only generators in the last K variables")
    s.add_argument("--max-pairs", type=int, default=10**6)
    s.set_defaults(func=cmd_groebner)

    s = sub.add_parser("loadability", parents=[common, plots],
                       help="sample the two-bus loadability boundary")
    s.add_argument("--vset", default="1.0", help="comma-separated source voltages")
    s.add_argument("--points", type=int, default=41)
    s.set_defaults(func=cmd_loadability)

    s = sub.add_parser("load-equivalent", parents=[common, plots],
                       help="two-bus equivalent (V, P) curve for a fixed load")
    s.add_argument("--pl", type=float, required=True)
    s.add_argument("--ql", type=float, required=True)
    s.add_argument("--r", default="1/4")
    s.add_argument("--x", default="1/4")
    s.add_argument("--vmin", type=float, default=0.5)
    s.add_argument("--vmax", type=float, default=1.5)
    s.add_argument("--points", type=int, default=51)
    s.set_defaults(func=cmd_load_equivalent)

    s = sub.add_parser("moment", parents=[common, plots], help="moment relaxation of the OPF")
    s.add_argument("case")
    s.add_argument("--gamma", type=int, required=True)
    kind = s.add_mutually_exclusive_group()
    kind.add_argument("--complex", action="store_true")
    kind.add_argument("--mixed", action="store_true")
    act = s.add_mutually_exclusive_group()
    act.add_argument("--export", metavar="FILE", help="write SDPA sparse data instead of solving")
    act.add_argument("--solve", action="store_true", help="solve with the embedded solver (default)")
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--max-size", type=int, default=5000)
    s.set_defaults(func=cmd_moment)

    s = sub.add_parser("sdp-solve", parents=[common], help="solve an SDPA sparse file")
    s.add_argument("file")
    s.add_argument("--max-iter", type=int, default=200)
    s.set_defaults(func=cmd_sdp_solve)
    return p


def _emit(out: rp.Output, args) -> None:
    fmt_ = args.format or getattr(args, "default_format", "csv")
    text = rp.render_json(out) if fmt_ == "json" else rp.render_csv(out)
    sys.stdout.write(text)
    sys.stdout.flush()
    if args.output:
        Path(args.output).write_text(text)
    if getattr(args, "plot", None):
        from .plotting import render
        render(out, args.plot)
        log.info("figure written to %s", args.plot)
    if getattr(args, "emit_plot_script", None):
        from .plotting import plot_script
        script = Path(args.emit_plot_script)
        script.write_text(plot_script(out.command, args.output or "report.csv", script.name))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    try:
        if args.seed is None:
            args.seed = _seed_default()
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        out = args.func(args)
    except UsageError as exc:
        print(f"pfkit: error: {exc}", file=sys.stderr)
        return 1
    except CaseError as exc:
        print(f"pfkit: invalid case: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"pfkit: error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        if exc.output is not None:
            _emit(exc.output, args)
        print(f"pfkit: numerical failure: {exc}", file=sys.stderr)
        return 2
    _emit(out, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
