"""Command-line front end.

Subcommands: solve (equilibrium + verification report), dynamics (iterate a
rule and export the trace), dualize (write the mirrored instance), verify
(re-check an equilibrium file). JSON goes to stdout or --out; human-readable
status lines go to stderr. Exit codes: 0 certified/ok, 2 schema error,
3 incompatible method or rule, 4 uncertified result.
"""

import argparse
import json
import sys

import numpy as np

from . import chores, dynamics, market, oracle, programs, utilities


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(2, "cannot read %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise CliError(2, "%s: invalid JSON: %s" % (path, exc))


def _load_instance(path):
    obj = _read_json(path)
    try:
        return market.instance_from_dict(obj)
    except ValueError as exc:
        raise CliError(2, "%s: %s" % (path, exc))


def _emit(payload, out):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _finite_or_none(value):
    value = float(value)
    return value if np.isfinite(value) else None


def _compatible(check, inst):
    try:
        check(inst, "probe")
    except ValueError:
        return False
    return True


def _goods_rule(inst, market_kind):
    prefix = "prd-fisher-" if market_kind == market.FISHER else "prd-lindahl-"
    if _compatible(dynamics._require_complements, inst):
        return prefix + "tc"
    if _compatible(dynamics._require_differentiable, inst):
        return prefix + "gs"
    raise CliError(3, "no production rule covers these utility families")


def _mirror_ready(inst):
    try:
        rhos = programs.spending_rhos(inst)
    except utilities.UnsupportedFamily:
        return False
    finite = rhos[np.isfinite(rhos)]
    return not (np.any(finite > 0) and np.any(rhos < 0))


def _spending_equilibrium(inst, state):
    if inst.market == market.FISHER:
        p = state.sum(axis=0)
        x = np.divide(state, p, out=np.zeros_like(state), where=p > 0)
        return market.FisherEquilibrium(x, p)
    x = state.sum(axis=0)
    prices = np.divide(state, x, out=np.zeros_like(state), where=x > 0)
    return market.LindahlEquilibrium(x, prices)


def _run_to_equilibrium(inst, rule, precision):
    config = dynamics.DynamicsConfig(
        max_iters=500000,
        stop_residual=0.1 * precision,
        move_tol=0.1 * precision,
        record_every=10000,
    )
    trace = dynamics.run(inst, rule, None, config)
    eq = _spending_equilibrium(inst, trace.final_state)
    report = market.verify_equilibrium(inst, eq, precision)
    return eq, report, {"rule": rule, "iterations": trace.iters[-1]}


def _solve_oracle(inst, method, precision):
    # run the oracle one order tighter than the verification tolerance,
    # but never past the 1e-8 floor its certificates can reliably reach
    target = max(0.1 * precision, 1e-8)
    try:
        if method == "eg":
            res = oracle.oracle_eg(inst, precision=target)
            eq = res.point
        elif method == "nsw":
            res = oracle.oracle_nsw_lindahl(inst, precision=target)
            x = np.asarray(res.point)
            eq = market.LindahlEquilibrium(x, programs.lindahl_prices(inst, x))
        else:
            raise CliError(3, "method %r has no oracle mode" % method)
    except utilities.UnsupportedFamily as exc:
        raise CliError(3, str(exc))
    except RuntimeError as exc:
        raise CliError(4, str(exc))
    report = market.verify_equilibrium(inst, eq, precision)
    return eq, report, {"oracle": res.method, "oracle_precision": res.precision}


def cmd_solve(args):
    inst = _load_instance(args.instance)
    method = args.method
    precision = args.precision
    wants = {
        "eg": (market.FISHER, market.GOODS),
        "nsw": (market.LINDAHL, market.GOODS),
        "shmyrev": (market.LINDAHL, market.GOODS),
    }
    if method in wants:
        want_market, want_items = wants[method]
        if inst.market != want_market or inst.items != want_items:
            raise CliError(
                3, "method %r needs a %s-%s instance" % (method, want_market, want_items)
            )
    elif inst.items != market.CHORES:
        raise CliError(3, "method 'chores-kkt' needs a chores instance")

    extra = {}
    if method == "chores-kkt":
        config = chores.ChoresConfig(tol=precision)
        try:
            if inst.market == market.FISHER:
                point = chores.solve_fisher_chores(inst, config)
                eq = market.FisherEquilibrium(point.allocations, point.p)
                report, certified = point.verification, point.certified
                extra["kkt"] = point.kkt_report.to_dict()
            else:
                res = chores.solve_lindahl_chores(inst, config)
                eq, report, certified = res.equilibrium, res.verification, res.certified
                extra["kkt"] = res.dual_point.kkt_report.to_dict()
        except (utilities.UnsupportedFamily, ValueError) as exc:
            raise CliError(3, str(exc))
    elif args.oracle:
        eq, report, extra = _solve_oracle(inst, method, precision)
        certified = report.certified
    else:
        if method == "shmyrev":
            if not _mirror_ready(inst):
                raise CliError(3, "shmyrev needs flat CES-family agents of one regime")
            rule = "prd-ces"
        else:
            rule = _goods_rule(inst, inst.market)
        try:
            eq, report, extra = _run_to_equilibrium(inst, rule, precision)
        except ValueError as exc:
            raise CliError(3, str(exc))
        certified = report.certified
        if not certified and method == "nsw" and _mirror_ready(inst):
            eq, report, extra = _run_to_equilibrium(inst, "prd-ces", precision)
            certified = report.certified

    payload = {
        "method": method,
        "equilibrium": eq.to_dict(),
        "verification": report.to_dict(),
        "certified": bool(certified),
    }
    payload.update(extra)
    _emit(payload, args.out)
    gaps = (report.affordability_gap, report.optimality_gap, report.clearing_gap)
    print(
        "%s: %s (gaps: %.3g / %.3g / %.3g)"
        % (method, "certified" if certified else "uncertified", *gaps),
        file=sys.stderr,
    )
    return 0 if certified else 4


def cmd_dynamics(args):
    inst = _load_instance(args.instance)
    config = dynamics.DynamicsConfig(
        max_iters=args.iters,
        record_every=args.record_every,
        seed=args.seed,
        gamma=args.gamma,
    )
    try:
        trace = dynamics.run(inst, args.rule, None, config)
    except ValueError as exc:
        raise CliError(3, str(exc))
    if args.trace:
        trace.to_csv(args.trace, include_state=args.state)
    payload = {
        "rule": args.rule,
        "iterations": trace.iters[-1],
        "residual": trace.final_residual,
        "potential": _finite_or_none(trace.potentials[-1]),
        "kl": _finite_or_none(trace.kls[-1]),
        "state": trace.final_state.tolist(),
    }
    _emit(payload, args.out)
    print(
        "%s: %d iterations, residual %.3g"
        % (args.rule, trace.iters[-1], trace.final_residual),
        file=sys.stderr,
    )
    return 0


def cmd_dualize(args):
    inst = _load_instance(args.instance)
    try:
        dual = market.dualize(inst)
    except utilities.UnsupportedFamily as exc:
        raise CliError(3, str(exc))
    _emit(market.instance_to_dict(dual), args.out)
    print("dualized %s %s instance" % (inst.market, inst.items), file=sys.stderr)
    return 0


def cmd_verify(args):
    inst = _load_instance(args.instance)
    obj = _read_json(args.equilibrium)
    if isinstance(obj, dict) and "equilibrium" in obj:
        obj = obj["equilibrium"]
    try:
        eq = market.equilibrium_from_dict(obj)
    except ValueError as exc:
        raise CliError(2, "%s: %s" % (args.equilibrium, exc))
    wanted = (
        market.FisherEquilibrium if inst.market == market.FISHER else market.LindahlEquilibrium
    )
    if not isinstance(eq, wanted):
        raise CliError(3, "equilibrium file does not match the instance's market side")
    report = market.verify_equilibrium(inst, eq, args.tol)
    payload = {"verification": report.to_dict(), "certified": report.certified}
    _emit(payload, args.out)
    print(
        "%s (gaps: %.3g / %.3g / %.3g)"
        % (
            "certified" if report.certified else "uncertified",
            report.affordability_gap,
            report.optimality_gap,
            report.clearing_gap,
        ),
        file=sys.stderr,
    )
    return 0 if report.certified else 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="marketeq",
        description="Market equilibria for goods and chores: solve, iterate, dualize, verify.",
        epilog="MD_THREADS caps worker parallelism (default: hardware count).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute and certify an equilibrium")
    p.add_argument("instance")
    p.add_argument("--method", required=True, choices=["eg", "nsw", "shmyrev", "chores-kkt"])
    p.add_argument("--precision", type=float, default=1e-6)
    p.add_argument("--oracle", action="store_true", help="use the slow reference oracle")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("dynamics", help="run an iterative rule and export its trace")
    p.add_argument("instance")
    p.add_argument("--rule", required=True, choices=list(dynamics.RULES))
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--trace", help="write a CSV trace to this path")
    p.add_argument("--state", action="store_true", help="append the flattened state to the trace")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("dualize", help="write the dual instance")
    p.add_argument("instance")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dualize)

    p = sub.add_parser("verify", help="check an equilibrium file against an instance")
    p.add_argument("instance")
    p.add_argument("equilibrium")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
