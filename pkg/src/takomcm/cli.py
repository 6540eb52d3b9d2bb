"""Command-line front end: check, sim, conform and corpus."""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
from collections import Counter

from . import litmus as L
from .enumeration import Bounds, analyze, format_outcome

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INTERNAL = 0, 1, 2, 3


class Timeout(Exception):
    pass


def compact_pred(pred) -> str:
    """``r1=1,r2=0`` for a conjunction of register equalities, else the usual form."""
    items = pred.items if isinstance(pred, L.And) else (pred,)
    parts = []
    for c in items:
        if not (isinstance(c, L.Cmp) and c.op == "=" and isinstance(c.lhs, L.Reg)
                and isinstance(c.rhs, L.Const)):
            return L.render_pred(pred)
        parts.append(f"{c.lhs}={c.rhs}")
    return ",".join(parts)


def verdict_label(a: L.Assertion) -> str:
    if a.pred is None:
        return a.describe()
    return f"{a.kind} {compact_pred(a.pred)}"


def load_program(path: str) -> L.Program:
    """A litmus file, or a built-in test by name.

    A missing path whose file name is a built-in test (``tests/test_mp.litmus``)
    falls back to the built-in copy.
    """
    if os.path.exists(path):
        return L.parse_file(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    if stem in L.CORPUS_NAMES:
        return L.load(stem)
    raise FileNotFoundError(path)


def _bounds(args) -> Bounds:
    return Bounds(max_callbacks=args.max_callbacks)


def _config(args, p):
    from .opmodel import Config, load_config
    over = {"num_tiles": args.tiles, "l1_size": args.l1, "l2_size": args.l2,
            "l3_size": args.l3, "max_callbacks": args.max_callbacks}
    if args.config:
        return load_config(args.config, p, **over)
    return Config(p, **{k: v for k, v in over.items() if v is not None})


def _limits(args):
    from .opmodel import Limits
    return Limits(max_states=args.max_states, max_depth=args.max_depth, timeout=args.timeout)


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def _with_alarm(secs, fn, *a):
    if not secs or not hasattr(signal, "SIGALRM"):
        return fn(*a)

    def ring(signum, frame):
        raise Timeout()

    old = signal.signal(signal.SIGALRM, ring)
    signal.setitimer(signal.ITIMER_REAL, secs)
    try:
        return fn(*a)
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


def _dump_dots(analysis, outdir):
    os.makedirs(outdir, exist_ok=True)
    p = analysis.program
    for i, o in enumerate(sorted(analysis.witnesses)):
        g = analysis.witnesses[o]
        path = os.path.join(outdir, f"{p.name}_{i}.dot")
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"// outcome {format_outcome(o, p)}\n")
            f.write(g.to_dot(name=f"{p.name}_{i}"))


def cmd_check(args, out) -> int:
    ok = True
    reports = []
    for path in args.files:
        p = load_program(path)
        try:
            an = _with_alarm(args.timeout, analyze, p, _bounds(args))
        except Timeout:
            print(f"{p.name}: timed out after {args.timeout}s", file=out)
            ok = False
            continue
        if len(args.files) > 1:
            print(f"{p.name}:", file=out)
        outs = [format_outcome(o, p) for o in sorted(an.allowed)]
        if args.verbose:
            print(f"  allowed: {' | '.join(outs) or '(none)'}", file=out)
        for r in an.results:
            print(f"{verdict_label(r.assertion)}: {'PASS' if r.passed else 'FAIL'}", file=out)
        if not an.results:
            print(f"no assertions; {len(outs)} allowed outcome(s): PASS", file=out)
        if an.inconclusive:
            print("warning: bounds reached, result inconclusive", file=out)
        ok = ok and an.passed
        reports.append(an.to_dict())
        if args.dot:
            _dump_dots(an, args.dot)
    if args.json:
        _write_json(args.json, reports if len(reports) != 1 else reports[0])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sim(args, out) -> int:
    from .opmodel import Machine, explore, random_walk
    p = load_program(args.file)
    c = _config(args, p)
    m = Machine(c)
    hist = Counter()
    info = {}
    if args.walks:
        for i in range(args.walks):
            tr = random_walk(m, args.seed + i, max_depth=args.max_depth)
            end = tr[-1][1] if tr else m.init_state()
            hist[format_outcome(m.outcome(end), p) if m.quiescent(end) else "(incomplete)"] += 1
        info = {"walks": args.walks, "seed": args.seed}
        print(f"{args.walks} random walks from seed {args.seed}", file=out)
    else:
        res = explore(m, _limits(args), strategy=args.strategy)
        for s in res.quiescent:
            hist[format_outcome(m.outcome(s), p)] += 1
        if res.deadlocks:
            hist["(deadlock)"] += len(res.deadlocks)
        info = {"states": res.states, "edges": res.edges, "truncated": res.truncated}
        flag = " (truncated)" if res.truncated else ""
        print(f"{res.states} states, {res.edges} edges{flag}", file=out)
    width = max((len(k) for k in hist), default=0)
    for k in sorted(hist):
        print(f"  {k:<{width}}  {hist[k]}", file=out)
    if args.json:
        _write_json(args.json, dict(info, test=p.name, config=c.to_dict(), histogram=dict(hist)))
    return EXIT_OK


def _conform_one(args, p):
    from .bridge import conform
    c = _config(args, p)
    return conform(p, c, _bounds(args), _limits(args), walks=args.walks, seed=args.seed)


def _print_report(rep, out):
    flag = " (truncated)" if rep.truncated else ""
    print(f"{rep.test}: {rep.states} states{flag}, {rep.traces_checked} traces, "
          f"{rep.prefixes_checked} graphs checked, inclusion {'holds' if rep.inclusion else 'FAILS'}: "
          f"{'PASS' if rep.ok else 'FAIL'}", file=out)
    print(f"  operational: {' | '.join(rep.operational_outcomes) or '(none)'}", file=out)
    for v in rep.violations:
        print(f"  {v['kind']}: {v['detail']} (after {v['prefix']} steps)", file=out)
        for line in v["trace"][-20:]:
            print(f"    {line}", file=out)


def cmd_conform(args, out) -> int:
    p = load_program(args.file)
    rep = _conform_one(args, p)
    _print_report(rep, out)
    if args.json:
        _write_json(args.json, rep.to_dict())
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_corpus(args, out) -> int:
    rows = []
    report = []
    for _, p in L.corpus():
        an = analyze(p, _bounds(args))
        for r in an.results:
            a = r.assertion
            if a.pred is not None:
                got = a.kind if r.passed else (L.FORBID if a.kind == L.ALLOW else L.ALLOW)
                want, got = f"{a.kind} {compact_pred(a.pred)}", f"{got} {compact_pred(a.pred)}"
            else:
                want = a.kind
                got = L.RACY if an.racy else L.RACEFREE
            rows.append((p.name, want, got, r.passed))
        entry = an.to_dict()
        if args.conform:
            rep = _conform_one(args, p)
            rows.append((p.name, "conformance", "ok" if rep.ok else f"{len(rep.violations)} violation(s)", rep.ok))
            entry["conformance"] = rep.to_dict()
        report.append(entry)
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    w2 = max(len(r[2]) for r in rows)
    print(f"{'test':<{w0}}  {'expected':<{w1}}  {'actual':<{w2}}  verdict", file=out)
    for name, want, got, ok in rows:
        print(f"{name:<{w0}}  {want:<{w1}}  {got:<{w2}}  {'PASS' if ok else 'FAIL'}", file=out)
    tests = {}
    for name, _, _, ok in rows:
        tests[name] = tests.get(name, True) and ok
    passed = sum(tests.values())
    print(f"{passed}/{len(tests)} PASS", file=out)
    if args.json:
        _write_json(args.json, report)
    return EXIT_OK if passed == len(tests) else EXIT_FAIL


def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="takomcm", description="täkō memory-model toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--max-callbacks", type=_positive(int), default=2, metavar="K",
                        help="callback instances per address (default 2)")
    common.add_argument("--json", metavar="FILE", help="write a machine-readable report")
    common.add_argument("--timeout", type=_positive(float), metavar="SECS")
    common.add_argument("-v", "--verbose", action="store_true")
    machine = argparse.ArgumentParser(add_help=False)
    machine.add_argument("--tiles", type=_positive(int))
    machine.add_argument("--l1", type=_positive(int), metavar="SIZE")
    machine.add_argument("--l2", type=_positive(int), metavar="SIZE")
    machine.add_argument("--l3", type=_positive(int), metavar="SIZE")
    machine.add_argument("--config", metavar="FILE", help="JSON machine configuration")
    machine.add_argument("--max-states", type=_positive(int), default=100_000)
    machine.add_argument("--max-depth", type=_positive(int), default=10_000)
    machine.add_argument("--seed", type=int, default=0)
    machine.add_argument("--walks", type=int, default=0, help="seeded random walks")
    machine.add_argument("--strategy", choices=("novelty", "dfs", "bfs"), default="novelty")

    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="allowed outcomes and assertion verdicts")
    p.add_argument("files", nargs="+")
    p.add_argument("--dot", metavar="DIR", help="one witness graph per allowed outcome")
    p = sub.add_parser("sim", parents=[common, machine], help="outcome histogram of the machine")
    p.add_argument("file")
    p = sub.add_parser("conform", parents=[common, machine], help="machine against axioms")
    p.add_argument("file")
    p = sub.add_parser("corpus", parents=[common, machine], help="expected-vs-actual table")
    p.add_argument("--conform", action="store_true", help="also run conformance")
    return ap


COMMANDS = {"check": cmd_check, "sim": cmd_sim, "conform": cmd_conform, "corpus": cmd_corpus}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_PARSE
    try:
        return COMMANDS[args.command](args, out)
    except L.LitmusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: cannot read {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # anything else is a bug in the toolkit
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
