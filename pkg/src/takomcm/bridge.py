"""From operational traces to execution graphs, and conformance checking.

The machine's ghost state is a partial execution graph in reference form:
events are named ``("T", thread, i)`` for core events, ``("C", addr, k, i)``
for events of the k-th callback instance of an address and ``("I", addr)``
for initial writes.  ``graph_of`` turns a ghost into an ExecutionGraph and
``abstract_step`` reports what one transition added.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from . import litmus as L
from .axioms import check_all
from .enumeration import Bounds, analyze, format_outcome
from .graph import HAS_RVAL, INIT, GraphBuilder
from .opmodel.config import Config
from .opmodel.explore import Limits, explore, format_trace, random_walk
from .opmodel.machine import Machine

EMITTING = ("PerformInst", "CbStart", "CbEnd")


class AbstractionError(Exception):
    """A transition whose effect has no admissible graph counterpart."""


@dataclass
class GraphDelta:
    events: list = field(default_factory=list)   # (ref, ghost event tuple)
    sb: list = field(default_factory=list)
    rf: list = field(default_factory=list)
    mo: list = field(default_factory=list)
    cbo: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.events or self.rf or self.mo or self.cbo)


def _extension(old: tuple, new: tuple, what: str) -> tuple:
    if new[:len(old)] != old:
        raise AbstractionError(f"{what} changed instead of growing")
    return new[len(old):]


def abstract_step(s, t, s2) -> GraphDelta:
    """Graph increment of the transition ``s --t--> s2``."""
    gth, ginst, gmo, gcbo = s.ghost
    gth2, ginst2, gmo2, gcbo2 = s2.ghost
    d = GraphDelta()
    for i, (old, new) in enumerate(zip(gth, gth2)):
        for j, ev in enumerate(_extension(old, new, "thread events"), start=len(old)):
            ref = ("T", i, j)
            d.events.append((ref, ev))
            d.sb.extend((("T", i, x), ref) for x in range(j))
    for ai, (old, new) in enumerate(zip(ginst, ginst2)):
        if len(new) < len(old):
            raise AbstractionError("callback instance disappeared")
        for k, (kind, evs) in enumerate(new):
            before = old[k][1] if k < len(old) else ()
            if k < len(old) and old[k][0] != kind:
                raise AbstractionError("callback instance changed kind")
            for j, ev in enumerate(_extension(before, evs, "callback events"), start=len(before)):
                ref = ("C", ai, k, j)
                d.events.append((ref, ev))
                d.sb.extend((("C", ai, k, x), ref) for x in range(j))
    for ref, ev in d.events:
        if ev[5] is not None:
            d.rf.append((ev[5], ref))
    for ai, (old, new) in enumerate(zip(gmo, gmo2)):
        d.mo.extend((ai, r) for r in _extension(old, new, "mo"))
    for ai, (old, new) in enumerate(zip(gcbo, gcbo2)):
        d.cbo.extend((ai, r) for r in _extension(old, new, "cbo"))
    return d


def delta_mismatch(t, d: GraphDelta) -> str | None:
    """Why a delta does not fit its transition: commits and callback
    starts/ends must extend the graph, every other step must not."""
    if t.label in EMITTING and d.empty:
        return f"{t.describe()} added nothing to the graph"
    if t.label not in EMITTING and not d.empty:
        return f"{t.describe()} changed the graph"
    return None


def graph_of(m: Machine, ghost) -> "tuple":
    """(ExecutionGraph, ref -> event id) for a ghost."""
    gth, ginst, gmo, gcbo = ghost
    names = m.addr_names
    b = GraphBuilder()
    ids = {}
    for ai, decl in enumerate(m.program.addresses):
        if not m.phantom[ai]:
            ids[("I", ai)] = b.init(decl.name, decl.initial)
    pending = []

    def add(ref, ev, thread):
        kind, ai, rval, wval, dirty, src = ev
        ids[ref] = b.add(kind, names[ai], rval, wval, dirty, thread)
        if src is not None:
            pending.append((src, ref, rval))

    for i, evs in enumerate(gth):
        for j, ev in enumerate(evs):
            add(("T", i, j), ev, m.thread_names[i])
    for ai, insts in enumerate(ginst):
        for k, (kind, evs) in enumerate(insts):
            thread = f"{kind}[{names[ai]}]#{k}"
            for j, ev in enumerate(evs):
                add(("C", ai, k, j), ev, thread)
    events = b.events
    for src, ref, rval in pending:
        if src not in ids:
            raise AbstractionError(f"read sourced from unknown write {src}")
        w = events[ids[src]]
        if w.wval != rval:
            raise AbstractionError(f"read of {rval} sourced from a write of {w.wval}")
        b.edge("rf", ids[src], ids[ref])
    for ai, seq in enumerate(gmo):
        if not m.phantom[ai]:
            b.order("mo", [ids[("I", ai)]] + [ids[r] for r in seq])
    for ai, seq in enumerate(gcbo):
        b.order("cbo", [ids[r] for r in seq])
    g = b.build()
    for e in g.events:
        if e.kind in HAS_RVAL and e.kind != INIT and e.addr in m.program.regulars:
            if not any(y == e.id for _, y in g.rf):
                raise AbstractionError(f"regular read {e.label()} has no source")
    return g, ids


class Checker:
    """Caches verdicts per ghost; ghosts repeat across many machine states."""

    def __init__(self, m: Machine):
        self.m = m
        self.cache = {}
        self.checked = 0

    def verdict(self, ghost):
        v = self.cache.get(ghost)
        if v is None:
            g, _ = graph_of(self.m, ghost)
            v = check_all(g)
            self.cache[ghost] = v
            self.checked += 1
        return v


@dataclass
class TraceResult:
    prefix_ok: bool = True
    final_ok: bool = True
    failing_prefix: int | None = None
    failing_axiom: str | None = None
    prefixes_checked: int = 0


def check_trace(m: Machine, trace: list, init=None, checker: Checker | None = None) -> TraceResult:
    """Fold a trace [(transition, state), ...] into graphs, checking each prefix.

    ``failing_prefix`` is the index of the first transition whose graph is
    inconsistent.
    """
    checker = checker or Checker(m)
    prev = init if init is not None else m.init_state()
    res = TraceResult()
    last = None
    for i, (t, s) in enumerate(trace):
        d = abstract_step(prev, t, s)
        prev = s
        if d.empty:
            continue
        res.prefixes_checked += 1
        last = checker.verdict(s.ghost)
        if not last.consistent and res.prefix_ok:
            res.prefix_ok = False
            res.failing_prefix = i
            res.failing_axiom = last.failures[0]
    if last is not None:
        res.final_ok = last.consistent
    return res


@dataclass
class ConformReport:
    test: str
    config: dict
    states: int = 0
    truncated: bool = False
    traces_checked: int = 0
    prefixes_checked: int = 0
    inclusion: bool = True
    operational_outcomes: list = field(default_factory=list)
    allowed_outcomes: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    inconclusive: bool = False
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "test": self.test, "config": self.config, "states": self.states,
            "truncated": self.truncated, "traces_checked": self.traces_checked,
            "prefixes_checked": self.prefixes_checked, "inclusion": self.inclusion,
            "operational_outcomes": self.operational_outcomes,
            "allowed_outcomes": self.allowed_outcomes,
            "inconclusive": self.inconclusive, "violations": self.violations,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def conform(p: L.Program, c: Config | None = None, b: Bounds | None = None,
            limits: Limits | None = None, walks: int = 0, seed: int = 0,
            max_violations: int = 5, trace_lines: int = 400) -> ConformReport:
    """Explore the machine and check it against the axiomatic model.

    Every reachable state's ghost graph is checked, which covers every
    prefix of every explored trace; the machine invariants are checked in
    every state; quiescent outcomes must be axiomatically allowed; racefree
    tests must show no race.  ``walks`` seeded random walks supplement a
    truncated search.
    """
    b = b or Bounds()
    c = c or Config(p)
    if c.program is not p:
        c = replace(c, program=p)
    if c.max_callbacks != b.max_callbacks:
        c = replace(c, max_callbacks=b.max_callbacks)
    limits = limits or Limits()
    analysis = analyze(p, b)
    allowed = set(analysis.allowed)
    racefree = any(a.kind == L.RACEFREE for a in p.assertions)
    m = Machine(c)
    checker = Checker(m)
    rep = ConformReport(p.name, c.to_dict(), inconclusive=analysis.inconclusive,
                        allowed_outcomes=[format_outcome(o, p) for o in sorted(allowed)])
    pending = []  # (kind, detail, state) found during search

    def note(kind, detail, s):
        if not any(k == kind and dd == detail for k, dd, _ in pending):
            pending.append((kind, detail, s))
        return len(pending) >= max_violations

    def visit(s, parent, t):
        for bad in m.invariants(s):
            if note("invariant", bad, s):
                return True
        if parent is None:
            return False
        try:
            d = abstract_step(parent, t, s)
            why = delta_mismatch(t, d)
            if why is not None and note("delta", why, s):
                return True
            if d.empty:
                return False
            v = checker.verdict(s.ghost)
        except AbstractionError as exc:
            return note("abstraction", str(exc), s)
        if not v.consistent:
            return note("axiom", v.failures[0], s)
        if racefree and v.races:
            return note("race", "operational race on a racefree test", s)
        return False

    res = explore(m, limits, visit)
    rep.states, rep.truncated, rep.elapsed = res.states, res.truncated, res.elapsed
    rep.traces_checked = len(res.quiescent) + len(res.deadlocks)
    outcomes = dict(res.outcomes())
    for s in res.deadlocks:
        note("deadlock", "no transition enabled before quiescence", s)
    for i in range(walks):
        tr = random_walk(m, seed + i)
        rep.traces_checked += 1
        try:
            r = check_trace(m, tr, checker=checker)
        except AbstractionError as exc:
            pending.append(("abstraction", str(exc), tr))
            continue
        if not r.prefix_ok:
            pending.append(("axiom", r.failing_axiom, tr[:r.failing_prefix + 1]))
        if tr and m.quiescent(tr[-1][1]):
            outcomes.setdefault(m.outcome(tr[-1][1]), tr)
    for o, where in sorted(outcomes.items()):
        if o not in allowed:
            rep.inclusion = False
            pending.append(("inclusion", f"outcome {format_outcome(o, p)} not allowed", where))
    rep.operational_outcomes = [format_outcome(o, p) for o in sorted(outcomes)]
    rep.prefixes_checked = checker.checked
    for kind, detail, where in pending:
        trace = res.trace_to(where) if not isinstance(where, list) else where
        rep.violations.append({
            "kind": kind, "detail": detail, "prefix": len(trace),
            "trace": format_trace(m, trace)[-trace_lines:],
        })
    return rep
