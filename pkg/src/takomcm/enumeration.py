"""Bounded enumeration of candidate executions and outcome analysis.

Candidates are built in three layers:

* skeletons fix every thread's control path, guessed read values, and for
  each phantom address the sequence of callback instances (miss/eviction
  blocks with dirty bits);
* per phantom address, the callback order is an interleaving of that
  block sequence with the threads' accesses to the address;
* per regular address, a modification order and a reads-from choice.

Only choices that some axiom would reject anyway are pruned; every graph
that survives is checked against the full axiom set.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator

from . import litmus as L
from .axioms import first_failure, race_pairs
from .graph import (
    E_E, E_S, FL, INIT, M_E, M_S, R, R_CB, RMW, RMW_CB, W, W_CB,
    ExecutionGraph, GraphBuilder,
)
from .relation import Relation


class BoundOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class Bounds:
    max_callbacks: int = 2
    max_events: int = 64
    max_candidates: int | None = None

    def __post_init__(self):
        if self.max_callbacks < 1 or self.max_events < 1:
            raise ValueError("bounds must be positive")
        if self.max_candidates is not None and self.max_candidates < 1:
            raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class Access:
    kind: str
    addr: str
    rval: int | None = None
    wval: int | None = None
    dirty: bool | None = None


@dataclass(frozen=True)
class ThreadPath:
    name: str
    scope: str
    events: tuple
    regs: tuple  # sorted (register, value) pairs


@dataclass(frozen=True)
class Instance:
    addr: str
    kind: str  # onmiss / onevict / onwb
    path: ThreadPath

    @property
    def is_miss(self):
        return self.kind == L.ONMISS


@dataclass(frozen=True)
class Skeleton:
    threads: tuple
    instances: tuple  # ((addr, (Instance, ...)), ...)

    def event_count(self, program) -> int:
        n = len(program.regulars)
        n += sum(len(t.events) for t in self.threads)
        n += sum(len(i.path.events) for _, seq in self.instances for i in seq)
        return n


# -- paths -----------------------------------------------------------------


def read_domain(program: L.Program, addr: str) -> list:
    """Values a read of ``addr`` could possibly return."""
    return sorted(program.written_values(addr))


def _paths(program, body, reg_addr=None, local=None, is_miss=False):
    """Yield (events, regs, local) for every control path and read guess."""
    decls = {a.name: a for a in program.addresses}

    def go(todo, regs, events, local):
        if not todo:
            yield events, regs, local
            return
        ins, rest = todo[0], todo[1:]
        if isinstance(ins, L.Load):
            if ins.addr == reg_addr:
                yield from go(rest, {**regs, ins.dst: local}, events, local)
                return
            kind = R if decls[ins.addr].kind == L.REGULAR else R_CB
            for v in read_domain(program, ins.addr):
                yield from go(rest, {**regs, ins.dst: v}, events + (Access(kind, ins.addr, rval=v),), local)
        elif isinstance(ins, L.Store):
            if ins.addr == reg_addr:
                yield from go(rest, regs, events, ins.value if is_miss else local)
                return
            kind = W if decls[ins.addr].kind == L.REGULAR else W_CB
            yield from go(rest, regs, events + (Access(kind, ins.addr, wval=ins.value),), local)
        elif isinstance(ins, L.RMW):
            kind = RMW if decls[ins.addr].kind == L.REGULAR else RMW_CB
            for v in read_domain(program, ins.addr):
                r2 = {**regs, ins.dst: v} if ins.dst else regs
                yield from go(rest, r2, events + (Access(kind, ins.addr, rval=v, wval=ins.value),), local)
        elif isinstance(ins, L.Flush):
            yield from go(rest, regs, events + (Access(FL, ins.addr),), local)
        elif isinstance(ins, L.Branch):
            if ins.reg is not None:
                arm = ins.then if ins.test(regs.get(ins.reg, 0)) else ins.orelse
                yield from go(arm + rest, regs, events, local)
            elif ins.addr == reg_addr:
                arm = ins.then if ins.test(local) else ins.orelse
                yield from go(arm + rest, regs, events, local)
            else:
                kind = R if decls[ins.addr].kind == L.REGULAR else R_CB
                for v in read_domain(program, ins.addr):
                    arm = ins.then if ins.test(v) else ins.orelse
                    yield from go(arm + rest, regs, events + (Access(kind, ins.addr, rval=v),), local)
        else:
            raise TypeError(ins)

    yield from go(tuple(body), {}, (), local)


def _regs_tuple(regs, names):
    return tuple(sorted((n, regs.get(n, 0)) for n in names))


def _thread_paths(program, thread) -> list:
    names = L._assigned(thread.body)
    return [
        ThreadPath(thread.name, thread.name, ev, _regs_tuple(regs, names))
        for ev, regs, _ in _paths(program, thread.body)
    ]


def _miss_instances(program, addr, index) -> list:
    cb = program.callback(L.ONMISS, addr)
    names = L._assigned(cb.body)
    out = []
    for ev, regs, produced in _paths(program, cb.body, addr, None, is_miss=True):
        events = (Access(M_S, addr),) + ev + (Access(M_E, addr, wval=produced),)
        out.append(Instance(addr, L.ONMISS, ThreadPath(f"{cb.scope}#{index}", cb.scope, events, _regs_tuple(regs, names))))
    return out


def _evict_instances(program, addr, index, value, dirty) -> list:
    kind = L.ONWB if dirty else L.ONEVICT
    cb = program.callback(kind, addr)
    body = cb.body if cb else ()
    scope = cb.scope if cb else f"{kind}[{addr}]"
    names = L._assigned(body)
    out = []
    for ev, regs, _ in _paths(program, body, addr, value):
        events = (Access(E_S, addr, rval=value, dirty=dirty),) + ev + (Access(E_E, addr, dirty=dirty),)
        out.append(Instance(addr, kind, ThreadPath(f"{scope}#{index}", scope, events, _regs_tuple(regs, names))))
    return out


def _block_sequences(program, addr, k, written) -> Iterator[tuple]:
    """Alternating miss/eviction instance sequences for one phantom address.

    A clean eviction sees the produced value of the miss before it; a dirty
    one sees some value written by a thread access.
    """
    yield ()
    for n in range(1, k + 1):
        for n_ev in (n - 1, n):
            yield from _extend(program, addr, 0, n, n_ev, None, (), written)


def _extend(program, addr, idx, n_miss, n_ev, last_m, acc, written):
    misses = sum(1 for i in acc if i.is_miss)
    evs = len(acc) - misses
    if misses == n_miss and evs == n_ev:
        yield acc
        return
    if len(acc) % 2 == 0:
        for inst in _miss_instances(program, addr, idx):
            yield from _extend(program, addr, idx + 1, n_miss, n_ev, inst.path.events[-1].wval, acc + (inst,), written)
    else:
        options = [(last_m, False)] + [(v, True) for v in sorted(written)]
        for value, dirty in options:
            for inst in _evict_instances(program, addr, idx, value, dirty):
                yield from _extend(program, addr, idx + 1, n_miss, n_ev, last_m, acc + (inst,), written)


def unroll(program: L.Program, bounds: Bounds = Bounds()) -> Iterator[Skeleton]:
    """Every skeleton within bounds; raises BoundOverflow past max_events."""
    per_thread = [_thread_paths(program, t) for t in program.threads]
    for combo in itertools.product(*per_thread):
        written = {a: set() for a in program.phantoms}
        for tp in combo:
            for ev in tp.events:
                if ev.kind in (W_CB, RMW_CB):
                    written[ev.addr].add(ev.wval)
        seqs = [list(_block_sequences(program, a, bounds.max_callbacks, written[a])) for a in program.phantoms]
        for choice in itertools.product(*seqs):
            sk = Skeleton(tuple(combo), tuple(zip(program.phantoms, choice)))
            if sk.event_count(program) > bounds.max_events:
                raise BoundOverflow(f"skeleton exceeds {bounds.max_events} events")
            yield sk


# -- candidates ------------------------------------------------------------


@dataclass
class _Layout:
    builder: GraphBuilder
    thread_ids: list  # per core thread, list of event ids
    inst_ids: dict  # addr -> list of per-instance id lists


def _layout(program, sk: Skeleton) -> _Layout:
    b = GraphBuilder()
    for a in program.addresses:
        if a.kind == L.REGULAR:
            b.init(a.name, a.initial)
    thread_ids = []
    for tp in sk.threads:
        thread_ids.append([b.add(e.kind, e.addr, e.rval, e.wval, e.dirty, tp.name) for e in tp.events])
    inst_ids = {}
    for addr, seq in sk.instances:
        inst_ids[addr] = [
            [b.add(e.kind, e.addr, e.rval, e.wval, e.dirty, inst.path.name) for e in inst.path.events]
            for inst in seq
        ]
    return _Layout(b, thread_ids, inst_ids)


def _merges(events, blocks, streams) -> Iterator[list]:
    """Callback orders for one phantom address.

    ``blocks`` are marker-id lists in instance order, ``streams`` are
    per-thread lists of access ids in program order.
    """
    out = []

    def go(bi, pos, present, value, written):
        if bi == len(blocks) and all(p == len(s) for p, s in zip(pos, streams)):
            yield list(out)
            return
        if bi < len(blocks):
            blk = blocks[bi]
            first, last = events[blk[0]], events[blk[-1]]
            ok = True
            if first.kind == M_S:
                nxt = (True, last.wval, False)
            else:
                ok = present and first.rval == value and first.dirty == written
                nxt = (False, None, False)
            if ok:
                out.extend(blk)
                yield from go(bi + 1, pos, *nxt)
                del out[-len(blk):]
        for t, s in enumerate(streams):
            if pos[t] == len(s):
                continue
            e = events[s[pos[t]]]
            if e.kind == FL:
                if present:
                    continue
                nxt = (present, value, written)
            else:
                if not present:
                    continue
                if e.kind in (R_CB, RMW_CB) and e.rval != value:
                    continue
                nxt = (True, e.wval, True) if e.kind in (W_CB, RMW_CB) else (present, value, written)
            out.append(e.id)
            pos2 = pos[:t] + (pos[t] + 1,) + pos[t + 1:]
            yield from go(bi, pos2, *nxt)
            out.pop()

    yield from go(0, tuple(0 for _ in streams), False, None, False)


def _mo_orders(writers_by_thread, init_id) -> Iterator[list]:
    """Per-address modification orders: init first, then any interleaving
    that keeps each thread's writes in program order."""
    out = [init_id]

    def go(pos):
        if all(p == len(s) for p, s in zip(pos, writers_by_thread)):
            yield list(out)
            return
        for t, s in enumerate(writers_by_thread):
            if pos[t] < len(s):
                out.append(s[pos[t]])
                yield from go(pos[:t] + (pos[t] + 1,) + pos[t + 1:])
                out.pop()

    yield from go(tuple(0 for _ in writers_by_thread))


def _by_thread(events, ids):
    groups = {}
    for i in ids:
        groups.setdefault(events[i].thread, []).append(i)
    return [groups[t] for t in sorted(groups, key=str)]


def _rf_choices(events, order, reads) -> Iterator[list]:
    """rf edges for the reads of one address given its mo order."""
    pos = {w: n for n, w in enumerate(order)}
    options = []
    for r in reads:
        e = events[r]
        if e.kind == RMW:
            # an RMW reads from its immediate mo predecessor
            prev = order[pos[r] - 1]
            cand = [prev] if events[prev].wval == e.rval else []
        else:
            cand = [w for w in order if w != r and events[w].wval == e.rval]
        if not cand:
            return
        options.append([(w, r) for w in cand])
    yield from itertools.product(*options)


def candidates_for(program, sk: Skeleton) -> Iterator[ExecutionGraph]:
    lay = _layout(program, sk)
    b = lay.builder
    events = b.events
    # callback order per phantom address
    cbo_opts = []
    for addr in program.phantoms:
        blocks = [
            [i for i in ids if events[i].kind in (M_S, M_E, E_S, E_E)]
            for ids in lay.inst_ids.get(addr, [])
        ]
        streams = [
            [i for i in tids if events[i].addr == addr]
            for tids in lay.thread_ids
        ]
        streams = [s for s in streams if s]
        cbo_opts.append(list(_merges(events, blocks, streams)))
        if not cbo_opts[-1]:
            return
    # modification order and reads-from per regular address
    reg_opts = []
    for addr in program.regulars:
        init_id = next(e.id for e in events if e.kind == INIT and e.addr == addr)
        writers = [e.id for e in events if e.kind in (W, RMW) and e.addr == addr]
        reads = [e.id for e in events if e.kind in (R, RMW) and e.addr == addr]
        opts = []
        for order in _mo_orders(_by_thread(events, writers), init_id):
            for rf in _rf_choices(events, order, reads):
                opts.append((order, rf))
        if not opts:
            return
        reg_opts.append(opts)
    base = {k: set(v) for k, v in b.rels.items()}
    for cbos in itertools.product(*cbo_opts):
        for regs in itertools.product(*reg_opts):
            rels = {k: set(v) for k, v in base.items()}
            for seq in cbos:
                rels["cbo"] |= _chain(seq)
            for order, rf in regs:
                rels["mo"] |= _chain(order)
                rels["rf"] |= set(rf)
            yield ExecutionGraph(tuple(events), **{k: Relation(v) for k, v in rels.items()})


def _chain(seq):
    return {(seq[i], seq[j]) for i in range(len(seq)) for j in range(i + 1, len(seq))}


def enumerate_candidates(program: L.Program, bounds: Bounds = Bounds()) -> Iterator[ExecutionGraph]:
    """Every candidate graph (well-formed by construction) within bounds."""
    for sk in unroll(program, bounds):
        yield from candidates_for(program, sk)


# -- outcomes --------------------------------------------------------------


def outcome_of(program: L.Program, sk: Skeleton) -> tuple:
    """Final register values as a sorted tuple of ((scope, reg), value).

    Core registers always appear; a callback's registers come from its last
    instance and are absent if it never ran.
    """
    vals = {}
    for tp in sk.threads:
        for r, v in tp.regs:
            vals[(tp.scope, r)] = v
    for _, seq in sk.instances:
        for inst in seq:  # later instances overwrite earlier ones
            for r, v in inst.path.regs:
                vals[(inst.path.scope, r)] = v
    return tuple(sorted(vals.items()))


def format_outcome(outcome, program: L.Program) -> str:
    regs = program.registers()
    parts = []
    for (scope, r), v in outcome:
        owners = [s for s, names in regs.items() if r in names]
        name = r if len(owners) == 1 else f"{scope}:{r}"
        parts.append(f"{name}={v}")
    return ",".join(parts) if parts else "(none)"


@dataclass
class AssertionResult:
    assertion: L.Assertion
    passed: bool


@dataclass
class Analysis:
    program: L.Program
    bounds: Bounds
    allowed: set = field(default_factory=set)
    racy_outcomes: set = field(default_factory=set)
    witnesses: dict = field(default_factory=dict)
    race_witness: ExecutionGraph | None = None
    candidates_checked: int = 0
    consistent_count: int = 0
    inconclusive: bool = False
    results: list = field(default_factory=list)

    @property
    def racy(self) -> bool:
        return bool(self.racy_outcomes)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def outcome_dicts(self) -> list:
        return [
            {f"{s}:{r}": v for (s, r), v in o}
            for o in sorted(self.allowed)
        ]

    def to_dict(self) -> dict:
        p = self.program
        return {
            "test": p.name,
            "bounds": {"max_callbacks": self.bounds.max_callbacks, "max_events": self.bounds.max_events,
                       "max_candidates": self.bounds.max_candidates},
            "allowed_outcomes": [format_outcome(o, p) for o in sorted(self.allowed)],
            "assertions": [
                {"kind": r.assertion.kind,
                 "pred": L.render_pred(r.assertion.pred) if r.assertion.pred is not None else None,
                 "pass": r.passed}
                for r in self.results
            ],
            "racy": self.racy,
            "candidates_checked": self.candidates_checked,
            "consistent_count": self.consistent_count,
            "inconclusive": self.inconclusive,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def evaluate_assertion(asn: L.Assertion, allowed, racy: bool, program) -> bool:
    if asn.kind == L.RACEFREE:
        return not racy
    if asn.kind == L.RACY:
        return racy
    hits = any(L.eval_pred(asn.pred, dict(o), program) for o in allowed)
    return not hits if asn.kind == L.FORBID else hits


def analyze(program: L.Program, bounds: Bounds = Bounds(), check=None) -> Analysis:
    """Allowed outcomes, raciness and assertion verdicts within bounds.

    ``check`` overrides the consistency predicate (default: all axioms).
    """
    if check is None:
        def check(g):
            return first_failure(g) is None
    res = Analysis(program, bounds)
    try:
        _collect(program, bounds, check, res)
    except BoundOverflow:
        res.inconclusive = True
    res.results = [
        AssertionResult(a, evaluate_assertion(a, res.allowed, res.racy, program))
        for a in program.assertions
    ]
    return res


def _collect(program, bounds, check, res):
    for sk in unroll(program, bounds):
        out = outcome_of(program, sk)
        for g in candidates_for(program, sk):
            if bounds.max_candidates is not None and res.candidates_checked >= bounds.max_candidates:
                res.inconclusive = True
                return
            res.candidates_checked += 1
            if not check(g):
                continue
            res.consistent_count += 1
            if out not in res.allowed:
                res.allowed.add(out)
                res.witnesses[out] = g
            if out not in res.racy_outcomes and race_pairs(g):
                res.racy_outcomes.add(out)
                if res.race_witness is None:
                    res.race_witness = g
