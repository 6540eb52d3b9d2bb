"""Execution graphs: events, base relations and the derived relations."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

from .relation import Relation

R, W, RMW = "R", "W", "RMW"
R_CB, W_CB, RMW_CB = "R_cb", "W_cb", "RMW_cb"
M_S, M_E, E_S, E_E = "M_s", "M_e", "E_s", "E_e"
FL, INIT = "Fl", "I"

KINDS = (R, W, RMW, R_CB, W_CB, RMW_CB, M_S, M_E, E_S, E_E, FL, INIT)

# kind sets; the bold read/write classes include the RMW forms
READS = frozenset({R, RMW})
WRITES = frozenset({W, RMW})
READS_CB = frozenset({R_CB, RMW_CB})
WRITES_CB = frozenset({W_CB, RMW_CB})
CB_ME = frozenset({R_CB, W_CB, RMW_CB})
CB_SE = frozenset({M_S, M_E, E_S, E_E})
CALLBACK_CLASS = CB_ME | CB_SE | {FL}
REGULAR_KINDS = frozenset({R, W, RMW, INIT})
# writers for rf/mo purposes
MO_WRITERS = WRITES | {INIT}

# which event kinds carry a read value / a written value
HAS_RVAL = frozenset({R, RMW, R_CB, RMW_CB, E_S})
HAS_WVAL = frozenset({W, RMW, W_CB, RMW_CB, M_E, INIT})


@dataclass(frozen=True)
class Event:
    id: int
    kind: str
    addr: str
    rval: int | None = None
    wval: int | None = None
    dirty: bool | None = None
    thread: str | None = None
    pos: int = 0

    @property
    def value(self):
        return self.wval if self.wval is not None else self.rval

    def label(self) -> str:
        parts = [self.kind, f"[{self.addr}]"]
        if self.kind in (RMW, RMW_CB):
            parts.append(f"{self.rval}->{self.wval}")
        elif self.value is not None:
            parts.append(str(self.value))
        if self.dirty is not None:
            parts.append("dirty" if self.dirty else "clean")
        return " ".join(parts)


BASE_RELATIONS = ("sb", "thd", "rf", "mo", "cbo")
DERIVED_RELATIONS = ("fr", "eco", "sw", "vf", "ef", "eb", "viscb", "hb", "race")


@dataclass(frozen=True)
class DerivedRelations:
    fr: Relation
    eco: Relation
    sw: Relation
    vf: Relation
    ef: Relation
    eb: Relation
    viscb: Relation
    hb: Relation
    race: Relation


@dataclass(frozen=True, eq=False)
class ExecutionGraph:
    events: tuple
    sb: Relation = field(default_factory=Relation)
    thd: Relation = field(default_factory=Relation)
    rf: Relation = field(default_factory=Relation)
    mo: Relation = field(default_factory=Relation)
    cbo: Relation = field(default_factory=Relation)

    def __eq__(self, other):
        return isinstance(other, ExecutionGraph) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def key(self):
        return (frozenset(self.events),) + tuple(getattr(self, r).pairs for r in BASE_RELATIONS)

    def event(self, i: int) -> Event:
        return self.by_id[i]

    @cached_property
    def by_id(self) -> dict:
        return {e.id: e for e in self.events}

    @cached_property
    def ids(self) -> frozenset:
        return frozenset(e.id for e in self.events)

    def of(self, kinds, addr=None, dirty=None) -> frozenset:
        """Ids of events of the given kinds (optionally one address / dirty bit)."""
        if isinstance(kinds, str):
            kinds = {kinds}
        return frozenset(
            e.id for e in self.events
            if e.kind in kinds
            and (addr is None or e.addr == addr)
            and (dirty is None or e.dirty == dirty)
        )

    def ident(self, kinds, dirty=None) -> Relation:
        """``[A]``: the identity relation on events of kind set A."""
        return Relation.identity(self.of(kinds, dirty=dirty))

    def addresses(self) -> list:
        return sorted({e.addr for e in self.events})

    # attribute relations
    @cached_property
    def addr_rel(self) -> Relation:
        return Relation((a.id, b.id) for a in self.events for b in self.events if a.addr == b.addr)

    @cached_property
    def val_rel(self) -> Relation:
        """Pairs where the source's written value equals the target's read value."""
        return Relation(
            (a.id, b.id) for a in self.events for b in self.events
            if a.wval is not None and b.rval is not None and a.wval == b.rval
        )

    @cached_property
    def dirty_rel(self) -> Relation:
        return Relation(
            (a.id, b.id) for a in self.events for b in self.events
            if a.dirty is not None and a.dirty == b.dirty
        )

    @cached_property
    def id_rel(self) -> Relation:
        return Relation.identity(self.ids)

    @cached_property
    def derived(self) -> DerivedRelations:
        return derive(self)

    def with_events(self, events, **rels) -> "ExecutionGraph":
        return replace(self, events=tuple(events), **rels)

    def to_dot(self, derived: bool = False, name: str = "G") -> str:
        return to_dot(self, derived=derived, name=name)


def derive(g: ExecutionGraph) -> DerivedRelations:
    """Compute fr, eco, sw, vf, ef, eb, viscb, hb and race."""
    cbo, rf, mo, sb = g.cbo, g.rf, g.mo, g.sb
    fr = rf.inverse().compose(mo)
    eco = rf.union(mo, fr).transitive_closure()

    rmw, rmw_cb = g.ident(RMW), g.ident(RMW_CB)
    sw = rmw.compose(rf).compose(rmw).union(rmw_cb.compose(cbo).compose(rmw_cb))

    m_e, m_s = g.ident(M_E), g.ident(M_S)
    e_s, e_e = g.ident(E_S), g.ident(E_E)
    cb_se = g.ident(CB_SE)
    through_se = cb_se.compose(cbo)

    def first_after(src: Relation, dst: Relation) -> Relation:
        # src;cbo;dst minus src;cbo;CB_se;cbo;dst
        direct = src.compose(cbo).compose(dst)
        shadow = src.compose(cbo).compose(through_se).compose(dst)
        return direct - shadow

    vf = first_after(m_e, g.ident(CB_ME))
    ef = first_after(m_e, e_s)
    eb = first_after(e_e, g.ident(FL))

    vis_src = g.ident(WRITES_CB | {M_E})
    vis_dst = g.ident(READS_CB | {E_S})
    shadowing = g.ident(CB_SE | WRITES_CB)
    viscb = vis_src.compose(cbo).compose(vis_dst) - vis_src.compose(cbo).compose(shadowing).compose(cbo).compose(vis_dst)

    inits = g.of(INIT)
    init_edges = Relation.cross(inits, g.ids - inits)
    hb = init_edges.union(
        sb, sw, vf, eb,
        m_e.compose(cbo).compose(e_s),
        e_e.compose(cbo).compose(m_s),
    ).transitive_closure()

    plain = g.of({W, R, W_CB, R_CB})
    reads, reads_cb = g.of(R), g.of(R_CB)
    conflict = {
        (a, b) for a in plain for b in plain
        if not ((a in reads and b in reads) or (a in reads_cb and b in reads_cb))
    }
    race = (Relation(conflict) & g.addr_rel) - g.id_rel.union(hb, hb.inverse())
    return DerivedRelations(fr, eco, sw, vf, ef, eb, viscb, hb, race)


class GraphBuilder:
    """Incremental construction of an execution graph with dense ids."""

    def __init__(self):
        self.events = []
        self.rels = {r: set() for r in BASE_RELATIONS}
        self.threads = {}

    def add(self, kind, addr, rval=None, wval=None, dirty=None, thread=None) -> int:
        i = len(self.events)
        pos = 0
        if thread is not None:
            members = self.threads.setdefault(thread, [])
            pos = len(members)
            for j in members:
                self.rels["sb"].add((j, i))
                self.rels["thd"].add((j, i))
                self.rels["thd"].add((i, j))
            members.append(i)
        self.events.append(Event(i, kind, addr, rval, wval, dirty, thread, pos))
        return i

    def init(self, addr, value=0) -> int:
        return self.add(INIT, addr, wval=value)

    def edge(self, rel, a, b):
        self.rels[rel].add((a, b))

    def order(self, rel, seq):
        """Add a strict total order over ``seq`` to ``rel``."""
        self.rels[rel] |= Relation.chain(seq).pairs

    def build(self) -> ExecutionGraph:
        return ExecutionGraph(tuple(self.events), **{k: Relation(v) for k, v in self.rels.items()})


_COLOURS = {
    "sb": "black", "rf": "red", "mo": "blue", "cbo": "darkgreen", "thd": "grey",
    "fr": "orange", "hb": "purple", "vf": "brown", "ef": "cyan", "eb": "magenta",
    "viscb": "olive", "sw": "pink", "eco": "gold", "race": "crimson",
}


def _reduce(rel: Relation) -> Relation:
    """Drop edges implied by transitivity, for tidier pictures."""
    succ = rel.succ()
    keep = set()
    for a, b in rel.pairs:
        if not any(b in succ.get(c, ()) for c in succ[a] if c not in (a, b)):
            keep.add((a, b))
    return Relation(keep)


def to_dot(g: ExecutionGraph, derived: bool = False, name: str = "G") -> str:
    lines = [f'digraph "{name}" {{', "  node [shape=box, fontname=monospace];"]
    by_thread = {}
    for e in g.events:
        by_thread.setdefault(e.thread, []).append(e)
    for n, (t, evs) in enumerate(sorted(by_thread.items(), key=lambda kv: str(kv[0]))):
        if t is not None:
            lines.append(f'  subgraph "cluster_{n}" {{ label="{t}";')
        for e in evs:
            lines.append(f'    e{e.id} [label="{e.id}: {e.label()}"];')
        if t is not None:
            lines.append("  }")
    rels = {r: getattr(g, r) for r in ("sb", "rf", "mo", "cbo")}
    if derived:
        d = g.derived
        rels.update({r: getattr(d, r) for r in ("fr", "hb", "vf", "eb", "viscb", "race")})
    for r, rel in rels.items():
        shown = _reduce(rel) if r in ("sb", "mo", "cbo", "hb") else rel
        for a, b in sorted(shown):
            lines.append(f'  e{a} -> e{b} [label="{r}", color="{_COLOURS[r]}", fontcolor="{_COLOURS[r]}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
