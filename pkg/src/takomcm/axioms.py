"""The täkō axiom set and the SC reference axiom."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .graph import (
    CB_ME, CB_SE, CALLBACK_CLASS, E_E, E_S, FL, M_E, M_S, MO_WRITERS,
    READS, WRITES_CB, ExecutionGraph,
)
from .relation import Relation


class UnknownAxiom(KeyError):
    pass


def _subset(a: Relation, b: Relation):
    extra = a - b
    if extra.is_empty():
        return True, None
    return False, list(min(extra))


def _irreflexive(r: Relation):
    bad = r.reflexive_elements()
    return (True, None) if not bad else (False, [bad[0], bad[0]])


def _empty(r: Relation):
    return (True, None) if r.is_empty() else (False, list(min(r)))


def _unique_source(targets, rel: Relation, sources):
    """Every target has exactly one ``rel`` predecessor drawn from ``sources``."""
    for t in sorted(targets):
        preds = [s for s in sources if (s, t) in rel]
        if len(preds) != 1:
            return False, [t]
    return True, None


def _per_address_total(g: ExecutionGraph, rel: Relation, kinds):
    for a in g.addresses():
        s = g.of(kinds, addr=a)
        if not s:
            continue
        sub = rel.restrict(s, s)
        if not sub.is_irreflexive():
            x = sub.reflexive_elements()[0]
            return False, [x, x]
        if not sub.is_transitive():
            succ = sub.succ()
            for x, y in sorted(sub):
                for z in sorted(succ.get(y, ())):
                    if (x, z) not in sub:
                        return False, [x, y, z]
        gap = sub.totality_gap(s)
        if gap:
            return False, list(gap)
    return True, None


def rf_wf1(g):
    return _unique_source(g.of(READS), g.rf, g.of(MO_WRITERS))


def rf_wf2(g):
    return _subset(g.rf, g.val_rel & g.addr_rel)


def mo_wf1(g):
    return _per_address_total(g, g.mo, MO_WRITERS)


def mo_wf2(g):
    return _subset(g.mo, g.addr_rel)


def cbo_wf1(g):
    return _per_address_total(g, g.cbo, CB_SE | CB_ME)


def cbo_wf2(g):
    return _subset(g.cbo, g.addr_rel)


def cbo_val(g):
    return _subset(g.derived.viscb, g.val_rel)


def _bracket(g, start, end):
    return g.ident(start).compose(g.thd).compose(g.ident(end))


def thd_m(g):
    return _subset(_bracket(g, M_S, M_E), g.cbo)


def thd_e(g):
    return _subset(_bracket(g, E_S, E_E), g.cbo)


def dirty_wf(g):
    return _subset(_bracket(g, E_S, E_E), g.dirty_rel)


def hb_ax(g):
    return _irreflexive(g.derived.hb)


def vis(g):
    return _irreflexive(g.derived.eco.compose(g.derived.hb))


def rmw_ax(g):
    rf, mo = g.rf, g.mo
    return _irreflexive(rf.union(mo.compose(mo).compose(rf.inverse()), mo.compose(rf)))


def vis_cb(g):
    return _irreflexive(g.cbo.compose(g.derived.hb))


def _adjacent(g, start, end):
    s, e = g.ident(start), g.ident(end)
    return _empty(s.compose(g.cbo).compose(g.cbo).compose(e) & g.thd)


def cbo_m(g):
    return _adjacent(g, M_S, M_E)


def cbo_e(g):
    return _adjacent(g, E_S, E_E)


def ev_dirty(g):
    clean = g.ident(E_S, dirty=False)
    return _empty(g.ident(WRITES_CB).compose(g.derived.viscb).compose(clean))


def wb_dirty(g):
    viscb = g.derived.viscb
    dirty = g.ident(E_S, dirty=True)
    return _empty(viscb.compose(dirty) - g.ident(WRITES_CB).compose(viscb))


def _interleave(g, outer_end, outer_start, inner_start, inner_end):
    cbo = g.cbo
    oe, os_ = g.ident(outer_end), g.ident(outer_start)
    direct = oe.compose(cbo).compose(os_)
    via = oe.compose(cbo).compose(g.ident(inner_start)).compose(g.thd).compose(
        g.ident(inner_end)).compose(cbo).compose(os_)
    return _empty(direct - via)


def oe_int(g):
    return _interleave(g, M_E, M_S, E_S, E_E)


def om_int(g):
    return _interleave(g, E_E, E_S, M_S, M_E)


def _unique_partner(g, ends, starts):
    for e in sorted(g.of(ends)):
        partners = [s for s in g.of(starts) if (s, e) in g.thd]
        if len(partners) != 1:
            return False, [e]
    return True, None


def om_thd(g):
    return _unique_partner(g, M_E, M_S)


def oe_thd(g):
    return _unique_partner(g, E_E, E_S)


def _no_restart(g, start, end):
    s = g.ident(start)
    direct = s.compose(g.cbo).compose(s)
    via = s.compose(g.thd).compose(g.ident(end)).compose(g.cbo).compose(s)
    return _empty(direct - via)


def me_int(g):
    return _no_restart(g, M_S, M_E)


def ee_int(g):
    return _no_restart(g, E_S, E_E)


def vf_wf(g):
    return _unique_source(g.of(CB_ME), g.derived.vf, g.of(M_E))


def ef_wf(g):
    return _unique_source(g.of(E_S), g.derived.ef, g.of(M_E))


def eb_wf(g):
    cbo, eb = g.cbo, g.derived.eb
    ends = g.of(E_E)
    for f in sorted(g.of(FL)):
        addr = g.event(f).addr
        before_all = all((f, m) in cbo for m in g.of(M_S, addr=addr))
        if before_all:
            continue
        if len([e for e in ends if (e, f) in eb]) != 1:
            return False, [f]
    return True, None


AXIOMS = {
    "RfWf1": rf_wf1,
    "RfWf2": rf_wf2,
    "MoWf1": mo_wf1,
    "MoWf2": mo_wf2,
    "CboWf1": cbo_wf1,
    "CboWf2": cbo_wf2,
    "CboVal": cbo_val,
    "ThdM": thd_m,
    "ThdE": thd_e,
    "DirtyWf": dirty_wf,
    "Hb": hb_ax,
    "Vis": vis,
    "RMW": rmw_ax,
    "VisCb": vis_cb,
    "CboM": cbo_m,
    "CboE": cbo_e,
    "EvDirty": ev_dirty,
    "WbDirty": wb_dirty,
    "OEInt": oe_int,
    "OMInt": om_int,
    "OMThd": om_thd,
    "OEThd": oe_thd,
    "MeInt": me_int,
    "EeInt": ee_int,
    "VfWf": vf_wf,
    "EfWf": ef_wf,
    "EbWf": eb_wf,
}


def check_axiom(name: str, g: ExecutionGraph):
    """``(passed, witness)`` for one named axiom; witness is a list of event ids."""
    try:
        fn = AXIOMS[name]
    except KeyError:
        raise UnknownAxiom(name) from None
    return fn(g)


@dataclass
class AxiomResult:
    passed: bool
    witness: list | None = None


@dataclass
class Verdict:
    results: dict = field(default_factory=dict)
    races: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return all(r.passed for r in self.results.values())

    @property
    def failures(self) -> list:
        return [n for n, r in self.results.items() if not r.passed]

    def to_dict(self) -> dict:
        axioms = {}
        for n, r in self.results.items():
            axioms[n] = {"pass": r.passed}
            if r.witness is not None:
                axioms[n]["witness"] = r.witness
        return {"axioms": axioms, "races": [list(p) for p in self.races], "consistent": self.consistent}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def race_pairs(g: ExecutionGraph) -> list:
    return sorted({tuple(sorted(p)) for p in g.derived.race})


def check_all(g: ExecutionGraph) -> Verdict:
    """Evaluate every axiom (no short-circuit) and collect races."""
    v = Verdict()
    for name, fn in AXIOMS.items():
        ok, wit = fn(g)
        v.results[name] = AxiomResult(ok, wit)
    v.races = race_pairs(g)
    return v


# cheap structural axioms first, then the ones needing closures
_FAST_ORDER = (
    "RfWf1", "RfWf2", "MoWf1", "MoWf2", "CboWf1", "CboWf2", "ThdM", "ThdE", "DirtyWf",
    "OMThd", "OEThd", "CboM", "CboE", "MeInt", "EeInt", "OEInt", "OMInt", "RMW",
    "VfWf", "EfWf", "EbWf", "CboVal", "EvDirty", "WbDirty", "Hb", "VisCb", "Vis",
)
assert sorted(_FAST_ORDER) == sorted(AXIOMS)


def first_failure(g: ExecutionGraph) -> str | None:
    """Name of the first failing axiom, short-circuiting; None if consistent."""
    for name in _FAST_ORDER:
        if not AXIOMS[name](g)[0]:
            return name
    return None


def is_consistent(g: ExecutionGraph) -> bool:
    return first_failure(g) is None


class CallbackEventsPresent(ValueError):
    pass


def check_sc(g: ExecutionGraph):
    """SC reference check: acyclic(rf ∪ fr ∪ sb ∪ mo), with fr taken irreflexive."""
    if any(e.kind in CALLBACK_CLASS for e in g.events):
        raise CallbackEventsPresent("SC reference axiom applies only to graphs without callback events")
    # a single-event RMW would otherwise be fr-related to itself
    fr = g.rf.inverse().compose(g.mo) - g.id_rel
    cyc = g.rf.union(fr, g.sb, g.mo).find_cycle()
    return (True, None) if cyc is None else (False, cyc)
