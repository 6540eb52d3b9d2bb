"""The täkō machine as a transition system.

Each tile t has four caching components: core L1 (id 4t), engine L1 (4t+1),
L2 (4t+2) and an L3 shard (4t+3).  Memory is component 4T.  The L2 is the
directory for its two L1s, and the home L3 shard is the directory for all
L2s.  Directories block: one request per line at a time, acks collected at
the directory, no sibling forwarding.  Messages that cannot be handled in
the receiver's current state stay in the network (a stall).

States are immutable tuples so they can be hashed into the visited set.
A ghost component records the partial execution graph built so far; it
never influences which transitions are enabled.
"""
from __future__ import annotations

import bisect
import hashlib
from typing import NamedTuple

from .. import litmus as L
from ..graph import (
    E_E, E_S, FL, M_E, M_S, R, R_CB, RMW, RMW_CB, W, W_CB,
)
from .config import Config, accessed, advance, compile_body, _test

# line states, child side
ISD, IMD, SMD, S, M, SIA, MIA = "IS_D", "IM_D", "SM_D", "S", "M", "SI_A", "MI_A"
READABLE = (S, M, SMD)
# L3 entry states
V, FILL, WB = "V", "F", "WB"
_PENDING = (ISD, IMD, FILL)

# message kinds
GETS, GETM, PUTS, PUTM = "GetS", "GetM", "PutS", "PutM"
DATAS, DATAM, INV, INVACK, RECALL, RECALLACK, PUTACK = (
    "DataS", "DataM", "Inv", "InvAck", "Recall", "RecallAck", "PutAck")
MEMREAD, MEMDATA, MEMWRITE, MEMACK = "MemRead", "MemData", "MemWrite", "MemAck"
_CARRY = (DATAS, DATAM, PUTM, RECALLACK)


class DisabledTransition(ValueError):
    pass


class Transition(NamedTuple):
    label: str  # PerformInst, SendGetS/M, RecvMsg, Evict, ScheduleCb, CbStart, CbEnd, MemOp, NoOp
    comp: int
    addr: int | None = None
    val: object = None
    info: object = None

    def log_line(self, step: int, machine: "Machine") -> str:
        a = machine.addr_names[self.addr] if self.addr is not None else "-"
        v = "-" if self.val is None else self.val
        return (f"step={step} comp={machine.comp_name(self.comp)} label={self.describe()} "
                f"addr={a} val={v}")

    def describe(self) -> str:
        if self.label == "RecvMsg":
            return f"RecvMsg({self.info[2]})"
        if self.label in ("ScheduleCb", "CbStart", "CbEnd"):
            return f"{self.label}({self.info})"
        if self.label == "PerformInst":
            return f"PerformInst({self.info[0]},{self.info[1]})"
        return self.label


# global stutter step; accepted by apply but never listed as enabled
NOOP = Transition("NoOp", -1)


class MachineState(NamedTuple):
    threads: tuple    # per core thread: (pc, regs as sorted pairs)
    frames: tuple     # per tile: None or (ai, kind, pc, regs, local, dirty)
    caches: tuple     # per cache component: per address entry or None
    net: tuple        # sorted multiset of messages
    cbq: tuple        # per address: FIFO of (kind, value, dirty, seq)
    cbr: tuple        # per address: FIFO of OnMiss results
    mem: tuple        # per address: (value, writer) or None
    misses: tuple     # per address OnMiss count
    fifo: tuple       # per address: (next enqueue seq, next expected start seq)
    gdirty: tuple     # per address: written since the last clean fill
    cbregs: tuple     # per callback scope: registers of its last instance
    ghost: tuple      # (thread events, instances, mo, cbo)

    def digest(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


# message: (dst, src, kind, ai, val, dirty, wref)
def _msg(dst, src, kind, ai, val=None, dirty=False, wref=None):
    return (dst, src, kind, ai, val, dirty, wref)


def _mkey(m):
    # total, run-independent order on messages (None is not comparable)
    return (m[0], m[1], m[2], m[3], -1 if m[4] is None else m[4], m[5], m[6] or ())


class _Work:
    """Copy-on-write editor producing the next MachineState."""

    def __init__(self, s: MachineState):
        self.s = s
        self.caches = None
        self.net = None
        self.f = {}

    def entry(self, comp, ai):
        c = self.caches[comp] if self.caches and self.caches[comp] is not None else self.s.caches[comp]
        return c[ai]

    def set_entry(self, comp, ai, e):
        if self.caches is None:
            self.caches = [None] * len(self.s.caches)
        if self.caches[comp] is None:
            self.caches[comp] = list(self.s.caches[comp])
        self.caches[comp][ai] = e

    def send(self, m):
        if self.net is None:
            self.net = list(self.s.net)
        bisect.insort(self.net, m, key=_mkey)

    def consume(self, m):
        if self.net is None:
            self.net = list(self.s.net)
        self.net.remove(m)

    def get(self, field):
        return self.f[field] if field in self.f else list(getattr(self.s, field))

    def put(self, field, value):
        self.f[field] = value

    def set_at(self, field, i, value):
        lst = self.get(field)
        lst[i] = value
        self.f[field] = lst

    def build(self) -> MachineState:
        d = {}
        if self.caches is not None:
            d["caches"] = tuple(tuple(c) if c is not None else self.s.caches[i]
                                for i, c in enumerate(self.caches))
        if self.net is not None:
            d["net"] = tuple(self.net)
        for k, v in self.f.items():
            d[k] = tuple(v) if isinstance(v, list) else v
        return self.s._replace(**d)


class Machine:
    def __init__(self, config: Config):
        self.config = c = config
        p = c.program
        self.program = p
        self.T = c.num_tiles
        self.addr_names = [a.name for a in p.addresses]
        self.ai = {n: i for i, n in enumerate(self.addr_names)}
        self.phantom = [a.kind == L.PHANTOM for a in p.addresses]
        self.home = [c.home(n) for n in self.addr_names]
        self.K = c.max_callbacks
        self.mut = c.mutations
        self.MEM = 4 * self.T
        self.thread_code = [compile_body(t.body, self.ai) for t in p.threads]
        self.thread_names = [t.name for t in p.threads]
        self.thread_tile = [i % self.T for i in range(len(p.threads))]
        regnames = p.registers()
        self.thread_regs = [regnames[t.name] for t in p.threads]
        self.scope_regs = regnames
        # callback scopes: (kind, ai) -> index
        self.scopes = []
        self.scope_code = []
        for ai, n in enumerate(self.addr_names):
            if not self.phantom[ai]:
                continue
            for kind in L.CALLBACK_KINDS:
                cb = p.callback(kind, n)
                body = cb.body if cb else ()
                self.scopes.append((kind, ai))
                self.scope_code.append(compile_body(body, self.ai, n, kind == L.ONMISS))
        self.scope_index = {k: i for i, k in enumerate(self.scopes)}
        # addresses each L1 may fetch on its own
        n_addr = len(self.addr_names)
        self.fetch_s = [set() for _ in range(4 * self.T)]
        self.fetch_m = [set() for _ in range(4 * self.T)]
        for i, code in enumerate(self.thread_code):
            r, w = accessed(code)
            comp = 4 * self.thread_tile[i]
            self.fetch_s[comp] |= r | w
            self.fetch_m[comp] |= w
        for (kind, ai), code in zip(self.scopes, self.scope_code):
            r, w = accessed(code)
            comp = 4 * self.home[ai] + 1
            self.fetch_s[comp] |= r | w
            self.fetch_m[comp] |= w
        # any core may prefetch a phantom line, so callbacks can run unrequested
        for t in range(self.T):
            self.fetch_s[4 * t] |= {ai for ai in range(n_addr) if self.phantom[ai]}
        self.fetch_s = [sorted(x) for x in self.fetch_s]
        self.fetch_m = [sorted(x) for x in self.fetch_m]
        self.n_addr = n_addr

    # -- naming -------------------------------------------------------------
    def comp_name(self, comp: int) -> str:
        if comp == self.MEM:
            return "mem"
        if comp < 0:
            return "sys"
        t, k = divmod(comp, 4)
        return f"t{t}." + ("l1c", "l1e", "l2", "l3")[k]

    def capacity(self, comp):
        k = comp % 4
        return (self.config.l1_size, self.config.l1_size, self.config.l2_size, self.config.l3_size)[k]

    # -- initial state --------------------------------------------------------
    def init_state(self) -> MachineState:
        n = self.n_addr
        threads = []
        for code in self.thread_code:
            pc, regs, _ = advance(code, 0, {}, None)
            threads.append((pc, tuple(sorted(regs.items()))))
        mem = tuple(None if self.phantom[i] else (self.program.addresses[i].initial, ("I", i))
                    for i in range(n))
        empty = tuple(None for _ in range(n))
        return MachineState(
            threads=tuple(threads),
            frames=tuple(None for _ in range(self.T)),
            caches=tuple(empty for _ in range(4 * self.T)),
            net=(),
            cbq=tuple(() for _ in range(n)),
            cbr=tuple(() for _ in range(n)),
            mem=mem,
            misses=tuple(0 for _ in range(n)),
            fifo=tuple((0, 0) for _ in range(n)),
            gdirty=tuple(False for _ in range(n)),
            cbregs=tuple(None for _ in self.scopes),
            ghost=(tuple(() for _ in self.thread_code), tuple(() for _ in range(n)),
                   tuple(() for _ in range(n)), tuple(() for _ in range(n))),
        )

    # -- queries ----------------------------------------------------------------
    def threads_done(self, s) -> bool:
        return all(pc >= len(code) for (pc, _), code in zip(s.threads, self.thread_code))

    def quiescent(self, s) -> bool:
        return (self.threads_done(s) and all(f is None for f in s.frames)
                and not any(s.cbq) and not any(s.cbr))

    def _used(self, s, comp):
        """Lines holding data; fills in flight sit in MSHRs and do not count."""
        return sum(1 for e in s.caches[comp] if e is not None and e[0] not in _PENDING)

    def _room(self, s, comp):
        return self._used(s, comp) < self.capacity(comp)

    def flush_ok(self, s, ai) -> bool:
        if "flush_nonblocking" in self.mut:
            return True
        # requests still waiting for a fill hold no data and do not block
        if any(c[ai] is not None and c[ai][0] not in _PENDING for c in s.caches):
            return False
        if s.cbq[ai] or s.cbr[ai]:
            return False
        if any(f is not None and f[0] == ai for f in s.frames):
            return False
        return not any(m[3] == ai and m[2] in _CARRY for m in s.net)

    def outcome(self, s) -> tuple:
        """Registers at a quiescent state, keyed like enumeration outcomes."""
        out = {}
        for name, (pc, regs), regnames in zip(self.thread_names, s.threads, self.thread_regs):
            d = dict(regs)
            for r in regnames:
                out[(name, r)] = d.get(r, 0)
        for (kind, ai), regs in zip(self.scopes, s.cbregs):
            if regs is None:
                continue
            scope = f"{kind}[{self.addr_names[ai]}]"
            d = dict(regs)
            for r in self.scope_regs.get(scope, ()):
                out[(scope, r)] = d.get(r, 0)
        return tuple(sorted(out.items()))

    # -- transitions ------------------------------------------------------------
    def successors(self, s: MachineState) -> list:
        out = []
        self._cores(s, out)
        self._engines(s, out)
        self._environment(s, out)
        self._deliveries(s, out)
        return out

    def enabled(self, s) -> list:
        return [t for t, _ in self.successors(s)]

    def apply(self, s, t: Transition) -> MachineState:
        if t == NOOP:
            return s
        for tt, nxt in self.successors(s):
            if tt == t:
                return nxt
        raise DisabledTransition(str(t))

    # instruction execution shared by cores and engines
    def _perform(self, s, comp, code, pc, regs, local, ref, addev):
        """Try to commit code[pc] at L1 ``comp``.

        ``ref`` is the ghost reference the new event will get; ``addev``
        records the event in the ghost and returns (work, ...).  Returns
        (work, pc, regs) or None if the access cannot commit yet.
        """
        op = code[pc]
        k, ai = op[0], op[1]
        ph = self.phantom[ai]
        if k == "fl":
            if not self.flush_ok(s, ai):
                return None
            w = _Work(s)
            addev(w, (FL, ai, None, None, None, None), ai, False)
            return w, pc + 1, regs, ("flush", None)
        e = s.caches[comp][ai]
        if e is None:
            return None
        st = e[0]
        if k in ("ld", "brld"):
            if st not in READABLE:
                return None
            val = e[1]
            w = _Work(s)
            src = ("I", ai) if "wrong_rf_ghost" in self.mut else e[3]
            addev(w, (R_CB if ph else R, ai, val, None, None, None if ph else src), ai, False)
            regs = dict(regs)
            if k == "ld":
                regs[op[2]] = val
                return w, pc + 1, regs, ("load", val)
            return w, (pc + 1 if _test(op[2], val, op[3]) else op[4]), regs, ("load", val)
        writable = (M, S) if "store_without_M" in self.mut else (M,)
        if st not in writable:
            return None
        w = _Work(s)
        if k == "st":
            val = op[2]
            addev(w, (W_CB if ph else W, ai, None, val, None, None), ai, True)
            w.set_entry(comp, ai, (st, val, True, ref))
            w.set_at("gdirty", ai, True)
            return w, pc + 1, regs, ("store", val)
        # rmw
        old, val = e[1], op[3]
        src = ("I", ai) if "wrong_rf_ghost" in self.mut else e[3]
        addev(w, (RMW_CB if ph else RMW, ai, old, val, None, None if ph else src), ai, True)
        w.set_entry(comp, ai, (st, val, True, ref))
        w.set_at("gdirty", ai, True)
        regs = dict(regs)
        if op[2] is not None:
            regs[op[2]] = old
        return w, pc + 1, regs, ("rmw", val)

    def _ghost_add(self, w, where, ev, ai, ref, writes):
        gth, ginst, gmo, gcbo = w.get("ghost") if "ghost" in w.f else w.s.ghost
        if where[0] == "T":
            gth = list(gth)
            gth[where[1]] = gth[where[1]] + (ev,)
            gth = tuple(gth)
        else:
            _, cai = where
            ginst = list(ginst)
            kind, evs = ginst[cai][-1]
            ginst[cai] = ginst[cai][:-1] + ((kind, evs + (ev,)),)
            ginst = tuple(ginst)
        if self.phantom[ai]:
            gcbo = list(gcbo)
            gcbo[ai] = gcbo[ai] + (ref,)
            gcbo = tuple(gcbo)
        elif writes:
            gmo = list(gmo)
            gmo[ai] = gmo[ai] + (ref,)
            gmo = tuple(gmo)
        w.put("ghost", (gth, ginst, gmo, gcbo))

    def _cores(self, s, out):
        gth = s.ghost[0]
        for i, code in enumerate(self.thread_code):
            pc, regs = s.threads[i]
            if pc >= len(code):
                continue
            comp = 4 * self.thread_tile[i]
            ref = ("T", i, len(gth[i]))

            def addev(w, ev, ai, writes, i=i, ref=ref):
                self._ghost_add(w, ("T", i), ev, ai, ref, writes)

            r = self._perform(s, comp, code, pc, dict(regs), None, ref, addev)
            if r is None:
                continue
            w, pc2, regs2, what = r
            pc2, regs2, _ = advance(code, pc2, dict(regs2), None)
            w.set_at("threads", i, (pc2, tuple(sorted(regs2.items()))))
            op = code[pc]
            out.append((Transition("PerformInst", comp, op[1], what[1], (self.thread_names[i], what[0])), w.build()))

    def _engines(self, s, out):
        for t in range(self.T):
            fr = s.frames[t]
            if fr is None:
                # CbStart for each address homed here with a pending request
                for ai in range(self.n_addr):
                    if self.home[ai] != t or not s.cbq[ai]:
                        continue
                    q = s.cbq[ai]
                    pick = len(q) - 1 if "cb_fifo_violation" in self.mut else 0
                    kind, val, dirty, seq = q[pick]
                    w = _Work(s)
                    w.set_at("cbq", ai, q[:pick] + q[pick + 1:])
                    enq, _ = s.fifo[ai]
                    w.set_at("fifo", ai, (enq, seq + 1))
                    gth, ginst, gmo, gcbo = s.ghost
                    k = len(ginst[ai])
                    if kind == L.ONMISS:
                        ev = (M_S, ai, None, None, None, None)
                        local = None
                    else:
                        ev = (E_S, ai, val, None, dirty, None)
                        local = val
                    ginst = ginst[:ai] + (ginst[ai] + ((kind, (ev,)),),) + ginst[ai + 1:]
                    gcbo = gcbo[:ai] + (gcbo[ai] + (("C", ai, k, 0),),) + gcbo[ai + 1:]
                    w.put("ghost", (gth, ginst, gmo, gcbo))
                    code = self.scope_code[self.scope_index[(kind, ai)]]
                    pc, regs, local = advance(code, 0, {}, local)
                    w.set_at("frames", t, (ai, kind, pc, tuple(sorted(regs.items())), local, dirty))
                    out.append((Transition("CbStart", 4 * t + 1, ai, val, kind), w.build()))
                continue
            ai, kind, pc, regs, local, dirty = fr
            code = self.scope_code[self.scope_index[(kind, ai)]]
            if pc >= len(code):
                w = _Work(s)
                gth, ginst, gmo, gcbo = s.ghost
                if "drop_cb_end_event" not in self.mut:
                    k = len(ginst[ai]) - 1
                    ikind, evs = ginst[ai][k]
                    if kind == L.ONMISS:
                        ev = (M_E, ai, None, local, None, None)
                    else:
                        ev = (E_E, ai, None, None, dirty, None)
                    ref = ("C", ai, k, len(evs))
                    ginst = ginst[:ai] + (ginst[ai][:k] + ((ikind, evs + (ev,)),),) + ginst[ai + 1:]
                    gcbo = gcbo[:ai] + (gcbo[ai] + (ref,),) + gcbo[ai + 1:]
                    w.put("ghost", (gth, ginst, gmo, gcbo))
                if kind == L.ONMISS:
                    v = local + 1 if "onmiss_value_corrupt" in self.mut else local
                    w.set_at("cbr", ai, s.cbr[ai] + (v,))
                w.set_at("cbregs", self.scope_index[(kind, ai)], regs)
                w.set_at("frames", t, None)
                out.append((Transition("CbEnd", 4 * t + 1, ai, local if kind == L.ONMISS else None, kind),
                            w.build()))
                continue
            comp = 4 * t + 1
            k = len(s.ghost[1][ai]) - 1
            ref = ("C", ai, k, len(s.ghost[1][ai][k][1]))

            def addev(w, ev, a2, writes, ai=ai, ref=ref):
                self._ghost_add(w, ("C", ai), ev, a2, ref, writes)

            r = self._perform(s, comp, code, pc, dict(regs), local, ref, addev)
            if r is None:
                continue
            w, pc2, regs2, what = r
            pc2, regs2, local2 = advance(code, pc2, dict(regs2), local)
            w.set_at("frames", t, (ai, kind, pc2, tuple(sorted(regs2.items())), local2, dirty))
            op = code[pc]
            scope = f"{kind}[{self.addr_names[ai]}]"
            out.append((Transition("PerformInst", comp, op[1], what[1], (scope, what[0])), w.build()))

    def _environment(self, s, out):
        T = self.T
        for t in range(T):
            for comp in (4 * t, 4 * t + 1):
                line = s.caches[comp]
                parent = 4 * t + 2
                for ai in self.fetch_s[comp]:
                    if line[ai] is None:
                        w = _Work(s)
                        w.set_entry(comp, ai, (ISD, None, False, None))
                        w.send(_msg(parent, comp, GETS, ai))
                        out.append((Transition("SendGetS", comp, ai), w.build()))
                for ai in self.fetch_m[comp]:
                    e = line[ai]
                    if e is None:
                        nxt = (IMD, None, False, None)
                    elif e is not None and e[0] == S:
                        nxt = (SMD,) + e[1:]
                    else:
                        continue
                    w = _Work(s)
                    w.set_entry(comp, ai, nxt)
                    w.send(_msg(parent, comp, GETM, ai))
                    out.append((Transition("SendGetM", comp, ai), w.build()))
                # evictions at L1
                for ai, e in enumerate(line):
                    if e is None or e[0] not in (S, M):
                        continue
                    w = _Work(s)
                    if e[0] == S:
                        w.set_entry(comp, ai, (SIA,) + e[1:])
                        w.send(_msg(parent, comp, PUTS, ai))
                    else:
                        w.set_entry(comp, ai, (MIA,) + e[1:])
                        w.send(_msg(parent, comp, PUTM, ai, e[1], e[2], e[3]))
                    out.append((Transition("Evict", comp, ai, e[1]), w.build()))
            # L2 evictions
            comp = 4 * t + 2
            for ai, e in enumerate(s.caches[comp]):
                if e is None or e[0] not in (S, M) or e[6] is not None or e[7] is not None:
                    continue
                if (e[4] or e[5] >= 0) and "break_inclusion" not in self.mut:
                    continue
                home = 4 * self.home[ai] + 3
                w = _Work(s)
                if e[0] == S:
                    w.set_entry(comp, ai, (SIA, e[1], e[2], e[3], 0, -1, None, None))
                    w.send(_msg(home, comp, PUTS, ai))
                else:
                    w.set_entry(comp, ai, (MIA, e[1], e[2], e[3], 0, -1, None, None))
                    w.send(_msg(home, comp, PUTM, ai, e[1], e[2], e[3]))
                out.append((Transition("Evict", comp, ai, e[1]), w.build()))
            # L3 evictions
            comp = 4 * t + 3
            for ai, e in enumerate(s.caches[comp]):
                if e is None or e[0] != V or e[4] or e[5] >= 0 or e[6] is not None:
                    continue
                w = _Work(s)
                w.set_at("gdirty", ai, False)
                if not self.phantom[ai]:
                    if e[2]:
                        w.set_entry(comp, ai, (WB, e[1], False, e[3], 0, -1, None))
                        w.send(_msg(self.MEM, comp, MEMWRITE, ai, e[1], False, e[3]))
                    else:
                        w.set_entry(comp, ai, None)
                else:
                    w.set_entry(comp, ai, None)
                    dirty = e[2]
                    if "evict_wrong_kind" in self.mut:
                        dirty = not dirty
                    kind = L.ONWB if dirty else L.ONEVICT
                    enq, nxt = s.fifo[ai]
                    w.set_at("cbq", ai, s.cbq[ai] + ((kind, e[1], dirty, enq),))
                    w.set_at("fifo", ai, (enq + 1, nxt))
                    if "phantom_in_memory" in self.mut:
                        w.send(_msg(self.MEM, comp, MEMWRITE, ai, e[1], False, None))
                out.append((Transition("Evict", comp, ai, e[1]), w.build()))
        # OnMiss scheduling at the L3 home of each phantom address
        for ai in range(self.n_addr):
            if not self.phantom[ai] or s.misses[ai] >= self.K:
                continue
            home = 4 * self.home[ai] + 3
            present = s.caches[home][ai] is not None
            if present and "double_onmiss" not in self.mut:
                continue
            if any(q[0] == L.ONMISS for q in s.cbq[ai]) or s.cbr[ai]:
                continue
            fr = s.frames[self.home[ai]]
            if fr is not None and fr[0] == ai and fr[1] == L.ONMISS:
                continue
            w = _Work(s)
            enq, nxt = s.fifo[ai]
            w.set_at("cbq", ai, s.cbq[ai] + ((L.ONMISS, None, False, enq),))
            w.set_at("fifo", ai, (enq + 1, nxt))
            w.set_at("misses", ai, s.misses[ai] + 1)
            out.append((Transition("ScheduleCb", home, ai, None, L.ONMISS), w.build()))
        # OnMiss results install at the home shard
        for ai in range(self.n_addr):
            if not s.cbr[ai]:
                continue
            home = 4 * self.home[ai] + 3
            e = s.caches[home][ai]
            if e is not None:
                if "double_onmiss" not in self.mut:
                    continue
                nxt = (V, s.cbr[ai][0], False, None) + e[4:]
            else:
                if not self._room(s, home):
                    continue
                nxt = (V, s.cbr[ai][0], False, None, 0, -1, None)
            w = _Work(s)
            w.set_entry(home, ai, nxt)
            w.set_at("cbr", ai, s.cbr[ai][1:])
            w.set_at("gdirty", ai, False)
            out.append((Transition("RecvMsg", home, ai, s.cbr[ai][0],
                                   (home, 4 * self.home[ai] + 1, "CbResp", ai)), w.build()))

    # -- message handling -------------------------------------------------------
    def _deliveries(self, s, out):
        seen = set()
        for m in s.net:
            if m in seen:
                continue
            seen.add(m)
            dst = m[0]
            if dst == self.MEM:
                w = self._recv_mem(s, m)
                label = "MemOp"
            else:
                lvl = dst % 4
                if lvl in (0, 1):
                    w = self._recv_l1(s, m)
                elif lvl == 2:
                    w = self._recv_l2(s, m)
                else:
                    w = self._recv_l3(s, m)
                label = "RecvMsg"
            if w is not None:
                out.append((Transition(label, dst, m[3], m[4], m), w.build()))

    def _recv_mem(self, s, m):
        dst, src, kind, ai = m[:4]
        w = _Work(s)
        w.consume(m)
        if kind == MEMREAD:
            val, wref = s.mem[ai]
            w.send(_msg(src, dst, MEMDATA, ai, val, False, wref))
        else:
            w.set_at("mem", ai, (m[4], m[6]))
            w.send(_msg(src, dst, MEMACK, ai))
        return w

    def _recv_l1(self, s, m):
        dst, src, kind, ai, val, dirty, wref = m
        e = s.caches[dst][ai]
        st = e[0] if e is not None else None
        w = _Work(s)
        if kind in (DATAS, DATAM) and st != SMD and not self._room(s, dst):
            return None
        if kind == DATAS and st == ISD:
            w.set_entry(dst, ai, (S, val, False, wref))
        elif kind == DATAM and st in (IMD, SMD):
            w.set_entry(dst, ai, (M, val, False, wref))
        elif kind == INV and st in (S, SMD, SIA):
            if st == S and "drop_invalidation" not in self.mut:
                w.set_entry(dst, ai, None)
            elif st == SMD:
                w.set_entry(dst, ai, (IMD, None, False, None))
            w.send(_msg(src, dst, INVACK, ai))
        elif kind == RECALL and st in (M, MIA):
            if st == M:
                w.set_entry(dst, ai, None)
            w.send(_msg(src, dst, RECALLACK, ai, e[1], e[2], e[3]))
        elif kind == PUTACK and st in (SIA, MIA):
            w.set_entry(dst, ai, None)
        else:
            return None
        w.consume(m)
        return w

    # directory helpers; entries are tuples, see _dir_fields
    def _children(self, dst):
        if dst % 4 == 2:
            t = dst // 4
            return [4 * t, 4 * t + 1]
        return [4 * t + 2 for t in range(self.T)]

    def _child_index(self, dst, src):
        return src % 4 if dst % 4 == 2 else src // 4

    def _recv_l2(self, s, m):
        dst, src, kind, ai, val, dirty, wref = m
        e = s.caches[dst][ai]
        from_parent = src % 4 == 3
        if from_parent:
            return self._l2_from_parent(s, m, e)
        return self._dir_from_child(s, m, e, l3=False)

    def _recv_l3(self, s, m):
        dst, src, kind, ai, val, dirty, wref = m
        e = s.caches[dst][ai]
        if src == self.MEM:
            w = _Work(s)
            w.consume(m)
            if kind == MEMACK:
                if e is not None and e[0] == WB:
                    w.set_entry(dst, ai, None)
                return w
            if e is None or e[0] != FILL or not self._room(s, dst):
                return None
            e = (V, val, False, wref) + e[4:]
            self._finish_busy(w, dst, ai, e, l3=True)
            return w
        return self._dir_from_child(s, m, e, l3=True)

    # L2 entry: (st, val, dirty, wref, sharers, owner, busy, pbusy)
    # L3 entry: (st, val, dirty, wref, sharers, owner, busy)
    # busy: (req kind, child index, pending mask)   pbusy: (kind, pending mask)

    def _dir_from_child(self, s, m, e, l3):
        dst, src, kind, ai, val, dirty, wref = m
        c = self._child_index(dst, src)
        bit = 1 << c
        w = _Work(s)
        children = self._children(dst)
        if kind in (GETS, GETM):
            req = "S" if kind == GETS else "M"
            if e is None:
                if l3:
                    if self.phantom[ai]:
                        return None  # phantom lines arrive only through OnMiss
                    w.set_entry(dst, ai, (FILL, None, False, None, 0, -1, (req, c, 0)))
                    w.send(_msg(self.MEM, dst, MEMREAD, ai))
                else:
                    st = ISD if req == "S" else IMD
                    w.set_entry(dst, ai, (st, None, False, None, 0, -1, (req, c, 0), None))
                    w.send(_msg(4 * self.home[ai] + 3, dst, kind, ai))
                w.consume(m)
                return w
            if e[6] is not None or (not l3 and e[7] is not None):
                return None
            st = e[0]
            if l3 and st != V:
                return None
            if not l3 and st not in (S, M):
                return None
            if not l3 and req == "M" and st == S:
                w.set_entry(dst, ai, (SMD,) + e[1:6] + ((req, c, 0), None))
                w.send(_msg(4 * self.home[ai] + 3, dst, GETM, ai))
                w.consume(m)
                return w
            w.consume(m)
            e = e[:6] + ((req, c, 0),) + e[7:]
            self._start_local(w, dst, ai, e, l3)
            return w
        if kind in (PUTS, PUTM):
            # a put from a child we await an ack from waits for that ack; a
            # put from a child that is neither sharer nor owner is stale and
            # only acked
            if e is not None and ((e[6] is not None and e[6][2] & bit)
                                  or (not l3 and e[7] is not None and e[7][1] & bit)):
                return None
            w.consume(m)
            if e is not None and (e[4] & bit or e[5] == c):
                if kind == PUTM and e[5] == c:
                    nd = e[2] if "skip_dirty_propagation" in self.mut else (e[2] or dirty)
                    e = (e[0], val, nd, wref, e[4] & ~bit, -1) + e[6:]
                else:
                    e = e[:4] + (e[4] & ~bit,) + e[5:]
                w.set_entry(dst, ai, e)
            w.send(_msg(src, dst, PUTACK, ai))
            return w
        if kind in (INVACK, RECALLACK):
            if e is None:
                return None
            w.consume(m)
            if kind == RECALLACK:
                nd = e[2] if "skip_dirty_propagation" in self.mut else (e[2] or dirty)
                e = (e[0], val, nd, wref, e[4] & ~bit, -1 if e[5] == c else e[5]) + e[6:]
            else:
                e = e[:4] + (e[4] & ~bit,) + e[5:]
            if not l3 and e[7] is not None and e[7][1] & bit:
                pk, mask = e[7]
                mask &= ~bit
                e = e[:7] + ((pk, mask),)
                if mask == 0:
                    self._finish_pbusy(w, dst, ai, e)
                else:
                    w.set_entry(dst, ai, e)
                return w
            if e[6] is not None and e[6][2] & bit:
                req, rc, mask = e[6]
                mask &= ~bit
                e = e[:6] + ((req, rc, mask),) + e[7:]
                if mask == 0:
                    self._finish_busy(w, dst, ai, e, l3)
                else:
                    w.set_entry(dst, ai, e)
                return w
            raise AssertionError(f"unexpected {kind} at {self.comp_name(dst)}")
        return None

    def _start_local(self, w, dst, ai, e, l3):
        """Begin serving a request the directory holds permission for."""
        req, c, _ = e[6]
        children = self._children(dst)
        bit = 1 << c
        sharers, owner = e[4], e[5]
        if req == "S":
            targets = [] if owner < 0 or owner == c else [(owner, RECALL)]
        else:
            targets = [(i, INV) for i in range(len(children)) if sharers >> i & 1 and i != c]
            if owner >= 0 and owner != c:
                targets.append((owner, RECALL))
        mask = 0
        for i, k in targets:
            mask |= 1 << i
            w.send(_msg(children[i], dst, k, ai))
        e = e[:6] + ((req, c, mask),) + e[7:]
        if mask == 0:
            self._finish_busy(w, dst, ai, e, l3)
        else:
            w.set_entry(dst, ai, e)

    def _finish_busy(self, w, dst, ai, e, l3):
        req, c, mask = e[6]
        if mask:
            w.set_entry(dst, ai, e)
            return
        child = self._children(dst)[c]
        if req == "S":
            w.send(_msg(child, dst, DATAS, ai, e[1], False, e[3]))
            e = e[:4] + (e[4] | 1 << c, e[5], None) + e[7:]
        else:
            w.send(_msg(child, dst, DATAM, ai, e[1], False, e[3]))
            e = e[:4] + (0, c, None) + e[7:]
        w.set_entry(dst, ai, e)

    def _finish_pbusy(self, w, dst, ai, e):
        pk, _ = e[7]
        home = 4 * self.home[ai] + 3
        if pk == INV:
            w.send(_msg(home, dst, INVACK, ai))
            if e[0] == SMD:
                w.set_entry(dst, ai, (IMD, None, False, None, 0, -1, e[6], None))
            else:
                w.set_entry(dst, ai, None)
        else:
            w.send(_msg(home, dst, RECALLACK, ai, e[1], e[2], e[3]))
            w.set_entry(dst, ai, None)

    def _l2_from_parent(self, s, m, e):
        dst, src, kind, ai, val, dirty, wref = m
        st = e[0] if e is not None else None
        w = _Work(s)
        children = self._children(dst)
        if kind in (DATAS, DATAM) and st in (ISD, IMD) and not self._room(s, dst):
            return None
        if kind == DATAS and st == ISD:
            w.consume(m)
            e = (S, val, False, wref) + e[4:]
            self._finish_busy(w, dst, ai, e, l3=False)
            return w
        if kind == DATAM and st in (IMD, SMD):
            w.consume(m)
            e = (M, val, False, wref) + e[4:]
            self._start_local(w, dst, ai, e, l3=False)
            return w
        if kind == PUTACK and st in (SIA, MIA):
            w.consume(m)
            w.set_entry(dst, ai, None)
            return w
        if kind == INV:
            if st == SIA:
                w.consume(m)
                w.send(_msg(src, dst, INVACK, ai))
                return w
            if st not in (S, SMD) or e[7] is not None:
                return None
            targets = [i for i in range(len(children)) if e[4] >> i & 1]
        elif kind == RECALL:
            if st == MIA:
                w.consume(m)
                w.send(_msg(src, dst, RECALLACK, ai, e[1], e[2], e[3]))
                return w
            if st != M or e[6] is not None or e[7] is not None:
                return None
            targets = [i for i in range(len(children)) if e[4] >> i & 1]
            if e[5] >= 0:
                targets.append(e[5])
        else:
            return None
        w.consume(m)
        mask = 0
        for i in targets:
            mask |= 1 << i
            w.send(_msg(children[i], dst, RECALL if i == e[5] else INV, ai))
        e = e[:7] + ((kind, mask),)
        if mask == 0:
            self._finish_pbusy(w, dst, ai, e)
        else:
            w.set_entry(dst, ai, e)
        return w

    # -- invariants --------------------------------------------------------------
    def invariants(self, s) -> list:
        """Names of violated state invariants (empty when all hold)."""
        bad = []
        T, n = self.T, self.n_addr
        for t in range(T):
            l2 = s.caches[4 * t + 2]
            for comp in (4 * t, 4 * t + 1):
                for ai, e in enumerate(s.caches[comp]):
                    if e is not None and e[0] in READABLE and l2[ai] is None:
                        bad.append(f"inclusion: {self.addr_names[ai]} in {self.comp_name(comp)} but not L2")
            for ai, e in enumerate(l2):
                if e is not None and e[0] in READABLE:
                    h = s.caches[4 * self.home[ai] + 3][ai]
                    if h is None or h[0] != V:
                        bad.append(f"inclusion: {self.addr_names[ai]} in {self.comp_name(4 * t + 2)} but not L3")
        for ai in range(n):
            name = self.addr_names[ai]
            if self.phantom[ai]:
                if s.mem[ai] is not None or any(m[0] == self.MEM and m[3] == ai for m in s.net):
                    bad.append(f"phantom isolation: {name} reached memory")
            for level in (0, 2):
                comps = [4 * t + k for t in range(T) for k in ((0, 1) if level == 0 else (2,))]
                held = [s.caches[c][ai] for c in comps if s.caches[c][ai] is not None]
                writers = [e for e in held if e[0] == M]
                readers = [e for e in held if e[0] in (S, SMD)]
                if len(writers) > 1 or (writers and readers):
                    bad.append(f"swmr: {name} at level {'L1' if level == 0 else 'L2'}")
                if len({e[1] for e in readers}) > 1:
                    bad.append(f"coherence: shared copies of {name} disagree")
            nxt = s.fifo[ai][1]
            seqs = [q[3] for q in s.cbq[ai]]
            if seqs != sorted(seqs) or any(q < nxt for q in seqs):
                bad.append(f"callback fifo: {name} served out of order")
            if s.gdirty[ai]:
                held = any(c[ai] is not None and c[ai][2] for c in s.caches)
                flying = any(m[3] == ai and m[5] for m in s.net)
                if not (held or flying):
                    bad.append(f"dirty: write to {name} lost its dirty bit")
            else:
                h = s.caches[4 * self.home[ai] + 3][ai]
                if h is not None and h[0] == V and h[2]:
                    bad.append(f"dirty: directory marks {name} dirty without a write")
        return bad
