"""Machine configuration and program compilation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .. import litmus as L

MUTATIONS = (
    "drop_cb_end_event",
    "skip_dirty_propagation",
    "cb_fifo_violation",
    "break_inclusion",
    "drop_invalidation",
    "wrong_rf_ghost",
    "flush_nonblocking",
    "onmiss_value_corrupt",
    "evict_wrong_kind",
    "phantom_in_memory",
    "store_without_M",
    "double_onmiss",
)


@dataclass(frozen=True)
class Config:
    program: L.Program
    num_tiles: int = 1
    l1_size: int = 2
    l2_size: int = 2
    l3_size: int = 2
    bank_map: tuple | None = None  # address name -> tile, as sorted pairs
    max_callbacks: int = 2
    mutations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_tiles < 1 or min(self.l1_size, self.l2_size, self.l3_size) < 1:
            raise ValueError("tiles and cache capacities must be positive")
        if self.max_callbacks < 1:
            raise ValueError("max_callbacks must be positive")
        unknown = set(self.mutations) - set(MUTATIONS)
        if unknown:
            raise ValueError(f"unknown mutations: {sorted(unknown)}")
        if self.bank_map is not None:
            bm = dict(self.bank_map)
            names = {a.name for a in self.program.addresses}
            if set(bm) != names or any(not 0 <= t < self.num_tiles for t in bm.values()):
                raise ValueError("bank_map must map every address to a tile")

    def home(self, addr: str) -> int:
        if self.bank_map is not None:
            return dict(self.bank_map)[addr]
        names = [a.name for a in self.program.addresses]
        return names.index(addr) % self.num_tiles

    def to_dict(self) -> dict:
        return {
            "num_tiles": self.num_tiles, "l1_size": self.l1_size, "l2_size": self.l2_size,
            "l3_size": self.l3_size, "max_callbacks": self.max_callbacks,
            "bank_map": dict(self.bank_map) if self.bank_map else None,
            "mutations": sorted(self.mutations),
        }


def load_config(path: str, program: L.Program, **overrides) -> Config:
    """Read a JSON config file; keys mirror :class:`Config` fields."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if raw.get("bank_map"):
        raw["bank_map"] = tuple(sorted(raw["bank_map"].items()))
    raw["mutations"] = frozenset(raw.get("mutations", ()))
    return Config(program, **raw)


# -- compilation -------------------------------------------------------------
#
# Code is flattened to a list of ops; control flow uses absolute targets.
#   ("ld", ai, reg)        ("st", ai, val)      ("rmw", ai, reg|None, val)
#   ("fl", ai)             ("brld", ai, op, val, target)   memory ops
#   ("br", reg, op, val, target)   jump to target unless the test holds
#   ("jmp", target)  ("lst", val)  ("lld", reg)  ("lbr", op, val, target)
# ``brld``/``br``/``lbr`` fall through when the condition holds.


def _test(op, a, b):
    return a == b if op == "=" else a != b


def compile_body(body, addr_index: dict, reg_addr: str | None = None, is_miss=False) -> tuple:
    ops = []

    def emit(ins_list):
        for ins in ins_list:
            if isinstance(ins, L.Load):
                if ins.addr == reg_addr:
                    ops.append(("lld", ins.dst))
                else:
                    ops.append(("ld", addr_index[ins.addr], ins.dst))
            elif isinstance(ins, L.Store):
                if ins.addr == reg_addr:
                    ops.append(("lst", ins.value) if is_miss else ("jmp", len(ops) + 1))
                else:
                    ops.append(("st", addr_index[ins.addr], ins.value))
            elif isinstance(ins, L.RMW):
                ops.append(("rmw", addr_index[ins.addr], ins.dst, ins.value))
            elif isinstance(ins, L.Flush):
                ops.append(("fl", addr_index[ins.addr]))
            elif isinstance(ins, L.Branch):
                at = len(ops)
                if ins.reg is not None:
                    ops.append(None)
                elif ins.addr == reg_addr:
                    ops.append(None)
                else:
                    ops.append(None)
                emit(ins.then)
                jmp_at = len(ops)
                ops.append(None)
                else_at = len(ops)
                emit(ins.orelse)
                end = len(ops)
                if ins.reg is not None:
                    ops[at] = ("br", ins.reg, ins.op, ins.value, else_at)
                elif ins.addr == reg_addr:
                    ops[at] = ("lbr", ins.op, ins.value, else_at)
                else:
                    ops[at] = ("brld", addr_index[ins.addr], ins.op, ins.value, else_at)
                ops[jmp_at] = ("jmp", end)
            else:
                raise TypeError(ins)

    emit(body)
    return tuple(ops)


MEMORY_OPS = ("ld", "st", "rmw", "fl", "brld")


def advance(code, pc, regs: dict, local):
    """Run local ops from pc until a memory op or the end.

    Returns (pc, regs, local).  ``regs`` is a dict and is modified in place.
    """
    n = len(code)
    while pc < n:
        op = code[pc]
        k = op[0]
        if k in MEMORY_OPS:
            break
        if k == "jmp":
            pc = op[1]
        elif k == "br":
            pc = pc + 1 if _test(op[2], regs.get(op[1], 0), op[3]) else op[4]
        elif k == "lbr":
            pc = pc + 1 if _test(op[1], local, op[2]) else op[3]
        elif k == "lst":
            local = op[1]
            pc += 1
        elif k == "lld":
            regs[op[1]] = local
            pc += 1
        else:
            raise ValueError(op)
    return pc, regs, local


def accessed(code) -> tuple:
    """(read addresses, written addresses) of compiled code."""
    reads, writes = set(), set()
    for op in code:
        if op[0] in ("ld", "brld"):
            reads.add(op[1])
        elif op[0] in ("st",):
            writes.add(op[1])
        elif op[0] == "rmw":
            reads.add(op[1])
            writes.add(op[1])
    return reads, writes
