"""State-space exploration: bounded DFS and seeded random walks."""
from __future__ import annotations

import heapq
import random
import time
from collections import Counter, deque
from dataclasses import dataclass, field

from .config import Config
from .machine import Machine, MachineState, Transition


@dataclass
class Limits:
    max_states: int = 100_000
    max_depth: int = 10_000
    timeout: float | None = None

    def __post_init__(self):
        if self.max_states < 1 or self.max_depth < 1:
            raise ValueError("limits must be positive")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class ExploreResult:
    machine: Machine
    init: MachineState
    parents: dict            # state -> (parent state, transition) or None for init
    quiescent: list = field(default_factory=list)
    deadlocks: list = field(default_factory=list)
    edges: int = 0
    truncated: bool = False
    stopped: bool = False    # the visitor asked to stop
    elapsed: float = 0.0

    @property
    def states(self) -> int:
        return len(self.parents)

    def trace_to(self, s: MachineState) -> list:
        """[(transition, state), ...] from the initial state to ``s``."""
        out = []
        while True:
            link = self.parents[s]
            if link is None:
                break
            prev, t = link
            out.append((t, s))
            s = prev
        out.reverse()
        return out

    def outcomes(self) -> dict:
        """outcome -> one quiescent state exhibiting it"""
        res = {}
        for s in self.quiescent:
            res.setdefault(self.machine.outcome(s), s)
        return res


# DFS expands the lowest rank first so that traces reach quiescence early;
# environmental churn is explored on backtracking
_RANK = {"PerformInst": 0, "CbEnd": 0, "CbStart": 1, "RecvMsg": 2, "MemOp": 2,
         "ScheduleCb": 3, "SendGetS": 4, "SendGetM": 4, "Evict": 5}


def _as_machine(c) -> Machine:
    return c if isinstance(c, Machine) else Machine(c)


def explore(c, limits: Limits | None = None, visit=None, strategy: str = "novelty") -> ExploreResult:
    """Search the reachable states.

    ``strategy`` picks the expansion order: "dfs", "bfs", or "novelty",
    which expands first the states whose ghost graph has been expanded
    least often, spreading a truncated search over distinct partial graphs.
    All three are exhaustive when not truncated.

    ``visit(state, parent, transition)`` is called once per new state; a
    true return value stops the search.  Quiescent states (threads done,
    callback channels drained) are collected; exploration continues past
    them because environmental steps may still add callbacks.
    """
    if strategy not in ("dfs", "bfs", "novelty"):
        raise ValueError(f"unknown strategy {strategy!r}")
    limits = limits or Limits()
    m = _as_machine(c)
    init = m.init_state()
    res = ExploreResult(m, init, {init: None})
    start = time.monotonic()
    if visit is not None and visit(init, None, None):
        res.stopped = True
        return res
    frontier = deque()
    heap = []
    expanded = Counter()
    seq = 0

    def push(s, depth):
        nonlocal seq
        if strategy == "novelty":
            seq += 1
            heapq.heappush(heap, (expanded[s.ghost], -depth, seq, s))
        else:
            frontier.append((s, depth))

    def pop():
        if strategy == "novelty":
            _, neg, _, s = heapq.heappop(heap)
            return s, -neg
        return frontier.pop() if strategy == "dfs" else frontier.popleft()

    push(init, 0)
    while heap or frontier:
        s, depth = pop()
        expanded[s.ghost] += 1
        succ = m.successors(s)
        if m.quiescent(s):
            res.quiescent.append(s)
        elif not succ:
            res.deadlocks.append(s)
        if depth >= limits.max_depth:
            if succ:
                res.truncated = True
            continue
        if strategy == "dfs":
            succ.sort(key=lambda x: -_RANK[x[0].label])
        full = False
        for t, nxt in succ:
            res.edges += 1
            if nxt in res.parents:
                continue
            if len(res.parents) >= limits.max_states:
                res.truncated = full = True
                break
            res.parents[nxt] = (s, t)
            if visit is not None and visit(nxt, s, t):
                res.stopped = True
                heap.clear()
                frontier.clear()
                break
            push(nxt, depth + 1)
        if full and strategy != "novelty":
            break
        if limits.timeout is not None and time.monotonic() - start > limits.timeout:
            if heap or frontier:
                res.truncated = True
            break
    res.elapsed = time.monotonic() - start
    return res


_PROGRESS = ("PerformInst", "CbEnd", "CbStart", "RecvMsg", "MemOp")


def random_walk(c, seed: int, max_depth: int = 3_000, bias: float = 0.8) -> list:
    """One seeded random trace, [(transition, state), ...].

    With probability ``bias`` a step is drawn from the enabled progress
    transitions (commits, callback steps, message receipts), otherwise from
    everything enabled.  The walk ends at a quiescent state with
    probability 1/2, when nothing is enabled, or at ``max_depth``.
    """
    m = _as_machine(c)
    rng = random.Random(seed)
    s = m.init_state()
    trace = []
    for _ in range(max_depth):
        if m.quiescent(s) and rng.random() < 0.5:
            break
        succ = m.successors(s)
        if not succ:
            break
        if rng.random() < bias:
            prog = [x for x in succ if x[0].label in _PROGRESS]
            succ = prog or succ
        t, s = succ[rng.randrange(len(succ))]
        trace.append((t, s))
    return trace


def format_trace(m: Machine, trace: list) -> list:
    return [t.log_line(i, m) for i, (t, _) in enumerate(trace)]
