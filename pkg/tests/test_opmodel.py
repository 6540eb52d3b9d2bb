import json
import os
import subprocess
import sys
import tempfile
import unittest

from takomcm import litmus as L
from takomcm.enumeration import analyze, format_outcome
from takomcm.opmodel import (
    NOOP, Config, DisabledTransition, Limits, Machine, explore, format_trace, load_config, random_walk,
)

from oracles import sc_outcomes

TWO_LOADS = """
test two_loads
addr a: regular data = 0
addr b: regular data = 0
thread T0: { r1 <- [a]; r2 <- [b] }
"""


def fire(m, s, label, comp=None, kind=None, addr=None):
    """Apply the unique enabled transition matching the filters."""
    hits = []
    for t, nxt in m.successors(s):
        if t.label != label or (comp is not None and t.comp != comp):
            continue
        if addr is not None and t.addr != m.ai[addr]:
            continue
        if kind is not None and (t.info is None or t.info[2] != kind):
            continue
        hits.append((t, nxt))
    assert len(hits) == 1, (label, comp, kind, addr, [t.describe() for t, _ in m.successors(s)])
    return hits[0][1]


def deliver_all(m, s, stop=None):
    """Deliver messages until none is deliverable (or ``stop`` matches)."""
    while True:
        recv = [(t, n) for t, n in m.successors(s) if t.label in ("RecvMsg", "MemOp")
                and t.info[2] != "CbResp"]
        if not recv or (stop is not None and any(stop(t) for t, _ in recv)):
            return s
        s = recv[0][1]


class InitTests(unittest.TestCase):
    def test_two_tiles_example(self):
        p = L.load("test_paper_ex")
        m = Machine(Config(p, num_tiles=2))
        s = m.init_state()
        self.assertTrue(all(e is None for cache in s.caches for e in cache))
        self.assertEqual(len(s.caches), 8)
        self.assertEqual(s.mem[m.ai["y"]][0], 0)
        self.assertIsNone(s.mem[m.ai["x"]])
        self.assertEqual(s.net, ())

    def test_empty_program(self):
        m = Machine(Config(L.parse("test e\naddr y: regular data = 0\n")))
        s = m.init_state()
        self.assertNotIn("PerformInst", [t.label for t in m.enabled(s)])
        self.assertTrue(m.quiescent(s))

    def test_digest_stable_across_processes(self):
        code = ("from takomcm import litmus as L\nfrom takomcm.opmodel import Config, Machine\n"
                "print(Machine(Config(L.load('test_hatsnr'), num_tiles=2)).init_state().digest())")
        outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                               env=dict(os.environ, PYTHONHASHSEED=str(seed))).stdout
                for seed in (1, 2)}
        self.assertEqual(len(outs), 1)
        m = Machine(Config(L.load("test_hatsnr"), num_tiles=2))
        self.assertEqual(outs.pop().strip(), m.init_state().digest())


class ConfigTests(unittest.TestCase):
    def test_validation(self):
        p = L.load("test_mp")
        for bad in ({"num_tiles": 0}, {"l1_size": 0}, {"mutations": frozenset({"nope"})},
                    {"bank_map": (("a", 0),)}, {"bank_map": (("a", 0), ("b", 3))}):
            with self.subTest(bad=bad), self.assertRaises(ValueError):
                Config(p, **bad)

    def test_home(self):
        p = L.load("test_mp")
        self.assertEqual([Config(p, num_tiles=2).home(a) for a in "ab"], [0, 1])
        c = Config(p, num_tiles=2, bank_map=(("a", 1), ("b", 1)))
        self.assertEqual(c.home("a"), 1)

    def test_load_json(self):
        p = L.load("test_mp")
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
            json.dump({"num_tiles": 2, "l1_size": 1, "bank_map": {"a": 1, "b": 0}}, f)
        try:
            c = load_config(f.name, p, l2_size=3)
        finally:
            os.unlink(f.name)
        self.assertEqual((c.num_tiles, c.l1_size, c.l2_size, c.home("a")), (2, 1, 3, 1))
        self.assertEqual(c.to_dict()["bank_map"], {"a": 1, "b": 0})


class TransitionTests(unittest.TestCase):
    def test_get_then_data(self):
        # a GetS enters the network; the directory answers with data
        p = L.parse(TWO_LOADS)
        m = Machine(Config(p))
        s = fire(m, m.init_state(), "SendGetS", comp=0, addr="a")
        self.assertEqual([(x[0], x[1], x[2]) for x in s.net], [(2, 0, "GetS")])
        self.assertEqual(s.caches[0][m.ai["a"]][0], "IS_D")
        s = fire(m, s, "RecvMsg", comp=2, kind="GetS")
        self.assertEqual([(x[0], x[2]) for x in s.net], [(3, "GetS")])
        s = fire(m, s, "RecvMsg", comp=3, kind="GetS")
        s = fire(m, s, "MemOp", kind="MemRead")
        s = fire(m, s, "RecvMsg", comp=3, kind="MemData")
        s = fire(m, s, "RecvMsg", comp=2, kind="DataS")
        self.assertEqual([(x[0], x[1], x[2], x[4]) for x in s.net], [(0, 2, "DataS", 0)])
        s = fire(m, s, "RecvMsg", comp=0, kind="DataS")
        self.assertEqual(s.caches[0][m.ai["a"]][:2], ("S", 0))
        self.assertEqual(s.net, ())

    def test_capacity_one_forces_evict(self):
        p = L.parse(TWO_LOADS)
        m = Machine(Config(p, l1_size=1))
        s = fire(m, m.init_state(), "SendGetS", comp=0, addr="a")
        s = deliver_all(m, s)
        s = fire(m, s, "PerformInst", addr="a")
        self.assertEqual(dict(s.threads[0][1])["r1"], 0)
        s = fire(m, s, "SendGetS", comp=0, addr="b")
        s = deliver_all(m, s)
        # the fill for b is parked in the network: the one L1 slot holds a
        self.assertEqual([(x[0], x[2], x[3]) for x in s.net], [(0, "DataS", m.ai["b"])])
        self.assertNotIn("RecvMsg", [t.label for t in m.enabled(s)])
        s = fire(m, s, "Evict", comp=0, addr="a")
        self.assertEqual(s.caches[0][m.ai["a"]][0], "SI_A")
        s = fire(m, s, "RecvMsg", comp=2, kind="PutS")
        self.assertEqual(s.caches[2][m.ai["a"]][4], 0)  # no sharers left at L2
        s = fire(m, s, "RecvMsg", comp=0, kind="PutAck")
        s = fire(m, s, "RecvMsg", comp=0, kind="DataS")
        l1 = s.caches[0]
        self.assertIsNone(l1[m.ai["a"]])
        self.assertEqual(l1[m.ai["b"]][:2], ("S", 0))
        self.assertEqual(s.net, ())
        s = fire(m, s, "PerformInst", addr="b")
        self.assertTrue(m.threads_done(s))

    def test_noop(self):
        m = Machine(Config(L.load("test_mp")))
        s = m.init_state()
        self.assertIs(m.apply(s, NOOP), s)
        self.assertNotIn(NOOP, m.enabled(s))

    def test_disabled(self):
        m = Machine(Config(L.load("test_mp")))
        s = m.init_state()
        t = m.enabled(s)[0]
        with self.assertRaises(DisabledTransition):
            m.apply(s, t._replace(comp=99))

    def test_phantom_prefetch_without_instructions(self):
        p = L.parse("test e\naddr x: phantom data\ncallback onmiss x: { [x] <- 0 }\n")
        m = Machine(Config(p))
        labels = [t.describe() for t in m.enabled(m.init_state())]
        self.assertIn("SendGetS", labels)
        self.assertIn("ScheduleCb(onmiss)", labels)

    def test_dirty_phantom_evicts_into_onwb(self):
        p = L.load("test_paper_ex")
        m = Machine(Config(p))
        x = m.ai["x"]

        def wb_queued(s, parent, t):
            return any(q[0] == L.ONWB for q in s.cbq[x])

        res = explore(m, Limits(max_states=200_000), wb_queued, strategy="bfs")
        self.assertTrue(res.stopped)
        end = [s for s in res.parents if wb_queued(s, None, None)][0]
        steps = [t for t, _ in res.trace_to(end)]
        store = next(i for i, t in enumerate(steps) if t.label == "PerformInst" and t.info[1] == "store")
        evicts = [t.comp % 4 for t in steps[store:] if t.label == "Evict" and t.addr == x]
        self.assertEqual(evicts, [0, 2, 3])

    def test_terminal_state_only_fetches(self):
        p = L.parse("test t\naddr a: regular data = 0\nthread T0: { [a] <- 1 }\n")
        m = Machine(Config(p))
        res = explore(m)
        self.assertFalse(res.truncated)
        empty = [s for s in res.quiescent
                 if not s.net and all(e is None for c in s.caches for e in c)]
        self.assertTrue(empty)
        for s in empty:
            self.assertTrue({t.label for t in m.enabled(s)} <= {"SendGetS", "SendGetM"})

    def test_log_line(self):
        m = Machine(Config(L.load("test_mp")))
        tr = random_walk(m, seed=4, max_depth=30)
        lines = format_trace(m, tr)
        self.assertEqual(len(lines), len(tr))
        self.assertRegex(lines[0], r"^step=0 comp=t0\.l1c label=\S+ addr=[ab] val=\S+$")


class ExploreTests(unittest.TestCase):
    def test_empty_program(self):
        m = Machine(Config(L.parse("test e\n")))
        res = explore(m)
        self.assertEqual(res.states, 1)
        self.assertEqual(res.quiescent, [res.init])
        self.assertEqual(res.trace_to(res.init), [])

    def test_store_then_load(self):
        p = L.parse("test t\naddr a: regular data = 0\nthread T0: { [a] <- 1; r1 <- [a] }\n")
        m = Machine(Config(p))
        loads = []

        def visit(s, parent, t):
            if t is not None and t.label == "PerformInst" and t.info[1] == "load":
                loads.append(t.val)

        res = explore(m, visit=visit)
        self.assertFalse(res.truncated)
        self.assertTrue(loads)
        self.assertEqual(set(loads), {1})
        self.assertEqual({format_outcome(o, p) for o in res.outcomes()}, {"r1=1"})

    def test_regular_programs_match_interleavings(self):
        # one tile, tiny caches: the machine commits in order over coherent
        # lines, so its outcomes are exactly the interleaving outcomes
        texts = [
            L.corpus_text("test_mp"),
            "test sb\naddr a: regular data = 0\naddr b: regular data = 0\n"
            "thread T0: { [a] <- 1; r1 <- [b] }\nthread T1: { [b] <- 1; r2 <- [a] }\n",
            "test co\naddr a: regular data = 0\nthread T0: { [a] <- 1; r1 <- [a] }\n"
            "thread T1: { [a] <- 2; r2 <- [a] }\n",
        ]
        for text in texts:
            p = L.parse(text)
            with self.subTest(test=p.name):
                res = explore(Machine(Config(p, l1_size=1, l2_size=1, l3_size=1)),
                              Limits(max_states=300_000))
                self.assertFalse(res.truncated)
                self.assertEqual(set(res.outcomes()), sc_outcomes(p))
                self.assertEqual(res.deadlocks, [])

    def test_invariants_exhaustive(self):
        m = Machine(Config(L.load("test_mp"), l1_size=1, l2_size=1, l3_size=1))
        bad = []
        res = explore(m, visit=lambda s, parent, t: bool(bad.extend(m.invariants(s))))
        self.assertFalse(res.truncated)
        self.assertEqual(bad, [])

    def test_mp_two_tiles_within_allowed(self):
        p = L.load("test_mp")
        m = Machine(Config(p, num_tiles=2))
        allowed = analyze(p).allowed
        seen = set()
        for seed in range(40):
            tr = random_walk(m, seed)
            if tr and m.quiescent(tr[-1][1]):
                seen.add(m.outcome(tr[-1][1]))
        self.assertTrue(seen)
        self.assertTrue(seen <= allowed)

    def test_strategies_agree_when_exhaustive(self):
        p = L.parse("test t\naddr a: regular data = 0\nthread T0: { [a] <- 1 }\nthread T1: { r1 <- [a] }\n")
        m = Machine(Config(p, l1_size=1))
        results = [explore(m, strategy=st) for st in ("dfs", "bfs", "novelty")]
        self.assertEqual(len({r.states for r in results}), 1)
        self.assertEqual(len({frozenset(r.outcomes()) for r in results}), 1)
        with self.assertRaises(ValueError):
            explore(m, strategy="sideways")

    def test_walk_deterministic(self):
        m = Machine(Config(L.load("test_hatsnr")))
        a = [t for t, _ in random_walk(m, seed=9)]
        b = [t for t, _ in random_walk(m, seed=9)]
        self.assertEqual(a, b)

    def test_truncation_flag(self):
        res = explore(Machine(Config(L.load("test_mp"))), Limits(max_states=50))
        self.assertTrue(res.truncated)
        self.assertEqual(res.states, 50)


if __name__ == "__main__":
    unittest.main()
