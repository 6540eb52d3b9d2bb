import json
import unittest

from takomcm import litmus as L
from takomcm.axioms import (
    AXIOMS, UnknownAxiom, CallbackEventsPresent, check_all, check_axiom, check_sc, first_failure,
)
from takomcm.enumeration import analyze, enumerate_candidates
from takomcm.graph import R, R_CB, W, W_CB, GraphBuilder

import figures
from oracles import Formula


def mp_graph():
    """mp with r1=1 (b) and r2=0 (a)."""
    b = GraphBuilder()
    ia, ib = b.init("a"), b.init("b")
    wa = b.add(W, "a", wval=1, thread="T0")
    wb = b.add(W, "b", wval=1, thread="T0")
    rb = b.add(R, "b", rval=1, thread="T1")
    ra = b.add(R, "a", rval=0, thread="T1")
    b.edge("rf", wb, rb)
    b.edge("rf", ia, ra)
    b.order("mo", [ia, wa])
    b.order("mo", [ib, wb])
    return b.build()


class NamesTests(unittest.TestCase):
    def test_twenty_seven(self):
        self.assertEqual(len(AXIOMS), 27)

    def test_unknown(self):
        with self.assertRaises(UnknownAxiom):
            check_axiom("Nope", mp_graph())

    def test_init_only_graph_passes_everything(self):
        b = GraphBuilder()
        b.init("a")
        v = check_all(b.build())
        self.assertTrue(v.consistent)
        self.assertEqual(len(v.results), 27)


class WalkthroughTests(unittest.TestCase):
    def test_panels_fail_named_axiom(self):
        for panel, (build, axiom) in figures.PANELS.items():
            with self.subTest(panel=panel):
                g = build()
                ok, wit = check_axiom(axiom, g)
                self.assertFalse(ok)
                self.assertIn(axiom, check_all(g).failures)
                self.assertFalse(Formula.of_graph(g).axiom(axiom))

    def test_missing_onmiss_witness_is_phantom_access(self):
        g = figures.no_callbacks()
        _, wit = check_axiom("VfWf", g)
        self.assertIn(g.event(wit[0]).kind, (R_CB, W_CB))

    def test_writeback_hb_reaches_read(self):
        g, wy, ry = figures.writeback_between()
        self.assertIn((wy, ry), g.derived.hb)
        eco_hb = g.derived.eco.compose(g.derived.hb)
        self.assertFalse(eco_hb.is_irreflexive())
        self.assertIn("Vis", check_all(g).failures)

    def test_example_outcome_forbidden(self):
        p = L.load("test_paper_ex")
        a = analyze(p)
        self.assertFalse(any(dict(o)[("T0", "r1")] == 2 and dict(o)[("T0", "r2")] == 0 for o in a.allowed))


class SCTests(unittest.TestCase):
    def test_mp_sc_vs_tako(self):
        g = mp_graph()
        self.assertFalse(check_sc(g)[0])
        self.assertTrue(check_all(g).consistent)

    def test_single_write(self):
        b = GraphBuilder()
        i = b.init("a")
        w = b.add(W, "a", wval=1, thread="T0")
        b.order("mo", [i, w])
        self.assertTrue(check_sc(b.build())[0])

    def test_rejects_callback_events(self):
        with self.assertRaises(CallbackEventsPresent):
            check_sc(figures.value_mismatch())


class VerdictTests(unittest.TestCase):
    def test_json_shape(self):
        v = check_all(figures.value_mismatch())
        d = json.loads(v.to_json())
        self.assertEqual(set(d), {"axioms", "races", "consistent"})
        self.assertFalse(d["consistent"])
        self.assertFalse(d["axioms"]["CboVal"]["pass"])
        self.assertIn("witness", d["axioms"]["CboVal"])

    def test_mp_race(self):
        v = check_all(mp_graph())
        # write and read of [a] race, as do those of [b]
        self.assertEqual(len(v.races), 2)

    def test_wbrace_race_pair(self):
        p = L.load("test_wbrace")
        found = False
        for g in enumerate_candidates(p):
            v = check_all(g)
            if not v.consistent:
                continue
            for a, b in v.races:
                kinds = {(g.event(a).kind, g.event(a).thread.split("#")[0]), (g.event(b).kind, g.event(b).thread.split("#")[0])}
                if kinds == {(W, "onwb[x]"), (R, "T0")}:
                    found = True
        self.assertTrue(found)

    def test_witnesses_reproduce(self):
        # every failing witness names events of the graph, and the formula
        # interpreter agrees on pass/fail for every axiom
        for name in ("test_paper_ex", "test_wbflush", "test_hatsnr"):
            p = L.load(name)
            for n, g in enumerate(enumerate_candidates(p)):
                v = check_all(g)
                f = Formula.of_graph(g)
                for ax, res in v.results.items():
                    self.assertEqual(res.passed, f.axiom(ax), (name, n, ax))
                    if not res.passed:
                        self.assertTrue(all(i in g.ids for i in res.witness))
                self.assertEqual(v.consistent, first_failure(g) is None)
                if v.consistent:
                    self.assertEqual(set(v.races), f.races())


if __name__ == "__main__":
    unittest.main()
