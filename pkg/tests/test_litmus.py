import random
import unittest

from takomcm import litmus as L

from oracles import random_program

WALKTHROUGH_SRC = """
test ex
addr x: phantom data
addr y: regular data = 0
callback onmiss x: { [x] <- 2 }
callback onwb x: { [y] <- 1 }
thread T0: {
    [x] <- 1
    r1 <- [x]
    r2 <- [y]
}
forbid: r1 = 2 && r2 = 0
"""


def expect_error(test, text, fragment):
    with test.assertRaises(L.LitmusError) as cm:
        L.parse(text)
    test.assertIn(fragment, str(cm.exception))
    return cm.exception


class ParseTests(unittest.TestCase):
    def test_example_program(self):
        p = L.parse(WALKTHROUGH_SRC)
        self.assertEqual(len(p.threads), 1)
        self.assertEqual(len(p.threads[0].body), 3)
        self.assertEqual({cb.kind for cb in p.callbacks}, {L.ONMISS, L.ONWB})
        self.assertEqual(p.phantoms, ["x"])
        (asn,) = p.assertions
        self.assertEqual(asn.kind, L.FORBID)
        self.assertEqual(asn.pred, L.And((
            L.Cmp(L.Reg("r1"), "=", L.Const(2)), L.Cmp(L.Reg("r2"), "=", L.Const(0)))))

    def test_instruction_forms(self):
        p = L.parse("""
test forms
addr a: regular synch = 1
addr x: phantom data
callback onmiss x: { [x] <- 0 }
thread T0: { rmw [a] r1 2; rmw [a] _ 3; flush [x]; if r1 = 1 { [x] <- 1 } else { r2 <- [x] } }
allow: r1 = 1 || !(r2 != 0)
""")
        body = p.threads[0].body
        self.assertEqual(body[0], L.RMW("a", "r1", 2))
        self.assertIsNone(body[1].dst)
        self.assertEqual(body[2], L.Flush("x"))
        self.assertIsInstance(body[3], L.Branch)
        self.assertEqual(p.address("a").initial, 1)
        self.assertIsInstance(p.assertions[0].pred, L.Or)

    def test_empty_threads(self):
        p = L.parse("test empty\naddr y: regular data = 0\n")
        self.assertEqual(p.threads, ())
        self.assertEqual(p.registers(), {})

    def test_rmw_on_data(self):
        expect_error(self, "test t\naddr x: regular data = 0\nthread T0: { rmw [x] r1 1 }\n",
                     "RMW on data address")

    def test_error_positions(self):
        e = expect_error(self, "test t\naddr y: regular data = 0\nthread T0: { r1 <- [q] }\n",
                         "undeclared address q")
        self.assertEqual(e.line, 3)
        e = expect_error(self, "test t\naddr y: regular data = 0 $\n", "unexpected character")
        self.assertEqual((e.line, e.col), (2, 26))

    def test_validation(self):
        cases = [
            ("test t\naddr x: phantom data\nthread T0: { r1 <- [x] }\n", "no onmiss"),
            ("test t\naddr x: phantom data\ncallback onmiss x: { r1 <- [x] }\n", "reads its own line"),
            ("test t\naddr x: phantom data\ncallback onmiss x: { [y] <- 1 }\naddr y: regular data = 0\n",
             "without store"),
            ("test t\naddr y: regular data = 0\ncallback onmiss y: { [y] <- 1 }\n", "regular address"),
            ("test t\naddr y: regular synch = 0\nthread T0: { [y] <- 1 }\n", "synch address"),
            ("test t\naddr y: regular data = 0\nthread T0: { flush [y] }\n", "flush of regular"),
            ("test t\naddr y: regular data = 0\naddr y: regular data = 0\n", "duplicate address"),
            ("test t\naddr y: regular data = 0\nthread T0: { r1 <- [y] }\nforbid: r9 = 1\n", "unknown register"),
        ]
        for text, fragment in cases:
            with self.subTest(fragment=fragment):
                expect_error(self, text, fragment)

    def test_ambiguous_register(self):
        text = ("test t\naddr y: regular data = 0\nthread T0: { r1 <- [y] }\n"
                "thread T1: { r1 <- [y] }\n")
        expect_error(self, text + "allow: r1 = 0\n", "ambiguous register")
        p = L.parse(text + "allow: T0:r1 = 0 && T1:r1 = 0\n")
        self.assertEqual(p.assertions[0].pred.items[0].lhs, L.Reg("r1", "T0"))


class RenderTests(unittest.TestCase):
    def test_corpus_round_trip(self):
        for name, p in L.corpus():
            with self.subTest(name=name):
                self.assertEqual(L.parse(L.render(p)), p)

    def test_random_round_trip(self):
        rng = random.Random(11)
        for i in range(200):
            p = random_program(rng, name=f"r{i}")
            self.assertEqual(L.parse(L.render(p)), p)


class CorpusTests(unittest.TestCase):
    def assertions(self, name):
        return {(a.kind, L.render_pred(a.pred) if a.pred else None) for a in L.load(name).assertions}

    def test_eleven(self):
        names = [n for n, _ in L.corpus()]
        self.assertEqual(len(names), 11)
        self.assertEqual(tuple(names), L.CORPUS_NAMES)

    def test_mp(self):
        self.assertEqual(self.assertions("test_mp"), {(L.ALLOW, "r1 = 1 && r2 = 0")})

    def test_wbflush(self):
        self.assertEqual(self.assertions("test_wbflush"), {(L.RACEFREE, None), (L.FORBID, "r1 = 0")})

    def test_hatsnr(self):
        self.assertIn((L.FORBID, "r1 != r2"), self.assertions("test_hatsnr"))

    def test_expected_verdicts(self):
        table = {
            "test_paper_ex": {(L.FORBID, "r1 = 2 && r2 = 0")},
            "test_mp_rmw": {(L.FORBID, "r1 = 1 && r2 = 0")},
            "test_mp_rmwcb": {(L.FORBID, "r1 = 1 && r2 = 0")},
            "test_icb_sb": {(L.ALLOW, "r1 = 0 && r2 = 0")},
            "test_wbrace": {(L.RACY, None)},
            "test_phir": {(L.RACY, None)},
            "test_phinr": {(L.RACEFREE, None), (L.FORBID, "r1 = 0 && r2 = 0")},
            "test_hatsr": {(L.RACY, None)},
        }
        for name, want in table.items():
            with self.subTest(name=name):
                self.assertEqual(self.assertions(name), want)


class PredicateTests(unittest.TestCase):
    def test_eval(self):
        p = L.parse(WALKTHROUGH_SRC)
        pred = p.assertions[0].pred
        self.assertTrue(L.eval_pred(pred, {("T0", "r1"): 2, ("T0", "r2"): 0}, p))
        self.assertFalse(L.eval_pred(pred, {("T0", "r1"): 2, ("T0", "r2"): 1}, p))

    def test_value_domain(self):
        p = L.parse(WALKTHROUGH_SRC)
        self.assertEqual(p.value_domain(), [0, 1, 2])
        self.assertEqual(p.onmiss_values("x"), {2})


if __name__ == "__main__":
    unittest.main()
