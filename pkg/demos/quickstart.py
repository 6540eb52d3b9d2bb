"""Check a small litmus test axiomatically, then run it on the machine model."""
from takomcm import litmus as L
from takomcm.bridge import conform
from takomcm.enumeration import analyze, format_outcome
from takomcm.opmodel import Config, Limits

SOURCE = """
test demo
addr x: phantom data
addr y: regular data = 0
callback onmiss x: { [x] <- 0 }
callback onwb x: { [y] <- 1 }
thread T0: { [x] <- 5; flush [x]; r1 <- [y] }
forbid: r1 = 0
"""

p = L.parse(SOURCE)
a = analyze(p)
print("allowed:", sorted(format_outcome(o, p) for o in a.allowed))
for r in a.results:
    print(r.assertion.kind, "PASS" if r.passed else "FAIL")

rep = conform(p, Config(p, num_tiles=2), limits=Limits(max_states=20_000), walks=10)
print("operational:", rep.operational_outcomes)
print("conforms:", rep.ok, "inclusion:", rep.inclusion)
