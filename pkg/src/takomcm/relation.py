"""Finite binary relations over integer event ids."""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable


class Relation:
    """Immutable set of ``(src, dst)`` pairs."""

    __slots__ = ("pairs", "_succ")

    def __init__(self, pairs: Iterable = ()):
        self.pairs = frozenset(pairs)
        self._succ = None

    # construction helpers
    @classmethod
    def identity(cls, ids: Iterable) -> "Relation":
        return cls((i, i) for i in ids)

    @classmethod
    def cross(cls, xs: Iterable, ys: Iterable) -> "Relation":
        ys = list(ys)
        return cls((x, y) for x in xs for y in ys)

    @classmethod
    def chain(cls, seq) -> "Relation":
        """Strict total order following ``seq``."""
        seq = list(seq)
        return cls((seq[i], seq[j]) for i in range(len(seq)) for j in range(i + 1, len(seq)))

    # basic protocol
    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return pair in self.pairs

    def __eq__(self, other):
        return isinstance(other, Relation) and self.pairs == other.pairs

    def __hash__(self):
        return hash(self.pairs)

    def __repr__(self):
        return f"Relation({sorted(self.pairs)})"

    def __or__(self, other):
        return self.union(other)

    def __and__(self, other):
        return self.intersect(other)

    def __sub__(self, other):
        return self.difference(other)

    def succ(self) -> dict:
        if self._succ is None:
            d = defaultdict(set)
            for a, b in self.pairs:
                d[a].add(b)
            self._succ = d
        return self._succ

    def domain(self) -> set:
        return {a for a, _ in self.pairs}

    def range(self) -> set:
        return {b for _, b in self.pairs}

    def nodes(self) -> set:
        return self.domain() | self.range()

    # algebra
    def union(self, *others) -> "Relation":
        out = set(self.pairs)
        for o in others:
            out |= o.pairs
        return Relation(out)

    def intersect(self, other) -> "Relation":
        return Relation(self.pairs & other.pairs)

    def difference(self, other) -> "Relation":
        return Relation(self.pairs - other.pairs)

    def inverse(self) -> "Relation":
        return Relation((b, a) for a, b in self.pairs)

    def compose(self, other) -> "Relation":
        nxt = other.succ()
        out = set()
        for a, b in self.pairs:
            for c in nxt.get(b, ()):
                out.add((a, c))
        return Relation(out)

    def restrict(self, dom=None, rng=None) -> "Relation":
        """Keep pairs whose source is in ``dom`` and target in ``rng`` (None = any)."""
        return Relation(
            (a, b) for a, b in self.pairs
            if (dom is None or a in dom) and (rng is None or b in rng)
        )

    def transitive_closure(self) -> "Relation":
        succ = self.succ()
        out = set()
        for start in list(succ):
            seen = set()
            stack = list(succ[start])
            while stack:
                n = stack.pop()
                if n in seen:
                    continue
                seen.add(n)
                stack.extend(succ.get(n, ()))
            out.update((start, n) for n in seen)
        return Relation(out)

    # predicates
    def is_empty(self) -> bool:
        return not self.pairs

    def reflexive_elements(self) -> list:
        return sorted(a for a, b in self.pairs if a == b)

    def is_irreflexive(self) -> bool:
        return all(a != b for a, b in self.pairs)

    def is_transitive(self) -> bool:
        succ = self.succ()
        return all(c in succ[a] for a, b in self.pairs for c in succ.get(b, ()))

    def is_acyclic(self) -> bool:
        return self.find_cycle() is None

    def find_cycle(self) -> list | None:
        """A cycle as a list of nodes, or None."""
        succ = self.succ()
        colour = {}
        for root in sorted(succ):
            if root in colour:
                continue
            path, stack = [], [(root, iter(sorted(succ[root])))]
            colour[root] = 1
            path.append(root)
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    path.pop()
                    colour[node] = 2
                    continue
                c = colour.get(nxt)
                if c == 1:
                    return path[path.index(nxt):]
                if c is None:
                    colour[nxt] = 1
                    path.append(nxt)
                    stack.append((nxt, iter(sorted(succ.get(nxt, ())))))
        return None

    def totality_gap(self, s: Iterable) -> tuple | None:
        """First distinct pair of ``s`` related in neither direction."""
        s = sorted(s)
        for i, a in enumerate(s):
            for b in s[i + 1:]:
                if (a, b) not in self.pairs and (b, a) not in self.pairs:
                    return (a, b)
        return None

    def is_total_order_on(self, s: Iterable) -> bool:
        """Irreflexive, transitive, and total over ``s``."""
        return self.is_irreflexive() and self.is_transitive() and self.totality_gap(s) is None


EMPTY = Relation()
