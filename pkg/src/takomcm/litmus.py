"""Litmus-test language: program model, parser and canonical renderer.

A litmus file looks like::

    test test_wbflush
    addr x: phantom data
    addr y: regular data = 0
    callback onmiss x: { [x] <- 0 }
    callback onwb x: { [y] <- 1 }
    thread T0: {
        [x] <- 1
        flush [x]
        r1 <- [y]
    }
    expect: norace
    forbid: r1 = 0

Instructions are separated by newlines or ``;``.  ``#`` starts a comment.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, Union

REGULAR, PHANTOM = "regular", "phantom"
DATA, SYNCH = "data", "synch"
ONMISS, ONEVICT, ONWB = "onmiss", "onevict", "onwb"
CALLBACK_KINDS = (ONMISS, ONEVICT, ONWB)
FORBID, ALLOW, RACEFREE, RACY = "forbid", "allow", "racefree", "racy"


class LitmusError(ValueError):
    """Parse or validation failure, with an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)


# -- program model ---------------------------------------------------------


@dataclass(frozen=True)
class AddressDecl:
    name: str
    kind: str = REGULAR
    sync: str = DATA
    initial: int = 0


@dataclass(frozen=True)
class Load:
    dst: str
    addr: str


@dataclass(frozen=True)
class Store:
    addr: str
    value: int


@dataclass(frozen=True)
class RMW:
    addr: str
    dst: str | None
    value: int


@dataclass(frozen=True)
class Flush:
    addr: str


@dataclass(frozen=True)
class Branch:
    """``if <reg|[addr]> <op> value { then } else { orelse }``.

    Exactly one of ``reg`` and ``addr`` is set.
    """

    reg: str | None
    addr: str | None
    op: str
    value: int
    then: tuple = ()
    orelse: tuple = ()

    def test(self, v: int) -> bool:
        return (v == self.value) if self.op == "=" else (v != self.value)


Instruction = Union[Load, Store, RMW, Flush, Branch]


@dataclass(frozen=True)
class CallbackDef:
    kind: str
    address: str
    body: tuple = ()

    @property
    def scope(self) -> str:
        return f"{self.kind}[{self.address}]"


@dataclass(frozen=True)
class Thread:
    name: str
    body: tuple = ()


# predicates over final register values


@dataclass(frozen=True)
class Reg:
    name: str
    scope: str | None = None

    def __str__(self):
        return f"{self.scope}:{self.name}" if self.scope else self.name


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Cmp:
    lhs: Reg | Const
    op: str
    rhs: Reg | Const


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


@dataclass(frozen=True)
class Assertion:
    kind: str
    pred: object = None

    def describe(self) -> str:
        if self.kind == RACEFREE:
            return "expect norace"
        if self.kind == RACY:
            return "expect racy"
        return f"{self.kind} {render_pred(self.pred)}"


@dataclass(frozen=True)
class Program:
    name: str
    addresses: tuple = ()
    callbacks: tuple = ()
    threads: tuple = ()
    assertions: tuple = ()

    def address(self, name: str) -> AddressDecl:
        for a in self.addresses:
            if a.name == name:
                return a
        raise KeyError(name)

    def callback(self, kind: str, addr: str) -> CallbackDef | None:
        for cb in self.callbacks:
            if cb.kind == kind and cb.address == addr:
                return cb
        return None

    @property
    def phantoms(self) -> list:
        return [a.name for a in self.addresses if a.kind == PHANTOM]

    @property
    def regulars(self) -> list:
        return [a.name for a in self.addresses if a.kind == REGULAR]

    def scopes(self) -> Iterator[tuple]:
        """(scope name, body, registered address or None)."""
        for t in self.threads:
            yield t.name, t.body, None
        for cb in self.callbacks:
            yield cb.scope, cb.body, cb.address

    def registers(self) -> dict:
        """Registers assigned in each scope, in first-appearance order."""
        return {scope: _assigned(body) for scope, body, _ in self.scopes()}

    def written_values(self, addr: str) -> set:
        """Every value that can ever be held by ``addr``."""
        vals = set()
        decl = self.address(addr)
        if decl.kind == REGULAR:
            vals.add(decl.initial)
        for _, body, _ in self.scopes():
            for ins in walk(body):
                if isinstance(ins, (Store, RMW)) and ins.addr == addr:
                    vals.add(ins.value)
        return vals

    def onmiss_values(self, addr: str) -> set:
        cb = self.callback(ONMISS, addr)
        return set(onmiss_paths_store(cb)) - {None} if cb else set()

    def value_domain(self) -> list:
        vals = {0}
        for _, body, _ in self.scopes():
            for ins in walk(body):
                if isinstance(ins, (Store, RMW, Branch)):
                    vals.add(ins.value)
        vals.update(a.initial for a in self.addresses)
        return sorted(vals)


def walk(body) -> Iterator:
    """All instructions of a body, descending into branches."""
    for ins in body:
        yield ins
        if isinstance(ins, Branch):
            yield from walk(ins.then)
            yield from walk(ins.orelse)


def _assigned(body) -> list:
    regs = []
    for ins in walk(body):
        dst = ins.dst if isinstance(ins, (Load, RMW)) else None
        if dst and dst not in regs:
            regs.append(dst)
    return regs


def _produced_values(body, addr, current):
    """Values an OnMiss body may leave in its registered line, per path."""
    if not body:
        yield current
        return
    ins, rest = body[0], body[1:]
    if isinstance(ins, Branch):
        yield from _produced_values(ins.then + rest, addr, current)
        yield from _produced_values(ins.orelse + rest, addr, current)
    elif isinstance(ins, Store) and ins.addr == addr:
        yield from _produced_values(rest, addr, ins.value)
    else:
        yield from _produced_values(rest, addr, current)


def onmiss_paths_store(cb: CallbackDef) -> list:
    return list(_produced_values(cb.body, cb.address, None))


# -- validation ------------------------------------------------------------


def validate(p: Program) -> Program:
    names = [a.name for a in p.addresses]
    if len(set(names)) != len(names):
        raise LitmusError("duplicate address declaration")
    decls = {a.name: a for a in p.addresses}
    for a in p.addresses:
        if a.kind not in (REGULAR, PHANTOM) or a.sync not in (DATA, SYNCH):
            raise LitmusError(f"bad address declaration for {a.name}")
        if a.kind == PHANTOM and a.initial != 0:
            raise LitmusError(f"phantom address {a.name} cannot have an initial value")
    seen = set()
    for cb in p.callbacks:
        if cb.kind not in CALLBACK_KINDS:
            raise LitmusError(f"unknown callback kind {cb.kind}")
        if cb.address not in decls:
            raise LitmusError(f"undeclared address {cb.address}")
        if decls[cb.address].kind != PHANTOM:
            raise LitmusError(f"callback on regular address {cb.address}")
        if (cb.kind, cb.address) in seen:
            raise LitmusError(f"duplicate {cb.kind} callback for {cb.address}")
        seen.add((cb.kind, cb.address))
    for a in p.addresses:
        if a.kind == PHANTOM and (ONMISS, a.name) not in seen:
            raise LitmusError(f"phantom address {a.name} has no onmiss callback")
    tnames = [t.name for t in p.threads]
    if len(set(tnames)) != len(tnames):
        raise LitmusError("duplicate thread name")
    for scope, body, reg_addr in p.scopes():
        _check_body(body, decls, reg_addr, scope)
    for cb in p.callbacks:
        if cb.kind == ONMISS and None in onmiss_paths_store(cb):
            raise LitmusError(f"OnMiss without store to registered address {cb.address}")
    regs = p.registers()
    for asn in p.assertions:
        if asn.kind not in (FORBID, ALLOW, RACEFREE, RACY):
            raise LitmusError(f"unknown assertion kind {asn.kind}")
        if asn.pred is not None:
            for r in pred_regs(asn.pred):
                resolve_reg(r, regs)
    return p


def _check_body(body, decls, reg_addr, scope):
    for ins in walk(body):
        addr = getattr(ins, "addr", None)
        if addr is None:
            continue
        if addr not in decls:
            raise LitmusError(f"undeclared address {addr}")
        if addr == reg_addr:
            # callback-local view of its own line
            if isinstance(ins, (RMW, Flush)):
                raise LitmusError(f"{type(ins).__name__} on registered address {addr} inside callback")
            if scope.startswith(ONMISS) and isinstance(ins, (Load, Branch)):
                raise LitmusError(f"OnMiss for {addr} reads its own line before it exists")
            continue
        d = decls[addr]
        if reg_addr is not None and d.kind == PHANTOM:
            raise LitmusError(f"callback {scope} accesses phantom address {addr}")
        if isinstance(ins, RMW) and d.sync == DATA:
            raise LitmusError(f"RMW on data address {addr}")
        if isinstance(ins, (Load, Store)) and d.sync == SYNCH:
            raise LitmusError(f"{type(ins).__name__.lower()} on synch address {addr}")
        if isinstance(ins, Branch) and d.sync == SYNCH:
            raise LitmusError(f"branch reads synch address {addr}")
        if isinstance(ins, Flush) and d.kind != PHANTOM:
            raise LitmusError(f"flush of regular address {addr}")


def resolve_reg(r: Reg, regs: dict) -> tuple:
    """Map a predicate register to its (scope, name)."""
    if r.scope is not None:
        if r.name not in regs.get(r.scope, ()):
            raise LitmusError(f"unknown register {r}")
        return r.scope, r.name
    owners = [s for s, names in regs.items() if r.name in names]
    if not owners:
        raise LitmusError(f"unknown register {r.name}")
    if len(owners) > 1:
        raise LitmusError(f"ambiguous register {r.name}; qualify as <scope>:{r.name}")
    return owners[0], r.name


def pred_regs(pred) -> Iterator[Reg]:
    if isinstance(pred, Cmp):
        for side in (pred.lhs, pred.rhs):
            if isinstance(side, Reg):
                yield side
    elif isinstance(pred, (And, Or)):
        for it in pred.items:
            yield from pred_regs(it)
    elif isinstance(pred, Not):
        yield from pred_regs(pred.item)


def eval_pred(pred, regs: dict, program: Program) -> bool:
    """Evaluate against ``{(scope, name): value}``.

    Comparisons involving a register that is absent from the outcome (a
    callback that never ran) are false.
    """
    if isinstance(pred, Cmp):
        scoped = program.registers()
        vals = []
        for side in (pred.lhs, pred.rhs):
            if isinstance(side, Const):
                vals.append(side.value)
            else:
                key = resolve_reg(side, scoped)
                if key not in regs:
                    return False
                vals.append(regs[key])
        return (vals[0] == vals[1]) if pred.op == "=" else (vals[0] != vals[1])
    if isinstance(pred, And):
        return all(eval_pred(p, regs, program) for p in pred.items)
    if isinstance(pred, Or):
        return any(eval_pred(p, regs, program) for p in pred.items)
    if isinstance(pred, Not):
        return not eval_pred(pred.item, regs, program)
    raise TypeError(pred)


# -- lexer -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<arrow><-)
  | (?P<op>!=|&&|\|\||[=!])
  | (?P<punct>[\[\]{}():;,])
  | (?P<int>-?\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(text: str) -> list:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise LitmusError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            toks.append(_Tok("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _lex(text)
        self.i = 0

    # helpers
    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return LitmusError(msg, tok.line, tok.col)

    def skip_nl(self):
        while self.tok.kind == "nl" or self.tok.text == ";":
            self.i += 1

    def accept(self, text):
        if self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if self.tok.text != text:
            found = self.tok.text if self.tok.kind != "nl" else "end of line"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.i += 1

    def name(self):
        if self.tok.kind != "name":
            raise self.error(f"expected identifier, found {self.tok.text!r}")
        t = self.tok.text
        self.i += 1
        return t

    def integer(self):
        if self.tok.kind != "int":
            raise self.error(f"expected integer, found {self.tok.text!r}")
        v = int(self.tok.text)
        self.i += 1
        return v

    def end_stmt(self):
        if self.tok.kind not in ("nl", "eof") and self.tok.text not in (";", "}"):
            raise self.error(f"unexpected {self.tok.text!r}")

    # grammar
    def program(self):
        name, addrs, cbs, threads, asns = None, [], [], [], []
        self.skip_nl()
        while self.tok.kind != "eof":
            start = self.tok
            kw = self.name()
            if kw == "test":
                name = self.name()
            elif kw == "addr":
                addrs.append((self.addr_decl(), start))
            elif kw == "callback":
                kind = self.name().lower()
                if kind not in CALLBACK_KINDS:
                    raise self.error(f"unknown callback kind {kind!r}", start)
                a = self.name()
                self.expect(":")
                cbs.append((CallbackDef(kind, a, self.block()), start))
            elif kw == "thread":
                t = self.name()
                self.expect(":")
                threads.append((Thread(t, self.block()), start))
            elif kw in (FORBID, ALLOW):
                self.expect(":")
                asns.append((Assertion(kw, self.pred()), start))
            elif kw == "expect":
                self.expect(":")
                word = self.name()
                if word == "norace":
                    asns.append((Assertion(RACEFREE), start))
                elif word == "racy":
                    asns.append((Assertion(RACY), start))
                else:
                    raise self.error(f"expected norace or racy, found {word!r}", start)
            else:
                raise self.error(f"unknown declaration {kw!r}", start)
            self.end_stmt()
            self.skip_nl()
        if name is None:
            raise LitmusError("missing 'test <name>' header", 1, 1)
        prog = Program(
            name,
            tuple(a for a, _ in addrs),
            tuple(c for c, _ in cbs),
            tuple(t for t, _ in threads),
            tuple(a for a, _ in asns),
        )
        # re-run validation item by item so diagnostics carry a position
        try:
            return validate(prog)
        except LitmusError as exc:
            tok = _locate(exc.message, addrs, cbs, threads, asns)
            if tok is None:
                raise
            raise LitmusError(exc.message, tok.line, tok.col) from None

    def addr_decl(self):
        n = self.name()
        self.expect(":")
        kind = self.name()
        sync = self.name()
        if kind not in (REGULAR, PHANTOM):
            raise self.error(f"expected regular or phantom, found {kind!r}")
        if sync not in (DATA, SYNCH):
            raise self.error(f"expected data or synch, found {sync!r}")
        init = 0
        if self.accept("="):
            init = self.integer()
        return AddressDecl(n, kind, sync, init)

    def block(self):
        self.skip_nl()
        self.expect("{")
        body = []
        self.skip_nl()
        while not self.accept("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block")
            body.append(self.instr())
            self.end_stmt()
            self.skip_nl()
        return tuple(body)

    def bracket_addr(self):
        self.expect("[")
        a = self.name()
        self.expect("]")
        return a

    def instr(self):
        t = self.tok
        if t.text == "[":
            a = self.bracket_addr()
            self.expect("<-")
            return Store(a, self.integer())
        kw = self.name()
        if kw == "rmw":
            a = self.bracket_addr()
            dst = self.name()
            return RMW(a, None if dst == "_" else dst, self.integer())
        if kw == "flush":
            return Flush(self.bracket_addr())
        if kw == "if":
            reg = addr = None
            if self.tok.text == "[":
                addr = self.bracket_addr()
            else:
                reg = self.name()
            op = self.tok.text
            if op not in ("=", "!="):
                raise self.error(f"expected = or !=, found {op!r}")
            self.i += 1
            v = self.integer()
            then = self.block()
            orelse = ()
            save = self.i
            self.skip_nl()
            if self.tok.text == "else":
                self.i += 1
                orelse = self.block()
            else:
                self.i = save
            return Branch(reg, addr, op, v, then, orelse)
        # load: r <- [a]
        self.expect("<-")
        return Load(kw, self.bracket_addr())

    def pred(self):
        items = [self.conj()]
        while self.accept("||"):
            items.append(self.conj())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conj(self):
        items = [self.unary()]
        while self.accept("&&"):
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self):
        if self.accept("!"):
            return Not(self.unary())
        if self.accept("("):
            p = self.pred()
            self.expect(")")
            return p
        lhs = self.operand()
        op = self.tok.text
        if op not in ("=", "!="):
            raise self.error(f"expected = or !=, found {op!r}")
        self.i += 1
        return Cmp(lhs, op, self.operand())

    def operand(self):
        if self.tok.kind == "int":
            return Const(self.integer())
        n = self.name()
        if self.tok.text == "[":
            # scoped register: onwb[x]:r1
            a = self.bracket_addr()
            self.expect(":")
            return Reg(self.name(), f"{n}[{a}]")
        if self.accept(":"):
            return Reg(self.name(), n)
        return Reg(n)


def _locate(message, addrs, cbs, threads, asns):
    """Best-effort source position for a validation failure."""
    words = set(re.findall(r"[A-Za-z_][A-Za-z0-9_]*", message))
    for group in (cbs, threads, addrs, asns):
        for item, tok in group:
            key = getattr(item, "address", None) or getattr(item, "name", None)
            if key in words:
                return tok
    for item, tok in threads + cbs:
        body = item.body
        mentioned = {getattr(i, "addr", None) for i in walk(body)}
        if words & {m for m in mentioned if m}:
            return tok
    return None


def parse(text: str) -> Program:
    """Parse litmus source into a validated :class:`Program`."""
    return _Parser(text).program()


def parse_file(path) -> Program:
    with open(path, encoding="utf-8") as f:
        return parse(f.read())


# -- rendering -------------------------------------------------------------


def render_pred(pred) -> str:
    def go(p, ctx):
        if isinstance(p, Cmp):
            return f"{p.lhs} {p.op} {p.rhs}"
        if isinstance(p, Not):
            return "!" + go(p.item, "not")
        if isinstance(p, And):
            s = " && ".join(go(i, "and") for i in p.items)
            return f"({s})" if ctx == "not" else s
        if isinstance(p, Or):
            s = " || ".join(go(i, "or") for i in p.items)
            return f"({s})" if ctx in ("and", "not") else s
        raise TypeError(p)

    return go(pred, None)


def _render_body(body, indent) -> list:
    pad = "    " * indent
    out = []
    for ins in body:
        if isinstance(ins, Load):
            out.append(f"{pad}{ins.dst} <- [{ins.addr}]")
        elif isinstance(ins, Store):
            out.append(f"{pad}[{ins.addr}] <- {ins.value}")
        elif isinstance(ins, RMW):
            out.append(f"{pad}rmw [{ins.addr}] {ins.dst or '_'} {ins.value}")
        elif isinstance(ins, Flush):
            out.append(f"{pad}flush [{ins.addr}]")
        elif isinstance(ins, Branch):
            cond = f"[{ins.addr}]" if ins.addr else ins.reg
            out.append(f"{pad}if {cond} {ins.op} {ins.value} {{")
            out.extend(_render_body(ins.then, indent + 1))
            if ins.orelse:
                out.append(f"{pad}}} else {{")
                out.extend(_render_body(ins.orelse, indent + 1))
            out.append(f"{pad}}}")
    return out


def render(p: Program) -> str:
    """Canonical text form; ``parse(render(p)) == p``."""
    lines = [f"test {p.name}"]
    for a in p.addresses:
        init = f" = {a.initial}" if a.kind == REGULAR else ""
        lines.append(f"addr {a.name}: {a.kind} {a.sync}{init}")
    for cb in p.callbacks:
        lines.append(f"callback {cb.kind} {cb.address}: {{")
        lines.extend(_render_body(cb.body, 1))
        lines.append("}")
    for t in p.threads:
        lines.append(f"thread {t.name}: {{")
        lines.extend(_render_body(t.body, 1))
        lines.append("}")
    for asn in p.assertions:
        if asn.kind == RACEFREE:
            lines.append("expect: norace")
        elif asn.kind == RACY:
            lines.append("expect: racy")
        else:
            lines.append(f"{asn.kind}: {render_pred(asn.pred)}")
    return "\n".join(lines) + "\n"


# -- built-in corpus -------------------------------------------------------

CORPUS_NAMES = (
    "test_paper_ex",
    "test_mp",
    "test_mp_rmw",
    "test_mp_rmwcb",
    "test_icb_sb",
    "test_wbrace",
    "test_wbflush",
    "test_phir",
    "test_phinr",
    "test_hatsr",
    "test_hatsnr",
)


def corpus_text(name: str) -> str:
    return resources.files("takomcm.corpus").joinpath(f"{name}.litmus").read_text(encoding="utf-8")


def corpus() -> list:
    """The eleven built-in tests as ``(name, Program)`` pairs."""
    return [(n, parse(corpus_text(n))) for n in CORPUS_NAMES]


def load(name_or_path: str) -> Program:
    """A corpus test by name, or a litmus file by path."""
    if name_or_path in CORPUS_NAMES:
        return parse(corpus_text(name_or_path))
    return parse_file(name_or_path)
