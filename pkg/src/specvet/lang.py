"""Core assembly language: expressions, instructions, programs, policies.

A program is a dense map from locations 0..len-1 to instructions. Control
flow is by numeric location: ``jmp N`` is unconditional, ``beqz x, N`` jumps
when the register holds zero and falls through otherwise. ``alloc x, N``
reserves N fresh cells and leaves the base address in x. The distinguished
registers ``pc`` and ``mem`` are managed by the semantics and cannot be
named in source programs.

The text format is one instruction per line, prefixed with its location::

    # secret-indexed load
    0: x <- (x And 12)
    1: load v, (x Add y)
    2: end

Expressions are fully parenthesized infix with operator mnemonics
(``Add``, ``Minus``, ``Mul``, ``Div``, ``Mod``, ``And``, ``Or``, ``Xor``,
``Shl``, ``Lshr``, ``Ashr``) plus unary ``(Not e)``. Constants are decimal,
``0b...`` or ``0x...``. The trailing ``end`` sentinel is optional and marks
program length.

A policy file declares the machine width, which registers and memory
regions are public (everything unlisted is secret), and optional initial
value ranges consumed by the abstract analysis::

    width 16
    reg x public range 0 15
    reg k secret range 0 63
    region a 8 public cells 0 255
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

__all__ = [
    "Op",
    "UNARY_OPS",
    "BINARY_OPS",
    "Reg",
    "Const",
    "UnOp",
    "BinOp",
    "Expr",
    "Assign",
    "Load",
    "Store",
    "Jump",
    "BranchZero",
    "CondMove",
    "Fence",
    "Alloc",
    "Instr",
    "Program",
    "Level",
    "RegionPolicy",
    "Policy",
    "ParseError",
    "parse_program",
    "parse_policy",
    "parse_expr",
]


class Op(Enum):
    NOT = "Not"
    ADD = "Add"
    MINUS = "Minus"
    MUL = "Mul"
    DIV = "Div"
    MOD = "Mod"
    AND = "And"
    OR = "Or"
    XOR = "Xor"
    SHL = "Shl"
    LSHR = "Lshr"
    ASHR = "Ashr"


UNARY_OPS = frozenset({Op.NOT})
BINARY_OPS = frozenset(op for op in Op if op not in UNARY_OPS)


@dataclass(frozen=True)
class Reg:
    name: str

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: int

    def __repr__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class UnOp:
    op: Op
    arg: "Expr"

    def __repr__(self) -> str:
        return f"({self.op.value} {self.arg!r})"


@dataclass(frozen=True)
class BinOp:
    op: Op
    left: "Expr"
    right: "Expr"

    def __repr__(self) -> str:
        return f"({self.left!r} {self.op.value} {self.right!r})"


Expr = Reg | Const | UnOp | BinOp


def expr_regs(e: Expr) -> frozenset[str]:
    """Registers read by an expression."""
    match e:
        case Reg(name):
            return frozenset({name})
        case Const(_):
            return frozenset()
        case UnOp(_, arg):
            return expr_regs(arg)
        case BinOp(_, left, right):
            return expr_regs(left) | expr_regs(right)
    raise TypeError(f"not an expression: {e!r}")


@dataclass(frozen=True)
class Assign:
    dst: str
    expr: Expr

    def __repr__(self) -> str:
        return f"{self.dst} <- {self.expr!r}"


@dataclass(frozen=True)
class Load:
    dst: str
    addr: Expr

    def __repr__(self) -> str:
        return f"load {self.dst}, {self.addr!r}"


@dataclass(frozen=True)
class Store:
    src: str
    addr: Expr

    def __repr__(self) -> str:
        return f"store {self.src}, {self.addr!r}"


@dataclass(frozen=True)
class Jump:
    target: int

    def __repr__(self) -> str:
        return f"jmp {self.target}"


@dataclass(frozen=True)
class BranchZero:
    reg: str
    target: int

    def __repr__(self) -> str:
        return f"beqz {self.reg}, {self.target}"


@dataclass(frozen=True)
class CondMove:
    dst: str
    expr: Expr
    cond: Expr

    def __repr__(self) -> str:
        return f"cmov {self.dst}, {self.expr!r} if {self.cond!r}"


@dataclass(frozen=True)
class Fence:
    def __repr__(self) -> str:
        return "fence"


@dataclass(frozen=True)
class Alloc:
    dst: str
    size: int

    def __repr__(self) -> str:
        return f"alloc {self.dst}, {self.size}"


Instr = Assign | Load | Store | Jump | BranchZero | CondMove | Fence | Alloc

RESERVED = frozenset(
    {
        "pc",
        "mem",
        "load",
        "store",
        "jmp",
        "beqz",
        "cmov",
        "fence",
        "alloc",
        "end",
        "if",
    }
) | frozenset(op.value for op in Op)

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class Program:
    instrs: tuple[Instr, ...]

    def __len__(self) -> int:
        return len(self.instrs)

    def __getitem__(self, loc: int) -> Instr:
        return self.instrs[loc]

    def __iter__(self):
        return iter(self.instrs)

    @property
    def alloc_sites(self) -> dict[int, Alloc]:
        return {i: ins for i, ins in enumerate(self.instrs) if isinstance(ins, Alloc)}

    def registers(self) -> frozenset[str]:
        names: set[str] = set()
        for ins in self.instrs:
            match ins:
                case Assign(dst, e) | Load(dst, e):
                    names.add(dst)
                    names |= expr_regs(e)
                case Store(src, e):
                    names.add(src)
                    names |= expr_regs(e)
                case CondMove(dst, e, cond):
                    names.add(dst)
                    names |= expr_regs(e) | expr_regs(cond)
                case BranchZero(reg, _):
                    names.add(reg)
                case Alloc(dst, _):
                    names.add(dst)
                case Jump(_) | Fence():
                    pass
        return frozenset(names)

    def pred(self, loc: int) -> frozenset[int]:
        """Locations that can transfer control to ``loc``.

        Fall-through from loc-1 (unless it is an unconditional jump), plus
        every branch or jump targeting loc. The entry location has no
        predecessors.
        """
        if loc == 0:
            return frozenset()
        preds: set[int] = set()
        if loc - 1 < len(self.instrs) and not isinstance(self.instrs[loc - 1], Jump):
            preds.add(loc - 1)
        for j, ins in enumerate(self.instrs):
            match ins:
                case Jump(target) | BranchZero(_, target) if target == loc:
                    preds.add(j)
        return frozenset(preds)

    def pretty(self) -> str:
        lines = [f"{i}: {ins!r}" for i, ins in enumerate(self.instrs)]
        lines.append(f"{len(self.instrs)}: end")
        return "\n".join(lines)


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class _ExprParser:
    """Recursive-descent parser for fully parenthesized expressions."""

    _TOKEN = re.compile(r"\(|\)|0b[01]+|0x[0-9a-fA-F]+|\d+|[A-Za-z_][A-Za-z0-9_]*")

    def __init__(self, text: str):
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            m = self._TOKEN.match(text, i)
            if not m:
                raise ParseError(f"bad token at {text[i:]!r}")
            out.append(m.group())
            i = m.end()
        return out

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression")
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        e = self._expr()
        if self.pos != len(self.tokens):
            raise ParseError(f"trailing tokens {self.tokens[self.pos:]}")
        return e

    def _expr(self) -> Expr:
        tok = self.take()
        if tok == "(":
            return self._paren()
        return self._atom(tok)

    def _paren(self) -> Expr:
        tok = self.take()
        if tok == Op.NOT.value:
            arg = self._expr()
            self._expect(")")
            return UnOp(Op.NOT, arg)
        left = self._paren() if tok == "(" else self._atom(tok)
        op_tok = self.take()
        try:
            op = Op(op_tok)
        except ValueError:
            raise ParseError(f"unknown operator {op_tok!r}") from None
        if op in UNARY_OPS:
            raise ParseError(f"{op_tok} is unary")
        right = self._expr()
        self._expect(")")
        return BinOp(op, left, right)

    def _atom(self, tok: str) -> Expr:
        if tok[0].isdigit():
            return Const(int(tok, 0))
        if tok in RESERVED:
            raise ParseError(f"reserved word {tok!r} cannot be a register")
        if not _NAME.match(tok):
            raise ParseError(f"bad register name {tok!r}")
        return Reg(tok)

    def _expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise ParseError(f"expected {tok!r}, got {got!r}")


def parse_expr(text: str) -> Expr:
    return _ExprParser(text).parse()


_LINE = re.compile(r"(\d+)\s*:\s*(.*)")


def _reg_name(tok: str, line: int) -> str:
    tok = tok.strip()
    if tok in RESERVED or not _NAME.match(tok):
        raise ParseError(f"bad register name {tok!r}", line)
    return tok


def _parse_instr(body: str, line: int) -> Instr | None:
    """Parse one instruction body; None for the ``end`` sentinel."""
    body = body.strip()
    if body == "end":
        return None
    if body == "fence":
        return Fence()
    if body.startswith("jmp"):
        return Jump(int(body[3:].strip(), 0))
    if body.startswith("load"):
        dst, _, addr = body[4:].partition(",")
        if not _:
            raise ParseError("load needs `load x, e`", line)
        return Load(_reg_name(dst, line), parse_expr(addr))
    if body.startswith("store"):
        src, _, addr = body[5:].partition(",")
        if not _:
            raise ParseError("store needs `store x, e`", line)
        return Store(_reg_name(src, line), parse_expr(addr))
    if body.startswith("beqz"):
        reg, _, target = body[4:].partition(",")
        if not _:
            raise ParseError("beqz needs `beqz x, N`", line)
        return BranchZero(_reg_name(reg, line), int(target.strip(), 0))
    if body.startswith("cmov"):
        rest = body[4:]
        dst, comma, tail = rest.partition(",")
        m = re.search(r"\bif\b", tail)
        if not comma or not m:
            raise ParseError("cmov needs `cmov x, e if e'`", line)
        return CondMove(
            _reg_name(dst, line),
            parse_expr(tail[: m.start()]),
            parse_expr(tail[m.end() :]),
        )
    if body.startswith("alloc"):
        dst, _, size = body[5:].partition(",")
        if not _:
            raise ParseError("alloc needs `alloc x, N`", line)
        size_e = parse_expr(size)
        # Allocation sizes are compile-time constants; bases are per-site.
        if not isinstance(size_e, Const) or size_e.value <= 0:
            raise ParseError("alloc size must be a positive constant", line)
        return Alloc(_reg_name(dst, line), size_e.value)
    if "<-" in body:
        dst, _, expr = body.partition("<-")
        return Assign(_reg_name(dst, line), parse_expr(expr))
    raise ParseError(f"cannot parse instruction {body!r}", line)


def parse_program(text: str) -> Program:
    instrs: dict[int, Instr] = {}
    end_at: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = _LINE.match(stripped)
        if not m:
            raise ParseError(f"expected `N: <instr>`, got {stripped!r}", lineno)
        loc = int(m.group(1))
        if end_at is not None:
            raise ParseError("instruction after end sentinel", lineno)
        if loc in instrs:
            raise ParseError(f"duplicate location {loc}", lineno)
        try:
            ins = _parse_instr(m.group(2), lineno)
        except ParseError as exc:
            if exc.line is None:
                raise ParseError(str(exc), lineno) from None
            raise
        if ins is None:
            end_at = loc
        else:
            instrs[loc] = ins
    if not instrs:
        raise ParseError("empty program")
    locs = sorted(instrs)
    if locs != list(range(len(locs))):
        raise ParseError(f"locations must be dense from 0, got {locs}")
    if end_at is not None and end_at != len(locs):
        raise ParseError(f"end sentinel at {end_at}, expected {len(locs)}")
    program = Program(tuple(instrs[i] for i in locs))
    for loc, ins in enumerate(program):
        match ins:
            case Jump(t) | BranchZero(_, t) if not 0 <= t <= len(program):
                raise ParseError(f"location {loc}: target {t} out of range")
    return program


class Level(Enum):
    PUBLIC = "public"
    SECRET = "secret"


@dataclass(frozen=True)
class RegionPolicy:
    size: int
    level: Level
    cells: tuple[int, int] | None = None  # initial value range of every cell


@dataclass(frozen=True)
class Policy:
    """Security policy: anything not listed public is secret."""

    width: int
    reg_levels: dict[str, Level] = field(default_factory=dict)
    reg_ranges: dict[str, tuple[int, int]] = field(default_factory=dict)
    regions: dict[str, RegionPolicy] = field(default_factory=dict)

    def level_of_reg(self, name: str) -> Level:
        return self.reg_levels.get(name, Level.SECRET)

    def public_regs(self) -> frozenset[str]:
        return frozenset(
            r for r, lvl in self.reg_levels.items() if lvl is Level.PUBLIC
        )


def parse_policy(text: str) -> Policy:
    width: int | None = None
    reg_levels: dict[str, Level] = {}
    reg_ranges: dict[str, tuple[int, int]] = {}
    regions: dict[str, RegionPolicy] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        match parts:
            case ["width", n]:
                width = int(n, 0)
            case ["reg", name, lvl, *rest]:
                reg_levels[name] = Level(lvl)
                if rest:
                    if len(rest) != 3 or rest[0] != "range":
                        raise ParseError("expected `range LO HI`", lineno)
                    reg_ranges[name] = (int(rest[1], 0), int(rest[2], 0))
            case ["region", name, size, lvl, *rest]:
                cells: tuple[int, int] | None = None
                if rest:
                    if len(rest) != 3 or rest[0] != "cells":
                        raise ParseError("expected `cells LO HI`", lineno)
                    cells = (int(rest[1], 0), int(rest[2], 0))
                regions[name] = RegionPolicy(int(size, 0), Level(lvl), cells)
            case _:
                raise ParseError(f"cannot parse policy line {stripped!r}", lineno)
    if width is None:
        raise ParseError("policy must declare a width")
    if not 1 <= width <= 64:
        raise ParseError(f"width {width} out of supported range 1..64")
    return Policy(width, reg_levels, reg_ranges, regions)


def validate_policy(program: Program, policy: Policy) -> None:
    """Check that policy regions line up with the program's alloc sites."""
    alloc_by_name = {ins.dst: ins for ins in program.alloc_sites.values()}
    for name, region in policy.regions.items():
        ins = alloc_by_name.get(name)
        if ins is None:
            raise ParseError(f"policy region {name!r} has no alloc site")
        if ins.size != region.size:
            raise ParseError(
                f"policy region {name!r} size {region.size} != alloc size {ins.size}"
            )
