"""Bit-level taint lattice and per-operator propagation rules.

Each bit of a value carries one of five labels::

          H        secret: may depend on sensitive data
          |
          L        public: fixed by non-sensitive data
         / \\
        0   1      concrete: always evaluates to 0 (resp. 1)
         \\ /
          .        bottom: no possible value

A taint vector is a tuple of labels, index 0 = least significant bit
(pretty-printers show most significant first). Bottom anywhere in an
operand makes the whole result bottom.

The operator rules are exact on concrete labels and propagate L/H with
bit-position precision: addition tracks which carries can fire,
multiplication and shifts track the lowest bit a tainted operand can
reach. ``check_well_defined`` verifies the two defining properties of
every rule by exhaustion: results are legal for every instance of the
operands, and bits not labeled H never vary when only H-labeled operand
bits change.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from itertools import product
from typing import Iterator

from . import machine
from .lang import Op, UNARY_OPS

__all__ = [
    "Label",
    "TaintVec",
    "leq",
    "lub",
    "glb",
    "vec",
    "const_vec",
    "vec_lub",
    "vec_glb",
    "vec_leq",
    "fmt_vec",
    "parse_vec",
    "is_legal",
    "taint_eq",
    "instances",
    "taint_apply",
    "sanitize_range",
    "sanitize_ceil_align",
    "WellDefViolation",
    "check_well_defined",
]


class Label(IntEnum):
    BOT = 0
    ZERO = 1
    ONE = 2
    LOW = 3
    HIGH = 4

    def __repr__(self) -> str:
        return _GLYPH[self]


_GLYPH = {
    Label.BOT: ".",
    Label.ZERO: "0",
    Label.ONE: "1",
    Label.LOW: "L",
    Label.HIGH: "H",
}
_BY_GLYPH = {g: l for l, g in _GLYPH.items()}

B, Z, O, L, H = Label.BOT, Label.ZERO, Label.ONE, Label.LOW, Label.HIGH

# Row x, column y: x <= y in the lattice.
_LEQ = (
    (True, True, True, True, True),  # BOT
    (False, True, False, True, True),  # ZERO
    (False, False, True, True, True),  # ONE
    (False, False, False, True, True),  # LOW
    (False, False, False, False, True),  # HIGH
)

_LUB = (
    (B, Z, O, L, H),
    (Z, Z, L, L, H),
    (O, L, O, L, H),
    (L, L, L, L, H),
    (H, H, H, H, H),
)

_GLB = (
    (B, B, B, B, B),
    (B, Z, B, Z, Z),
    (B, B, O, O, O),
    (B, Z, O, L, L),
    (B, Z, O, L, H),
)

_NOT = {B: B, Z: O, O: Z, L: L, H: H}


def leq(a: Label, b: Label) -> bool:
    return _LEQ[a][b]


def lub(a: Label, b: Label) -> Label:
    return _LUB[a][b]


def glb(a: Label, b: Label) -> Label:
    return _GLB[a][b]


TaintVec = tuple[Label, ...]


def vec(label: Label, width: int) -> TaintVec:
    return (label,) * width


def const_vec(value: int, width: int) -> TaintVec:
    """Exact labels of a known constant."""
    return tuple(O if value >> i & 1 else Z for i in range(width))


def vec_lub(a: TaintVec, b: TaintVec) -> TaintVec:
    return tuple(_LUB[x][y] for x, y in zip(a, b, strict=True))


def vec_glb(a: TaintVec, b: TaintVec) -> TaintVec:
    return tuple(_GLB[x][y] for x, y in zip(a, b, strict=True))


def vec_leq(a: TaintVec, b: TaintVec) -> bool:
    return all(_LEQ[x][y] for x, y in zip(a, b, strict=True))


def fmt_vec(t: TaintVec) -> str:
    """Most significant bit first, e.g. ``(L,L,0,0)``."""
    return "(" + ",".join(_GLYPH[x] for x in reversed(t)) + ")"


def parse_vec(text: str) -> TaintVec:
    """Inverse of fmt_vec; accepts ``(L,L,0,0)`` or bare ``LL00``."""
    body = text.strip().strip("()").replace(",", "")
    try:
        return tuple(_BY_GLYPH[ch] for ch in reversed(body))
    except KeyError as exc:
        raise ValueError(f"bad taint glyph in {text!r}") from exc


def is_legal(value: int, t: TaintVec) -> bool:
    """True if every concrete label in t matches the bit of value.

    A vector containing bottom is legal for nothing.
    """
    for i, x in enumerate(t):
        bit = value >> i & 1
        if x is B or (x is Z and bit) or (x is O and not bit):
            return False
    return True


def taint_eq(v1: int, v2: int, t: TaintVec) -> bool:
    """True if v1 and v2 agree on every position not labeled H."""
    for i, x in enumerate(t):
        if x is not H and (v1 >> i & 1) != (v2 >> i & 1):
            return False
    return True


def instances(t: TaintVec) -> Iterator[int]:
    if any(x is B for x in t):
        return
    free = [i for i, x in enumerate(t) if x is L or x is H]
    base = sum(1 << i for i, x in enumerate(t) if x is O)
    for bits in product((0, 1), repeat=len(free)):
        yield base + sum(bit << i for i, bit in zip(free, bits))


def _count_one(*labels: Label) -> int:
    """How many of the labels can evaluate to 1."""
    return sum(_LEQ[O][x] for x in labels)


def _min_idx(t: Label, a: TaintVec) -> int:
    """Least index whose label is above t; len(a) if none."""
    for i, x in enumerate(a):
        if _LEQ[t][x]:
            return i
    return len(a)


def _num(a: TaintVec) -> int:
    """Value of the concrete low bits below the first non-concrete label."""
    out = 0
    for i, x in enumerate(a):
        if x is L or x is H:
            break
        if x is O:
            out |= 1 << i
    return out


def _add(a: TaintVec, b: TaintVec) -> TaintVec:
    out = []
    c = Z
    for ai, bi in zip(a, b):
        trio = (ai, bi, c)
        if H in trio:
            out.append(H)
        elif L in trio:
            out.append(L)
        else:
            out.append(O if sum(x is O for x in trio) % 2 else Z)
        if _count_one(*trio) <= 1:
            c = Z
        elif H in trio:
            c = H
        elif L in trio:
            c = L
        else:
            c = O
    return tuple(out)


def _minus(a: TaintVec, b: TaintVec) -> TaintVec:
    out = []
    c = Z
    for ai, bi in zip(a, b):
        trio = (ai, bi, c)
        if H in trio:
            out.append(H)
        elif L in trio:
            out.append(L)
        else:
            out.append(O if (int(ai is O) - int(bi is O) - int(c is O)) % 2 else Z)
        # Borrow fires iff a_i < b_i + c_i.
        possible_bc = _count_one(bi, c)
        definite_bc = int(bi is O) + int(c is O)
        if possible_bc <= int(ai is O):
            c = Z
        elif definite_bc >= (0 if ai is Z else 1) + 1:
            c = O
        elif H in trio:
            c = H
        else:
            c = L
    return tuple(out)


def _mul(a: TaintVec, b: TaintVec) -> TaintVec:
    n = len(a)
    h = min(_min_idx(H, a) + _min_idx(O, b), _min_idx(H, b) + _min_idx(O, a))
    low = min(_min_idx(L, a) + _min_idx(O, b), _min_idx(L, b) + _min_idx(O, a))
    prod = _num(a) * _num(b)
    return tuple(
        H if i >= h else L if i >= low else (O if prod >> i & 1 else Z)
        for i in range(n)
    )


def _divmod(op: Op, a: TaintVec, b: TaintVec) -> TaintVec:
    n = len(a)
    if H in a or H in b:
        return vec(H, n)
    if L in a or L in b:
        return vec(L, n)
    if _num(b) == 0:
        return vec(B, n)  # division traps: no value, legal for nothing
    return const_vec(machine.binop(op, _num(a), _num(b), n), n)


def _shl(a: TaintVec, b: TaintVec) -> TaintVec:
    n = len(a)
    if L not in b and H not in b:
        s = _num(b)
        return tuple(a[i - s] if 0 <= i - s else Z for i in range(n))
    floor = _num(b) + _min_idx(O, a)  # below this, guaranteed zero
    if H in b:
        t_high = floor  # a secret amount moves every reachable bit
    else:
        t_high = _num(b) + _min_idx(H, a)
    return tuple(H if i >= t_high else L if i >= floor else Z for i in range(n))


def _lshr(a: TaintVec, b: TaintVec) -> TaintVec:
    return tuple(reversed(_shl(tuple(reversed(a)), b)))


def _ashr(a: TaintVec, b: TaintVec) -> TaintVec:
    n = len(a)
    sign = a[n - 1]
    ra = tuple(reversed(a))
    if L not in b and H not in b:
        s = _num(b)
        rout = tuple(ra[i - s] if 0 <= i - s else sign for i in range(n))
        return tuple(reversed(rout))
    # Prefix of sign copies, then bits that can differ from the sign.
    floor = _num(b) + _min_idx(_NOT[sign], ra)
    if H in b:
        t_high = floor
    else:
        t_high = _num(b) + _min_idx(H, ra)
    rout = tuple(H if i >= t_high else L if i >= floor else sign for i in range(n))
    return tuple(reversed(rout))


def taint_apply(op: Op, a: TaintVec, b: TaintVec | None = None) -> TaintVec:
    """Propagate taint through one operator; bottom absorbs everything."""
    n = len(a)
    if op in UNARY_OPS:
        if b is not None:
            raise ValueError(f"{op} is unary")
        if B in a:
            return vec(B, n)
        return tuple(_NOT[x] for x in a)
    if b is None:
        raise ValueError(f"{op} needs two operands")
    if len(b) != n:
        raise ValueError("operand widths differ")
    if B in a or B in b:
        return vec(B, n)
    match op:
        case Op.AND:
            return tuple(
                Z if x is Z or y is Z else O if x is O and y is O else _LUB[x][y]
                for x, y in zip(a, b)
            )
        case Op.OR:
            return tuple(
                O if x is O or y is O else Z if x is Z and y is Z else _LUB[x][y]
                for x, y in zip(a, b)
            )
        case Op.XOR:
            return tuple(
                (O if (x is O) != (y is O) else Z)
                if x in (Z, O) and y in (Z, O)
                else _LUB[x][y]
                for x, y in zip(a, b)
            )
        case Op.ADD:
            return _add(a, b)
        case Op.MINUS:
            return _minus(a, b)
        case Op.MUL:
            return _mul(a, b)
        case Op.DIV | Op.MOD:
            return _divmod(op, a, b)
        case Op.SHL:
            return _shl(a, b)
        case Op.LSHR:
            return _lshr(a, b)
        case Op.ASHR:
            return _ashr(a, b)
    raise ValueError(f"no taint rule for {op}")


def sanitize_range(t: TaintVec, k: int) -> TaintVec:
    """Clear labels at positions >= k.

    Sound only when the value is known to lie in [0, 2**k): those bits are
    architecturally zero no matter what the secret is.
    """
    return tuple(x if i < k else Z for i, x in enumerate(t))


def sanitize_ceil_align(t: TaintVec, k: int) -> TaintVec:
    """Clear the k low bits: the ceil-align idiom zeroes them exactly.

    Matches the three-instruction window  b = a And (2**k - 1);
    c = 2**k Minus b;  d = a Add c,  which rounds a up to a multiple
    of 2**k.
    """
    return tuple(Z if i < k else x for i, x in enumerate(t))


@dataclass(frozen=True)
class WellDefViolation:
    op: Op
    requirement: int  # 1 = legality, 2 = non-interference
    t1: TaintVec
    t2: TaintVec | None
    v1: int
    v2: int | None
    detail: str

    def __repr__(self) -> str:
        rhs = "" if self.t2 is None else f", {fmt_vec(self.t2)}"
        return (
            f"requirement {self.requirement} fails for {self.op.value}"
            f"({fmt_vec(self.t1)}{rhs}) at v1={self.v1}, v2={self.v2}: {self.detail}"
        )


def _split_positions(t: TaintVec) -> tuple[int, list[int], list[int]]:
    """Fixed concrete bits, free public positions, free secret positions."""
    base = sum(1 << i for i, x in enumerate(t) if x is O)
    low_pos = [i for i, x in enumerate(t) if x is L]
    high_pos = [i for i, x in enumerate(t) if x is H]
    return base, low_pos, high_pos


def _fills(base: int, positions: list[int]) -> list[int]:
    return [
        base + sum(bit << p for p, bit in zip(positions, bits))
        for bits in product((0, 1), repeat=len(positions))
    ]


def check_well_defined(op: Op, width: int) -> WellDefViolation | None:
    """Exhaustively verify both well-definedness requirements at a width.

    Returns the first violation found, or None. Vectors containing bottom
    have no instances and are skipped; so are trapping divisions (a zero
    divisor produces no value to be legal for).
    """
    unary = op in UNARY_OPS
    labels = (Z, O, L, H)
    eval_one = (
        (lambda v1, v2: machine.unop(op, v1, width))
        if unary
        else (lambda v1, v2: machine.binop(op, v1, v2, width))
    )
    t2_space: list[TaintVec | None] = (
        [None] if unary else [t for t in product(labels, repeat=width)]
    )
    for t1 in product(labels, repeat=width):
        base1, low1, high1 = _split_positions(t1)
        for t2 in t2_space:
            r = taint_apply(op, t1, t2)
            keep = [i for i, x in enumerate(r) if x is not H]
            if t2 is None:
                base2, low2, high2 = 0, [], []
            else:
                base2, low2, high2 = _split_positions(t2)
            for pub1 in _fills(base1, low1):
                for pub2 in _fills(base2, low2):
                    witness: int | None = None
                    for v1 in _fills(pub1, high1):
                        for v2 in _fills(pub2, high2):
                            if op in (Op.DIV, Op.MOD) and v2 == 0:
                                continue
                            out = eval_one(v1, v2)
                            if not is_legal(out, r):
                                return WellDefViolation(
                                    op, 1, t1, t2, v1, v2,
                                    f"result {out} not legal for {fmt_vec(r)}",
                                )
                            proj = sum(
                                (out >> i & 1) << k for k, i in enumerate(keep)
                            )
                            if witness is None:
                                witness = proj
                            elif witness != proj:
                                return WellDefViolation(
                                    op, 2, t1, t2, v1, v2,
                                    "non-H result bits vary with H operand bits",
                                )
    return None
