"""Two's-complement machine arithmetic at a configurable bit width.

All register and memory cells hold unsigned bit patterns in [0, 2**width).
Div and Mod are unsigned; Ashr is an arithmetic shift of the signed
reading. Shift amounts are taken unsigned; shifting by >= width drains to
zero (or to the sign fill for Ashr). Division by zero raises
ZeroDivisionError, which the executor turns into a trap outcome.
"""

from __future__ import annotations

from .lang import Op

__all__ = ["mask", "to_signed", "to_unsigned", "unop", "binop", "signed_range"]


def mask(width: int) -> int:
    return (1 << width) - 1


def signed_range(width: int) -> tuple[int, int]:
    return -(1 << (width - 1)), (1 << (width - 1)) - 1


def to_signed(v: int, width: int) -> int:
    v &= mask(width)
    if v >= 1 << (width - 1):
        v -= 1 << width
    return v


def to_unsigned(z: int, width: int) -> int:
    return z & mask(width)


def unop(op: Op, a: int, width: int) -> int:
    if op is Op.NOT:
        return ~a & mask(width)
    raise ValueError(f"not a unary operator: {op}")


def binop(op: Op, a: int, b: int, width: int) -> int:
    m = mask(width)
    a &= m
    b &= m
    match op:
        case Op.ADD:
            return (a + b) & m
        case Op.MINUS:
            return (a - b) & m
        case Op.MUL:
            return (a * b) & m
        case Op.DIV:
            return (a // b) & m  # raises on b == 0
        case Op.MOD:
            return (a % b) & m
        case Op.AND:
            return a & b
        case Op.OR:
            return a | b
        case Op.XOR:
            return a ^ b
        case Op.SHL:
            return (a << b) & m if b < width else 0
        case Op.LSHR:
            return a >> b if b < width else 0
        case Op.ASHR:
            return (to_signed(a, width) >> min(b, width)) & m
        case _:
            raise ValueError(f"not a binary operator: {op}")
