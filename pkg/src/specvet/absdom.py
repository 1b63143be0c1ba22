"""Numeric abstract domains for the analysis.

Three layers, bottom up:

- intervals of n-bit signed integers, with per-operator transfer rules
  that fall back to the full range whenever wrap-around is possible;
- disjoint interval sets (DI): sorted, gap-separated intervals applied
  pairwise, so strided offsets like {0, 2, 4} keep their gaps;
- base-offset values: a map from allocation sites (plus the siteless
  marker for plain numbers) to DIs. A value with every site component
  empty is a *number*; arithmetic that cannot preserve a meaningful
  base-offset shape collapses to top.

The two abstract memories live here as well, one cell array per
allocation site: ``ValueMem`` stores abstract values, ``TaintMem``
stores taint vectors. Loads join the addressed cells, with any possibly
out-of-bounds index contributing top; stores whose address is not
provably in bounds lose the whole memory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping

from . import machine
from .lang import Op
from .taint import Label, TaintVec, vec, vec_leq, vec_lub

__all__ = [
    "Iv",
    "DI",
    "imin",
    "imax",
    "interval_apply",
    "di_norm",
    "di_top",
    "di_points",
    "di_contains",
    "di_hull",
    "di_lub",
    "di_glb",
    "di_leq",
    "di_widen",
    "di_apply",
    "AbsVal",
    "value_top",
    "value_bottom",
    "value_number",
    "value_from_site",
    "value_lub",
    "value_glb_eps",
    "value_leq",
    "value_widen",
    "value_apply",
    "refine_on_branch",
    "fmt_value",
    "value_contains",
    "ValueMem",
    "TaintMem",
    "mem_load",
    "mem_store",
]

Iv = tuple[int, int]
DI = tuple[Iv, ...]

# Beyond this many intervals a DI collapses to its hull.
DI_CAP = 32


def imin(width: int) -> int:
    return -(1 << (width - 1))


def imax(width: int) -> int:
    return (1 << (width - 1)) - 1


def _top_iv(width: int) -> Iv:
    return (imin(width), imax(width))


def interval_apply(op: Op, i1: Iv, i2: Iv | None, width: int) -> Iv:
    """Transfer one operator over signed intervals.

    Sound for the fixed-width machine semantics: any case where the
    concrete result could wrap, or where the unsigned decoding of an
    operand would leave the interval's order (negative shift amounts,
    say), returns the full range.
    """
    top = _top_iv(width)
    lo, hi = top
    a1, b1 = i1
    if op is Op.NOT:
        return (-1 - b1, -1 - a1)
    assert i2 is not None
    a2, b2 = i2
    match op:
        case Op.ADD:
            if a1 + a2 < lo or b1 + b2 > hi:
                return top
            return (a1 + a2, b1 + b2)
        case Op.MINUS:
            if a1 - b2 < lo or b1 - a2 > hi:
                return top
            return (a1 - b2, b1 - a2)
        case Op.MUL:
            corners = (a1 * a2, a1 * b2, b1 * a2, b1 * b2)
            if any(c < lo or c > hi for c in corners):
                return top
            return (min(corners), max(corners))
        case Op.DIV:
            return top
        case Op.MOD:
            # unsigned remainder never exceeds a non-negative dividend
            return (0, b1) if a1 >= 0 else top
        case Op.ASHR:
            if b1 < 0 or a2 < 0:
                return top
            corners = tuple(s >> min(t, width) for s in (a1, b1) for t in (a2, b2))
            return (min(corners), max(corners))
        case Op.AND:
            if (a2 < 0 <= b2) or a1 < 0:
                return top
            if a2 >= 0:
                return (0, min(b1, b2))
            # all-negative mask clears at most the low bits: the result
            # stays within Not(a2) of the operand, and never exceeds it
            return (a1 + 1 + a2, b1)
    # remaining bitwise operators are only tracked on positive operands
    if a1 <= 0 or a2 <= 0:
        return top
    match op:
        case Op.OR:
            return (max(a1, a2), hi)
        case Op.XOR:
            return top
        case Op.SHL:
            if b2 >= width or (b1 << b2) > hi:
                return top
            return (a1 << a2, b1 << b2)
        case Op.LSHR:
            return (a1 >> min(b2, width), b1 >> min(a2, width))
    raise ValueError(f"no interval rule for {op}")


def di_norm(intervals: Iterable[Iv], width: int) -> DI:
    """Sort, clamp, and merge touching intervals; hull past the cap."""
    top = _top_iv(width)
    clamped = [
        (max(a, top[0]), min(b, top[1]))
        for a, b in intervals
        if a <= top[1] and b >= top[0] and a <= b
    ]
    if not clamped:
        return ()
    clamped.sort()
    merged: list[Iv] = [clamped[0]]
    for a, b in clamped[1:]:
        pa, pb = merged[-1]
        if a <= pb + 1:
            merged[-1] = (pa, max(pb, b))
        else:
            merged.append((a, b))
    if len(merged) > DI_CAP:
        return ((merged[0][0], merged[-1][1]),)
    return tuple(merged)


def di_top(width: int) -> DI:
    return (_top_iv(width),)


def di_points(values: Iterable[int], width: int) -> DI:
    return di_norm(((v, v) for v in values), width)


def di_contains(d: DI, v: int) -> bool:
    return any(a <= v <= b for a, b in d)


def di_hull(d: DI) -> Iv | None:
    return (d[0][0], d[-1][1]) if d else None


def di_size(d: DI) -> int:
    return sum(b - a + 1 for a, b in d)


def di_iter(d: DI) -> Iterator[int]:
    for a, b in d:
        yield from range(a, b + 1)


def di_lub(d1: DI, d2: DI, width: int) -> DI:
    return di_norm(d1 + d2, width)


def di_glb(d1: DI, d2: DI, width: int) -> DI:
    out = []
    for a1, b1 in d1:
        for a2, b2 in d2:
            a, b = max(a1, a2), min(b1, b2)
            if a <= b:
                out.append((a, b))
    return di_norm(out, width)


def di_leq(d1: DI, d2: DI) -> bool:
    """Every interval of d1 is contained in some interval of d2."""
    return all(
        any(a2 <= a1 and b1 <= b2 for a2, b2 in d2) for a1, b1 in d1
    )


def di_widen(old: DI, new: DI, width: int) -> DI:
    """Jump straight to the full range when the set is still growing."""
    return old if di_leq(new, old) else di_top(width)


def di_apply(op: Op, d1: DI, d2: DI | None, width: int) -> DI:
    """Pairwise application; empty operands stay empty.

    Multiplication by an exact constant maps elements one by one (while
    the operand is small enough to enumerate), which is what keeps
    strided offsets disjoint instead of smearing them into one range.
    """
    if op is Op.NOT:
        return di_norm((interval_apply(op, iv, None, width) for iv in d1), width)
    assert d2 is not None
    if not d1 or not d2:
        return ()
    if op is Op.MUL:
        point = _di_point(d2)
        src = d1
        if point is None:
            point = _di_point(d1)
            src = d2
        if point is not None and di_size(src) <= 256:
            # products wrap like the machine does
            return di_points(
                (machine.to_signed(v * point, width) for v in di_iter(src)), width
            )
    return di_norm(
        (interval_apply(op, iv1, iv2, width) for iv1 in d1 for iv2 in d2), width
    )


def _di_point(d: DI) -> int | None:
    if len(d) == 1 and d[0][0] == d[0][1]:
        return d[0][0]
    return None


@dataclass(frozen=True)
class AbsVal:
    """Base-offset abstract value.

    ``sites`` maps allocation locations to offset DIs; ``eps`` is the
    component for values with no base. ``top`` means every component is
    the full range, without naming the sites. Empty components are not
    stored.
    """

    width: int
    eps: DI = ()
    sites: tuple[tuple[int, DI], ...] = ()
    top: bool = False

    def get(self, site: int) -> DI:
        for s, d in self.sites:
            if s == site:
                return d
        return ()

    @property
    def is_number(self) -> bool:
        return not self.top and not self.sites

    @property
    def is_bottom(self) -> bool:
        return not self.top and not self.eps and not self.sites

    def site_ids(self) -> frozenset[int]:
        return frozenset(s for s, _ in self.sites)


def _mk(width: int, eps: DI, sites: Mapping[int, DI]) -> AbsVal:
    kept = tuple(sorted((s, d) for s, d in sites.items() if d))
    return AbsVal(width, eps, kept)


def value_top(width: int) -> AbsVal:
    return AbsVal(width, top=True)


def value_bottom(width: int) -> AbsVal:
    return AbsVal(width)


def value_number(width: int, lo: int, hi: int | None = None) -> AbsVal:
    hi = lo if hi is None else hi
    return AbsVal(width, eps=di_norm(((lo, hi),), width))


def value_number_top(width: int) -> AbsVal:
    return AbsVal(width, eps=di_top(width))


def value_from_site(width: int, site: int, d: DI | None = None) -> AbsVal:
    return AbsVal(width, sites=((site, d if d is not None else ((0, 0),)),))


def value_lub(v1: AbsVal, v2: AbsVal) -> AbsVal:
    if v1.top or v2.top:
        return value_top(v1.width)
    w = v1.width
    sites = {
        s: di_lub(v1.get(s), v2.get(s), w) for s in v1.site_ids() | v2.site_ids()
    }
    return _mk(w, di_lub(v1.eps, v2.eps, w), sites)


def value_glb_eps(v: AbsVal, constraint: DI) -> AbsVal:
    """Meet only the siteless component; offsets of named bases are left
    alone, since a constraint on the value says nothing certain about an
    offset from an unknown base address.
    """
    if v.top:
        return v
    return _mk(
        v.width, di_glb(v.eps, constraint, v.width), dict(v.sites)
    )


def value_leq(v1: AbsVal, v2: AbsVal) -> bool:
    if v2.top:
        return True
    if v1.top:
        return False
    return di_leq(v1.eps, v2.eps) and all(
        di_leq(d, v2.get(s)) for s, d in v1.sites
    )


def value_widen(old: AbsVal, new: AbsVal) -> AbsVal:
    if old.top or new.top:
        return value_top(old.width)
    w = old.width
    sites = {
        s: di_widen(old.get(s), new.get(s), w)
        for s in old.site_ids() | new.site_ids()
    }
    return _mk(w, di_widen(old.eps, new.eps, w), sites)


def value_apply(op: Op, v1: AbsVal, v2: AbsVal | None, width: int) -> AbsVal:
    """Operator transfer on base-offset values.

    Numbers compute on their siteless component. A pointer survives
    addition and subtraction of a number (offsets shift), and masking
    with an all-negative constant (an align-down keeps the base). Every
    other mix of pointers collapses to top.
    """
    if op is Op.NOT:
        if v1.is_bottom:
            return v1
        if v1.is_number:
            return AbsVal(width, eps=di_apply(op, v1.eps, None, width))
        return value_top(width)
    assert v2 is not None
    if v1.is_bottom or v2.is_bottom:
        return value_bottom(width)
    n1, n2 = v1.is_number, v2.is_number
    match op:
        case Op.ADD:
            if n1 and n2:
                return AbsVal(width, eps=di_apply(op, v1.eps, v2.eps, width))
            if n1 or n2:
                ptr, num = (v2, v1) if n1 else (v1, v2)
                if ptr.top:
                    return value_top(width)
                return _mk(
                    width,
                    di_apply(op, ptr.eps, num.eps, width),
                    {s: di_apply(op, d, num.eps, width) for s, d in ptr.sites},
                )
            return value_top(width)
        case Op.MINUS:
            if n1 and n2:
                return AbsVal(width, eps=di_apply(op, v1.eps, v2.eps, width))
            if n2 and not v1.top:
                return _mk(
                    width,
                    di_apply(op, v1.eps, v2.eps, width),
                    {s: di_apply(op, d, v2.eps, width) for s, d in v1.sites},
                )
            return value_top(width)
        case Op.AND:
            if n1 and n2:
                return AbsVal(width, eps=di_apply(op, v1.eps, v2.eps, width))
            if n1 or n2:
                ptr, num = (v2, v1) if n1 else (v1, v2)
                mask_lo, mask_hi = di_hull(num.eps)  # type: ignore[misc]
                if mask_lo < 0 <= mask_hi:
                    return value_number_top(width)
                if mask_lo >= 0:
                    # non-negative mask: the base is gone, only low bits stay
                    return AbsVal(width, eps=di_norm(((0, mask_hi),), width))
                if ptr.top:
                    return value_top(width)
                return _mk(
                    width,
                    di_apply(op, ptr.eps, num.eps, width),
                    {s: di_apply(op, d, num.eps, width) for s, d in ptr.sites},
                )
            return value_top(width)
    if n1 and n2:
        return AbsVal(width, eps=di_apply(op, v1.eps, v2.eps, width))
    return value_top(width)


def refine_on_branch(v: AbsVal, taken: bool) -> AbsVal:
    """Constrain a branch register on a zero-test edge.

    Taken means the register was zero. An unresolved top stays top: with
    no tracked components there is nothing to constrain soundly.
    """
    w = v.width
    if taken:
        return value_glb_eps(v, ((0, 0),))
    return value_glb_eps(v, di_norm(((imin(w), -1), (1, imax(w))), w))


def value_contains(
    v: AbsVal, pattern: int, base_addrs: Mapping[int, frozenset[int] | set[int]]
) -> bool:
    """Concretization membership for an n-bit register pattern.

    ``base_addrs`` gives the concrete addresses every allocation site
    produced in the trace under scrutiny.
    """
    if v.top:
        return True
    w = v.width
    signed = pattern - (1 << w) if pattern >> (w - 1) else pattern
    if di_contains(v.eps, signed):
        return True
    full = 1 << w
    for site, d in v.sites:
        for addr in base_addrs.get(site, ()):
            off = (pattern - addr) % full
            if off >= full >> 1:
                off -= full
            if di_contains(d, off):
                return True
    return False


def fmt_value(v: AbsVal, names: Mapping[int, str] | None = None) -> str:
    """Figure-style rendering, e.g. ``{(ε,[0,15]),(a,[0,7])}``."""
    if v.top:
        return "⊤"
    if v.is_bottom:
        return "⊥"
    parts = []
    if v.eps:
        parts.append(("ε", v.eps))
    for site, d in v.sites:
        name = names.get(site, f"@{site}") if names else f"@{site}"
        parts.append((name, d))
    rendered = []
    for name, d in parts:
        body = ",".join(f"[{a}]" if a == b else f"[{a},{b}]" for a, b in d)
        rendered.append(f"({name},{{{body}}})" if len(d) > 1 else f"({name},{body})")
    return "{" + ",".join(rendered) + "}"


@dataclass(frozen=True)
class ValueMem:
    """Abstract memory of values, one fully materialized cell array per
    allocation site. ``lost`` marks the post-havoc memory where every
    cell is top.
    """

    width: int
    sizes: tuple[tuple[int, int], ...]  # (site, cell count), sorted
    cells: tuple[tuple[tuple[int, int], AbsVal], ...]
    lost: bool = False

    @staticmethod
    def initial(width: int, defaults: Mapping[int, tuple[int, AbsVal]]) -> "ValueMem":
        """``defaults`` maps site -> (size, initial cell value)."""
        sizes = tuple(sorted((s, sz) for s, (sz, _) in defaults.items()))
        cells = tuple(
            ((s, off), defaults[s][1])
            for s, sz in sizes
            for off in range(sz)
        )
        return ValueMem(width, sizes, cells)

    def size_of(self, site: int) -> int:
        for s, sz in self.sizes:
            if s == site:
                return sz
        return 0

    def _cell_map(self) -> dict[tuple[int, int], AbsVal]:
        return dict(self.cells)

    def load(self, v: AbsVal) -> AbsVal:
        if self.lost or v.top or v.eps:
            return value_top(self.width)
        if v.is_bottom:
            return value_bottom(self.width)
        out = value_bottom(self.width)
        cell = self._cell_map()
        for site, d in v.sites:
            size = self.size_of(site)
            for off in di_iter(d):
                if 0 <= off < size:
                    out = value_lub(out, cell[(site, off)])
                else:
                    return value_top(self.width)
        return out

    def in_bounds(self, v: AbsVal) -> bool:
        """Every possible address falls inside its region. Purely a shape
        check against the static sizes; independent of cell contents."""
        if v.top or v.eps:
            return False
        return all(
            di_leq(d, ((0, self.size_of(site) - 1),)) for site, d in v.sites
        )

    def store(self, v: AbsVal, w: AbsVal) -> "ValueMem":
        if not self.in_bounds(v):
            return replace(self, cells=(), lost=True)
        if self.lost:
            return self  # every cell is already top
        cell = self._cell_map()
        for site, d in v.sites:
            for off in di_iter(d):
                cell[(site, off)] = value_lub(cell[(site, off)], w)
        return replace(self, cells=tuple(sorted(cell.items())))

    def join(self, other: "ValueMem") -> "ValueMem":
        if self.lost or other.lost:
            return replace(self, cells=(), lost=True)
        mine = self._cell_map()
        theirs = other._cell_map()
        return replace(
            self,
            cells=tuple(
                sorted((k, value_lub(mine[k], theirs[k])) for k in mine)
            ),
        )

    def leq(self, other: "ValueMem") -> bool:
        if other.lost:
            return True
        if self.lost:
            return False
        theirs = other._cell_map()
        return all(value_leq(val, theirs[k]) for k, val in self.cells)

    def widen(self, newer: "ValueMem") -> "ValueMem":
        if self.lost or newer.lost:
            return replace(self, cells=(), lost=True)
        mine = self._cell_map()
        theirs = newer._cell_map()
        return replace(
            self,
            cells=tuple(
                sorted((k, value_widen(mine[k], theirs[k])) for k in mine)
            ),
        )


@dataclass(frozen=True)
class TaintMem:
    """Abstract memory of taint vectors, same shape as ValueMem."""

    width: int
    sizes: tuple[tuple[int, int], ...]
    cells: tuple[tuple[tuple[int, int], TaintVec], ...]
    lost: bool = False

    @staticmethod
    def initial(width: int, defaults: Mapping[int, tuple[int, TaintVec]]) -> "TaintMem":
        sizes = tuple(sorted((s, sz) for s, (sz, _) in defaults.items()))
        cells = tuple(
            ((s, off), defaults[s][1])
            for s, sz in sizes
            for off in range(sz)
        )
        return TaintMem(width, sizes, cells)

    def size_of(self, site: int) -> int:
        for s, sz in self.sizes:
            if s == site:
                return sz
        return 0

    def _cell_map(self) -> dict[tuple[int, int], TaintVec]:
        return dict(self.cells)

    def load(self, v: AbsVal) -> TaintVec:
        if self.lost or v.top or v.eps:
            return vec(Label.HIGH, self.width)
        if v.is_bottom:
            return vec(Label.BOT, self.width)
        out = vec(Label.BOT, self.width)
        cell = self._cell_map()
        for site, d in v.sites:
            size = self.size_of(site)
            for off in di_iter(d):
                if 0 <= off < size:
                    out = vec_lub(out, cell[(site, off)])
                else:
                    return vec(Label.HIGH, self.width)
        return out

    def store(self, v: AbsVal, bounded: bool, t: TaintVec) -> "TaintMem":
        if not bounded:
            return replace(
                self,
                cells=tuple((k, vec(Label.HIGH, self.width)) for k, _ in self.cells),
                lost=True,
            )
        cell = self._cell_map()
        for site, d in v.sites:
            for off in di_iter(d):
                cell[(site, off)] = vec_lub(cell[(site, off)], t)
        return replace(self, cells=tuple(sorted(cell.items())))

    def join(self, other: "TaintMem") -> "TaintMem":
        mine = self._cell_map()
        theirs = other._cell_map()
        return replace(
            self,
            lost=self.lost or other.lost,
            cells=tuple(sorted((k, vec_lub(mine[k], theirs[k])) for k in mine)),
        )

    def leq(self, other: "TaintMem") -> bool:
        theirs = other._cell_map()
        return all(vec_leq(val, theirs[k]) for k, val in self.cells) and (
            other.lost or not self.lost
        )


def mem_load(mem: ValueMem | TaintMem, v: AbsVal) -> AbsVal | TaintVec:
    return mem.load(v)


def mem_store(mem: ValueMem, v: AbsVal, w: AbsVal) -> ValueMem:
    return mem.store(v, w)
