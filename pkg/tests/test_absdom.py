"""Interval, disjoint-interval-set, and base-offset value domain tests."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specvet.absdom import (
    AbsVal,
    TaintMem,
    ValueMem,
    di_apply,
    di_contains,
    di_glb,
    di_leq,
    di_lub,
    di_norm,
    di_points,
    di_top,
    di_widen,
    fmt_value,
    imax,
    imin,
    interval_apply,
    refine_on_branch,
    value_apply,
    value_contains,
    value_from_site,
    value_leq,
    value_lub,
    value_number,
    value_top,
    value_widen,
)
from specvet.lang import Op
from specvet.machine import binop, to_signed, to_unsigned, unop
from specvet.taint import Label, vec

W = 8

points = st.integers(min_value=-8, max_value=7)
dis = st.lists(points, min_size=0, max_size=6).map(
    lambda vs: di_points(vs, 4)
)
intervals = st.tuples(points, points).map(lambda p: (min(p), max(p)))
binops = st.sampled_from([op for op in Op if op is not Op.NOT])


def concrete(op: Op, v1: int, v2: int, width: int) -> int | None:
    try:
        return to_signed(
            binop(op, to_unsigned(v1, width), to_unsigned(v2, width), width), width
        )
    except ZeroDivisionError:
        return None


class TestDISetLaws:
    @given(dis, dis)
    def test_lub_is_upper_bound(self, d1, d2):
        j = di_lub(d1, d2, 4)
        assert di_leq(d1, j) and di_leq(d2, j)

    @given(dis, dis)
    def test_glb_is_lower_bound(self, d1, d2):
        m = di_glb(d1, d2, 4)
        assert di_leq(m, d1) and di_leq(m, d2)

    @given(dis, dis)
    def test_glb_exact_on_points(self, d1, d2):
        m = di_glb(d1, d2, 4)
        for v in range(-8, 8):
            assert di_contains(m, v) == (di_contains(d1, v) and di_contains(d2, v))

    @given(dis, dis)
    def test_leq_agrees_with_membership(self, d1, d2):
        if di_leq(d1, d2):
            for v in range(-8, 8):
                assert not di_contains(d1, v) or di_contains(d2, v)

    @given(dis)
    def test_norm_invariants(self, d):
        for (a1, b1), (a2, _) in zip(d, d[1:]):
            assert a1 <= b1 and b1 < a2 - 1

    @given(dis, dis)
    def test_widen_reaches_a_fixed_point(self, d1, d2):
        w = di_widen(d1, d2, 4)
        assert di_leq(d2, w) or w == di_top(4)
        assert di_widen(w, di_lub(w, d2, 4), 4) == w


def test_norm_merges_touching_intervals():
    assert di_norm([(0, 2), (3, 5)], 8) == ((0, 5),)
    assert di_norm([(0, 2), (4, 5)], 8) == ((0, 2), (4, 5))
    assert di_norm([(5, 1)], 8) == ()


def test_norm_hulls_past_the_cap():
    spread = [(i * 3, i * 3) for i in range(40)]
    assert di_norm(spread, 16) == ((0, 117),)


@given(binops, intervals, intervals)
@settings(max_examples=300)
def test_interval_rules_cover_the_machine(op, i1, i2):
    r = interval_apply(op, i1, i2, 4)
    for v1 in range(i1[0], i1[1] + 1):
        for v2 in range(i2[0], i2[1] + 1):
            got = concrete(op, v1, v2, 4)
            if got is not None:
                assert r[0] <= got <= r[1]


@given(intervals)
def test_not_interval_is_exact(i1):
    r = interval_apply(Op.NOT, i1, None, 4)
    outputs = {
        to_signed(unop(Op.NOT, to_unsigned(v, 4), 4), 4)
        for v in range(i1[0], i1[1] + 1)
    }
    assert outputs == set(range(r[0], r[1] + 1))


def test_interval_corner_cases():
    # signed overflow goes to top
    assert interval_apply(Op.ADD, (100, 120), (20, 20), W) == (imin(W), imax(W))
    # unsigned remainder of a non-negative dividend
    assert interval_apply(Op.MOD, (0, 9), (-5, 5), W) == (0, 9)
    assert interval_apply(Op.MOD, (-1, 9), (2, 2), W) == (imin(W), imax(W))
    # negative mask only clears low bits
    assert interval_apply(Op.AND, (3, 3), (-4, -4), W) == (0, 3)
    assert 1 & to_signed(to_unsigned(-3, W), W) in range(-1, 2)
    assert interval_apply(Op.AND, (1, 1), (-3, -3), W) == (-1, 1)
    # shift amounts that decode to huge unsigned values
    assert interval_apply(Op.ASHR, (0, 5), (-1, -1), W) == (imin(W), imax(W))
    assert interval_apply(Op.LSHR, (4, 6), (1, 2), W) == (1, 3)


def test_mul_by_constant_keeps_gaps():
    d = di_apply(Op.MUL, ((1, 2),), ((3, 3),), W)
    assert d == ((3, 3), (6, 6))
    # constant on the left works the same
    assert di_apply(Op.MUL, ((2, 2),), ((0, 2),), W) == ((0, 0), (2, 2), (4, 4))


def test_mul_by_constant_wraps_like_the_machine():
    # 3 * -4 = -12, which is 4 unsigned at three bits, i.e. -4 signed;
    # dropping it as out of range would make the product set empty
    assert di_apply(Op.MUL, ((3, 3),), ((-4, -4),), 3) == ((-4, -4),)
    assert di_apply(Op.MUL, ((100, 100),), ((5, 5),), W) == ((-12, -12),)


def test_pairwise_add_keeps_gaps():
    d = di_apply(Op.ADD, ((3, 3), (6, 6)), ((0, 1),), W)
    assert d == ((3, 4), (6, 7))


def test_offsets_track_pointer_arithmetic():
    x = value_from_site(W, 0)
    a = value_number(W, 1, 2)
    y = value_apply(Op.ADD, x, value_apply(Op.MUL, a, value_number(W, 3), W), W)
    assert y.get(0) == ((3, 3), (6, 6)) and not y.eps
    z = value_apply(Op.ADD, y, value_number(W, 0, 1), W)
    assert z.get(0) == ((3, 4), (6, 7))
    d = value_lub(value_apply(Op.ADD, a, value_number(W, 0, 1), W), y)
    assert d.eps == ((1, 3),) and d.get(0) == ((3, 3), (6, 6))


def test_struct_stride_stays_disjoint():
    t = value_number(W, 0, 2)
    off = value_apply(Op.MUL, t, value_number(W, 2), W)
    adr = value_apply(Op.ADD, value_from_site(W, 1), off, W)
    adr = value_apply(Op.ADD, adr, value_number(W, 1), W)
    assert adr.get(1) == ((1, 1), (3, 3), (5, 5))


def test_mask_cases_on_pointers():
    buf = value_apply(Op.ADD, value_from_site(16, 2), value_number(16, 0, 63), 16)
    aligned = value_apply(Op.AND, buf, value_number(16, -64), 16)
    assert aligned.get(2) and not aligned.top
    low = value_apply(Op.AND, buf, value_number(16, 63), 16)
    assert low.is_number and low.eps == ((0, 63),)
    mixed = value_apply(Op.AND, buf, value_number(16, -1, 1), 16)
    assert mixed.is_number and mixed.eps == di_top(16)


def test_pointer_plus_pointer_is_top():
    p = value_from_site(W, 0)
    assert value_apply(Op.ADD, p, p, W).top
    assert value_apply(Op.MINUS, value_number(W, 1), p, W).top
    assert value_apply(Op.XOR, p, value_number(W, 1), W).top


def test_minus_is_directional():
    p = value_from_site(W, 0, ((4, 6),))
    r = value_apply(Op.MINUS, p, value_number(W, 1), W)
    assert r.get(0) == ((3, 5),)


def test_refine_on_branch():
    g = value_number(W, 0, 15)
    assert refine_on_branch(g, taken=True).eps == ((0, 0),)
    assert refine_on_branch(g, taken=False).eps == ((1, 15),)
    p = AbsVal(W, sites=((0, ((0, 5),)),))
    assert refine_on_branch(p, taken=True).get(0) == ((0, 5),)
    assert refine_on_branch(value_top(W), taken=True).top


class TestValueLattice:
    vals = st.builds(
        lambda eps, d0: AbsVal(4, eps=eps, sites=(((0, d0),) if d0 else ())),
        dis,
        dis,
    )

    @given(vals, vals)
    def test_lub_is_upper_bound(self, v1, v2):
        j = value_lub(v1, v2)
        assert value_leq(v1, j) and value_leq(v2, j)

    @given(vals, vals)
    def test_widen_stabilizes(self, v1, v2):
        w = value_widen(v1, value_lub(v1, v2))
        assert value_leq(v2, w)
        assert value_widen(w, value_lub(w, v2)) == w

    @given(vals)
    def test_top_absorbs(self, v):
        assert value_leq(v, value_top(4))
        assert value_lub(v, value_top(4)).top


def test_gamma_membership_wraps_offsets():
    v = value_from_site(4, 0, ((-2, -1),))
    assert value_contains(v, (3 - 2) & 0xF, {0: {3}})
    assert value_contains(v, (0 - 1) & 0xF, {0: {0}})
    assert not value_contains(v, 3, {0: {3}})
    assert value_contains(value_top(4), 11, {})
    assert value_contains(value_number(4, -3), to_unsigned(-3, 4), {})


def test_fmt_value_matches_figure_style():
    y = AbsVal(W, sites=((0, ((3, 3), (6, 6))),))
    assert fmt_value(y, {0: "s"}) == "{(s,{[3],[6]})}"
    assert fmt_value(value_number(W, 0, 15)) == "{(ε,[0,15])}"
    assert fmt_value(value_top(W)) == "⊤"


def test_value_mem_load_and_store():
    vm = ValueMem.initial(W, {0: (4, value_number(W, 7))})
    ok = value_from_site(W, 0, ((0, 2),))
    oob = value_from_site(W, 0, ((2, 5),))
    assert vm.load(ok).eps == ((7, 7),)
    assert vm.load(oob).top
    assert vm.in_bounds(ok) and not vm.in_bounds(oob)
    vm2 = vm.store(ok, value_number(W, 1))
    assert vm2.load(value_from_site(W, 0, ((1, 1),))).eps == ((1, 1), (7, 7))
    assert vm.leq(vm2) and not vm2.leq(vm)


def test_value_mem_havoc_on_unbounded_store():
    vm = ValueMem.initial(W, {0: (4, value_number(W, 7))})
    for bad in (
        value_from_site(W, 0, ((2, 5),)),
        value_number(W, 1),
        value_top(W),
    ):
        lost = vm.store(bad, value_number(W, 0))
        assert lost.lost
        assert lost.load(value_from_site(W, 0, ((0, 0),))).top
        assert vm.leq(lost)


def test_taint_mem_mirrors_value_mem():
    tm = TaintMem.initial(W, {0: (4, vec(Label.LOW, W))})
    ok = value_from_site(W, 0, ((0, 1),))
    assert tm.load(ok) == vec(Label.LOW, W)
    tm2 = tm.store(ok, True, vec(Label.HIGH, W))
    assert tm2.load(value_from_site(W, 0, ((0, 0),))) == vec(Label.HIGH, W)
    assert tm.leq(tm2) and not tm2.leq(tm)
    lost = tm.store(ok, False, vec(Label.LOW, W))
    assert lost.lost and lost.load(ok) == vec(Label.HIGH, W)


def test_mem_join_is_pointwise():
    vm = ValueMem.initial(W, {0: (2, value_number(W, 0))})
    left = vm.store(value_from_site(W, 0, ((0, 0),)), value_number(W, 3))
    right = vm.store(value_from_site(W, 0, ((1, 1),)), value_number(W, 5))
    j = left.join(right)
    assert j.load(value_from_site(W, 0, ((0, 0),))).eps == ((0, 0), (3, 3))
    assert j.load(value_from_site(W, 0, ((1, 1),))).eps == ((0, 0), (5, 5))
    assert left.leq(j) and right.leq(j)


def test_bottom_address_store_is_a_noop():
    vm = ValueMem.initial(W, {0: (2, value_number(W, 0))})
    assert vm.store(AbsVal(W), value_number(W, 9)) == vm
