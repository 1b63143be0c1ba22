from hypothesis import given
from hypothesis import strategies as st

from specvet.lang import Op
from specvet.taint import (
    Label,
    const_vec,
    fmt_vec,
    glb,
    instances,
    is_legal,
    leq,
    lub,
    parse_vec,
    sanitize_ceil_align,
    sanitize_range,
    taint_apply,
    taint_eq,
    vec,
    vec_leq,
    vec_lub,
)

labels = st.sampled_from(list(Label))
vecs4 = st.tuples(labels, labels, labels, labels)


class TestLatticeLaws:
    @given(labels, labels)
    def test_lub_commutes(self, a, b):
        assert lub(a, b) == lub(b, a)

    @given(labels, labels)
    def test_glb_commutes(self, a, b):
        assert glb(a, b) == glb(b, a)

    @given(labels, labels, labels)
    def test_lub_associates(self, a, b, c):
        assert lub(lub(a, b), c) == lub(a, lub(b, c))

    @given(labels, labels, labels)
    def test_glb_associates(self, a, b, c):
        assert glb(glb(a, b), c) == glb(a, glb(b, c))

    @given(labels)
    def test_idempotent(self, a):
        assert lub(a, a) == a == glb(a, a)

    @given(labels, labels)
    def test_absorption(self, a, b):
        assert lub(a, glb(a, b)) == a
        assert glb(a, lub(a, b)) == a

    @given(labels, labels)
    def test_leq_agrees_with_lub(self, a, b):
        assert leq(a, b) == (lub(a, b) == b)
        assert leq(a, b) == (glb(a, b) == a)

    @given(labels)
    def test_bounds(self, a):
        assert leq(Label.BOT, a)
        assert leq(a, Label.HIGH)

    def test_concrete_labels_incomparable(self):
        assert not leq(Label.ZERO, Label.ONE)
        assert not leq(Label.ONE, Label.ZERO)
        assert lub(Label.ZERO, Label.ONE) is Label.LOW
        assert glb(Label.ZERO, Label.ONE) is Label.BOT


@given(vecs4, vecs4)
def test_vec_lub_is_pointwise_upper_bound(a, b):
    j = vec_lub(a, b)
    assert vec_leq(a, j) and vec_leq(b, j)


def test_format_roundtrip():
    t = (Label.ZERO, Label.ONE, Label.LOW, Label.HIGH)  # index 0 = LSB
    assert fmt_vec(t) == "(H,L,1,0)"
    assert parse_vec("(H,L,1,0)") == t
    assert parse_vec("HL10") == t


@given(vecs4)
def test_instances_are_exactly_the_legal_values(t):
    got = set(instances(t))
    want = {v for v in range(16) if is_legal(v, t)}
    assert got == want


def test_taint_eq_ignores_only_high_positions():
    t = parse_vec("(H,L,0,1)")
    assert taint_eq(0b0101, 0b1101, t)
    assert not taint_eq(0b0101, 0b0001, t)


# Frozen worked example: aligning an address, then indexing with the low
# bits of a secret. Widths are 4, shown MSB-first.
def test_masked_address_plus_masked_secret():
    addr = vec(Label.LOW, 4)
    secret = vec(Label.HIGH, 4)
    addr = taint_apply(Op.AND, addr, const_vec(0b1100, 4))
    addr = taint_apply(Op.ADD, addr, const_vec(0b0100, 4))
    assert fmt_vec(addr) == "(L,L,0,0)"
    secret = taint_apply(Op.AND, secret, const_vec(0b0011, 4))
    assert fmt_vec(secret) == "(0,0,H,H)"
    together = taint_apply(Op.ADD, addr, secret)
    assert fmt_vec(together) == "(L,L,H,H)"


def test_add_carry_needs_two_possible_ones():
    # every column holds at most one possibly-one bit, so no carry fires
    out = taint_apply(Op.ADD, parse_vec("(H,H,0,0)"), parse_vec("(0,0,L,L)"))
    assert fmt_vec(out) == "(H,H,L,L)"
    # here column 1 can carry: L+L, so the taint climbs
    out = taint_apply(Op.ADD, parse_vec("(0,0,L,L)"), parse_vec("(0,0,L,0)"))
    assert fmt_vec(out) == "(0,L,L,L)"


def test_mul_shifts_taint_by_known_trailing_zeros():
    # secret * 4 moves the secret up two positions
    out = taint_apply(Op.MUL, vec(Label.HIGH, 4), const_vec(4, 4))
    assert fmt_vec(out) == "(H,H,0,0)"


def test_mul_of_concrete_values_is_concrete():
    out = taint_apply(Op.MUL, const_vec(3, 4), const_vec(5, 4))
    assert out == const_vec(15, 4)


def test_div_is_all_or_nothing():
    assert taint_apply(Op.DIV, vec(Label.HIGH, 4), const_vec(2, 4)) == vec(Label.HIGH, 4)
    assert taint_apply(Op.DIV, vec(Label.LOW, 4), const_vec(2, 4)) == vec(Label.LOW, 4)
    assert taint_apply(Op.DIV, const_vec(7, 4), const_vec(2, 4)) == const_vec(3, 4)
    # a certainly-zero divisor traps: the result is legal for nothing
    assert taint_apply(Op.MOD, const_vec(7, 4), const_vec(0, 4)) == vec(Label.BOT, 4)


def test_shift_by_secret_taints_every_reachable_bit():
    # 1 Shl secret: any bit could be the one, including bit 0
    out = taint_apply(Op.SHL, const_vec(1, 8), vec(Label.HIGH, 8))
    assert out == vec(Label.HIGH, 8)
    # 4 Shl secret: bits below the lowest set bit stay zero
    out = taint_apply(Op.SHL, const_vec(4, 8), vec(Label.HIGH, 8))
    assert fmt_vec(out) == "(H,H,H,H,H,H,0,0)"


def test_shift_by_known_amount_relocates_labels():
    t = parse_vec("(0,0,H,L)")
    assert fmt_vec(taint_apply(Op.SHL, t, const_vec(2, 4))) == "(H,L,0,0)"
    assert fmt_vec(taint_apply(Op.LSHR, t, const_vec(1, 4))) == "(0,0,0,H)"


def test_ashr_copies_the_sign_label():
    assert fmt_vec(taint_apply(Op.ASHR, parse_vec("(H,0,0,0)"), const_vec(2, 4))) == "(H,H,H,0)"
    assert fmt_vec(taint_apply(Op.ASHR, parse_vec("(1,0,1,0)"), const_vec(2, 4))) == "(1,1,1,0)"


def test_bottom_absorbs():
    t = parse_vec("(L,L,.,0)")
    assert taint_apply(Op.ADD, t, vec(Label.LOW, 4)) == vec(Label.BOT, 4)
    assert taint_apply(Op.NOT, t) == vec(Label.BOT, 4)


@given(vecs4, st.integers(min_value=0, max_value=4))
def test_sanitizers_act_on_disjoint_halves(t, k):
    low_cleared = sanitize_ceil_align(t, k)
    high_cleared = sanitize_range(t, k)
    assert low_cleared[:k] == (Label.ZERO,) * k
    assert low_cleared[k:] == t[k:]
    assert high_cleared[:k] == t[:k]
    assert high_cleared[k:] == (Label.ZERO,) * (4 - k)


def test_range_sanitizer_keeps_window_low_bits_secret():
    # value known < 2**7: everything from bit 7 up is architecturally zero
    t = sanitize_range(vec(Label.HIGH, 16), 7)
    assert fmt_vec(t) == "(" + ",".join(["0"] * 9 + ["H"] * 7) + ")"
