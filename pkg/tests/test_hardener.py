"""The flag-and-mask pipeline over the example corpus."""

from __future__ import annotations

import pytest

from specvet.absdom import fmt_value
from specvet.absint import abs_step_spec, fixpoint, site_names
from specvet.concrete import Directive, init_state, run
from specvet.hardener import (
    FLAG,
    REASON_OBS,
    REASON_OOB,
    algorithm1,
    harden,
    harden_set,
    lower_with_flag,
    switch_step,
    transform,
)
from specvet.lang import parse_policy, parse_program
from specvet.taint import Label, fmt_vec, vec

EXPECTED = {
    "branch_bypass": (None, {2: REASON_OBS}),
    "masked_gadget": (None, {5: REASON_OBS}),
    "masked_index": ((2, 3), {}),
    "offset_arith": (None, {}),
    "struct_walk": (None, {}),
    "chained_lookup": (None, {9: REASON_OBS}),
    "counter_store": (None, {6: REASON_OOB}),
    "aligned_copy_var": ((6, 15), {10: REASON_OBS}),
    "aligned_copy_fixed": ((6, 15), {}),
}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_hardening_outcomes(corpus, name):
    window, want = EXPECTED[name]
    program, policy = corpus(name)
    report = harden(program, policy, obs_window=window)
    assert dict(report.reasons) == want


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_pipeline_is_idempotent(corpus, name):
    window, _ = EXPECTED[name]
    program, policy = corpus(name)
    report = harden(program, policy, obs_window=window)
    again, _ = algorithm1(
        program, policy, obs_window=window, preharden=report.hardened
    )
    assert again == {}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_never_flags_more_than_the_plain_analysis(corpus, name):
    window, _ = EXPECTED[name]
    program, policy = corpus(name)
    report = harden(program, policy, obs_window=window)
    plain = harden_set(program, fixpoint(program, policy, spec=True), window)
    assert report.hardened <= set(plain)


def test_masking_the_first_leak_clears_the_downstream_ones(corpus):
    # the plain speculative fixpoint is hot at both dependent lookups;
    # masking the first restores the second's address from phase one
    program, policy = corpus("chained_lookup")
    plain = harden_set(program, fixpoint(program, policy, spec=True))
    assert set(plain) == {9, 11}
    report = harden(program, policy)
    assert report.hardened == {9}


def test_chained_lookup_hardened_column(corpus):
    program, policy = corpus("chained_lookup")
    report = harden(program, policy)
    names = site_names(program)
    st = report.spec[11]
    cells = {
        "x": ("{(ε,[0,15])}", "(0,0,0,0,0,0,0,0,0,0,0,0,L,L,L,L)"),
        "t1": ("{(a,[0,15])}", "(L,L,L,L,L,L,L,L,L,L,L,L,L,L,L,L)"),
        "y": ("⊤", "(H,H,H,H,H,H,H,H,H,H,H,H,H,H,H,H)"),
        "t2": ("⊤", "(H,H,H,H,H,H,H,H,H,H,H,H,H,H,H,H)"),
        "z": ("{(ε,[0,255])}", "(0,0,0,0,0,0,0,0,L,L,L,L,L,L,L,L)"),
        "t3": ("{(c,[0,255])}", "(L,L,L,L,L,L,L,L,L,L,L,L,L,L,L,L)"),
    }
    for reg, (value, taint) in cells.items():
        assert fmt_value(st.reg(reg), names) == value, reg
        assert fmt_vec(st.taint(reg)) == taint, reg
    # the final lookup's own post-state: recovered, clean observation
    succ = abs_step_spec(program, 11, st)[0]
    assert fmt_value(succ.state.reg("w"), names) == "{(ε,[0,255])}"
    assert fmt_vec(succ.state.taint("w")) == "(0,0,0,0,0,0,0,0,L,L,L,L,L,L,L,L)"
    assert Label.HIGH not in succ.obs.taint


def test_masked_store_never_poisons_the_hardened_fixpoint(corpus):
    # flag-then-step: the out-of-bounds store is masked in the same
    # round its address first escapes the region, so memory survives
    program, policy = corpus("counter_store")
    report = harden(program, policy)
    for loc in range(len(program) + 1):
        st = report.spec[loc]
        if st is not None:
            assert not st.vmem.lost and not st.tmem.lost


def test_secret_branch_is_flagged_and_maskable():
    program = parse_program("0: beqz s, 2\n1: x <- 1\n2: end")
    policy = parse_policy("width 4\nreg s secret\n")
    report = harden(program, policy)
    assert dict(report.reasons) == {0: REASON_OBS}
    assert transform(program, {0}) == frozenset({0})


def test_transform_rejects_unmaskable_locations():
    program = parse_program("0: x <- 1\n1: end")
    with pytest.raises(ValueError, match="not maskable"):
        transform(program, {0})


def test_switch_contributes_nothing_without_sequential_facts(corpus):
    # the load sits behind a sequentially dead branch
    program, policy = corpus("branch_bypass")
    seq = fixpoint(program, policy)
    spec = fixpoint(program, policy, spec=True)
    assert seq[2] is None
    assert switch_step(program, 2, spec[2], seq) == []


def test_switch_invents_no_precision():
    # sequentially the address is an arbitrary number, so the load is
    # top and secret either way; masking must not improve on that
    program = parse_program("0: load y, s\n1: end")
    policy = parse_policy("width 4\nreg s public\n")
    seq = fixpoint(program, policy)
    succ = switch_step(program, 0, seq[0], seq)[0]
    assert succ.state.reg("y").top
    assert succ.state.taint("y") == vec(Label.HIGH, 4)


class TestLowering:
    def test_branch_bypass_listing(self, corpus):
        program, policy = corpus("branch_bypass")
        report = harden(program, policy)
        lowered = lower_with_flag(program, report.hardened, policy.width)
        assert lowered.pretty() == "\n".join(
            [
                "0: __flag <- 0",
                "1: x <- 0",
                "2: beqz x, 6",
                "3: cmov __flag, 255 if ((Not (x Or (0 Minus x))) Lshr 7)",
                "4: load y, (s Or __flag)",
                "5: jmp 8",
                "6: cmov __flag, 255 if x",
                "7: jmp 8",
                "8: end",
            ]
        )

    @pytest.mark.parametrize(
        "name", ["branch_bypass", "chained_lookup", "counter_store"]
    )
    def test_round_trips_through_the_parser(self, corpus, name):
        window, _ = EXPECTED[name]
        program, policy = corpus(name)
        report = harden(program, policy, obs_window=window)
        lowered = lower_with_flag(program, report.hardened, policy.width)
        assert parse_program(lowered.pretty()) == lowered

    def test_hardened_branch_gets_a_masked_condition(self):
        program = parse_program("0: beqz s, 2\n1: x <- 1\n2: end")
        listing = lower_with_flag(program, frozenset({0}), 4).pretty()
        assert "__hc0 <- (s Or __flag)" in listing
        assert "beqz __hc0" in listing

    def test_flag_name_collision_is_an_error(self):
        program = parse_program(f"0: {FLAG} <- 1\n1: end")
        with pytest.raises(ValueError, match="already uses"):
            lower_with_flag(program, frozenset(), 4)

    def test_lowered_gadget_blocks_the_leak(self, corpus):
        # force the branch: the unlowered program leaks the secret
        # address while misspeculating, the lowered one observes the
        # all-ones mask instead
        program, policy = corpus("branch_bypass")
        directives = [Directive.STEP, Directive.FORCE]

        raw = run(program, init_state(program, policy), list(directives))
        assert any(
            ev.during_spec and Label.HIGH in ev.obs.taint for ev in raw.events
        )

        report = harden(program, policy)
        lowered = lower_with_flag(program, report.hardened, policy.width)
        # same force point: location 2 of the lowered text is the branch
        low = run(
            lowered,
            init_state(lowered, policy),
            [Directive.STEP, Directive.STEP, Directive.FORCE],
        )
        assert any(ev.during_spec for ev in low.events)
        assert all(
            Label.HIGH not in ev.obs.taint
            for ev in low.events
            if ev.during_spec
        )
