"""The brute-force checkers, against the corpus and against themselves."""

from __future__ import annotations

import itertools

import pytest

import specvet.oracle as oracle
from specvet.absint import fixpoint
from specvet.concrete import Directive, ObsKind, init_state, run
from specvet.hardener import harden
from specvet.lang import Op, parse_policy, parse_program
from specvet.oracle import (
    EnumBounds,
    Exhaustion,
    Outcome,
    all_point_dis,
    check_abstraction,
    check_di_soundness,
    check_interval_soundness,
    check_sni,
    check_ss,
    check_ss_implies_sni,
    initial_specs,
    live_in_registers,
    random_program,
    replay_sni,
    replay_ss,
    sampled_di_pairs,
    state_in_gamma,
)
from specvet.taint import Label

# window per example, as the analysis is meant to be run on it
WINDOWS = {
    "branch_bypass": None,
    "masked_gadget": None,
    "masked_index": (2, 3),
    "offset_arith": None,
    "struct_walk": None,
    "chained_lookup": None,
    "counter_store": None,
    "aligned_copy_var": (6, 15),
    "aligned_copy_fixed": (6, 15),
}


def test_branch_bypass_leaks_under_forced_misprediction(corpus):
    program, policy = corpus("branch_bypass")
    v = check_ss(program, policy)
    assert v.outcome is Outcome.VIOLATION
    w = v.witness
    assert w.directives == (Directive.STEP, Directive.FORCE)
    assert w.loc == 2
    assert w.obs.kind is ObsKind.LOAD
    assert set(w.obs.taint) == {Label.HIGH}
    # index 0 is the branch's own event, emitted architecturally before
    # the misprediction takes effect; it must not be the witness
    assert w.index == 1
    assert replay_ss(program, policy, w)


def test_hardening_the_flagged_load_restores_safety(corpus):
    program, policy = corpus("branch_bypass")
    v = check_ss(program, policy, hardened=frozenset({2}))
    assert v.ok
    assert (v.checked_states, v.checked_traces) == (8, 16)


def test_masked_gadget_is_safe_despite_the_static_flag(corpus):
    # the hand-placed cmov mask protects every trace the checker can
    # force; the analysis still flags the load because the join at the
    # branch loses the mask/branch correlation
    program, policy = corpus("masked_gadget")
    v = check_ss(program, policy)
    assert v.ok
    assert (v.checked_states, v.checked_traces) == (8, 16)


def test_chained_lookup_flag_is_conservative_too(corpus):
    program, policy = corpus("chained_lookup")
    assert check_ss(program, policy).ok


def test_branch_bypass_also_breaks_noninterference(corpus):
    program, policy = corpus("branch_bypass")
    v = check_sni(program, policy)
    assert v.outcome is Outcome.VIOLATION
    w = v.witness
    assert dict(w.init_a.regs) == {"s": 0}
    assert dict(w.init_b.regs) == {"s": 1}
    assert w.index == 1
    assert replay_sni(program, policy, w)


@pytest.mark.parametrize("name", sorted(WINDOWS))
def test_corpus_survives_its_own_hardening(corpus, name):
    program, policy = corpus(name)
    report = harden(program, policy, obs_window=WINDOWS[name])
    v = check_ss(program, policy, hardened=report.hardened, obs_window=WINDOWS[name])
    assert v.ok, v.witness


def test_random_batch_upholds_ss_implies_sni():
    cases = [random_program(seed) for seed in range(20)]
    assert check_ss_implies_sni(cases) is None


def test_hardened_random_programs_pass():
    flagged = 0
    for seed in range(100, 115):
        program, policy = random_program(seed)
        report = harden(program, policy)
        flagged += bool(report.hardened)
        assert check_ss(program, policy, hardened=report.hardened).ok, seed
    assert flagged  # the batch must actually exercise the hardener


def test_generator_round_trips_through_the_parser():
    for seed in range(40):
        program, _ = random_program(seed)
        assert parse_program(program.pretty()) == program


def test_generated_control_flow_only_jumps_forward():
    from specvet.lang import BranchZero, Jump

    for seed in range(40):
        program, _ = random_program(seed)
        for loc, ins in enumerate(program):
            if isinstance(ins, (Jump, BranchZero)):
                assert ins.target > loc


def test_verdicts_are_reproducible(corpus):
    program, policy = corpus("branch_bypass")
    assert check_ss(program, policy) == check_ss(program, policy)
    a, pa = random_program(9)
    b, pb = random_program(9)
    assert (a, pa) == (b, pb)


def test_unbounded_loops_surface_as_inconclusive():
    loop = parse_program("0: jmp 0\n1: end")
    policy = parse_policy("width 2")
    v = check_ss(loop, policy, EnumBounds(max_steps=50))
    assert v.outcome is Outcome.INCONCLUSIVE
    assert isinstance(v.witness, Exhaustion)


def test_live_in_tracks_paths_not_syntax(corpus):
    assert live_in_registers(corpus("branch_bypass")[0]) == {"s"}
    assert live_in_registers(corpus("masked_index")[0]) == {"addr", "secret"}
    # cmov reads its destination: the old value survives a false guard
    p = parse_program("0: cmov x, 1 if y\n1: end")
    assert live_in_registers(p) == {"x", "y"}


def test_declared_ranges_drive_the_enumeration(corpus):
    program, policy = corpus("chained_lookup")
    specs = list(initial_specs(program, policy, EnumBounds()))
    assert len(specs) == 48
    assert sorted({dict(s.regs)["x"] for s in specs}) == list(range(16))
    assert {nm for s in specs for nm, _ in s.regions} == {"a", "b", "c"}


@pytest.mark.parametrize("name", ["masked_index", "aligned_copy_fixed"])
def test_gamma_accepts_every_reachable_state(corpus, name):
    program, policy = corpus(name)
    assert check_abstraction(program, policy, traces=30, seed=1) is None


def test_gamma_rejects_a_forged_value():
    program = parse_program("0: x <- 5\n1: end")
    policy = parse_policy("width 4\nreg x public")
    config = fixpoint(program, policy, spec=True)
    st = init_state(program, policy)
    run(program, st)
    assert state_in_gamma(config[1], st) is None
    st.regs["x"] = 4
    assert state_in_gamma(config[1], st) == "value of x"


def test_wrapped_products_in_shift_amounts_stay_contained():
    # seed 17 builds a shift whose amount is a product that wraps at
    # the machine width; the point-set rule once dropped the wrapped
    # value and bottomed out the destination
    program, policy = random_program(17)
    assert check_abstraction(program, policy, traces=40, seed=0) is None


@pytest.mark.parametrize("op", list(Op))
def test_interval_rules_are_sound_at_width_three(op):
    assert check_interval_soundness(op, 3) is None


@pytest.mark.parametrize("op", list(Op))
def test_point_set_rules_are_sound_at_width_two(op):
    pairs = itertools.product(all_point_dis(2, 4), repeat=2)
    assert check_di_soundness(op, 2, pairs) is None


def test_a_broken_interval_rule_is_caught(monkeypatch):
    monkeypatch.setattr(oracle, "interval_apply", lambda *a: (0, 0))
    assert check_interval_soundness(Op.ADD, 2) is not None


def test_a_broken_point_rule_is_caught(monkeypatch):
    monkeypatch.setattr(oracle, "di_apply", lambda *a: ((0, 0),))
    pairs = itertools.product(all_point_dis(2, 2), repeat=2)
    assert check_di_soundness(Op.ADD, 2, pairs) is not None


def test_sampled_pairs_are_reproducible():
    assert sampled_di_pairs(4, 10, seed=7) == sampled_di_pairs(4, 10, seed=7)
