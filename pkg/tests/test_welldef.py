"""The well-definedness checker is the oracle for every operator rule:
results must be legal for all operand instances, and non-H result bits
must not vary when only H operand bits change. Widths 1 and 2 run here
on all operators; the acceptance suite pushes to width 3.
"""

import pytest

import specvet.taint as taint
from specvet.lang import Op
from specvet.taint import Label, check_well_defined, vec


@pytest.mark.parametrize("op", list(Op), ids=lambda op: op.value)
@pytest.mark.parametrize("width", [1, 2])
def test_rules_are_well_defined(op, width):
    assert check_well_defined(op, width) is None


@pytest.mark.parametrize("op", [Op.ADD, Op.MINUS, Op.SHL, Op.ASHR], ids=lambda op: op.value)
def test_tricky_rules_at_width_three(op):
    assert check_well_defined(op, 3) is None


def test_checker_catches_a_rule_that_drops_taint(monkeypatch):
    monkeypatch.setattr(taint, "taint_apply", lambda op, a, b=None: vec(Label.LOW, len(a)))
    violation = check_well_defined(Op.ADD, 2)
    assert violation is not None
    assert violation.requirement == 2
    assert violation.op is Op.ADD


def test_checker_catches_an_illegal_concrete_claim(monkeypatch):
    # claiming x And y is all-ones is wrong for almost every instance
    monkeypatch.setattr(taint, "taint_apply", lambda op, a, b=None: vec(Label.ONE, len(a)))
    violation = check_well_defined(Op.AND, 2)
    assert violation is not None
    assert violation.requirement == 1
