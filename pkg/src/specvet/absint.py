"""Abstract interpretation of programs, sequential and speculative.

Both phases run the same transfer rules over a configuration mapping
each location to the join of abstract states that enter it. The
sequential phase refines branch registers on the two edges of a
zero-test (plus a one-hop preimage peephole for ``g <- x Lshr k``
guards); the speculative phase refines nothing and flows straight
through fences, so its fixpoint covers every misspeculated path.

A configuration step is a pure recompute: location 0 keeps the initial
state, every other location is rebuilt from its predecessors'
successor states. Components that keep growing past a threshold are
widened to the full range so loops terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

from .absdom import (
    AbsVal,
    TaintMem,
    ValueMem,
    di_norm,
    imax,
    imin,
    refine_on_branch,
    value_apply,
    value_glb_eps,
    value_leq,
    value_lub,
    value_number,
    value_number_top,
    value_from_site,
    value_widen,
)
from .concrete import ObsKind
from .lang import (
    Alloc,
    Assign,
    BinOp,
    BranchZero,
    CondMove,
    Const,
    Expr,
    Fence,
    Instr,
    Jump,
    Level,
    Load,
    Op,
    Policy,
    Program,
    Reg,
    Store,
    UnOp,
)
from .machine import to_signed
from .taint import (
    Label,
    TaintVec,
    const_vec,
    sanitize_ceil_align,
    sanitize_range,
    taint_apply,
    vec,
    vec_leq,
    vec_lub,
)

__all__ = [
    "AbsState",
    "AbsObs",
    "Succ",
    "Config",
    "initial_state",
    "abs_step_seq",
    "abs_step_spec",
    "eval_value",
    "eval_taint",
    "config_step",
    "fixpoint",
    "join_states",
    "leq_states",
    "site_names",
    "project_abs_observation",
]

# growth steps at one location before jumping to the full range
WIDEN_AT = 16


@dataclass(frozen=True)
class AbsState:
    """Register values, register taints, and the two memories."""

    width: int
    regs: tuple[tuple[str, AbsVal], ...]
    taints: tuple[tuple[str, TaintVec], ...]
    vmem: ValueMem
    tmem: TaintMem

    @cached_property
    def _regmap(self) -> dict[str, AbsVal]:
        return dict(self.regs)

    @cached_property
    def _taintmap(self) -> dict[str, TaintVec]:
        return dict(self.taints)

    def reg(self, name: str) -> AbsVal:
        return self._regmap[name]

    def taint(self, name: str) -> TaintVec:
        return self._taintmap[name]

    def put(
        self,
        name: str,
        value: AbsVal | None = None,
        taint: TaintVec | None = None,
    ) -> "AbsState":
        regs = self.regs
        taints = self.taints
        if value is not None:
            regs = tuple((n, value if n == name else v) for n, v in regs)
        if taint is not None:
            taints = tuple((n, taint if n == name else t) for n, t in taints)
        return replace(self, regs=regs, taints=taints)


@dataclass(frozen=True)
class AbsObs:
    """Abstract observation: the address (or condition) value and taint."""

    kind: ObsKind
    value: AbsVal
    taint: TaintVec


def project_abs_observation(obs: AbsObs, window: tuple[int, int] | None) -> TaintVec:
    """Branch conditions leak whole; accesses leak the sliced address."""
    if obs.kind is ObsKind.BRANCH or window is None:
        return obs.taint
    lo, hi = window
    return obs.taint[lo : hi + 1]


@dataclass(frozen=True)
class Succ:
    target: int
    state: AbsState
    obs: AbsObs | None = None
    oob_store: bool = False


Config = dict[int, AbsState | None]


def site_names(program: Program) -> dict[int, str]:
    return {loc: ins.dst for loc, ins in program.alloc_sites.items()}


def _signed_di(lo: int, hi: int, width: int):
    """Unsigned policy range as a signed DI, split if it wraps."""
    slo, shi = to_signed(lo, width), to_signed(hi, width)
    if slo <= shi:
        return di_norm(((slo, shi),), width)
    return di_norm(((imin(width), shi), (slo, imax(width))), width)


def _ranged_taint(level_vec: TaintVec, lo: int, hi: int, width: int) -> TaintVec:
    # bits above the range's magnitude are known zero
    if lo >= 0 and hi.bit_length() < width:
        return sanitize_range(level_vec, hi.bit_length())
    return level_vec


def initial_state(program: Program, policy: Policy) -> AbsState:
    """Entry state: policy ranges narrow registers and cells, everything
    else is an unknown number; unlisted taints default to secret."""
    width = policy.width
    regs = {}
    taints = {}
    for name in sorted(program.registers()):
        level_vec = vec(
            Label.LOW if policy.level_of_reg(name) is Level.PUBLIC else Label.HIGH,
            width,
        )
        rng = policy.reg_ranges.get(name)
        if rng is not None:
            regs[name] = AbsVal(width, eps=_signed_di(*rng, width))
            taints[name] = _ranged_taint(level_vec, *rng, width)
        else:
            regs[name] = value_number_top(width)
            taints[name] = level_vec
    vdefaults = {}
    tdefaults = {}
    for loc, ins in program.alloc_sites.items():
        region = policy.regions.get(ins.dst)
        level = region.level if region else Level.SECRET
        level_vec = vec(Label.LOW if level is Level.PUBLIC else Label.HIGH, width)
        if region and region.cells is not None:
            cell_val = AbsVal(width, eps=_signed_di(*region.cells, width))
            cell_taint = _ranged_taint(level_vec, *region.cells, width)
        else:
            cell_val = value_number_top(width)
            cell_taint = level_vec
        vdefaults[loc] = (ins.size, cell_val)
        tdefaults[loc] = (ins.size, cell_taint)
    return AbsState(
        width,
        tuple(sorted(regs.items())),
        tuple(sorted(taints.items())),
        ValueMem.initial(width, vdefaults),
        TaintMem.initial(width, tdefaults),
    )


def eval_value(expr: Expr, state: AbsState) -> AbsVal:
    w = state.width
    match expr:
        case Reg(name):
            return state.reg(name)
        case Const(value):
            return value_number(w, to_signed(value & ((1 << w) - 1), w))
        case UnOp(op, operand):
            return value_apply(op, eval_value(operand, state), None, w)
        case BinOp(op, left, right):
            return value_apply(
                op, eval_value(left, state), eval_value(right, state), w
            )
    raise TypeError(f"cannot evaluate {expr!r}")


def eval_taint(expr: Expr, state: AbsState) -> TaintVec:
    w = state.width
    match expr:
        case Reg(name):
            return state.taint(name)
        case Const(value):
            return const_vec(value, w)
        case UnOp(op, operand):
            return taint_apply(op, eval_taint(operand, state), None)
        case BinOp(op, left, right):
            return taint_apply(
                op, eval_taint(left, state), eval_taint(right, state)
            )
    raise TypeError(f"cannot evaluate {expr!r}")


def _sanitized_assign_taint(
    program: Program, loc: int, value: AbsVal, taint: TaintVec
) -> TaintVec:
    """Taint refinements justified by value facts (see the taint module's
    sanitizers): a number known below a power of two has zero high bits,
    and the three-instruction ceil-align idiom zeroes low bits."""
    width = len(taint)
    if value.is_number and value.eps:
        lo, hi = value.eps[0][0], value.eps[-1][1]
        if lo >= 0 and hi.bit_length() < width:
            taint = sanitize_range(taint, hi.bit_length())
    k = _ceil_align_window(program, loc)
    if k is not None:
        taint = sanitize_ceil_align(taint, k)
    return taint


def _and_const_operand(expr: Expr) -> tuple[str, int] | None:
    match expr:
        case BinOp(Op.AND, Reg(a), Const(m)) | BinOp(Op.AND, Const(m), Reg(a)):
            return a, m
    return None


def _ceil_align_window(program: Program, loc: int) -> int | None:
    """Matches ``b = a And (2^k - 1); c = 2^k Minus b; d = a Add c`` ending
    at loc; the sum's k low bits are zero by construction."""
    if loc < 2:
        return None
    match program[loc]:
        case Assign(_, BinOp(Op.ADD, Reg(x), Reg(y))):
            pairs = ((x, y), (y, x))
        case _:
            return None
    for a, c in pairs:
        match program[loc - 1], program[loc - 2]:
            case (
                Assign(c1, BinOp(Op.MINUS, Const(m), Reg(b))),
                Assign(b1, inner),
            ) if (
                c1 == c
                and b1 == b
                and m > 0
                and m & (m - 1) == 0
                and _and_const_operand(inner) == (a, m - 1)
            ):
                return m.bit_length() - 1
    return None


def _guard_preimage(program: Program, loc: int, branch_reg: str) -> tuple[str, int] | None:
    """One-hop pattern ``g <- x Lshr k`` right before ``beqz g``: g is zero
    exactly when unsigned x < 2^k."""
    if loc == 0:
        return None
    match program[loc - 1]:
        case Assign(dst, BinOp(Op.LSHR, Reg(x), Const(k))) if (
            dst == branch_reg and x != branch_reg and 0 <= k
        ):
            return x, k
    return None


def _abs_step(
    program: Program, loc: int, state: AbsState, spec: bool
) -> list[Succ]:
    width = state.width
    ins: Instr = program[loc]
    match ins:
        case Assign(dst, expr):
            v = eval_value(expr, state)
            t = _sanitized_assign_taint(program, loc, v, eval_taint(expr, state))
            return [Succ(loc + 1, state.put(dst, v, t))]

        case Load(dst, addr):
            v = eval_value(addr, state)
            t = eval_taint(addr, state)
            value = state.vmem.load(v)
            taint = (
                vec(Label.HIGH, width)
                if Label.HIGH in t
                else state.tmem.load(v)
            )
            return [
                Succ(
                    loc + 1,
                    state.put(dst, value, taint),
                    AbsObs(ObsKind.LOAD, v, t),
                )
            ]

        case Store(src, addr):
            v = eval_value(addr, state)
            t = eval_taint(addr, state)
            stored = (
                vec(Label.HIGH, width) if Label.HIGH in t else state.taint(src)
            )
            bounded = state.vmem.in_bounds(v)
            new = replace(
                state,
                vmem=state.vmem.store(v, state.reg(src)),
                tmem=state.tmem.store(v, bounded, stored),
            )
            return [
                Succ(
                    loc + 1,
                    new,
                    AbsObs(ObsKind.STORE, v, t),
                    oob_store=not bounded,
                )
            ]

        case Jump(target):
            return [Succ(target, state)]

        case BranchZero(reg, target):
            v = state.reg(reg)
            obs = AbsObs(ObsKind.BRANCH, v, state.taint(reg))
            if spec:
                return [Succ(target, state, obs), Succ(loc + 1, state, obs)]
            out = []
            pre = _guard_preimage(program, loc, reg)
            for taken, nxt in ((True, target), (False, loc + 1)):
                refined = refine_on_branch(v, taken)
                if refined.is_bottom and not v.is_bottom:
                    continue  # edge infeasible
                st = state.put(reg, refined)
                if pre is not None:
                    x, k = pre
                    bound = 1 << k
                    constraint = (
                        di_norm(((0, bound - 1),), width)
                        if taken
                        else di_norm(
                            ((imin(width), -1), (bound, imax(width))), width
                        )
                    )
                    narrowed = value_glb_eps(st.reg(x), constraint)
                    if narrowed.is_bottom and not st.reg(x).is_bottom:
                        continue
                    st = st.put(x, narrowed)
                out.append(Succ(nxt, st, obs))
            return out

        case CondMove(dst, expr, cond):
            t = eval_taint(expr, state)
            t_cond = eval_taint(cond, state)
            v = eval_value(expr, state)
            taint = (
                vec(Label.HIGH, width)
                if Label.HIGH in t_cond
                else vec_lub(t, state.taint(dst))
            )
            return [
                Succ(loc + 1, state.put(dst, value_lub(state.reg(dst), v), taint))
            ]

        case Fence():
            # the blocking speculative outcome contributes no successor
            return [Succ(loc + 1, state)]

        case Alloc(dst, _):
            return [
                Succ(
                    loc + 1,
                    state.put(dst, value_from_site(width, loc), vec(Label.LOW, width)),
                )
            ]

    raise TypeError(f"cannot step {ins!r}")


def abs_step_seq(program: Program, loc: int, state: AbsState) -> list[Succ]:
    return _abs_step(program, loc, state, spec=False)


def abs_step_spec(program: Program, loc: int, state: AbsState) -> list[Succ]:
    return _abs_step(program, loc, state, spec=True)


def join_states(s1: AbsState, s2: AbsState) -> AbsState:
    return AbsState(
        s1.width,
        tuple((n, value_lub(v, s2.reg(n))) for n, v in s1.regs),
        tuple((n, vec_lub(t, s2.taint(n))) for n, t in s1.taints),
        s1.vmem.join(s2.vmem),
        s1.tmem.join(s2.tmem),
    )


def leq_states(s1: AbsState, s2: AbsState) -> bool:
    return (
        all(value_leq(v, s2.reg(n)) for n, v in s1.regs)
        and all(vec_leq(t, s2.taint(n)) for n, t in s1.taints)
        and s1.vmem.leq(s2.vmem)
        and s1.tmem.leq(s2.tmem)
    )


def _widen_states(old: AbsState, joined: AbsState) -> AbsState:
    return AbsState(
        old.width,
        tuple((n, value_widen(v, joined.reg(n))) for n, v in old.regs),
        joined.taints,
        old.vmem.widen(joined.vmem),
        joined.tmem,
    )


Stepper = Callable[[int, "AbsState"], list[Succ]]


def config_step(program: Program, config: Config, step_at: Stepper) -> Config:
    """One pure recompute: location 0 is pinned to the initial state,
    every other slot is the join of its predecessors' successors. The
    slot at len(program) collects states that ran off the end."""
    buckets: dict[int, AbsState] = {}
    for loc in range(len(program)):
        st = config[loc]
        if st is None:
            continue
        for succ in step_at(loc, st):
            if not 0 <= succ.target <= len(program):
                continue
            cur = buckets.get(succ.target)
            buckets[succ.target] = (
                succ.state if cur is None else join_states(cur, succ.state)
            )
    new: Config = {loc: buckets.get(loc) for loc in range(len(program) + 1)}
    # the entry slot always keeps the initial state; a back edge into 0
    # joins on top of it instead of replacing it
    if new[0] is not None and config[0] is not None:
        new[0] = join_states(config[0], new[0])
    else:
        new[0] = config[0]
    return new


def widen_config(old: Config, new: Config, counters: dict[int, int]) -> Config:
    """Accelerate slots that keep changing; leaves settled slots alone."""
    out: Config = {}
    for loc, n in new.items():
        o = old[loc]
        if n is not None and o is not None and n != o:
            counters[loc] = counters.get(loc, 0) + 1
            if counters[loc] > WIDEN_AT:
                n = _widen_states(o, join_states(o, n))
        out[loc] = n
    return out


def fixpoint(
    program: Program,
    policy: Policy,
    spec: bool = False,
    max_iters: int = 100_000,
) -> Config:
    """Stable configuration of the chosen phase, entry-state indexed;
    the extra slot at len(program) is the exit state."""
    config: Config = {loc: None for loc in range(len(program) + 1)}
    config[0] = initial_state(program, policy)
    step_at: Stepper = (
        (lambda loc, st: abs_step_spec(program, loc, st))
        if spec
        else (lambda loc, st: abs_step_seq(program, loc, st))
    )
    counters: dict[int, int] = {}
    for _ in range(max_iters):
        new = widen_config(config, config_step(program, config, step_at), counters)
        if new == config:
            return config
        config = new
    raise RuntimeError("abstract fixpoint did not stabilize")
