"""Concrete speculative execution with taint tracking.

The executor runs a program under a sequence of *directives*, one per
step: ``step`` follows the architectural outcome, ``force`` (meaningful at
a branch) follows the mispredicted side and raises the misspeculation
flag, which never clears. A fence on a misspeculating state kills it.
There is no rollback: a trace either runs to completion, is killed, traps,
or exhausts its step budget. Every branch and memory access emits an
observation carrying the value an address-trace attacker sees plus its
taint vector.

Hardened locations (produced by the hardening analysis) are interpreted
with an implicit mask that is all-ones exactly while misspeculating: a
hardened access ORs the mask into its address, sending it to the invalid
address 2**width - 1, and a hardened branch ORs it into the condition.
Loads from the invalid address produce the dummy value EPS, which
propagates through computation and carries a bottom taint. The masking
also forces the emitted observation's taint to all-ones, hiding secrets.
Location numbering is unchanged: the mask is maintained by the executor,
not by extra instructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from . import machine
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
from .taint import Label, TaintVec, const_vec, sanitize_range, taint_apply, vec

__all__ = [
    "EPS",
    "Directive",
    "ObsKind",
    "Obs",
    "project_observation",
    "StopReason",
    "State",
    "ObsEvent",
    "Trace",
    "init_state",
    "step",
    "run",
]


class _Eps:
    """Dummy value produced by hardened accesses during misspeculation."""

    _instance: "_Eps | None" = None

    def __new__(cls) -> "_Eps":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EPS"


EPS = _Eps()

Value = int | _Eps


class Directive(Enum):
    STEP = "step"
    FORCE = "force"


class ObsKind(Enum):
    BRANCH = "branch"
    LOAD = "load"
    STORE = "store"


@dataclass(frozen=True)
class Obs:
    kind: ObsKind
    value: int
    taint: TaintVec

    def __repr__(self) -> str:
        from .taint import fmt_vec

        return f"{self.kind.value}({self.value}):{fmt_vec(self.taint)}"


def project_observation(obs: Obs, window: tuple[int, int] | None) -> TaintVec:
    """Taint an observer sees: load/store addresses restricted to the
    window's bit positions [lo, hi], branches always full width."""
    if window is None or obs.kind is ObsKind.BRANCH:
        return obs.taint
    lo, hi = window
    return obs.taint[lo : hi + 1]


class StopReason(Enum):
    DONE = "done"  # pc left the program
    KILLED = "killed"  # fence during misspeculation
    TRAP = "trap"  # division by zero
    EPS_BRANCH = "eps-branch"  # control depends on a dummy value
    FUEL = "fuel"  # step budget exhausted


@dataclass
class _Region:
    site: int  # program location of the alloc that made it
    base: int
    size: int
    taint: TaintVec
    values: tuple[int, ...] | None  # initial cell contents, if provided


@dataclass
class State:
    width: int
    regs: dict[str, Value]
    taints: dict[str, TaintVec]
    mem: dict[int, int]
    mem_taints: dict[int, TaintVec]
    policy: Policy
    pending_regions: dict[str, tuple[int, ...]] = field(default_factory=dict)
    pc: int | None = 0
    mem_next: int = 0
    spec: bool = False
    stopped: StopReason | None = None
    regions: list[_Region] = field(default_factory=list)
    oob_reads: int = 0

    def clone(self) -> "State":
        return replace(
            self,
            regs=dict(self.regs),
            taints=dict(self.taints),
            mem=dict(self.mem),
            mem_taints=dict(self.mem_taints),
            regions=list(self.regions),
        )

    def cell(self, addr: int) -> tuple[int, TaintVec]:
        """Read memory, falling back to region defaults; reads outside
        every region count as out-of-bounds and are secret by default."""
        if addr in self.mem:
            return self.mem[addr], self.mem_taints[addr]
        for region in self.regions:
            if region.base <= addr < region.base + region.size:
                off = addr - region.base
                value = (
                    region.values[off]
                    if region.values is not None and off < len(region.values)
                    else 0
                )
                return value, region.taint
        self.oob_reads += 1
        return 0, vec(Label.HIGH, self.width)

    def base_addrs(self) -> dict[int, set[int]]:
        """Concrete base address(es) per alloc site, for abstraction checks."""
        out: dict[int, set[int]] = {}
        for region in self.regions:
            out.setdefault(region.site, set()).add(region.base)
        return out


def _level_taint(level: Level, rng: tuple[int, int] | None, width: int) -> TaintVec:
    t = vec(Label.LOW if level is Level.PUBLIC else Label.HIGH, width)
    if rng is not None and rng[0] >= 0 and rng[1].bit_length() < width:
        return sanitize_range(t, rng[1].bit_length())
    return t


def init_state(
    program: Program,
    policy: Policy,
    reg_values: dict[str, int] | None = None,
    region_values: dict[str, list[int]] | None = None,
) -> State:
    """Initial state agreeing with the policy.

    Registers listed public start with an all-L taint, everything else
    all-H; a declared range pins the bits above its magnitude to zero.
    ``region_values`` supplies initial cell contents per region name,
    installed when the matching alloc executes.
    """
    width = policy.width
    reg_values = reg_values or {}
    regs: dict[str, Value] = {}
    taints: dict[str, TaintVec] = {}
    for name in sorted(program.registers()):
        regs[name] = machine.to_unsigned(reg_values.get(name, 0), width)
        level = policy.level_of_reg(name)
        taints[name] = _level_taint(level, policy.reg_ranges.get(name), width)
    pending = {name: tuple(vals) for name, vals in (region_values or {}).items()}
    return State(width, regs, taints, {}, {}, policy, pending)


def _eval_value(e: Expr, state: State) -> Value:
    match e:
        case Reg(name):
            return state.regs[name]
        case Const(value):
            return machine.to_unsigned(value, state.width)
        case UnOp(op, arg):
            a = _eval_value(arg, state)
            return EPS if a is EPS else machine.unop(op, a, state.width)
        case BinOp(op, left, right):
            a = _eval_value(left, state)
            b = _eval_value(right, state)
            if a is EPS or b is EPS:
                return EPS
            return machine.binop(op, a, b, state.width)
    raise TypeError(f"not an expression: {e!r}")


def _eval_taint(e: Expr, state: State) -> TaintVec:
    match e:
        case Reg(name):
            return state.taints[name]
        case Const(value):
            return const_vec(machine.to_unsigned(value, state.width), state.width)
        case UnOp(op, arg):
            return taint_apply(op, _eval_taint(arg, state))
        case BinOp(op, left, right):
            return taint_apply(op, _eval_taint(left, state), _eval_taint(right, state))
    raise TypeError(f"not an expression: {e!r}")


def _obs_addr(
    state: State, addr: Value, taint: TaintVec, masked: bool
) -> tuple[int, TaintVec, bool]:
    """Observable address, its taint, and whether the access is invalid.

    A masked access observes the invalid address with the mask's all-one
    taint; a dummy address is invalid with a bottom taint either way.
    """
    top = machine.mask(state.width)
    if addr is EPS:
        return top, vec(Label.BOT, state.width), True
    if masked:
        return top, taint_apply(Op.OR, taint, const_vec(top, state.width)), True
    return addr, taint, False


def step(
    program: Program,
    state: State,
    directive: Directive = Directive.STEP,
    hardened: frozenset[int] = frozenset(),
) -> Obs | None:
    """Execute one instruction in place; returns its observation, if any.

    The caller must check ``state.stopped`` before asking for more steps.
    """
    if state.stopped is not None:
        raise RuntimeError(f"stepping a stopped state ({state.stopped})")
    pc = state.pc
    assert pc is not None and 0 <= pc < len(program)
    masked = pc in hardened and state.spec
    try:
        obs = _dispatch(state, program[pc], directive, masked)
    except ZeroDivisionError:
        state.stopped = StopReason.TRAP
        return None
    if state.stopped is None:
        if state.pc is None:
            state.stopped = StopReason.KILLED
        elif not 0 <= state.pc < len(program):
            state.stopped = StopReason.DONE
    return obs


def _dispatch(
    state: State, ins: Instr, directive: Directive, masked: bool
) -> Obs | None:
    width = state.width
    pc = state.pc
    assert pc is not None
    match ins:
        case Assign(dst, e):
            value = _eval_value(e, state)
            taint = (
                vec(Label.BOT, width) if value is EPS else _eval_taint(e, state)
            )
            state.regs[dst] = value
            state.taints[dst] = taint
            state.pc = pc + 1
            return None

        case Load(dst, e):
            addr = _eval_value(e, state)
            t = _eval_taint(e, state)
            obs_value, obs_taint, invalid = _obs_addr(state, addr, t, masked)
            if invalid:
                state.regs[dst] = EPS
                state.taints[dst] = vec(Label.BOT, width)
            else:
                value, cell_taint = state.cell(addr)
                state.regs[dst] = value
                state.taints[dst] = (
                    vec(Label.HIGH, width) if Label.HIGH in t else cell_taint
                )
            state.pc = pc + 1
            return Obs(ObsKind.LOAD, obs_value, obs_taint)

        case Store(src, e):
            addr = _eval_value(e, state)
            t = _eval_taint(e, state)
            obs_value, obs_taint, invalid = _obs_addr(state, addr, t, masked)
            if not invalid and state.regs[src] is not EPS:
                state.mem[addr] = state.regs[src]  # type: ignore[assignment]
                state.mem_taints[addr] = (
                    vec(Label.HIGH, width) if Label.HIGH in t else state.taints[src]
                )
            state.pc = pc + 1
            return Obs(ObsKind.STORE, obs_value, obs_taint)

        case Jump(target):
            state.pc = target
            return None

        case BranchZero(reg, target):
            cond = state.regs[reg]
            t = state.taints[reg]
            if cond is EPS:
                state.stopped = StopReason.EPS_BRANCH
                return None
            if masked:
                top = machine.mask(width)
                cond |= top
                t = taint_apply(Op.OR, t, const_vec(top, width))
            taken = cond == 0
            if directive is Directive.FORCE:
                taken = not taken
                state.spec = True
            state.pc = target if taken else pc + 1
            return Obs(ObsKind.BRANCH, cond, t)

        case CondMove(dst, e, cond_e):
            cond = _eval_value(cond_e, state)
            cond_t = _eval_taint(cond_e, state)
            value = _eval_value(e, state)
            if cond is EPS or (cond != 0 and value is EPS):
                state.regs[dst] = EPS
                state.taints[dst] = vec(Label.BOT, width)
            else:
                if Label.HIGH in cond_t:
                    state.taints[dst] = vec(Label.HIGH, width)
                elif cond != 0:
                    state.taints[dst] = _eval_taint(e, state)
                if cond != 0:
                    state.regs[dst] = value
            state.pc = pc + 1
            return None

        case Fence():
            state.pc = None if state.spec else pc + 1
            return None

        case Alloc(dst, size):
            base = state.mem_next
            state.regs[dst] = base
            state.taints[dst] = vec(Label.LOW, width)
            state.mem_next += size
            region_policy = state.policy.regions.get(dst)
            level = region_policy.level if region_policy else Level.SECRET
            cells = region_policy.cells if region_policy else None
            state.regions.append(
                _Region(
                    pc,
                    base,
                    size,
                    _level_taint(level, cells, width),
                    state.pending_regions.get(dst),
                )
            )
            state.pc = pc + 1
            return None

    raise TypeError(f"cannot execute {ins!r}")


@dataclass(frozen=True)
class ObsEvent:
    obs: Obs
    loc: int
    during_spec: bool  # misspeculation flag before the step


@dataclass
class Trace:
    events: list[ObsEvent]
    state: State
    steps: int

    @property
    def observations(self) -> list[Obs]:
        return [ev.obs for ev in self.events]


def run(
    program: Program,
    state: State,
    directives: list[Directive] | None = None,
    max_steps: int = 10_000,
    hardened: frozenset[int] = frozenset(),
) -> Trace:
    """Run until the state stops or the budget runs out.

    ``directives`` are consumed one per executed instruction; once the
    list is exhausted every further step is a plain ``step``.
    """
    events: list[ObsEvent] = []
    steps = 0
    while state.stopped is None and steps < max_steps:
        if state.pc is None or not 0 <= state.pc < len(program):
            state.stopped = StopReason.DONE
            break
        loc = state.pc
        before_spec = state.spec
        d = (
            directives[steps]
            if directives is not None and steps < len(directives)
            else Directive.STEP
        )
        obs = step(program, state, d, hardened)
        if obs is not None:
            events.append(ObsEvent(obs, loc, before_spec))
        steps += 1
    if state.stopped is None:
        state.stopped = StopReason.FUEL
    return Trace(events, state, steps)
