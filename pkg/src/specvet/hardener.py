"""Selective masking of transiently leaky instructions.

The pipeline runs in three phases. Phase one is the plain sequential
fixpoint. Phase two replays the speculative analysis while growing the
set of flagged locations: each round flags every location whose step
leaks (an observation carrying H in the observable slice, or a store
whose address is not provably in bounds), then recomputes the
configuration treating flagged loads and stores as already masked. A
masked access reads garbage and writes nothing while misspeculating,
so its successor facts come from the sequential fixpoint instead of
the poisoned speculative one; that recovery is what keeps downstream
accesses off the flag list. Phase three marks the flagged locations
for the executor, or lowers them to explicit flag-register form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .absint import (
    AbsObs,
    AbsState,
    Config,
    Stepper,
    Succ,
    abs_step_spec,
    config_step,
    eval_taint,
    eval_value,
    fixpoint,
    initial_state,
    project_abs_observation,
    widen_config,
)
from .concrete import ObsKind
from .lang import (
    Assign,
    BinOp,
    BranchZero,
    CondMove,
    Const,
    Expr,
    Jump,
    Load,
    Op,
    Policy,
    Program,
    Reg,
    Store,
    UnOp,
)
from .taint import Label, vec

__all__ = [
    "REASON_OBS",
    "REASON_OOB",
    "HardenReport",
    "phase1",
    "harden_set",
    "switch_step",
    "trans_step",
    "algorithm1",
    "transform",
    "harden",
    "lower_with_flag",
    "FLAG",
]

REASON_OBS = "H-observation"
REASON_OOB = "OOB-store"

MASKABLE = (Load, Store, BranchZero)


def phase1(program: Program, policy: Policy) -> Config:
    """Sequential fixpoint; the switch rules read their facts from it."""
    return fixpoint(program, policy)


def switch_step(
    program: Program, loc: int, state: AbsState, seq: Config
) -> list[Succ]:
    """Step a flagged load or store as if it were already masked.

    The masked access is a no-op during misspeculation, so the written
    register (load) or the address (store) is taken from the sequential
    fixpoint; speculative memory is left untouched by a load. The
    emitted observation reports the sequential address and taint. A
    location the sequential phase never reaches contributes nothing.
    """
    ins = program[loc]
    pre = seq[loc]
    match ins:
        case Load(dst, addr):
            post = seq[loc + 1]
            if pre is None or post is None:
                return []
            v = eval_value(addr, pre)
            t = eval_taint(addr, pre)
            nxt = state.put(dst, post.reg(dst), post.taint(dst))
            return [Succ(loc + 1, nxt, AbsObs(ObsKind.LOAD, v, t))]
        case Store(src, addr):
            if pre is None:
                return []
            v = eval_value(addr, pre)
            t = eval_taint(addr, pre)
            stored = (
                vec(Label.HIGH, state.width)
                if Label.HIGH in t
                else state.taint(src)
            )
            bounded = state.vmem.in_bounds(v)
            nxt = replace(
                state,
                vmem=state.vmem.store(v, state.reg(src)),
                tmem=state.tmem.store(v, bounded, stored),
            )
            return [
                Succ(
                    loc + 1,
                    nxt,
                    AbsObs(ObsKind.STORE, v, t),
                    oob_store=not bounded,
                )
            ]
    raise ValueError(f"not a maskable access: {ins!r}")


def _stepper(
    program: Program, hardened: frozenset[int], seq: Config | None
) -> Stepper:
    # only flagged loads and stores switch; a flagged branch keeps the
    # plain speculative rule (its masking shows up in the executor, not
    # in the analysis)
    acc = frozenset(
        loc for loc in hardened if isinstance(program[loc], (Load, Store))
    )

    def step_at(loc: int, st) -> list[Succ]:
        if loc in acc and seq is not None:
            return switch_step(program, loc, st, seq)
        return abs_step_spec(program, loc, st)

    return step_at


def harden_set(
    program: Program,
    config: Config,
    obs_window: tuple[int, int] | None = None,
    hardened: frozenset[int] = frozenset(),
    seq: Config | None = None,
) -> dict[int, str]:
    """Locations whose step out of ``config`` leaks, with the reason.

    An observation with H anywhere in the observable slice flags its
    location; so does a store whose address is not provably in bounds.
    H-observation wins when both apply.
    """
    step_at = _stepper(program, hardened, seq)
    found: dict[int, str] = {}
    for loc in range(len(program)):
        st = config[loc]
        if st is None:
            continue
        for succ in step_at(loc, st):
            if succ.obs is not None and Label.HIGH in project_abs_observation(
                succ.obs, obs_window
            ):
                found[loc] = REASON_OBS
            elif succ.oob_store:
                found.setdefault(loc, REASON_OOB)
    return found


def trans_step(
    program: Program,
    config: Config,
    hardened: frozenset[int],
    seq: Config,
) -> Config:
    """One speculative recompute that treats flagged accesses as masked."""
    return config_step(program, config, _stepper(program, hardened, seq))


def algorithm1(
    program: Program,
    policy: Policy,
    seq: Config | None = None,
    obs_window: tuple[int, int] | None = None,
    preharden: frozenset[int] = frozenset(),
    max_iters: int = 100_000,
) -> tuple[dict[int, str], Config]:
    """Grow the flag set and the speculative fixpoint together.

    Each round flags first, then steps, so a location is masked in the
    very round its entry state first shows a leak and its poisoned
    successor facts never propagate. Returns the newly flagged
    locations with reasons (``preharden`` members are treated as
    already masked and never re-reported) and the final configuration.
    """
    if seq is None:
        seq = phase1(program, policy)
    flagged: set[int] = set(preharden)
    reasons: dict[int, str] = {}
    config: Config = {loc: None for loc in range(len(program) + 1)}
    config[0] = initial_state(program, policy)
    counters: dict[int, int] = {}
    old_config: Config | None = None
    old_flagged: set[int] | None = None
    for _ in range(max_iters):
        if config == old_config and flagged == old_flagged:
            return dict(sorted(reasons.items())), config
        old_config = config
        old_flagged = set(flagged)
        for loc, reason in harden_set(
            program, config, obs_window, frozenset(flagged), seq
        ).items():
            if loc not in flagged:
                flagged.add(loc)
                reasons[loc] = reason
        config = widen_config(
            old_config,
            trans_step(program, old_config, frozenset(flagged), seq),
            counters,
        )
    raise RuntimeError("hardening loop did not stabilize")


def transform(program: Program, hardened: set[int] | frozenset[int]) -> frozenset[int]:
    """Marker form of the hardened program: the executor masks the
    address or condition at these locations while misspeculating."""
    for loc in sorted(hardened):
        if not isinstance(program[loc], MASKABLE):
            raise ValueError(f"location {loc} is not maskable: {program[loc]!r}")
    return frozenset(hardened)


@dataclass(frozen=True)
class HardenReport:
    """Everything the pipeline decided for one program."""

    program: Program
    hardened: frozenset[int]
    reasons: tuple[tuple[int, str], ...]
    seq: Config
    spec: Config

    def entries(self) -> list[dict[str, object]]:
        return [
            {"location": loc, "instruction": repr(self.program[loc]), "reason": r}
            for loc, r in self.reasons
        ]


def harden(
    program: Program,
    policy: Policy,
    obs_window: tuple[int, int] | None = None,
) -> HardenReport:
    seq = phase1(program, policy)
    reasons, spec = algorithm1(program, policy, seq=seq, obs_window=obs_window)
    hardened = transform(program, set(reasons))
    return HardenReport(
        program, hardened, tuple(sorted(reasons.items())), seq, spec
    )


# --- textual lowering ---------------------------------------------------

FLAG = "__flag"


def _is_zero(reg: str, width: int) -> Expr:
    # 1 iff reg == 0: Not(x Or (0 Minus x)) has its sign bit set exactly
    # when x is zero; shift it down
    x = Reg(reg)
    neg = BinOp(Op.MINUS, Const(0), x)
    return BinOp(Op.LSHR, UnOp(Op.NOT, BinOp(Op.OR, x, neg)), Const(width - 1))


def lower_with_flag(
    program: Program, hardened: frozenset[int], width: int
) -> Program:
    """Rewrite the marker form into explicit flag-register updates.

    The flag starts at zero and is set to all-ones by a conditional
    move on the first wrongly resolved branch: the fall-through edge
    fires on a zero condition, the taken edge goes through an appended
    trampoline that fires on a nonzero one. Flagged operands become
    ``e Or flag``. Emit-only; the oracle checks the marker form.
    """
    regs = program.registers()
    if FLAG in regs:
        raise ValueError(f"program already uses {FLAG}")
    mask = (1 << width) - 1
    out: list = []
    start: dict[int, int] = {}
    tramps: list[tuple[int, str, int]] = []
    out.append(Assign(FLAG, Const(0)))
    for loc, ins in enumerate(program.instrs):
        start[loc] = len(out)
        match ins:
            case Load(dst, e) if loc in hardened:
                out.append(Load(dst, BinOp(Op.OR, e, Reg(FLAG))))
            case Store(src, e) if loc in hardened:
                out.append(Store(src, BinOp(Op.OR, e, Reg(FLAG))))
            case BranchZero(x, t):
                cond = x
                if loc in hardened:
                    cond = f"__hc{loc}"
                    if cond in regs:
                        raise ValueError(f"program already uses {cond}")
                    out.append(Assign(cond, BinOp(Op.OR, Reg(x), Reg(FLAG))))
                out.append(BranchZero(cond, ("tramp", loc)))
                out.append(CondMove(FLAG, Const(mask), _is_zero(cond, width)))
                tramps.append((loc, cond, t))
            case Jump(t):
                out.append(Jump(("old", t)))
            case _:
                out.append(ins)
    if tramps and not isinstance(out[-1], Jump):
        out.append(Jump(("end",)))
    tramp_at: dict[int, int] = {}
    for loc, cond, t in tramps:
        tramp_at[loc] = len(out)
        out.append(CondMove(FLAG, Const(mask), Reg(cond)))
        out.append(Jump(("old", t)))
    end = len(out)
    start[len(program)] = end

    def fix(target) -> int:
        match target:
            case ("old", t):
                return start[t]
            case ("tramp", loc):
                return tramp_at[loc]
            case ("end",):
                return end
        return target

    resolved: list = []
    for ins in out:
        match ins:
            case Jump(t) if isinstance(t, tuple):
                resolved.append(Jump(fix(t)))
            case BranchZero(r, t) if isinstance(t, tuple):
                resolved.append(BranchZero(r, fix(t)))
            case _:
                resolved.append(ins)
    return Program(tuple(resolved))
