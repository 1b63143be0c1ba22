"""Ground truth by brute force.

Everything here is deliberately slow and obvious: enumerate finite
universes of initial states and misprediction placements, run the
concrete machine, and judge the analysis against what actually happens.
Three families of checkers live here.

* ``check_ss`` / ``check_sni`` decide the two trace properties on small
  instances by exhausting directive placements up to a bound.
* ``check_abstraction`` drives random traces and verifies every reached
  state stays inside the speculative fixpoint.
* ``check_interval_soundness`` / ``check_di_soundness`` sweep the value
  domain's operators against the machine, exhaustively over interval
  pairs at small widths.

Verdicts carry replayable witnesses; exhausting a step budget makes the
verdict inconclusive, never a pass.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import machine
from .absdom import (
    DI,
    Iv,
    di_apply,
    di_contains,
    di_iter,
    di_points,
    interval_apply,
    value_contains,
)
from .absint import AbsState, Config, fixpoint
from .concrete import (
    EPS,
    Directive,
    ObsEvent,
    State,
    StopReason,
    init_state,
    project_observation,
    step,
)
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
    RegionPolicy,
    Store,
    UnOp,
    expr_regs,
)
from .taint import Label


class Outcome(Enum):
    PASS = "pass"
    VIOLATION = "violation"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class InitSpec:
    """Reproducible initial state: register values and region fills."""

    regs: tuple[tuple[str, int], ...]
    regions: tuple[tuple[str, tuple[int, ...]], ...] = ()

    def state(self, program: Program, policy: Policy) -> State:
        return init_state(
            program,
            policy,
            dict(self.regs),
            {name: list(cells) for name, cells in self.regions},
        )


@dataclass(frozen=True)
class SSWitness:
    init: InitSpec
    directives: tuple[Directive, ...]
    index: int  # position in the trace's observation list
    loc: int
    obs: object


@dataclass(frozen=True)
class SNIWitness:
    init_a: InitSpec
    init_b: InitSpec
    directives: tuple[Directive, ...]
    index: int  # first differing position; len of the shorter list if a prefix


@dataclass(frozen=True)
class Exhaustion:
    init: InitSpec
    directives: tuple[Directive, ...]


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    witness: object | None = None
    checked_states: int = 0
    checked_traces: int = 0

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.PASS


@dataclass(frozen=True)
class EnumBounds:
    """Finite universes the checkers quantify over.

    ``public_values`` seeds registers the policy marks public but does
    not range; secret registers get ``secret_values`` or, when None,
    the first ``min(2**width, 8)`` patterns. Declared ranges always win
    and are thinned to ``range_cap`` evenly spaced points when too big.
    Regions get an all-baseline fill plus ``region_fills`` seeded random
    ones per security level.
    """

    public_values: tuple[int, ...] = (0, 1)
    secret_values: tuple[int, ...] | None = None
    max_forces: int = 2
    max_steps: int = 400
    range_cap: int = 64
    region_fills: int = 2
    seed: int = 2026


def live_in_registers(program: Program) -> frozenset[str]:
    """Registers some path may read before writing.

    A conditional move counts as reading its destination (the old value
    survives a false condition) and never as definitely writing it.
    """
    live: set[str] = set()
    seen: set[tuple[int, frozenset[str]]] = set()
    stack: list[tuple[int, frozenset[str]]] = [(0, frozenset())]
    while stack:
        loc, written = stack.pop()
        if loc >= len(program) or (loc, written) in seen:
            continue
        seen.add((loc, written))
        match program[loc]:
            case Assign(dst, e) | Load(dst, e):
                live |= expr_regs(e) - written
                stack.append((loc + 1, written | {dst}))
            case Store(src, e):
                live |= (expr_regs(e) | {src}) - written
                stack.append((loc + 1, written))
            case Jump(t):
                stack.append((t, written))
            case BranchZero(r, t):
                if r not in written:
                    live.add(r)
                stack.append((loc + 1, written))
                stack.append((t, written))
            case CondMove(dst, e, c):
                live |= (expr_regs(e) | expr_regs(c) | {dst}) - written
                stack.append((loc + 1, written))
            case Fence():
                stack.append((loc + 1, written))
            case Alloc(dst, _):
                stack.append((loc + 1, written | {dst}))
    return frozenset(live)


def _spread(lo: int, hi: int, cap: int) -> tuple[int, ...]:
    size = hi - lo + 1
    if size <= cap:
        return tuple(range(lo, hi + 1))
    return tuple(sorted({lo + (i * (size - 1)) // (cap - 1) for i in range(cap)}))


def _reg_universe(name: str, policy: Policy, bounds: EnumBounds) -> tuple[int, ...]:
    rng = policy.reg_ranges.get(name)
    if rng is not None:
        return _spread(rng[0], rng[1], bounds.range_cap)
    if policy.level_of_reg(name) is Level.PUBLIC:
        return bounds.public_values
    if bounds.secret_values is not None:
        return bounds.secret_values
    return tuple(range(min(1 << policy.width, 8)))


def _baseline_cell(region: RegionPolicy | None) -> int:
    if region is not None and region.cells is not None:
        lo, hi = region.cells
        if not lo <= 0 <= hi:
            return lo
    return 0


Fill = tuple[tuple[str, tuple[int, ...]], ...]


def _fill_options(program: Program, policy: Policy, bounds: EnumBounds) -> list[Fill]:
    sizes: dict[str, int] = {}
    for ins in program.alloc_sites.values():
        sizes.setdefault(ins.dst, ins.size)
    if not sizes:
        return [()]
    rng = random.Random(bounds.seed)
    sides: dict[Level, list[str]] = {Level.PUBLIC: [], Level.SECRET: []}
    for name in sorted(sizes):
        region = policy.regions.get(name)
        sides[region.level if region else Level.SECRET].append(name)

    def random_fill(name: str) -> tuple[int, ...]:
        region = policy.regions.get(name)
        if region is not None and region.cells is not None:
            lo, hi = region.cells
            return tuple(rng.randint(lo, hi) for _ in range(sizes[name]))
        return tuple(rng.randrange(1 << policy.width) for _ in range(sizes[name]))

    def options(side: list[str]) -> list[Fill]:
        if not side:
            return [()]
        out: list[Fill] = [
            tuple(
                (nm, (_baseline_cell(policy.regions.get(nm)),) * sizes[nm])
                for nm in side
            )
        ]
        for _ in range(bounds.region_fills):
            out.append(tuple((nm, random_fill(nm)) for nm in side))
        return out

    return [
        pub + sec
        for pub in options(sides[Level.PUBLIC])
        for sec in options(sides[Level.SECRET])
    ]


def initial_specs(
    program: Program, policy: Policy, bounds: EnumBounds
) -> Iterator[InitSpec]:
    """All policy-agreeing initial states, lexicographically."""
    regs = sorted(live_in_registers(program))
    universes = [_reg_universe(r, policy, bounds) for r in regs]
    fills = _fill_options(program, policy, bounds)
    for values in product(*universes):
        for fill in fills:
            yield InitSpec(tuple(zip(regs, values)), fill)


def _public_part(spec: InitSpec, policy: Policy):
    regs = tuple(
        (n, v) for n, v in spec.regs if policy.level_of_reg(n) is Level.PUBLIC
    )
    regions = tuple(
        (n, cells)
        for n, cells in spec.regions
        if (rp := policy.regions.get(n)) is not None and rp.level is Level.PUBLIC
    )
    return regs, regions


@dataclass(frozen=True)
class RunResult:
    events: tuple[ObsEvent, ...]
    branch_steps: tuple[int, ...]  # step indices that executed a branch
    stopped: StopReason
    exhausted: bool


def _flat(forces: tuple[int, ...]) -> tuple[Directive, ...]:
    if not forces:
        return ()
    out = [Directive.STEP] * (forces[-1] + 1)
    for q in forces:
        out[q] = Directive.FORCE
    return tuple(out)


def _run_flat(
    program: Program,
    policy: Policy,
    init: InitSpec,
    forces: tuple[int, ...],
    bounds: EnumBounds,
    hardened: frozenset[int],
) -> RunResult:
    """One bounded run, mispredicting exactly at the given step indices."""
    state = init.state(program, policy)
    directives = _flat(forces)
    events: list[ObsEvent] = []
    branch_steps: list[int] = []
    steps = 0
    while state.stopped is None and steps < bounds.max_steps:
        if state.pc is None or not 0 <= state.pc < len(program):
            state.stopped = StopReason.DONE
            break
        loc = state.pc
        is_branch = isinstance(program[loc], BranchZero)
        before = state.spec
        d = directives[steps] if steps < len(directives) else Directive.STEP
        obs = step(program, state, d, hardened)
        if is_branch and state.stopped is not StopReason.EPS_BRANCH:
            branch_steps.append(steps)
        if obs is not None:
            events.append(ObsEvent(obs, loc, before))
        steps += 1
    exhausted = state.stopped is None
    if exhausted:
        state.stopped = StopReason.FUEL
    return RunResult(tuple(events), tuple(branch_steps), state.stopped, exhausted)


Runner = Callable[[InitSpec, tuple[int, ...]], RunResult]


def _explore(
    init: InitSpec, bounds: EnumBounds, run1: Runner
) -> Iterator[tuple[tuple[int, ...], RunResult]]:
    """Every placement of up to max_forces mispredictions, depth first.

    A child extends its parent with one force strictly after the
    parent's last one; the runs share their prefix, so the extension
    point is a branch encounter in the child run too.
    """

    def walk(forces: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], RunResult]]:
        res = run1(init, forces)
        yield forces, res
        if len(forces) >= bounds.max_forces:
            return
        last = forces[-1] if forces else -1
        for q in res.branch_steps:
            if q > last:
                yield from walk(forces + (q,))

    yield from walk(())


def _explore_pair(
    init_a: InitSpec, init_b: InitSpec, bounds: EnumBounds, run1: Runner
) -> Iterator[tuple[tuple[int, ...], RunResult, RunResult]]:
    """Joint force placements: extend wherever either side sees a branch."""

    def walk(
        forces: tuple[int, ...]
    ) -> Iterator[tuple[tuple[int, ...], RunResult, RunResult]]:
        ra = run1(init_a, forces)
        rb = run1(init_b, forces)
        yield forces, ra, rb
        if len(forces) >= bounds.max_forces:
            return
        last = forces[-1] if forces else -1
        for q in sorted(set(ra.branch_steps) | set(rb.branch_steps)):
            if q > last:
                yield from walk(forces + (q,))

    yield from walk(())


def check_ss(
    program: Program,
    policy: Policy,
    bounds: EnumBounds = EnumBounds(),
    hardened: frozenset[int] = frozenset(),
    obs_window: tuple[int, int] | None = None,
) -> Verdict:
    """Decide speculative safety by enumeration.

    A violation is an observation made while misspeculating whose
    projected taint contains H. The forcing branch's own observation
    does not count: it happens architecturally, before the misprediction
    takes effect, and the sequential trace emits the same event.
    """
    states = 0
    traces = 0
    exhausted: Exhaustion | None = None
    for init in initial_specs(program, policy, bounds):
        states += 1
        run1: Runner = lambda s, f: _run_flat(program, policy, s, f, bounds, hardened)
        for forces, res in _explore(init, bounds, run1):
            traces += 1
            if res.exhausted and exhausted is None:
                exhausted = Exhaustion(init, _flat(forces))
            for idx, ev in enumerate(res.events):
                if ev.during_spec and Label.HIGH in project_observation(
                    ev.obs, obs_window
                ):
                    witness = SSWitness(init, _flat(forces), idx, ev.loc, ev.obs)
                    return Verdict(Outcome.VIOLATION, witness, states, traces)
    if exhausted is not None:
        return Verdict(Outcome.INCONCLUSIVE, exhausted, states, traces)
    return Verdict(Outcome.PASS, None, states, traces)


def replay_ss(
    program: Program,
    policy: Policy,
    witness: SSWitness,
    hardened: frozenset[int] = frozenset(),
    bounds: EnumBounds = EnumBounds(),
    obs_window: tuple[int, int] | None = None,
) -> bool:
    """Re-run a violation witness and confirm the leaking event."""
    forces = tuple(
        i for i, d in enumerate(witness.directives) if d is Directive.FORCE
    )
    res = _run_flat(program, policy, witness.init, forces, bounds, hardened)
    if witness.index >= len(res.events):
        return False
    ev = res.events[witness.index]
    return (
        ev.loc == witness.loc
        and ev.during_spec
        and Label.HIGH in project_observation(ev.obs, obs_window)
    )


def _obs_signature(res: RunResult) -> tuple[tuple[str, int], ...]:
    # taint is safety instrumentation; an attacker compares kind and value
    return tuple((ev.obs.kind.value, ev.obs.value) for ev in res.events)


def check_sni(
    program: Program,
    policy: Policy,
    bounds: EnumBounds = EnumBounds(),
    hardened: frozenset[int] = frozenset(),
) -> Verdict:
    """Decide speculative non-interference by enumeration.

    Initial states that agree on all public inputs and produce identical
    sequential observations must stay indistinguishable under every
    misprediction placement. Each group is compared against its first
    member; observation equality is transitive, so a differing pair
    inside the group cannot hide from the pivot.
    """
    cache: dict[tuple[InitSpec, tuple[int, ...]], RunResult] = {}

    def run1(init: InitSpec, forces: tuple[int, ...]) -> RunResult:
        key = (init, forces)
        if key not in cache:
            cache[key] = _run_flat(program, policy, init, forces, bounds, hardened)
        return cache[key]

    groups: dict[object, list[InitSpec]] = {}
    states = 0
    exhausted: Exhaustion | None = None
    for init in initial_specs(program, policy, bounds):
        states += 1
        seq = run1(init, ())
        if seq.exhausted and exhausted is None:
            exhausted = Exhaustion(init, ())
        groups.setdefault(
            (_public_part(init, policy), _obs_signature(seq)), []
        ).append(init)

    pairs = 0
    for members in groups.values():
        pivot = members[0]
        for other in members[1:]:
            pairs += 1
            for forces, ra, rb in _explore_pair(pivot, other, bounds, run1):
                if (ra.exhausted or rb.exhausted) and exhausted is None:
                    exhausted = Exhaustion(pivot, _flat(forces))
                sig_a = _obs_signature(ra)
                sig_b = _obs_signature(rb)
                if sig_a != sig_b:
                    idx = next(
                        (
                            i
                            for i, (x, y) in enumerate(zip(sig_a, sig_b))
                            if x != y
                        ),
                        min(len(sig_a), len(sig_b)),
                    )
                    witness = SNIWitness(pivot, other, _flat(forces), idx)
                    return Verdict(Outcome.VIOLATION, witness, states, pairs)
    if exhausted is not None:
        return Verdict(Outcome.INCONCLUSIVE, exhausted, states, pairs)
    return Verdict(Outcome.PASS, None, states, pairs)


def replay_sni(
    program: Program,
    policy: Policy,
    witness: SNIWitness,
    hardened: frozenset[int] = frozenset(),
    bounds: EnumBounds = EnumBounds(),
) -> bool:
    """Re-run both sides of an SNI witness and confirm they diverge."""
    forces = tuple(
        i for i, d in enumerate(witness.directives) if d is Directive.FORCE
    )
    ra = _run_flat(program, policy, witness.init_a, forces, bounds, hardened)
    rb = _run_flat(program, policy, witness.init_b, forces, bounds, hardened)
    return _obs_signature(ra) != _obs_signature(rb)


def check_ss_implies_sni(
    cases: Sequence[tuple[Program, Policy]],
    bounds: EnumBounds = EnumBounds(),
) -> tuple[int, Verdict, Verdict] | None:
    """Hunt for a counterexample to safety implying non-interference.

    Returns the first case that passes ``check_ss`` outright yet is a
    proven SNI violation, or None when the implication holds across the
    whole batch.
    """
    for idx, (program, policy) in enumerate(cases):
        ss = check_ss(program, policy, bounds)
        if not ss.ok:
            continue
        sni = check_sni(program, policy, bounds)
        if sni.outcome is Outcome.VIOLATION:
            return idx, ss, sni
    return None


_GEN_OPS = (Op.ADD, Op.MINUS, Op.MUL, Op.AND, Op.OR, Op.XOR, Op.SHL, Op.LSHR, Op.ASHR)


def _rand_expr(rng: random.Random, readable: list[str], width: int, depth: int) -> Expr:
    if depth == 0 or rng.random() < 0.45:
        if readable and rng.random() < 0.7:
            return Reg(rng.choice(readable))
        return Const(rng.randrange(1 << width))
    if rng.random() < 0.15:
        return UnOp(Op.NOT, _rand_expr(rng, readable, width, depth - 1))
    return BinOp(
        rng.choice(_GEN_OPS),
        _rand_expr(rng, readable, width, depth - 1),
        _rand_expr(rng, readable, width, depth - 1),
    )


def _rand_addr(
    rng: random.Random, readable: list[str], width: int, has_region: bool
) -> Expr:
    if has_region:
        pick = rng.random()
        if pick < 0.35:
            return Reg("m")
        if pick < 0.6:
            return BinOp(Op.ADD, Reg("m"), Const(rng.randrange(4)))
        if pick < 0.85:
            return BinOp(
                Op.ADD, Reg("m"), BinOp(Op.AND, Reg(rng.choice(readable)), Const(3))
            )
    return _rand_expr(rng, readable, width, 1)


def random_program(
    seed: int, max_instrs: int = 8, width: int = 3
) -> tuple[Program, Policy]:
    """Small loop-free program over two public and two secret inputs.

    Branches and jumps only go forward, so every run terminates. The
    optional region m has four cells and a coin-flipped level. Temps are
    public so that paths jumping over their first write stay cheap to
    enumerate.
    """
    rng = random.Random(seed)
    n_body = rng.randint(4, max_instrs)
    has_region = rng.random() < 0.6
    instrs: list[Instr] = []
    readable = ["h1", "h2", "p1", "p2"]
    if has_region:
        instrs.append(Alloc("m", 4))
        readable.append("m")
    dsts = ("p1", "p2", "h1", "h2", "t1", "t2")
    total = len(instrs) + n_body

    def note_written(name: str) -> None:
        if name not in readable:
            readable.append(name)

    while len(instrs) < total:
        loc = len(instrs)
        kind = rng.choices(
            ("asgn", "load", "store", "branch", "cmov", "fence", "jump"),
            weights=(30, 15, 10, 20, 10, 5, 5),
        )[0]
        match kind:
            case "asgn":
                dst = rng.choice(dsts)
                instrs.append(Assign(dst, _rand_expr(rng, readable, width, 2)))
                note_written(dst)
            case "load":
                dst = rng.choice(dsts)
                instrs.append(
                    Load(dst, _rand_addr(rng, readable, width, has_region))
                )
                note_written(dst)
            case "store":
                instrs.append(
                    Store(
                        rng.choice(readable),
                        _rand_addr(rng, readable, width, has_region),
                    )
                )
            case "branch":
                target = rng.randint(min(loc + 2, total), total)
                instrs.append(BranchZero(rng.choice(readable), target))
            case "cmov":
                dst = rng.choice(dsts)
                instrs.append(
                    CondMove(
                        dst,
                        _rand_expr(rng, readable, width, 1),
                        _rand_expr(rng, readable, width, 1),
                    )
                )
                note_written(dst)
            case "fence":
                instrs.append(Fence())
            case "jump":
                instrs.append(Jump(rng.randint(min(loc + 2, total), total)))
    levels = {name: Level.PUBLIC for name in ("p1", "p2", "t1", "t2")}
    regions = (
        {
            "m": RegionPolicy(
                4, Level.PUBLIC if rng.random() < 0.5 else Level.SECRET
            )
        }
        if has_region
        else {}
    )
    return Program(tuple(instrs)), Policy(width, levels, {}, regions)


def _cell_value(state: State, region, off: int) -> int:
    addr = region.base + off
    if addr in state.mem:
        return state.mem[addr]
    if region.values is not None and off < len(region.values):
        return region.values[off]
    return 0


def _taint_within(ct, cv: int, at) -> bool:
    """What a single state can witness of a taint claim.

    Constant labels are claims about the value (the analysis may prove a
    bit zero through alignment or a declared range where plain tracking
    keeps L or H), so check them against the value's bits. An L claim
    over an H-tracked bit is a value-justified refinement too; no lone
    state refutes it, so ``check_abstraction`` defers those positions to
    its lockstep secret-varying reruns.
    """
    for i, (c, a) in enumerate(zip(ct, at)):
        match a:
            case Label.ZERO | Label.ONE:
                if (cv >> i) & 1 != (a is Label.ONE):
                    return False
            case Label.BOT:
                if c is not Label.BOT:
                    return False
    return True


def _deferred_l_bits(abs_state: AbsState, state: State) -> list[tuple]:
    """Positions claimed L by the analysis but tracked H concretely."""
    out: list[tuple] = []
    for name in sorted(state.regs):
        if state.regs[name] is EPS:
            continue
        pairs = zip(state.taints[name], abs_state.taint(name))
        for i, (c, a) in enumerate(pairs):
            if a is Label.LOW and c is Label.HIGH:
                out.append(("reg", name, i))
    if not abs_state.tmem.lost:
        tcells = dict(abs_state.tmem.cells)
        for region in state.regions:
            for off in range(region.size):
                at = tcells.get((region.site, off))
                if at is None:
                    continue
                addr = region.base + off
                ct = state.mem_taints.get(addr, region.taint)
                for i, (c, a) in enumerate(zip(ct, at)):
                    if a is Label.LOW and c is Label.HIGH:
                        out.append(("cell", (region.site, off), i))
    return out


def state_in_gamma(abs_state: AbsState | None, state: State) -> str | None:
    """Why the concrete state escapes the abstract one, or None.

    Registers holding the masked-load dummy are skipped; there is no
    bit pattern to contain.
    """
    if abs_state is None:
        return "unreachable abstractly"
    bases = state.base_addrs()
    for name in sorted(state.regs):
        cv = state.regs[name]
        if cv is EPS:
            continue
        if not value_contains(abs_state.reg(name), cv, bases):
            return f"value of {name}"
        if not _taint_within(state.taints[name], cv, abs_state.taint(name)):
            return f"taint of {name}"
    vcells = dict(abs_state.vmem.cells)
    tcells = dict(abs_state.tmem.cells)
    for region in state.regions:
        for off in range(region.size):
            cv = _cell_value(state, region, off)
            key = (region.site, off)
            addr = region.base + off
            ct = state.mem_taints.get(addr, region.taint)
            if not abs_state.vmem.lost:
                av = vcells.get(key)
                if av is None or not value_contains(av, cv, bases):
                    return f"value of cell {key}"
            if not abs_state.tmem.lost:
                at = tcells.get(key)
                if at is None or not _taint_within(ct, cv, at):
                    return f"taint of cell {key}"
    return None


@dataclass(frozen=True)
class GammaEscape:
    reason: str
    init: InitSpec
    directives: tuple[Directive, ...]
    step: int
    loc: int


def _refinements_agree(
    abs_state: AbsState | None, a: State, b: State
) -> str | None:
    """Refute a value-justified L refinement: find a deferred bit whose
    value differs between two runs agreeing on all public inputs."""
    if abs_state is None:
        return None
    regions_b = {(r.site, r.base): r for r in b.regions}
    for kind, where, i in _deferred_l_bits(abs_state, a):
        if kind == "reg":
            va, vb = a.regs[where], b.regs[where]
            if va is EPS or vb is EPS:
                continue
            if (va >> i) & 1 != (vb >> i) & 1:
                return f"L bit {i} of {where}"
        else:
            site, off = where
            ra = next(r for r in a.regions if r.site == site)
            rb = regions_b.get((ra.site, ra.base))
            if rb is None or off >= rb.size:
                continue
            va, vb = _cell_value(a, ra, off), _cell_value(b, rb, off)
            if (va >> i) & 1 != (vb >> i) & 1:
                return f"L bit {i} of cell {where}"
    return None


def _random_init(
    program: Program, policy: Policy, rng: random.Random, secrets_of: InitSpec | None
) -> InitSpec:
    """Fresh policy-respecting initial values; with ``secrets_of`` given,
    only the secret half is redrawn and the public half is copied."""
    width = policy.width
    base_regs = dict(secrets_of.regs) if secrets_of else {}
    regs = {}
    for name in sorted(live_in_registers(program)):
        public = policy.level_of_reg(name) is Level.PUBLIC
        if secrets_of is not None and public:
            regs[name] = base_regs.get(name, 0)
            continue
        r = policy.reg_ranges.get(name)
        regs[name] = rng.randint(r[0], r[1]) if r else rng.randrange(1 << width)
    sizes: dict[str, int] = {}
    for ins in program.alloc_sites.values():
        sizes.setdefault(ins.dst, ins.size)
    base_fills = dict(secrets_of.regions) if secrets_of else {}
    fills = {}
    for name in sorted(sizes):
        region = policy.regions.get(name)
        public = region is not None and region.level is Level.PUBLIC
        if secrets_of is not None and public and name in base_fills:
            fills[name] = base_fills[name]
        elif region is not None and region.cells is not None:
            fills[name] = tuple(rng.randint(*region.cells) for _ in range(sizes[name]))
        else:
            fills[name] = tuple(rng.randrange(1 << width) for _ in range(sizes[name]))
    return InitSpec(tuple(sorted(regs.items())), tuple(sorted(fills.items())))


def check_abstraction(
    program: Program,
    policy: Policy,
    traces: int = 100,
    seed: int = 0,
    peers: int = 3,
) -> GammaEscape | None:
    """Random concrete traces never leave the speculative fixpoint.

    Value containment and constant-bit claims are checked at entry to
    every executed location and at the exit slot. L claims promise
    independence from secrets, so each trace is rerun in lockstep with
    ``peers`` secret-varying twins and the claimed bits are compared
    while the control paths still agree. Forces land at random step
    indices and are plain steps when they miss a branch.
    """
    config: Config = fixpoint(program, policy, spec=True)
    rng = random.Random(seed)
    exit_slot = len(program)
    for _ in range(traces):
        init = _random_init(program, policy, rng, None)
        n_forces = rng.randint(0, 2)
        positions = tuple(sorted(rng.sample(range(16), n_forces)))
        directives = _flat(positions)
        state = init.state(program, policy)
        twins = [
            _random_init(program, policy, rng, init).state(program, policy)
            for _ in range(peers)
        ]
        steps = 0
        while state.stopped is None and steps < 4_000:
            if state.pc is None or not 0 <= state.pc < len(program):
                state.stopped = StopReason.DONE
                break
            loc = state.pc
            why = state_in_gamma(config[loc], state)
            if why:
                return GammaEscape(why, init, directives, steps, loc)
            for twin in twins:
                if twin is not None and twin.stopped is None and twin.pc == loc:
                    why = _refinements_agree(config[loc], state, twin)
                    if why:
                        return GammaEscape(why, init, directives, steps, loc)
            d = directives[steps] if steps < len(directives) else Directive.STEP
            step(program, state, d)
            for k, twin in enumerate(twins):
                if twin is not None and twin.stopped is None:
                    if twin.pc == loc:
                        step(program, twin, d)
                    else:
                        twins[k] = None  # diverged; later claims need other pairs
            steps += 1
        if state.stopped is StopReason.DONE and state.pc == exit_slot:
            why = state_in_gamma(config[exit_slot], state)
            if why:
                return GammaEscape(why, init, directives, steps, exit_slot)
            for twin in twins:
                if twin is not None and twin.pc == exit_slot:
                    why = _refinements_agree(config[exit_slot], state, twin)
                    if why:
                        return GammaEscape(why, init, directives, steps, exit_slot)
    return None


def _result_tables(op: Op, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Signed result of op at every operand pair; big sentinels where the
    machine traps, so min/max folds ignore those entries."""
    lo, hi = machine.signed_range(width)
    n = 1 << width
    big = 1 << 62
    fmin = np.full((n, n), big, dtype=np.int64)
    fmax = np.full((n, n), -big, dtype=np.int64)
    for ia, a in enumerate(range(lo, hi + 1)):
        for ib, b in enumerate(range(lo, hi + 1)):
            if op in (Op.DIV, Op.MOD) and b == 0:
                continue
            r = machine.to_signed(machine.binop(op, a, b, width), width)
            fmin[ia, ib] = r
            fmax[ia, ib] = r
    return fmin, fmax


def check_interval_soundness(op: Op, width: int):
    """First unsound interval pair for the operator, or None.

    Exhaustive over every pair of signed intervals at this width; the
    interiors are folded through precomputed result tables, so the cost
    is quadratic in the number of intervals, not of points.
    """
    lo, hi = machine.signed_range(width)
    vals = list(range(lo, hi + 1))
    n = len(vals)
    if op is Op.NOT:
        g = np.fromiter(
            (machine.to_signed(machine.unop(op, v, width), width) for v in vals),
            dtype=np.int64,
            count=n,
        )
        for ia in range(n):
            accmin = np.minimum.accumulate(g[ia:])
            accmax = np.maximum.accumulate(g[ia:])
            for k in range(n - ia):
                i1 = (vals[ia], vals[ia + k])
                flo, fhi = interval_apply(op, i1, None, width)
                if accmin[k] < flo or accmax[k] > fhi:
                    return (i1, None, (flo, fhi), (int(accmin[k]), int(accmax[k])))
        return None
    fmin, fmax = _result_tables(op, width)
    for ia1 in range(n):
        gmin = fmin[ia1].copy()
        gmax = fmax[ia1].copy()
        for ib1 in range(ia1, n):
            if ib1 > ia1:
                np.minimum(gmin, fmin[ib1], out=gmin)
                np.maximum(gmax, fmax[ib1], out=gmax)
            i1 = (vals[ia1], vals[ib1])
            for ia2 in range(n):
                accmin = np.minimum.accumulate(gmin[ia2:])
                accmax = np.maximum.accumulate(gmax[ia2:])
                for k in range(n - ia2):
                    i2 = (vals[ia2], vals[ia2 + k])
                    rmin = int(accmin[k])
                    rmax = int(accmax[k])
                    if rmin > rmax:
                        continue  # every pair in the rectangle traps
                    flo, fhi = interval_apply(op, i1, i2, width)
                    if rmin < flo or rmax > fhi:
                        return (i1, i2, (flo, fhi), (rmin, rmax))
    return None


def all_point_dis(width: int, max_points: int) -> list[DI]:
    """Every normalized set of at most max_points values."""
    from itertools import combinations

    lo, hi = machine.signed_range(width)
    seen: set[DI] = set()
    for r in range(1, max_points + 1):
        for combo in combinations(range(lo, hi + 1), r):
            seen.add(di_points(combo, width))
    return sorted(seen)


def sampled_di_pairs(
    width: int, count: int, seed: int, max_points: int = 6
) -> list[tuple[DI, DI]]:
    rng = random.Random(seed)
    lo, hi = machine.signed_range(width)

    def one() -> DI:
        k = rng.randint(1, max_points)
        return di_points((rng.randint(lo, hi) for _ in range(k)), width)

    return [(one(), one()) for _ in range(count)]


def check_di_soundness(op: Op, width: int, pairs: Iterable[tuple[DI, DI]]):
    """Membership of every concrete result, for each given operand pair."""
    for d1, d2 in pairs:
        if op is Op.NOT:
            out = di_apply(op, d1, None, width)
            for a in di_iter(d1):
                r = machine.to_signed(machine.unop(op, a, width), width)
                if not di_contains(out, r):
                    return (d1, None, a, None, r, out)
            continue
        out = di_apply(op, d1, d2, width)
        for a in di_iter(d1):
            for b in di_iter(d2):
                if op in (Op.DIV, Op.MOD) and b == 0:
                    continue
                r = machine.to_signed(machine.binop(op, a, b, width), width)
                if not di_contains(out, r):
                    return (d1, d2, a, b, r, out)
    return None
