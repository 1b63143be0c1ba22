"""Command-line front end over the executor, analyses, and checkers.

Every subcommand reads a program/policy pair except ``welldef`` and the
batch form of ``check``, which generate their own inputs. Exit status
is 0 for pass/success, 1 for a violation (an inconclusive check counts:
it is not a pass), 2 for usage and input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import absint
from .absdom import fmt_value
from .absint import abs_step_seq, abs_step_spec, fixpoint, site_names
from .concrete import (
    EPS,
    Directive,
    Obs,
    StopReason,
    init_state,
    project_observation,
    step,
)
from .hardener import harden, lower_with_flag, switch_step
from .lang import (
    Alloc,
    Assign,
    CondMove,
    Load,
    Op,
    ParseError,
    Policy,
    Program,
    parse_policy,
    parse_program,
)
from .oracle import (
    EnumBounds,
    Exhaustion,
    Outcome,
    SNIWitness,
    SSWitness,
    check_sni,
    check_ss,
    check_ss_implies_sni,
    random_program,
)
from .taint import check_well_defined, fmt_vec


class UsageError(Exception):
    pass


# --- argument helpers ---------------------------------------------------


def _int(text: str, what: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise UsageError(f"{what}: expected an integer, got {text!r}") from None


def _parse_assignments(specs: list[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for spec in specs:
        for item in spec.split(","):
            name, eq, value = item.partition("=")
            if not eq or not name:
                raise UsageError(f"--init: expected reg=value, got {item!r}")
            out[name.strip()] = _int(value, "--init")
    return out


def _parse_fills(specs: list[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for spec in specs:
        name, eq, cells = spec.partition("=")
        if not eq or not name:
            raise UsageError(f"--fill: expected region=v:v:..., got {spec!r}")
        out[name.strip()] = [_int(c, "--fill") for c in cells.split(":")]
    return out


def _parse_directives(spec: str) -> list[Directive]:
    table = {"s": Directive.STEP, "step": Directive.STEP,
             "f": Directive.FORCE, "force": Directive.FORCE}
    out = []
    for tok in spec.split(","):
        d = table.get(tok.strip().lower())
        if d is None:
            raise UsageError(f"--directives: expected s or f, got {tok!r}")
        out.append(d)
    return out


def _parse_window(spec: str | None, width: int) -> tuple[int, int] | None:
    if spec is None:
        return None
    lo, colon, hi = spec.partition(":")
    if not colon:
        raise UsageError(f"--obs-bits: expected LO:HI, got {spec!r}")
    a, b = _int(lo, "--obs-bits"), _int(hi, "--obs-bits")
    if not 0 <= a <= b < width:
        raise UsageError(f"--obs-bits: need 0 <= {a} <= {b} < width {width}")
    return (a, b)


def _parse_locs(spec: str) -> frozenset[int]:
    return frozenset(_int(tok, "--hardened") for tok in spec.split(","))


def _load_pair(args) -> tuple[Program, Policy]:
    program = parse_program(Path(args.program).read_text())
    policy = parse_policy(Path(args.policy).read_text())
    width = getattr(args, "width", None)
    if width is not None:
        if not 1 <= width <= 64:
            raise UsageError(f"--width: {width} is not in 1..64")
        policy = replace(policy, width=width)
    return program, policy


def _emit(payload: dict, lines: list[str], fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2))
    else:
        print("\n".join(lines))


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [
        max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
        for i, h in enumerate(header)
    ]
    fmt_row = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return [fmt_row(header)] + [fmt_row(r) for r in rows]


# --- exec ---------------------------------------------------------------


def _obs_json(obs: Obs, window: tuple[int, int] | None) -> dict:
    return {
        "kind": obs.kind.value,
        "value": obs.value,
        "taint": fmt_vec(project_observation(obs, window)),
    }


def _cmd_exec(args) -> int:
    program, policy = _load_pair(args)
    window = _parse_window(args.obs_bits, policy.width)
    directives = _parse_directives(args.directives) if args.directives else []
    hardened = _parse_locs(args.hardened) if args.hardened else frozenset()
    st = init_state(
        program,
        policy,
        reg_values=_parse_assignments(args.init),
        region_values=_parse_fills(args.fill),
    )
    steps: list[dict] = []
    taken = 0
    while st.stopped is None and taken < args.max_steps:
        if st.pc is None or not 0 <= st.pc < len(program):
            st.stopped = StopReason.DONE
            break
        pc = st.pc
        spec_before = st.spec
        d = directives[taken] if taken < len(directives) else Directive.STEP
        obs = step(program, st, d, hardened=hardened)
        steps.append(
            {
                "pc": pc,
                "instr": repr(program[pc]),
                "directive": d.value,
                "during_spec": spec_before,
                "obs": None if obs is None else _obs_json(obs, window),
            }
        )
        taken += 1
    stop = st.stopped.value if st.stopped else "fuel"
    regs = {
        name: None if st.regs[name] is EPS else st.regs[name]
        for name in sorted(st.regs)
    }
    payload = {"steps": steps, "stop": stop, "regs": regs}

    rows = [
        [
            str(s["pc"]),
            s["instr"],
            s["directive"] + ("*" if s["during_spec"] else ""),
            "-" if s["obs"] is None else f"{s['obs']['kind']}({s['obs']['value']})",
            "-" if s["obs"] is None else s["obs"]["taint"],
        ]
        for s in steps
    ]
    lines = _table(["pc", "instruction", "directive", "observation", "taint"], rows)
    lines.append(f"stop: {stop} after {taken} steps")
    lines.append(
        "regs: " + " ".join(
            f"{n}={'ε' if v is None else v}" for n, v in regs.items()
        )
    )
    _emit(payload, lines, args.format)
    return 0


# --- analyze ------------------------------------------------------------

_WRITERS = (Assign, Load, CondMove, Alloc)


def _cmd_analyze(args) -> int:
    program, policy = _load_pair(args)
    window = _parse_window(args.obs_bits, policy.width)
    report = harden(program, policy, obs_window=window)
    spec = fixpoint(program, policy, spec=True)
    names = site_names(program)

    def cell(config, loc: int, dst: str, hardened: bool) -> str:
        entry = config[loc]
        if entry is None:
            return "-"
        if config is report.seq:
            succ = abs_step_seq(program, loc, entry)
        elif hardened and loc in report.hardened:
            succ = switch_step(program, loc, entry, report.seq)
        else:
            succ = abs_step_spec(program, loc, entry)
        state = succ[0].state
        if args.taints:
            return fmt_vec(state.taint(dst))
        return fmt_value(state.reg(dst), names)

    rows_json = []
    for loc, ins in enumerate(program):
        if not isinstance(ins, _WRITERS):
            continue
        rows_json.append(
            {
                "loc": loc,
                "instr": repr(ins),
                "dst": ins.dst,
                "seq": cell(report.seq, loc, ins.dst, False),
                "spec": cell(spec, loc, ins.dst, False),
                "spec_hk": cell(report.spec, loc, ins.dst, True),
            }
        )
    payload = {"shows": "taints" if args.taints else "values", "rows": rows_json}
    rows = [
        [f"{r['loc']}: {r['instr']}", r["seq"], r["spec"], r["spec_hk"]]
        for r in rows_json
    ]
    _emit(payload, _table(["Expr", "Seq", "Spec", "Spec hk."], rows), args.format)
    return 0


# --- harden -------------------------------------------------------------


def _marker_text(program: Program, hardened: frozenset[int]) -> str:
    lines = [
        f"{'*' if loc in hardened else ' '}{loc}: {ins!r}"
        for loc, ins in enumerate(program)
    ]
    lines.append(f" {len(program)}: end")
    return "\n".join(lines)


def _cmd_harden(args) -> int:
    program, policy = _load_pair(args)
    window = _parse_window(args.obs_bits, policy.width)
    report = harden(program, policy, obs_window=window)
    payload = {
        "hardened": report.entries(),
        "window": None if window is None else list(window),
        "program": _marker_text(program, report.hardened),
    }
    lines = [
        f"{e['location']}: {e['instruction']}  [{e['reason']}]"
        for e in report.entries()
    ] or ["nothing to harden"]
    lines += ["", payload["program"]]
    if args.lower_flag:
        payload["lowered"] = lower_with_flag(
            program, report.hardened, policy.width
        ).pretty()
        lines += ["", payload["lowered"]]
    _emit(payload, lines, args.format)
    return 1 if args.strict and report.hardened else 0


# --- check --------------------------------------------------------------


def _bounds(args) -> EnumBounds:
    kw = {}
    if args.publics is not None:
        kw["public_values"] = tuple(_int(v, "--publics") for v in args.publics.split(","))
    if args.secrets is not None:
        kw["secret_values"] = tuple(_int(v, "--secrets") for v in args.secrets.split(","))
    for name in ("max_forces", "max_steps", "range_cap", "region_fills", "seed"):
        value = getattr(args, name)
        if value is not None:
            kw[name] = value
    return EnumBounds(**kw)


def _init_json(init) -> dict:
    return {
        "regs": dict(init.regs),
        "regions": {name: list(cells) for name, cells in init.regions},
    }


def _witness_json(w) -> dict | None:
    match w:
        case SSWitness():
            return {
                "init": _init_json(w.init),
                "directives": [d.value for d in w.directives],
                "index": w.index,
                "loc": w.loc,
                "obs": _obs_json(w.obs, None),
            }
        case SNIWitness():
            return {
                "init_a": _init_json(w.init_a),
                "init_b": _init_json(w.init_b),
                "directives": [d.value for d in w.directives],
                "index": w.index,
            }
        case Exhaustion():
            return {
                "init": _init_json(w.init),
                "directives": [d.value for d in w.directives],
            }
    return None


def _cmd_check(args) -> int:
    bounds = _bounds(args)
    if args.property == "ss-implies-sni":
        cases = [random_program(seed) for seed in range(args.count)]
        found = check_ss_implies_sni(cases, bounds)
        if found is None:
            payload = {"property": args.property, "count": args.count,
                       "outcome": "pass"}
            _emit(payload, [f"ss-implies-sni: pass over {args.count} programs"],
                  args.format)
            return 0
        idx, ss, sni = found
        payload = {
            "property": args.property,
            "count": args.count,
            "outcome": "violation",
            "seed": idx,
            "sni_witness": _witness_json(sni.witness),
        }
        _emit(payload, [f"ss-implies-sni: counterexample at seed {idx}"],
              args.format)
        return 1

    if args.program is None or args.policy is None:
        raise UsageError(f"--property {args.property} needs a program and a policy")
    program, policy = _load_pair(args)
    window = _parse_window(args.obs_bits, policy.width)
    hardened = _parse_locs(args.hardened) if args.hardened else frozenset()
    if args.harden_first:
        hardened |= harden(program, policy, obs_window=window).hardened
    if args.property == "ss":
        verdict = check_ss(program, policy, bounds, hardened, window)
    else:
        verdict = check_sni(program, policy, bounds, hardened)
    payload = {
        "property": args.property,
        "outcome": verdict.outcome.value,
        "checked_states": verdict.checked_states,
        "checked_traces": verdict.checked_traces,
        "hardened": sorted(hardened),
        "witness": _witness_json(verdict.witness),
    }
    lines = [
        f"{args.property}: {verdict.outcome.value} "
        f"({verdict.checked_states} states, {verdict.checked_traces} traces)"
    ]
    if payload["witness"] is not None:
        lines.append(json.dumps(payload["witness"]))
    _emit(payload, lines, args.format)
    return 0 if verdict.outcome is Outcome.PASS else 1


# --- welldef ------------------------------------------------------------


def _cmd_welldef(args) -> int:
    ops = list(Op) if args.op == "all" else [Op[args.op.upper()]]
    width = args.width
    if width is None:
        width = _int(os.environ.get("SPECVET_WIDTH", "3"), "SPECVET_WIDTH")
    if not 1 <= width <= 8:
        raise UsageError(f"--width: exhaustive audit needs 1..8, got {width}")
    results = []
    lines = []
    failed = False
    for op in ops:
        v = check_well_defined(op, width)
        failed |= v is not None
        results.append(
            {"op": op.value, "outcome": "pass" if v is None else "violation",
             "detail": None if v is None else repr(v)}
        )
        lines.append(
            f"{op.value} width {width}: " + ("pass" if v is None else repr(v))
        )
    _emit({"width": width, "results": results}, lines, args.format)
    return 1 if failed else 0


# --- wiring -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specvet",
        description="Speculative leak analysis and hardening for a small "
        "assembly language.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_pair(p, optional=False):
        nargs = {"nargs": "?", "default": None} if optional else {}
        p.add_argument("program", help="program file", **nargs)
        p.add_argument("policy", help="policy file", **nargs)
        p.add_argument("--width", type=int, help="override the policy width")
        p.add_argument(
            "--format", choices=("text", "json"), default="text",
            help="output format",
        )
        p.add_argument(
            "--obs-bits", metavar="LO:HI", default=None,
            help="address bits an observer sees on memory accesses",
        )
        p.add_argument(
            "--widen", type=int, default=None,
            help="iterations before a growing component is widened",
        )

    p = sub.add_parser("exec", help="run a program under explicit directives")
    add_pair(p)
    p.add_argument("--init", action="append", default=[], metavar="REG=VAL[,..]")
    p.add_argument("--fill", action="append", default=[], metavar="REGION=V:V:..")
    p.add_argument("--directives", metavar="s,f,..", default=None,
                   help="one per step: s(tep) or f(orce); then all steps")
    p.add_argument("--hardened", metavar="LOC[,..]", default=None,
                   help="locations executed in masked form")
    p.add_argument("--max-steps", type=int, default=10_000)
    p.set_defaults(fn=_cmd_exec)

    p = sub.add_parser("analyze", help="per-instruction abstract results")
    add_pair(p)
    p.add_argument("--taints", action="store_true",
                   help="show taint vectors instead of values")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("harden", help="flag leaky instructions and mask them")
    add_pair(p)
    p.add_argument("--lower-flag", action="store_true",
                   help="also emit the explicit flag-register lowering")
    p.add_argument("--strict", action="store_true",
                   help="exit 1 when anything had to be hardened")
    p.set_defaults(fn=_cmd_harden)

    p = sub.add_parser("check", help="brute-force a security property")
    add_pair(p, optional=True)
    p.add_argument("--property", choices=("ss", "sni", "ss-implies-sni"),
                   required=True)
    p.add_argument("--hardened", metavar="LOC[,..]", default=None)
    p.add_argument("--harden-first", action="store_true",
                   help="run the pipeline and check its output")
    p.add_argument("--count", type=int, default=100,
                   help="programs to generate for ss-implies-sni")
    p.add_argument("--publics", default=None, metavar="V,V,..")
    p.add_argument("--secrets", default=None, metavar="V,V,..")
    p.add_argument("--max-forces", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--range-cap", type=int, default=None)
    p.add_argument("--region-fills", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("welldef", help="audit a taint operator exhaustively")
    p.add_argument("--op", required=True,
                   choices=[op.name.lower() for op in Op] + ["all"])
    p.add_argument("--width", type=int, default=None,
                   help="defaults to $SPECVET_WIDTH, then 3")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=_cmd_welldef)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    widen = getattr(args, "widen", None)
    saved = absint.WIDEN_AT
    if widen is not None:
        if widen < 1:
            print("error: --widen must be positive", file=sys.stderr)
            return 2
        absint.WIDEN_AT = widen
    try:
        return args.fn(args)
    except (UsageError, ParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        absint.WIDEN_AT = saved


if __name__ == "__main__":
    raise SystemExit(main())
