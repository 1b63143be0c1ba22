"""Bit-level speculative taint analysis and targeted hardening for a
small assembly core.

The package is layered bottom-up:

- ``lang``: programs, expressions, parsing, observation policies
- ``machine``: fixed-width machine arithmetic
- ``taint``: the bit-level taint lattice and per-operator transfer rules
- ``concrete``: directive-driven speculative execution with taint
- ``absdom``: intervals, disjoint interval sets, base-offset values
- ``absint``: sequential and speculative abstract interpretation
- ``hardener``: the two-phase analysis choosing what to protect
- ``oracle``: brute-force checkers for the security properties
- ``cli``: command line front end
"""

from __future__ import annotations

__version__ = "0.1.0"

from .lang import Level, ParseError, Policy, Program, parse_policy, parse_program
from .taint import Label, TaintVec, check_well_defined, taint_apply

__all__ = [
    "__version__",
    "Level",
    "ParseError",
    "Policy",
    "Program",
    "parse_policy",
    "parse_program",
    "Label",
    "TaintVec",
    "taint_apply",
    "check_well_defined",
]
