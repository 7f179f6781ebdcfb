"""Verification toolbox for a miniature SCOOP-style language.

Two analyses over one frontend: a may-alias analyzer over access-path
relations (with regular over-approximation of loops and recursion), and a
lock-level concurrency simulator with Coffman-deadlock detection by
explicit-state breadth-first search.
"""

from .aliasing import (
    CURRENT,
    EMPTY,
    TOP,
    AliasError,
    DomainInfo,
    Neg,
    Path,
    Relation,
    Star,
    aliased_with,
    augment,
    distribute,
    dot_complete,
    normalize,
    parse_path,
    remove_prefixed,
    substitute,
)
from .engine import (
    AnalysisError,
    AnalysisReport,
    EngineConfig,
    FuelError,
    analyze,
    apply_assign,
    execute,
    lasso,
    star_fold,
)
from .frontend import DiagnosticsError, ParseError, Program, parse, unparse, validate
from .sim import DeadlockReport, SimConfig, deadlocked, init, model_check, random_walk

__version__ = "0.1.0"
