"""Abstract executor computing may-alias relations for whole programs.

The engine interprets the mini-language over alias relations: each
instruction transforms the current relation, conditionals fork and re-join
by union, and the unbounded constructs (loops, recursive calls) are made
finite by *lasso detection*.  When one more pass over a loop body or one
more entry into a recursive procedure grows the relation in a regular way
(each pair of the previous relation reappears with a repeated middle
section), the remaining infinitely many unfoldings are folded into starred
paths: ``[x, x.a.b]`` growing to ``[x, x.a.b.a.b]`` becomes
``[x, x.(a.b)*]``.  On sequential programs this always terminates and the
folded relation over-approximates every finite unfolding (no false
negatives); a fuel counter guards the cases outside that guarantee.

Cut mode is the blunt alternative: star rules are disabled, unfolding
stops after a fixed number of rounds, and any path longer than the cut
length collapses to Top ("aliased to everything").
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .aliasing import (
    CURRENT,
    EMPTY,
    TOP,
    star_matches,
    prune_subsumed,
    AliasError,
    DomainInfo,
    Neg,
    Path,
    Relation,
    Star,
    aliased_with,
    augment,
    concat,
    distribute,
    dot_complete,
    has_negative,
    is_prefix,
    negated,
    normalize,
    remove_prefixed,
    substitute,
    var,
)
from .frontend import (
    Assign,
    Block,
    Call,
    Create,
    Forget,
    Instr,
    Lock,
    Loop,
    ProcedureDecl,
    Program,
    QualifiedCall,
    ThenElse,
    Unlock,
)


class AnalysisError(AliasError):
    pass


class FuelError(AnalysisError):
    def __init__(self, message: str):
        super().__init__("E_FUEL", message)


class ShapeError(AnalysisError):
    def __init__(self, message: str):
        super().__init__("E_SHAPE", message)


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "lasso"  # "lasso" or "cut"
    cut_length: int = 10
    max_len: int = 10
    recursion_fuel: int = 1000

    def __post_init__(self):
        if self.mode not in ("lasso", "cut"):
            raise ValueError(f"mode must be 'lasso' or 'cut', got {self.mode!r}")
        if self.cut_length < 1 or self.max_len < 1 or self.recursion_fuel < 1:
            raise ValueError("cut_length, max_len and recursion_fuel must be >= 1")


@dataclass
class AnalysisReport:
    result: Relation
    dropped_negvar_pairs: int = 0
    rewrite_steps: int = 0
    lasso_events: List[Tuple[str, int, int]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "aliases": self.result.to_json(),
            "dropped_negvar_pairs": self.dropped_negvar_pairs,
            "rewrite_steps": self.rewrite_steps,
            "lasso_events": [list(e) for e in self.lasso_events],
        }


# ---------------------------------------------------------------------------
# Lasso detection and regular folding
# ---------------------------------------------------------------------------


def _decompositions(p: Path):
    """All splits of a path into (head, middle, tail) with non-empty middle,
    plus the single empty-middle split."""

    segs = p.segments
    n = len(segs)
    yield segs, (), ()
    for i in range(n):
        for j in range(i + 1, n + 1):
            yield segs[:i], segs[i:j], segs[j:]


def _pair_witnesses(e1: Path, e2: Path, grown: Relation):
    """Decomposition pairs of (e1, e2) whose middle-doubling lands in grown."""

    for x1, y1, z1 in _decompositions(e1):
        d1 = Path(x1 + y1 + y1 + z1)
        for x2, y2, z2 in _decompositions(e2):
            d2 = Path(x2 + y2 + y2 + z2)
            if grown.contains(d1, d2):
                yield (x1, y1, z1, x2, y2, z2), (d1, d2)


def lasso(base: Relation, grown: Relation) -> bool:
    """True when ``grown`` repeats ``base`` with doubled middles, two-sidedly.

    Every pair of ``base`` must admit a decomposition whose middle-doubling
    is a pair of ``grown``, and every pair of ``grown`` must be reachable
    that way from some pair of ``base``.  Empty middles are allowed (a pair
    present unchanged in both sides witnesses itself), so identical
    relations always form a lasso.
    """

    covered: Set[Tuple[Path, Path]] = set()
    for e1, e2 in base.pairs:
        found = False
        for _, doubled in _pair_witnesses(e1, e2, grown):
            found = True
            a, b = doubled
            covered.add((a, b) if a.text() <= b.text() else (b, a))
        if not found:
            return False
    return covered >= grown.pairs


def star_fold(base: Relation, grown: Relation) -> Relation:
    """Fold a lasso into starred paths covering every further repetition.

    Each witnessing decomposition ``[x1 y1 z1, x2 y2 z2]`` with doubling in
    ``grown`` contributes ``[x1.(y1)*.z1, x2.(y2)*.z2]``; an empty middle
    contributes its side unchanged (no star group).  All witnesses are
    kept: the union is the safest over-approximation when several
    decompositions explain the same growth.
    """

    if not lasso(base, grown):
        raise AnalysisError("E_NOT_LASSO", "relations do not form a lasso")
    out = []
    for e1, e2 in base.pairs:
        for (x1, y1, z1, x2, y2, z2), _ in _pair_witnesses(e1, e2, grown):
            f1 = Path(x1 + ((Star(y1),) if y1 else ()) + z1)
            f2 = Path(x2 + ((Star(y2),) if y2 else ()) + z2)
            out.append((f1, f2))
    return prune_subsumed(Relation.of(out))


def member_by_expansion(a: Path, b: Path, starred: Relation) -> bool:
    """Membership of a concrete pair in a relation of starred patterns."""

    for p1, p2 in starred.pairs:
        if (star_matches(a, p1) and star_matches(b, p2)) or (
            star_matches(a, p2) and star_matches(b, p1)
        ):
            return True
    return False


# ---------------------------------------------------------------------------
# Instruction semantics
# ---------------------------------------------------------------------------


def _value_names(r: Relation, s: Path, max_len: int) -> set:
    """Names for the value of ``s``: its aliases, seen through prefixes.

    Beyond the pairs mentioning ``s`` directly, a path ``t.suffix`` also
    denotes whatever ``u.suffix`` denotes for every recorded alias ``u``
    of the prefix ``t``.  This is the fragment of the dot-completeness
    closure an assignment actually consults; materializing the full
    closure here would manufacture cross products between pairs that came
    from mutually exclusive branches or loop iterates.
    """

    out = set(aliased_with(r, s))
    segs = s.segments
    for i in range(1, len(segs)):
        prefix, suffix = Path(segs[:i]), segs[i:]
        for u in aliased_with(r, prefix):
            if u == prefix or u.top:
                continue
            cand = normalize(Path(u.segments + suffix))
            if len(cand.segments) <= max_len + 1:
                out.add(cand)
    starred = [e for e in out if any(isinstance(seg, Star) for seg in e.segments)]
    if starred:
        out = {
            e for e in out
            if not any(
                q != e and star_matches(e, q)
                and (not star_matches(q, e) or q.text() < e.text())
                for q in starred
            )
        }
    return out


def apply_assign(r: Relation, target: Path, source: Path, d: DomainInfo,
                 max_len: int = 10) -> Relation:
    """Alias effect of ``target := source``.

    The old aliases of the target are discarded (every pair with a
    target-prefixed element goes), and the target is re-aliased to every
    name the source's value had *before* the write.  When the source
    itself reads through the target (``x := x.b``), the path ``x.b`` is
    stale the moment the write happens, so its other names stand in for
    it; only if it has none does the stale path itself remain as the best
    available name for the value.
    """

    target, source = normalize(target), normalize(source)
    if target.is_current:
        raise AnalysisError("E_ASSIGN_CURRENT", "cannot assign to Current")
    survivors = remove_prefixed(r, target)
    sources = _value_names(r, source, max_len)
    if is_prefix(target, source):
        others = sources - {source}
        if others:
            sources = others
    sources.discard(target)
    return augment(survivors, target, sources, d, max_len)


def recursion_as_loops(proc: ProcedureDecl) -> Block:
    """Rewrite a directly self-recursive body into two loops.

    ``f(x) { B1; call f(y); B2 }`` has the same may-alias behaviour as
    ``loop B1 end; loop B2 end``.  Only the single, top-level self-call
    shape is handled; it exists as a cross-check for the call machinery,
    not as part of the main path.
    """

    split = [i for i, ins in enumerate(proc.body)
             if isinstance(ins, Call) and ins.name == proc.name]
    if len(split) != 1:
        raise ShapeError(
            f"{proc.name!r} does not have exactly one top-level self-call")
    for ins in proc.body:
        if isinstance(ins, (ThenElse, Loop)):
            for nested in _nested_calls(ins):
                if nested == proc.name:
                    raise ShapeError(f"{proc.name!r} has a nested self-call")
    i = split[0]
    return (Loop(proc.body[:i]), Loop(proc.body[i + 1:]))


def _nested_calls(ins: Instr):
    blocks = []
    if isinstance(ins, ThenElse):
        blocks = [ins.then_block, ins.else_block]
    elif isinstance(ins, Loop):
        blocks = [ins.body]
    for b in blocks:
        for sub in b:
            if isinstance(sub, Call):
                yield sub.name
            else:
                yield from _nested_calls(sub)


# ---------------------------------------------------------------------------
# The machine
# ---------------------------------------------------------------------------
#
# Execution runs over an explicit continuation stack.  Structured
# constructs leave an end marker behind and a frame on the matching
# backtracking stack; markers and frames stay balanced by construction.

Observer = Callable[[str, Relation], None]


@dataclass
class _LoopFrame:
    previous: Relation
    accumulated: Relation
    body: Block
    construct: str
    passes: int = 0
    seen: Set[frozenset] = field(default_factory=set)


@dataclass
class _BranchFrame:
    saved: Relation
    then_result: Optional[Relation] = None


@dataclass
class MachineState:
    """The mutable cells of one analysis run, exposed for inspection."""

    current: Relation = EMPTY
    continuation: List[tuple] = field(default_factory=list)
    bkt_te: List[_BranchFrame] = field(default_factory=list)
    bkt_l: List[_LoopFrame] = field(default_factory=list)
    bkt_cf: Dict[str, List[Relation]] = field(default_factory=dict)
    bkt_qf: Dict[str, List[Path]] = field(default_factory=dict)


class _Machine:
    def __init__(self, program: Program, cfg: EngineConfig,
                 observer: Optional[Observer] = None):
        self.program = program
        self.cfg = cfg
        self.domain = DomainInfo(program.attribute_universe)
        self.observer = observer
        self.state = MachineState()
        self.report = AnalysisReport(EMPTY)

    # -- helpers ------------------------------------------------------------

    def _complete(self, r: Relation) -> Relation:
        return dot_complete(r, self.domain, self.cfg.max_len)

    def _fold_cut(self, r: Relation) -> Relation:
        limit = self.cfg.cut_length

        def fold(p: Path) -> Path:
            return TOP if len(p.segments) > limit else p

        return Relation.of((fold(a), fold(b)) for a, b in r.pairs)

    def _set(self, rule: str, r: Relation) -> None:
        if self.cfg.mode == "cut":
            r = self._fold_cut(r)
        self.state.current = r
        self.report.rewrite_steps += 1
        if self.observer:
            self.observer(rule, r)

    def _push_block(self, block: Block) -> None:
        for ins in reversed(block):
            self.state.continuation.append(("i", ins))

    def _formals(self, name: str) -> Tuple[Path, ...]:
        proc = self.program.procedures.get(name)
        if proc is None:
            raise AnalysisError("E_UNRESOLVED_CALL", f"unknown procedure {name!r}")
        return tuple(var(f) for f in proc.formals)

    # -- run loop -----------------------------------------------------------

    def run(self, relation: Relation, block: Block) -> AnalysisReport:
        st = self.state
        st.current = relation
        self._push_block(block)
        while st.continuation:
            item = st.continuation.pop()
            kind = item[0]
            if kind == "i":
                self._step(item[1])
            elif kind == "end_then":
                frame = st.bkt_te[-1]
                frame.then_result = st.current
                self._set("end-then", frame.saved)
            elif kind == "end_else":
                frame = st.bkt_te.pop()
                assert frame.then_result is not None
                self._set("end-else", frame.then_result.union(st.current))
            elif kind == "end_loop":
                self._loop_pass()
            elif kind == "end_call":
                _, name, actual_paths = item
                st.bkt_cf[name].pop()
                back = substitute(st.current, actual_paths, self._formals(name))
                self._set("end-call", back)
            elif kind == "end_qcall":
                _, name, receiver = item
                st.bkt_qf[name].pop()
                out, dropped = distribute(receiver, st.current)
                self.report.dropped_negvar_pairs += dropped
                self._set("end-qcall", out)
            else:  # pragma: no cover
                raise AssertionError(f"unknown item {item!r}")
        self.report.result = st.current
        return self.report

    def _step(self, ins: Instr) -> None:
        st = self.state
        if isinstance(ins, Create):
            self._set("create", remove_prefixed(st.current, ins.target))
        elif isinstance(ins, Forget):
            self._set("forget", remove_prefixed(st.current, ins.target))
        elif isinstance(ins, Assign):
            self._set("assign", apply_assign(
                st.current, ins.target, ins.source, self.domain, self.cfg.max_len))
        elif isinstance(ins, ThenElse):
            st.bkt_te.append(_BranchFrame(saved=st.current))
            st.continuation.append(("end_else",))
            self._push_block(ins.else_block)
            st.continuation.append(("end_then",))
            self._push_block(ins.then_block)
            self.report.rewrite_steps += 1
        elif isinstance(ins, Loop):
            construct = f"loop@{ins.pos[0]}:{ins.pos[1]}"
            frame = _LoopFrame(previous=st.current, accumulated=st.current,
                               body=ins.body, construct=construct)
            frame.seen.add(st.current.pairs)
            st.bkt_l.append(frame)
            st.continuation.append(("end_loop",))
            self._push_block(ins.body)
            self.report.rewrite_steps += 1
        elif isinstance(ins, Call):
            self._enter_call(ins.name, tuple(normalize(a) for a in ins.actuals))
        elif isinstance(ins, QualifiedCall):
            receiver = normalize(ins.receiver)
            if receiver.is_current:
                self._enter_call(ins.name, tuple(normalize(a) for a in ins.actuals))
                return
            neg = negated(receiver)
            prefixed, _ = distribute(neg, st.current, drop_negatives=False)
            actuals = tuple(normalize(concat(neg, a)) for a in ins.actuals)
            st.bkt_qf.setdefault(ins.name, []).append(receiver)
            st.continuation.append(("end_qcall", ins.name, receiver))
            self._set("qcall", prefixed)
            self._enter_call(ins.name, actuals)
        elif isinstance(ins, (Lock, Unlock)):
            raise AnalysisError("E_SIM_ONLY", "lock/unlock reached the alias engine")
        else:  # pragma: no cover
            raise AssertionError(f"unknown instruction {ins!r}")

    # -- loops ---------------------------------------------------------------

    def _loop_pass(self) -> None:
        st = self.state
        frame = st.bkt_l[-1]
        current = st.current
        frame.accumulated = prune_subsumed(frame.accumulated.union(current))
        frame.passes += 1

        if self.cfg.mode == "cut":
            if frame.passes >= self.cfg.cut_length:
                st.bkt_l.pop()
                self._set("loop-cut", frame.accumulated)
                return
            frame.previous = current
            st.continuation.append(("end_loop",))
            self._push_block(frame.body)
            self._set("loop-pass", current)
            return

        if lasso(frame.previous, current):
            self.report.lasso_events.append(
                (frame.construct, len(frame.previous), len(current)))
            folded = star_fold(frame.previous, current)
            st.bkt_l.pop()
            self._set("loop-lasso", frame.accumulated.union(folded))
            return
        if current.pairs in frame.seen:
            # the iterates cycle: the accumulated union is already the exact
            # value of the unbounded unfolding, so stop without folding
            st.bkt_l.pop()
            self._set("loop-cycle", frame.accumulated)
            return
        if frame.passes >= self.cfg.recursion_fuel:
            raise FuelError(f"{frame.construct} exceeded {self.cfg.recursion_fuel} passes")
        frame.seen.add(current.pairs)
        frame.previous = current
        st.continuation.append(("end_loop",))
        self._push_block(frame.body)
        self._set("loop-pass", current)

    # -- calls ---------------------------------------------------------------

    def _enter_call(self, name: str, actual_paths: Tuple[Path, ...]) -> None:
        st = self.state
        proc = self.program.procedures.get(name)
        if proc is None:
            raise AnalysisError("E_UNRESOLVED_CALL", f"unknown procedure {name!r}")
        formals = self._formals(name)
        entered = substitute(st.current, formals, actual_paths)
        stack = st.bkt_cf.setdefault(name, [])

        if self.cfg.mode == "lasso":
            for saved in reversed(stack):
                if lasso(saved, entered):
                    self.report.lasso_events.append(
                        (f"call {name}", len(saved), len(entered)))
                    self._set("call-lasso", star_fold(saved, entered))
                    return
            if len(stack) >= self.cfg.recursion_fuel:
                raise FuelError(
                    f"recursion through {name!r} exceeded {self.cfg.recursion_fuel} entries")
        else:
            if len(stack) >= self.cfg.cut_length:
                self._set("call-cut", st.current)
                return

        stack.append(entered)
        st.continuation.append(("end_call", name, actual_paths))
        self._set("call", entered)
        self._push_block(proc.body)


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def execute(relation: Relation, block: Block, cfg: EngineConfig, program: Program,
            observer: Optional[Observer] = None) -> AnalysisReport:
    """Run a block from ``relation``; the core analysis operation."""

    return _Machine(program, cfg, observer).run(relation, block)


def analyze(program: Program, cfg: Optional[EngineConfig] = None,
            observer: Optional[Observer] = None) -> AnalysisReport:
    """Analyze a program's main block starting from the empty relation."""

    return execute(EMPTY, program.main, cfg or EngineConfig(), program, observer)


def apply_branch(r: Relation, b1: Block, b2: Block, cfg: EngineConfig,
                 program: Program) -> Relation:
    return execute(r, (ThenElse(b1, b2),), cfg, program).result


def apply_loop(r: Relation, body: Block, cfg: EngineConfig, program: Program) -> Relation:
    return execute(r, (Loop(body),), cfg, program).result


def apply_call(r: Relation, name: str, actuals: Sequence[Path], cfg: EngineConfig,
               program: Program) -> Relation:
    return execute(r, (Call(name, tuple(actuals)),), cfg, program).result


def apply_qualified_call(r: Relation, receiver: Path, name: str, actuals: Sequence[Path],
                         cfg: EngineConfig, program: Program) -> Relation:
    return execute(r, (QualifiedCall(receiver, name, tuple(actuals)),), cfg, program).result
