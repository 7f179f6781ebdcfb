"""Concurrency simulator with Coffman-deadlock detection.

Programs run over a set of *processors*: processor 0 executes the main
block and every single-name ``create`` in main materializes one more,
named processor.  A qualified call dispatches the callee body onto the
receiver's stack asynchronously; the caller moves on.  ``lock {q1, q2}``
acquires all named handlers atomically or blocks while any of them is
held by another processor (re-acquiring one's own holdings is fine), and
a dispatched body implicitly releases the handlers that were passed to it
when it finishes, mirroring reservation lifetimes in SCOOP-style models.

Heap and store are abstracted away entirely: lock state is the whole
state.  Conditionals branch nondeterministically and loops carry a small
unroll budget, so the reachable state space is finite and a breadth-first
search either finds a deadlocked configuration (a set of processors each
waiting on a handler another member holds) or exhausts it.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from .frontend import (
    Assign,
    Block,
    Call,
    Create,
    Forget,
    Lock,
    Loop,
    Program,
    QualifiedCall,
    ThenElse,
    Unlock,
    main_created_tags,
)

# Runtime stack items are plain tuples so configurations stay hashable:
#   ("lock", targets)            targets: frozenset of int ids (or unresolved str)
#   ("unlock", targets)
#   ("branch", then_items, else_items)
#   ("loop", items, budget)
#   ("call", name, actuals)      synchronous, same processor
#   ("dispatch", recv, name, actuals)
#   ("create", name)             spawn of a not-yet-known processor
Item = tuple
Stack = Tuple[Item, ...]
ProcRef = Union[int, str]


@dataclass(frozen=True)
class SimConfig:
    """One explored state: per-processor stacks plus lock ownership.

    ``base`` counts the fixed processors (bootstrap + declared tags);
    anything above it was spawned at runtime and is renamable when states
    are compared.  ``fresh`` feeds spawn ids.
    """

    stacks: Tuple[Stack, ...]
    held: Tuple[FrozenSet[int], ...]
    base: int
    fresh: int

    @property
    def nprocs(self) -> int:
        return len(self.stacks)

    def quiescent(self) -> bool:
        return all(not s for s in self.stacks)


@dataclass
class DeadlockReport:
    found: bool
    witness: Tuple[int, ...] = ()
    trace: Tuple[Tuple[int, str], ...] = ()
    states: int = 0
    exhausted: bool = False
    source: str = "<string>"
    settings: Dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "found": self.found,
            "witness": list(self.witness),
            "trace": [{"proc": p, "rule": r} for p, r in self.trace],
            "states": self.states,
            "exhausted": self.exhausted,
            "source": self.source,
            "settings": dict(self.settings),
        }


# ---------------------------------------------------------------------------
# Program loading
# ---------------------------------------------------------------------------


def _head(path) -> Optional[str]:
    if len(path.segments) == 1 and isinstance(path.segments[0], str):
        return path.segments[0]
    return None


def _resolve(name: Optional[str], env: Dict[str, int]) -> ProcRef:
    if name is None:
        return "?"
    return env.get(name, name)


def _items(block: Block, env: Dict[str, int], program: Program, unroll: int) -> Stack:
    """Lower an AST block to runtime items, resolving known names to ids.

    Assignments and forgets have no lock-relevant effect and vanish here;
    creates of already-known processors vanish too.  Actuals are kept as
    resolved references so dispatch can bind callee formals.
    """

    out: List[Item] = []
    for ins in block:
        if isinstance(ins, Create):
            ref = _resolve(_head(ins.target), env)
            if isinstance(ref, str) and ref != "?":
                out.append(("create", ref))
        elif isinstance(ins, (Forget, Assign)):
            continue
        elif isinstance(ins, ThenElse):
            out.append(("branch",
                        _items(ins.then_block, env, program, unroll),
                        _items(ins.else_block, env, program, unroll)))
        elif isinstance(ins, Loop):
            out.append(("loop", _items(ins.body, env, program, unroll), unroll))
        elif isinstance(ins, Lock):
            out.append(("lock", frozenset(_resolve(t, env) for t in ins.targets)))
        elif isinstance(ins, Unlock):
            out.append(("unlock", frozenset(_resolve(t, env) for t in ins.targets)))
        elif isinstance(ins, Call):
            out.append(("call", ins.name,
                        tuple(_resolve(_head(a), env) for a in ins.actuals)))
        elif isinstance(ins, QualifiedCall):
            out.append(("dispatch", _resolve(_head(ins.receiver), env), ins.name,
                        tuple(_resolve(_head(a), env) for a in ins.actuals)))
        else:  # pragma: no cover
            raise TypeError(f"unknown instruction {ins!r}")
    return tuple(out)


def _subst_item(item: Item, binding: Dict[str, int]) -> Item:
    kind = item[0]
    if kind in ("lock", "unlock"):
        return (kind, frozenset(binding.get(t, t) if isinstance(t, str) else t
                                for t in item[1]))
    if kind == "branch":
        return (kind,
                tuple(_subst_item(i, binding) for i in item[1]),
                tuple(_subst_item(i, binding) for i in item[2]))
    if kind == "loop":
        return (kind, tuple(_subst_item(i, binding) for i in item[1]), item[2])
    if kind == "call":
        return (kind, item[1],
                tuple(binding.get(a, a) if isinstance(a, str) else a for a in item[2]))
    if kind == "dispatch":
        recv = item[1]
        return (kind, binding.get(recv, recv) if isinstance(recv, str) else recv,
                item[2],
                tuple(binding.get(a, a) if isinstance(a, str) else a for a in item[3]))
    if kind == "create":
        name = item[1]
        bound = binding.get(name, name)
        return (kind, bound)
    return item


def _bind_stack(stack: Stack, binding: Dict[str, int]) -> Stack:
    return tuple(_subst_item(i, binding) for i in stack)


def _body_items(program: Program, name: str, actuals: Sequence[ProcRef],
                unroll: int) -> Stack:
    proc = program.procedures[name]
    env: Dict[str, int] = {}
    items = _items(proc.body, env, program, unroll)
    binding = {f: a for f, a in zip(proc.formals, actuals) if isinstance(a, int)}
    # formals bound to non-tag actuals stay symbolic; they are inert
    return _bind_stack(items, binding)


def init(program: Program, unroll: int = 2) -> SimConfig:
    """Start state: bootstrap processor 0 holding main, declared tags idle."""

    tags = main_created_tags(program)
    env = {name: i + 1 for i, name in enumerate(tags)}
    nprocs = len(tags) + 1
    stacks: List[Stack] = [()] * nprocs
    stacks[0] = _items(program.main, env, program, unroll)
    cfg = SimConfig(tuple(stacks), tuple(frozenset() for _ in range(nprocs)),
                    base=nprocs, fresh=nprocs)
    return _settle(cfg, program, unroll)


# ---------------------------------------------------------------------------
# Transitions
# ---------------------------------------------------------------------------


def _settle(cfg: SimConfig, program: Program, unroll: int) -> SimConfig:
    """Apply administrative reductions: runtime spawns of new processors."""

    stacks = list(cfg.stacks)
    held = list(cfg.held)
    fresh = cfg.fresh
    changed = True
    while changed:
        changed = False
        for p in range(len(stacks)):
            stack = stacks[p]
            if stack and stack[0][0] == "create":
                name = stack[0][1]
                if isinstance(name, str):
                    pid = fresh
                    fresh += 1
                    stacks.append(())
                    held.append(frozenset())
                    stacks[p] = _bind_stack(stack[1:], {name: pid})
                else:
                    stacks[p] = stack[1:]
                changed = True
    return SimConfig(tuple(stacks), tuple(held), cfg.base, fresh)


def _holder(cfg: SimConfig, handler: int) -> Optional[int]:
    for p, hs in enumerate(cfg.held):
        if handler in hs:
            return p
    return None


def _lock_targets(cfg: SimConfig, p: int) -> Optional[FrozenSet[int]]:
    stack = cfg.stacks[p]
    if stack and stack[0][0] == "lock":
        return frozenset(t for t in stack[0][1] if isinstance(t, int))
    return None


def blocked_on(cfg: SimConfig, p: int) -> Optional[FrozenSet[int]]:
    """The wait set of ``p``: its lock targets, when one is held elsewhere."""

    targets = _lock_targets(cfg, p)
    if targets is None:
        return None
    for t in targets:
        h = _holder(cfg, t)
        if h is not None and h != p:
            return targets
    return None


Move = Tuple[int, str]


def successors_with_moves(cfg: SimConfig, program: Program,
                          unroll: int = 2) -> List[Tuple[Move, SimConfig]]:
    """Enabled transitions in deterministic (processor, rule) order."""

    out: List[Tuple[Move, SimConfig]] = []

    def emit(p: int, rule: str, stacks: List[Stack], held: List[FrozenSet[int]]):
        nxt = SimConfig(tuple(stacks), tuple(held), cfg.base, cfg.fresh)
        out.append(((p, rule), _settle(nxt, program, unroll)))

    for p in range(cfg.nprocs):
        stack = cfg.stacks[p]
        if not stack:
            continue
        item = stack[0]
        kind = item[0]
        rest = stack[1:]
        if kind == "lock":
            targets = frozenset(t for t in item[1] if isinstance(t, int))
            if all(_holder(cfg, t) in (None, p) for t in targets):
                held = list(cfg.held)
                held[p] = held[p] | targets
                stacks = list(cfg.stacks)
                stacks[p] = rest
                emit(p, "lock", stacks, held)
            # else blocked: contributes no successor
        elif kind == "unlock":
            targets = frozenset(t for t in item[1] if isinstance(t, int))
            held = list(cfg.held)
            held[p] = held[p] - targets
            stacks = list(cfg.stacks)
            stacks[p] = rest
            emit(p, "unlock", stacks, held)
        elif kind == "branch":
            for rule, body in (("then", item[1]), ("else", item[2])):
                stacks = list(cfg.stacks)
                stacks[p] = body + rest
                emit(p, rule, stacks, list(cfg.held))
        elif kind == "loop":
            stacks = list(cfg.stacks)
            stacks[p] = rest
            emit(p, "loop-exit", stacks, list(cfg.held))
            _, body, budget = item
            if budget > 0:
                stacks = list(cfg.stacks)
                stacks[p] = body + (("loop", body, budget - 1),) + rest
                emit(p, "loop-unroll", stacks, list(cfg.held))
        elif kind == "call":
            _, name, actuals = item
            stacks = list(cfg.stacks)
            stacks[p] = _body_items(program, name, actuals, unroll) + rest
            emit(p, "call", stacks, list(cfg.held))
        elif kind == "dispatch":
            _, recv, name, actuals = item
            if not isinstance(recv, int):
                # unresolved receiver: administrative skip
                stacks = list(cfg.stacks)
                stacks[p] = rest
                emit(p, "dispatch", stacks, list(cfg.held))
                continue
            body = _body_items(program, name, actuals, unroll)
            passed = frozenset(a for a in actuals if isinstance(a, int))
            if passed:
                body = body + (("unlock", passed),)
            stacks = list(cfg.stacks)
            stacks[p] = rest
            stacks[recv] = body + stacks[recv]
            emit(p, "dispatch", stacks, list(cfg.held))
        else:  # pragma: no cover
            raise AssertionError(f"unknown item {item!r}")
    return out


def successors(cfg: SimConfig, program: Program, unroll: int = 2) -> List[SimConfig]:
    return [c for _, c in successors_with_moves(cfg, program, unroll)]


# ---------------------------------------------------------------------------
# Deadlock
# ---------------------------------------------------------------------------


def deadlocked(cfg: SimConfig) -> Optional[FrozenSet[int]]:
    """The maximal circularly-waiting processor set, or None.

    Builds the wait-for graph (an edge p -> p' when p waits on a handler
    p' holds) and repeatedly deletes nodes without an outgoing edge into
    the remainder; whatever survives satisfies "every member waits on
    another member".  Self-waiting alone does not count: locks are
    re-entrant and the definition requires a distinct other member.
    """

    waits: Dict[int, FrozenSet[int]] = {}
    for p in range(cfg.nprocs):
        w = blocked_on(cfg, p)
        if w is not None:
            waits[p] = w
    if not waits:
        return None
    alive: Set[int] = set(waits)
    changed = True
    while changed:
        changed = False
        for p in list(alive):
            if not any(
                q in alive and q != p and (waits[p] & cfg.held[q])
                for q in alive
            ):
                alive.discard(p)
                changed = True
    return frozenset(alive) if alive else None


def canonicalize(cfg: SimConfig) -> tuple:
    """A hashable key equal for states differing only in spawn naming.

    Spawned ids (>= base) are renumbered in first-occurrence order over a
    deterministic traversal of the fixed processors' stacks and lock sets,
    then the renamed spawned processors are serialized in renamed order.
    """

    rename: Dict[int, int] = {}

    def visit(ref) -> None:
        if isinstance(ref, int) and ref >= cfg.base and ref not in rename:
            rename[ref] = cfg.base + len(rename)

    def scan_item(item: Item) -> None:
        kind = item[0]
        if kind in ("lock", "unlock"):
            for t in sorted(item[1], key=str):
                visit(t)
        elif kind == "branch":
            for i in item[1]:
                scan_item(i)
            for i in item[2]:
                scan_item(i)
        elif kind == "loop":
            for i in item[1]:
                scan_item(i)
        elif kind == "call":
            for a in item[2]:
                visit(a)
        elif kind == "dispatch":
            visit(item[1])
            for a in item[3]:
                visit(a)

    frontier = list(range(cfg.base))
    scanned: Set[int] = set()
    while frontier:
        p = frontier.pop(0)
        if p in scanned or p >= cfg.nprocs:
            continue
        scanned.add(p)
        before = len(rename)
        for item in cfg.stacks[p]:
            scan_item(item)
        for t in sorted(cfg.held[p], key=str):
            visit(t)
        # newly named spawns are traversed next, in naming order
        if len(rename) > before:
            frontier.extend(sorted(rename, key=rename.get))
    for p in range(cfg.base, cfg.nprocs):
        if p not in rename:
            rename[p] = cfg.base + len(rename)

    def map_ref(ref):
        return rename.get(ref, ref) if isinstance(ref, int) else ref

    def map_item(item: Item) -> Item:
        kind = item[0]
        if kind in ("lock", "unlock"):
            return (kind, tuple(sorted((map_ref(t) for t in item[1]), key=str)))
        if kind == "branch":
            return (kind, tuple(map_item(i) for i in item[1]),
                    tuple(map_item(i) for i in item[2]))
        if kind == "loop":
            return (kind, tuple(map_item(i) for i in item[1]), item[2])
        if kind == "call":
            return (kind, item[1], tuple(map_ref(a) for a in item[2]))
        if kind == "dispatch":
            return (kind, map_ref(item[1]), item[2], tuple(map_ref(a) for a in item[3]))
        return item

    order = list(range(cfg.base)) + sorted(range(cfg.base, cfg.nprocs),
                                           key=lambda p: rename[p])
    stacks = tuple(tuple(map_item(i) for i in cfg.stacks[p]) for p in order)
    held = tuple(tuple(sorted((map_ref(t) for t in cfg.held[p]), key=str))
                 for p in order)
    return (stacks, held)


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------


def model_check(program: Program, max_states: int = 1_000_000, max_depth: int = 10_000,
                unroll: int = 2) -> DeadlockReport:
    """Breadth-first deadlock reachability over canonicalized states.

    Returns the first deadlocked configuration in deterministic order with
    its (shortest) trace.  ``exhausted`` is set only when the full state
    space was covered; hitting either bound clears it.
    """

    if max_states < 1 or max_depth < 1:
        raise ValueError("bounds must be >= 1")
    settings = {"max_states": max_states, "max_depth": max_depth, "unroll": unroll}
    start = init(program, unroll)
    key0 = canonicalize(start)
    parents: Dict[tuple, Tuple[Optional[tuple], Optional[Move]]] = {key0: (None, None)}

    def trace_to(key: tuple) -> Tuple[Move, ...]:
        moves: List[Move] = []
        while True:
            parent, move = parents[key]
            if parent is None:
                break
            moves.append(move)
            key = parent
        return tuple(reversed(moves))

    w = deadlocked(start)
    if w is not None:
        return DeadlockReport(True, tuple(sorted(w)), (), 1, False,
                              program.source, settings)

    frontier = deque([(start, key0, 0)])
    explored = 1
    bound_hit = False
    while frontier:
        cfg, key, depth = frontier.popleft()
        if depth >= max_depth:
            bound_hit = True
            continue
        for move, nxt in successors_with_moves(cfg, program, unroll):
            nkey = canonicalize(nxt)
            if nkey in parents:
                continue
            parents[nkey] = (key, move)
            explored += 1
            w = deadlocked(nxt)
            if w is not None:
                return DeadlockReport(True, tuple(sorted(w)), trace_to(nkey),
                                      explored, False, program.source, settings)
            if explored >= max_states:
                bound_hit = True
                frontier.clear()
                break
            frontier.append((nxt, nkey, depth + 1))
    return DeadlockReport(False, (), (), explored, not bound_hit,
                          program.source, settings)


def random_walk(program: Program, seed: int = 0, max_steps: int = 10_000,
                unroll: int = 2) -> DeadlockReport:
    """One seeded random execution; may miss deadlocks, never invents one."""

    settings = {"seed": seed, "max_steps": max_steps, "unroll": unroll}
    rng = random.Random(seed)
    cfg = init(program, unroll)
    trace: List[Move] = []
    steps = 0
    while True:
        w = deadlocked(cfg)
        if w is not None:
            return DeadlockReport(True, tuple(sorted(w)), tuple(trace),
                                  steps + 1, False, program.source, settings)
        if cfg.quiescent() or steps >= max_steps:
            return DeadlockReport(False, (), tuple(trace), steps + 1, False,
                                  program.source, settings)
        options = successors_with_moves(cfg, program, unroll)
        if not options:
            return DeadlockReport(False, (), tuple(trace), steps + 1, False,
                                  program.source, settings)
        move, cfg = rng.choice(options)
        trace.append(move)
        steps += 1


def replay(program: Program, trace: Sequence[Move], unroll: int = 2) -> SimConfig:
    """Re-execute a recorded trace; raises if a move is not enabled."""

    cfg = init(program, unroll)
    for step, move in enumerate(trace):
        options = dict(successors_with_moves(cfg, program, unroll))
        nxt = options.get(tuple(move))
        if nxt is None:
            raise ValueError(f"trace step {step}: move {move!r} is not enabled")
        cfg = nxt
    return cfg
