"""Access-path expressions and may-alias relations.

The analyzer abstracts heap facts as *access paths*: dot-separated chains
rooted at a variable (``x.next.next``), possibly carrying negative segments
(``x'``, which cancels against ``x`` and transposes a callee-relative path
back into the caller's frame) and starred groups (``x.(a.b)*.a``, a finite
description of an unbounded family of concrete paths).

A may-alias relation is a symmetric, irreflexive set of unordered path
pairs.  Everything in this module is immutable and pure; relations are
small (tens of pairs at analysis scale), so the closure operations use
straightforward fixpoint loops rather than indexed worklists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional, Sequence, Set, Tuple, Union


class AliasError(Exception):
    """Domain-level failure, carrying a stable machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Path segments
# ---------------------------------------------------------------------------
#
# Plain segments are bare strings (variable or attribute names).  The two
# structured segment kinds are kept as tiny frozen dataclasses so paths stay
# hashable and cheap to compare.


@dataclass(frozen=True)
class Neg:
    """Negative segment ``name'``; cancels against an adjacent ``name``."""

    name: str


@dataclass(frozen=True)
class Star:
    """Starred group ``(s1.s2...)*`` standing for 0..n repetitions."""

    inner: Tuple["Segment", ...]


@dataclass(frozen=True)
class Here:
    """Explicit receiver marker; the unit of concatenation."""


Segment = Union[str, Neg, Star, Here]


@dataclass(frozen=True)
class Path:
    """An access path: a sequence of segments, or the distinguished Top.

    The empty path denotes the receiver object itself.  Top is the
    cut-mode absorbing element standing for "any expression"; it never
    participates in prefix tests or completion.
    """

    segments: Tuple[Segment, ...] = ()
    top: bool = False

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def is_current(self) -> bool:
        return not self.top and not self.segments

    def text(self) -> str:
        if self.top:
            return "Top"
        if not self.segments:
            return "Current"
        return ".".join(_segment_text(s) for s in self.segments)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<{self.text()}>"


CURRENT = Path(())
TOP = Path((), top=True)


def _segment_text(seg: Segment) -> str:
    if isinstance(seg, str):
        return seg
    if isinstance(seg, Neg):
        return seg.name + "'"
    if isinstance(seg, Star):
        return "(" + ".".join(_segment_text(s) for s in seg.inner) + ")*"
    if isinstance(seg, Here):
        return "Current"
    raise TypeError(f"unknown segment {seg!r}")


def var(name: str) -> Path:
    return Path((name,))


def path_of(*segments: Segment) -> Path:
    return Path(tuple(segments))


_STAR_RE = re.compile(r"\(([^()]*)\)\*")


def parse_path(text: str) -> Path:
    """Parse the canonical textual form back into a path.

    Accepts ``Current``, ``Top``, plain dotted names, trailing-apostrophe
    negatives and ``( ... )*`` groups, e.g. ``x.(a.b)*.a'``.  Intended for
    tests and tooling; programs go through the real frontend.
    """

    text = text.strip()
    if text == "Top":
        return TOP
    segs: list[Segment] = []
    i = 0
    while i < len(text):
        if text[i] == ".":
            i += 1
            continue
        if text[i] == "(":
            m = _STAR_RE.match(text, i)
            if not m:
                raise AliasError("E_PATH_SYNTAX", f"bad star group in {text!r}")
            segs.append(Star(parse_path(m.group(1)).segments))
            i = m.end()
            continue
        j = i
        while j < len(text) and text[j] not in ".('":
            j += 1
        name = text[i:j]
        if not name:
            raise AliasError("E_PATH_SYNTAX", f"empty segment in {text!r}")
        if j < len(text) and text[j] == "'":
            segs.append(Neg(name))
            j += 1
        elif name == "Current":
            segs.append(Here())
        else:
            segs.append(name)
        i = j
    return normalize(Path(tuple(segs)))


def concat(a: Path, b: Path) -> Path:
    if a.top or b.top:
        return TOP
    return Path(a.segments + b.segments)


def negated(p: Path) -> Path:
    """The context-transposition inverse: ``(v.a.b)' = b'.a'.v'``.

    Prefixing a relation with ``negated(x)`` and later distributing ``x``
    over it cancels pairwise, which is exactly how qualified calls map
    between caller and callee frames.
    """

    out: list[Segment] = []
    for seg in reversed(p.segments):
        if isinstance(seg, str):
            out.append(Neg(seg))
        elif isinstance(seg, Neg):
            out.append(seg.name)
        else:
            raise AliasError("E_BAD_RECEIVER", f"cannot negate {p.text()}")
    return Path(tuple(out))


def normalize(p: Path) -> Path:
    """Canonical form: receiver units removed, adjacent x/x' cancelled,
    star groups rotated leftward.

    Cancellation runs to a fixpoint and is confluent: every cancellable
    adjacency is disjoint from the others once receiver markers are gone.
    Rotation uses the language identity ``t.(s.t)* = (t.s)*.t`` so that
    the equivalent starred spellings a fold can produce share one form.
    """

    if p.top:
        return p
    segs = [s for s in p.segments if not isinstance(s, Here)]
    changed = True
    while changed:
        changed = False
        for i in range(len(segs) - 1):
            a, b = segs[i], segs[i + 1]
            if (isinstance(a, Neg) and isinstance(b, str) and a.name == b) or (
                isinstance(a, str) and isinstance(b, Neg) and b.name == a
            ):
                del segs[i : i + 2]
                changed = True
                break
    segs = [Star(normalize(Path(s.inner)).segments) if isinstance(s, Star) else s for s in segs]
    changed = True
    while changed:
        changed = False
        for i in range(1, len(segs)):
            s = segs[i]
            if isinstance(s, Star) and s == segs[i - 1]:
                del segs[i]
                changed = True
                break
            if isinstance(s, Star) and s.inner and s.inner[-1] == segs[i - 1]:
                segs[i - 1], segs[i] = Star((segs[i - 1],) + s.inner[:-1]), segs[i - 1]
                changed = True
    return Path(tuple(segs))


def is_prefix(shorter: Path, longer: Path) -> bool:
    """Segment-wise prefix test; Top neither has nor is a prefix."""

    if shorter.top or longer.top:
        return False
    n = len(shorter.segments)
    return n <= len(longer.segments) and longer.segments[:n] == shorter.segments


def has_negative(p: Path) -> bool:
    return any(isinstance(s, Neg) for s in p.segments)


def star_matches(concrete: Path, pattern: Path) -> bool:
    """Whether expanding each star group of ``pattern`` 0+ times yields
    ``concrete``.

    Star segments on the concrete side are treated as opaque: a pattern
    star absorbs an identical concrete star (one-or-more repetitions,
    symbolically) but never partially overlaps a different one.  Expansion
    counts are bounded by the concrete length, so the test is exact and
    always terminates.
    """

    if pattern.top:
        return True
    if concrete.top:
        return False
    memo: dict = {}

    def go(c: Tuple[Segment, ...], p: Tuple[Segment, ...]) -> bool:
        key = (c, p)
        hit = memo.get(key)
        if hit is not None:
            return hit
        memo[key] = False  # cut cycles while computing
        if not p:
            out = not c
        else:
            head, rest = p[0], p[1:]
            if isinstance(head, Star):
                out = (
                    go(c, rest)  # zero repetitions
                    or bool(c and c[0] == head and go(c[1:], p))  # identical star
                    or bool(
                        head.inner
                        and len(head.inner) <= len(c)
                        and go(c, head.inner + p)  # unroll one repetition
                    )
                )
            else:
                out = bool(c) and c[0] == head and go(c[1:], rest)
        memo[key] = out
        return out

    return go(concrete.segments, pattern.segments)


def _has_star(p: Path) -> bool:
    return any(isinstance(s, Star) for s in p.segments)


def prune_subsumed(r: Relation) -> Relation:
    """Drop pairs whose paths a starred pair of ``r`` already covers.

    A concrete pair is redundant next to a starred pair describing it (a
    star expands to zero or more repetitions, so ``[x, x.(b)*.b]`` covers
    ``[x, x.b.b]``).  Pruning keeps the denoted set of concrete pairs
    unchanged while stopping folded relations from dragging their own
    instances along.
    """

    starred = [pair for pair in r.pairs if _has_star(pair[0]) or _has_star(pair[1])]
    if not starred:
        return r

    def covers(q, p) -> bool:
        (qa, qb), (a, b) = q, p
        return (star_matches(a, qa) and star_matches(b, qb)) or (
            star_matches(a, qb) and star_matches(b, qa)
        )

    def key(p):
        return (p[0].text(), p[1].text())

    kept = []
    for pair in r.pairs:
        # strict subsumption only; ties between mutually-covering pairs go
        # to the textually smaller spelling so exactly one survives
        if any(
            q != pair and covers(q, pair) and (not covers(pair, q) or key(q) < key(pair))
            for q in starred
        ):
            continue
        kept.append(pair)
    return Relation(frozenset(kept))


def segment_alphabet(p: Path) -> FrozenSet[str]:
    """All plain names appearing in a path, descending into star groups."""

    names: Set[str] = set()
    stack = list(p.segments)
    while stack:
        s = stack.pop()
        if isinstance(s, str):
            names.add(s)
        elif isinstance(s, Neg):
            names.add(s.name)
        elif isinstance(s, Star):
            stack.extend(s.inner)
    return frozenset(names)


# ---------------------------------------------------------------------------
# Relations
# ---------------------------------------------------------------------------


Pair = Tuple[Path, Path]


def _ordered(a: Path, b: Path) -> Pair:
    return (a, b) if a.text() <= b.text() else (b, a)


@dataclass(frozen=True)
class Relation:
    """A finite symmetric irreflexive set of path pairs.

    Pairs are stored ordered by canonical text, so the frozenset is a
    faithful set of unordered pairs.  Members are always normalized.
    """

    pairs: FrozenSet[Pair] = frozenset()

    @staticmethod
    def of(items: Iterable[Tuple[Path, Path]]) -> "Relation":
        out = set()
        for a, b in items:
            a, b = normalize(a), normalize(b)
            if a != b:
                out.add(_ordered(a, b))
        return Relation(frozenset(out))

    @staticmethod
    def parse(items: Iterable[Tuple[str, str]]) -> "Relation":
        return Relation.of((parse_path(a), parse_path(b)) for a, b in items)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def union(self, other: "Relation") -> "Relation":
        return Relation(self.pairs | other.pairs)

    def expressions(self) -> FrozenSet[Path]:
        out: Set[Path] = set()
        for a, b in self.pairs:
            out.add(a)
            out.add(b)
        return frozenset(out)

    def contains(self, a: Path, b: Path) -> bool:
        a, b = normalize(a), normalize(b)
        return a != b and _ordered(a, b) in self.pairs

    def to_json(self) -> list:
        return sorted([a.text(), b.text()] for a, b in self.pairs)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        inner = ", ".join(f"[{a}; {b}]" for a, b in self.to_json())
        return "{" + inner + "}"


EMPTY = Relation()


@dataclass(frozen=True)
class DomainInfo:
    """The program's attribute universe, used by the completion closure."""

    attributes: FrozenSet[str] = frozenset()

    @staticmethod
    def of(*names: str) -> "DomainInfo":
        return DomainInfo(frozenset(names))


def aliased_with(r: Relation, e: Path) -> FrozenSet[Path]:
    """Everything aliased to ``e`` in ``r``, plus ``e`` itself.

    Top is aliased to every expression the relation mentions.
    """

    if e.top:
        return r.expressions() | {TOP}
    e = normalize(e)
    out = {e}
    for a, b in r.pairs:
        if a == e:
            out.add(b)
        elif b == e:
            out.add(a)
    return frozenset(out)


def remove_prefixed(r: Relation, x: Path) -> Relation:
    """Drop every pair with an element that ``x`` is a segment-wise prefix of.

    ``x`` is a prefix of itself, so pairs mentioning ``x`` directly go too.
    """

    x = normalize(x)
    return Relation(
        frozenset(p for p in r.pairs if not (is_prefix(x, p[0]) or is_prefix(x, p[1])))
    )


def _extend(p: Path, attr: str) -> Path:
    return Path(p.segments + (attr,))


def _attr_extension_of(longer: Path, shorter: Path) -> Optional[str]:
    """The attribute a such that longer == shorter.a, if there is one."""

    if longer.top or shorter.top:
        return None
    if len(longer.segments) != len(shorter.segments) + 1:
        return None
    last = longer.segments[-1]
    if isinstance(last, str) and longer.segments[:-1] == shorter.segments:
        return last
    return None


def dot_complete(r: Relation, d: DomainInfo, max_len: int = 10) -> Relation:
    """Least fixpoint of the two dot-completeness clauses, length-bounded.

    Clause A (attribute extension): from ``[t, u]`` with ``t`` a bare
    variable and ``a`` in the attribute universe, derive ``[t.a, u.a]``.
    Extension is rooted at single-segment expressions only: longer paths
    carry no attribute information of their own, and extending them blows
    the closure up into chains the rest of the calculus never consults.

    Clause B (alias propagation): from distinct pairs ``[t, u]`` and
    ``[t.a, v]``, derive ``[u.a, v]``.  The pair supplying ``t`` and ``u``
    must not relate a path to its own extension (neither side a prefix of
    the other); such self-referential pairs would let propagation chain
    through itself, which amounts to the transitive closure the relation
    deliberately does not take.

    Reflexive derivations are dropped; pairs whose elements would exceed
    ``max_len`` segments are not added; Top is inert.
    """

    pairs: Set[Pair] = set(r.pairs)

    def add(a: Path, b: Path) -> bool:
        if a == b or len(a.segments) > max_len or len(b.segments) > max_len:
            return False
        key = _ordered(a, b)
        if key in pairs:
            return False
        pairs.add(key)
        return True

    changed = True
    while changed:
        changed = False
        snapshot = list(pairs)
        for e1, e2 in snapshot:
            if e1.top or e2.top:
                continue
            for t, u in ((e1, e2), (e2, e1)):
                if len(t.segments) == 1:
                    for a in d.attributes:
                        if add(_extend(t, a), _extend(u, a)):
                            changed = True
        for p1 in snapshot:
            e1, e2 = p1
            if e1.top or e2.top:
                continue
            if is_prefix(e1, e2) or is_prefix(e2, e1):
                continue
            for t, u in ((e1, e2), (e2, e1)):
                for p2 in snapshot:
                    if p2 == p1:
                        continue
                    for w, v in (p2, (p2[1], p2[0])):
                        if w.top or v.top:
                            continue
                        a = _attr_extension_of(w, t)
                        if a is not None and add(_extend(u, a), v):
                            changed = True
    return Relation(frozenset(pairs))


def augment(
    r: Relation, x: Path, u: Iterable[Path], d: DomainInfo, max_len: int = 10
) -> Relation:
    """``r`` with pairs ``[x, y]`` for each ``y`` added, then dot-completed."""

    x = normalize(x)
    added = set(r.pairs)
    for y in u:
        y = normalize(y)
        if y != x:
            added.add(_ordered(x, y))
    return dot_complete(Relation(frozenset(added)), d, max_len)


def substitute(r: Relation, formals: Sequence[Path], actuals: Sequence[Path]) -> Relation:
    """Replace each leading occurrence of an actual by its formal.

    An expression whose segments start with ``actuals[i]`` is rewritten to
    ``formals[i]`` followed by the remainder, then renormalized.  The empty
    actual (the bare receiver) matches only the receiver itself; otherwise
    every path would gain a spurious prefix.  First match wins.
    """

    if len(formals) != len(actuals):
        raise AliasError(
            "E_ARITY", f"substitution arity mismatch: {len(formals)} vs {len(actuals)}"
        )
    formals = [normalize(f) for f in formals]
    actuals = [normalize(a) for a in actuals]

    def rewrite(e: Path) -> Path:
        if e.top:
            return e
        for f, a in zip(formals, actuals):
            if a.is_current:
                if e.is_current:
                    return f
                continue
            if is_prefix(a, e):
                return normalize(Path(f.segments + e.segments[len(a.segments):]))
        return e

    return Relation.of((rewrite(a), rewrite(b)) for a, b in r.pairs)


def distribute(x: Path, r: Relation, drop_negatives: bool = True) -> Tuple[Relation, int]:
    """Prefix every expression of ``r`` with ``x`` and renormalize.

    Pairs collapsing to reflexive disappear silently.  With
    ``drop_negatives`` (the default, used when mapping a call result back
    to the caller), pairs left with a residual negative segment denote
    callee entities unreachable from the caller and are dropped, with a
    count returned for the report.  The transposition *into* a callee
    frame passes ``False``: there the negative prefix is the point.
    """

    x = normalize(x)
    kept = []
    dropped = 0
    for a, b in r.pairs:
        na, nb = normalize(concat(x, a)), normalize(concat(x, b))
        if na == nb:
            continue
        if drop_negatives and (has_negative(na) or has_negative(nb)):
            dropped += 1
            continue
        kept.append((na, nb))
    return Relation.of(kept), dropped
