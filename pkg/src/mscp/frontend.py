"""Frontend for the mini object-oriented language.

Surface syntax (``.mscp`` files)::

    class node
      attr next;
      proc set_next(a_next)
        next := a_next;
      end
    end

    create x0;
    create x1;
    x1.call set_next(x0);

A program is a sequence of class declarations followed by the top-level
main block.  Statements are ``create p;``, ``forget p;``, ``t := s;``,
``call f(a, b);``, ``recv.call f(a);``, ``then ... else ... end``,
``loop ... end`` and, for simulator programs only, ``lock {q1, q2};`` /
``unlock {q1};``.  Paths are dot-separated identifiers; ``Current`` names
the receiver.  ``--`` starts a comment running to end of line.

Conditionals carry no guard: the analyses explore both branches, so the
grammar has nothing to test.  There is likewise no arithmetic; programs
needing indexed loops are written unrolled with distinct names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .aliasing import CURRENT, Here, Path, normalize

KEYWORDS = {
    "class", "attr", "proc", "create", "forget", "then", "else", "end",
    "loop", "call", "lock", "unlock", "Current",
}

Pos = Tuple[int, int]


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    col: int
    code: str
    message: str

    def render(self) -> str:
        return f"{self.file}:{self.line}:{self.col}: {self.code} {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(diagnostic.render())
        self.diagnostic = diagnostic


class DiagnosticsError(Exception):
    """Raised by parse/validate when semantic checks fail."""

    def __init__(self, diagnostics: Sequence[Diagnostic]):
        super().__init__("\n".join(d.render() for d in diagnostics))
        self.diagnostics = list(diagnostics)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

# Positions are carried for diagnostics but do not participate in equality,
# so structurally identical programs compare equal after a round-trip.


@dataclass(frozen=True)
class Create:
    target: Path
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Forget:
    target: Path
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Assign:
    target: Path
    source: Path
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class ThenElse:
    then_block: "Block"
    else_block: "Block"
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Loop:
    body: "Block"
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    actuals: Tuple[Path, ...]
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class QualifiedCall:
    receiver: Path
    name: str
    actuals: Tuple[Path, ...]
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Lock:
    targets: Tuple[str, ...]
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Unlock:
    targets: Tuple[str, ...]
    pos: Pos = field(default=(0, 0), compare=False)


Instr = Union[Create, Forget, Assign, ThenElse, Loop, Call, QualifiedCall, Lock, Unlock]
Block = Tuple[Instr, ...]


@dataclass(frozen=True)
class ProcedureDecl:
    name: str
    formals: Tuple[str, ...]
    body: Block
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class ClassDecl:
    name: str
    attributes: Tuple[str, ...]
    procedures: Tuple[ProcedureDecl, ...]
    pos: Pos = field(default=(0, 0), compare=False)


@dataclass
class Program:
    classes: Tuple[ClassDecl, ...]
    main: Block
    source: str = "<string>"

    @property
    def procedures(self) -> Dict[str, ProcedureDecl]:
        return {p.name: p for c in self.classes for p in c.procedures}

    @property
    def attribute_universe(self) -> frozenset:
        return frozenset(a for c in self.classes for a in c.attributes)


def main_created_tags(program: Program) -> Tuple[str, ...]:
    """Single-segment create targets of the main block, in program order.

    These name the processors a simulator run starts with; creates of the
    same name elsewhere are no-ops, creates of new names spawn fresh ones.
    """

    seen: List[str] = []

    def walk(block: Block) -> None:
        for ins in block:
            if isinstance(ins, Create) and len(ins.target.segments) == 1:
                seg = ins.target.segments[0]
                if isinstance(seg, str) and seg not in seen:
                    seen.append(seg)
            elif isinstance(ins, ThenElse):
                walk(ins.then_block)
                walk(ins.else_block)
            elif isinstance(ins, Loop):
                walk(ins.body)

    walk(program.main)
    return tuple(seen)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", a keyword, or a symbol
    value: str
    line: int
    col: int


_SYMBOLS = (":=", ".", ";", ",", "(", ")", "{", "}")


def _lex(text: str, filename: str) -> List[Token]:
    tokens: List[Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("--", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        matched = None
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                matched = sym
                break
        if matched:
            tokens.append(Token(matched, matched, line, col))
            i += len(matched)
            col += len(matched)
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, line, col))
            col += j - i
            i = j
            continue
        raise ParseError(
            Diagnostic(filename, line, col, "E_SYNTAX", f"unexpected character {ch!r}")
        )
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: List[Token], filename: str):
        self.tokens = tokens
        self.pos = 0
        self.filename = filename

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.cur
        return ParseError(Diagnostic(self.filename, tok.line, tok.col, "E_SYNTAX", message))

    def eat(self, kind: str) -> Token:
        tok = self.cur
        if tok.kind != kind:
            raise self.error(f"expected {kind!r}, found {tok.value!r}")
        self.pos += 1
        return tok

    def at(self, kind: str) -> bool:
        return self.cur.kind == kind

    def parse_program(self) -> Program:
        classes: List[ClassDecl] = []
        while self.at("class"):
            classes.append(self.parse_class())
        main = self.parse_block(("eof",))
        self.eat("eof")
        return Program(tuple(classes), main, self.filename)

    def parse_class(self) -> ClassDecl:
        start = self.eat("class")
        name = self.eat("ident").value
        attrs: List[str] = []
        procs: List[ProcedureDecl] = []
        while not self.at("end"):
            if self.at("attr"):
                self.eat("attr")
                attrs.append(self.eat("ident").value)
                while self.at(","):
                    self.eat(",")
                    attrs.append(self.eat("ident").value)
                self.eat(";")
            elif self.at("proc"):
                procs.append(self.parse_proc())
            else:
                raise self.error("expected 'attr', 'proc' or 'end' in class body")
        self.eat("end")
        return ClassDecl(name, tuple(attrs), tuple(procs), (start.line, start.col))

    def parse_proc(self) -> ProcedureDecl:
        start = self.eat("proc")
        name = self.eat("ident").value
        self.eat("(")
        formals: List[str] = []
        if self.at("ident"):
            formals.append(self.eat("ident").value)
            while self.at(","):
                self.eat(",")
                formals.append(self.eat("ident").value)
        self.eat(")")
        body = self.parse_block(("end",))
        self.eat("end")
        return ProcedureDecl(name, tuple(formals), body, (start.line, start.col))

    def parse_block(self, stops: Tuple[str, ...]) -> Block:
        out: List[Instr] = []
        while self.cur.kind not in stops:
            out.append(self.parse_statement())
        return tuple(out)

    def parse_statement(self) -> Instr:
        tok = self.cur
        pos = (tok.line, tok.col)
        if tok.kind == "create":
            self.eat("create")
            target = self.parse_path()
            self.eat(";")
            return Create(target, pos)
        if tok.kind == "forget":
            self.eat("forget")
            target = self.parse_path()
            self.eat(";")
            return Forget(target, pos)
        if tok.kind == "then":
            self.eat("then")
            then_block = self.parse_block(("else",))
            self.eat("else")
            else_block = self.parse_block(("end",))
            self.eat("end")
            return ThenElse(then_block, else_block, pos)
        if tok.kind == "loop":
            self.eat("loop")
            body = self.parse_block(("end",))
            self.eat("end")
            return Loop(body, pos)
        if tok.kind == "call":
            self.eat("call")
            name = self.eat("ident").value
            actuals = self.parse_actuals()
            self.eat(";")
            return Call(name, actuals, pos)
        if tok.kind in ("lock", "unlock"):
            self.eat(tok.kind)
            self.eat("{")
            tags = [self.eat("ident").value]
            while self.at(","):
                self.eat(",")
                tags.append(self.eat("ident").value)
            self.eat("}")
            self.eat(";")
            cls = Lock if tok.kind == "lock" else Unlock
            return cls(tuple(tags), pos)
        if tok.kind in ("ident", "Current"):
            lhs = self.parse_path()
            if self.at("."):
                self.eat(".")
                self.eat("call")
                name = self.eat("ident").value
                actuals = self.parse_actuals()
                self.eat(";")
                return QualifiedCall(lhs, name, actuals, pos)
            self.eat(":=")
            rhs = self.parse_path()
            self.eat(";")
            return Assign(lhs, rhs, pos)
        raise self.error(f"expected a statement, found {tok.value!r}")

    def parse_actuals(self) -> Tuple[Path, ...]:
        self.eat("(")
        actuals: List[Path] = []
        if not self.at(")"):
            actuals.append(self.parse_path())
            while self.at(","):
                self.eat(",")
                actuals.append(self.parse_path())
        self.eat(")")
        return tuple(actuals)

    def parse_path(self) -> Path:
        segs: List = []
        if self.at("Current"):
            self.eat("Current")
            segs.append(Here())
        else:
            segs.append(self.eat("ident").value)
        # a path continues over '.' only while an identifier follows;
        # '.call' belongs to the qualified-call statement
        while self.at(".") and self.tokens[self.pos + 1].kind in ("ident", "Current"):
            self.eat(".")
            if self.at("Current"):
                self.eat("Current")
                segs.append(Here())
            else:
                segs.append(self.eat("ident").value)
        return normalize(Path(tuple(segs)))


def parse(source: str, filename: str = "<string>") -> Program:
    """Parse and resolve a program; raises on syntax or resolution errors."""

    program = _Parser(_lex(source, filename), filename).parse_program()
    diagnostics = _resolution_diagnostics(program)
    if diagnostics:
        raise DiagnosticsError(diagnostics)
    return program


def _resolution_diagnostics(program: Program) -> List[Diagnostic]:
    diags: List[Diagnostic] = []
    fn = program.source

    seen_classes: Set[str] = set()
    for c in program.classes:
        if c.name in seen_classes:
            diags.append(Diagnostic(fn, c.pos[0], c.pos[1], "E_DUP_CLASS",
                                    f"duplicate class {c.name!r}"))
        seen_classes.add(c.name)
        seen_attrs: Set[str] = set()
        for a in c.attributes:
            if a in seen_attrs:
                diags.append(Diagnostic(fn, c.pos[0], c.pos[1], "E_DUP_ATTR",
                                        f"duplicate attribute {a!r} in class {c.name!r}"))
            seen_attrs.add(a)

    procs: Dict[str, ProcedureDecl] = {}
    for c in program.classes:
        for p in c.procedures:
            if p.name in procs:
                diags.append(Diagnostic(fn, p.pos[0], p.pos[1], "E_DUP_PROC",
                                        f"duplicate procedure {p.name!r}"))
            procs[p.name] = p
            seen_formals: Set[str] = set()
            for f in p.formals:
                if f in seen_formals:
                    diags.append(Diagnostic(fn, p.pos[0], p.pos[1], "E_DUP_FORMAL",
                                            f"duplicate formal {f!r} in {p.name!r}"))
                seen_formals.add(f)

    def check_calls(block: Block) -> None:
        for ins in block:
            if isinstance(ins, (Call, QualifiedCall)):
                target = procs.get(ins.name)
                if target is None:
                    diags.append(Diagnostic(fn, ins.pos[0], ins.pos[1], "E_UNRESOLVED_CALL",
                                            f"call to undeclared procedure {ins.name!r}"))
                elif len(target.formals) != len(ins.actuals):
                    diags.append(Diagnostic(
                        fn, ins.pos[0], ins.pos[1], "E_ARITY",
                        f"{ins.name!r} takes {len(target.formals)} arguments, "
                        f"got {len(ins.actuals)}"))
            elif isinstance(ins, ThenElse):
                check_calls(ins.then_block)
                check_calls(ins.else_block)
            elif isinstance(ins, Loop):
                check_calls(ins.body)

    check_calls(program.main)
    for p in procs.values():
        check_calls(p.body)
    return diags


# ---------------------------------------------------------------------------
# Unparser
# ---------------------------------------------------------------------------


def _path_text(p: Path) -> str:
    return p.text()


def _unparse_block(block: Block, indent: int, out: List[str]) -> None:
    pad = "  " * indent
    for ins in block:
        if isinstance(ins, Create):
            out.append(f"{pad}create {_path_text(ins.target)};")
        elif isinstance(ins, Forget):
            out.append(f"{pad}forget {_path_text(ins.target)};")
        elif isinstance(ins, Assign):
            out.append(f"{pad}{_path_text(ins.target)} := {_path_text(ins.source)};")
        elif isinstance(ins, ThenElse):
            out.append(f"{pad}then")
            _unparse_block(ins.then_block, indent + 1, out)
            out.append(f"{pad}else")
            _unparse_block(ins.else_block, indent + 1, out)
            out.append(f"{pad}end")
        elif isinstance(ins, Loop):
            out.append(f"{pad}loop")
            _unparse_block(ins.body, indent + 1, out)
            out.append(f"{pad}end")
        elif isinstance(ins, Call):
            args = ", ".join(_path_text(a) for a in ins.actuals)
            out.append(f"{pad}call {ins.name}({args});")
        elif isinstance(ins, QualifiedCall):
            args = ", ".join(_path_text(a) for a in ins.actuals)
            out.append(f"{pad}{_path_text(ins.receiver)}.call {ins.name}({args});")
        elif isinstance(ins, Lock):
            out.append(f"{pad}lock {{{', '.join(ins.targets)}}};")
        elif isinstance(ins, Unlock):
            out.append(f"{pad}unlock {{{', '.join(ins.targets)}}};")
        else:  # pragma: no cover
            raise TypeError(f"unknown instruction {ins!r}")


def unparse(program: Program) -> str:
    out: List[str] = []
    for c in program.classes:
        out.append(f"class {c.name}")
        for a in c.attributes:
            out.append(f"  attr {a};")
        for p in c.procedures:
            out.append(f"  proc {p.name}({', '.join(p.formals)})")
            _unparse_block(p.body, 2, out)
            out.append("  end")
        out.append("end")
        out.append("")
    _unparse_block(program.main, 0, out)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _walk(block: Block) -> Iterator[Instr]:
    for ins in block:
        yield ins
        if isinstance(ins, ThenElse):
            yield from _walk(ins.then_block)
            yield from _walk(ins.else_block)
        elif isinstance(ins, Loop):
            yield from _walk(ins.body)


def _head_name(p: Path) -> Optional[str]:
    if p.segments and isinstance(p.segments[0], str):
        return p.segments[0]
    return None


def _paths_used(ins: Instr) -> Iterator[Path]:
    if isinstance(ins, (Create, Forget)):
        yield ins.target
    elif isinstance(ins, Assign):
        yield ins.target
        yield ins.source
    elif isinstance(ins, Call):
        yield from ins.actuals
    elif isinstance(ins, QualifiedCall):
        yield ins.receiver
        yield from ins.actuals


def validate(program: Program, mode: str) -> Program:
    """Check mode-specific well-formedness; returns the program unchanged.

    ``alias``: lock/unlock are rejected.  ``sim``: lock targets and call
    receivers must resolve to a processor tag (a main-block create), a
    formal of the enclosing procedure, or a name created in the same body.
    Both modes require procedure bodies to use only formals, names they
    create or assign, declared attributes, or Current.
    """

    if mode not in ("alias", "sim"):
        raise ValueError(f"mode must be 'alias' or 'sim', got {mode!r}")
    diags: List[Diagnostic] = []
    fn = program.source
    universe = program.attribute_universe
    tags = set(main_created_tags(program))

    def bound_names(block: Block, formals: Tuple[str, ...]) -> Set[str]:
        names = set(formals)
        for ins in _walk(block):
            if isinstance(ins, (Create, Assign)):
                head = _head_name(ins.target)
                if head:
                    names.add(head)
        return names

    def check_block(block: Block, formals: Tuple[str, ...], in_proc: bool) -> None:
        known = bound_names(block, formals) | universe
        for ins in _walk(block):
            if isinstance(ins, (Lock, Unlock)):
                if mode == "alias":
                    diags.append(Diagnostic(
                        fn, ins.pos[0], ins.pos[1], "E_SIM_ONLY",
                        f"{'lock' if isinstance(ins, Lock) else 'unlock'} is only "
                        "available to simulator programs"))
                else:
                    locals_ = bound_names(block, formals)
                    for t in ins.targets:
                        if t not in tags and t not in locals_:
                            diags.append(Diagnostic(
                                fn, ins.pos[0], ins.pos[1], "E_UNKNOWN_PROC",
                                f"{t!r} is not a declared processor tag"))
            if isinstance(ins, (Create, Forget)) and ins.target.is_current:
                diags.append(Diagnostic(fn, ins.pos[0], ins.pos[1], "E_BAD_TARGET",
                                        "cannot create or forget Current"))
            if mode == "sim" and isinstance(ins, QualifiedCall):
                head = _head_name(ins.receiver)
                locals_ = bound_names(block, formals)
                if len(ins.receiver.segments) != 1 or (
                    head not in tags and head not in locals_
                ):
                    diags.append(Diagnostic(
                        fn, ins.pos[0], ins.pos[1], "E_UNKNOWN_PROC",
                        f"receiver {ins.receiver.text()!r} is not a processor tag"))
            if in_proc:
                for p in _paths_used(ins):
                    head = _head_name(p)
                    if head is not None and head not in known:
                        diags.append(Diagnostic(
                            fn, ins.pos[0], ins.pos[1], "E_UNBOUND_VAR",
                            f"{head!r} is neither a formal, a local, nor an attribute"))

    check_block(program.main, (), in_proc=False)
    for proc in program.procedures.values():
        check_block(proc.body, proc.formals, in_proc=True)

    if diags:
        raise DiagnosticsError(diags)
    return program
