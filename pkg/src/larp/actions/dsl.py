"""Bounded action-script language.

    script  := "seq" "{" stmt* "}"
    stmt    := call | if | repeat
    call    := "call" IDENT "(" [arg ("," arg)*] ")"
    arg     := IDENT "=" (STRING | INTEGER)
    if      := "if" IDENT "(" [arg ("," arg)*] ")" "{" stmt* "}" ["else" "{" stmt* "}"]
    repeat  := "repeat" INTEGER "{" stmt* "}"

Scripts are bounded by construction: at most 8 levels of block nesting
(the outer ``seq`` is level 1), 64 call nodes including ``if`` conditions, and
literal repeat counts of at most 32.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Union

from ..errors import BoundsExceeded, ParseError

MAX_DEPTH = 8
MAX_CALLS = 64
MAX_REPEAT = 32

KEYWORDS = frozenset({"seq", "call", "if", "else", "repeat"})


@dataclass(frozen=True)
class Call:
    api: str
    args: tuple[tuple[str, Union[str, int]], ...] = ()

    def arg_dict(self) -> dict:
        return dict(self.args)

    def __str__(self) -> str:
        inner = ", ".join(f"{k}={json.dumps(v, ensure_ascii=False)}" for k, v in self.args)
        return f"{self.api}({inner})"


@dataclass(frozen=True)
class If:
    condition: Call
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] | None = None


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple["Stmt", ...]


Stmt = Union[Call, If, Repeat]


@dataclass(frozen=True)
class Script:
    body: tuple[Stmt, ...]

    def calls(self) -> Iterator[Call]:
        """Every call node in source order, conditions included."""
        yield from _walk_calls(self.body)

    def to_text(self) -> str:
        return format_script(self)


def _walk_calls(stmts) -> Iterator[Call]:
    for s in stmts:
        if isinstance(s, Call):
            yield s
        elif isinstance(s, If):
            yield s.condition
            yield from _walk_calls(s.then)
            if s.orelse is not None:
                yield from _walk_calls(s.orelse)
        else:
            yield from _walk_calls(s.body)


def format_script(script: Script, indent: str = "  ") -> str:
    lines = ["seq {"]

    def emit(stmts, level):
        pad = indent * level
        for s in stmts:
            if isinstance(s, Call):
                lines.append(f"{pad}call {s}")
            elif isinstance(s, If):
                lines.append(f"{pad}if {s.condition} {{")
                emit(s.then, level + 1)
                if s.orelse is not None:
                    lines.append(f"{pad}}} else {{")
                    emit(s.orelse, level + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}repeat {s.count} {{")
                emit(s.body, level + 1)
                lines.append(f"{pad}}}")

    emit(script.body, 1)
    lines.append("}")
    return "\n".join(lines)


_TOKENS = re.compile(
    r"""
    (?P<WS>\s+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<INTEGER>-?\d+)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<PUNCT>[{}(),=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int
    line: int
    column: int


def _lex(text: str) -> list[_Tok]:
    toks = []
    pos, line, col0 = 0, 1, 0
    while pos < len(text):
        m = _TOKENS.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - col0 + 1)
        kind = m.lastgroup
        if kind not in ("WS", "COMMENT"):
            if kind == "IDENT" and m.group() in KEYWORDS:
                kind = m.group()
            elif kind == "PUNCT":
                kind = m.group()
            toks.append(_Tok(kind, m.group(), pos, line, pos - col0 + 1))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            col0 = m.start() + m.group().rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("EOF", "", pos, line, pos - col0 + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0
        self.calls = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: str):
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.text)
        raise ParseError(f"unexpected {found}", t.line, t.column, expected)

    def expect(self, kind: str, what: str | None = None) -> _Tok:
        if self.tok.kind != kind:
            self.fail(what or repr(kind))
        t = self.tok
        self.i += 1
        return t

    def script(self) -> Script:
        self.expect("seq", "'seq'")
        body = self.block(1)
        if self.tok.kind != "EOF":
            self.fail("end of script")
        return Script(body)

    def block(self, depth: int) -> tuple[Stmt, ...]:
        if depth > MAX_DEPTH:
            t = self.tok
            raise BoundsExceeded(f"nesting deeper than {MAX_DEPTH} levels", t.line, t.column)
        self.expect("{", "'{'")
        stmts = []
        while self.tok.kind != "}":
            stmts.append(self.stmt(depth))
        self.i += 1
        return tuple(stmts)

    def stmt(self, depth: int) -> Stmt:
        kind = self.tok.kind
        if kind == "call":
            self.i += 1
            return self.call()
        if kind == "if":
            self.i += 1
            cond = self.call()
            then = self.block(depth + 1)
            orelse = None
            if self.tok.kind == "else":
                self.i += 1
                orelse = self.block(depth + 1)
            return If(cond, then, orelse)
        if kind == "repeat":
            self.i += 1
            t = self.tok
            if t.kind != "INTEGER":
                self.fail("literal repeat count")
            self.i += 1
            count = int(t.text)
            if count < 0 or count > MAX_REPEAT:
                raise BoundsExceeded(
                    f"repeat count {count} outside 0..{MAX_REPEAT}", t.line, t.column
                )
            return Repeat(count, self.block(depth + 1))
        self.fail("'call', 'if', 'repeat' or '}'")

    def call(self) -> Call:
        name_tok = self.expect("IDENT", "API name")
        self.calls += 1
        if self.calls > MAX_CALLS:
            raise BoundsExceeded(
                f"more than {MAX_CALLS} call nodes", name_tok.line, name_tok.column
            )
        self.expect("(", "'('")
        args: list[tuple[str, str | int]] = []
        if self.tok.kind != ")":
            args.append(self.arg())
            while self.tok.kind == ",":
                self.i += 1
                args.append(self.arg())
        self.expect(")", "')'")
        names = [a for a, _ in args]
        if len(set(names)) != len(names):
            raise ParseError(f"duplicate argument in call to {name_tok.text}", name_tok.line, name_tok.column)
        return Call(name_tok.text, tuple(args))

    def arg(self) -> tuple[str, str | int]:
        name = self.expect("IDENT", "argument name").text
        self.expect("=", "'='")
        t = self.tok
        if t.kind == "STRING":
            self.i += 1
            try:
                return name, json.loads(t.text)
            except json.JSONDecodeError:
                raise ParseError("bad escape in string", t.line, t.column) from None
        if t.kind == "INTEGER":
            self.i += 1
            return name, int(t.text)
        self.fail("string or integer literal")


def parse_script(text: str) -> Script:
    return _Parser(text).script()


def parse_call(text: str) -> Call:
    """Parse a single ``api(arg=value, ...)`` expression (used by the REPL)."""
    p = _Parser(text)
    c = p.call()
    if p.tok.kind != "EOF":
        p.fail("end of input")
    return c


def extract_script(reply: str) -> str:
    """Strip markdown fences an LLM may wrap around a script."""
    m = re.search(r"```[A-Za-z]*\n(.*?)```", reply, re.DOTALL)
    return (m.group(1) if m else reply).strip()
