"""Terms, clauses, lexer and parser for the semantic-memory logic language.

    program := clause*
    clause  := [PROB "::"] atom "."  |  atom ":-" atom ("," atom)* "."
    query   := atom "?"
    atom    := LOWER ["(" term ("," term)* ")"]
    term    := LOWER | STRING | INTEGER | VARIABLE

``%`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Union

from ..errors import ParseError


@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


Const = Union[str, int]
Term = Union[Var, str, int]

_BARE = re.compile(r"[a-z][A-Za-z0-9_]*\Z")


def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, bool):
        raise TypeError("booleans are not logic constants")
    if isinstance(t, int):
        return str(t)
    if _BARE.match(t):
        return t
    return json.dumps(t, ensure_ascii=False)


def const_sort_key(c: Const) -> tuple:
    return (0, c, "") if isinstance(c, int) else (1, 0, c)


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()

    def __post_init__(self):
        if not self.predicate:
            raise ValueError("predicate must be non-empty")
        object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def signature(self) -> tuple[str, int]:
        return (self.predicate, len(self.args))

    def variables(self) -> list[Var]:
        seen: list[Var] = []
        for a in self.args:
            if isinstance(a, Var) and a not in seen:
                seen.append(a)
        return seen

    def is_ground(self) -> bool:
        return not any(isinstance(a, Var) for a in self.args)

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(format_term(a) for a in self.args)})"


@dataclass(frozen=True)
class Clause:
    head: Atom
    body: tuple[Atom, ...] = ()
    probability: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        if not (0.0 < self.probability <= 1.0):
            raise ValueError(f"probability must lie in (0, 1], got {self.probability}")
        if self.body and self.probability != 1.0:
            raise ValueError("only facts may carry a probability")
        if not self.body and not self.head.is_ground():
            raise ValueError(f"fact {self.head} contains variables")
        if self.body:
            body_vars = {v for b in self.body for v in b.variables() if v.name != "_"}
            unsafe = [v.name for v in self.head.variables() if v not in body_vars]
            if unsafe:
                raise ValueError(f"head variables {unsafe} do not occur in the rule body")

    @property
    def is_fact(self) -> bool:
        return not self.body

    @property
    def is_probabilistic(self) -> bool:
        return self.is_fact and self.probability < 1.0

    def __str__(self) -> str:
        if self.body:
            return f"{self.head} :- {', '.join(str(b) for b in self.body)}."
        if self.probability < 1.0:
            return f"{self.probability!r}::{self.head}."
        return f"{self.head}."


def pretty_print(clauses) -> str:
    return "".join(f"{c}\n" for c in clauses)


# ---------------------------------------------------------------------------
# lexer

_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("NL", r"\n"),
    ("COMMENT", r"%[^\n]*"),
    ("NUMBER", r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("LOWER", r"[a-z][A-Za-z0-9_]*"),
    ("VAR", r"[A-Z_][A-Za-z0-9_]*"),
    ("NECK", r":-"),
    ("PROBSEP", r"::"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("COMMA", r","),
    ("DOT", r"\."),
    ("QMARK", r"\?"),
]
_LEXER = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _TOKEN_SPEC))

_DESCRIBE = {
    "NUMBER": "number",
    "STRING": "quoted string",
    "LOWER": "identifier",
    "VAR": "variable",
    "NECK": "':-'",
    "PROBSEP": "'::'",
    "LPAREN": "'('",
    "RPAREN": "')'",
    "COMMA": "','",
    "DOT": "'.'",
    "QMARK": "'?'",
    "EOF": "end of input",
}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _LEXER.match(text, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        if kind == "NL":
            line += 1
            line_start = m.end()
        elif kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def fail(self, expected: str, tok: Token | None = None):
        tok = tok or self.tok
        found = _DESCRIBE.get(tok.kind, tok.kind) if tok.kind == "EOF" else repr(tok.text)
        raise ParseError(f"unexpected {found}", tok.line, tok.column, expected)

    def expect(self, kind: str) -> Token:
        tok = self.tok
        if tok.kind != kind:
            self.fail(_DESCRIBE[kind])
        self.i += 1
        return tok

    def term(self) -> Term:
        tok = self.tok
        if tok.kind == "LOWER":
            self.i += 1
            return tok.text
        if tok.kind == "VAR":
            self.i += 1
            return Var(tok.text)
        if tok.kind == "STRING":
            self.i += 1
            try:
                return json.loads(tok.text)
            except json.JSONDecodeError:
                raise ParseError("bad escape in string", tok.line, tok.column) from None
        if tok.kind == "NUMBER":
            if not re.fullmatch(r"-?\d+", tok.text):
                raise ParseError("only integer constants are allowed", tok.line, tok.column)
            self.i += 1
            return int(tok.text)
        self.fail("term")

    def atom(self) -> Atom:
        name = self.expect("LOWER").text
        args: list[Term] = []
        if self.tok.kind == "LPAREN":
            self.i += 1
            args.append(self.term())
            while self.tok.kind == "COMMA":
                self.i += 1
                args.append(self.term())
            self.expect("RPAREN")
        return Atom(name, tuple(args))

    def clause(self) -> Clause:
        start = self.tok
        prob = 1.0
        if self.tok.kind == "NUMBER" and self.peek().kind == "PROBSEP":
            prob = float(self.tok.text)
            if not 0.0 < prob <= 1.0:
                raise ParseError(
                    f"probability {self.tok.text} outside (0, 1]", self.tok.line, self.tok.column
                )
            self.i += 2
        head = self.atom()
        body: list[Atom] = []
        if self.tok.kind == "NECK":
            if prob != 1.0 or start.kind == "NUMBER":
                raise ParseError(
                    "probabilistic rules are not allowed; only facts take a probability",
                    start.line,
                    start.column,
                )
            self.i += 1
            body.append(self.atom())
            while self.tok.kind == "COMMA":
                self.i += 1
                body.append(self.atom())
        elif self.tok.kind != "DOT":
            self.fail("':-' or '.'")
        self.expect("DOT")
        try:
            return Clause(head, tuple(body), prob)
        except ValueError as exc:
            raise ParseError(str(exc), start.line, start.column) from None


def parse_program(text: str) -> list[Clause]:
    p = _Parser(text)
    clauses = []
    while p.tok.kind != "EOF":
        clauses.append(p.clause())
    return clauses


def parse_query(text: str) -> Atom:
    p = _Parser(text)
    atom = p.atom()
    p.expect("QMARK")
    if p.tok.kind != "EOF":
        p.fail("end of input")
    return atom


def iter_facts(clauses) -> Iterator[Clause]:
    return (c for c in clauses if c.is_fact)
