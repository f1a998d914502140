"""Exact evaluation of function-free Datalog with independent probabilistic facts.

The least model is computed bottom-up (semi-naive) while every derived atom is
annotated with its lineage: the minimal sets of probabilistic facts that
suffice to derive it. A query answer's probability is the probability of that
monotone DNF over independent facts, computed exactly by Shannon expansion
over the facts that actually occur in it.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..errors import ArityConflict, TooManyProbabilisticFacts
from .syntax import Atom, Clause, Const, Var, const_sort_key, parse_program, pretty_print

DEFAULT_MAX_PROBABILISTIC_FACTS = 20

Lineage = frozenset  # of int bitmasks; each mask is one sufficient set of probabilistic facts
Row = tuple  # tuple of constants


class KnowledgeBase:
    """An immutable clause list with one arity per predicate."""

    __slots__ = ("_clauses", "_arity")

    def __init__(self, clauses: Iterable[Clause] = ()):
        self._clauses: tuple[Clause, ...] = ()
        self._arity: dict[str, int] = {}
        out: list[Clause] = []
        for c in clauses:
            self._check_arity(c, self._arity)
            if c not in out:
                out.append(c)
        self._clauses = tuple(out)

    @staticmethod
    def _check_arity(clause: Clause, arity: dict[str, int]) -> None:
        for atom in (clause.head, *clause.body):
            known = arity.setdefault(atom.predicate, atom.arity)
            if known != atom.arity:
                raise ArityConflict(
                    f"predicate {atom.predicate!r} used with arity {atom.arity}, "
                    f"already known with arity {known}"
                )

    @classmethod
    def from_text(cls, text: str) -> "KnowledgeBase":
        return cls(parse_program(text))

    @property
    def clauses(self) -> tuple[Clause, ...]:
        return self._clauses

    def arity_of(self, predicate: str) -> int | None:
        return self._arity.get(predicate)

    def assert_clause(self, clause: Clause) -> "KnowledgeBase":
        if clause in self._clauses:
            return self
        arity = dict(self._arity)
        self._check_arity(clause, arity)
        kb = KnowledgeBase.__new__(KnowledgeBase)
        kb._clauses = self._clauses + (clause,)
        kb._arity = arity
        return kb

    def retract_fact(self, atom: Atom) -> "KnowledgeBase":
        if not atom.is_ground():
            raise ValueError("retract requires a ground atom")
        kept = tuple(c for c in self._clauses if not (c.is_fact and c.head == atom))
        if len(kept) == len(self._clauses):
            return self
        return KnowledgeBase(kept)

    def to_text(self) -> str:
        return pretty_print(self._clauses)

    def __iter__(self) -> Iterator[Clause]:
        return iter(self._clauses)

    def __len__(self) -> int:
        return len(self._clauses)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self._clauses == other._clauses

    def __repr__(self) -> str:
        return f"KnowledgeBase({len(self._clauses)} clauses)"


def assert_clause(kb: KnowledgeBase, clause: Clause) -> KnowledgeBase:
    return kb.assert_clause(clause)


def retract_fact(kb: KnowledgeBase, atom: Atom) -> KnowledgeBase:
    return kb.retract_fact(atom)


@dataclass
class QueryResult:
    bindings: dict[str, Const]
    probability: float

    def sort_key(self):
        return (-self.probability, [(k, const_sort_key(v)) for k, v in sorted(self.bindings.items())])


# ---------------------------------------------------------------------------
# lineage algebra


def _minimize(masks: Iterable[int]) -> frozenset:
    """Keep only masks that have no proper subset in the collection."""
    ordered = sorted(set(masks), key=lambda m: (bin(m).count("1"), m))
    kept: list[int] = []
    for m in ordered:
        if not any(k & m == k for k in kept):
            kept.append(m)
    return frozenset(kept)


def _conjoin(a: frozenset, b: frozenset) -> frozenset:
    return _minimize(x | y for x in a for y in b)


def lineage_probability(dnf: frozenset, probs: list[float]) -> float:
    """Exact probability that at least one mask in ``dnf`` has all its facts true."""
    memo: dict[frozenset, float] = {}

    def go(d: frozenset) -> float:
        if not d:
            return 0.0
        if 0 in d:
            return 1.0
        if len(d) == 1:
            (m,) = d
            p, i = 1.0, 0
            while m:
                if m & 1:
                    p *= probs[i]
                m >>= 1
                i += 1
            return p
        hit = memo.get(d)
        if hit is not None:
            return hit
        counts: dict[int, int] = defaultdict(int)
        for m in d:
            i = 0
            while m:
                if m & 1:
                    counts[i] += 1
                m >>= 1
                i += 1
        var = max(counts, key=lambda i: (counts[i], -i))
        bit = 1 << var
        pos = _minimize(m & ~bit for m in d)
        neg = frozenset(m for m in d if not m & bit)
        p = probs[var]
        result = p * go(pos) + (1.0 - p) * go(neg)
        memo[d] = result
        return result

    return go(_minimize(dnf))


# ---------------------------------------------------------------------------
# bottom-up fixpoint


def _match(atom: Atom, row: Row, subst: dict) -> dict | None:
    out = subst
    copied = False
    for term, value in zip(atom.args, row):
        if isinstance(term, Var):
            if term.name == "_":
                continue
            bound = out.get(term)
            if bound is None:
                if not copied:
                    out = dict(out)
                    copied = True
                out[term] = value
            elif bound != value or type(bound) is not type(value):
                return None
        elif term != value or type(term) is not type(value):
            return None
    return out


def _instantiate(atom: Atom, subst: dict) -> Row:
    return tuple(subst[a] if isinstance(a, Var) else a for a in atom.args)


class _Model:
    def __init__(self):
        self.rel: dict[tuple[str, int], dict[Row, frozenset]] = defaultdict(dict)

    def add(self, sig, row: Row, lineage: frozenset) -> bool:
        table = self.rel[sig]
        old = table.get(row)
        if old is None:
            table[row] = lineage
            return True
        merged = _minimize(old | lineage)
        if merged == old:
            return False
        table[row] = merged
        return True


def _fire(rule: Clause, model: _Model, delta: dict, pivot: int) -> Iterator[tuple[Row, frozenset]]:
    body = rule.body
    order = [pivot] + [j for j in range(len(body)) if j != pivot]

    def walk(k: int, subst: dict, lin: frozenset):
        if k == len(order):
            yield _instantiate(rule.head, subst), lin
            return
        j = order[k]
        atom = body[j]
        source = delta.get(atom.signature, {}) if k == 0 else model.rel.get(atom.signature, {})
        for row, row_lin in list(source.items()):
            s = _match(atom, row, subst)
            if s is not None:
                yield from walk(k + 1, s, _conjoin(lin, row_lin) if lin != _TRUE else row_lin)

    yield from walk(0, {}, _TRUE)


_TRUE = frozenset({0})


def least_model(kb: Iterable[Clause], max_probabilistic: int = DEFAULT_MAX_PROBABILISTIC_FACTS):
    """Return (model relations, fact probabilities) for the annotated least model."""
    clauses = list(kb)
    probs: list[float] = []
    model = _Model()
    delta: dict = defaultdict(dict)
    for c in clauses:
        if not c.is_fact:
            continue
        if c.is_probabilistic:
            lin = frozenset({1 << len(probs)})
            probs.append(c.probability)
        else:
            lin = _TRUE
        row = tuple(c.head.args)
        if model.add(c.head.signature, row, lin):
            delta[c.head.signature][row] = model.rel[c.head.signature][row]
    if len(probs) > max_probabilistic:
        raise TooManyProbabilisticFacts(
            f"{len(probs)} probabilistic facts exceed the limit of {max_probabilistic}"
        )
    rules = [c for c in clauses if not c.is_fact]
    while delta:
        new_delta: dict = defaultdict(dict)
        for rule in rules:
            for pivot, atom in enumerate(rule.body):
                if atom.signature not in delta:
                    continue
                for row, lin in list(_fire(rule, model, delta, pivot)):
                    sig = rule.head.signature
                    if model.add(sig, row, lin):
                        new_delta[sig][row] = model.rel[sig][row]
        delta = {k: v for k, v in new_delta.items() if v}
    return model.rel, probs


def evaluate(
    query: Atom,
    kb: KnowledgeBase | Iterable[Clause],
    max_probabilistic: int = DEFAULT_MAX_PROBABILISTIC_FACTS,
) -> list[QueryResult]:
    rel, probs = least_model(kb, max_probabilistic)
    qvars = [v for v in query.variables() if v.name != "_"]
    grouped: dict[tuple, set] = {}
    for row, lin in rel.get(query.signature, {}).items():
        s = _match(query, row, {})
        if s is None:
            continue
        key = tuple((v.name, s[v]) for v in qvars)
        grouped.setdefault(key, set()).update(lin)
    results = [
        QueryResult(dict(key), lineage_probability(frozenset(lin), probs))
        for key, lin in grouped.items()
    ]
    results = [r for r in results if r.probability > 0.0]
    results.sort(key=QueryResult.sort_key)
    return results
