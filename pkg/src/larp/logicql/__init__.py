"""Semantic-memory logic language: facts, Horn rules and probabilistic facts."""

from .engine import (
    DEFAULT_MAX_PROBABILISTIC_FACTS,
    KnowledgeBase,
    QueryResult,
    assert_clause,
    evaluate,
    least_model,
    lineage_probability,
    retract_fact,
)
from .syntax import Atom, Clause, Var, format_term, parse_program, parse_query, pretty_print, tokenize

__all__ = [
    "Atom",
    "Clause",
    "DEFAULT_MAX_PROBABILISTIC_FACTS",
    "KnowledgeBase",
    "QueryResult",
    "Var",
    "assert_clause",
    "evaluate",
    "format_term",
    "least_model",
    "lineage_probability",
    "parse_program",
    "parse_query",
    "pretty_print",
    "retract_fact",
    "tokenize",
]
