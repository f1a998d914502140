"""Random knowledge bases in two forms: program text and oracle tuples."""

from __future__ import annotations

import random
from dataclasses import dataclass

CONSTANTS = ["a", "b", "c", "d", 1, 2]
VARS = ["X", "Y", "Z"]


def _term_text(t) -> str:
    return str(t)


def _atom_text(pred, args) -> str:
    return pred if not args else f"{pred}({','.join(_term_text(a) for a in args)})"


@dataclass
class RandomKB:
    text: str
    facts: list  # (pred, args, p)
    rules: list  # ((pred, args), [(pred, args), ...])
    predicates: dict  # pred -> arity

    def query(self, rng: random.Random):
        pred = rng.choice(sorted(self.predicates))
        args = []
        for _ in range(self.predicates[pred]):
            roll = rng.random()
            if roll < 0.45:
                args.append(rng.choice(VARS))
            elif roll < 0.55:
                args.append("_")
            else:
                args.append(rng.choice(CONSTANTS))
        return pred, tuple(args), _atom_text(pred, args) + "?"


def random_kb(rng: random.Random, max_clauses: int = 30, max_prob: int = 12) -> RandomKB:
    n_preds = rng.randint(2, 5)
    predicates = {f"p{i}": rng.randint(0, 2) for i in range(n_preds)}
    names = sorted(predicates)
    n_clauses = rng.randint(1, max_clauses)
    n_prob = 0
    facts, rules, lines = [], [], []
    for _ in range(n_clauses):
        if rng.random() < 0.55:
            pred = rng.choice(names)
            args = tuple(rng.choice(CONSTANTS) for _ in range(predicates[pred]))
            p = 1.0
            if n_prob < max_prob and rng.random() < 0.6:
                p = rng.choice([0.1, 0.25, 0.3, 0.5, 0.6, 0.75, 0.9, 0.35])
                n_prob += 1
            facts.append((pred, args, p))
            prefix = f"{p!r}::" if p < 1.0 else ""
            lines.append(prefix + _atom_text(pred, args) + ".")
        else:
            body = []
            for _ in range(rng.randint(1, 3)):
                pred = rng.choice(names)
                args = []
                for _ in range(predicates[pred]):
                    roll = rng.random()
                    if roll < 0.7:
                        args.append(rng.choice(VARS))
                    elif roll < 0.75:
                        args.append("_")
                    else:
                        args.append(rng.choice(CONSTANTS))
                body.append((pred, tuple(args)))
            bound = sorted({a for _, args in body for a in args if isinstance(a, str) and a in VARS})
            head_pred = rng.choice(names)
            head_args = []
            for _ in range(predicates[head_pred]):
                if bound and rng.random() < 0.8:
                    head_args.append(rng.choice(bound))
                else:
                    head_args.append(rng.choice(CONSTANTS))
            head = (head_pred, tuple(head_args))
            rules.append((head, body))
            lines.append(
                f"{_atom_text(*head)} :- {', '.join(_atom_text(*b) for b in body)}."
            )
    # the engine drops exact duplicate clauses; mirror that in the oracle's input
    seen, dedup_facts = set(), []
    for f in facts:
        if f not in seen:
            seen.add(f)
            dedup_facts.append(f)
    return RandomKB("\n".join(lines) + "\n", dedup_facts, rules, predicates)
