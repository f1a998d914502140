"""Encoding, reflection and recall over working and long-term memory.

Recall runs in rounds. Each round asks the model for self-ask questions about
the current observation, retrieves evidence for every question through three
channels (a logic query over the semantic knowledge base, keyword matching
over natural-language memories, and similarity search over stored
question/answer pairs), drops forgotten records, and asks for a
chain-of-thought answer. A reply beginning with ``FINAL:`` ends the loop;
otherwise it becomes context for the next round.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Sequence

from .bridge import LLMBridge
from .errors import ArityConflict, InvalidRecord, ParseError, TooManyProbabilisticFacts
from .logicql import KnowledgeBase, QueryResult, evaluate, format_term, parse_program, parse_query
from .ltm import LongTermMemory, MemoryRecord, forget_filter
from .persona import Persona
from .prompts import render
from .working_memory import WorkingMemory, WorkingMemoryEntry
from .world import Observation, ObservationItem

logger = logging.getLogger(__name__)

FINAL_SENTINEL = "FINAL:"
NO_MEMORY_ANSWER = "Nothing relevant comes to mind."

FILTERED = "filtered"
STORED_EPISODIC = "stored_episodic"
STORED_SEMANTIC_OK = "stored_semantic_ok"
STORED_SEMANTIC_DROPPED = "stored_semantic_dropped"


@dataclass(frozen=True)
class ProcessingConfig:
    ineffective_salience: float = 0.2
    max_questions: int = 5
    max_iterations: int = 3
    top_k: int = 5
    qa_min_similarity: float = 0.5
    reconstruct_on_recall: bool = False


@dataclass(frozen=True)
class SelfAskQuestion:
    text: str
    index: int

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("self-ask question must be non-empty")


@dataclass
class RetrievalBundle:
    question: SelfAskQuestion
    logic_query: str | None = None
    logic_results: list[QueryResult] = field(default_factory=list)
    keywords: list[str] = field(default_factory=list)
    keyword_results: list[tuple[MemoryRecord, int]] = field(default_factory=list)
    qa_results: list[tuple[MemoryRecord, float]] = field(default_factory=list)
    surviving: list[MemoryRecord] = field(default_factory=list)
    forgotten_ids: list[int] = field(default_factory=list)
    channel_errors: dict[str, str] = field(default_factory=dict)

    def evidence_lines(self) -> list[str]:
        lines = []
        for r in self.logic_results:
            binding = ", ".join(f"{k}={format_term(v)}" for k, v in r.bindings.items()) or "true"
            lines.append(f"{self.logic_query} {binding} (p={r.probability:.3f})")
        for rec in self.surviving:
            if rec.kind == "episodic_qa":
                lines.append(f"[#{rec.id}] Q: {rec.question} A: {rec.content}")
            else:
                lines.append(f"[#{rec.id}] {rec.content}")
        return lines

    def to_event(self) -> dict:
        return {
            "question": self.question.text,
            "logic_query": self.logic_query,
            "logic_results": [
                {"bindings": {k: v for k, v in r.bindings.items()}, "p": round(r.probability, 12)}
                for r in self.logic_results
            ],
            "keywords": self.keywords,
            "keyword_hits": [rec.id for rec, _ in self.keyword_results],
            "qa_hits": [rec.id for rec, _ in self.qa_results],
            "surviving": [rec.id for rec in self.surviving],
            "forgotten": self.forgotten_ids,
            "channel_errors": self.channel_errors,
        }


@dataclass
class RecallResult:
    answer: str
    supporting_record_ids: list[int]
    iterations: int
    terminated_by: str  # final_answer | iteration_cap
    bundles: list[list[RetrievalBundle]] = field(default_factory=list)
    reconstructed_ids: list[int] = field(default_factory=list)


@dataclass
class ReflectionReport:
    tick: int
    outcomes: dict[str, str] = field(default_factory=dict)
    stored_record_ids: list[int] = field(default_factory=list)
    asserted: list[str] = field(default_factory=list)
    dropped_facts: list[tuple[str, str]] = field(default_factory=list)

    @property
    def filtered(self) -> list[str]:
        return [k for k, v in self.outcomes.items() if v == FILTERED]

    def to_event(self) -> dict:
        return {
            "tick": self.tick,
            "outcomes": dict(sorted(self.outcomes.items())),
            "stored": self.stored_record_ids,
            "asserted": self.asserted,
            "dropped": [list(x) for x in self.dropped_facts],
        }


def item_key(item: ObservationItem) -> str:
    digest = hashlib.sha1(f"{item.kind}|{item.subject}|{item.detail}".encode("utf-8")).hexdigest()
    return f"obs:{digest[:12]}"


def parse_importance(reply: str) -> float | None:
    m = re.search(r"-?\d+(?:\.\d+)?", reply)
    if not m:
        return None
    value = float(m.group())
    if not 0.0 <= value <= 10.0:
        return None
    return value / 10.0


def parse_qa_pairs(reply: str) -> list[tuple[str, str]]:
    pairs = []
    question = None
    for line in reply.splitlines():
        line = line.strip()
        mq = re.match(r"Q\d*\s*[:.)]\s*(.+)", line)
        ma = re.match(r"A\d*\s*[:.)]\s*(.+)", line)
        if mq:
            question = mq.group(1).strip()
        elif ma and question:
            pairs.append((question, ma.group(1).strip()))
            question = None
    return pairs


def parse_questions(reply: str) -> list[str]:
    out = []
    for line in reply.splitlines():
        m = re.match(r"\s*(?:Q\s*\d+\s*[:.)]|\d+\s*[:.)])\s*(.+?)\s*$", line)
        if m:
            out.append(m.group(1))
    return out


_REFLECT_LINE = re.compile(r"^\s*(MEMORY|FACT)\s*(?:\(([\d,\s]*)\))?\s*:\s*(.*?)\s*$", re.IGNORECASE)


class MemoryProcessor:
    """One character's encode / reflect / recall pipeline."""

    def __init__(
        self,
        persona: Persona,
        bridge: LLMBridge,
        ltm: LongTermMemory | None = None,
        kb: KnowledgeBase | None = None,
        wm: WorkingMemory | None = None,
        config: ProcessingConfig | None = None,
    ):
        self.persona = persona
        self.character_id = persona.character_id
        self.bridge = bridge
        self.ltm = ltm if ltm is not None else LongTermMemory()
        self.kb = kb if kb is not None else KnowledgeBase()
        self.wm = wm if wm is not None else WorkingMemory()
        self.config = config or ProcessingConfig()
        self.backlog: list[WorkingMemoryEntry] = []

    @property
    def decay(self):
        return self.persona.decay

    def _ask(self, role: str, prompt: str) -> str:
        return self.bridge.ask(role, prompt, system=self.persona.system_prompt())

    def put(self, entry: WorkingMemoryEntry) -> list[WorkingMemoryEntry]:
        evicted = self.wm.put(entry)
        self.backlog.extend(evicted)
        return evicted

    # -- encoding -------------------------------------------------------------

    def encode_observation(self, observation: Observation, now: int | None = None) -> list[WorkingMemoryEntry]:
        if observation.character_id != self.character_id:
            raise ValueError("observation belongs to another character")
        now = observation.tick if now is None else now
        entries = []
        for item in observation.items:
            reply = self._ask("importance", render("importance", item=item.text()))
            salience = parse_importance(reply)
            if salience is None:
                logger.warning("could not parse importance %r; using 0.5", reply)
                salience = 0.5
            entry = WorkingMemoryEntry(item_key(item), item.text(), "perception", now, salience)
            self.put(entry)
            entries.append(entry)
        return entries

    def generate_qa_pairs(
        self,
        content: str,
        now: int = 0,
        importance: float = 0.5,
        provenance: str = "reflected",
        fallback_nl: bool = True,
    ) -> list[tuple[int, str, str]]:
        if not content.strip():
            raise ValueError("content must be non-empty")
        pairs = parse_qa_pairs(self._ask("qa_gen", render("qa_gen", content=content)))
        stored = []
        for q, a in pairs:
            rid = self.ltm.store(
                self.character_id,
                "episodic_qa",
                a,
                question=q,
                importance=importance,
                created_at=now,
                provenance=provenance,
            )
            stored.append((rid, q, a))
        if not pairs:
            logger.warning("no question/answer pairs parsed for %r", content[:60])
            if fallback_nl:
                self.ltm.store(
                    self.character_id, "episodic_nl", content,
                    importance=importance, created_at=now, provenance=provenance,
                )
        return stored

    # -- reflection -----------------------------------------------------------

    def reflect(self, now: int) -> ReflectionReport:
        if not self.wm.should_reflect():
            raise RuntimeError("reflection requires working memory at its threshold")
        present = self.wm.snapshot()
        present_keys = {e.key for e in present}
        items = present + [e for e in self.backlog if e.key not in present_keys]
        report = ReflectionReport(now)
        kept = []
        for e in items:
            if e.key in report.outcomes:
                continue
            if e.salience < self.config.ineffective_salience:
                report.outcomes[e.key] = FILTERED
            else:
                kept.append(e)
                report.outcomes[e.key] = ""

        if kept:
            listing = "\n".join(f"{i}. {e.value}" for i, e in enumerate(kept, start=1))
            reply = self._ask("reflect_memory", render("reflect_memory", entries=listing))
        else:
            reply = ""

        semantic_ok: set[str] = set()
        semantic_bad: set[str] = set()
        episodic: set[str] = set()
        for line in reply.splitlines():
            m = _REFLECT_LINE.match(line)
            if not m:
                continue
            tag, refs, text = m.group(1).upper(), m.group(2), m.group(3)
            sources = kept
            if refs:
                idx = [int(x) for x in re.findall(r"\d+", refs) if 1 <= int(x) <= len(kept)]
                if idx:
                    sources = [kept[i - 1] for i in idx]
            if not text:
                continue
            importance = max(e.salience for e in sources)
            keys = {e.key for e in sources}
            if tag == "MEMORY":
                rid = self.ltm.store(
                    self.character_id, "episodic_nl", text,
                    importance=importance, created_at=now, provenance="reflected",
                )
                report.stored_record_ids.append(rid)
                report.stored_record_ids += [r for r, _, _ in self.generate_qa_pairs(
                    text, now, importance, "reflected", fallback_nl=False
                )]
                episodic |= keys
            else:
                clause_text = text if text.endswith(".") else text + "."
                try:
                    clauses = parse_program(clause_text)
                    kb = self.kb
                    for c in clauses:
                        kb = kb.assert_clause(c)
                    rid = self.ltm.store(
                        self.character_id, "semantic_fact", clause_text,
                        importance=importance, created_at=now, provenance="reflected",
                    )
                except (ParseError, ArityConflict, InvalidRecord) as exc:
                    logger.warning("dropping reflected fact %r: %s", text, exc)
                    report.dropped_facts.append((text, str(exc)))
                    semantic_bad |= keys
                    continue
                self.kb = kb
                report.asserted += [str(c) for c in clauses]
                report.stored_record_ids.append(rid)
                semantic_ok |= keys

        for e in kept:
            if e.key in semantic_ok:
                outcome = STORED_SEMANTIC_OK
            elif e.key in episodic:
                outcome = STORED_EPISODIC
            elif e.key in semantic_bad:
                outcome = STORED_SEMANTIC_DROPPED
            else:
                # nothing in the summary covered it; keep the raw text rather than lose it
                rid = self.ltm.store(
                    self.character_id, "episodic_nl", e.value,
                    importance=e.salience, created_at=now, provenance="observed",
                )
                report.stored_record_ids.append(rid)
                outcome = STORED_EPISODIC
            report.outcomes[e.key] = outcome

        self.wm.remove(present_keys)
        self.backlog = []
        return report

    # -- recall ---------------------------------------------------------------

    def self_ask(self, observation_digest: str, context: str = "") -> list[SelfAskQuestion]:
        reply = self._ask(
            "self_ask",
            render("self_ask", observation=observation_digest, context=context),
        )
        texts = parse_questions(reply)[: self.config.max_questions]
        return [SelfAskQuestion(t, i) for i, t in enumerate(texts)]

    def _predicate_listing(self) -> str:
        sigs = sorted({(a.predicate, a.arity) for c in self.kb for a in (c.head, *c.body)})
        return ", ".join(f"{p}/{n}" for p, n in sigs) or "(none)"

    def compound_retrieve(self, question: SelfAskQuestion, now: int) -> RetrievalBundle:
        if isinstance(question, str):
            question = SelfAskQuestion(question, 0)
        bundle = RetrievalBundle(question)

        reply = self._ask(
            "logic_gen",
            render("logic_gen", predicates=self._predicate_listing(), question=question.text),
        ).strip()
        query_text = next((ln.strip() for ln in reply.splitlines() if ln.strip()), "")
        try:
            query = parse_query(query_text)
            bundle.logic_query = str(query) + "?"
            bundle.logic_results = evaluate(query, self.kb)
        except (ParseError, TooManyProbabilisticFacts) as exc:
            logger.info("logic channel empty for %r: %s", question.text, exc)
            bundle.channel_errors["logic"] = str(exc)

        reply = self._ask("keyword_extract", render("keyword_extract", question=question.text))
        keywords = []
        for kw in re.split(r"[,\n]", reply):
            kw = kw.strip().strip(".").strip()
            if kw and kw.lower() not in (k.lower() for k in keywords):
                keywords.append(kw)
        bundle.keywords = keywords
        k = self.config.top_k
        bundle.keyword_results = self.ltm.keyword_search(keywords, self.character_id, k)
        bundle.qa_results = [
            (rec, sim)
            for rec, sim in self.ltm.qa_search(question.text, self.character_id, k)
            if sim >= self.config.qa_min_similarity
        ]

        # merge channels 2 and 3 on a common [0, 1] scale
        best: dict[int, tuple[float, MemoryRecord]] = {}
        n_kw = max(1, len(keywords))
        scored = [(rec, s / n_kw) for rec, s in bundle.keyword_results] + list(bundle.qa_results)
        for rec, score in scored:
            if rec.id not in best or score > best[rec.id][0]:
                best[rec.id] = (score, rec)
        merged = sorted(best.values(), key=lambda x: (-x[0], -x[1].created_at, x[1].id))
        candidates = [rec for _, rec in merged]
        rng = None
        if self.decay.retrieval_mode == "stochastic":
            rng = random.Random(f"{self.decay.rng_seed}:{now}:{question.index}:{question.text}")
        survivors = forget_filter(candidates, now, self.decay, rng)
        kept_ids = {r.id for r in survivors}
        bundle.forgotten_ids = [r.id for r in candidates if r.id not in kept_ids]
        for rec in survivors:
            self.ltm.touch(rec.id, now)
        bundle.surviving = survivors
        return bundle

    def recall_loop(self, observation: Observation | str, now: int) -> RecallResult:
        digest = observation.digest() if isinstance(observation, Observation) else str(observation)
        notes: list[str] = []
        supporting: list[int] = []
        rounds: list[list[RetrievalBundle]] = []
        reply = ""
        for iteration in range(1, self.config.max_iterations + 1):
            context = ("Notes so far:\n" + "\n".join(notes)) if notes else ""
            questions = self.self_ask(digest, context)
            if not questions:
                logger.info("self-ask produced no questions")
                result = RecallResult(NO_MEMORY_ANSWER, supporting, iteration, "final_answer", rounds)
                return self._finish(result, now)
            bundles = [self.compound_retrieve(q, now) for q in questions]
            rounds.append(bundles)
            for b in bundles:
                for rec in b.surviving:
                    if rec.id not in supporting:
                        supporting.append(rec.id)
            evidence = []
            for b in bundles:
                evidence.append(f"Q: {b.question.text}")
                evidence += [f"  {line}" for line in b.evidence_lines()] or ["  (nothing recalled)"]
            reply = self._ask(
                "cot_answer",
                render("cot_answer", observation=digest, evidence="\n".join(evidence), context=context),
            ).strip()
            if reply.startswith(FINAL_SENTINEL):
                answer = reply[len(FINAL_SENTINEL):].strip()
                return self._finish(RecallResult(answer, supporting, iteration, "final_answer", rounds), now)
            notes.append(reply)
        return self._finish(
            RecallResult(reply, supporting, self.config.max_iterations, "iteration_cap", rounds), now
        )

    def _finish(self, result: RecallResult, now: int) -> RecallResult:
        lambdas = [self.ltm.get(i).importance for i in result.supporting_record_ids]
        salience = max(lambdas) if lambdas else 0.5
        self.put(WorkingMemoryEntry("recall:answer", result.answer, "recall", now, salience))
        if self.config.reconstruct_on_recall and result.terminated_by == "final_answer":
            for rid in result.supporting_record_ids:
                rec = self.ltm.get(rid)
                if rec.kind == "episodic_nl":
                    child = self.reconstruct_memory(rec, result.answer, now)
                    if child is not None:
                        result.reconstructed_ids.append(child.id)
                    break
        return result

    def reconstruct_memory(self, record: MemoryRecord, answer_context: str, now: int) -> MemoryRecord | None:
        if record.kind != "episodic_nl":
            raise ValueError("only natural-language episodic memories can be reconstructed")
        reply = self._ask(
            "reconstruct", render("reconstruct", memory=record.content, context=answer_context)
        ).strip()
        if not reply:
            return None
        rid = self.ltm.store(
            self.character_id,
            "episodic_nl",
            reply,
            importance=record.importance,
            created_at=max(now, record.created_at),
            provenance="reconstructed",
            distortion_count=record.distortion_count + 1,
            parent_id=record.id,
        )
        return self.ltm.get(rid)


def kb_summary(records: Sequence[MemoryRecord]) -> str:
    return "\n".join(f"#{r.id} [{r.kind}] {r.content}" for r in records)
