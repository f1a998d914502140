"""Long-term episodic memory store.

Records are append-only. Retrieval goes through three exact indexes (vector,
keyword, question/answer) and forgetting is applied to retrieval results with
the power-law decay

    sigma = alpha * importance * retrievals * (1 + beta * elapsed) ** -psi

clamped to [0, 1], where ``elapsed`` is the number of ticks since the record
was last retrieved.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import struct
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CorruptSnapshot, InvalidRecord, IoFailure, ParseError, UnknownId
from .logicql import parse_program

logger = logging.getLogger(__name__)

EMBED_DIM = 256
KINDS = ("episodic_nl", "episodic_qa", "semantic_fact")
PROVENANCES = ("observed", "reflected", "reconstructed")
SNAPSHOT_MAGIC = "LARP-LTM"
SNAPSHOT_VERSION = 1


# ---------------------------------------------------------------------------
# embedding


def _trigrams(text: str) -> list[str]:
    if len(text) < 3:
        return [text]
    return [text[i : i + 3] for i in range(len(text) - 2)]


def _bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def embed(text: str, dim: int = EMBED_DIM) -> tuple[float, ...]:
    """Hashed character-trigram bag of the lowercased text, L2-normalised."""
    if not text or not text.strip():
        return (0.0,) * dim
    counts = [0.0] * dim
    for gram in _trigrams(text.lower()):
        counts[_bucket(gram, dim)] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    return tuple(c / norm for c in counts)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


Embedder = Callable[[str], Sequence[float]]


# ---------------------------------------------------------------------------
# records and decay


@dataclass
class MemoryRecord:
    id: int
    character_id: str
    kind: str
    content: str
    embedding: tuple[float, ...]
    importance: float = 0.5
    question: str | None = None
    retrieval_count: int = 0
    created_at: int = 0
    last_retrieved_at: int = 0
    provenance: str = "observed"
    distortion_count: int = 0
    parent_id: int | None = None

    @property
    def key_text(self) -> str:
        return self.question if self.kind == "episodic_qa" else self.content


@dataclass(frozen=True)
class DecayParams:
    alpha: float = 1.0
    beta: float = 0.1
    psi: float = 1.0
    retrieval_mode: str = "deterministic_threshold"
    threshold: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "psi", "threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0 or self.psi < 0:
            raise ValueError("beta and psi must be >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.retrieval_mode not in ("deterministic_threshold", "stochastic"):
            raise ValueError(f"unknown retrieval mode {self.retrieval_mode!r}")


def decay_probability(record: MemoryRecord, now: int, params: DecayParams) -> float:
    elapsed = now - record.last_retrieved_at
    if elapsed < 0:
        raise ValueError("now precedes the record's last retrieval")
    if record.retrieval_count == 0:
        return 0.0
    raw = (
        params.alpha
        * record.importance
        * record.retrieval_count
        * (1.0 + params.beta * elapsed) ** (-params.psi)
    )
    return min(1.0, max(0.0, raw))


def forget_filter(
    records: Iterable,
    now: int,
    params: DecayParams,
    rng: random.Random | None = None,
) -> list:
    """Drop forgotten records, keeping input order.

    Accepts bare records or ``(record, score)`` pairs.
    """
    if params.retrieval_mode == "stochastic" and rng is None:
        rng = random.Random(params.rng_seed)
    kept = []
    for item in records:
        rec = item[0] if isinstance(item, tuple) else item
        sigma = decay_probability(rec, now, params)
        if params.retrieval_mode == "deterministic_threshold":
            forgotten = sigma >= params.threshold
        else:
            forgotten = rng.random() < sigma
        if not forgotten:
            kept.append(item)
    return kept


SCORE_DECIMALS = 12


def _rank_key(score: float, rec: MemoryRecord):
    return (-score, -rec.created_at, rec.id)


# ---------------------------------------------------------------------------
# store


class LongTermMemory:
    """Append-only memory records for one or more characters."""

    def __init__(self, dim: int = EMBED_DIM, embedder: Embedder | None = None):
        self.dim = dim
        self.embedder: Embedder = embedder or (lambda text: embed(text, dim))
        self.records: list[MemoryRecord] = []
        self._by_id: dict[int, MemoryRecord] = {}
        self.next_id = 1
        self._matrix: np.ndarray | None = None
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: int) -> MemoryRecord:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise UnknownId(f"no memory record with id {record_id}") from None

    def store(
        self,
        character_id: str,
        kind: str,
        content: str,
        *,
        question: str | None = None,
        importance: float = 0.5,
        created_at: int = 0,
        provenance: str = "observed",
        distortion_count: int = 0,
        parent_id: int | None = None,
    ) -> int:
        if not character_id:
            raise InvalidRecord("character_id must be non-empty")
        if kind not in KINDS:
            raise InvalidRecord(f"unknown record kind {kind!r}")
        if provenance not in PROVENANCES:
            raise InvalidRecord(f"unknown provenance {provenance!r}")
        if not 0.0 <= importance <= 1.0:
            raise InvalidRecord("importance must lie in [0, 1]")
        if created_at < 0:
            raise InvalidRecord("created_at must be >= 0")
        if (distortion_count > 0) != (provenance == "reconstructed"):
            raise InvalidRecord("distortion_count > 0 exactly when provenance is reconstructed")
        if (parent_id is not None) != (provenance == "reconstructed"):
            raise InvalidRecord("parent_id is set exactly when provenance is reconstructed")
        if kind == "episodic_qa":
            if not question:
                raise InvalidRecord("episodic_qa records need a question")
        elif question is not None:
            raise InvalidRecord("only episodic_qa records carry a question")
        if kind == "semantic_fact":
            try:
                parse_program(content)
            except ParseError as exc:
                raise InvalidRecord(f"semantic fact does not parse: {exc}") from None
        with self._lock:
            if parent_id is not None:
                self.get(parent_id)
            key = question if kind == "episodic_qa" else content
            vec = tuple(float(x) for x in self.embedder(key))
            rec = MemoryRecord(
                id=self.next_id,
                character_id=character_id,
                kind=kind,
                content=content,
                question=question,
                embedding=vec,
                importance=float(importance),
                created_at=created_at,
                last_retrieved_at=created_at,
                provenance=provenance,
                distortion_count=distortion_count,
                parent_id=parent_id,
            )
            self._append(rec)
            return rec.id

    def _append(self, rec: MemoryRecord) -> None:
        self.records.append(rec)
        self._by_id[rec.id] = rec
        self.next_id = max(self.next_id, rec.id + 1)
        self._matrix = None

    def touch(self, record_id: int, now: int) -> MemoryRecord:
        with self._lock:
            rec = self.get(record_id)
            if now < rec.last_retrieved_at:
                raise ValueError("touch time precedes last retrieval")
            rec.retrieval_count += 1
            rec.last_retrieved_at = now
            return rec

    # -- retrieval ----------------------------------------------------------

    def _embedding_matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self.records):
            if self.records:
                self._matrix = np.array([r.embedding for r in self.records], dtype=np.float64)
            else:
                self._matrix = np.zeros((0, self.dim))
        return self._matrix

    def vector_search(
        self,
        query: Sequence[float],
        character_id: str,
        kinds: Iterable[str] = ("episodic_nl", "episodic_qa"),
        k: int = 5,
    ) -> list[tuple[MemoryRecord, float]]:
        if k < 0:
            raise ValueError("k must be >= 0")
        q = np.asarray(query, dtype=np.float64)
        qn = float(np.linalg.norm(q))
        if k == 0 or qn == 0.0 or not self.records:
            return []
        kinds = set(kinds)
        mat = self._embedding_matrix()
        norms = np.linalg.norm(mat, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = (mat @ q) / (norms * qn)
        hits = [
            # quantised so mathematically equal cosines tie exactly and fall back to recency
            (rec, round(float(sims[i]), SCORE_DECIMALS))
            for i, rec in enumerate(self.records)
            if rec.character_id == character_id and rec.kind in kinds and norms[i] > 0.0
        ]
        hits.sort(key=lambda h: _rank_key(h[1], h[0]))
        return hits[:k]

    def keyword_search(
        self, keywords: Iterable[str], character_id: str, k: int = 5
    ) -> list[tuple[MemoryRecord, int]]:
        terms = []
        for kw in keywords:
            kw = kw.strip().lower()
            if kw and kw not in terms:
                terms.append(kw)
        if not terms or k <= 0:
            return []
        patterns = [re.compile(rf"(?<!\w){re.escape(t)}(?!\w)", re.IGNORECASE) for t in terms]
        hits = []
        for rec in self.records:
            if rec.character_id != character_id or rec.kind != "episodic_nl":
                continue
            score = sum(1 for p in patterns if p.search(rec.content))
            if score:
                hits.append((rec, score))
        hits.sort(key=lambda h: _rank_key(h[1], h[0]))
        return hits[:k]

    def qa_search(self, question: str, character_id: str, k: int = 5) -> list[tuple[MemoryRecord, float]]:
        return self.vector_search(self.embedder(question), character_id, ("episodic_qa",), k)

    def for_character(self, character_id: str) -> list[MemoryRecord]:
        return [r for r in self.records if r.character_id == character_id]

    # -- persistence ----------------------------------------------------------

    def dumps(self) -> str:
        body = [_record_line(r) for r in self.records]
        digest = hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest()
        header = (
            f"{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION} dim={self.dim} "
            f"records={len(body)} next_id={self.next_id} sha256={digest}"
        )
        return "\n".join([header, *body]) + "\n"

    @classmethod
    def loads(cls, text: str, embedder: Embedder | None = None) -> "LongTermMemory":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise CorruptSnapshot("empty snapshot file")
        m = re.fullmatch(
            rf"{SNAPSHOT_MAGIC} v(\d+) dim=(\d+) records=(\d+) next_id=(\d+) sha256=([0-9a-f]{{64}})",
            lines[0],
        )
        if not m:
            raise CorruptSnapshot("missing or malformed snapshot header")
        version, dim, count, next_id, digest = m.groups()
        if int(version) != SNAPSHOT_VERSION:
            raise CorruptSnapshot(
                f"snapshot version {version} does not match supported version {SNAPSHOT_VERSION}"
            )
        body = lines[1:]
        if len(body) != int(count):
            raise CorruptSnapshot(f"expected {count} records, found {len(body)}")
        if hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest() != digest:
            raise CorruptSnapshot("checksum mismatch")
        store = cls(dim=int(dim), embedder=embedder)
        for line in body:
            store._append(_parse_record_line(line, int(dim)))
        store.next_id = int(next_id)
        return store

    def save(self, path: str | os.PathLike) -> None:
        try:
            Path(path).write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike, embedder: Embedder | None = None) -> "LongTermMemory":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return cls.loads(text, embedder)


def _hex_vector(vec: Sequence[float]) -> str:
    return "".join(struct.pack(">d", x).hex() for x in vec)


def _unhex_vector(text: str, dim: int) -> tuple[float, ...]:
    if len(text) != 16 * dim:
        raise CorruptSnapshot("embedding has the wrong width")
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise CorruptSnapshot("embedding is not hexadecimal") from None
    return struct.unpack(f">{dim}d", raw)


def _record_line(rec: MemoryRecord) -> str:
    fields = asdict(rec)
    fields["embedding"] = _hex_vector(rec.embedding)
    return json.dumps(fields, ensure_ascii=False, sort_keys=True)


_FIELDS = {f for f in MemoryRecord.__dataclass_fields__}


def _parse_record_line(line: str, dim: int) -> MemoryRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        raise CorruptSnapshot("record line is not valid") from None
    if not isinstance(obj, dict) or set(obj) != _FIELDS:
        raise CorruptSnapshot("record line has unexpected fields")
    obj["embedding"] = _unhex_vector(obj["embedding"], dim)
    return MemoryRecord(**obj)


def records_equal(a: MemoryRecord, b: MemoryRecord) -> bool:
    """Field-by-field equality, comparing floats by bit pattern."""
    return _record_line(a) == _record_line(b)
