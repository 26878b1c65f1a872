"""Embedding index over stored candidates, cosine top-k, usefulness labeling.

The index embeds each candidate's retrieval key (table markdown + query) and
is immutable once built. Retrieval is exact brute-force cosine over at most a
few hundred vectors; ties break by ascending candidate id so runs reproduce.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import Agent
from .errors import (
    DimensionMismatch,
    EmptyIndexForKind,
    LrtabError,
    MalformedRecord,
)
from .gateway import EmbedClient
from .learning import ConditionStore, CotExample, PromptCondition
from .prompts import format_retrieved_condition
from .tables import Instance, answer_is_correct, retrieval_key, to_markdown

log = logging.getLogger(__name__)


class CandidateKind(str, Enum):
    CONDITION = "condition"
    EXAMPLE = "example"


@dataclass
class IndexEntry:
    candidate_id: str
    kind: CandidateKind
    vector: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IndexEntry):
            return NotImplemented
        return (
            self.candidate_id == other.candidate_id
            and self.kind == other.kind
            and np.array_equal(self.vector, other.vector)
        )


@dataclass
class EmbeddingIndex:
    dimension: int
    entries: list[IndexEntry]

    def entry_for(self, candidate_id: str) -> IndexEntry:
        for entry in self.entries:
            if entry.candidate_id == candidate_id:
                return entry
        raise KeyError(candidate_id)

    def save(self, path: str | Path) -> None:
        payload = {
            "dimension": self.dimension,
            "entries": [
                {
                    "id": e.candidate_id,
                    "kind": e.kind.value,
                    "vector": [float(v) for v in e.vector],
                }
                for e in self.entries
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"index file {path}: {exc}") from exc
        dimension = payload.get("dimension")
        if not isinstance(dimension, int) or dimension < 1:
            raise MalformedRecord("index dimension must be a positive integer")
        entries: list[IndexEntry] = []
        seen: set[str] = set()
        for obj in payload.get("entries", []):
            vector = np.asarray(obj["vector"], dtype=float)
            if vector.shape != (dimension,):
                raise DimensionMismatch(
                    f"entry {obj.get('id')!r} has dimension {vector.shape}, "
                    f"index says {dimension}"
                )
            candidate_id = obj["id"]
            if candidate_id in seen:
                raise MalformedRecord(f"duplicate index entry {candidate_id!r}")
            seen.add(candidate_id)
            entries.append(
                IndexEntry(
                    candidate_id=candidate_id,
                    kind=CandidateKind(obj["kind"]),
                    vector=vector,
                )
            )
        return cls(dimension=dimension, entries=entries)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


def build_index(store: ConditionStore, embed: EmbedClient) -> EmbeddingIndex:
    """Embed every candidate's retrieval key, conditions first, store order."""
    candidates: list[tuple[str, CandidateKind, str]] = [
        (c.id, CandidateKind.CONDITION, c.retrieval_key) for c in store.conditions
    ] + [(e.id, CandidateKind.EXAMPLE, e.retrieval_key) for e in store.examples]
    if not candidates:
        raise ValueError("store has no candidates to index")
    entries: list[IndexEntry] = []
    dimension: int | None = None
    for candidate_id, kind, key in candidates:
        vector = np.asarray(embed.embed(key), dtype=float)
        if dimension is None:
            dimension = int(vector.shape[0])
        elif vector.shape != (dimension,):
            raise DimensionMismatch(
                f"embedding for {candidate_id!r} has {vector.shape[0]} dimensions, "
                f"expected {dimension}"
            )
        entries.append(IndexEntry(candidate_id=candidate_id, kind=kind, vector=vector))
    assert dimension is not None
    return EmbeddingIndex(dimension=dimension, entries=entries)


def retrieve_topk(
    index: EmbeddingIndex,
    key_vector: np.ndarray,
    k: int,
    kind: CandidateKind,
) -> list[str]:
    """Top-k candidate ids of one kind by cosine, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    pool = [e for e in index.entries if e.kind is kind]
    if not pool:
        raise EmptyIndexForKind(f"index has no {kind.value} entries")
    key_vector = np.asarray(key_vector, dtype=float)
    if key_vector.shape != (index.dimension,):
        raise DimensionMismatch(
            f"query vector has shape {key_vector.shape}, index dimension is "
            f"{index.dimension}"
        )
    scored = sorted(
        ((-cosine(key_vector, e.vector), e.candidate_id) for e in pool)
    )
    return [candidate_id for _, candidate_id in scored[:k]]


def candidate_text(candidate: PromptCondition | CotExample) -> str:
    if isinstance(candidate, PromptCondition):
        return candidate.condition_text
    return candidate.rendered_example


def render_condition_reference(condition: PromptCondition) -> str:
    """The inference-time rendering: source context plus the warning text."""
    return format_retrieved_condition(
        to_markdown(condition.source_table),
        condition.source_query,
        condition.condition_text,
        condition.task,
    )


@dataclass
class UsefulnessLabel:
    query_key: str
    candidate_id: str
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def query_key_hash(query_key: str) -> str:
    return hashlib.sha256(query_key.encode("utf-8")).hexdigest()


def label_validation(
    validation_set: Sequence[Instance],
    store: ConditionStore,
    index: EmbeddingIndex,
    agent: Agent,
    embed: EmbedClient,
    k: int = 2,
    concurrency: int = 1,
) -> list[UsefulnessLabel]:
    """Label retrieved conditions by whether the instance came out correct.

    All k conditions retrieved for one instance share that instance's outcome
    label. Backend failures skip the instance and its labels entirely.
    """

    def process(instance: Instance) -> list[UsefulnessLabel]:
        key = retrieval_key(instance.table, instance.query)
        try:
            vector = np.asarray(embed.embed(key), dtype=float)
            ids = retrieve_topk(index, vector, k, CandidateKind.CONDITION)
            rendered = tuple(
                render_condition_reference(store.candidate(cid)) for cid in ids
            )
            trace = agent.run(instance, conditions=rendered)
        except EmptyIndexForKind:
            raise
        except LrtabError as exc:
            log.warning("validation instance %s skipped: %s", instance.id, exc)
            return []
        outcome = int(
            answer_is_correct(trace.answer, instance.answer, instance.task)
        )
        return [
            UsefulnessLabel(query_key=key, candidate_id=cid, label=outcome)
            for cid in ids
        ]

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            per_instance = list(pool.map(process, validation_set))
    else:
        per_instance = [process(instance) for instance in validation_set]
    return [label for labels in per_instance for label in labels]


@dataclass
class PairRecord:
    """One (query key, candidate text) scoring pair with its label."""

    query: str
    candidate: str
    candidate_id: str
    label: int


def save_labels(labels: Sequence[UsefulnessLabel], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(
                json.dumps(
                    {
                        "query_key_hash": query_key_hash(label.query_key),
                        "candidate_id": label.candidate_id,
                        "label": label.label,
                    }
                )
                + "\n"
            )


def save_pairs(
    labels: Sequence[UsefulnessLabel], store: ConditionStore, path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(
                json.dumps(
                    {
                        "query": label.query_key,
                        "candidate": candidate_text(store.candidate(label.candidate_id)),
                        "candidate_id": label.candidate_id,
                        "label": label.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_pairs(path: str | Path) -> list[PairRecord]:
    pairs: list[PairRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = PairRecord(
                    query=obj["query"],
                    candidate=obj["candidate"],
                    candidate_id=obj["candidate_id"],
                    label=int(obj["label"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(f"pairs line {lineno}: {exc}") from exc
            if record.label not in (0, 1):
                raise MalformedRecord(f"pairs line {lineno}: label must be 0 or 1")
            pairs.append(record)
    return pairs
