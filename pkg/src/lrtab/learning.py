"""Training phase: turn agent failures into validated prompt conditions.

Each training instance is answered once by the agent. Correct chains of
thought are kept as examples. For wrong answers a correction call proposes a
condition, which is kept only if re-running the instance with the condition
injected produces the right answer. The store is an append-only JSONL file
with a trailing meta line; a sidecar checkpoint makes long runs resumable.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .agent import Agent, AgentTrace, StepKind
from .errors import (
    CheckpointCorrupt,
    LrtabError,
    MalformedCondition,
    MalformedRecord,
)
from .gateway import ChatClient
from .prompts import PromptSlots, build_prompt, prompt_kind_for
from .tables import (
    Instance,
    Table,
    TaskKind,
    answer_is_correct,
    dataset_fingerprint,
    normalize_answer,
    retrieval_key,
    to_markdown,
)

log = logging.getLogger(__name__)

STORE_VERSION = 1


class ExampleOrigin(str, Enum):
    INITIALLY_CORRECT = "initially_correct"
    CORRECTED = "corrected"


@dataclass
class PromptCondition:
    id: str
    condition_text: str
    source_instance_id: str
    source_table: Table
    source_query: str
    task: TaskKind
    corrected_trace: AgentTrace
    retrieval_key: str

    def to_json_obj(self) -> dict:
        return {
            "kind": "condition",
            "id": self.id,
            "condition_text": self.condition_text,
            "source_instance_id": self.source_instance_id,
            "source_table": {
                "title": self.source_table.title,
                "columns": list(self.source_table.columns),
                "rows": [list(r) for r in self.source_table.rows],
            },
            "source_query": self.source_query,
            "task": self.task.value,
            "corrected_trace": self.corrected_trace.to_json_obj(),
            "retrieval_key": self.retrieval_key,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PromptCondition":
        table = obj["source_table"]
        return cls(
            id=obj["id"],
            condition_text=obj["condition_text"],
            source_instance_id=obj["source_instance_id"],
            source_table=Table(
                title=table.get("title", ""),
                columns=list(table["columns"]),
                rows=[list(r) for r in table["rows"]],
            ),
            source_query=obj["source_query"],
            task=TaskKind(obj["task"]),
            corrected_trace=AgentTrace.from_json_obj(obj["corrected_trace"]),
            retrieval_key=obj["retrieval_key"],
        )


@dataclass
class CotExample:
    id: str
    source_instance_id: str
    task: TaskKind
    rendered_example: str
    retrieval_key: str
    origin: ExampleOrigin

    def to_json_obj(self) -> dict:
        return {
            "kind": "example",
            "id": self.id,
            "source_instance_id": self.source_instance_id,
            "task": self.task.value,
            "rendered_example": self.rendered_example,
            "retrieval_key": self.retrieval_key,
            "origin": self.origin.value,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CotExample":
        return cls(
            id=obj["id"],
            source_instance_id=obj["source_instance_id"],
            task=TaskKind(obj["task"]),
            rendered_example=obj["rendered_example"],
            retrieval_key=obj["retrieval_key"],
            origin=ExampleOrigin(obj["origin"]),
        )


@dataclass
class LearnStats:
    processed: int = 0
    initially_correct: int = 0
    corrected: int = 0
    uncorrected: int = 0
    malformed_conditions: int = 0
    leaked_conditions: int = 0
    failed: int = 0

    def to_dict(self) -> dict:
        return {
            "processed": self.processed,
            "initially_correct": self.initially_correct,
            "corrected": self.corrected,
            "uncorrected": self.uncorrected,
            "malformed_conditions": self.malformed_conditions,
            "leaked_conditions": self.leaked_conditions,
            "failed": self.failed,
        }


@dataclass
class ConditionStore:
    conditions: list[PromptCondition] = field(default_factory=list)
    examples: list[CotExample] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def candidate(self, candidate_id: str) -> PromptCondition | CotExample:
        for condition in self.conditions:
            if condition.id == candidate_id:
                return condition
        for example in self.examples:
            if example.id == candidate_id:
                return example
        raise KeyError(candidate_id)


def render_trace(trace: AgentTrace) -> str:
    """Transcript form used for correction prompts and stored examples."""
    parts: list[str] = []
    for step in trace.steps:
        if step.kind is StepKind.THOUGHT:
            parts.append(step.content)
        elif step.kind is StepKind.ACTION_INPUT:
            code = step.content if step.content.endswith("\n") else step.content + "\n"
            parts.append(f"Action Input:\n```python\n{code}```")
        elif step.kind is StepKind.OBSERVATION:
            parts.append(f"Observation:\n{step.content}")
        else:
            parts.append(f"```json\n{step.content}\n```")
    return "\n\n".join(parts)


def render_cot_example(table: Table, trace: AgentTrace) -> str:
    return to_markdown(table) + "\n\n" + render_trace(trace)


def parse_condition(llm_output: str) -> str:
    """Pull the "Condition" value out of the first JSON object that has one."""
    decoder = json.JSONDecoder()
    for start, ch in enumerate(llm_output):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(llm_output[start:])
        except ValueError:
            continue
        if isinstance(obj, dict) and "Condition" in obj:
            value = obj["Condition"]
            if not isinstance(value, str) or not value.strip():
                raise MalformedCondition(
                    f"condition value must be non-empty text, got {value!r}"
                )
            return value.strip()
    raise MalformedCondition("no JSON object with a Condition key found")


def leakage_check(condition_text: str, gold_answer: str) -> bool:
    """True means reject: the condition mentions the gold answer."""
    gold = normalize_answer(gold_answer)
    if len(gold) < 3:
        return False
    return gold in normalize_answer(condition_text)


def gold_answer_text(instance: Instance) -> str:
    if instance.task is TaskKind.FACT:
        return "True" if instance.answer == "true" else "False"
    return instance.answer


class Corrector:
    """Asks the correction template for a condition and parses it."""

    def __init__(self, chat: ChatClient) -> None:
        self.chat = chat

    def propose(self, instance: Instance, trace: AgentTrace) -> str:
        slots = PromptSlots(
            title=instance.table.title,
            table_markdown=to_markdown(instance.table),
            query=instance.query,
            previous_cot=render_trace(trace),
            gold_answer=gold_answer_text(instance),
        )
        prompt = build_prompt(prompt_kind_for(instance.task, "correction"), slots)
        response = self.chat.complete([{"role": "user", "content": prompt}])
        return parse_condition(response)


@dataclass
class _Outcome:
    kind: str
    condition: PromptCondition | None = None
    example: CotExample | None = None


def _process_instance(instance: Instance, agent: Agent, corrector: Corrector) -> _Outcome:
    key = retrieval_key(instance.table, instance.query)
    try:
        trace = agent.run(instance)
    except LrtabError as exc:
        log.warning("instance %s skipped: %s", instance.id, exc)
        return _Outcome("failed")
    if answer_is_correct(trace.answer, instance.answer, instance.task):
        example = CotExample(
            id=f"ex-{instance.id}",
            source_instance_id=instance.id,
            task=instance.task,
            rendered_example=render_cot_example(instance.table, trace),
            retrieval_key=key,
            origin=ExampleOrigin.INITIALLY_CORRECT,
        )
        return _Outcome("initially_correct", example=example)
    try:
        condition_text = corrector.propose(instance, trace)
    except MalformedCondition as exc:
        log.info("instance %s: correction unparseable (%s)", instance.id, exc)
        return _Outcome("malformed_conditions")
    except LrtabError as exc:
        log.warning("instance %s skipped during correction: %s", instance.id, exc)
        return _Outcome("failed")
    if instance.task is TaskKind.QA and leakage_check(condition_text, instance.answer):
        log.info(
            "instance %s: condition leaks the gold answer: %r",
            instance.id,
            condition_text,
        )
        return _Outcome("leaked_conditions")
    try:
        retry = agent.run(instance, conditions=(condition_text,))
    except LrtabError as exc:
        log.warning("instance %s skipped during retry: %s", instance.id, exc)
        return _Outcome("failed")
    if not answer_is_correct(retry.answer, instance.answer, instance.task):
        log.info(
            "instance %s: condition did not fix the failure: %r",
            instance.id,
            condition_text,
        )
        return _Outcome("uncorrected")
    condition = PromptCondition(
        id=f"cond-{instance.id}",
        condition_text=condition_text,
        source_instance_id=instance.id,
        source_table=instance.table,
        source_query=instance.query,
        task=instance.task,
        corrected_trace=retry,
        retrieval_key=key,
    )
    example = CotExample(
        id=f"ex-{instance.id}",
        source_instance_id=instance.id,
        task=instance.task,
        rendered_example=render_cot_example(instance.table, retry),
        retrieval_key=key,
        origin=ExampleOrigin.CORRECTED,
    )
    return _Outcome("corrected", condition=condition, example=example)


def _read_checkpoint(path: Path) -> dict:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("version") != STORE_VERSION:
        raise CheckpointCorrupt(f"checkpoint {path} has an unsupported layout")
    for key in ("dataset_fingerprint", "processed", "store_lines", "stats"):
        if key not in obj:
            raise CheckpointCorrupt(f"checkpoint {path} is missing {key!r}")
    return obj


def _write_checkpoint(path: Path, fingerprint: str, processed: int, store_lines: int, stats: LearnStats) -> None:
    payload = {
        "version": STORE_VERSION,
        "dataset_fingerprint": fingerprint,
        "processed": processed,
        "store_lines": store_lines,
        "stats": stats.to_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _truncate_jsonl(path: Path, keep_lines: int) -> None:
    if not path.exists():
        if keep_lines == 0:
            path.write_text("", encoding="utf-8")
            return
        raise CheckpointCorrupt(f"store {path} is missing but checkpoint expects it")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if len(lines) < keep_lines:
        raise CheckpointCorrupt(
            f"store {path} has {len(lines)} lines, checkpoint expects {keep_lines}"
        )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("".join(lines[:keep_lines]), encoding="utf-8")
    os.replace(tmp, path)


def _record_from_line(lineno: int, line: str) -> PromptCondition | CotExample | dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"store line {lineno}: {exc}") from exc
    kind = obj.get("kind") if isinstance(obj, dict) else None
    try:
        if kind == "condition":
            return PromptCondition.from_json_obj(obj)
        if kind == "example":
            return CotExample.from_json_obj(obj)
        if kind == "meta":
            return obj
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"store line {lineno}: {exc}") from exc
    raise MalformedRecord(f"store line {lineno}: unknown record kind {kind!r}")


def load_store(path: str | Path) -> ConditionStore:
    store = ConditionStore()
    seen: set[str] = set()
    saw_meta = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if saw_meta:
                raise MalformedRecord(f"store line {lineno}: records after the meta line")
            record = _record_from_line(lineno, line)
            if isinstance(record, dict):
                store.meta = {k: v for k, v in record.items() if k != "kind"}
                saw_meta = True
                continue
            if record.id in seen:
                raise MalformedRecord(f"store line {lineno}: duplicate id {record.id!r}")
            seen.add(record.id)
            if isinstance(record, PromptCondition):
                store.conditions.append(record)
            else:
                store.examples.append(record)
    return store


def save_store(store: ConditionStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for condition in store.conditions:
            fh.write(json.dumps(condition.to_json_obj(), ensure_ascii=False) + "\n")
        for example in store.examples:
            fh.write(json.dumps(example.to_json_obj(), ensure_ascii=False) + "\n")
        if store.meta:
            fh.write(json.dumps({"kind": "meta", **store.meta}, ensure_ascii=False) + "\n")


def replay_condition(condition: PromptCondition, instance: Instance, agent: Agent) -> bool:
    """Re-run a stored condition's source instance with the condition injected."""
    if instance.id != condition.source_instance_id:
        raise ValueError(
            f"instance {instance.id!r} is not the source of {condition.id!r}"
        )
    trace = agent.run(instance, conditions=(condition.condition_text,))
    return answer_is_correct(trace.answer, instance.answer, instance.task)


def learn(
    training_set: Sequence[Instance],
    agent: Agent,
    corrector: Corrector,
    store_path: str | Path,
    *,
    limit: int | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 25,
    concurrency: int = 1,
    dataset_name: str = "",
    model_name: str = "",
    run_stamp: str = "",
) -> ConditionStore:
    """Run the training phase over at most the first `limit` instances.

    The store file is written incrementally; the checkpoint records how far
    the run got so an interrupted run resumes where it left off. run_stamp
    fills the meta line's created_at field and defaults to empty so repeated
    runs produce identical bytes.
    """
    if checkpoint_every < 1:
        raise ValueError("checkpoint_every must be at least 1")
    if concurrency < 1:
        raise ValueError("concurrency must be at least 1")
    instances = list(training_set)
    if limit is not None:
        instances = instances[: max(limit, 0)]
    store_path = Path(store_path)
    ckpt_path = (
        Path(checkpoint_path)
        if checkpoint_path is not None
        else store_path.with_name(store_path.name + ".ckpt")
    )
    fingerprint = dataset_fingerprint(instances)

    stats = LearnStats()
    start = 0
    if ckpt_path.exists():
        ckpt = _read_checkpoint(ckpt_path)
        if ckpt["dataset_fingerprint"] != fingerprint:
            raise CheckpointCorrupt(
                "checkpoint belongs to a different dataset or limit"
            )
        _truncate_jsonl(store_path, int(ckpt["store_lines"]))
        start = int(ckpt["processed"])
        stats = LearnStats(**ckpt["stats"])
        log.info("resuming from checkpoint: %d/%d processed", start, len(instances))
    else:
        store_path.write_text("", encoding="utf-8")

    loaded = load_store(store_path)
    conditions = loaded.conditions
    examples = loaded.examples
    store_lines = len(conditions) + len(examples)

    def process(instance: Instance) -> _Outcome:
        return _process_instance(instance, agent, corrector)

    pool = ThreadPoolExecutor(max_workers=concurrency) if concurrency > 1 else None
    try:
        index = start
        while index < len(instances):
            chunk = instances[index : index + checkpoint_every]
            if pool is not None:
                outcomes = list(pool.map(process, chunk))
            else:
                outcomes = [process(instance) for instance in chunk]
            with open(store_path, "a", encoding="utf-8") as fh:
                for outcome in outcomes:
                    stats.processed += 1
                    setattr(stats, outcome.kind, getattr(stats, outcome.kind) + 1)
                    if outcome.condition is not None:
                        conditions.append(outcome.condition)
                        fh.write(
                            json.dumps(
                                outcome.condition.to_json_obj(), ensure_ascii=False
                            )
                            + "\n"
                        )
                        store_lines += 1
                    if outcome.example is not None:
                        examples.append(outcome.example)
                        fh.write(
                            json.dumps(
                                outcome.example.to_json_obj(), ensure_ascii=False
                            )
                            + "\n"
                        )
                        store_lines += 1
            index += len(chunk)
            _write_checkpoint(ckpt_path, fingerprint, index, store_lines, stats)
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)

    meta = {
        "dataset": dataset_name,
        "model": model_name,
        "created_at": run_stamp,
        "counts": {
            **stats.to_dict(),
            "conditions": len(conditions),
            "examples": len(examples),
        },
    }
    with open(store_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "meta", **meta}, ensure_ascii=False) + "\n")
    return ConditionStore(conditions=conditions, examples=examples, meta=meta)
