"""Inference over a test set and scoring of the resulting predictions.

Each instance retrieves conditions, optionally reranks them, injects the top
few plus one worked example into the agent prompt, and records a prediction.
With retrieval fully disabled the agent sees exactly the bare prompt, so
ablation runs reproduce the no-augmentation traces byte for byte.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import Agent, AgentMode, AgentTrace
from .errors import EmptyIndexForKind, LrtabError, MalformedRecord, MissingGold
from .gateway import EmbedClient
from .learning import ConditionStore, ExampleOrigin
from .reranking import Passthrough, Reranker, rerank
from .retrieval import (
    CandidateKind,
    EmbeddingIndex,
    render_condition_reference,
    retrieve_topk,
)
from .tables import (
    Instance,
    LengthBucket,
    answer_is_correct,
    bucket_for,
    retrieval_key,
)

log = logging.getLogger(__name__)

ALL_ORIGINS = (ExampleOrigin.INITIALLY_CORRECT, ExampleOrigin.CORRECTED)


@dataclass
class InferenceParams:
    k_retrieve: int = 8
    n_conditions: int = 2
    n_examples: int = 1
    mode: AgentMode = AgentMode.FLEXIBLE
    example_origins: tuple[ExampleOrigin, ...] = ALL_ORIGINS

    def snapshot(self) -> dict:
        return {
            "k_retrieve": self.k_retrieve,
            "n_conditions": self.n_conditions,
            "n_examples": self.n_examples,
            "mode": self.mode.value,
            "example_origins": [origin.value for origin in self.example_origins],
        }


@dataclass
class Prediction:
    instance_id: str
    predicted: str | None
    trace_ref: str | None
    used_conditions: list[str]
    used_example: str | None
    bucket: LengthBucket
    code_calls: int = 0
    error: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "id": self.instance_id,
            "predicted": self.predicted,
            "trace_ref": self.trace_ref,
            "used_conditions": self.used_conditions,
            "used_example": self.used_example,
            "bucket": self.bucket.value,
            "code_calls": self.code_calls,
            "error": self.error,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Prediction":
        return cls(
            instance_id=obj["id"],
            predicted=obj["predicted"],
            trace_ref=obj.get("trace_ref"),
            used_conditions=list(obj.get("used_conditions", [])),
            used_example=obj.get("used_example"),
            bucket=LengthBucket(obj["bucket"]),
            code_calls=int(obj.get("code_calls", 0)),
            error=obj.get("error"),
        )


def _select_conditions(
    key: str,
    vector: np.ndarray,
    store: ConditionStore,
    index: EmbeddingIndex,
    reranker: Reranker,
    params: InferenceParams,
) -> list[str]:
    ids = retrieve_topk(index, vector, params.k_retrieve, CandidateKind.CONDITION)
    ordered = rerank(
        key, ids, reranker, index=index, store=store, key_vector=vector
    )
    return ordered[: params.n_conditions]


def _select_examples(
    vector: np.ndarray,
    store: ConditionStore,
    index: EmbeddingIndex,
    params: InferenceParams,
) -> list[str]:
    # Examples keep plain encoder order; the reranker only reorders conditions.
    ids = retrieve_topk(index, vector, len(index.entries), CandidateKind.EXAMPLE)
    eligible = [
        cid for cid in ids if store.candidate(cid).origin in params.example_origins
    ]
    return eligible[: params.n_examples]


def run_inference(
    test_set: Sequence[Instance],
    agent: Agent,
    *,
    store: ConditionStore | None = None,
    index: EmbeddingIndex | None = None,
    embed: EmbedClient | None = None,
    reranker: Reranker | None = None,
    params: InferenceParams | None = None,
    traces_path: str | Path | None = None,
    concurrency: int = 1,
) -> list[Prediction]:
    """Predict every instance; failures become unanswered predictions."""
    params = params or InferenceParams()
    reranker = reranker or Passthrough()
    augmenting = params.n_conditions > 0 or params.n_examples > 0
    if augmenting:
        if store is None or index is None or embed is None:
            raise ValueError("augmented inference needs store, index, and embed")
        kinds = {entry.kind for entry in index.entries}
        if params.n_conditions > 0 and CandidateKind.CONDITION not in kinds:
            raise EmptyIndexForKind("index has no condition entries")
        if params.n_examples > 0 and CandidateKind.EXAMPLE not in kinds:
            raise EmptyIndexForKind("index has no example entries")

    trace_file = Path(traces_path) if traces_path is not None else None

    def process(instance: Instance) -> tuple[Prediction, AgentTrace | None]:
        bucket = bucket_for(instance.table)
        used_conditions: list[str] = []
        used_examples: list[str] = []
        try:
            conditions: tuple[str, ...] = ()
            example_text: str | None = None
            if augmenting:
                key = retrieval_key(instance.table, instance.query)
                vector = np.asarray(embed.embed(key), dtype=float)
                if params.n_conditions > 0:
                    used_conditions = _select_conditions(
                        key, vector, store, index, reranker, params
                    )
                    conditions = tuple(
                        render_condition_reference(store.candidate(cid))
                        for cid in used_conditions
                    )
                if params.n_examples > 0:
                    used_examples = _select_examples(vector, store, index, params)
                    if used_examples:
                        example_text = "\n\n".join(
                            store.candidate(cid).rendered_example
                            for cid in used_examples
                        )
            trace = agent.run(instance, conditions=conditions, example=example_text)
        except LrtabError as exc:
            log.warning("inference on %s failed: %s", instance.id, exc)
            prediction = Prediction(
                instance_id=instance.id,
                predicted=None,
                trace_ref=None,
                used_conditions=used_conditions,
                used_example=used_examples[0] if used_examples else None,
                bucket=bucket,
                code_calls=0,
                error=str(exc),
            )
            return prediction, None
        trace_ref = (
            f"{trace_file.name}#{instance.id}" if trace_file is not None else None
        )
        prediction = Prediction(
            instance_id=instance.id,
            predicted=trace.answer,
            trace_ref=trace_ref,
            used_conditions=used_conditions,
            used_example=used_examples[0] if used_examples else None,
            bucket=bucket,
            code_calls=trace.code_calls,
            error=None,
        )
        return prediction, trace

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(process, test_set))
    else:
        outcomes = [process(instance) for instance in test_set]

    if trace_file is not None:
        with open(trace_file, "w", encoding="utf-8") as fh:
            for _, trace in outcomes:
                if trace is not None:
                    fh.write(json.dumps(trace.to_json_obj(), ensure_ascii=False) + "\n")
    return [prediction for prediction, _ in outcomes]


def save_predictions(predictions: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for prediction in predictions:
            fh.write(json.dumps(prediction.to_json_obj(), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[Prediction]:
    predictions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                predictions.append(Prediction.from_json_obj(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(f"predictions line {lineno}: {exc}") from exc
    return predictions


@dataclass
class BucketStats:
    n: int
    accuracy: float | None


@dataclass
class EvalReport:
    overall_accuracy: float | None
    per_bucket: dict[str, BucketStats]
    mean_code_calls: float | None
    unanswered_count: int
    config_snapshot: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_bucket": {
                name: {"n": stats.n, "accuracy": stats.accuracy}
                for name, stats in self.per_bucket.items()
            },
            "mean_code_calls": self.mean_code_calls,
            "unanswered_count": self.unanswered_count,
            "config_snapshot": self.config_snapshot,
        }


def score(
    predictions: Sequence[Prediction],
    gold: Sequence[Instance],
    config_snapshot: dict | None = None,
) -> EvalReport:
    """Exact-match accuracy against gold; ids must match one to one."""
    gold_by_id = {instance.id: instance for instance in gold}
    if len(gold_by_id) != len(gold):
        raise MissingGold("gold set has duplicate ids")
    predicted_ids = [prediction.instance_id for prediction in predictions]
    if len(set(predicted_ids)) != len(predicted_ids):
        raise MissingGold("predictions have duplicate ids")
    missing = [pid for pid in predicted_ids if pid not in gold_by_id]
    if missing:
        raise MissingGold(f"no gold answers for: {', '.join(sorted(missing))}")
    unpredicted = sorted(set(gold_by_id) - set(predicted_ids))
    if unpredicted:
        raise MissingGold(f"no predictions for: {', '.join(unpredicted)}")

    counts = {bucket: 0 for bucket in LengthBucket}
    hits = {bucket: 0 for bucket in LengthBucket}
    correct_total = 0
    unanswered = 0
    for prediction in predictions:
        instance = gold_by_id[prediction.instance_id]
        bucket = bucket_for(instance.table)
        counts[bucket] += 1
        if prediction.predicted is None:
            unanswered += 1
            continue
        if answer_is_correct(prediction.predicted, instance.answer, instance.task):
            hits[bucket] += 1
            correct_total += 1

    total = len(predictions)
    per_bucket = {
        bucket.value: BucketStats(
            n=counts[bucket],
            accuracy=hits[bucket] / counts[bucket] if counts[bucket] else None,
        )
        for bucket in LengthBucket
    }
    return EvalReport(
        overall_accuracy=correct_total / total if total else None,
        per_bucket=per_bucket,
        mean_code_calls=(
            sum(prediction.code_calls for prediction in predictions) / total
            if total
            else None
        ),
        unanswered_count=unanswered,
        config_snapshot=config_snapshot or {},
    )


def _fmt(value: float | None, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def render_report(report: EvalReport, fmt: str = "text") -> str:
    """Render as plain text, a json document, or a markdown table."""
    if fmt == "json":
        return json.dumps(report.to_json_obj(), indent=2, sort_keys=True) + "\n"
    if fmt == "text":
        lines = [
            f"overall_accuracy: {_fmt(report.overall_accuracy)}",
            f"mean_code_calls: {_fmt(report.mean_code_calls, 2)}",
            f"unanswered: {report.unanswered_count}",
        ]
        for name, stats in report.per_bucket.items():
            lines.append(f"{name}: n={stats.n} accuracy={_fmt(stats.accuracy)}")
        if report.config_snapshot:
            lines.append(f"config: {json.dumps(report.config_snapshot, sort_keys=True)}")
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = [
            "| bucket | n | accuracy |",
            "| --- | ---: | ---: |",
        ]
        for name, stats in report.per_bucket.items():
            lines.append(f"| {name} | {stats.n} | {_fmt(stats.accuracy)} |")
        lines += [
            "",
            f"Overall accuracy: {_fmt(report.overall_accuracy)}",
            f"Mean code calls: {_fmt(report.mean_code_calls, 2)}",
            f"Unanswered: {report.unanswered_count}",
        ]
        if report.config_snapshot:
            lines.append(
                f"Config: `{json.dumps(report.config_snapshot, sort_keys=True)}`"
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
