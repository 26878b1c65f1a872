"""Rerankers over retrieved candidates: passthrough, native logistic, remote.

The native reranker is a 4-feature logistic regression trained by full-batch
gradient descent with a backtracking step size, so the recorded loss curve
never increases. Scores only reorder candidates; ties keep input order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .errors import DegenerateLabels, MalformedRecord, ScorerUnreachable
from .gateway import EmbedClient
from .learning import ConditionStore
from .retrieval import (
    CandidateKind,
    EmbeddingIndex,
    UsefulnessLabel,
    candidate_text,
    cosine,
)
from .tables import token_count

log = logging.getLogger(__name__)

N_FEATURES = 4
MAX_EPOCHS = 500
LOSS_TOL = 1e-6


def pair_features(
    key_vector: np.ndarray,
    key_text: str,
    candidate_vector: np.ndarray,
    candidate_len: int,
    kind: CandidateKind,
) -> np.ndarray:
    return np.array(
        [
            cosine(key_vector, candidate_vector),
            token_count(key_text) / 1000.0,
            candidate_len / 1000.0,
            1.0 if kind is CandidateKind.CONDITION else 0.0,
        ]
    )


def features_for_candidate(
    key_vector: np.ndarray,
    key_text: str,
    candidate_id: str,
    index: EmbeddingIndex,
    store: ConditionStore,
) -> np.ndarray:
    entry = index.entry_for(candidate_id)
    text = candidate_text(store.candidate(candidate_id))
    return pair_features(key_vector, key_text, entry.vector, len(text), entry.kind)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def bce_loss_and_grad(
    params: np.ndarray, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient; params is [w..., bias]."""
    weights, bias = params[:-1], params[-1]
    z = features @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
    residual = _sigmoid(z) - labels
    grad_w = features.T @ residual / len(labels)
    grad_b = float(np.mean(residual))
    return loss, np.append(grad_w, grad_b)


@dataclass
class Passthrough:
    """Keeps retrieval order untouched."""


@dataclass
class LinearNative:
    weights: np.ndarray
    bias: float
    loss_curve: list[float] = field(default_factory=list)

    def score(self, features: np.ndarray) -> float:
        return float(_sigmoid(np.atleast_1d(features @ self.weights + self.bias))[0])


@dataclass
class ExternalScorer:
    endpoint: str
    timeout_s: float = 10.0
    fallback_to_passthrough: bool = False
    transport: httpx.BaseTransport | None = None

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        payload = {
            "pairs": [{"query": query, "candidate": cand} for query, cand in pairs]
        }
        try:
            with httpx.Client(
                timeout=self.timeout_s, transport=self.transport
            ) as client:
                response = client.post(f"{self.endpoint}/score", json=payload)
        except httpx.HTTPError as exc:
            raise ScorerUnreachable(f"scorer request failed: {exc}") from exc
        if response.status_code != 200:
            raise ScorerUnreachable(
                f"scorer returned HTTP {response.status_code}"
            )
        try:
            scores = response.json()["scores"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ScorerUnreachable(f"scorer response malformed: {exc}") from exc
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise ScorerUnreachable(
                f"scorer returned {len(scores) if isinstance(scores, list) else '?'} "
                f"scores for {len(pairs)} pairs"
            )
        return [float(s) for s in scores]


Reranker = Passthrough | LinearNative | ExternalScorer


def train_linear_reranker(
    labels: Sequence[UsefulnessLabel],
    index: EmbeddingIndex,
    store: ConditionStore,
    embed: EmbedClient,
    *,
    tol: float = LOSS_TOL,
    max_epochs: int = MAX_EPOCHS,
) -> LinearNative:
    if not labels:
        raise DegenerateLabels("no labels to train on")
    values = {label.label for label in labels}
    if len(values) < 2:
        raise DegenerateLabels(f"labels are all {values.pop()}, need both classes")

    key_vectors: dict[str, np.ndarray] = {}
    rows = []
    for label in labels:
        if label.query_key not in key_vectors:
            key_vectors[label.query_key] = np.asarray(
                embed.embed(label.query_key), dtype=float
            )
        rows.append(
            features_for_candidate(
                key_vectors[label.query_key], label.query_key, label.candidate_id, index, store
            )
        )
    features = np.stack(rows)
    targets = np.array([label.label for label in labels], dtype=float)

    if np.allclose(features, features[0]):
        log.warning(
            "all feature rows identical with mixed labels; returning zero weights"
        )
        return LinearNative(weights=np.zeros(N_FEATURES), bias=0.0, loss_curve=[])

    params = np.zeros(N_FEATURES + 1)
    loss, grad = bce_loss_and_grad(params, features, targets)
    curve = [loss]
    for _ in range(max_epochs):
        step = 1.0
        for _ in range(50):
            trial = params - step * grad
            trial_loss, trial_grad = bce_loss_and_grad(trial, features, targets)
            if trial_loss <= loss:
                break
            step *= 0.5
        else:
            break
        params, improvement = trial, loss - trial_loss
        loss, grad = trial_loss, trial_grad
        curve.append(loss)
        if improvement < tol:
            break
    return LinearNative(weights=params[:-1], bias=float(params[-1]), loss_curve=curve)


def rerank(
    key_text: str,
    candidate_ids: Sequence[str],
    reranker: Reranker,
    *,
    index: EmbeddingIndex | None = None,
    store: ConditionStore | None = None,
    key_vector: np.ndarray | None = None,
) -> list[str]:
    """Reorder candidate ids by descending score; ties keep input order."""
    ids = list(candidate_ids)
    if isinstance(reranker, Passthrough) or not ids:
        return ids
    if isinstance(reranker, LinearNative):
        if index is None or store is None or key_vector is None:
            raise ValueError("linear reranking needs index, store, and key_vector")
        scores = [
            reranker.score(
                features_for_candidate(key_vector, key_text, cid, index, store)
            )
            for cid in ids
        ]
    else:
        if store is None:
            raise ValueError("external reranking needs the store")
        pairs = [(key_text, candidate_text(store.candidate(cid))) for cid in ids]
        try:
            scores = reranker.score_pairs(pairs)
        except ScorerUnreachable as exc:
            if reranker.fallback_to_passthrough:
                log.warning("external scorer unavailable, using retrieval order: %s", exc)
                return ids
            raise
    order = sorted(range(len(ids)), key=lambda i: -scores[i])
    return [ids[i] for i in order]


def save_reranker(reranker: Reranker, path: str | Path) -> None:
    if isinstance(reranker, LinearNative):
        payload = {
            "kind": "linear",
            "weights": [float(w) for w in reranker.weights],
            "bias": reranker.bias,
            "loss_curve": [float(v) for v in reranker.loss_curve],
        }
    elif isinstance(reranker, ExternalScorer):
        payload = {
            "kind": "external",
            "endpoint": reranker.endpoint,
            "timeout_s": reranker.timeout_s,
            "fallback_to_passthrough": reranker.fallback_to_passthrough,
        }
    else:
        payload = {"kind": "passthrough"}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_reranker(path: str | Path) -> Reranker:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"reranker file {path}: {exc}") from exc
    kind = payload.get("kind")
    if kind == "linear":
        weights = np.asarray(payload["weights"], dtype=float)
        if weights.shape != (N_FEATURES,):
            raise MalformedRecord(
                f"linear reranker must have {N_FEATURES} weights, got {weights.shape}"
            )
        return LinearNative(
            weights=weights,
            bias=float(payload["bias"]),
            loss_curve=[float(v) for v in payload.get("loss_curve", [])],
        )
    if kind == "external":
        return ExternalScorer(
            endpoint=payload["endpoint"],
            timeout_s=float(payload.get("timeout_s", 10.0)),
            fallback_to_passthrough=bool(payload.get("fallback_to_passthrough", False)),
        )
    if kind == "passthrough":
        return Passthrough()
    raise MalformedRecord(f"unknown reranker kind {kind!r}")
