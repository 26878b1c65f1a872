"""Pair-scoring cross-encoder over hashed tokens.

The base model registry stands in for a model hub: every load of the same
id rebuilds the same weights from its seed, so training runs are
reproducible without network access. The scorer reads the query and the
candidate as one joint sequence, which is what makes it a cross-encoder
rather than a bi-encoder.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import torch
from torch import nn

from .errors import BaseModelUnavailable

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
FIRST_HASH_ID = 3

BASE_MODELS = {
    "tiny-pair-encoder": {
        "vocab_size": 4096,
        "dim": 64,
        "heads": 4,
        "max_tokens": 128,
        "seed": 7,
    },
}


def token_ids(text: str, vocab_size: int) -> list[int]:
    """Hash whitespace tokens into the embedding table, case-insensitively."""
    span = vocab_size - FIRST_HASH_ID
    return [
        FIRST_HASH_ID + zlib.crc32(token.encode("utf-8")) % span
        for token in text.lower().split()
    ]


def encode_pair(query: str, candidate: str, vocab_size: int, max_tokens: int) -> list[int]:
    """Encode [CLS] key [SEP] candidate, truncating the key's table tail.

    The candidate never takes more than half the window. When the key
    overflows its share, the question (the key's final line) is kept whole
    and the table is cut at its right edge; tables dominate length, and the
    question is what the score must condition on.
    """
    candidate_ids = token_ids(candidate, vocab_size)[: (max_tokens - 2) // 2]
    budget = max_tokens - 2 - len(candidate_ids)
    key_ids = token_ids(query, vocab_size)
    if len(key_ids) > budget:
        head, _, question = query.rpartition("\n")
        question_ids = token_ids(question, vocab_size)
        if not head or len(question_ids) >= budget:
            key_ids = question_ids[:budget] if budget > 0 else []
        else:
            keep = budget - len(question_ids)
            key_ids = token_ids(head, vocab_size)[:keep] + question_ids
    return [CLS_ID] + key_ids + [SEP_ID] + candidate_ids


class TinyPairScorer(nn.Module):
    """One attention block over the joint sequence, mean-pooled to a logit.

    The scoring head starts at zero so an untrained model is indifferent
    (probability 0.5 for every pair) and fine-tuning moves it from there.
    """

    def __init__(self, vocab_size: int, dim: int, heads: int, max_tokens: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(vocab_size, dim, padding_idx=PAD_ID)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ids (batch, length) int64; mask (batch, length) bool, True = real token."""
        x = self.embed(ids)
        attended, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.norm(x + attended)
        counts = mask.sum(dim=1, keepdim=True).clamp(min=1)
        pooled = (x * mask.unsqueeze(-1)).sum(dim=1) / counts
        return self.head(pooled).squeeze(-1)

    def encode_batch(self, pairs: list[tuple[str, str]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad a batch of (query, candidate) pairs to a shared length."""
        sequences = [
            encode_pair(query, candidate, self.vocab_size, self.max_tokens)
            for query, candidate in pairs
        ]
        width = max(len(s) for s in sequences)
        ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
        mask = torch.zeros((len(sequences), width), dtype=torch.bool)
        for row, seq in enumerate(sequences):
            ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            mask[row, : len(seq)] = True
        return ids, mask


def load_base_model(base_model_id: str) -> tuple[TinyPairScorer, dict]:
    """Build the registry model; identical weights on every load of an id."""
    try:
        config = dict(BASE_MODELS[base_model_id])
    except KeyError:
        raise BaseModelUnavailable(
            f"unknown base model {base_model_id!r}; available: {sorted(BASE_MODELS)}"
        ) from None
    torch.manual_seed(config["seed"])
    model = TinyPairScorer(
        vocab_size=config["vocab_size"],
        dim=config["dim"],
        heads=config["heads"],
        max_tokens=config["max_tokens"],
    )
    config["base_model_id"] = base_model_id
    return model, config


def score_pairs(model: TinyPairScorer, pairs: list[tuple[str, str]]) -> list[float]:
    """Deterministic probabilities for a batch; sigmoid keeps logit order."""
    if not pairs:
        return []
    model.eval()
    with torch.no_grad():
        ids, mask = model.encode_batch(pairs)
        logits = model(ids, mask)
        return [float(p) for p in torch.sigmoid(logits)]


def save_artifact(model: TinyPairScorer, config: dict, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save({"config": config, "state": model.state_dict()}, out_dir / "model.pt")
    return out_dir


def load_artifact(path: str | Path) -> TinyPairScorer:
    """Load a saved artifact from its directory or the model.pt file itself."""
    path = Path(path)
    if path.is_dir():
        path = path / "model.pt"
    payload = torch.load(path, map_location="cpu", weights_only=True)
    config = payload["config"]
    model = TinyPairScorer(
        vocab_size=config["vocab_size"],
        dim=config["dim"],
        heads=config["heads"],
        max_tokens=config["max_tokens"],
    )
    model.load_state_dict(payload["state"])
    model.eval()
    return model
