"""Fine-tuning the pair scorer on usefulness labels."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .data import load_labeled_pairs
from .errors import SingleClassLabels
from .model import load_base_model, save_artifact

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSpec:
    labels_path: Path
    output_dir: Path
    base_model_id: str = "tiny-pair-encoder"
    epochs: int = 1
    learning_rate: float = 2e-5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def train(spec: TrainSpec) -> Path:
    """Fine-tune the base model on the labels file and save the artifact.

    Writes model.pt plus a metrics.json with the loss curve and label
    counts to spec.output_dir and returns that directory.
    """
    pairs = load_labeled_pairs(spec.labels_path)
    positives = sum(p.label for p in pairs)
    negatives = len(pairs) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassLabels(
            f"training needs both classes, got {positives} positive "
            f"and {negatives} negative labels"
        )

    model, config = load_base_model(spec.base_model_id)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    generator = torch.Generator().manual_seed(spec.seed)

    texts = [(p.query, p.candidate) for p in pairs]
    targets = torch.tensor([float(p.label) for p in pairs])
    loss_curve = []
    for epoch in range(spec.epochs):
        order = torch.randperm(len(pairs), generator=generator)
        for start in range(0, len(pairs), spec.batch_size):
            batch = order[start : start + spec.batch_size]
            ids, mask = model.encode_batch([texts[i] for i in batch])
            loss = loss_fn(model(ids, mask), targets[batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_curve.append(loss.item())
        logger.info("epoch %d done, last batch loss %.4f", epoch + 1, loss_curve[-1])

    out_dir = save_artifact(model, config, spec.output_dir)
    metrics = {
        "base_model_id": spec.base_model_id,
        "epochs": spec.epochs,
        "learning_rate": spec.learning_rate,
        "batch_size": spec.batch_size,
        "label_counts": {"positive": positives, "negative": negatives},
        "loss_curve": loss_curve,
    }
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as handle:
        json.dump(metrics, handle, indent=2)
        handle.write("\n")
    return out_dir
