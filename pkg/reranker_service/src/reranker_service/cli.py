"""Command line entry points for training and serving the reranker."""

from __future__ import annotations

import json
from pathlib import Path

import click
import uvicorn

from .errors import RerankerServiceError
from .serving import create_app
from .training import TrainSpec, train


@click.group()
def main():
    """Fine-tune a pair-scoring reranker on usefulness labels and serve it."""


@main.command("rerank-train")
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Pairs JSONL exported by the engine's label step.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for the model artifact and metrics.")
@click.option("--base-model", default="tiny-pair-encoder", show_default=True)
@click.option("--epochs", default=1, show_default=True)
@click.option("--lr", default=2e-5, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
def rerank_train(labels, out, base_model, epochs, lr, batch_size, seed):
    """Fine-tune the base model on labeled pairs."""
    spec = TrainSpec(
        labels_path=Path(labels),
        output_dir=Path(out),
        base_model_id=base_model,
        epochs=epochs,
        learning_rate=lr,
        batch_size=batch_size,
        seed=seed,
    )
    try:
        out_dir = train(spec)
    except RerankerServiceError as exc:
        raise click.ClickException(str(exc))
    metrics = json.loads((out_dir / "metrics.json").read_text(encoding="utf-8"))
    counts = metrics["label_counts"]
    click.echo(
        f"trained on {counts['positive'] + counts['negative']} labels "
        f"({counts['positive']} positive), final batch loss {metrics['loss_curve'][-1]:.4f}"
    )


@main.command("rerank-serve")
@click.option("--model", required=True, type=click.Path(exists=True),
              help="Artifact directory or model.pt file from rerank-train.")
@click.option("--port", default=8301, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def rerank_serve(model, port, host):
    """Serve POST /score and GET /healthz for the trained model."""
    uvicorn.run(create_app(model), host=host, port=port)
