"""Command line entry points: train, index, label, rerank-train, infer, eval."""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import click

from .agent import Agent, AgentMode
from .config import (
    agent_config_from_config,
    backend_from_config,
    inference_params_from_config,
    learning_from_config,
    load_config,
    sandbox_limits_from_config,
)
from .errors import LrtabError
from .gateway import ChatClient, make_chat_client, make_embed_client
from .learning import Corrector, learn, load_store
from .pipeline import (
    load_predictions,
    render_report,
    run_inference,
    save_predictions,
    score,
)
from .reranking import (
    ExternalScorer,
    Passthrough,
    load_reranker,
    save_reranker,
    train_linear_reranker,
)
from .retrieval import (
    EmbeddingIndex,
    UsefulnessLabel,
    build_index,
    label_validation,
    load_pairs,
    save_labels,
    save_pairs,
)
from .sandbox import SandboxFactory
from .tables import DATASET_FORMATS, ingest_dataset

log = logging.getLogger(__name__)


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LrtabError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="JSON config file.",
)
format_option = click.option(
    "--format", "fmt", type=click.Choice(DATASET_FORMATS),
    default="canonical-jsonl", show_default=True, help="Dataset file format.",
)
timeout_option = click.option(
    "--sandbox-timeout-ms", type=int, default=None,
    help="Wall clock limit for one code execution.",
)


def _load(config_path: str | None) -> dict:
    return load_config(config_path)


def _make_agent(
    config: dict, mode: AgentMode, sandbox_timeout_ms: int | None
) -> tuple[Agent, ChatClient]:
    backend = backend_from_config(config)
    chat = make_chat_client(backend)
    agent_config = agent_config_from_config(config, mode=mode)
    factory = None
    if mode is not AgentMode.DIRECT:
        limits = sandbox_limits_from_config(config)
        if sandbox_timeout_ms is not None:
            limits.wall_ms = sandbox_timeout_ms
        factory = SandboxFactory(limits=limits)
    return Agent(chat, sandbox_factory=factory, config=agent_config), chat


@click.group()
@click.option("--verbose", is_flag=True, help="Log progress details.")
def main(verbose: bool) -> None:
    """Learn reusable prompt conditions from tables, then answer with them."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@format_option
@click.option("--limit", type=int, default=None, help="Use only the first N instances.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice([m.value for m in AgentMode]), default="flexible", show_default=True)
@click.option("--run-stamp", default="", help="Timestamp recorded in the store meta line.")
@config_option
@timeout_option
@handle_errors
def train(dataset, fmt, limit, out_path, mode, run_stamp, config_path, sandbox_timeout_ms):
    """Run the agent over training data and persist conditions and examples."""
    config = _load(config_path)
    instances = ingest_dataset(dataset, fmt=fmt)
    agent, chat = _make_agent(config, AgentMode(mode), sandbox_timeout_ms)
    learning = learning_from_config(config)
    store = learn(
        instances,
        agent,
        Corrector(chat),
        out_path,
        limit=limit,
        checkpoint_every=learning["checkpoint_every"],
        concurrency=learning["concurrency"],
        dataset_name=Path(dataset).name,
        model_name=backend_from_config(config).model,
        run_stamp=run_stamp,
    )
    counts = store.meta["counts"]
    click.echo(
        f"processed {counts['processed']}: "
        f"{counts['conditions']} conditions, {counts['examples']} examples "
        f"({counts['initially_correct']} initially correct, {counts['corrected']} corrected, "
        f"{counts['uncorrected']} uncorrected)"
    )


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@config_option
@handle_errors
def index(store_path, out_path, config_path):
    """Embed every stored candidate's retrieval key into a query index."""
    config = _load(config_path)
    store = load_store(store_path)
    embed = make_embed_client(backend_from_config(config))
    built = build_index(store, embed)
    built.save(out_path)
    click.echo(f"indexed {len(built.entries)} candidates at dimension {built.dimension}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@format_option
@click.option("--store", "store_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--pairs-out", type=click.Path(dir_okay=False), default=None,
              help="Also write full query/candidate text pairs here.")
@click.option("--k", type=int, default=2, show_default=True, help="Conditions retrieved per instance.")
@click.option("--limit", type=int, default=None)
@click.option("--mode", type=click.Choice([m.value for m in AgentMode]), default="flexible", show_default=True)
@config_option
@timeout_option
@handle_errors
def label(dataset, fmt, store_path, index_path, out_path, pairs_out, k, limit, mode,
          config_path, sandbox_timeout_ms):
    """Label retrieved conditions on validation data for reranker training."""
    config = _load(config_path)
    instances = ingest_dataset(dataset, fmt=fmt)
    if limit is not None:
        instances = instances[: max(limit, 0)]
    store = load_store(store_path)
    idx = EmbeddingIndex.load(index_path)
    embed = make_embed_client(backend_from_config(config))
    agent, _ = _make_agent(config, AgentMode(mode), sandbox_timeout_ms)
    learning = learning_from_config(config)
    labels = label_validation(
        instances, store, idx, agent, embed, k=k, concurrency=learning["concurrency"]
    )
    save_labels(labels, out_path)
    if pairs_out:
        save_pairs(labels, store, pairs_out)
    positives = sum(label.label for label in labels)
    click.echo(f"wrote {len(labels)} labels ({positives} positive)")


@main.command("rerank-train")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@config_option
@handle_errors
def rerank_train(pairs_path, store_path, index_path, out_path, config_path):
    """Fit the native logistic reranker on labeled retrieval pairs."""
    config = _load(config_path)
    pairs = load_pairs(pairs_path)
    labels = [
        UsefulnessLabel(query_key=p.query, candidate_id=p.candidate_id, label=p.label)
        for p in pairs
    ]
    store = load_store(store_path)
    idx = EmbeddingIndex.load(index_path)
    embed = make_embed_client(backend_from_config(config))
    model = train_linear_reranker(labels, idx, store, embed)
    save_reranker(model, out_path)
    final = model.loss_curve[-1] if model.loss_curve else float("nan")
    click.echo(f"trained on {len(labels)} labels, final loss {final:.4f}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@format_option
@click.option("--store", "store_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--index", "index_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--reranker", "reranker_kind", type=click.Choice(["linear", "external", "none"]),
              default="none", show_default=True)
@click.option("--reranker-model", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Saved reranker parameters (required for --reranker linear).")
@click.option("--endpoint", default=None, help="External scorer base URL.")
@click.option("--fallback-on-unreachable", is_flag=True,
              help="Keep retrieval order if the external scorer is down.")
@click.option("--k-retrieve", type=int, default=None)
@click.option("--n-conditions", type=int, default=None)
@click.option("--n-examples", type=int, default=None)
@click.option("--mode", type=click.Choice([m.value for m in AgentMode]), default=None)
@click.option("--limit", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--traces", "traces_path", type=click.Path(dir_okay=False), default=None,
              help="Trace file; defaults to <out>.traces.jsonl.")
@config_option
@timeout_option
@handle_errors
def infer(dataset, fmt, store_path, index_path, reranker_kind, reranker_model, endpoint,
          fallback_on_unreachable, k_retrieve, n_conditions, n_examples, mode, limit,
          out_path, traces_path, config_path, sandbox_timeout_ms):
    """Answer a test set with retrieved conditions and a worked example."""
    config = _load(config_path)
    params = inference_params_from_config(config)
    if k_retrieve is not None:
        params.k_retrieve = k_retrieve
    if n_conditions is not None:
        params.n_conditions = n_conditions
    if n_examples is not None:
        params.n_examples = n_examples
    if mode is not None:
        params.mode = AgentMode(mode)

    if reranker_kind == "linear":
        if not reranker_model:
            raise click.UsageError("--reranker linear needs --reranker-model")
        reranker = load_reranker(reranker_model)
    elif reranker_kind == "external":
        if not endpoint:
            raise click.UsageError("--reranker external needs --endpoint")
        reranker = ExternalScorer(
            endpoint=endpoint, fallback_to_passthrough=fallback_on_unreachable
        )
    else:
        reranker = Passthrough()

    instances = ingest_dataset(dataset, fmt=fmt)
    if limit is not None:
        instances = instances[: max(limit, 0)]
    augmenting = params.n_conditions > 0 or params.n_examples > 0
    store = idx = embed = None
    if augmenting:
        if not store_path or not index_path:
            raise click.UsageError("inference with retrieval needs --store and --index")
        store = load_store(store_path)
        idx = EmbeddingIndex.load(index_path)
        embed = make_embed_client(backend_from_config(config))
    agent, _ = _make_agent(config, params.mode, sandbox_timeout_ms)
    learning = learning_from_config(config)
    traces = traces_path if traces_path is not None else f"{out_path}.traces.jsonl"
    predictions = run_inference(
        instances,
        agent,
        store=store,
        index=idx,
        embed=embed,
        reranker=reranker,
        params=params,
        traces_path=traces,
        concurrency=learning["concurrency"],
    )
    save_predictions(predictions, out_path)
    failed = sum(1 for p in predictions if p.error)
    click.echo(f"wrote {len(predictions)} predictions ({failed} failed)")


@main.command("eval")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@format_option
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report-format", type=click.Choice(["text", "json", "markdown"]), default=None,
              help="Defaults from the report file extension.")
@config_option
@handle_errors
def eval_cmd(preds_path, gold_path, fmt, report_path, report_format, config_path):
    """Score predictions against gold answers and write a report."""
    config = _load(config_path)
    predictions = load_predictions(preds_path)
    gold = ingest_dataset(gold_path, fmt=fmt)
    snapshot = inference_params_from_config(config).snapshot() if config else {}
    report = score(predictions, gold, config_snapshot=snapshot)
    if report_format is None:
        suffix = Path(report_path).suffix
        report_format = {".md": "markdown", ".json": "json"}.get(suffix, "text")
    rendered = render_report(report, fmt=report_format)
    Path(report_path).write_text(rendered, encoding="utf-8")
    click.echo(rendered, nl=False)


if __name__ == "__main__":
    main()
