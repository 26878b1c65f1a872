"""lrtab: learn-then-retrieve reasoning over tables.

Training runs a code-enabled agent over a table QA or fact-checking corpus
and keeps what worked: corrected mistakes become reusable prompt conditions,
clean solves become worked examples. Inference embeds the incoming table and
question, retrieves the nearest conditions, optionally reranks them, and
injects the best few into the agent prompt before answering.
"""

from .agent import Agent, AgentConfig, AgentMode, AgentStep, AgentTrace, StepKind
from .errors import LrtabError
from .gateway import BackendRef, make_chat_client, make_embed_client
from .learning import (
    ConditionStore,
    Corrector,
    CotExample,
    ExampleOrigin,
    LearnStats,
    PromptCondition,
    learn,
    load_store,
    save_store,
)
from .pipeline import (
    EvalReport,
    InferenceParams,
    Prediction,
    render_report,
    run_inference,
    score,
)
from .prompts import PromptKind, PromptSlots, build_prompt
from .reranking import (
    ExternalScorer,
    LinearNative,
    Passthrough,
    load_reranker,
    rerank,
    save_reranker,
    train_linear_reranker,
)
from .retrieval import (
    CandidateKind,
    EmbeddingIndex,
    UsefulnessLabel,
    build_index,
    label_validation,
    retrieve_topk,
)
from .sandbox import SandboxFactory, SandboxLimits, SandboxResult, SandboxStatus
from .tables import (
    Instance,
    LengthBucket,
    Table,
    TaskKind,
    ingest_dataset,
    load_instances,
    normalize_answer,
    to_markdown,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentConfig",
    "AgentMode",
    "AgentStep",
    "AgentTrace",
    "BackendRef",
    "CandidateKind",
    "ConditionStore",
    "Corrector",
    "CotExample",
    "EmbeddingIndex",
    "EvalReport",
    "ExampleOrigin",
    "ExternalScorer",
    "InferenceParams",
    "Instance",
    "LearnStats",
    "LengthBucket",
    "LinearNative",
    "LrtabError",
    "Passthrough",
    "Prediction",
    "PromptCondition",
    "PromptKind",
    "PromptSlots",
    "SandboxFactory",
    "SandboxLimits",
    "SandboxResult",
    "SandboxStatus",
    "StepKind",
    "Table",
    "TaskKind",
    "UsefulnessLabel",
    "build_index",
    "build_prompt",
    "ingest_dataset",
    "label_validation",
    "learn",
    "load_instances",
    "load_reranker",
    "load_store",
    "make_chat_client",
    "make_embed_client",
    "normalize_answer",
    "render_report",
    "rerank",
    "retrieve_topk",
    "run_inference",
    "save_reranker",
    "save_store",
    "score",
    "to_markdown",
]
