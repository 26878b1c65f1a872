from pathlib import Path

import pytest

from reranker_service import TrainSpec, train
from service_helpers import synth_pairs, write_pairs


@pytest.fixture(scope="session")
def trained_artifact(tmp_path_factory) -> Path:
    """One fine-tuned model shared by the scoring and integration tests."""
    root = tmp_path_factory.mktemp("artifact")
    labels = write_pairs(root / "pairs.jsonl", synth_pairs(400))
    return train(TrainSpec(labels_path=labels, output_dir=root / "model"))
