import json
import math
import random

import pytest

from reranker_service import (
    BaseModelUnavailable,
    SingleClassLabels,
    TrainSpec,
    encode_pair,
    load_artifact,
    load_labeled_pairs,
    ranking_auc,
    score_pairs,
    token_ids,
    train,
)
from reranker_service.model import CLS_ID, SEP_ID
from service_helpers import synth_pairs, write_pairs


class TestTraining:
    def test_separable_pairs_reach_high_held_out_auc(self, trained_artifact):
        held_out = synth_pairs(120, seed=77)
        model = load_artifact(trained_artifact)
        scores = score_pairs(model, [(p["query"], p["candidate"]) for p in held_out])
        auc = ranking_auc(scores, [p["label"] for p in held_out])
        assert auc > 0.95

    def test_metrics_json_records_single_epoch_at_configured_lr(self, tmp_path):
        labels = write_pairs(tmp_path / "pairs.jsonl", synth_pairs(1000))
        out = train(TrainSpec(labels_path=labels, output_dir=tmp_path / "model"))
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["epochs"] == 1
        assert metrics["learning_rate"] == 2e-5
        assert metrics["label_counts"] == {"positive": 500, "negative": 500}
        assert len(metrics["loss_curve"]) == math.ceil(1000 / 16)
        assert all(isinstance(v, float) for v in metrics["loss_curve"])
        assert (out / "model.pt").exists()

    def test_empty_labels_file_is_single_class(self, tmp_path):
        labels = tmp_path / "pairs.jsonl"
        labels.write_text("")
        with pytest.raises(SingleClassLabels):
            train(TrainSpec(labels_path=labels, output_dir=tmp_path / "model"))

    def test_one_class_labels_rejected(self, tmp_path):
        positives = [p | {"label": 1} for p in synth_pairs(10)]
        labels = write_pairs(tmp_path / "pairs.jsonl", positives)
        with pytest.raises(SingleClassLabels):
            train(TrainSpec(labels_path=labels, output_dir=tmp_path / "model"))

    def test_unknown_base_model(self, tmp_path):
        labels = write_pairs(tmp_path / "pairs.jsonl", synth_pairs(10))
        spec = TrainSpec(
            labels_path=labels,
            output_dir=tmp_path / "model",
            base_model_id="nonexistent-encoder",
        )
        with pytest.raises(BaseModelUnavailable):
            train(spec)

    @pytest.mark.parametrize("field,value", [("epochs", 0), ("learning_rate", 0.0),
                                             ("learning_rate", -1e-5)])
    def test_spec_rejects_degenerate_settings(self, tmp_path, field, value):
        with pytest.raises(ValueError):
            TrainSpec(
                labels_path=tmp_path / "pairs.jsonl",
                output_dir=tmp_path / "model",
                **{field: value},
            )

    def test_training_is_deterministic(self, tmp_path):
        labels = write_pairs(tmp_path / "pairs.jsonl", synth_pairs(64))
        first = train(TrainSpec(labels_path=labels, output_dir=tmp_path / "a"))
        second = train(TrainSpec(labels_path=labels, output_dir=tmp_path / "b"))
        probe = [(p["query"], p["candidate"]) for p in synth_pairs(12, seed=5)]
        assert score_pairs(load_artifact(first), probe) == score_pairs(
            load_artifact(second), probe
        )


class TestLabelLoading:
    def test_engine_export_keys_are_accepted(self, tmp_path):
        path = write_pairs(tmp_path / "pairs.jsonl", synth_pairs(4))
        pairs = load_labeled_pairs(path)
        assert len(pairs) == 4
        assert {p.label for p in pairs} == {0, 1}

    def test_malformed_json_line_rejected(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"query": "q", "candidate": "c", "label": 1}\nnot json\n')
        with pytest.raises(ValueError, match="line|JSON|:2"):
            load_labeled_pairs(path)

    def test_out_of_range_label_rejected(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"query": "q", "candidate": "c", "label": 2}\n')
        with pytest.raises(ValueError, match="label"):
            load_labeled_pairs(path)

    def test_non_string_query_rejected(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"query": 3, "candidate": "c", "label": 1}\n')
        with pytest.raises(ValueError, match="string"):
            load_labeled_pairs(path)


class TestRankingAuc:
    def test_hand_cases(self):
        assert ranking_auc([0.9, 0.1], [1, 0]) == 1.0
        assert ranking_auc([0.1, 0.9], [1, 0]) == 0.0
        assert ranking_auc([0.5, 0.5], [1, 0]) == 0.5

    def test_matches_rank_sum_formula(self):
        rng = random.Random(13)
        scores = [rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]) for _ in range(40)]
        labels = [rng.randint(0, 1) for _ in range(40)]
        labels[0], labels[1] = 1, 0

        # independent route: midrank formula for the Mann-Whitney statistic
        order = sorted(range(len(scores)), key=lambda i: scores[i])
        ranks = [0.0] * len(scores)
        i = 0
        while i < len(order):
            j = i
            while j < len(order) and scores[order[j]] == scores[order[i]]:
                j += 1
            midrank = (i + 1 + j) / 2
            for k in range(i, j):
                ranks[order[k]] = midrank
            i = j
        n_pos = sum(labels)
        n_neg = len(labels) - n_pos
        rank_sum = sum(r for r, label in zip(ranks, labels) if label == 1)
        expected = (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)

        assert ranking_auc(scores, labels) == pytest.approx(expected, abs=1e-12)

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError):
            ranking_auc([0.5], [1])
        with pytest.raises(ValueError):
            ranking_auc([0.5, 0.6], [1])


class TestEncodePair:
    def test_question_survives_table_truncation(self):
        table = " ".join(f"cell{i}" for i in range(300))
        question = "which color wins the race?"
        query = f"{table}\n{question}"
        sequence = encode_pair(query, "check the header", 4096, 128)

        assert len(sequence) <= 128
        assert sequence[0] == CLS_ID
        sep_at = sequence.index(SEP_ID)
        question_ids = token_ids(question, 4096)
        assert sequence[sep_at - len(question_ids):sep_at] == question_ids
        assert sequence[sep_at + 1:] == token_ids("check the header", 4096)

    def test_short_pair_is_untouched(self):
        sequence = encode_pair("tiny table\nquestion?", "note", 4096, 128)
        expected = (
            [CLS_ID]
            + token_ids("tiny table\nquestion?", 4096)
            + [SEP_ID]
            + token_ids("note", 4096)
        )
        assert sequence == expected
