import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrtab.agent import AgentMode, AgentStep, AgentTrace, StepKind
from lrtab.errors import DegenerateLabels, MalformedRecord, ScorerUnreachable
from lrtab.learning import ConditionStore, PromptCondition
from lrtab.reranking import (
    ExternalScorer,
    LinearNative,
    Passthrough,
    bce_loss_and_grad,
    load_reranker,
    pair_features,
    rerank,
    save_reranker,
    train_linear_reranker,
)
from lrtab.retrieval import CandidateKind, EmbeddingIndex, IndexEntry, UsefulnessLabel
from lrtab.tables import Table, TaskKind


def make_condition(cid: str, text: str) -> PromptCondition:
    table = Table(title=cid, columns=["a"], rows=[["1"]])
    trace = AgentTrace(
        instance_id=cid,
        mode=AgentMode.FLEXIBLE,
        steps=[AgentStep(kind=StepKind.FINAL_ANSWER, content='{"Final Answer": "1"}')],
        answer="1",
        code_calls=0,
        llm_calls=1,
    )
    return PromptCondition(
        id=cid,
        condition_text=text,
        source_instance_id=cid,
        source_table=table,
        source_query="what is a?",
        task=TaskKind.QA,
        corrected_trace=trace,
        retrieval_key=f"key for {cid}",
    )


def separable_setup():
    """Labels split cleanly on the cosine feature; everything else is equal."""
    vectors = {
        "cond-east": [1.0, 0.0],
        "cond-ne": [0.92, 0.39],
        "cond-north": [0.0, 1.0],
        "cond-west": [-1.0, 0.0],
    }
    entries = [
        IndexEntry(cid, CandidateKind.CONDITION, np.array(vec))
        for cid, vec in vectors.items()
    ]
    index = EmbeddingIndex(dimension=2, entries=entries)
    store = ConditionStore(
        conditions=[make_condition(cid, "Watch the sign.") for cid in vectors]
    )
    keys = {"east probe one": [1.0, 0.0], "north probe two": [0.0, 1.0]}

    class KeyEmbed:
        def embed(self, text: str) -> list[float]:
            return keys[text]

    labels = [
        UsefulnessLabel("east probe one", "cond-east", 1),
        UsefulnessLabel("east probe one", "cond-ne", 1),
        UsefulnessLabel("east probe one", "cond-north", 0),
        UsefulnessLabel("east probe one", "cond-west", 0),
        UsefulnessLabel("north probe two", "cond-north", 1),
        UsefulnessLabel("north probe two", "cond-ne", 0),
        UsefulnessLabel("north probe two", "cond-east", 0),
        UsefulnessLabel("north probe two", "cond-west", 0),
    ]
    return index, store, KeyEmbed(), labels, keys


class TestFeatures:
    def test_feature_layout(self):
        features = pair_features(
            key_vector=np.array([1.0, 0.0]),
            key_text="three token key",
            candidate_vector=np.array([1.0, 0.0]),
            candidate_len=250,
            kind=CandidateKind.CONDITION,
        )
        assert features == pytest.approx([1.0, 0.003, 0.25, 1.0])

    def test_example_kind_flag(self):
        features = pair_features(
            np.array([0.0, 1.0]), "k", np.array([1.0, 0.0]), 10, CandidateKind.EXAMPLE
        )
        assert features[3] == 0.0
        assert features[0] == 0.0


class TestLossAndGradient:
    def test_zero_params_give_log_two(self):
        features = np.array([[1.0, 0.0, 0.0, 1.0], [0.5, 0.1, 0.2, 0.0]])
        labels = np.array([1.0, 0.0])
        loss, _ = bce_loss_and_grad(np.zeros(5), features, labels)
        assert loss == pytest.approx(np.log(2.0))

    def test_gradient_matches_central_difference(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(20, 4))
        labels = rng.integers(0, 2, size=20).astype(float)
        params = rng.normal(size=5)
        _, analytic = bce_loss_and_grad(params, features, labels)
        h = 1e-6
        for i in range(5):
            bump = np.zeros(5)
            bump[i] = h
            plus, _ = bce_loss_and_grad(params + bump, features, labels)
            minus, _ = bce_loss_and_grad(params - bump, features, labels)
            numeric = (plus - minus) / (2 * h)
            rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
            assert rel <= 1e-4


class TestTraining:
    def test_separable_labels_rank_perfectly(self):
        index, store, embed, labels, keys = separable_setup()
        model = train_linear_reranker(labels, index, store, embed)
        scores = {}
        for label in labels:
            key_vec = np.array(keys[label.query_key])
            entry = index.entry_for(label.candidate_id)
            features = pair_features(
                key_vec, label.query_key, entry.vector, len("Watch the sign."), entry.kind
            )
            scores[(label.query_key, label.candidate_id)] = model.score(features)
        positives = [scores[(l.query_key, l.candidate_id)] for l in labels if l.label == 1]
        negatives = [scores[(l.query_key, l.candidate_id)] for l in labels if l.label == 0]
        assert min(positives) > max(negatives)

    def test_loss_curve_never_increases(self):
        index, store, embed, labels, _ = separable_setup()
        model = train_linear_reranker(labels, index, store, embed)
        curve = model.loss_curve
        assert len(curve) >= 2
        assert all(curve[i + 1] <= curve[i] for i in range(len(curve) - 1))

    def test_single_class_rejected(self):
        index, store, embed, labels, _ = separable_setup()
        positives = [l for l in labels if l.label == 1]
        with pytest.raises(DegenerateLabels):
            train_linear_reranker(positives, index, store, embed)

    def test_empty_labels_rejected(self):
        index, store, embed, _, _ = separable_setup()
        with pytest.raises(DegenerateLabels):
            train_linear_reranker([], index, store, embed)

    def test_identical_features_mixed_labels_fall_back(self, caplog):
        index, store, embed, _, _ = separable_setup()
        labels = [
            UsefulnessLabel("east probe one", "cond-east", 1),
            UsefulnessLabel("east probe one", "cond-east", 0),
        ]
        with caplog.at_level("WARNING"):
            model = train_linear_reranker(labels, index, store, embed)
        assert np.array_equal(model.weights, np.zeros(4))
        assert model.bias == 0.0
        assert any("identical" in rec.message for rec in caplog.records)


def scripted_transport(handler):
    return httpx.MockTransport(handler)


class TestExternalScorer:
    def test_posts_expected_payload(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["url"] = str(request.url)
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json={"scores": [0.2, 0.9]})

        scorer = ExternalScorer("http://scorer.local", transport=scripted_transport(handler))
        scores = scorer.score_pairs([("q1", "c1"), ("q2", "c2")])
        assert scores == [0.2, 0.9]
        assert seen["url"] == "http://scorer.local/score"
        assert seen["body"] == {
            "pairs": [
                {"query": "q1", "candidate": "c1"},
                {"query": "q2", "candidate": "c2"},
            ]
        }

    def test_network_error_raises(self):
        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("refused", request=request)

        scorer = ExternalScorer("http://scorer.local", transport=scripted_transport(handler))
        with pytest.raises(ScorerUnreachable):
            scorer.score_pairs([("q", "c")])

    def test_http_error_raises(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(503, json={"detail": "loading"})

        scorer = ExternalScorer("http://scorer.local", transport=scripted_transport(handler))
        with pytest.raises(ScorerUnreachable):
            scorer.score_pairs([("q", "c")])

    def test_score_count_mismatch_raises(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"scores": [0.5]})

        scorer = ExternalScorer("http://scorer.local", transport=scripted_transport(handler))
        with pytest.raises(ScorerUnreachable):
            scorer.score_pairs([("q1", "c1"), ("q2", "c2")])

    def test_malformed_body_raises(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"values": []})

        scorer = ExternalScorer("http://scorer.local", transport=scripted_transport(handler))
        with pytest.raises(ScorerUnreachable):
            scorer.score_pairs([("q", "c")])


class TestRerank:
    def store_for(self, ids):
        return ConditionStore(conditions=[make_condition(cid, f"text {cid}") for cid in ids])

    def test_passthrough_is_identity(self):
        ids = ["cond-b", "cond-a", "cond-c"]
        assert rerank("key", ids, Passthrough()) == ids

    def test_external_orders_by_descending_score(self):
        ids = ["cond-a", "cond-b", "cond-c"]

        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"scores": [0.1, 0.9, 0.5]})

        scorer = ExternalScorer("http://s.local", transport=scripted_transport(handler))
        got = rerank("key", ids, scorer, store=self.store_for(ids))
        assert got == ["cond-b", "cond-c", "cond-a"]

    def test_ties_keep_input_order(self):
        ids = ["cond-z", "cond-a", "cond-m"]

        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"scores": [0.5, 0.5, 0.5]})

        scorer = ExternalScorer("http://s.local", transport=scripted_transport(handler))
        assert rerank("key", ids, scorer, store=self.store_for(ids)) == ids

    def test_zero_weight_linear_preserves_order(self):
        ids = ["cond-east", "cond-north", "cond-west", "cond-ne"]
        index, store, _, _, _ = separable_setup()
        model = LinearNative(weights=np.zeros(4), bias=0.0)
        got = rerank(
            "east probe one",
            ids,
            model,
            index=index,
            store=store,
            key_vector=np.array([1.0, 0.0]),
        )
        assert got == ids

    def test_trained_linear_promotes_relevant_candidate(self):
        index, store, embed, labels, _ = separable_setup()
        model = train_linear_reranker(labels, index, store, embed)
        got = rerank(
            "east probe one",
            ["cond-west", "cond-north", "cond-east"],
            model,
            index=index,
            store=store,
            key_vector=np.array([1.0, 0.0]),
        )
        assert got[0] == "cond-east"

    def test_linear_requires_context(self):
        model = LinearNative(weights=np.zeros(4), bias=0.0)
        with pytest.raises(ValueError):
            rerank("key", ["cond-a"], model)

    def test_external_requires_store(self):
        scorer = ExternalScorer("http://s.local")
        with pytest.raises(ValueError):
            rerank("key", ["cond-a"], scorer)

    def test_fallback_to_passthrough_on_unreachable(self, caplog):
        ids = ["cond-a", "cond-b"]

        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("refused", request=request)

        scorer = ExternalScorer(
            "http://s.local",
            transport=scripted_transport(handler),
            fallback_to_passthrough=True,
        )
        with caplog.at_level("WARNING"):
            got = rerank("key", ids, scorer, store=self.store_for(ids))
        assert got == ids
        assert any("retrieval order" in rec.message for rec in caplog.records)

    def test_no_fallback_propagates(self):
        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("refused", request=request)

        scorer = ExternalScorer("http://s.local", transport=scripted_transport(handler))
        with pytest.raises(ScorerUnreachable):
            rerank("key", ["cond-a"], scorer, store=self.store_for(["cond-a"]))

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.integers(min_value=0, max_value=30), min_size=1, max_size=12, unique=True
        ),
        st.randoms(use_true_random=False),
    )
    def test_result_is_permutation(self, numbers, rng):
        ids = [f"cond-{n:02d}" for n in numbers]
        scores = [rng.random() for _ in ids]

        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"scores": scores})

        scorer = ExternalScorer("http://s.local", transport=scripted_transport(handler))
        got = rerank("key", ids, scorer, store=self.store_for(ids))
        assert sorted(got) == sorted(ids)
        expected = [cid for _, cid in sorted(zip(scores, ids), key=lambda p: -p[0])]
        if len(set(scores)) == len(scores):
            assert got == expected


class TestRerankerIO:
    def test_linear_roundtrip(self, tmp_path):
        model = LinearNative(
            weights=np.array([0.5, -0.25, 1.5, 0.0]), bias=-0.75, loss_curve=[0.7, 0.6]
        )
        path = tmp_path / "reranker.json"
        save_reranker(model, path)
        loaded = load_reranker(path)
        assert isinstance(loaded, LinearNative)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.loss_curve == model.loss_curve

    def test_passthrough_roundtrip(self, tmp_path):
        path = tmp_path / "reranker.json"
        save_reranker(Passthrough(), path)
        assert isinstance(load_reranker(path), Passthrough)

    def test_external_roundtrip(self, tmp_path):
        path = tmp_path / "reranker.json"
        save_reranker(
            ExternalScorer("http://s.local", timeout_s=3.0, fallback_to_passthrough=True),
            path,
        )
        loaded = load_reranker(path)
        assert isinstance(loaded, ExternalScorer)
        assert loaded.endpoint == "http://s.local"
        assert loaded.timeout_s == 3.0
        assert loaded.fallback_to_passthrough is True

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "reranker.json"
        path.write_text(json.dumps({"kind": "quantum"}))
        with pytest.raises(MalformedRecord):
            load_reranker(path)

    def test_wrong_weight_count_rejected(self, tmp_path):
        path = tmp_path / "reranker.json"
        path.write_text(json.dumps({"kind": "linear", "weights": [1.0], "bias": 0.0}))
        with pytest.raises(MalformedRecord):
            load_reranker(path)
