import json

import pytest

from lrtab.agent import AgentMode
from lrtab.config import (
    agent_config_from_config,
    backend_from_config,
    inference_params_from_config,
    learning_from_config,
    load_config,
    sandbox_limits_from_config,
)
from lrtab.errors import MalformedRecord
from lrtab.learning import ExampleOrigin


def write_config(tmp_path, payload) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return str(path)


class TestLoadConfig:
    def test_missing_path_gives_defaults(self):
        config = load_config(None)
        assert config == {}
        backend = backend_from_config(config)
        assert backend.kind == "mock"
        assert backend.max_tokens == 2048
        params = inference_params_from_config(config)
        assert (params.k_retrieve, params.n_conditions, params.n_examples) == (8, 2, 1)
        assert params.mode is AgentMode.FLEXIBLE
        agent = agent_config_from_config(config)
        assert agent.max_llm_calls == 5
        limits = sandbox_limits_from_config(config)
        assert limits.wall_ms == 5000
        assert learning_from_config(config) == {"checkpoint_every": 25, "concurrency": 1}

    def test_sections_apply(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "backend": {"kind": "http", "base_url": "https://api.example/v1",
                            "model": "m1", "temperature": 0.5},
                "inference": {"k_retrieve": 4, "n_conditions": 1, "mode": "direct",
                              "example_origins": ["corrected"]},
                "agent": {"max_llm_calls": 3, "observation_limit": 500},
                "sandbox": {"wall_ms": 1000, "memory_mb": 256},
                "learning": {"checkpoint_every": 5, "concurrency": 2},
            },
        )
        config = load_config(path)
        backend = backend_from_config(config)
        assert backend.kind == "http"
        assert backend.base_url == "https://api.example/v1"
        assert backend.model == "m1"
        assert backend.temperature == 0.5
        params = inference_params_from_config(config)
        assert params.k_retrieve == 4
        assert params.n_conditions == 1
        assert params.n_examples == 1
        assert params.mode is AgentMode.DIRECT
        assert params.example_origins == (ExampleOrigin.CORRECTED,)
        agent = agent_config_from_config(config)
        assert agent.max_llm_calls == 3
        assert agent.observation_limit == 500
        limits = sandbox_limits_from_config(config)
        assert limits.wall_ms == 1000
        assert limits.memory_mb == 256
        assert limits.max_output_kb == 64
        assert learning_from_config(config) == {"checkpoint_every": 5, "concurrency": 2}

    def test_env_overrides_base_url(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, {"backend": {"kind": "http", "base_url": "https://file"}})
        monkeypatch.setenv("LRTAB_API_BASE", "https://env")
        assert backend_from_config(load_config(path)).base_url == "https://env"
        monkeypatch.delenv("LRTAB_API_BASE")
        assert backend_from_config(load_config(path)).base_url == "https://file"

    def test_mode_argument_wins(self, tmp_path):
        path = write_config(tmp_path, {"agent": {"mode": "direct"}})
        config = load_config(path)
        assert agent_config_from_config(config).mode is AgentMode.DIRECT
        assert agent_config_from_config(config, mode=AgentMode.CODE_ALWAYS).mode is (
            AgentMode.CODE_ALWAYS
        )

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"retrieval": {}})
        with pytest.raises(MalformedRecord):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"backend": {"api_base": "x"}})
        with pytest.raises(MalformedRecord):
            backend_from_config(load_config(path))

    def test_unknown_learning_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"learning": {"epochs": 2}})
        with pytest.raises(MalformedRecord):
            learning_from_config(load_config(path))

    def test_non_object_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"backend": ["http"]})
        with pytest.raises(MalformedRecord):
            load_config(path)

    def test_non_object_document_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2]")
        with pytest.raises(MalformedRecord):
            load_config(str(path))

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{nope")
        with pytest.raises(MalformedRecord):
            load_config(str(path))
