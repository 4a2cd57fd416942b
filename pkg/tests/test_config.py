import json

import pytest

from ragx.backends import HttpEmbedder, HttpGenerator, MockEmbedder, MockGenerator
from ragx.config import (
    ENV_BACKEND_URL,
    ENV_CONFIG,
    AppConfig,
    BackendSettings,
    ConfigError,
    build_embedder,
    build_generator,
    build_scorer,
    load_app_config,
    parse_app_config,
    resolve_config_path,
)

FULL_TOML = """
top_k = 5
candidate_depth = 30
chunk_tokens = 200
k_rrf = 40
system_preamble = "Short preamble."
bind = "0.0.0.0:9000"
hits_mode = "fraction"
sources = ["http://127.0.0.1:8001", "http://127.0.0.1:8002"]

[budget]
context_tokens = 4096
reserved_generation_tokens = 256

[rerank]
target_k = 4
context_cap_tokens = 1024
keep_fraction = 0.4

[bm25]
k1 = 1.5
b = 0.6

[backends]
kind = "http"
base_url = "http://10.0.0.1:8080"
embedder_tag = "bge-small"
embedder_dimension = 384

[[mcp_endpoints]]
name = "tracker"
base_url = "http://127.0.0.1:8900"
timeout_ms = 4000
"""


class TestResolvePath:
    def test_flag_beats_env(self, tmp_path, monkeypatch):
        flag = tmp_path / "flag.toml"
        env = tmp_path / "env.toml"
        monkeypatch.setenv(ENV_CONFIG, str(env))
        assert resolve_config_path(str(flag)) == flag

    def test_env_beats_default(self, tmp_path, monkeypatch):
        env = tmp_path / "env.toml"
        monkeypatch.setenv(ENV_CONFIG, str(env))
        assert resolve_config_path(None) == env

    def test_default_file_when_present(self, tmp_path, monkeypatch):
        monkeypatch.delenv(ENV_CONFIG, raising=False)
        monkeypatch.chdir(tmp_path)
        assert resolve_config_path(None) is None
        (tmp_path / "ragx.toml").write_text("top_k = 2\n")
        assert resolve_config_path(None).name == "ragx.toml"

    def test_defaults_when_nothing_configured(self, tmp_path, monkeypatch):
        monkeypatch.delenv(ENV_CONFIG, raising=False)
        monkeypatch.chdir(tmp_path)
        cfg = load_app_config(None)
        assert cfg.pipeline.top_k == 3
        assert cfg.backends.kind == "mock"
        assert cfg.chunk_tokens == 350


class TestParsing:
    def test_full_toml(self, tmp_path):
        path = tmp_path / "full.toml"
        path.write_text(FULL_TOML)
        cfg = load_app_config(str(path))
        assert cfg.pipeline.top_k == 5
        assert cfg.pipeline.candidate_depth == 30
        assert cfg.pipeline.k_rrf == 40
        assert cfg.pipeline.budget.context_tokens == 4096
        assert cfg.pipeline.rerank.target_k == 4
        assert cfg.pipeline.rerank.keep_fraction == 0.4
        assert cfg.pipeline.bm25.k1 == 1.5
        assert cfg.pipeline.bm25.b == 0.6
        assert cfg.backends.kind == "http"
        assert cfg.backends.embedder_dimension == 384
        assert cfg.sources == ["http://127.0.0.1:8001", "http://127.0.0.1:8002"]
        assert cfg.bind == "0.0.0.0:9000"
        assert cfg.hits_mode == "fraction"
        assert len(cfg.mcp_endpoints) == 1
        assert cfg.mcp_endpoints[0].name == "tracker"
        assert cfg.mcp_endpoints[0].timeout_ms == 4000

    def test_json_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"top_k": 7, "rerank": {"target_k": 2}}))
        cfg = load_app_config(str(path))
        assert cfg.pipeline.top_k == 7
        assert cfg.pipeline.rerank.target_k == 2

    def test_rerank_target_defaults_to_top_k(self):
        cfg = parse_app_config({"top_k": 6})
        assert cfg.pipeline.rerank.target_k == 6

    def test_candidate_depth_defaults_to_four_times_top_k(self):
        cfg = parse_app_config({"top_k": 5})
        assert cfg.pipeline.candidate_depth == 20

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError, match="unknown key 'top_kk'"):
            parse_app_config({"top_kk": 3})

    def test_unknown_section_key_named(self):
        with pytest.raises(ConfigError, match="budget.*unknown key 'reserve'"):
            parse_app_config({"budget": {"reserve": 1}})

    def test_wrong_type_reported_with_location(self):
        with pytest.raises(ConfigError, match="top_k"):
            parse_app_config({"top_k": "three"})

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError, match="top_k"):
            parse_app_config({"top_k": True})

    def test_int_promotes_to_float(self):
        cfg = parse_app_config({"bm25": {"k1": 2}})
        assert cfg.pipeline.bm25.k1 == 2.0

    def test_value_validation_becomes_config_error(self):
        with pytest.raises(ConfigError):
            parse_app_config({"top_k": 0})
        with pytest.raises(ConfigError):
            parse_app_config({"budget": {"context_tokens": 10, "reserved_generation_tokens": 10}})
        with pytest.raises(ConfigError):
            parse_app_config({"bm25": {"b": 2.0}})

    def test_bad_hits_mode(self):
        with pytest.raises(ConfigError, match="hits_mode"):
            parse_app_config({"hits_mode": "sometimes"})

    def test_bad_backend_kind(self):
        with pytest.raises(ConfigError, match="backends.kind"):
            parse_app_config({"backends": {"kind": "quantum"}})

    def test_sources_must_be_strings(self):
        with pytest.raises(ConfigError, match=r"sources\[1\]"):
            parse_app_config({"sources": ["http://ok", 5]})

    def test_mcp_endpoint_requires_name_and_url(self):
        with pytest.raises(ConfigError, match=r"mcp_endpoints\[0\]"):
            parse_app_config({"mcp_endpoints": [{"name": "x"}]})

    def test_malformed_toml_is_config_error(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("top_k = [unclosed")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_app_config(str(path))

    def test_unreadable_path_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_app_config(str(tmp_path / "absent.toml"))


class TestBackendFactories:
    def test_mock_kind(self, monkeypatch):
        monkeypatch.delenv(ENV_BACKEND_URL, raising=False)
        settings = BackendSettings()
        assert isinstance(build_embedder(settings), MockEmbedder)
        assert isinstance(build_generator(settings), MockGenerator)
        assert build_scorer(settings).score_pair("a", "a") == 1.0

    def test_http_kind(self, monkeypatch):
        monkeypatch.delenv(ENV_BACKEND_URL, raising=False)
        settings = BackendSettings(
            kind="http",
            base_url="http://10.0.0.5:8080",
            embedder_tag="bge",
            embedder_dimension=384,
        )
        embedder = build_embedder(settings)
        assert isinstance(embedder, HttpEmbedder)
        assert embedder.base_url == "http://10.0.0.5:8080"
        assert embedder.spec.dimension == 384
        generator = build_generator(settings)
        assert isinstance(generator, HttpGenerator)

    def test_env_overrides_http_base_url(self, monkeypatch):
        monkeypatch.setenv(ENV_BACKEND_URL, "http://172.16.0.9:9999")
        settings = BackendSettings(kind="http", base_url="http://10.0.0.5:8080")
        assert build_embedder(settings).base_url == "http://172.16.0.9:9999"
        assert build_generator(settings).base_url == "http://172.16.0.9:9999"

    def test_mock_dimension_respected(self, monkeypatch):
        monkeypatch.delenv(ENV_BACKEND_URL, raising=False)
        embedder = build_embedder(BackendSettings(embedder_dimension=32))
        assert embedder.spec.dimension == 32


class TestAppConfigDefaults:
    def test_plain_construction(self):
        cfg = AppConfig()
        assert cfg.pipeline.top_k == 3
        assert cfg.bind == "127.0.0.1:8000"
        assert cfg.mcp_endpoints == []
