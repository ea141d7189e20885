import http.server
import json
import threading

import numpy as np
import pytest

from conftest import SequenceBackend
from polymath.errors import (
    AuthFailureError,
    BudgetExhaustedError,
    DimDriftError,
    JsonIrrecoverableError,
    TransientBackendError,
)
from polymath.gateway import (
    BackendProfile,
    ChatMessage,
    EmbeddingBackend,
    HashEmbedder,
    HttpChatBackend,
    MockChatBackend,
    complete_chat,
    complete_json,
    embed_text,
    extract_json_value,
    load_backends_file,
)

USER = [ChatMessage("user", "hello there")]


def test_mock_echo_contract():
    backend = MockChatBackend().script(None, "hello")
    assert complete_chat(backend, USER) == "hello"


def test_mock_keyed_on_hint_and_prompt_hash():
    backend = MockChatBackend(default_reply="default")
    backend.script("plan", "by-hint")
    from polymath.gateway import prompt_hash

    backend.script("plan", "by-hash", prompt_hash(USER))
    assert complete_chat(backend, USER, hint="plan") == "by-hash"
    other = [ChatMessage("user", "different prompt")]
    assert complete_chat(backend, other, hint="plan") == "by-hint"
    assert complete_chat(backend, other, hint="unknown") == "default"


def test_message_validation():
    backend = MockChatBackend()
    with pytest.raises(ValueError):
        complete_chat(backend, [])
    with pytest.raises(ValueError):
        complete_chat(backend, [ChatMessage("user", "")])
    with pytest.raises(ValueError):
        complete_chat(backend, [ChatMessage("user", "q"),
                                ChatMessage("system", "late system")])


def test_retry_two_failures_then_success():
    backend = SequenceBackend([TransientBackendError("500"),
                               TransientBackendError("500"),
                               "recovered"], retry_budget=3)
    assert complete_chat(backend, USER) == "recovered"
    assert backend.calls == 3


def test_budget_zero_failing_backend_exhausts():
    backend = SequenceBackend([TransientBackendError("500")], retry_budget=0)
    with pytest.raises(BudgetExhaustedError):
        complete_chat(backend, USER)
    assert backend.calls == 1


def test_extract_json_strategies():
    assert extract_json_value('{"a": 1}')[0] == {"a": 1}
    fenced = "```json\n{\"tags\":[\"biology\"]}\n```"
    assert extract_json_value(fenced)[0] == {"tags": ["biology"]}
    embedded = 'Sure, here you go: {"answer": "B", "explanation": "x"} hope it helps'
    assert extract_json_value(embedded)[0] == {"answer": "B", "explanation": "x"}
    nested = 'prefix {"outer": {"inner": [1, 2]}, "s": "brace } in string"} suffix'
    assert extract_json_value(nested)[0]["outer"] == {"inner": [1, 2]}
    value, err = extract_json_value("no json here")
    assert value is None and err


def test_complete_json_wraps_non_objects():
    backend = MockChatBackend().script(None, "[1, 2, 3]")
    assert complete_json(backend, USER) == {"value": [1, 2, 3]}


def test_complete_json_repair_round_trip():
    backend = SequenceBackend(["not json at all", '{"fixed": true}'])
    assert complete_json(backend, USER) == {"fixed": True}
    assert backend.calls == 2


def test_complete_json_irrecoverable_carries_raw():
    backend = MockChatBackend(default_reply="still not json")
    with pytest.raises(JsonIrrecoverableError) as exc:
        complete_json(backend, USER)
    assert "still not json" in exc.value.raw_text


def test_hash_embedder_deterministic_and_normalized():
    embedder = HashEmbedder(dim=384)
    a1, a2 = embed_text(embedder, ["same text", "same text"])
    assert np.array_equal(a1, a2)
    assert abs(np.linalg.norm(a1) - 1.0) < 1e-6
    b = embed_text(embedder, ["other text"])[0]
    assert not np.array_equal(a1, b)


def test_hash_embedder_frozen_value():
    # Frozen from the seeded-hash construction; guards cross-run stability.
    vec = HashEmbedder(dim=4).embed(["alpha"])[0]
    assert np.allclose(
        vec, [0.09039602, -0.72915747, -0.11509672, 0.66851379], atol=1e-6)


def test_embed_rejects_empty_text():
    with pytest.raises(ValueError):
        embed_text(HashEmbedder(dim=8), ["ok", ""])


def test_dim_drift_detected():
    class DriftingEmbedder(EmbeddingBackend):
        def __init__(self):
            self.name = "drift"
            self.dim = None
            self._n = 0

        def embed(self, texts):
            self._n += 1
            size = 4 if self._n == 1 else 8
            return [np.ones(size) for _ in texts]

    embedder = DriftingEmbedder()
    embed_text(embedder, ["a"])
    with pytest.raises(DimDriftError):
        embed_text(embedder, ["b"])


class _Handler(http.server.BaseHTTPRequestHandler):
    behavior = "ok"
    fail_remaining = 0

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        if _Handler.behavior == "auth":
            self.send_response(401)
            self.end_headers()
            return
        if _Handler.fail_remaining > 0:
            _Handler.fail_remaining -= 1
            self.send_response(502)
            self.end_headers()
            return
        reply = {"choices": [{"message": {
            "content": f"echo:{body['messages'][-1]['content']}"}}]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_backend():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.behavior = "ok"
    _Handler.fail_remaining = 0
    endpoint = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    profile = BackendProfile(name="test-http", endpoint=endpoint,
                             model="test-model", retry_budget=3,
                             backoff_base_s=0.001, timeout_s=5.0)
    yield HttpChatBackend(profile)
    server.shutdown()


def test_http_backend_happy_path(http_backend):
    assert complete_chat(http_backend, USER) == "echo:hello there"


def test_http_backend_retries_5xx(http_backend):
    _Handler.fail_remaining = 2
    assert complete_chat(http_backend, USER) == "echo:hello there"


def test_http_backend_auth_failure(http_backend):
    _Handler.behavior = "auth"
    with pytest.raises(AuthFailureError):
        complete_chat(http_backend, USER)


def test_load_backends_file(tmp_path):
    script = tmp_path / "script.jsonl"
    script.write_text(json.dumps({
        "match": {"template": "plan_query_v1", "prompt_hash": None},
        "reply": '{"tags": ["biology"]}'}) + "\n", encoding="utf-8")
    cfg_path = tmp_path / "backends.json"
    cfg_path.write_text(json.dumps({
        "default": "mock",
        "backends": [
            {"name": "mock", "type": "mock", "script": "script.jsonl",
             "default_reply": "fallback"},
            {"name": "gpt-4o", "type": "http",
             "endpoint": "http://example.invalid/v1/chat/completions"},
        ],
        "embedder": {"type": "hash", "dim": 16},
    }), encoding="utf-8")
    cfg = load_backends_file(cfg_path)
    assert cfg.default == "mock"
    assert set(cfg.backends) == {"mock", "gpt-4o"}
    assert cfg.embedder.dim == 16
    reply = complete_chat(cfg.get("mock"), USER, hint="plan_query_v1")
    assert json.loads(reply) == {"tags": ["biology"]}
    assert complete_chat(cfg.get(), USER, hint="other") == "fallback"
