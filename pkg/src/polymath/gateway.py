"""Uniform client layer for chat-completion and embedding backends.

One wire contract (message-list request, choices-array response) reaches any
of the supported hosted models; a deterministic scripted mock stands in for
them in tests, keyed on (template hint, prompt hash). Temperature 0 plus the
mock makes every pipeline built on this module reproducible run to run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import (
    AuthFailureError,
    BackendError,
    BackendTimeoutError,
    BudgetExhaustedError,
    DimDriftError,
    JsonIrrecoverableError,
    MalformedBackendReplyError,
    TransientBackendError,
)

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 384


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None


@dataclass
class BackendProfile:
    name: str
    endpoint: str = ""
    model: str = ""
    auth_token_env: str = ""
    timeout_s: float = 30.0
    retry_budget: int = 2
    max_in_flight: int = 4
    backoff_base_s: float = 0.25


def _validate_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    for i, m in enumerate(messages):
        if m.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {m.role!r}")
        if not m.content:
            raise ValueError("message content must be non-empty")
        if m.role == "system" and i != 0:
            raise ValueError("system message only allowed at position 0")


class ChatBackend:
    """Interface shared by the HTTP client and the scripted mock."""

    name: str = "backend"
    profile: Optional[BackendProfile] = None

    def complete(self, messages: Sequence[ChatMessage], params: DecodeParams,
                 hint: Optional[str] = None) -> str:
        raise NotImplementedError

    def healthy(self) -> bool:
        return True


class HttpChatBackend(ChatBackend):
    """Chat-completions client for the de-facto industry HTTP shape."""

    def __init__(self, profile: BackendProfile, token: Optional[str] = None):
        self.profile = profile
        self.name = profile.name
        self._token = token

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = self._token
        if token is None and self.profile.auth_token_env:
            import os

            token = os.environ.get(self.profile.auth_token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, messages, params, hint=None):
        payload = {
            "model": self.profile.model or self.profile.name,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        try:
            resp = httpx.post(
                self.profile.endpoint,
                json=payload,
                headers=self._headers(),
                timeout=self.profile.timeout_s,
            )
        except httpx.TimeoutException as e:
            raise BackendTimeoutError(f"{self.name}: request timed out") from e
        except httpx.HTTPError as e:
            raise TransientBackendError(f"{self.name}: transport failure: {e}") from e
        if resp.status_code in (401, 403):
            raise AuthFailureError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 500:
            raise TransientBackendError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as e:
            raise MalformedBackendReplyError(f"{self.name}: unexpected response shape") from e
        if not isinstance(content, str) or not content:
            raise MalformedBackendReplyError(f"{self.name}: empty completion")
        return content

    def healthy(self) -> bool:
        try:
            resp = httpx.get(self.profile.endpoint, timeout=2.0)
            return resp.status_code < 500
        except httpx.HTTPError:
            return False


def prompt_hash(messages: Sequence[ChatMessage]) -> str:
    """Hash of the last user message: the mock's secondary script key."""
    for m in reversed(messages):
        if m.role == "user":
            return hashlib.sha256(m.content.encode("utf-8")).hexdigest()
    return hashlib.sha256(b"").hexdigest()


class MockChatBackend(ChatBackend):
    """Deterministic scripted backend: the primary test substrate.

    Replies are selected by (template hint, prompt hash); entries with a null
    hash match any prompt for that template. Unknown keys fall back to
    ``default_reply``. Every call is recorded for assertion.
    """

    def __init__(self, default_reply: str = "OK", name: str = "mock",
                 profile: Optional[BackendProfile] = None):
        self.name = name
        self.profile = profile or BackendProfile(name=name, retry_budget=0)
        self.default_reply = default_reply
        self._rules: dict[tuple[Optional[str], Optional[str]], str] = {}
        self.calls: list[dict] = []
        self._lock = threading.Lock()

    def script(self, template: Optional[str], reply: str,
               prompt_hash_hex: Optional[str] = None) -> "MockChatBackend":
        self._rules[(template, prompt_hash_hex)] = reply
        return self

    def script_json(self, template: Optional[str], obj,
                    prompt_hash_hex: Optional[str] = None) -> "MockChatBackend":
        return self.script(template, json.dumps(obj), prompt_hash_hex)

    @classmethod
    def from_script_file(cls, path, default_reply: str = "OK",
                         name: str = "mock") -> "MockChatBackend":
        backend = cls(default_reply=default_reply, name=name)
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                match = entry.get("match", {})
                backend.script(match.get("template"), entry["reply"],
                               match.get("prompt_hash"))
        return backend

    def complete(self, messages, params, hint=None):
        ph = prompt_hash(messages)
        with self._lock:
            self.calls.append({
                "hint": hint,
                "messages": [(m.role, m.content) for m in messages],
                "params": params,
            })
        for key in ((hint, ph), (hint, None), (None, None)):
            if key in self._rules:
                return self._rules[key]
        return self.default_reply

    def call_count(self) -> int:
        with self._lock:
            return len(self.calls)


def complete_chat(backend: ChatBackend, messages: Sequence[ChatMessage],
                  params: Optional[DecodeParams] = None, *,
                  hint: Optional[str] = None) -> str:
    """Run one chat completion with transient-failure retries.

    Attempts = retry budget + 1; exponential backoff between attempts.
    Requests are idempotent reads by contract, so retrying is safe.
    """
    params = params or DecodeParams()
    _validate_messages(messages)
    profile = backend.profile or BackendProfile(name=backend.name)
    slots = getattr(backend, "_slots", None)
    if slots is None:
        slots = threading.Semaphore(max(1, profile.max_in_flight))
        backend._slots = slots
    attempts = profile.retry_budget + 1
    last_err: Optional[Exception] = None
    with slots:
        for attempt in range(attempts):
            try:
                reply = backend.complete(messages, params, hint=hint)
            except TransientBackendError as e:
                last_err = e
                logger.info("backend %s attempt %d/%d failed: %s",
                            backend.name, attempt + 1, attempts, e)
                if attempt + 1 < attempts:
                    time.sleep(profile.backoff_base_s * (2 ** attempt))
                continue
            if not reply:
                raise MalformedBackendReplyError(f"{backend.name}: empty reply")
            return reply
    raise BudgetExhaustedError(
        f"{backend.name}: retry budget ({profile.retry_budget}) exhausted"
    ) from last_err


_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def _balanced_candidates(text: str):
    """Yield balanced {...} substrings, outermost-first by start position."""
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth = 0
        in_str = False
        escape = False
        for end in range(start, len(text)):
            c = text[end]
            if in_str:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_str = False
                continue
            if c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:end + 1]
                    break


def extract_json_value(text: str):
    """Best-effort JSON extraction. Returns (value, None) or (None, error)."""
    stripped = text.strip()
    try:
        return json.loads(stripped), None
    except json.JSONDecodeError as e:
        err = str(e)
    for blob in _FENCE.findall(text):
        try:
            return json.loads(blob.strip()), None
        except json.JSONDecodeError:
            pass
    for candidate in _balanced_candidates(text):
        try:
            return json.loads(candidate), None
        except json.JSONDecodeError:
            continue
    return None, err


def complete_json(backend: ChatBackend, messages: Sequence[ChatMessage],
                  params: Optional[DecodeParams] = None, *,
                  hint: Optional[str] = None) -> dict:
    """complete_chat plus JSON extraction; always returns an object.

    Extraction order: direct parse, code-fence stripping, first balanced
    brace substring. On failure, one repair round-trip quotes the parse
    error back to the model; if that also fails, JsonIrrecoverableError
    carries the raw text for the trace.
    """
    raw = complete_chat(backend, messages, params, hint=hint)
    value, err = extract_json_value(raw)
    if value is None:
        repair = list(messages) + [
            ChatMessage("assistant", raw),
            ChatMessage("user",
                        f"Your reply could not be parsed as JSON ({err}). "
                        "Respond again with only a valid JSON object."),
        ]
        raw2 = complete_chat(backend, repair, params, hint=hint)
        value, err = extract_json_value(raw2)
        if value is None:
            raise JsonIrrecoverableError(f"unparseable JSON reply: {err}", raw_text=raw2)
    if not isinstance(value, dict):
        return {"value": value}
    return value


# --- embeddings ---

class EmbeddingBackend:
    name: str = "embedder"
    dim: Optional[int] = None

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        raise NotImplementedError


class HashEmbedder(EmbeddingBackend):
    """Seeded pseudo-embeddings: text hashes to a stable unit vector.

    No model download needed; identical text always maps to the identical
    vector, across runs and machines.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        self.name = "hash-embedder"
        self.dim = dim

    def embed(self, texts):
        out = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            out.append(vec)
        return out


class HttpEmbedder(EmbeddingBackend):
    """Embeddings endpoint client (request {"input": [...]}, response data[*].embedding)."""

    def __init__(self, endpoint: str, model: str = "", timeout_s: float = 30.0):
        self.name = "http-embedder"
        self.endpoint = endpoint
        self.model = model
        self.timeout_s = timeout_s
        self.dim = None

    def embed(self, texts):
        payload = {"input": list(texts)}
        if self.model:
            payload["model"] = self.model
        try:
            resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout_s)
        except httpx.TimeoutException as e:
            raise BackendTimeoutError("embedding request timed out") from e
        except httpx.HTTPError as e:
            raise TransientBackendError(f"embedding transport failure: {e}") from e
        if resp.status_code >= 400:
            raise BackendError(f"embedding HTTP {resp.status_code}")
        try:
            rows = [np.asarray(d["embedding"], dtype=float) for d in resp.json()["data"]]
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise MalformedBackendReplyError("unexpected embedding response shape") from e
        return rows


def embed_text(backend: EmbeddingBackend, texts: Sequence[str]) -> list[np.ndarray]:
    """Embed texts: one L2-normalized fixed-dimension vector per text."""
    if any(not t for t in texts):
        raise ValueError("texts must be non-empty")
    vectors = backend.embed(texts)
    out = []
    for vec in vectors:
        vec = np.asarray(vec, dtype=float)
        if backend.dim is None:
            backend.dim = vec.shape[0]
        elif vec.shape[0] != backend.dim:
            raise DimDriftError(
                f"embedding dim changed: {backend.dim} -> {vec.shape[0]}")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise MalformedBackendReplyError("zero embedding vector")
        out.append(vec / norm)
    return out


# --- backend configuration files ---

@dataclass
class BackendConfig:
    backends: dict[str, ChatBackend] = field(default_factory=dict)
    default: str = ""
    embedder: EmbeddingBackend = field(default_factory=HashEmbedder)

    def get(self, name: Optional[str] = None) -> ChatBackend:
        name = name or self.default
        if name not in self.backends:
            raise BackendError(f"unknown backend: {name!r}")
        return self.backends[name]


def load_backends_file(path) -> BackendConfig:
    """Load a backends config: profiles, default selection, embedder choice.

    Schema: {"default": name,
             "backends": [{"name", "type": "http"|"mock", ...}],
             "embedder": {"type": "hash"|"http", ...}}
    """
    import pathlib

    path = pathlib.Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    cfg = BackendConfig()
    for spec in raw.get("backends", []):
        name = spec["name"]
        kind = spec.get("type", "http")
        if kind == "mock":
            script = spec.get("script")
            if script:
                script_path = pathlib.Path(script)
                if not script_path.is_absolute():
                    script_path = path.parent / script_path
                backend = MockChatBackend.from_script_file(
                    script_path, default_reply=spec.get("default_reply", "OK"),
                    name=name)
            else:
                backend = MockChatBackend(
                    default_reply=spec.get("default_reply", "OK"), name=name)
        elif kind == "http":
            profile = BackendProfile(
                name=name,
                endpoint=spec["endpoint"],
                model=spec.get("model", ""),
                auth_token_env=spec.get("auth_token_env", ""),
                timeout_s=spec.get("timeout_s", 30.0),
                retry_budget=spec.get("retry_budget", 2),
                max_in_flight=spec.get("max_in_flight", 4),
            )
            backend = HttpChatBackend(profile)
        else:
            raise BackendError(f"unknown backend type: {kind!r}")
        cfg.backends[name] = backend
    cfg.default = raw.get("default") or (next(iter(cfg.backends), ""))
    emb = raw.get("embedder", {"type": "hash"})
    if emb.get("type", "hash") == "hash":
        cfg.embedder = HashEmbedder(dim=emb.get("dim", DEFAULT_EMBED_DIM))
    else:
        cfg.embedder = HttpEmbedder(emb["endpoint"], model=emb.get("model", ""))
    return cfg
