"""Language-model and embedding access behind one interface.

``MockProvider`` answers chat requests from a JSONL fixture table and derives
embeddings from hashed character trigrams, so every algorithm downstream runs
offline and deterministically. ``HttpProvider`` proxies to a remote endpoint
configured through ``GATEWAY_URL`` / ``GATEWAY_KEY``.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import trace
from .core import AISearchError

ROLES = frozenset({"system", "user", "assistant", "tool"})
EMBED_DIM = 256


class GatewayError(AISearchError):
    pass


class NoFixtureMatch(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class FixtureError(GatewayError):
    """Fixture table is malformed or ambiguous."""


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 512
    tag: str = ""

    def __post_init__(self):
        msgs = tuple((str(r), str(t)) for r, t in self.messages)
        if not msgs:
            raise ValueError("chat request needs at least one message")
        for role, _ in msgs:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "messages", msgs)

    @property
    def text(self) -> str:
        return "\n".join(t for _, t in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        if self.token_logprobs is not None:
            lps = tuple((str(tok), float(lp)) for tok, lp in self.token_logprobs)
            if any(lp > 0 for _, lp in lps):
                raise ValueError("log-probabilities must be <= 0")
            object.__setattr__(self, "token_logprobs", lps)

    def logprob_of(self, token: str) -> float | None:
        if not self.token_logprobs:
            return None
        for tok, lp in self.token_logprobs:
            if tok.strip().lower() == token.lower():
                return lp
        return None


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("embedding must have positive dimension")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def normalized(self) -> "Embedding":
        n = float(np.linalg.norm(self.values))
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Embedding(self.values / n)

    def __eq__(self, other) -> bool:
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    value = float(np.dot(a.values, b.values) / (na * nb))
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class Fixture:
    tag: str
    contains: tuple[str, ...] = ()
    response: str = ""
    logprobs: tuple[tuple[str, float], ...] | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.tag != request.tag:
            return False
        text = request.text
        return all(pat in text for pat in self.contains)

    @classmethod
    def from_dict(cls, raw: dict) -> "Fixture":
        if "tag" not in raw or "response" not in raw:
            raise FixtureError(f"fixture needs 'tag' and 'response': {raw!r}")
        match = raw.get("match") or {}
        lps = raw.get("logprobs")
        return cls(
            tag=str(raw["tag"]),
            contains=tuple(str(c) for c in match.get("contains", [])),
            response=str(raw["response"]),
            logprobs=tuple((str(t), float(lp)) for t, lp in lps) if lps else None,
        )


def load_fixtures(paths: Iterable[str | Path]) -> list[Fixture]:
    fixtures: list[Fixture] = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("//"):
                    continue
                try:
                    fixtures.append(Fixture.from_dict(json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise FixtureError(f"{path}:{lineno}: {exc}") from exc
    return fixtures


def check_ambiguity(fixtures: Sequence[Fixture]) -> None:
    """Reject tables where a fixture can never fire because an earlier one always wins."""
    for j, later in enumerate(fixtures):
        for earlier in fixtures[:j]:
            if earlier.tag == later.tag and set(earlier.contains) <= set(later.contains):
                raise FixtureError(
                    f"fixture {j} (tag {later.tag!r}, contains {list(later.contains)}) is shadowed "
                    f"by an earlier fixture with contains {list(earlier.contains)}"
                )


_NON_WORD = re.compile(r"[^\w\s]+")
_SPACES = re.compile(r"\s+")


def _normalize(text: str) -> str:
    cleaned = _SPACES.sub(" ", _NON_WORD.sub(" ", text.lower())).strip()
    return cleaned or text.lower().strip()


@lru_cache(maxsize=8192)
def trigram_embedding(text: str, seed: int = 0, dim: int = EMBED_DIM) -> tuple[float, ...]:
    """Signed feature hashing of character trigrams, L2-normalized."""
    norm = f" {_normalize(text)} "
    vec = np.zeros(dim)
    key = seed.to_bytes(8, "little", signed=True)
    for i in range(len(norm) - 2):
        h = hashlib.blake2b(norm[i:i + 3].encode("utf-8"), digest_size=8, key=key).digest()
        n = int.from_bytes(h, "little")
        vec[n % dim] += 1.0 if (n >> 63) & 1 else -1.0
    length = float(np.linalg.norm(vec))
    if length == 0.0:
        # signed counts cancelled; fall back to a single stable coordinate
        vec[int.from_bytes(hashlib.blake2b(norm.encode(), digest_size=4, key=key).digest(), "little") % dim] = 1.0
        length = 1.0
    return tuple(vec / length)


class Provider(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, text: str) -> Embedding: ...


class MockProvider:
    """Fixture-driven provider; a pure function of (fixtures, request, seed)."""

    def __init__(self, fixtures: Sequence[Fixture] = (), seed: int = 0, dim: int = EMBED_DIM):
        fixtures = list(fixtures)
        check_ambiguity(fixtures)
        self._fixtures = tuple(fixtures)
        self.seed = seed
        self.dim = dim

    @classmethod
    def from_files(cls, *paths: str | Path, seed: int = 0) -> "MockProvider":
        return cls(load_fixtures(paths), seed=seed)

    @property
    def fixtures(self) -> tuple[Fixture, ...]:
        return self._fixtures

    def chat(self, request: ChatRequest) -> ChatResponse:
        for fx in self._fixtures:
            if fx.matches(request):
                return ChatResponse(fx.response, fx.logprobs)
        preview = request.messages[-1][1][:120].replace("\n", " ")
        raise NoFixtureMatch(f"no fixture for tag {request.tag!r}: {preview!r}")

    def embed(self, text: str) -> Embedding:
        return Embedding(np.array(trigram_embedding(text, self.seed, self.dim)))


class HttpProvider:
    """Remote provider. POST {url}/chat and {url}/embed with JSON bodies."""

    def __init__(self, url: str, key: str | None = None, timeout_s: float = 30.0):
        self.url = url.rstrip("/")
        self.key = key
        self.timeout_s = timeout_s

    @classmethod
    def from_env(cls) -> "HttpProvider":
        url = os.environ.get("GATEWAY_URL")
        if not url:
            raise GatewayError("GATEWAY_URL is not set")
        return cls(url, os.environ.get("GATEWAY_KEY"))

    def _post(self, route: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        req = urllib.request.Request(self.url + route, data=json.dumps(payload).encode(), headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"{route}: {exc}") from exc

    def chat(self, request: ChatRequest) -> ChatResponse:
        body = self._post("/chat", {
            "tag": request.tag,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
        if "text" not in body:
            raise TransportError("chat response without 'text'")
        lps = body.get("logprobs")
        return ChatResponse(body["text"], tuple(map(tuple, lps)) if lps else None)

    def embed(self, text: str) -> Embedding:
        body = self._post("/embed", {"text": text})
        return Embedding(np.asarray(body["values"], dtype=float)).normalized()


@dataclass
class Gateway:
    """Single entry point for chat and embedding calls: validation, budget, trace."""

    provider: Provider
    max_calls: int | None = None
    _calls: int = field(default=0, init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def calls(self) -> int:
        return self._calls

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if self.max_calls is not None and self._calls >= self.max_calls:
                raise BudgetExceeded(f"gateway budget of {self.max_calls} calls exhausted")
            self._calls += 1
        trace.emit("chat_request", tag=request.tag, messages=[list(m) for m in request.messages])
        try:
            response = self.provider.chat(request)
        except GatewayError as exc:
            trace.emit("chat_error", tag=request.tag, error=f"{type(exc).__name__}: {exc}")
            raise
        trace.emit("chat_response", tag=request.tag, text=response.text)
        return response

    def ask(self, tag: str, user: str, system: str | None = None, **kw) -> ChatResponse:
        messages = []
        if system:
            messages.append(("system", system))
        messages.append(("user", user))
        return self.chat(ChatRequest(tuple(messages), tag=tag, **kw))

    def embed(self, text: str) -> Embedding:
        if not isinstance(text, str) or not text.strip():
            raise ValueError("cannot embed empty text")
        return self.provider.embed(text)


def cosine_values(a: Sequence[float], b: Sequence[float]) -> float:
    return cosine(Embedding(np.asarray(a)), Embedding(np.asarray(b)))

