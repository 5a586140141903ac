"""Semantic query cache: a stored answer is reused when the new query embeds close to a cached
one and the conversation leading up to it matches."""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .core import Query
from .gateway import Embedding, cosine
from .writer import CitationedAnswer

DEFAULT_TAU = 0.95
_WS = re.compile(r"\s+")


def context_digest(turns: Sequence[tuple[str, str]]) -> str:
    """Order-sensitive sha256 over lowercased, whitespace-normalized (query, answer) turns."""
    h = hashlib.sha256()
    for q, a in turns:
        for part in (q, a):
            norm = _WS.sub(" ", part.lower()).strip().encode("utf-8")
            h.update(len(norm).to_bytes(4, "little"))
            h.update(norm)
    return h.hexdigest()


@dataclass
class CacheEntry:
    entry_id: int
    query_text: str
    query_embedding: Embedding
    context_digest: str
    response: CitationedAnswer
    created_at: float
    hits: int = 0
    payload: Any = None


@dataclass(frozen=True)
class Hit:
    entry: CacheEntry
    similarity: float


class SemanticCache:
    def __init__(self, embed: Callable[[str], Embedding], capacity: int = 1024, tau: float = DEFAULT_TAU,
                 dim: int | None = None):
        if capacity <= 0:
            raise ValueError("cache capacity must be positive")
        self.embed = embed
        self.capacity = capacity
        self.tau = tau
        self.dim = dim
        self._entries: OrderedDict[int, CacheEntry] = OrderedDict()  # oldest hit first
        self._next_id = 0
        self._lock = threading.RLock()
        self.lookups = 0
        self.hits = 0
        self.stores = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, query: Query, tau: float | None = None) -> Hit | None:
        tau = self.tau if tau is None else tau
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        emb = self.embed(query.text)
        digest = context_digest(query.context)
        with self._lock:
            self.lookups += 1
            best: Hit | None = None
            for entry in self._entries.values():
                if entry.context_digest != digest:
                    continue
                sim = cosine(emb, entry.query_embedding)
                if sim < tau:
                    continue
                # later-created entries win ties
                if best is None or (sim, entry.entry_id) >= (best.similarity, best.entry.entry_id):
                    best = Hit(entry, sim)
            if best is None:
                return None
            self.hits += 1
            best.entry.hits += 1
            self._entries.move_to_end(best.entry.entry_id)
            return best

    def peek(self, query: Query, tau: float | None = None) -> Hit | None:
        """Like lookup but leaves counters and recency untouched."""
        tau = self.tau if tau is None else tau
        emb = self.embed(query.text)
        digest = context_digest(query.context)
        with self._lock:
            cands = [Hit(e, cosine(emb, e.query_embedding)) for e in self._entries.values()
                     if e.context_digest == digest]
        cands = [h for h in cands if h.similarity >= tau]
        return max(cands, key=lambda h: (h.similarity, h.entry.entry_id), default=None)

    def store(self, query: Query, response: CitationedAnswer, payload: Any = None) -> int | None:
        if response.degraded:
            return None
        emb = self.embed(query.text)
        if self.dim is not None and emb.dim != self.dim:
            raise ValueError(f"embedding dim {emb.dim} does not match cache dim {self.dim}")
        with self._lock:
            entry = CacheEntry(self._next_id, query.text, emb, context_digest(query.context), response,
                               time.time(), payload=payload)
            self._next_id += 1
            self._entries[entry.entry_id] = entry
            self.stores += 1
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
                self.evictions += 1
            return entry.entry_id

    def stats(self) -> dict:
        with self._lock:
            return {"lookups": self.lookups, "hits": self.hits,
                    "hit_rate": self.hits / self.lookups if self.lookups else 0.0,
                    "entries": len(self._entries), "stores": self.stores, "evictions": self.evictions}

    # -- persistence: [u32 dim][dim x f32 LE][u32 n][n bytes UTF-8 JSON] per record ---------

    def save(self, path: str | Path) -> None:
        # write-then-rename so a crash never leaves a truncated file behind
        tmp = Path(f"{path}.tmp")
        with self._lock, open(tmp, "wb") as fh:
            for e in self._entries.values():
                vec = np.asarray(e.query_embedding.values, dtype="<f4")
                meta = json.dumps({
                    "query_text": e.query_text, "context_digest": e.context_digest,
                    "response": e.response.to_wire(), "created_at": e.created_at, "hits": e.hits,
                    "payload": e.payload,
                }, ensure_ascii=False).encode("utf-8")
                fh.write(struct.pack("<I", vec.size))
                fh.write(vec.tobytes())
                fh.write(struct.pack("<I", len(meta)))
                fh.write(meta)
        os.replace(tmp, path)

    def load(self, path: str | Path) -> int:
        data = Path(path).read_bytes()
        off = n = 0
        with self._lock:
            while off < len(data):
                (dim,) = struct.unpack_from("<I", data, off)
                off += 4
                vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
                off += 4 * dim
                (size,) = struct.unpack_from("<I", data, off)
                off += 4
                meta = json.loads(data[off:off + size].decode("utf-8"))
                off += size
                entry = CacheEntry(self._next_id, meta["query_text"], Embedding(vec), meta["context_digest"],
                                   CitationedAnswer.from_wire(meta["response"]), meta["created_at"],
                                   meta.get("hits", 0), meta.get("payload"))
                self._next_id += 1
                self._entries[entry.entry_id] = entry
                n += 1
                while len(self._entries) > self.capacity:
                    self._entries.popitem(last=False)
                    self.evictions += 1
        return n
