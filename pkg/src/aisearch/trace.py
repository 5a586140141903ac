"""Append-only trace events with monotonic sequence numbers.

Components emit through :func:`emit`; the active :class:`Tracer` is carried in a
context variable so worker threads see it when submitted via :func:`run_in_context`.
"""

from __future__ import annotations

import contextvars
import datetime as _dt
import itertools
import json
import threading
import time
import uuid
from pathlib import Path
from typing import Any, Callable, Iterator


_SEQ = itertools.count(1)
_SEQ_LOCK = threading.Lock()


def next_seq() -> int:
    with _SEQ_LOCK:
        return next(_SEQ)


class TraceStore:
    """In-memory index of events by trace id, optionally mirrored to one JSONL file per day."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._events: dict[str, list[dict]] = {}
        self._lock = threading.Lock()
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        for path in sorted(self.directory.glob("trace-*.jsonl")):
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        event = json.loads(line)
                        self._events.setdefault(event["trace_id"], []).append(event)

    def append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, default=str)
        with self._lock:
            self._events.setdefault(event["trace_id"], []).append(event)
            if self.directory:
                day = _dt.date.today().isoformat()
                with (self.directory / f"trace-{day}.jsonl").open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

    def get(self, trace_id: str) -> list[dict]:
        with self._lock:
            return list(self._events.get(trace_id, []))

    def __contains__(self, trace_id: str) -> bool:
        with self._lock:
            return trace_id in self._events


class Tracer:
    def __init__(self, trace_id: str | None = None, store: TraceStore | None = None):
        self.trace_id = trace_id or uuid.uuid4().hex[:16]
        self.store = store
        self.events: list[dict] = []
        self._lock = threading.Lock()

    def emit(self, kind: str, **fields: Any) -> dict:
        event = {"seq": next_seq(), "trace_id": self.trace_id, "kind": kind,
                 "t_ns": time.monotonic_ns(), **fields}
        with self._lock:
            self.events.append(event)
        if self.store is not None:
            self.store.append(event)
        return event

    def of_kind(self, kind: str) -> list[dict]:
        with self._lock:
            return [e for e in self.events if e["kind"] == kind]

    def to_jsonl(self) -> str:
        with self._lock:
            return "".join(json.dumps(e, sort_keys=True, default=str) + "\n" for e in self.events)


_CURRENT: contextvars.ContextVar[Tracer | None] = contextvars.ContextVar("aisearch_tracer", default=None)


def current() -> Tracer | None:
    return _CURRENT.get()


def emit(kind: str, **fields: Any) -> dict | None:
    tracer = _CURRENT.get()
    if tracer is None:
        return None
    return tracer.emit(kind, **fields)


class activate:
    """Context manager making ``tracer`` the active tracer."""

    def __init__(self, tracer: Tracer):
        self.tracer = tracer
        self._token = None

    def __enter__(self) -> Tracer:
        self._token = _CURRENT.set(self.tracer)
        return self.tracer

    def __exit__(self, *exc) -> None:
        _CURRENT.reset(self._token)


def run_in_context(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Wrap ``fn`` so it runs inside a copy of the caller's context (for thread pools)."""
    ctx = contextvars.copy_context()

    def wrapper(*args, **kwargs):
        return ctx.copy().run(fn, *args, **kwargs)

    return wrapper


def iter_events(events: list[dict], kind: str) -> Iterator[dict]:
    return (e for e in events if e["kind"] == kind)
