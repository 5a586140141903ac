"""HTTP service: search endpoint with the semantic cache in front, trace lookup, tool admin,
MCP JSON-RPC, cache statistics."""

from __future__ import annotations

import json
import logging
import os
import re
import signal
import threading
import uuid
from dataclasses import asdict, dataclass, field, fields
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

from . import trace
from .cache import SemanticCache
from .core import Query
from .executor import ExecutionBudget
from .gateway import Gateway, HttpProvider, MockProvider
from .orchestrator import Episode, Orchestrator
from .prompts import PromptBook
from .retrieval import EMPTY_GRAPH, SceneGraph
from .tools.builtin import Builtins, load_corpus
from .tools.clustering import cluster_registry
from .tools.draft import refine_documentation
from .tools.registry import (DuplicateTool, InvalidManifest, Registry, ToolManifest, UnknownTool,
                             handle_jsonrpc)
from .writer import CitationedAnswer

log = logging.getLogger("aisearch.service")

DATA = Path(__file__).parent / "data"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    gateway: str = "mock"  # "mock" or "http" (GATEWAY_URL / GATEWAY_KEY)
    fixtures: list[str] = field(default_factory=lambda: [str(DATA / "fixtures.jsonl")])
    registry: str = str(DATA / "registry.json")
    scenes: str | None = str(DATA / "scenes.json")
    corpus: str = str(DATA / "corpus.json")
    prompt_dir: str = str(DATA / "prompts")
    trace_dir: str | None = None
    cache_file: str | None = None
    boundary_cap: int = 12
    alpha: float = 0.3
    max_tool_calls_per_vertex: int = 3
    per_call_timeout_ms: float = 5000.0
    max_parallelism: int = 8
    max_replans: int = 2
    max_model_calls: int | None = 200
    cache_capacity: int = 1024
    cache_tau: float = 0.95
    toolkits_k: int | None = 4
    seed: int = 0

    def validate(self) -> None:
        paths = [self.registry, self.corpus, self.prompt_dir]
        if self.gateway == "mock":
            paths += self.fixtures
        if self.scenes:
            paths.append(self.scenes)
        for p in paths:
            if not Path(p).exists():
                raise ValueError(f"configured path does not exist: {p}")
        for name in ("port", "boundary_cap", "max_tool_calls_per_vertex", "per_call_timeout_ms",
                     "max_parallelism", "cache_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.cache_tau <= 1.0:
            raise ValueError("cache_tau must lie in (0, 1]")
        if self.gateway not in ("mock", "http"):
            raise ValueError("gateway must be 'mock' or 'http'")

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides: Any) -> "ServiceConfig":
        raw: dict[str, Any] = {}
        path = path or os.environ.get("SERVICE_CONFIG")
        if path:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
            base = Path(path).resolve().parent
            for key in ("registry", "scenes", "corpus", "prompt_dir", "trace_dir", "cache_file"):
                if raw.get(key) and not Path(raw[key]).is_absolute():
                    raw[key] = str(base / raw[key])
            if "fixtures" in raw:
                raw["fixtures"] = [p if Path(p).is_absolute() else str(base / p) for p in raw["fixtures"]]
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**raw)
        cfg.validate()
        return cfg


class Runtime:
    """Everything a request needs, built once from a config."""

    def __init__(self, config: ServiceConfig, provider=None):
        self.config = config
        self.prompts = PromptBook(config.prompt_dir)
        if provider is None:
            provider = (MockProvider.from_files(*config.fixtures) if config.gateway == "mock"
                        else HttpProvider.from_env())
        self.provider = provider
        self.store = trace.TraceStore(config.trace_dir)
        self.registry = Registry.from_file(config.registry, Builtins(load_corpus(config.corpus)))
        self._graph_lock = threading.Lock()
        self.graph = self._load_graph()
        if config.toolkits_k:
            cluster_registry(self.registry, Gateway(provider), k=min(config.toolkits_k, len(self.registry)),
                             seed=config.seed)
        self.cache = SemanticCache(provider.embed, config.cache_capacity, config.cache_tau)
        if config.cache_file and Path(config.cache_file).exists():
            self.cache.load(config.cache_file)
        self.budget = ExecutionBudget(config.max_tool_calls_per_vertex, config.per_call_timeout_ms,
                                      config.max_parallelism)

    def _load_graph(self) -> SceneGraph:
        if not self.config.scenes:
            return EMPTY_GRAPH
        graph = SceneGraph.load(self.config.scenes)
        graph.check_tools(self.registry.ids())
        return graph

    def reload_scenes(self) -> SceneGraph:
        graph = self._load_graph()
        with self._graph_lock:
            self.graph = graph
        return graph

    def orchestrator(self) -> Orchestrator:
        # a fresh gateway per episode gives each request its own call budget
        gateway = Gateway(self.provider, self.config.max_model_calls)
        return Orchestrator(gateway, self.registry, self.graph, self.budget, self.config.boundary_cap,
                            self.config.alpha, self.config.max_replans, self.prompts, self.store)

    def search(self, query: Query) -> dict:
        hit = self.cache.lookup(query)
        if hit is not None:
            tracer = trace.Tracer(store=self.store)
            tracer.emit("cache_hit", query=query.text, cached_query=hit.entry.query_text,
                        similarity=hit.similarity)
            payload = hit.entry.payload or {}
            return {"answer": hit.entry.response.to_wire(), "answer_text": hit.entry.response.text,
                    "config_used": payload.get("config_used"), "trace_id": tracer.trace_id, "cached": True}
        episode: Episode = self.orchestrator().run_episode(query)
        answer: CitationedAnswer = episode.answer
        self.cache.store(query, answer, payload={"config_used": episode.config.value})
        if self.config.cache_file:
            self.cache.save(self.config.cache_file)
        return {"answer": answer.to_wire(), "answer_text": answer.text, "config_used": episode.config.value,
                "trace_id": episode.trace_id, "cached": False}


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


_REFINE = re.compile(r"^/v1/tools/([^/]+)/refine$")
_TRACE = re.compile(r"^/v1/trace/([^/]+)$")


class Handler(BaseHTTPRequestHandler):
    runtime: Runtime  # bound by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: Any, trace_id: str) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("X-Trace-Id", trace_id)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HttpError(400, f"malformed JSON body: {exc}") from exc

    def _seed(self) -> int:
        value = self.headers.get("X-Seed")
        if value is None:
            return self.runtime.config.seed
        try:
            return int(value)
        except ValueError:
            raise HttpError(400, "X-Seed must be an integer") from None

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0].rstrip("/") or "/"
        try:
            status, body = self._route(method, path)
            error = None
        except HttpError as exc:
            status, body, error = exc.status, {"error": str(exc)}, str(exc)
        except Exception as exc:  # crash-only: report and keep serving
            log.exception("request failed")
            error = f"{type(exc).__name__}: {exc}"
            status, body = 500, {"error": error}
        # episodes and trace lookups already name their trace; everything else gets a request trace
        trace_id = body.get("trace_id") if isinstance(body, dict) and status < 500 else None
        if trace_id is None:
            trace_id = uuid.uuid4().hex
            event = {"seq": trace.next_seq(), "trace_id": trace_id,
                     "kind": "internal_error" if status >= 500 else "request",
                     "method": method, "path": path, "status": status}
            if error:
                event["error"] = error
            self.runtime.store.append(event)
            if isinstance(body, dict) and path != "/mcp":
                body["trace_id"] = trace_id
        self._send(status, body, trace_id)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _route(self, method: str, path: str) -> tuple[int, Any]:
        rt = self.runtime
        if method == "POST" and path == "/v1/search":
            body = self._body()
            text = body.get("query") if isinstance(body, dict) else None
            if not isinstance(text, str) or not text.strip():
                raise HttpError(400, "field 'query' must be a non-empty string")
            context = body.get("context") or []
            try:
                query = Query(text, id=str(body.get("id", "q0")), context=tuple(tuple(t) for t in context))
            except (TypeError, ValueError) as exc:
                raise HttpError(400, f"bad context: {exc}") from exc
            return 200, rt.search(query)
        m = _TRACE.match(path)
        if method == "GET" and m:
            if m.group(1) not in rt.store:
                raise HttpError(404, f"unknown trace {m.group(1)}")
            return 200, {"trace_id": m.group(1), "events": rt.store.get(m.group(1))}
        if path == "/v1/tools":
            if method == "GET":
                return 200, {"tools": [{**mf.to_wire(), "toolkit": rt.registry.toolkit_label(mf.tool_id)}
                                       for mf in rt.registry.manifests()]}
            body = self._body()
            try:
                tool_id = rt.registry.register(ToolManifest.from_wire(body))
            except DuplicateTool as exc:
                raise HttpError(409, str(exc)) from exc
            except (InvalidManifest, AttributeError) as exc:
                raise HttpError(400, str(exc)) from exc
            return 201, {"tool_id": tool_id}
        if method == "POST" and path == "/v1/tools/cluster":
            body = self._body()
            kits = cluster_registry(rt.registry, Gateway(rt.provider), k=body.get("k"), seed=self._seed())
            return 200, {"toolkits": [{"toolkit_id": k.toolkit_id, "label": k.label,
                                       "members": sorted(k.member_tool_ids)} for k in kits]}
        m = _REFINE.match(path)
        if method == "POST" and m:
            body = self._body()
            try:
                result = refine_documentation(
                    rt.registry, Gateway(rt.provider, rt.config.max_model_calls), m.group(1),
                    max_iters=int(body.get("max_iters", 8)), phi=float(body.get("phi", 0.9)),
                    tau=float(body.get("tau", 0.9)), prompts=rt.prompts)
            except UnknownTool as exc:
                raise HttpError(404, str(exc)) from exc
            return 200, {"tool_id": m.group(1), "revision": result.doc.revision, "documentation": result.doc.current,
                         "deltas": result.deltas, "converged": result.converged,
                         "explorations": [asdict(r) for r in result.records], "errors": result.errors}
        if method == "GET" and path == "/v1/cache/stats":
            return 200, rt.cache.stats()
        if method == "POST" and path == "/mcp":
            return 200, handle_jsonrpc(rt.registry, self._body())
        if method == "POST" and path == "/v1/admin/scenes/reload":
            try:
                graph = rt.reload_scenes()
            except (OSError, ValueError) as exc:
                raise HttpError(400, f"scene graph rejected: {exc}") from exc
            return 200, {"scenes": sorted(graph.scenes())}
        raise HttpError(404, f"no route for {method} {path}")


def make_server(runtime: Runtime, host: str | None = None, port: int | None = None) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"runtime": runtime})
    server = ThreadingHTTPServer((host or runtime.config.host, runtime.config.port if port is None else port),
                                 handler)
    server.daemon_threads = False  # server_close() then waits for in-flight requests
    return server


def serve(config: ServiceConfig) -> None:
    runtime = Runtime(config)
    server = make_server(runtime)

    def stop(*_):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    log.info("listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()
