"""Tool manifests, the capability handshake, and the JSON-RPC execution contract."""

from __future__ import annotations

import itertools
import json
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import jsonschema

from .. import trace
from ..core import AISearchError
from .builtin import Builtins, ToolFault


class ToolError(AISearchError):
    pass


class UnknownTool(ToolError):
    pass


class DuplicateTool(ToolError):
    pass


class InvalidManifest(ToolError):
    pass


class SchemaViolation(ToolError):
    pass


class ToolUnresponsive(ToolError):
    pass


class RemoteFault(ToolError):
    pass


class ToolkitNotAssigned(ToolError):
    pass


@dataclass(frozen=True)
class ToolDoc:
    current: str
    history: tuple[str, ...] = ()
    revision: int = 0

    def __post_init__(self):
        if len(self.history) != self.revision:
            raise ValueError("history length must equal revision")

    def revise(self, text: str) -> "ToolDoc":
        return ToolDoc(text, self.history + (self.current,), self.revision + 1)


@dataclass(frozen=True)
class ToolManifest:
    tool_id: str
    name: str
    semantic_role: str
    cost: float
    latency_bounds: tuple[float, float]
    input_schema: Mapping[str, Any]
    output_schema: Mapping[str, Any]
    endpoint: str
    documentation: ToolDoc

    def validate(self) -> None:
        if not self.tool_id:
            raise InvalidManifest("tool_id is required")
        if self.cost < 0:
            raise InvalidManifest(f"{self.tool_id}: cost must be >= 0")
        lo, hi = self.latency_bounds
        if lo < 0 or lo > hi:
            raise InvalidManifest(f"{self.tool_id}: latency bounds ({lo}, {hi}) invalid")
        for which in ("input_schema", "output_schema"):
            try:
                jsonschema.Draft202012Validator.check_schema(getattr(self, which))
            except jsonschema.SchemaError as exc:
                raise InvalidManifest(f"{self.tool_id}: {which} does not parse: {exc.message}") from exc

    @property
    def max_ms(self) -> float:
        return self.latency_bounds[1]

    def to_wire(self) -> dict:
        return {
            "tool_id": self.tool_id, "name": self.name, "semantic_role": self.semantic_role,
            "cost": self.cost, "latency_bounds": list(self.latency_bounds),
            "input_schema": self.input_schema, "output_schema": self.output_schema,
            "endpoint": self.endpoint, "documentation": self.documentation.current,
        }

    @classmethod
    def from_wire(cls, raw: Mapping[str, Any]) -> "ToolManifest":
        try:
            doc = raw.get("documentation", "")
            if isinstance(doc, Mapping):
                doc = ToolDoc(doc["current"], tuple(doc.get("history", ())), int(doc.get("revision", 0)))
            else:
                doc = ToolDoc(str(doc))
            lo, hi = raw.get("latency_bounds", (0, 1000))
            return cls(
                tool_id=str(raw["tool_id"]), name=str(raw.get("name", raw["tool_id"])),
                semantic_role=str(raw.get("semantic_role", "")), cost=float(raw.get("cost", 0.0)),
                latency_bounds=(float(lo), float(hi)),
                input_schema=dict(raw.get("input_schema", {"type": "object"})),
                output_schema=dict(raw.get("output_schema", {"type": "object"})),
                endpoint=str(raw.get("endpoint", "")), documentation=doc,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidManifest(f"malformed manifest: {exc}") from exc


@dataclass
class Fault:
    """Injected misbehaviour: fail the next ``failures`` calls (None = every call), stall each call."""

    failures: int | None = None
    stall_ms: float = 0.0


@dataclass
class Registry:
    builtins: Builtins = field(default_factory=Builtins)
    _tools: dict[str, ToolManifest] = field(default_factory=dict)
    _toolkit_of: dict[str, str] = field(default_factory=dict)
    _toolkits: dict[str, Any] = field(default_factory=dict)
    _faults: dict[str, Fault] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._write = threading.RLock()
        self._audit_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=32, thread_name_prefix="tool")
        self._rpc_ids = itertools.count(1)

    # -- handshake / discovery -------------------------------------------------

    def register(self, manifest: ToolManifest) -> str:
        manifest.validate()
        if manifest.documentation.revision != 0:
            manifest = replace(manifest, documentation=ToolDoc(manifest.documentation.current))
        with self._write:
            if manifest.tool_id in self._tools:
                raise DuplicateTool(f"tool {manifest.tool_id!r} already registered")
            self._tools[manifest.tool_id] = manifest
        return manifest.tool_id

    def get(self, tool_id: str) -> ToolManifest:
        try:
            return self._tools[tool_id]
        except KeyError:
            raise UnknownTool(f"unknown tool {tool_id!r}") from None

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def ids(self) -> list[str]:
        return sorted(self._tools)

    def manifests(self) -> list[ToolManifest]:
        return [self._tools[t] for t in self.ids()]

    def discover(self, role: str | None = None, label: str | None = None,
                 predicate: Callable[[ToolManifest], bool] | None = None) -> list[ToolManifest]:
        out = []
        for m in list(self._tools.values()):
            if role is not None and m.semantic_role != role:
                continue
            if label is not None and self.toolkit_label(m.tool_id) != label:
                continue
            if predicate is not None and not predicate(m):
                continue
            out.append(m)
        return sorted(out, key=lambda m: (m.cost, m.name))

    def update_doc(self, tool_id: str, doc: ToolDoc) -> None:
        with self._write:
            self._tools[tool_id] = replace(self.get(tool_id), documentation=doc)

    # -- toolkits ---------------------------------------------------------------

    def assign_toolkits(self, toolkits: Iterable[Any]) -> None:
        with self._write:
            self._toolkit_of.clear()
            self._toolkits.clear()
            for kit in toolkits:
                self._toolkits[kit.toolkit_id] = kit
                for tid in kit.member_tool_ids:
                    if tid in self._toolkit_of:
                        raise ToolError(f"tool {tid!r} placed in two toolkits")
                    self._toolkit_of[tid] = kit.toolkit_id

    def toolkit_of(self, tool_id: str):
        self.get(tool_id)
        kit = self._toolkit_of.get(tool_id)
        if kit is None:
            raise ToolkitNotAssigned(f"tool {tool_id!r} belongs to no toolkit")
        return self._toolkits[kit]

    def toolkit_label(self, tool_id: str) -> str | None:
        kit = self._toolkit_of.get(tool_id)
        return self._toolkits[kit].label if kit else None

    @property
    def toolkits(self) -> list[Any]:
        return list(self._toolkits.values())

    # -- execution contract -----------------------------------------------------

    def inject_fault(self, tool_id: str, fault: Fault | None) -> None:
        self.get(tool_id)
        with self._write:
            if fault is None:
                self._faults.pop(tool_id, None)
            else:
                self._faults[tool_id] = fault

    def _consume_fault(self, tool_id: str) -> tuple[bool, float]:
        with self._write:
            fault = self._faults.get(tool_id)
            if fault is None:
                return False, 0.0
            fail = fault.failures is None or fault.failures > 0
            if fault.failures:
                fault.failures -= 1
            return fail, fault.stall_ms

    def invoke(self, tool_id: str, args: Mapping[str, Any], timeout_ms: float | None = None) -> Any:
        manifest = self.get(tool_id)
        limit_ms = manifest.max_ms if timeout_ms is None else min(manifest.max_ms, timeout_ms)
        args = dict(args)
        try:
            jsonschema.validate(args, manifest.input_schema)
        except jsonschema.ValidationError as exc:
            self._record(tool_id, args, error=f"SchemaViolation: {exc.message}")
            raise SchemaViolation(f"{tool_id} arguments: {exc.message}") from exc

        fault = self._consume_fault(tool_id)
        started = time.monotonic()
        try:
            if manifest.endpoint.startswith(("http://", "https://")):
                result = self._call_remote(manifest, args)
            else:
                future = self._pool.submit(self._call_builtin, manifest, args, fault)
                try:
                    result = future.result(timeout=limit_ms / 1000.0)
                except FutureTimeout:
                    raise ToolUnresponsive(f"{tool_id} exceeded {limit_ms:g} ms") from None
        except ToolError as exc:
            self._record(tool_id, args, error=f"{type(exc).__name__}: {exc}", started=started)
            raise

        try:
            jsonschema.validate(result, manifest.output_schema)
        except jsonschema.ValidationError as exc:
            self._record(tool_id, args, error=f"SchemaViolation: {exc.message}", started=started)
            raise SchemaViolation(f"{tool_id} output: {exc.message}") from exc
        self._record(tool_id, args, result=result, started=started)
        return result

    def _call_builtin(self, manifest: ToolManifest, args: dict, fault: tuple[bool, float]) -> Any:
        fail, stall_ms = fault
        if stall_ms:
            time.sleep(stall_ms / 1000.0)
        if fail:
            raise RemoteFault(f"{manifest.tool_id}: injected fault")
        try:
            handler = self.builtins.resolve(manifest.endpoint)
            return handler(args)
        except ToolFault as exc:
            raise RemoteFault(f"{manifest.tool_id}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteFault(f"{manifest.tool_id}: {type(exc).__name__}: {exc}") from exc

    def _call_remote(self, manifest: ToolManifest, args: dict) -> Any:
        payload = {"jsonrpc": "2.0", "id": next(self._rpc_ids), "method": "tools/call",
                   "params": {"name": manifest.name, "arguments": args}}
        req = urllib.request.Request(manifest.endpoint, data=json.dumps(payload).encode(),
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=manifest.max_ms / 1000.0) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except TimeoutError:
            raise ToolUnresponsive(f"{manifest.tool_id} exceeded {manifest.max_ms:g} ms") from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise ToolUnresponsive(f"{manifest.tool_id} exceeded {manifest.max_ms:g} ms") from None
            raise RemoteFault(f"{manifest.tool_id}: {exc}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise RemoteFault(f"{manifest.tool_id}: {exc}") from exc
        if "error" in body:
            raise RemoteFault(f"{manifest.tool_id}: {body['error'].get('message', body['error'])}")
        return body.get("result")

    def _record(self, tool_id: str, args: dict, result: Any = None, error: str | None = None,
                started: float | None = None) -> None:
        entry = {"tool_id": tool_id, "args": args}
        if error is None:
            entry["result"] = result
        else:
            entry["error"] = error
        if started is not None:
            entry["elapsed_ms"] = round((time.monotonic() - started) * 1000, 3)
        with self._audit_lock:
            self.audit.append(entry)
        trace.emit("tool_call", **entry)

    # -- persistence --------------------------------------------------------------

    @classmethod
    def from_file(cls, path: str | Path, builtins: Builtins | None = None) -> "Registry":
        reg = cls(builtins=builtins or Builtins())
        with open(path, encoding="utf-8") as fh:
            for raw in json.load(fh):
                reg.register(ToolManifest.from_wire(raw))
        return reg

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([m.to_wire() for m in self.manifests()], fh, indent=2)


# -- JSON-RPC server side -------------------------------------------------------

PROTOCOL_VERSION = "2024-11-05"


def handle_jsonrpc(registry: Registry, payload: Mapping[str, Any]) -> dict:
    """Serve one JSON-RPC 2.0 request against ``registry`` (initialize, tools/list, tools/call)."""
    rid = payload.get("id") if isinstance(payload, Mapping) else None

    def error(code: int, message: str) -> dict:
        return {"jsonrpc": "2.0", "id": rid, "error": {"code": code, "message": message}}

    if not isinstance(payload, Mapping) or payload.get("jsonrpc") != "2.0" or "method" not in payload:
        return error(-32600, "invalid request")
    method = payload["method"]
    params = payload.get("params") or {}
    if method == "initialize":
        result: Any = {"protocolVersion": PROTOCOL_VERSION, "capabilities": {"tools": {"listChanged": False}},
                       "serverInfo": {"name": "aisearch-tools", "version": "0.1.0"}}
    elif method == "tools/list":
        result = {"tools": [{"name": m.tool_id, "description": m.documentation.current,
                             "inputSchema": m.input_schema, "annotations": {
                                 "role": m.semantic_role, "cost": m.cost,
                                 "latency_bounds": list(m.latency_bounds)}}
                            for m in registry.manifests()]}
    elif method == "tools/call":
        name = params.get("name")
        if name not in registry:
            return error(-32602, f"unknown tool {name!r}")
        try:
            result = registry.invoke(name, params.get("arguments") or {})
        except SchemaViolation as exc:
            return error(-32602, str(exc))
        except ToolError as exc:
            return error(-32000, f"{type(exc).__name__}: {exc}")
    else:
        return error(-32601, f"method {method!r} not found")
    return {"jsonrpc": "2.0", "id": rid, "result": result}
