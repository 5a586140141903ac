import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from aisearch.tools.builtin import ToolFault, safe_eval
from aisearch.tools.registry import (DuplicateTool, Fault, InvalidManifest, Registry, RemoteFault, SchemaViolation,
                                     ToolDoc, ToolManifest, ToolUnresponsive, UnknownTool, handle_jsonrpc)


def manifest(tool_id="echo", endpoint="builtin:echo", hi=1000.0, **kw):
    raw = {"tool_id": tool_id, "name": tool_id.title(), "semantic_role": "test", "cost": 0.1,
           "latency_bounds": [0, hi], "endpoint": endpoint, "documentation": "Echoes its arguments.",
           "input_schema": {"type": "object", "properties": {"x": {"type": "integer"}}, "required": ["x"]},
           "output_schema": {"type": "object"}}
    raw.update(kw)
    return ToolManifest.from_wire(raw)


def test_fixture_registry_has_twelve_tools(registry):
    assert len(registry) == 12
    assert {m.semantic_role for m in registry.manifests()} >= {"search", "weather", "finance"}


def test_register_rejects_duplicates_and_bad_schemas():
    reg = Registry()
    reg.register(manifest())
    with pytest.raises(DuplicateTool):
        reg.register(manifest())
    with pytest.raises(InvalidManifest):
        reg.register(manifest("bad", input_schema={"type": "not-a-type"}))
    with pytest.raises(InvalidManifest):
        reg.register(manifest("slow", latency_bounds=[5, 1]))
    with pytest.raises(InvalidManifest):
        ToolManifest.from_wire({"name": "no id"})


def test_register_resets_revision():
    reg = Registry()
    m = manifest()
    from dataclasses import replace
    reg.register(replace(m, documentation=ToolDoc("v1", ("v0",), 1)))
    assert reg.get("echo").documentation.revision == 0


def test_invoke_validates_input_and_output():
    reg = Registry()
    reg.register(manifest())
    assert reg.invoke("echo", {"x": 1}) == {"echo": {"x": 1}}
    with pytest.raises(SchemaViolation):
        reg.invoke("echo", {"x": "one"})
    reg.register(manifest("strict", output_schema={"type": "object", "required": ["nope"]}))
    with pytest.raises(SchemaViolation):
        reg.invoke("strict", {"x": 1})
    with pytest.raises(UnknownTool):
        reg.invoke("ghost", {})
    assert [("error" in a) for a in reg.audit] == [False, True, True]


def test_fault_injection_counts_down():
    reg = Registry()
    reg.register(manifest())
    reg.inject_fault("echo", Fault(failures=2))
    for _ in range(2):
        with pytest.raises(RemoteFault):
            reg.invoke("echo", {"x": 1})
    assert reg.invoke("echo", {"x": 1})
    reg.inject_fault("echo", Fault(failures=None))
    with pytest.raises(RemoteFault):
        reg.invoke("echo", {"x": 1})
    reg.inject_fault("echo", None)
    assert reg.invoke("echo", {"x": 1})


def test_stall_past_latency_bound_times_out():
    reg = Registry()
    reg.register(manifest(hi=50))
    reg.inject_fault("echo", Fault(failures=0, stall_ms=300))
    with pytest.raises(ToolUnresponsive):
        reg.invoke("echo", {"x": 1})
    reg.register(manifest("roomy", hi=5000))
    reg.inject_fault("roomy", Fault(failures=0, stall_ms=300))
    with pytest.raises(ToolUnresponsive):
        reg.invoke("roomy", {"x": 1}, timeout_ms=50)


def test_builtin_tools(registry):
    assert registry.invoke("weather_query", {"city": "Beijing"}) == {"condition": "sunny", "low_c": 12, "high_c": 25}
    hits = registry.invoke("baidu_ai_search", {"query": "Emperor Wu of Han", "top_k": 1})["results"]
    assert hits[0]["id"] == "wiki-wu-han"
    assert registry.invoke("calculator", {"expression": "abs(a - b)", "a": -156, "b": -100}) == {"value": 56}
    with pytest.raises(RemoteFault):
        registry.invoke("weather_query", {"city": "Atlantis"})


def test_save_and_reload(tmp_path, registry):
    path = tmp_path / "reg.json"
    registry.save(path)
    again = Registry.from_file(path)
    assert [m.to_wire() for m in again.manifests()] == [m.to_wire() for m in registry.manifests()]


def test_discover_filters_and_orders(registry):
    found = registry.discover(role="search")
    assert {m.tool_id for m in found} == {"baidu_ai_search", "arxiv_mcp", "perplexity_mcp", "openai_web_search"}
    assert [m.cost for m in found] == sorted(m.cost for m in found)


def test_jsonrpc_handshake(registry):
    init = handle_jsonrpc(registry, {"jsonrpc": "2.0", "id": 1, "method": "initialize"})
    assert init["result"]["capabilities"]["tools"]
    listed = handle_jsonrpc(registry, {"jsonrpc": "2.0", "id": 2, "method": "tools/list"})
    assert len(listed["result"]["tools"]) == 12
    call = handle_jsonrpc(registry, {"jsonrpc": "2.0", "id": 3, "method": "tools/call",
                                     "params": {"name": "calculator", "arguments": {"expression": "2 + 3"}}})
    assert call == {"jsonrpc": "2.0", "id": 3, "result": {"value": 5}}
    bad = handle_jsonrpc(registry, {"jsonrpc": "2.0", "id": 4, "method": "tools/call",
                                    "params": {"name": "calculator", "arguments": {}}})
    assert bad["error"]["code"] == -32602
    assert handle_jsonrpc(registry, {"jsonrpc": "2.0", "id": 5, "method": "nope"})["error"]["code"] == -32601
    assert handle_jsonrpc(registry, {"id": 6})["error"]["code"] == -32600


def test_remote_tool_over_jsonrpc(registry):
    class H(BaseHTTPRequestHandler):
        def log_message(self, *a):
            pass

        def do_POST(self):
            payload = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            payload["params"]["name"] = "calculator"
            data = json.dumps(handle_jsonrpc(registry, payload)).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    srv = HTTPServer(("127.0.0.1", 0), H)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    try:
        client = Registry()
        client.register(manifest("remote_calc", endpoint=f"http://127.0.0.1:{srv.server_address[1]}/mcp",
                                 input_schema={"type": "object"}))
        assert client.invoke("remote_calc", {"expression": "6 * 7"}) == {"value": 42}
        with pytest.raises(RemoteFault):
            client.invoke("remote_calc", {"expression": "1 +"})
    finally:
        srv.shutdown()


small = st.integers(-50, 50)


@given(small, small, small, st.sampled_from(["+", "-", "*"]), st.sampled_from(["+", "-", "*"]))
def test_safe_eval_matches_python_arithmetic(a, b, c, op1, op2):
    expr = f"{a} {op1} ({b}) {op2} x"
    assert safe_eval(expr, {"x": c}) == eval(expr, {}, {"x": c})  # noqa: S307 - oracle only


@pytest.mark.parametrize("expr", ["__import__('os')", "x.y", "1 / 0", "[1, 2]", "y + 1", "1 +"])
def test_safe_eval_rejects(expr):
    with pytest.raises(ToolFault):
        safe_eval(expr, {"x": 1})
