"""Layered DAG execution with per-vertex sufficiency rounds and intra-toolkit fallback."""

from __future__ import annotations

import json
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

from . import trace
from .core import AISearchError, Status, SubTask, TaskDag, extract_json, resolve_path, topological_depths
from .gateway import Embedding, Gateway, GatewayError
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook
from .tools.clustering import fallback_candidates
from .tools.registry import Registry, ToolError, ToolkitNotAssigned

ATTEMPTS_PER_ROUND = 2  # one retry before moving to the next toolkit member


@dataclass(frozen=True)
class ExecutionBudget:
    max_tool_calls_per_vertex: int = 3
    per_call_timeout_ms: float = 5000.0
    max_parallelism: int = 8

    def __post_init__(self):
        if min(self.max_tool_calls_per_vertex, self.per_call_timeout_ms, self.max_parallelism) <= 0:
            raise ValueError("budget fields must be positive")


@dataclass(frozen=True)
class VertexResult:
    vertex_id: str
    status: Status
    output: Any = None
    reason: str = ""
    tool_calls: tuple[str, ...] = ()


@dataclass
class DagRun:
    dag: TaskDag
    results: dict[str, VertexResult] = field(default_factory=dict)
    layers_run: int = 0

    @property
    def failed(self) -> list[str]:
        return sorted(v for v, r in self.results.items() if r.status is Status.FAILED)

    @property
    def complete(self) -> bool:
        return all(v.status is Status.DONE for v in self.dag.vertices.values())


def layers(dag: TaskDag) -> list[list[str]]:
    depth = topological_depths(dag)
    out: list[list[str]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for vid in sorted(depth):
        out[depth[vid]].append(vid)
    return out


class InputError(AISearchError):
    pass


def bind_inputs(task: SubTask, outputs: Mapping[str, Any]) -> dict[str, Any]:
    """Concrete argument values: literals as given, edge-fed slots pulled from parent outputs."""
    args = {}
    for name, slot in task.args.items():
        state = slot.state
        if state == "literal":
            args[name] = slot.value
        elif state == "edge":
            if slot.source not in outputs:
                raise InputError(f"slot {name!r} waits on {slot.source!r}, which has no output")
            try:
                args[name] = resolve_path(outputs[slot.source], slot.path)
            except (KeyError, IndexError, ValueError) as exc:
                raise InputError(f"slot {name!r}: path {slot.path!r} missing in {slot.source!r}") from exc
        else:
            raise InputError(f"slot {name!r} is unbound")
    return args


def _dumps(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, default=str)


class Executor:
    def __init__(self, gateway: Gateway, registry: Registry, budget: ExecutionBudget = ExecutionBudget(),
                 prompts: PromptBook = DEFAULT_PROMPTS, embed: Callable[[str], Embedding] | None = None):
        self.gateway = gateway
        self.registry = registry
        self.budget = budget
        self.prompts = prompts
        self.embed = embed or gateway.embed
        self._state_lock = threading.Lock()
        self.status: dict[str, Status] = {}

    # -- one vertex ------------------------------------------------------------------

    def _set_status(self, vid: str, status: Status) -> None:
        with self._state_lock:
            self.status[vid] = status

    def _sufficiency(self, task: SubTask, rounds: list) -> tuple[bool, str]:
        reply = self.gateway.ask("sufficiency", self.prompts.render(
            "sufficiency", description=task.description, rounds=_dumps(rounds))).text.strip()
        head = reply.upper()
        if head.startswith("SUFFICIENT"):
            verdict, reason = True, ""
        elif head.startswith("INSUFFICIENT"):
            verdict, reason = False, reply.split(":", 1)[1].strip() if ":" in reply else "insufficient"
        else:
            verdict, reason = False, f"unparseable verdict {reply[:60]!r}"
        trace.emit("sufficiency", vertex=task.id, sufficient=verdict, reason=reason)
        return verdict, reason

    def _digest(self, task: SubTask, rounds: list) -> Any:
        text = self.gateway.ask("digest", self.prompts.render(
            "digest", description=task.description, rounds=_dumps(rounds))).text
        try:
            return extract_json(text)
        except ValueError:
            return text.strip()

    def _refine_args(self, task: SubTask, args: dict, reason: str) -> dict:
        reply = self.gateway.ask("refine-args", self.prompts.render(
            "refine-args", description=task.description, args=_dumps(args), reason=reason)).text
        try:
            new = extract_json(reply)
        except ValueError:
            return args
        return new if isinstance(new, dict) else args

    def _fallbacks(self, tool_id: str) -> list[str]:
        try:
            return fallback_candidates(self.registry, tool_id, self.embed)
        except ToolkitNotAssigned:
            return []

    def execute_vertex(self, task: SubTask, inputs: Mapping[str, Any],
                       budget: ExecutionBudget | None = None) -> VertexResult:
        """Run one sub-task to Done or Failed. Failures are returned, never raised."""
        budget = budget or self.budget
        calls: list[str] = []
        try:
            if task.tool is None:
                return self._execute_toolfree(task, dict(inputs), budget)
            return self._execute_tool(task, dict(inputs), budget, calls)
        except GatewayError as exc:
            return VertexResult(task.id, Status.FAILED, reason=f"{type(exc).__name__}: {exc}",
                                tool_calls=tuple(calls))

    def _execute_toolfree(self, task: SubTask, args: dict, budget: ExecutionBudget) -> VertexResult:
        rounds: list = []
        for _ in range(budget.max_tool_calls_per_vertex):
            reply = self.gateway.ask("toolfree-exec", self.prompts.render(
                "toolfree-exec", description=task.description, args=_dumps(args),
                previous=_dumps(rounds))).text.strip()
            try:
                value: Any = extract_json(reply)
            except ValueError:
                value = reply
            rounds.append({"tool": None, "args": args, "result": value})
            ok, _ = self._sufficiency(task, rounds)
            if ok:
                return VertexResult(task.id, Status.DONE, {"rounds": rounds, "digest": value})
        return VertexResult(task.id, Status.FAILED, reason="insufficient")

    def _execute_tool(self, task: SubTask, args: dict, budget: ExecutionBudget, calls: list) -> VertexResult:
        candidates = [task.tool]
        loaded_fallbacks = False
        cursor = 0
        used: Counter = Counter()
        errors: list[str] = []
        rounds: list = []
        while len(rounds) < budget.max_tool_calls_per_vertex:
            result = None
            streak = 0
            while result is None:
                tool = candidates[cursor]
                if streak >= ATTEMPTS_PER_ROUND or used[tool] >= budget.max_tool_calls_per_vertex:
                    cursor += 1
                    streak = 0
                    if cursor >= len(candidates) and not loaded_fallbacks:
                        candidates += [t for t in self._fallbacks(task.tool) if t not in candidates]
                        loaded_fallbacks = True
                    if cursor >= len(candidates):
                        return VertexResult(task.id, Status.FAILED,
                                            reason="all tools failed: " + "; ".join(errors[-3:]),
                                            tool_calls=tuple(calls))
                    trace.emit("fallback", vertex=task.id, from_tool=tool, to_tool=candidates[cursor])
                    continue
                used[tool] += 1
                calls.append(tool)
                try:
                    result = {"value": self.registry.invoke(tool, args, timeout_ms=budget.per_call_timeout_ms)}
                except ToolError as exc:
                    streak += 1
                    errors.append(f"{tool}: {type(exc).__name__}: {exc}")
            rounds.append({"tool": tool, "args": args, "result": result["value"]})
            ok, reason = self._sufficiency(task, rounds)
            if ok:
                return VertexResult(task.id, Status.DONE, {"rounds": rounds, "digest": self._digest(task, rounds)},
                                    tool_calls=tuple(calls))
            if len(rounds) < budget.max_tool_calls_per_vertex:
                args = self._refine_args(task, args, reason)
        return VertexResult(task.id, Status.FAILED, reason="insufficient", tool_calls=tuple(calls))

    # -- layers ------------------------------------------------------------------------

    def _run_one(self, dag: TaskDag, vid: str, outputs: Mapping[str, Any], budget: ExecutionBudget) -> VertexResult:
        task = dag.vertices[vid]
        self._set_status(vid, Status.RUNNING)
        trace.emit("vertex_start", vertex=vid, tool=task.tool)
        try:
            result = self.execute_vertex(task, bind_inputs(task, outputs), budget)
        except InputError as exc:
            result = VertexResult(vid, Status.FAILED, reason=str(exc))
        self._set_status(vid, result.status)
        trace.emit("vertex_end", vertex=vid, status=result.status.value, reason=result.reason)
        return result

    def run_layer(self, dag: TaskDag, layer: Sequence[str],
                  budget: ExecutionBudget | None = None) -> tuple[TaskDag, dict[str, VertexResult]]:
        budget = budget or self.budget
        outputs = {v.id: v.output for v in dag.vertices.values() if v.status is Status.DONE}
        todo = [vid for vid in layer if dag.vertices[vid].status is not Status.DONE]
        results: dict[str, VertexResult] = {}
        if budget.max_parallelism == 1 or len(todo) <= 1:
            for vid in todo:
                results[vid] = self._run_one(dag, vid, outputs, budget)
        else:
            with ThreadPoolExecutor(max_workers=min(budget.max_parallelism, len(todo))) as pool:
                futures = {vid: pool.submit(trace.run_in_context(self._run_one), dag, vid, outputs, budget)
                           for vid in todo}
                results = {vid: f.result() for vid, f in futures.items()}
        vertices = dict(dag.vertices)
        for vid, res in results.items():
            old = vertices[vid]
            vertices[vid] = replace(old, status=res.status, attempts=old.attempts + 1,
                                    output=res.output if res.status is Status.DONE else None)
        return TaskDag.build(vertices.values(), dag.edges), results

    def run_dag(self, dag: TaskDag, budget: ExecutionBudget | None = None) -> DagRun:
        run = DagRun(dag)
        for layer in layers(dag):
            run.dag, results = self.run_layer(run.dag, layer, budget)
            run.results.update(results)
            run.layers_run += 1
            if any(r.status is Status.FAILED for r in results.values()):
                break
        return run
