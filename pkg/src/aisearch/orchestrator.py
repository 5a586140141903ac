"""Master (triage, assessment, directives) and Planner (reasoning, sketch, re-planning), plus the
episode loop that wires retrieval, execution and writing together."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from . import trace
from .core import (AISearchError, CycleDetected, DagError, Directive, DirectiveKind, Query, Status, SubTask,
                   TaskDag, TeamConfiguration, ArgSlot, extract_json, validate_dag)
from .executor import ExecutionBudget, Executor, VertexResult, layers
from .gateway import BudgetExceeded, Gateway, GatewayError
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook
from .retrieval import DEFAULT_ALPHA, DEFAULT_CAP, EMPTY_GRAPH, CapabilityBoundary, SceneGraph, retrieve
from .tools.registry import Registry
from .writer import CitationedAnswer, ParseError, Statement, collect_documents, synthesize

MAX_REPLANS = 2


class SketchParseError(AISearchError):
    pass


class BindingOutsideBoundary(AISearchError):
    pass


class ReplanError(AISearchError):
    pass


@dataclass
class Episode:
    query: Query
    config: TeamConfiguration
    trace_id: str = ""
    dag: TaskDag | None = None
    boundary: CapabilityBoundary | None = None
    directives: list[Directive] = field(default_factory=list)
    answer: CitationedAnswer | None = None
    outputs: dict[str, Any] = field(default_factory=dict)
    replans: int = 0

    @property
    def degraded(self) -> bool:
        return self.answer is not None and self.answer.degraded

    def to_wire(self) -> dict:
        return {
            "query": self.query.text,
            "config": self.config.value,
            "trace_id": self.trace_id,
            "dag": self.dag.to_wire() if self.dag else None,
            "boundary": list(self.boundary.tool_ids) if self.boundary else None,
            "directives": [d.to_wire() for d in self.directives],
            "answer": self.answer.to_wire() if self.answer else None,
            "answer_text": self.answer.text if self.answer else None,
            "replans": self.replans,
        }


def _dumps(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, default=str)


class Orchestrator:
    def __init__(self, gateway: Gateway, registry: Registry, graph: SceneGraph = EMPTY_GRAPH,
                 budget: ExecutionBudget = ExecutionBudget(), cap: int = DEFAULT_CAP,
                 alpha: float = DEFAULT_ALPHA, max_replans: int = MAX_REPLANS,
                 prompts: PromptBook = DEFAULT_PROMPTS, store: trace.TraceStore | None = None):
        self.gateway = gateway
        self.registry = registry
        self.graph = graph
        self.cap = cap
        self.alpha = alpha
        self.max_replans = max_replans
        self.prompts = prompts
        self.store = store
        self.executor = Executor(gateway, registry, budget, prompts)

    # -- Master ------------------------------------------------------------------------

    def triage(self, query: Query) -> TeamConfiguration:
        prompt = self.prompts.render("triage", query=query.text)
        reply = self._ask_retrying("triage", prompt)
        try:
            config = TeamConfiguration.parse(reply)
        except ValueError:
            repair = (f"{prompt}\n\nYour previous reply {reply.strip()[:80]!r} was not one of the three "
                      "configuration names. Reply with the name only.")
            try:
                config = TeamConfiguration.parse(self._ask_retrying("triage", repair))
            except ValueError:
                config = TeamConfiguration.PLANNER_ENHANCED
        trace.emit("triage", config=config.value)
        return config

    def _ask_retrying(self, tag: str, prompt: str) -> str:
        try:
            return self.gateway.ask(tag, prompt).text
        except BudgetExceeded:
            raise
        except GatewayError:
            return self.gateway.ask(tag, prompt).text

    def assess(self, episode: Episode, layer_results: Mapping[str, VertexResult], last_layer: bool) -> Directive:
        if episode.dag is None:
            raise ValueError("assess needs an episode with a task graph")
        failed = sorted(v for v, r in layer_results.items() if r.status is Status.FAILED)
        if failed:
            affected = episode.dag.descendants(failed)
            reasons = "; ".join(f"{v}: {layer_results[v].reason}" for v in failed)
            directive = Directive.replan(affected, reasons)
        else:
            summary = {v: {"description": episode.dag.vertices[v].description,
                           "result": (r.output or {}).get("digest")} for v, r in sorted(layer_results.items())}
            reply = self.gateway.ask("assess", self.prompts.render(
                "assess", query=episode.query.text, results=_dumps(summary))).text.strip()
            if reply.upper().startswith("COMPLETE"):
                directive = Directive.finalize() if last_layer else Directive.cont()
            else:
                directive = Directive.augment(reply)
        trace.emit("directive", directive=directive.to_wire())
        return directive

    # -- Planner -----------------------------------------------------------------------

    def _tool_listing(self, boundary: CapabilityBoundary) -> str:
        lines = []
        for tid in boundary.tool_ids:
            m = self.registry.get(tid)
            lines.append(f"- {tid}: {m.documentation.current} Input schema: {_dumps(m.input_schema)}")
        return "\n".join(lines) or "(none: answer with tool-free sub-tasks)"

    def _check_bindings(self, dag: TaskDag, boundary: CapabilityBoundary, only: set[str] | None = None) -> None:
        allowed = set(boundary.tool_ids)
        for v in dag.vertices.values():
            if only is not None and v.id not in only:
                continue
            for tool in v.tools:
                if tool not in allowed:
                    raise BindingOutsideBoundary(f"vertex {v.id} binds {tool!r}, outside the capability boundary")

    def _ask_fragment(self, tag: str, prompt: str, error_type: type[AISearchError]) -> TaskDag:
        """Ask for a dag in wire form; one repair round feeds the parse error back."""
        last: Exception | None = None
        for attempt in range(2):
            text = self.gateway.ask(tag, prompt if attempt == 0 else
                                    f"{prompt}\n\nYour previous reply could not be used: {last}. "
                                    "Reply with valid JSON in the standard format.").text
            try:
                raw = extract_json(text)
                return TaskDag.from_wire(raw)
            except (ValueError, DagError, TypeError, KeyError) as exc:
                last = exc
                trace.emit("sketch_error", tag=tag, attempt=attempt, error=str(exc))
        raise error_type(f"{tag}: {last}")

    def plan(self, query: Query, boundary: CapabilityBoundary) -> TaskDag:
        if not boundary.tool_ids:
            dag = TaskDag.build([SubTask("v1", query.text)])
            trace.emit("plan", dag=dag.to_wire(), degenerate=True)
            return dag
        tools = self._tool_listing(boundary)
        reasoning = self.gateway.ask("plan-cot", self.prompts.render("plan-cot", query=query.text, tools=tools)).text
        prompt = self.prompts.render("plan-sketch", query=query.text, tools=tools, reasoning=reasoning)
        dag = self._ask_fragment("plan-sketch", prompt, SketchParseError)
        report = validate_dag(dag)
        if report:
            cycles = [r for r in report if r.kind == "cycle"]
            if cycles:
                raise CycleDetected(cycles[0].detail.split(" -> "))
            raise SketchParseError("invalid plan: " + "; ".join(map(str, report)))
        self._check_bindings(dag, boundary)
        trace.emit("plan", dag=dag.to_wire())
        return dag

    def replan(self, dag: TaskDag, directive: Directive, boundary: CapabilityBoundary, query: Query) -> TaskDag:
        """A new dag with the directive applied; ``dag`` itself is never modified."""
        tools = self._tool_listing(boundary)
        if directive.kind is DirectiveKind.REPLAN_SUBGRAPH:
            unknown = directive.vertex_ids - set(dag.vertices)
            if unknown:
                raise ReplanError(f"directive names unknown vertices {sorted(unknown)}")
            affected = dag.descendants(directive.vertex_ids)
            feeding = {a for a, b in dag.edges if b in affected and a not in affected}
            prompt = self.prompts.render("replan", query=query.text, dag=dag.to_json(),
                                         affected=sorted(affected), reason=directive.reason,
                                         inputs=sorted(feeding), tools=tools)
            fragment = self._ask_fragment("replan", prompt, ReplanError)
            kept = {vid: v for vid, v in dag.vertices.items() if vid not in affected}
            clash = set(fragment.vertices) & set(kept)
            if clash:
                raise ReplanError(f"replacement reuses kept vertex ids {sorted(clash)}")
            ext = {a for a, b in fragment.edges if a not in fragment.vertices}
            if not ext <= set(kept):
                raise ReplanError(f"replacement edges start at unknown vertices {sorted(ext - set(kept))}")
            if ext != feeding:
                raise ReplanError(f"replacement is fed by {sorted(ext)}, expected {sorted(feeding)}")
            if any(b not in fragment.vertices for _, b in fragment.edges):
                raise ReplanError("replacement edges may only point into the new fragment")
            edges = [e for e in dag.edges if e[0] in kept and e[1] in kept] + list(fragment.edges)
            new = TaskDag.build(list(kept.values()) + list(fragment.vertices.values()), edges)
        elif directive.kind is DirectiveKind.AUGMENT_DAG:
            prompt = self.prompts.render("augment", query=query.text, dag=dag.to_json(),
                                         reason=directive.reason, tools=tools)
            fragment = self._ask_fragment("augment", prompt, ReplanError)
            clash = set(fragment.vertices) & set(dag.vertices)
            if clash:
                raise ReplanError(f"augmentation reuses vertex ids {sorted(clash)}")
            if any(b not in fragment.vertices for _, b in fragment.edges):
                raise ReplanError("augmentation may only add edges into new vertices")
            new = TaskDag.build(list(dag.vertices.values()) + list(fragment.vertices.values()),
                                list(dag.edges) + list(fragment.edges))
        else:
            raise ReplanError(f"cannot replan on a {directive.kind.value} directive")
        report = validate_dag(new)
        if report:
            cycles = [r for r in report if r.kind == "cycle"]
            if cycles:
                raise CycleDetected(cycles[0].detail.split(" -> "))
            raise ReplanError("re-planned graph is invalid: " + "; ".join(map(str, report)))
        self._check_bindings(new, boundary, only=set(fragment.vertices))
        trace.emit("replan", directive_kind=directive.kind.value, dag=new.to_wire())
        return new

    # -- episode -------------------------------------------------------------------------

    def run_episode(self, query: Query, trace_id: str | None = None) -> Episode:
        tracer = trace.Tracer(trace_id, self.store)
        with trace.activate(tracer):
            trace.emit("episode_start", query=query.text, context=[list(t) for t in query.context])
            try:
                config = self.triage(query)
            except BudgetExceeded:
                config = TeamConfiguration.WRITER_ONLY
                episode = Episode(query, config, tracer.trace_id)
                episode.answer = self._best_effort(episode)
                return self._finish(episode)
            episode = Episode(query, config, tracer.trace_id)
            try:
                if config is TeamConfiguration.WRITER_ONLY:
                    episode.answer = self._write(episode)
                elif config is TeamConfiguration.EXECUTOR_INCLUSIVE:
                    self._run_executor_inclusive(episode)
                else:
                    self._run_planner_enhanced(episode)
            except BudgetExceeded as exc:
                trace.emit("budget_exhausted", error=str(exc))
                episode.answer = self._best_effort(episode)
            return self._finish(episode)

    def _finish(self, episode: Episode) -> Episode:
        trace.emit("episode_end", config=episode.config.value, degraded=episode.degraded,
                   answer=episode.answer.text if episode.answer else None)
        return episode

    def _write(self, episode: Episode, degraded: bool = False) -> CitationedAnswer:
        docs = collect_documents(episode.outputs.values())
        results = {vid: out.get("digest") if isinstance(out, Mapping) else out
                   for vid, out in sorted(episode.outputs.items())}
        try:
            answer = synthesize(self.gateway, episode.query.text, results, docs, self.prompts)
        except ParseError as exc:
            trace.emit("write_failed", error=str(exc))
            return self._best_effort(episode)
        if degraded:
            answer = CitationedAnswer(answer.statements, degraded=True)
        return answer

    def _best_effort(self, episode: Episode) -> CitationedAnswer:
        claims = [f"{vid}: {_dumps(out.get('digest') if isinstance(out, Mapping) else out)}"
                  for vid, out in sorted(episode.outputs.items())]
        if not claims:
            claims = ["No answer could be produced within the available budget."]
        return CitationedAnswer(tuple(Statement(c) for c in claims), degraded=True)

    def _retrieve(self, episode: Episode) -> CapabilityBoundary:
        boundary = retrieve(self.gateway, self.registry, episode.query, self.graph, self.alpha, self.cap)
        trace.emit("boundary", tool_ids=list(boundary.tool_ids), scene=boundary.scene)
        episode.boundary = boundary
        return boundary

    def _run_executor_inclusive(self, episode: Episode) -> None:
        boundary = self._retrieve(episode)
        query = episode.query
        if boundary.tool_ids:
            tool = boundary.tool_ids[0]
            m = self.registry.get(tool)
            reply = self.gateway.ask("tool-args", self.prompts.render(
                "tool-args", query=query.text, tool=tool, documentation=m.documentation.current,
                schema=_dumps(m.input_schema))).text
            try:
                args = extract_json(reply)
            except ValueError:
                args = {}
            if not isinstance(args, dict):
                args = {}
            task = SubTask("v1", query.text, {k: ArgSlot(value=v) for k, v in args.items()}, tools=(tool,))
        else:
            args = {}
            task = SubTask("v1", query.text)
        result = self.executor.execute_vertex(task, args)
        if result.status is Status.DONE:
            episode.outputs["v1"] = result.output
        episode.answer = self._write(episode, degraded=result.status is not Status.DONE)

    def _run_planner_enhanced(self, episode: Episode) -> None:
        boundary = self._retrieve(episode)
        dag = self.plan(episode.query, boundary)
        episode.dag = dag
        degraded = False
        while True:
            all_layers = layers(episode.dag)
            pending = [i for i, layer in enumerate(all_layers)
                       if any(episode.dag.vertices[v].status is not Status.DONE for v in layer)]
            if not pending:
                break
            idx = pending[0]
            episode.dag, results = self.executor.run_layer(episode.dag, all_layers[idx])
            for vid, res in results.items():
                if res.status is Status.DONE:
                    episode.outputs[vid] = res.output
            directive = self.assess(episode, results, last_layer=idx == len(all_layers) - 1)
            episode.directives.append(directive)
            if len(episode.directives) >= len(all_layers) + self.max_replans + 1:
                # safety net; a well-behaved run stops long before this
                degraded = directive.kind is not DirectiveKind.FINALIZE
                break
            if directive.kind is DirectiveKind.CONTINUE:
                continue
            if directive.kind is DirectiveKind.FINALIZE:
                break
            if episode.replans >= self.max_replans:
                degraded = True
                break
            episode.replans += 1
            try:
                new = self.replan(episode.dag, directive, boundary, episode.query)
            except (AISearchError, GatewayError) as exc:
                if isinstance(exc, BudgetExceeded):
                    raise
                trace.emit("replan_failed", error=f"{type(exc).__name__}: {exc}")
                degraded = True
                break
            for vid in set(episode.dag.vertices) - set(new.vertices):
                episode.outputs.pop(vid, None)
            episode.dag = new
        episode.answer = self._write(episode, degraded=degraded)
