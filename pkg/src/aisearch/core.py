"""Shared domain types: queries, task graphs, documents, rankings, directives."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence


class AISearchError(Exception):
    """Base class for every error raised by this package."""


class CycleDetected(AISearchError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = tuple(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class DagError(AISearchError):
    """Structural problem while building a task graph."""


@dataclass(frozen=True)
class Query:
    text: str
    id: str = "q0"
    context: tuple[tuple[str, str], ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("query text must be non-empty")
        object.__setattr__(self, "context", tuple((str(q), str(a)) for q, a in self.context))


class TeamConfiguration(str, Enum):
    WRITER_ONLY = "WriterOnly"
    EXECUTOR_INCLUSIVE = "ExecutorInclusive"
    PLANNER_ENHANCED = "PlannerEnhanced"

    @classmethod
    def parse(cls, text: str) -> "TeamConfiguration":
        value = text.strip().strip(".\"'` ")
        for member in cls:
            if member.value == value:
                return member
        raise ValueError(f"not a team configuration: {text!r}")


class Status(str, Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"


_UNSET = object()


@dataclass(frozen=True)
class ArgSlot:
    """A named parameter slot; bound to a literal, fed by an upstream vertex, or unbound."""

    schema: str = "any"
    value: Any = _UNSET
    source: str | None = None
    path: str | None = None

    @property
    def state(self) -> str:
        if self.source is not None:
            return "edge"
        if self.value is not _UNSET:
            return "literal"
        return "unbound"

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"schema": self.schema}
        if self.source is not None:
            out["from"] = self.source
            if self.path:
                out["path"] = self.path
        elif self.value is not _UNSET:
            out["value"] = self.value
        return out

    @classmethod
    def from_wire(cls, raw: Any) -> "ArgSlot":
        if not isinstance(raw, Mapping):
            # bare values are shorthand for literals
            return cls(value=raw)
        return cls(
            schema=str(raw.get("schema", "any")),
            value=raw["value"] if "value" in raw else _UNSET,
            source=raw.get("from"),
            path=raw.get("path"),
        )


@dataclass(frozen=True)
class SubTask:
    id: str
    description: str
    args: Mapping[str, ArgSlot] = field(default_factory=dict)
    ret_schema: str = "any"
    tools: tuple[str, ...] = ()
    status: Status = Status.PENDING
    attempts: int = 0
    output: Any = None

    def __post_init__(self):
        object.__setattr__(self, "args", MappingProxyType(dict(self.args)))
        object.__setattr__(self, "tools", tuple(self.tools))

    @property
    def tool(self) -> str | None:
        """The bound tool id, or None for a tool-free vertex."""
        return self.tools[0] if self.tools else None

    def upstream(self) -> set[str]:
        return {slot.source for slot in self.args.values() if slot.source is not None}

    def to_wire(self) -> dict:
        if len(self.tools) > 1:
            tool: Any = list(self.tools)
        else:
            tool = self.tool
        out = {
            "id": self.id,
            "description": self.description,
            "tool": tool,
            "args": {name: slot.to_wire() for name, slot in self.args.items()},
            "ret_schema": self.ret_schema,
        }
        if self.status is not Status.PENDING or self.attempts or self.output is not None:
            out.update(status=self.status.value, attempts=self.attempts, output=self.output)
        return out

    @classmethod
    def from_wire(cls, raw: Mapping) -> "SubTask":
        if "id" not in raw:
            raise DagError("vertex without id")
        tool = raw.get("tool")
        if tool is None or tool == "":
            tools: tuple[str, ...] = ()
        elif isinstance(tool, str):
            tools = (tool,)
        else:
            tools = tuple(str(t) for t in tool)
        return cls(
            id=str(raw["id"]),
            description=str(raw.get("description", "")),
            args={str(k): ArgSlot.from_wire(v) for k, v in (raw.get("args") or {}).items()},
            ret_schema=str(raw.get("ret_schema", "any")),
            tools=tools,
            status=Status(raw.get("status", Status.PENDING.value)),
            attempts=int(raw.get("attempts", 0)),
            output=raw.get("output"),
        )


@dataclass(frozen=True)
class TaskDag:
    """Immutable task graph. Use :meth:`build` to construct from vertex and edge lists."""

    vertices: Mapping[str, SubTask]
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", MappingProxyType(dict(self.vertices)))
        object.__setattr__(self, "edges", tuple((str(a), str(b)) for a, b in self.edges))

    @classmethod
    def build(cls, vertices: Iterable[SubTask], edges: Iterable[tuple[str, str]] = ()) -> "TaskDag":
        table: dict[str, SubTask] = {}
        for v in vertices:
            if v.id in table:
                raise DagError(f"duplicate vertex id {v.id!r}")
            table[v.id] = v
        seen = set()
        uniq = []
        for e in edges:
            e = (str(e[0]), str(e[1]))
            if e not in seen:
                seen.add(e)
                uniq.append(e)
        return cls(table, tuple(uniq))

    @property
    def depth(self) -> dict[str, int]:
        return topological_depths(self)

    def parents(self, vid: str) -> list[str]:
        return [a for a, b in self.edges if b == vid]

    def children(self, vid: str) -> list[str]:
        return [b for a, b in self.edges if a == vid]

    def descendants(self, roots: Iterable[str]) -> set[str]:
        out: set[str] = set()
        todo = deque(roots)
        while todo:
            v = todo.popleft()
            if v in out:
                continue
            out.add(v)
            todo.extend(self.children(v))
        return out

    def with_vertex(self, task: SubTask) -> "TaskDag":
        table = dict(self.vertices)
        table[task.id] = task
        return TaskDag(table, self.edges)

    def to_wire(self) -> dict:
        return {
            "vertices": [v.to_wire() for v in self.vertices.values()],
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_wire(), sort_keys=True)

    @classmethod
    def from_wire(cls, raw: Mapping) -> "TaskDag":
        if not isinstance(raw, Mapping) or "vertices" not in raw:
            raise DagError("dag wire form needs a 'vertices' list")
        vertices = [SubTask.from_wire(v) for v in raw["vertices"]]
        edges = []
        for e in raw.get("edges") or []:
            if not isinstance(e, (list, tuple)) or len(e) != 2:
                raise DagError(f"malformed edge {e!r}")
            edges.append((str(e[0]), str(e[1])))
        return cls.build(vertices, edges)


def topological_depths(dag: TaskDag) -> dict[str, int]:
    """Longest-path depth of each vertex: 0 for sources, 1 + max over parents otherwise."""
    nodes = list(dag.vertices)
    for a, b in dag.edges:
        if a not in dag.vertices or b not in dag.vertices:
            raise DagError(f"edge ({a}, {b}) references an unknown vertex")
    indeg = {v: 0 for v in nodes}
    children: dict[str, list[str]] = {v: [] for v in nodes}
    for a, b in dag.edges:
        indeg[b] += 1
        children[a].append(b)
    depth = {v: 0 for v in nodes}
    ready = deque(v for v in nodes if indeg[v] == 0)
    done = 0
    while ready:
        v = ready.popleft()
        done += 1
        for c in children[v]:
            depth[c] = max(depth[c], depth[v] + 1)
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if done != len(nodes):
        raise CycleDetected(_find_cycle({v for v in nodes if indeg[v] > 0}, children))
    return depth


def _find_cycle(remaining: set[str], children: Mapping[str, list[str]]) -> list[str]:
    # nodes left after Kahn's pass each keep a parent inside the residue,
    # so walking parents must revisit a node
    parents: dict[str, list[str]] = {v: [] for v in remaining}
    for a in remaining:
        for c in children[a]:
            if c in remaining:
                parents[c].append(a)
    path: list[str] = []
    index: dict[str, int] = {}
    v = min(remaining)
    while v not in index:
        index[v] = len(path)
        path.append(v)
        v = min(parents[v])
    cycle = path[index[v]:][::-1]
    return cycle + [cycle[0]]


@dataclass(frozen=True)
class Violation:
    kind: str
    vertex: str | None
    detail: str

    def __str__(self) -> str:
        where = f" at {self.vertex}" if self.vertex else ""
        return f"{self.kind}{where}: {self.detail}"


def validate_dag(dag: TaskDag) -> list[Violation]:
    """Every violated structural invariant; an empty list means the dag is well-formed."""
    report: list[Violation] = []
    edge_set = set(dag.edges)
    for a, b in dag.edges:
        for end in (a, b):
            if end not in dag.vertices:
                report.append(Violation("unknown endpoint", end, f"edge ({a}, {b})"))
        if a == b:
            report.append(Violation("self loop", a, "vertex depends on itself"))
    for v in dag.vertices.values():
        if len(v.tools) > 1:
            report.append(Violation("multiple tools", v.id, f"bound to {list(v.tools)}"))
        if v.status is Status.DONE and v.output is None:
            report.append(Violation("done without output", v.id, "Done vertex has no output"))
        for name, slot in v.args.items():
            if slot.source is None:
                continue
            if slot.source not in dag.vertices:
                report.append(Violation("dangling dependency", v.id,
                                        f"slot {name!r} fed by unknown vertex {slot.source!r}"))
            elif (slot.source, v.id) not in edge_set:
                report.append(Violation("dangling dependency", v.id,
                                        f"slot {name!r} fed by {slot.source!r} without an edge"))
    if not any(r.kind == "unknown endpoint" for r in report):
        try:
            topological_depths(dag)
        except CycleDetected as exc:
            report.append(Violation("cycle", exc.cycle[0], " -> ".join(exc.cycle)))
    return report


@dataclass(frozen=True)
class Document:
    id: str
    title: str = ""
    content: str = ""
    site: str | None = None
    published_at: float | None = None
    quality: float | None = None
    authority: float | None = None
    relevance: float | None = None

    def __post_init__(self):
        for name in ("quality", "authority", "relevance"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} score {value} outside [0, 1]")

    def to_wire(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_wire(cls, raw: Mapping) -> "Document":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass(frozen=True)
class RankedList:
    items: tuple[str, ...]
    method: str = "input"
    scores: Mapping[str, float] | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        items = tuple(self.items)
        if len(set(items)) != len(items):
            raise ValueError("ranked list contains duplicate ids")
        object.__setattr__(self, "items", items)
        if self.scores is not None:
            missing = set(items) - set(self.scores)
            if missing:
                raise ValueError(f"scores missing for {sorted(missing)}")

    def __len__(self) -> int:
        return len(self.items)

    def to_tsv(self, query_id: str = "q0") -> str:
        lines = []
        for rank, doc_id in enumerate(self.items, start=1):
            score = self.scores[doc_id] if self.scores is not None else float(len(self.items) - rank + 1)
            lines.append(f"{query_id}\t{doc_id}\t{rank}\t{score:g}\t{self.method}")
        return "\n".join(lines) + ("\n" if lines else "")


class DirectiveKind(str, Enum):
    CONTINUE = "Continue"
    FINALIZE = "Finalize"
    REPLAN_SUBGRAPH = "ReplanSubgraph"
    AUGMENT_DAG = "AugmentDag"


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    vertex_ids: frozenset[str] = frozenset()
    reason: str = ""

    @classmethod
    def cont(cls) -> "Directive":
        return cls(DirectiveKind.CONTINUE)

    @classmethod
    def finalize(cls) -> "Directive":
        return cls(DirectiveKind.FINALIZE)

    @classmethod
    def replan(cls, ids: Iterable[str], reason: str) -> "Directive":
        return cls(DirectiveKind.REPLAN_SUBGRAPH, frozenset(ids), reason)

    @classmethod
    def augment(cls, reason: str) -> "Directive":
        return cls(DirectiveKind.AUGMENT_DAG, frozenset(), reason)

    def to_wire(self) -> dict:
        return {"kind": self.kind.value, "vertex_ids": sorted(self.vertex_ids), "reason": self.reason}


def resolve_path(value: Any, path: str | None) -> Any:
    """Follow a dotted path ("digest.year", "rounds.0") into a structured value."""
    if not path:
        return value
    for part in path.split("."):
        if isinstance(value, Mapping):
            value = value[part]
        elif isinstance(value, (list, tuple)):
            value = value[int(part)]
        else:
            raise KeyError(path)
    return value


__all__ = [
    "AISearchError", "ArgSlot", "CycleDetected", "DagError", "Directive", "DirectiveKind",
    "Document", "Query", "RankedList", "Status", "SubTask", "TaskDag", "TeamConfiguration",
    "Violation", "resolve_path", "replace", "topological_depths", "validate_dag",
]


def extract_json(text: str) -> Any:
    """First JSON object or array embedded in a model reply (code fences and prose are skipped)."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text[i:])
                return value
            except json.JSONDecodeError:
                continue
    raise ValueError(f"no JSON value in reply: {text[:80]!r}")
