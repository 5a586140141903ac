"""Query-oriented tool retrieval: dual-tower cosine scores plus completeness-aware scene re-ranking."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import Query
from .gateway import Gateway, cosine
from .tools.registry import Registry, UnknownTool

DEFAULT_ALPHA = 0.3
DEFAULT_CAP = 12


@dataclass(frozen=True)
class SceneGraph:
    query_scene: tuple[tuple[str, str], ...] = ()
    query_tool: tuple[tuple[str, str], ...] = ()
    scene_tool: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("query_scene", "query_tool", "scene_tool"):
            object.__setattr__(self, name, tuple((str(a), str(b)) for a, b in getattr(self, name)))
        scenes = {s for _, s in self.query_scene}
        members = self.scenes()
        empty = scenes - set(members)
        if empty:
            raise ValueError(f"scenes without tools: {sorted(empty)}")

    def scenes(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {}
        for scene, tool in self.scene_tool:
            out.setdefault(scene, set()).add(tool)
        return {s: frozenset(t) for s, t in out.items()}

    def check_tools(self, known: Iterable[str]) -> None:
        known = set(known)
        unknown = {t for _, t in self.scene_tool + self.query_tool} - known
        if unknown:
            raise ValueError(f"scene graph references unknown tools {sorted(unknown)}")

    @classmethod
    def load(cls, path: str | Path) -> "SceneGraph":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**{k: tuple(map(tuple, raw.get(k, ()))) for k in ("query_scene", "query_tool", "scene_tool")})

    def to_wire(self) -> dict:
        return {k: [list(e) for e in getattr(self, k)] for k in ("query_scene", "query_tool", "scene_tool")}


EMPTY_GRAPH = SceneGraph()


@dataclass(frozen=True)
class CapabilityBoundary:
    tool_ids: tuple[str, ...]
    scores: Mapping[str, float]
    built_at: float = field(default_factory=time.time)
    scene: str | None = None

    def __len__(self) -> int:
        return len(self.tool_ids)


def query_text(query: Query) -> str:
    """The text embedded for a query: prior user turns, oldest first, then the query itself."""
    return "\n".join([q for q, _ in query.context] + [query.text])


def semantic_scores(gateway: Gateway, registry: Registry, query: Query,
                    candidates: Sequence[str] | None = None) -> dict[str, float]:
    ids = registry.ids() if candidates is None else list(candidates)
    for tid in ids:
        if tid not in registry:
            raise UnknownTool(f"unknown tool {tid!r}")
    if not ids:
        return {}
    q = gateway.embed(query_text(query))
    return {tid: cosine(q, gateway.embed(registry.get(tid).documentation.current)) for tid in ids}


def _scene_means(semantic: Mapping[str, float], graph: SceneGraph) -> dict[str, float]:
    out = {}
    for scene, members in graph.scenes().items():
        present = [semantic[t] for t in members if t in semantic]
        if present:
            out[scene] = math.fsum(present) / len(present)
    return out


def completeness_rerank(semantic: Mapping[str, float], graph: SceneGraph = EMPTY_GRAPH,
                        alpha: float = DEFAULT_ALPHA, cap: int = DEFAULT_CAP) -> CapabilityBoundary:
    """Blend each tool's own score with its best scene's mean score, then keep the best scene whole."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if cap <= 0:
        raise ValueError("cap must be positive")
    means = _scene_means(semantic, graph)
    scenes = graph.scenes()
    final = {}
    for tid, sem in semantic.items():
        bonus = max((means[s] for s, m in scenes.items() if tid in m and s in means), default=0.0)
        final[tid] = (1.0 - alpha) * sem + alpha * bonus
    ranked = sorted(final, key=lambda t: (-final[t], t))

    best = min(means, key=lambda s: (-means[s], s)) if means else None
    keep = ranked[:cap]
    if best is not None:
        required = [t for t in ranked if t in scenes[best]]
        if len(required) <= cap:
            missing = [t for t in required if t not in keep]
            if missing:
                others = [t for t in keep if t not in scenes[best]]
                drop = set(others[len(others) - len(missing):])
                keep = [t for t in keep if t not in drop] + missing
                keep.sort(key=lambda t: (-final[t], t))
    return CapabilityBoundary(tuple(keep), {t: final[t] for t in keep}, scene=best)


def retrieve(gateway: Gateway, registry: Registry, query: Query, graph: SceneGraph = EMPTY_GRAPH,
             alpha: float = DEFAULT_ALPHA, cap: int = DEFAULT_CAP) -> CapabilityBoundary:
    return completeness_rerank(semantic_scores(gateway, registry, query), graph, alpha, cap)


def infonce_loss(sim_pos: float, sim_negs: Sequence[float]) -> float:
    if len(sim_negs) == 0:
        raise ValueError("need at least one negative")
    logits = [sim_pos, *sim_negs]
    top = max(logits)
    log_z = top + math.log(math.fsum(math.exp(x - top) for x in logits))
    return log_z - sim_pos

