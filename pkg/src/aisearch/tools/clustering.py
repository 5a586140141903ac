"""Toolkit discovery: k-means++ over tool-description embeddings, plus intra-toolkit fallback."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..gateway import Embedding, Gateway, cosine
from ..prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook
from .registry import Registry, ToolDoc

MAX_LLOYD_ITERS = 100
N_INIT = 10


@dataclass(frozen=True)
class Toolkit:
    toolkit_id: str
    member_tool_ids: frozenset[str]
    centroid: Embedding
    label: str = ""

    def __post_init__(self):
        if not self.member_tool_ids:
            raise ValueError("a toolkit needs at least one member")


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: list[float] = field(default_factory=list)
    iterations: int = 0


def default_k(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n / 2)))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_pp_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """Indices of k initial centers by D^2 sampling. Rows are assumed sorted by tool id,
    so any exact tie resolves to the lowest id."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen]).min(axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            # every remaining point coincides with a center; take the lowest unused id
            chosen.append(next(i for i in range(n) if i not in chosen))
        else:
            cum = np.cumsum(d2)
            u = rng.random() * total
            idx = int(np.searchsorted(cum, u, side="right"))
            idx = min(idx, n - 1)
            while d2[idx] == 0.0:
                idx -= 1
            chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[[chosen[-1]]])[:, 0])
    return chosen


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> KMeansResult:
    n = len(points)
    centroids = points[kmeans_pp_seeds(points, k, rng)].copy()
    labels = np.full(n, -1)
    objective: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(points, centroids)
        new_labels = d2.argmin(axis=1)  # argmin picks the lowest centroid index on ties
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                # empty cluster: move it onto the worst-served point
                own = d2[np.arange(n), labels]
                centroids[j] = points[int(np.argmax(own))]
        objective.append(float(_sq_dists(points, centroids)[np.arange(n), labels].sum()))
        if not changed:
            break
    return KMeansResult(labels=labels, centroids=centroids, objective=objective, iterations=it)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = MAX_LLOYD_ITERS,
           n_init: int = N_INIT) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations until the assignment stops changing.

    ``n_init`` independent seedings are run from one seeded generator and the run with the
    lowest final objective is kept (earliest on ties).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(points, k, rng, max_iter)
        if best is None or run.objective[-1] < best.objective[-1] - 1e-12:
            best = run
    return best


def summarize_tool(gateway: Gateway, doc: ToolDoc | str, prompts: PromptBook = DEFAULT_PROMPTS) -> str:
    text = doc.current if isinstance(doc, ToolDoc) else str(doc)
    if not text.strip():
        raise ValueError("cannot summarize empty documentation")
    reply = gateway.ask("tool-summary", prompts.render("tool-summary", documentation=text))
    summary = reply.text.strip()
    if not summary:
        raise ValueError("tool summary came back empty")
    return summary


def cluster_toolkits(
    descriptions: Mapping[str, str] | Sequence[tuple[str, str]],
    k: int | None,
    seed: int = 0,
    embed: Callable[[str], Embedding] | None = None,
    roles: Mapping[str, str] | None = None,
) -> list[Toolkit]:
    """Partition tools into k toolkits by clustering their description embeddings."""
    items = sorted(dict(descriptions).items())
    if not items:
        raise ValueError("no tools to cluster")
    if k is None:
        k = default_k(len(items))
    if not 1 <= k <= len(items):
        raise ValueError(f"k={k} out of range for {len(items)} tools")
    if embed is None:
        from ..gateway import MockProvider
        embed = MockProvider().embed
    ids = [tid for tid, _ in items]
    points = np.stack([embed(desc).values for _, desc in items])
    result = kmeans(points, k, seed=seed)
    kits = []
    for j in range(k):
        members = frozenset(ids[i] for i in np.flatnonzero(result.labels == j))
        if not members:
            continue
        kits.append((min(members), members, result.centroids[j]))
    kits.sort(key=lambda t: t[0])
    out = []
    for n, (_, members, centroid) in enumerate(kits):
        label = f"toolkit-{n}"
        if roles:
            common = Counter(roles.get(t, "") for t in members).most_common()
            top = sorted((r for r, c in common if c == common[0][1]))[0]
            if top:
                label = f"{top} toolkit"
        out.append(Toolkit(f"tk{n}", members, Embedding(centroid), label))
    return out


def cluster_registry(registry: Registry, gateway: Gateway, k: int | None = None, seed: int = 0,
                     summarize: bool = True) -> list[Toolkit]:
    """Summarize every tool, cluster the summaries, and install the toolkits on the registry."""
    descriptions = {}
    for m in registry.manifests():
        descriptions[m.tool_id] = summarize_tool(gateway, m.documentation) if summarize else m.documentation.current
    kits = cluster_toolkits(descriptions, k, seed=seed, embed=gateway.embed,
                            roles={m.tool_id: m.semantic_role for m in registry.manifests()})
    registry.assign_toolkits(kits)
    return kits


def fallback_candidates(registry: Registry, tool_id: str, embed: Callable[[str], Embedding]) -> list[str]:
    """Other members of the tool's toolkit, most similar documentation first."""
    kit = registry.toolkit_of(tool_id)
    anchor = embed(registry.get(tool_id).documentation.current)
    scored = []
    for other in kit.member_tool_ids:
        if other == tool_id or other not in registry:
            continue
        sim = cosine(anchor, embed(registry.get(other).documentation.current))
        scored.append((-sim, other))
    return [t for _, t in sorted(scored)]
