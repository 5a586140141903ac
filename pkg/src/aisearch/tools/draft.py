"""Self-driven documentation refinement: explore, analyze, rewrite, stop when versions converge."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from .. import trace
from ..core import AISearchError, extract_json
from ..gateway import Embedding, Gateway, GatewayError, cosine
from ..prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook
from .registry import Registry, ToolDoc, ToolError

DEFAULT_PHI = 0.9
DEFAULT_TAU = 0.9
DEFAULT_MAX_ITERS = 8
MAX_REFLECTIONS = 3

_TOKEN = re.compile(r"\w+|[^\w\s]")


def diversity_gate(candidate: Embedding, history: Sequence[Embedding], phi: float) -> bool:
    """Accept iff the candidate's highest cosine to any earlier query stays below phi."""
    if not 0.0 < phi <= 1.0:
        raise ValueError("phi must lie in (0, 1]")
    if not history:
        return True
    return max(cosine(candidate, prior) for prior in history) < phi


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU-4, uniform weights, add-one smoothing for n >= 2, brevity penalty."""
    if not candidate.strip() or not reference.strip():
        raise ValueError("bleu needs two non-empty strings")
    cand = _TOKEN.findall(candidate)
    ref = _TOKEN.findall(reference)
    log_sum = 0.0
    for n in range(1, max_n + 1):
        c_counts = _ngrams(cand, n)
        r_counts = _ngrams(ref, n)
        matched = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        total = max(len(cand) - n + 1, 1)
        if n > 1:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def termination_delta(gateway: Gateway, t_i: str, t_prev: str) -> float:
    """Mean of embedding cosine and BLEU between two documentation versions."""
    if not t_i.strip() or not t_prev.strip():
        raise ValueError("termination_delta needs two non-empty documents")
    return (cosine(gateway.embed(t_i), gateway.embed(t_prev)) + bleu(t_i, t_prev)) / 2.0


@dataclass(frozen=True)
class ExplorationRecord:
    query: str
    params: Any
    result: Any
    accepted: bool
    iteration: int = 0


@dataclass
class Refinement:
    doc: ToolDoc
    records: list[ExplorationRecord] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    calls: Counter = field(default_factory=Counter)


class DraftError(AISearchError):
    pass


def _parse_object(text: str) -> dict:
    try:
        value = extract_json(text)
    except ValueError as exc:
        raise DraftError(str(exc)) from exc
    if not isinstance(value, dict):
        raise DraftError(f"expected a JSON object, got {type(value).__name__}")
    return value


def refine_documentation(
    registry: Registry,
    gateway: Gateway,
    tool_id: str,
    max_iters: int = DEFAULT_MAX_ITERS,
    phi: float = DEFAULT_PHI,
    tau: float = DEFAULT_TAU,
    max_reflections: int = MAX_REFLECTIONS,
    prompts: PromptBook = DEFAULT_PROMPTS,
) -> Refinement:
    """Run the explore -> invoke -> analyze -> rewrite loop for one tool and store the result."""
    manifest = registry.get(tool_id)
    doc = manifest.documentation
    out = Refinement(doc=doc)
    direction = "none yet"
    accepted_queries: list[Embedding] = []

    for i in range(1, max_iters + 1):
        out.iterations = i
        history = "\n".join(
            f"- {r.query} -> {json.dumps(r.result, sort_keys=True)}" for r in out.records if r.accepted
        ) or "(none)"
        try:
            candidate = None
            for attempt in range(max_reflections + 1):
                reflection = "" if attempt == 0 else (
                    f"Reflection attempt {attempt}: the previous query was rejected as redundant "
                    "with earlier explorations. Propose a substantially different use case.")
                reply = gateway.ask("draft-explore", prompts.render(
                    "draft-explore", tool=manifest.name, iteration=i, documentation=doc.current,
                    direction=direction, history=history, reflection=reflection))
                out.calls["explore"] += 1
                proposal = _parse_object(reply.text)
                query = str(proposal.get("query", "")).strip()
                params = proposal.get("params", {})
                if not query:
                    raise DraftError("exploration proposal without a query")
                emb = gateway.embed(query)
                if diversity_gate(emb, accepted_queries, phi):
                    candidate = (query, params, emb)
                    break
                out.records.append(ExplorationRecord(query, params, None, False, i))
                trace.emit("draft_rejected", tool_id=tool_id, iteration=i, query=query)
            if candidate is None:
                continue
            query, params, emb = candidate
            try:
                result = registry.invoke(tool_id, params)
            except ToolError as exc:
                result = {"error": f"{type(exc).__name__}: {exc}"}
            accepted_queries.append(emb)
            out.records.append(ExplorationRecord(query, params, result, True, i))

            revisions = "\n---\n".join(doc.history) or "(none)"
            suggestions = gateway.ask("draft-analyze", prompts.render(
                "draft-analyze", tool=manifest.name, iteration=i, documentation=doc.current,
                query=query, params=json.dumps(params, sort_keys=True),
                result=json.dumps(result, sort_keys=True), revisions=revisions)).text.strip()
            out.calls["analyze"] += 1

            rewrite = _parse_object(gateway.ask("draft-rewrite", prompts.render(
                "draft-rewrite", tool=manifest.name, iteration=i, documentation=doc.current,
                query=query, result=json.dumps(result, sort_keys=True), suggestions=suggestions,
                revisions=revisions)).text)
            out.calls["rewrite"] += 1
            new_text = str(rewrite.get("documentation", "")).strip()
            if not new_text:
                raise DraftError("rewrite produced empty documentation")
            direction = str(rewrite.get("direction", direction))
        except (GatewayError, DraftError) as exc:
            out.errors.append((i, f"{type(exc).__name__}: {exc}"))
            trace.emit("draft_error", tool_id=tool_id, iteration=i, error=str(exc))
            continue

        delta = termination_delta(gateway, new_text, doc.current)
        doc = doc.revise(new_text)
        out.deltas.append(delta)
        trace.emit("draft_revision", tool_id=tool_id, iteration=i, revision=doc.revision, delta=delta)
        if delta > tau:
            out.converged = True
            break

    out.doc = doc
    registry.update_doc(tool_id, doc)
    return out
