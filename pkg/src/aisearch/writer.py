"""Answer synthesis and the citation pipeline (verify, correct, simplify) over a support oracle.

Citation indices are 1-based positions in the document list handed to the writer.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Mapping, Protocol, Sequence

from . import trace
from .core import AISearchError, Document
from .gateway import Gateway
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook

POWER_SET_LIMIT = 10


class ParseError(AISearchError):
    pass


class Unsupportable(AISearchError):
    pass


@dataclass(frozen=True)
class Statement:
    claim: str
    citations: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "citations", tuple(int(c) for c in self.citations))

    def render(self) -> str:
        marks = "".join(f"[{c}]" for c in self.citations)
        if not marks:
            return self.claim
        body, end = (self.claim[:-1], self.claim[-1]) if self.claim[-1:] in ".!?" else (self.claim, "")
        return f"{body} {marks}{end}"


@dataclass(frozen=True)
class CitationedAnswer:
    statements: tuple[Statement, ...]
    degraded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "statements", tuple(self.statements))

    @property
    def text(self) -> str:
        return " ".join(s.render() for s in self.statements)

    def to_wire(self) -> dict:
        return {"statements": [{"claim": s.claim, "citations": list(s.citations)} for s in self.statements],
                "degraded": self.degraded}

    @classmethod
    def from_wire(cls, raw: Mapping) -> "CitationedAnswer":
        return cls(tuple(Statement(s["claim"], tuple(s.get("citations", ()))) for s in raw["statements"]),
                   bool(raw.get("degraded", False)))


# -- support oracles -----------------------------------------------------------

class SupportOracle(Protocol):
    def supports(self, citations: frozenset[int], claim: str,
                 documents: Sequence[Document] = ()) -> bool: ...


@dataclass
class MockTable:
    """Explicit truth table over (citation set, claim); anything absent is unsupported."""

    table: Mapping[tuple[frozenset[int], str], bool] = field(default_factory=dict)
    queries: int = 0

    def supports(self, citations, claim, documents=()):
        self.queries += 1
        return bool(self.table.get((frozenset(citations), claim), False))


class ModelBackedOracle:
    """NLI through the gateway (tag "nli"); verdicts are memoized per (citation set, claim)."""

    def __init__(self, gateway: Gateway, prompts: PromptBook = DEFAULT_PROMPTS):
        self.gateway = gateway
        self.prompts = prompts
        self._memo: dict[tuple[frozenset[int], str], bool] = {}
        self._lock = threading.Lock()

    def supports(self, citations, claim, documents=()):
        key = (frozenset(citations), claim)
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        if not citations:
            verdict = False
        else:
            evidence = "\n\n".join(f"[{i}] {documents[i - 1].content}" for i in sorted(citations))
            reply = self.gateway.ask("nli", self.prompts.render("nli", claim=claim, evidence=evidence))
            verdict = reply.text.strip().upper().startswith("SUPPORTED")
        with self._lock:
            self._memo[key] = verdict
        return verdict


# -- verification ----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    supported: bool
    minimal: bool
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.supported and self.minimal


def verify_statement(statement: Statement, documents: Sequence[Document], oracle: SupportOracle) -> Verdict:
    cites = frozenset(statement.citations)
    if not cites:
        if documents:
            return Verdict(False, False, "no citation although documents exist")
        return Verdict(True, True)
    bad = [c for c in cites if not 1 <= c <= len(documents)]
    if bad:
        return Verdict(False, False, f"citation index out of range: {sorted(bad)}")
    if not oracle.supports(cites, statement.claim, documents):
        return Verdict(False, False, "citations do not support the claim")
    for c in sorted(cites):
        alone = oracle.supports(frozenset({c}), statement.claim, documents)
        if not alone and oracle.supports(cites - {c}, statement.claim, documents):
            return Verdict(True, False, f"citation [{c}] is neither supporting nor necessary")
    return Verdict(True, True)


def verify_citations(answer: CitationedAnswer, documents: Sequence[Document],
                     oracle: SupportOracle) -> list[Verdict]:
    return [verify_statement(s, documents, oracle) for s in answer.statements]


def correct_citations(statement: Statement, documents: Sequence[Document], oracle: SupportOracle) -> Statement:
    """Smallest supporting citation set, ties broken lexicographically."""
    n = len(documents)
    if n <= POWER_SET_LIMIT:
        for size in range(1, n + 1):
            for subset in combinations(range(1, n + 1), size):
                if oracle.supports(frozenset(subset), statement.claim, documents):
                    return Statement(statement.claim, subset)
        raise Unsupportable(f"no document subset supports {statement.claim!r}")
    chosen: list[int] = []
    for idx in range(1, n + 1):
        chosen.append(idx)
        if oracle.supports(frozenset(chosen), statement.claim, documents):
            return simplify_citations(Statement(statement.claim, tuple(chosen)), oracle, documents)
    raise Unsupportable(f"no document subset supports {statement.claim!r}")


def simplify_citations(statement: Statement, oracle: SupportOracle,
                       documents: Sequence[Document] = ()) -> Statement:
    """Drop citations (highest index first) whose removal keeps support, until nothing changes."""
    cites = sorted(set(statement.citations))
    changed = True
    while changed:
        changed = False
        for c in sorted(cites, reverse=True):
            if len(cites) == 1:
                break
            rest = frozenset(cites) - {c}
            if oracle.supports(rest, statement.claim, documents):
                cites.remove(c)
                changed = True
    return Statement(statement.claim, tuple(cites))


# -- synthesis -----------------------------------------------------------------------

_CITE = re.compile(r"\[(\d+(?:\s*,\s*\d+)*)\]")


def parse_answer(text: str, n_documents: int) -> CitationedAnswer:
    statements = []
    for line in text.splitlines():
        line = line.strip().lstrip("-*• ").strip()
        if not line:
            continue
        cites: list[int] = []
        for m in _CITE.finditer(line):
            for part in m.group(1).split(","):
                c = int(part)
                if not 1 <= c <= n_documents:
                    raise ParseError(f"citation [{c}] outside 1..{n_documents}")
                if c not in cites:
                    cites.append(c)
        claim = re.sub(r"\s+([.,;:!?])", r"\1", _CITE.sub("", line)).strip()
        if not claim:
            continue
        if n_documents and not cites:
            raise ParseError(f"statement without citation: {claim!r}")
        statements.append(Statement(claim, tuple(cites)))
    if not statements:
        raise ParseError("answer contains no statements")
    return CitationedAnswer(tuple(statements))


def collect_documents(outputs: Iterable[Any]) -> list[Document]:
    """Search hits found anywhere inside tool outputs, first occurrence wins."""
    found: dict[str, Document] = {}

    def walk(value: Any) -> None:
        if isinstance(value, Mapping):
            if isinstance(value.get("results"), list):
                for hit in value["results"]:
                    if isinstance(hit, Mapping) and "id" in hit and "content" in hit:
                        found.setdefault(str(hit["id"]), Document(str(hit["id"]), str(hit.get("title", "")),
                                                                 str(hit["content"])))
            for v in value.values():
                walk(v)
        elif isinstance(value, (list, tuple)):
            for v in value:
                walk(v)

    for out in outputs:
        walk(out)
    return list(found.values())


def synthesize(gateway: Gateway, query: str, subtask_outputs: Mapping[str, Any],
               documents: Sequence[Document], prompts: PromptBook = DEFAULT_PROMPTS) -> CitationedAnswer:
    listing = "\n".join(f"[{i}] {d.title}: {d.content}" for i, d in enumerate(documents, 1)) or "(no documents)"
    results = json.dumps(dict(subtask_outputs), sort_keys=True, ensure_ascii=False, default=str)
    prompt = prompts.render("write", query=query, documents=listing, results=results)
    reply = gateway.ask("write", prompt)
    try:
        return parse_answer(reply.text, len(documents))
    except ParseError as exc:
        trace.emit("write_retry", error=str(exc))
        reply = gateway.ask("write", f"{prompt}\n\nYour previous answer was rejected: {exc}. "
                                     "Rewrite it following the format exactly.")
        return parse_answer(reply.text, len(documents))
