"""LLM ranking lab: pointwise, pairwise (all-pairs, heap, bubble), sliding-window listwise,
tournament ranking, RankNet pairs and loss, NDCG, metadata policies."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Protocol, Sequence

import numpy as np

from .core import AISearchError, Document, RankedList
from .gateway import Gateway
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptBook


class RankingError(AISearchError):
    pass


class MissingLogprobs(RankingError):
    pass


class Comparator(Protocol):
    calls: Counter

    def score(self, query: str, doc: Document) -> float: ...

    def prefer(self, query: str, a: Document, b: Document) -> bool: ...

    def order(self, query: str, docs: Sequence[Document]) -> list[Document]: ...


class MockOracle:
    """Numeric relevance oracle. ``prefer(a, b)`` is true iff a is strictly more relevant."""

    def __init__(self, relevance: Mapping[str, float]):
        self.relevance = dict(relevance)
        self.calls: Counter = Counter()

    def _rel(self, doc: Document) -> float:
        try:
            return self.relevance[doc.id]
        except KeyError:
            raise RankingError(f"oracle has no relevance for {doc.id!r}") from None

    def score(self, query, doc):
        self.calls["pointwise"] += 1
        return self._rel(doc)

    def prefer(self, query, a, b):
        self.calls["pairwise"] += 1
        return self._rel(a) > self._rel(b)

    def order(self, query, docs):
        self.calls["listwise"] += 1
        return sorted(docs, key=lambda d: -self._rel(d))


_BRACKET = re.compile(r"\[(\d+)\]")


def _excerpt(doc: Document, limit: int = 400) -> str:
    text = f"{doc.title}. {doc.content}" if doc.title else doc.content
    return text[:limit]


class ModelBacked:
    """Comparator that asks the model. Tags: rank-pointwise, rank-pairwise, rank-listwise."""

    def __init__(self, gateway: Gateway, prompts: PromptBook = DEFAULT_PROMPTS):
        self.gateway = gateway
        self.prompts = prompts
        self.calls: Counter = Counter()

    def score(self, query, doc):
        self.calls["pointwise"] += 1
        reply = self.gateway.ask("rank-pointwise", self.prompts.render(
            "rank-pointwise", query=query, document=_excerpt(doc)))
        lp_yes = reply.logprob_of("yes")
        if lp_yes is None:
            raise MissingLogprobs(f"no 'yes' logprob in pointwise reply for {doc.id}")
        lp_no = reply.logprob_of("no")
        if lp_no is None:
            p_yes = math.exp(lp_yes)
            if p_yes >= 1.0:
                return 1.0
            lp_no = math.log1p(-p_yes)
        return 1.0 / (1.0 + math.exp(lp_no - lp_yes))

    def prefer(self, query, a, b):
        self.calls["pairwise"] += 1
        reply = self.gateway.ask("rank-pairwise", self.prompts.render(
            "rank-pairwise", query=query, passage_a=_excerpt(a), passage_b=_excerpt(b)))
        verdict = reply.text.strip().upper()[:1]
        if verdict not in ("A", "B"):
            raise RankingError(f"pairwise reply is neither A nor B: {reply.text!r}")
        return verdict == "A"

    def order(self, query, docs):
        self.calls["listwise"] += 1
        listing = "\n".join(f"[{i}] {_excerpt(d)}" for i, d in enumerate(docs, 1))
        reply = self.gateway.ask("rank-listwise", self.prompts.render(
            "rank-listwise", query=query, n=len(docs), passages=listing))
        seen: list[int] = []
        for m in _BRACKET.finditer(reply.text):
            i = int(m.group(1)) - 1
            if 0 <= i < len(docs) and i not in seen:
                seen.append(i)
        # RankGPT convention: anything the model left out keeps its relative order at the end
        seen += [i for i in range(len(docs)) if i not in seen]
        return [docs[i] for i in seen]


# -- pointwise / pairwise ------------------------------------------------------

def pointwise_scores(query: str, docs: Sequence[Document], comparator: Comparator) -> dict[str, float]:
    return {d.id: comparator.score(query, d) for d in docs}


class PairwiseStrategy(str, Enum):
    ALL_PAIRS = "AllPairs"
    HEAP_SORT = "HeapSort"
    BUBBLE_SORT = "BubbleSort"


def _heap_sort(docs: list[Document], better) -> list[Document]:
    """Classic in-place heapsort; the heap root is the best document."""
    a = list(docs)
    n = len(a)

    def sift(root: int, end: int) -> None:
        while True:
            child = 2 * root + 1
            if child >= end:
                return
            if child + 1 < end and better(a[child + 1], a[child]):
                child += 1
            if better(a[child], a[root]):
                a[root], a[child] = a[child], a[root]
                root = child
            else:
                return

    for start in range(n // 2 - 1, -1, -1):
        sift(start, n)
    out = []
    for end in range(n - 1, -1, -1):
        out.append(a[0])
        a[0] = a[end]
        sift(0, end)
    return out


def _bubble_sort(docs: list[Document], better) -> list[Document]:
    a = list(docs)
    for i in range(len(a)):
        swapped = False
        for j in range(len(a) - 1 - i):
            if better(a[j + 1], a[j]):
                a[j], a[j + 1] = a[j + 1], a[j]
                swapped = True
        if not swapped:
            break
    return a


def pairwise_rank(query: str, docs: Sequence[Document], comparator: Comparator,
                  strategy: PairwiseStrategy | str = PairwiseStrategy.ALL_PAIRS) -> RankedList:
    strategy = PairwiseStrategy(strategy)
    docs = list(docs)
    if strategy is PairwiseStrategy.ALL_PAIRS:
        wins = [0] * len(docs)
        for i in range(len(docs)):
            for j in range(len(docs)):
                if i != j:
                    wins[i if comparator.prefer(query, docs[i], docs[j]) else j] += 1
        order = sorted(range(len(docs)), key=lambda i: (-wins[i], i))
        return RankedList(tuple(docs[i].id for i in order), method="pairwise-allpairs",
                          scores={docs[i].id: float(wins[i]) for i in order})
    better = lambda a, b: comparator.prefer(query, a, b)  # noqa: E731
    ranked = _heap_sort(docs, better) if strategy is PairwiseStrategy.HEAP_SORT else _bubble_sort(docs, better)
    return RankedList(tuple(d.id for d in ranked), method=f"pairwise-{strategy.value.lower()}")


# -- listwise: sliding window ----------------------------------------------------

def window_starts(m: int, w: int, s: int) -> list[int]:
    """Start offsets visited by the sliding window, bottom of the list first."""
    if w <= 0 or s <= 0:
        raise ValueError("window and step must be positive")
    if w >= m:
        return [0]
    starts = [m - w]
    while starts[-1] > 0:
        starts.append(max(0, starts[-1] - s))
    return starts


def sliding_window_rank(docs: Sequence[Document], w: int, s: int, comparator: Comparator,
                        query: str = "") -> RankedList:
    ranked = list(docs)
    starts = window_starts(len(ranked), w, s)
    for start in starts:
        ranked[start:start + w] = comparator.order(query, ranked[start:start + w])
    return RankedList(tuple(d.id for d in ranked), method="sliding-window",
                      meta={"w": w, "s": s, "passes": len(starts)})


# -- listwise: tournament ---------------------------------------------------------

@dataclass(frozen=True)
class TournamentConfig:
    group_size: int = 10
    advance_n: int = 5
    rounds_r: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.advance_n < self.group_size:
            raise ValueError("need 0 < advance_n < group_size")
        if self.rounds_r < 1:
            raise ValueError("need at least one round")


def _round_robin(order: Sequence[int], n_groups: int) -> list[list[int]]:
    return [list(order[g::n_groups]) for g in range(n_groups)]


def tournament_rank(docs: Sequence[Document], config: TournamentConfig, comparator: Comparator,
                    query: str = "") -> RankedList:
    """R independent tournaments; each advancement through a stage is worth one point."""
    docs = list(docs)
    n = len(docs)
    points = np.zeros(n, dtype=np.int64)
    pos_sum = np.zeros(n)
    pos_cnt = np.zeros(n)
    stages_per_round = []
    for r in range(config.rounds_r):
        rng = np.random.default_rng([config.seed, r])
        survivors = [int(i) for i in rng.permutation(n)]
        stages = 0
        while survivors:
            final = len(survivors) <= config.group_size
            groups = _round_robin(survivors, math.ceil(len(survivors) / config.group_size))
            advanced = []
            for group in groups:
                ranked = comparator.order(query, [docs[i] for i in group])
                index_of = {id(docs[i]): i for i in group}
                ordered = [index_of[id(d)] for d in ranked]
                for pos, i in enumerate(ordered):
                    pos_sum[i] += pos
                    pos_cnt[i] += 1
                take = min(config.advance_n, len(group) - 1) if len(group) > 1 else 1
                advanced += ordered[:take]
            for i in advanced:
                points[i] += 1
            stages += 1
            if final:
                break
            survivors = advanced
        stages_per_round.append(stages)
    mean_pos = np.divide(pos_sum, pos_cnt, out=np.full(n, np.inf), where=pos_cnt > 0)
    order = sorted(range(n), key=lambda i: (-points[i], mean_pos[i], i))
    return RankedList(tuple(docs[i].id for i in order), method="tournament",
                      scores={docs[i].id: float(points[i]) for i in order},
                      meta={"stages": stages_per_round, "rounds": config.rounds_r, "seed": config.seed})


# -- RankNet distillation --------------------------------------------------------

def ranknet_pairs(teacher: RankedList | Sequence[str]) -> list[tuple[str, str]]:
    items = list(teacher.items if isinstance(teacher, RankedList) else teacher)
    if len(set(items)) != len(items):
        raise ValueError("teacher list contains duplicates")
    if len(items) < 2:
        raise ValueError("need at least two documents")
    return [(items[i], items[j]) for i in range(len(items)) for j in range(i + 1, len(items))]


def ranknet_loss(teacher_ranks: Mapping[str, int], student_scores: Mapping[str, float],
                 negate: bool = False) -> float:
    """Sum of log(1 + exp(s_i - s_j)) over pairs where i ranks above j for the teacher.

    Taken as written, lower student score means better. ``negate`` flips the polarity
    for students that score relevant documents higher.
    """
    if set(teacher_ranks) != set(student_scores):
        raise ValueError("teacher and student cover different documents")
    sign = -1.0 if negate else 1.0
    ids = sorted(teacher_ranks, key=lambda d: (teacher_ranks[d], d))
    total = 0.0
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            if teacher_ranks[i] < teacher_ranks[j]:
                total += float(np.logaddexp(0.0, sign * (student_scores[i] - student_scores[j])))
    return total


def ndcg(ranking: RankedList | Sequence[str], gains: Mapping[str, float], k: int) -> float:
    if k <= 0:
        raise ValueError("k must be positive")
    items = list(ranking.items if isinstance(ranking, RankedList) else ranking)
    missing = [d for d in items if d not in gains]
    if missing:
        raise ValueError(f"no gain for {missing}")
    dcg = sum(gains[d] / math.log2(pos + 1) for pos, d in enumerate(items[:k], 1))
    ideal = sorted(gains.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(pos + 1) for pos, g in enumerate(ideal, 1))
    if idcg == 0.0:
        return 1.0
    return dcg / idcg


# -- metadata policies ---------------------------------------------------------------

FEATURES = ("recency", "quality", "relevance", "authority")
_FIELD = {"recency": "published_at", "quality": "quality", "relevance": "relevance", "authority": "authority"}


@dataclass(frozen=True)
class RankPolicy:
    keys: tuple[str, ...]

    def __post_init__(self):
        if sorted(self.keys) != sorted(FEATURES):
            raise ValueError(f"policy must order exactly {FEATURES}")


P1 = RankPolicy(("recency", "quality", "relevance", "authority"))
P2 = RankPolicy(("quality", "relevance", "recency", "authority"))


def apply_metadata_policy(docs: Sequence[Document], policy: RankPolicy) -> RankedList:
    def key(d: Document):
        return tuple(-(getattr(d, _FIELD[k]) or 0.0) for k in policy.keys)
    ranked = sorted(docs, key=key)  # sorted() is stable, so full ties keep input order
    return RankedList(tuple(d.id for d in ranked), method="policy:" + ">".join(policy.keys))
