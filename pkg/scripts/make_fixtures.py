"""Regenerate the bundled ranking and cache fixtures.

docs_100.json  100 synthetic documents with graded gains for the ranking lab.
cache_log.jsonl  100 queries replayed through the semantic cache. 31 are light rewordings of an
earlier query (cosine >= 0.95 under the trigram embedding), 8 are looser rewordings sitting in
[0.90, 0.95), the rest are distinct questions.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from aisearch.gateway import Embedding, cosine, trigram_embedding

DATA = Path(__file__).resolve().parent.parent / "src" / "aisearch" / "data"

SUBJECTS = [
    "Emperor Wu of Han", "Julius Caesar", "the Han dynasty", "the Roman Republic", "Mount Tai",
    "the Great Wall of China", "the Yangtze river", "Marco Polo", "the Silk Road", "Confucius",
    "the Tang dynasty", "Augustus", "Hannibal", "Cleopatra", "the Forbidden City", "Qin Shi Huang",
    "the Terracotta Army", "Alexander the Great", "the Colosseum", "the Ming dynasty", "Zheng He",
    "the Grand Canal", "Sun Tzu", "the Parthenon", "Genghis Khan", "the Ottoman Empire",
    "the printing press", "the Byzantine Empire", "gunpowder", "the compass", "Mount Everest",
    "the Nile river", "the Mongol Empire", "Pompeii", "the Eiffel Tower",
]
TEMPLATES = ["when was {} founded or born", "what is the history of {}"]
WEATHER_CITIES = ["Beijing", "Paris"]


def _emb(text: str) -> Embedding:
    return Embedding(np.asarray(trigram_embedding(text)))


def _sim(a: str, b: str) -> float:
    return cosine(_emb(a), _emb(b))


# rewording operators, mildest first
CLOSE_EDITS = [
    lambda q: q.capitalize() + "?",
    lambda q: "so " + q,
    lambda q: q.upper(),
    lambda q: "Q: " + q + "?",
    lambda q: "  ".join(q.split()) + "!",
]
LOOSE_EDITS = [
    lambda q: q + " please",
    lambda q: "tell me " + q,
    lambda q: q + " and why",
    lambda q: q + " exactly",
]


def make_cache_log(n_total: int = 100, n_close: int = 31, n_loose: int = 8) -> list[dict]:
    bases = [t.format(s) for s in SUBJECTS for t in TEMPLATES]
    n_base = n_total - n_close - n_loose
    # distinct questions must not hit each other even at tau=0.90
    chosen: list[str] = []
    for q in bases:
        if all(_sim(q, c) < 0.85 for c in chosen):
            chosen.append(q)
        if len(chosen) == n_base:
            break
    if len(chosen) < n_base:
        raise SystemExit(f"only {len(chosen)} distinct base queries")
    close, loose = [], []
    for i, q in enumerate(chosen):
        for edit in CLOSE_EDITS[i % len(CLOSE_EDITS):] + CLOSE_EDITS[:i % len(CLOSE_EDITS)]:
            v = edit(q)
            if v != q and _sim(q, v) >= 0.96 and len(close) < n_close:
                close.append((i, v))
                break
    for i, q in enumerate(chosen):
        for edit in LOOSE_EDITS:
            v = edit(q)
            s = _sim(q, v)
            # loose rewordings must miss every other query at 0.95 and hit their own at 0.90
            if 0.905 <= s < 0.945 and len(loose) < n_loose:
                loose.append((i, v))
                break
    if len(close) < n_close or len(loose) < n_loose:
        raise SystemExit(f"not enough rewordings: close={len(close)} loose={len(loose)}")
    log = [{"query": q, "kind": "new", "of": None} for q in chosen]
    # a rewording always follows its source; interleave deterministically
    rng = np.random.default_rng(31)
    for kind, pairs in (("close", close), ("loose", loose)):
        for i, v in pairs:
            pos = int(rng.integers(i + 1, len(log) + 1))
            pos = max(pos, next(k for k, e in enumerate(log) if e["query"] == chosen[i]) + 1)
            log.insert(pos, {"query": v, "kind": kind, "of": chosen[i]})
    return log


def make_docs(n: int = 100, seed: int = 100) -> list[dict]:
    rng = np.random.default_rng(seed)
    gains = rng.permutation(n).astype(float) / (n - 1)  # distinct relevance in [0, 1]
    docs = []
    for i in range(n):
        subject = SUBJECTS[i % len(SUBJECTS)]
        docs.append({
            "id": f"d{i:03d}",
            "title": f"{subject} note {i}",
            "content": f"Synthetic passage {i} about {subject}.",
            "published_at": float(1_600_000_000 + int(rng.integers(0, 10**8))),
            "quality": round(float(rng.uniform()), 3),
            "authority": round(float(rng.uniform()), 3),
            "relevance": round(float(gains[i]), 4),
            "gain": round(float(gains[i]), 4),
        })
    return docs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    log = make_cache_log()
    with open(args.out / "cache_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    with open(args.out / "docs_100.json", "w", encoding="utf-8") as fh:
        json.dump({"query": "history of ancient empires", "documents": make_docs()}, fh, indent=1)
    print(f"wrote {len(log)} cache queries and 100 documents to {args.out}")


if __name__ == "__main__":
    main()
