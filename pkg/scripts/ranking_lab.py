"""Compare the ranking methods on the bundled 100-document list.

    python3 scripts/ranking_lab.py [--docs PATH] [--k 10] [--seeds 5]

Prints NDCG@k and comparator call counts per method.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from aisearch import ranking
from aisearch.core import Document, RankedList
from aisearch.service import DATA


def load(path):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    docs = [Document(**{k: v for k, v in d.items() if k != "gain"}) for d in raw["documents"]]
    return docs, {d["id"]: d["gain"] for d in raw["documents"]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", default=str(DATA / "docs_100.json"))
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    docs, gains = load(args.docs)

    rows = []
    oracle = ranking.MockOracle(gains)
    rows.append(("initial order", ranking.ndcg([d.id for d in docs], gains, args.k), 0))
    for w, s in ((20, 10), (10, 5), (4, 2)):
        oracle = ranking.MockOracle(gains)
        out = ranking.sliding_window_rank(docs, w, s, oracle)
        rows.append((f"sliding w={w} s={s}", ranking.ndcg(out, gains, args.k), oracle.calls["listwise"]))
    for r in (1, 3, 5):
        scores, calls = [], 0
        for seed in range(args.seeds):
            oracle = ranking.MockOracle(gains)
            out = ranking.tournament_rank(docs, ranking.TournamentConfig(10, 5, r, seed), oracle)
            scores.append(ranking.ndcg(out, gains, args.k))
            calls = oracle.calls["listwise"]
        rows.append((f"tournament R={r} (mean of {args.seeds} seeds)", float(np.mean(scores)), calls))
    for strategy in ranking.PairwiseStrategy:
        oracle = ranking.MockOracle(gains)
        out = ranking.pairwise_rank("", docs, oracle, strategy)
        rows.append((f"pairwise {strategy.value}", ranking.ndcg(out, gains, args.k), oracle.calls["pairwise"]))
    for name, policy in (("P1", ranking.P1), ("P2", ranking.P2)):
        out = ranking.apply_metadata_policy(docs, policy)
        rows.append((f"metadata policy {name}", ranking.ndcg(out, gains, args.k), 0))

    width = max(len(r[0]) for r in rows)
    print(f"{'method':<{width}}  ndcg@{args.k}  calls")
    for name, score, calls in rows:
        print(f"{name:<{width}}  {score:.4f}   {calls}")


if __name__ == "__main__":
    main()
