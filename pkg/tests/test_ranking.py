import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import ndcg_score

from aisearch.core import Document, RankedList
from aisearch.gateway import Gateway, MockProvider
from aisearch.ranking import (P1, P2, MissingLogprobs, MockOracle, ModelBacked, PairwiseStrategy, RankPolicy,
                              RankingError, TournamentConfig, apply_metadata_policy, ndcg, pairwise_rank,
                              pointwise_scores, ranknet_loss, ranknet_pairs, sliding_window_rank, tournament_rank,
                              window_starts)
from tests.conftest import docs


def setup(m, seed):
    rng = random.Random(seed)
    ds = docs(m)
    rel = dict(zip((d.id for d in ds), rng.sample(range(1000), m)))
    return ds, MockOracle(rel), sorted(rel, key=lambda k: -rel[k])


@pytest.mark.parametrize("strategy", list(PairwiseStrategy))
@given(st.integers(1, 25), st.integers(0, 10_000))
def test_pairwise_strategies_recover_oracle_order(strategy, m, seed):
    ds, oracle, truth = setup(m, seed)
    assert list(pairwise_rank("q", ds, oracle, strategy).items) == truth


def test_all_pairs_call_count():
    ds, oracle, _ = setup(7, 0)
    pairwise_rank("q", ds, oracle, "AllPairs")
    assert oracle.calls["pairwise"] == 7 * 6


def test_pointwise_scores():
    ds, oracle, _ = setup(5, 1)
    scores = pointwise_scores("q", ds, oracle)
    assert scores == {d.id: oracle.relevance[d.id] for d in ds}


@given(st.integers(2, 60), st.integers(1, 20), st.integers(1, 20))
def test_window_starts_cover_list(m, w, s):
    starts = window_starts(m, w, s)
    assert starts[-1] == 0 and all(0 <= x <= max(m - w, 0) for x in starts)
    assert starts == sorted(starts, reverse=True)
    if m > w:
        assert len(starts) == math.ceil((m - w) / s) + 1


def test_window_starts_validation():
    with pytest.raises(ValueError):
        window_starts(10, 0, 1)


def test_sliding_window_brings_top_w_minus_s_to_front():
    ds, oracle, truth = setup(40, 3)
    out = sliding_window_rank(ds, 10, 5, oracle)
    assert list(out.items[:5]) == truth[:5]
    assert out.meta["passes"] == len(window_starts(40, 10, 5))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10_000), st.integers(0, 100))
def test_tournament_is_seed_deterministic(m, data_seed, seed):
    ds, oracle, _ = setup(m, data_seed)
    cfg = TournamentConfig(group_size=6, advance_n=2, rounds_r=2, seed=seed)
    a, b = tournament_rank(ds, cfg, oracle), tournament_rank(ds, cfg, MockOracle(oracle.relevance))
    assert a.items == b.items and a.scores == b.scores
    assert sorted(a.items) == sorted(d.id for d in ds)


def test_tournament_stage_counts():
    ds, oracle, truth = setup(100, 5)
    out = tournament_rank(ds, TournamentConfig(10, 5, 3, seed=7), oracle)
    # 100 -> 50 -> 25 -> 15 -> 10 -> final group
    assert out.meta["stages"] == [5, 5, 5]
    assert out.items[0] == truth[0]
    assert out.scores[truth[0]] == 15  # one point per stage, summed over rounds


def test_tournament_config_validation():
    with pytest.raises(ValueError):
        TournamentConfig(group_size=4, advance_n=4)
    with pytest.raises(ValueError):
        TournamentConfig(rounds_r=0)


def test_ranknet_pairs_and_loss():
    assert ranknet_pairs(["a", "b", "c"]) == [("a", "b"), ("a", "c"), ("b", "c")]
    assert ranknet_loss({"a": 1, "b": 2}, {"a": 0.3, "b": 0.3}) == pytest.approx(math.log(2))
    # as written, a lower student score for the better document is rewarded
    assert ranknet_loss({"a": 1, "b": 2}, {"a": 0.0, "b": 2.0}) < math.log(2)
    assert ranknet_loss({"a": 1, "b": 2}, {"a": 2.0, "b": 0.0}, negate=True) < math.log(2)
    with pytest.raises(ValueError):
        ranknet_loss({"a": 1}, {"b": 0.0})
    with pytest.raises(ValueError):
        ranknet_pairs(["a"])


@given(st.lists(st.floats(0, 3), min_size=2, max_size=12), st.integers(1, 12), st.randoms(use_true_random=False))
def test_ndcg_matches_sklearn(gains, k, rnd):
    ids = [f"d{i}" for i in range(len(gains))]
    order = ids[:]
    rnd.shuffle(order)
    g = dict(zip(ids, gains))
    if not any(gains):
        assert ndcg(order, g, k) == 1.0
        return
    # distinct descending scores express the ranking to sklearn
    scores = {d: len(order) - i for i, d in enumerate(order)}
    ref = ndcg_score([[g[d] for d in ids]], [[scores[d] for d in ids]], k=k)
    assert ndcg(order, g, k) == pytest.approx(ref, abs=1e-9)


def test_ndcg_perfect_and_validation():
    g = {"a": 3.0, "b": 1.0, "c": 0.0}
    assert ndcg(RankedList(("a", "b", "c")), g, 3) == pytest.approx(1.0)
    assert ndcg(["c", "b", "a"], g, 3) < 1.0
    with pytest.raises(ValueError):
        ndcg(["a"], g, 0)
    with pytest.raises(ValueError):
        ndcg(["zzz"], g, 1)


def test_metadata_policies():
    ds = [Document("old-good", published_at=1.0, quality=0.9, relevance=0.5, authority=0.1),
          Document("new-poor", published_at=2.0, quality=0.2, relevance=0.9, authority=0.9),
          Document("blank")]
    assert apply_metadata_policy(ds, P1).items == ("new-poor", "old-good", "blank")
    assert apply_metadata_policy(ds, P2).items == ("old-good", "new-poor", "blank")
    with pytest.raises(ValueError):
        RankPolicy(("recency", "quality"))


def test_metadata_policy_is_stable_on_ties():
    ds = [Document(f"d{i}", quality=0.5) for i in range(5)]
    assert apply_metadata_policy(ds, P2).items == tuple(d.id for d in ds)


def test_mock_oracle_unknown_doc():
    with pytest.raises(RankingError):
        MockOracle({}).score("q", Document("x"))


def test_model_backed_pointwise_from_logprobs(gateway):
    ranker = ModelBacked(gateway)
    assert ranker.score("q", Document("a", content="coin flip passage")) == pytest.approx(0.5)
    # no 'no' token: P(no) is taken as 1 - P(yes)
    assert ranker.score("q", Document("b", content="confident passage")) == pytest.approx(0.9)
    with pytest.raises(MissingLogprobs):
        ranker.score("q", Document("c", content="bare passage"))


def test_model_backed_pairwise_and_listwise():
    from aisearch.gateway import Fixture
    g = Gateway(MockProvider([Fixture("rank-pairwise", ("Passage A: alpha",), "A"),
                              Fixture("rank-pairwise", (), "B, because"),
                              Fixture("rank-listwise", (), "[3] > [1] > [3] > [9]")]))
    ranker = ModelBacked(g)
    a, b, c = Document("a", content="alpha"), Document("b", content="beta"), Document("c", content="gamma")
    assert ranker.prefer("q", a, b) is True
    assert ranker.prefer("q", b, a) is False
    assert [d.id for d in ranker.order("q", [a, b, c])] == ["c", "a", "b"]
