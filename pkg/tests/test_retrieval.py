import math

import pytest
from hypothesis import given, strategies as st

from aisearch.core import Query
from aisearch.retrieval import (EMPTY_GRAPH, SceneGraph, completeness_rerank, infonce_loss, query_text, retrieve,
                                semantic_scores)
from aisearch.service import DATA
from aisearch.tools.registry import UnknownTool

GRAPH = SceneGraph(query_scene=(("q", "s"),), scene_tool=(("s", "a"), ("s", "b"), ("s", "c")))


def test_weather_query_ranks_weather_tool_first(registry, gateway):
    b = retrieve(gateway, registry, Query("Is Beijing's weather good for going out today?"), cap=3)
    assert b.tool_ids[0] == "weather_query"
    assert len(b) == 3


def test_boundary_is_capped_and_sorted(registry, gateway):
    b = retrieve(gateway, registry, Query("gold price in yuan"), SceneGraph.load(DATA / "scenes.json"), cap=5)
    assert len(b) == 5
    scores = [b.scores[t] for t in b.tool_ids]
    assert scores == sorted(scores, reverse=True)


def test_alpha_zero_is_pure_semantic():
    sem = {"a": 0.9, "b": 0.1, "c": 0.2, "x": 0.5}
    b = completeness_rerank(sem, GRAPH, alpha=0.0, cap=4)
    assert b.tool_ids == ("a", "x", "c", "b")
    assert b.scores == sem


def test_best_scene_is_kept_whole_under_a_tight_cap():
    sem = {"a": 0.9, "b": 0.1, "c": 0.1, "x": 0.85, "y": 0.84, "z": 0.83}
    b = completeness_rerank(sem, GRAPH, alpha=0.3, cap=4)
    assert {"a", "b", "c"} <= set(b.tool_ids) and len(b) == 4
    assert b.scene == "s"


def test_scene_larger_than_cap_is_not_forced():
    sem = {"a": 0.9, "b": 0.1, "c": 0.1, "x": 0.8}
    b = completeness_rerank(sem, GRAPH, alpha=0.3, cap=2)
    assert len(b) == 2


@given(st.dictionaries(st.sampled_from("abcxyz"), st.floats(-1, 1), min_size=1),
       st.floats(0, 1), st.integers(1, 8))
def test_rerank_invariants(sem, alpha, cap):
    b = completeness_rerank(sem, GRAPH, alpha=alpha, cap=cap)
    assert len(b) == min(cap, len(sem))
    assert len(set(b.tool_ids)) == len(b.tool_ids)
    assert set(b.tool_ids) <= set(sem)
    if b.scene is not None and len([t for t in sem if t in "abc"]) <= cap:
        assert {t for t in sem if t in "abc"} <= set(b.tool_ids)


def test_rerank_validation():
    with pytest.raises(ValueError):
        completeness_rerank({"a": 1.0}, EMPTY_GRAPH, alpha=1.5)
    with pytest.raises(ValueError):
        completeness_rerank({"a": 1.0}, EMPTY_GRAPH, cap=0)


def test_scene_graph_validation(registry):
    with pytest.raises(ValueError):
        SceneGraph(query_scene=(("q", "empty"),))
    with pytest.raises(ValueError):
        GRAPH.check_tools(["a", "b"])
    SceneGraph.load(DATA / "scenes.json").check_tools(registry.ids())


def test_query_text_includes_context():
    q = Query("and tomorrow?", context=(("weather in Paris", "sunny"),))
    assert query_text(q) == "weather in Paris\nand tomorrow?"


def test_semantic_scores_unknown_candidate(registry, gateway):
    with pytest.raises(UnknownTool):
        semantic_scores(gateway, registry, Query("x"), ["ghost"])
    assert semantic_scores(gateway, registry, Query("x"), []) == {}


def test_infonce():
    assert infonce_loss(0.0, [0.0]) == pytest.approx(math.log(2))
    assert infonce_loss(1.0, [0.0, 0.0]) < infonce_loss(0.0, [0.0, 0.0])
    assert infonce_loss(1000.0, [0.0]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        infonce_loss(1.0, [])
