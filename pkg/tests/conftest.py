from __future__ import annotations

from pathlib import Path

import pytest

from aisearch.core import Document
from aisearch.gateway import Gateway, MockProvider
from aisearch.service import DATA, Runtime, ServiceConfig
from aisearch.tools.builtin import Builtins, load_corpus
from aisearch.tools.registry import Registry

HERE = Path(__file__).parent
SCENARIOS = HERE / "fixtures" / "scenarios.jsonl"
FIXTURES = [str(DATA / "fixtures.jsonl"), str(SCENARIOS)]


@pytest.fixture
def provider() -> MockProvider:
    return MockProvider.from_files(*FIXTURES)


@pytest.fixture
def gateway(provider) -> Gateway:
    return Gateway(provider)


@pytest.fixture
def registry() -> Registry:
    return Registry.from_file(DATA / "registry.json", Builtins(load_corpus()))


@pytest.fixture
def runtime(tmp_path) -> Runtime:
    return Runtime(ServiceConfig(fixtures=FIXTURES, trace_dir=str(tmp_path / "traces")))


def docs(n: int, prefix: str = "d") -> list[Document]:
    return [Document(f"{prefix}{i}", f"title {i}", f"content {i}") for i in range(n)]


# -- random dags over a deterministic builtin ---------------------------------------

def adder(args):
    return {"value": sum(v for v in args.values() if isinstance(v, (int, float)))}


ADDER = {"tool_id": "adder", "name": "Adder", "semantic_role": "math", "cost": 0.0, "latency_bounds": [0, 5000],
         "endpoint": "builtin:adder", "documentation": "Adds its numeric arguments.",
         "input_schema": {"type": "object", "additionalProperties": {"type": "number"}},
         "output_schema": {"type": "object", "required": ["value"]}}


def random_dag(rng, n):
    from aisearch.core import ArgSlot, SubTask, TaskDag
    edges = []
    vertices = []
    for j in range(n):
        parents = [i for i in range(j) if rng.random() < min(0.25, 3.0 / (j + 1))]
        args = {"base": ArgSlot(value=j)}
        for i in parents:
            args[f"in{i}"] = ArgSlot(source=f"v{i}", path="rounds.0.result.value")
            edges.append((f"v{i}", f"v{j}"))
        vertices.append(SubTask(f"v{j}", f"vertex {j}", args, tools=("adder",)))
    return TaskDag.build(vertices, edges)


def adder_registry():
    from aisearch.tools.registry import ToolManifest
    b = Builtins([])
    b.register("adder", adder)
    reg = Registry(builtins=b)
    reg.register(ToolManifest.from_wire(ADDER))
    return reg


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
