"""Multi-agent search: triage, DAG planning, tool execution with fallback, cited answers."""

from .cache import SemanticCache
from .core import Document, Query, RankedList, SubTask, TaskDag, TeamConfiguration
from .executor import ExecutionBudget, Executor
from .gateway import Gateway, MockProvider
from .orchestrator import Episode, Orchestrator
from .writer import CitationedAnswer, Statement

__version__ = "0.1.0"

__all__ = [
    "CitationedAnswer", "Document", "Episode", "ExecutionBudget", "Executor", "Gateway", "MockProvider",
    "Orchestrator", "Query", "RankedList", "SemanticCache", "Statement", "SubTask", "TaskDag",
    "TeamConfiguration",
]
