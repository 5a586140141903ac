"""Tool platform: registry and execution contract, toolkit clustering, documentation refinement."""

from .builtin import Builtins, ToolFault, load_corpus, safe_eval
from .clustering import (KMeansResult, Toolkit, cluster_registry, cluster_toolkits, default_k,
                         fallback_candidates, kmeans, summarize_tool)
from .draft import (ExplorationRecord, Refinement, bleu, diversity_gate, refine_documentation,
                    termination_delta)
from .registry import (DuplicateTool, Fault, InvalidManifest, Registry, RemoteFault, SchemaViolation,
                       ToolDoc, ToolError, ToolkitNotAssigned, ToolManifest, ToolUnresponsive,
                       UnknownTool, handle_jsonrpc)

__all__ = [name for name in dir() if not name.startswith("_")]
