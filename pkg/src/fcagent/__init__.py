"""Long-horizon agent runtime with file-centric task state and bounded contexts."""

from .backend import HTTPBackend, LLMRequest, LLMResponse, MockBackend, MockPolicy, MockRule
from .context import ActionRecord, ActionWindow, BoundedContext, ConsolidationPolicy, build_context
from .hierarchy import AgentOutcome, AgentSpec, Engine, EngineConfig, Level, validate_hierarchy
from .tools import Corpus, DocumentRef, ToolRegistry, answer_from_document, default_registry
from .workspace import TransitionOp, Workspace

__version__ = "0.1.0"

__all__ = [
    "ActionRecord", "ActionWindow", "AgentOutcome", "AgentSpec", "BoundedContext",
    "ConsolidationPolicy", "Corpus", "DocumentRef", "Engine", "EngineConfig", "HTTPBackend",
    "LLMRequest", "LLMResponse", "Level", "MockBackend", "MockPolicy", "MockRule",
    "ToolRegistry", "TransitionOp", "Workspace", "answer_from_document", "build_context",
    "default_registry", "validate_hierarchy",
]
