"""Reasoning agent that searches, browses and drafts reports through in-band tool markers."""

from .explorer import DeepWebExplorer, ExplorerBudget, ExplorerRequest, ExplorerSession, FinalInformation
from .llm import GenerationParams, LLMClient, ScriptedBackend
from .orchestrator import Orchestrator, ReasoningTrajectory, TaskSpec, extract_answer
from .protocol import DEFAULT_MARKERS, MarkerTable, StreamCursor, Tool, ToolEvent
from .web import WebAccess, normalize_url
from .workshop import DocumentMemory, ReportState, ReportWorkshop

__version__ = "0.1.0"

__all__ = [
    "DeepWebExplorer", "ExplorerBudget", "ExplorerRequest", "ExplorerSession", "FinalInformation",
    "GenerationParams", "LLMClient", "ScriptedBackend", "Orchestrator", "ReasoningTrajectory", "TaskSpec",
    "extract_answer", "DEFAULT_MARKERS", "MarkerTable", "StreamCursor", "Tool", "ToolEvent", "WebAccess",
    "normalize_url", "DocumentMemory", "ReportState", "ReportWorkshop",
]
