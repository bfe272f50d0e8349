"""Deterministic multi-agent orchestration: agents, plans, transcripts.

Public surface:

- grammar: ``parse_command`` / ``format_command`` and the verb set.
- types: AgentSpec, Message, Plan, PlanNode, Transcript plus JSON / JSONL
  persistence for plans and transcripts.
- tools: ToolRegistry and the standard engine bindings.
- runtime: AgentRegistry, Session, session_step, run_plan, replay.
"""
from .grammar import CATEGORY_NAMES, VERBS, format_command, parse_command
from .runtime import (
    AUTO_RECIPIENT,
    AgentRegistry,
    ReplayReport,
    STYLING_NOTE,
    Session,
    VERB_ROLES,
    collect_artifact_ids,
    make_prompt,
    register_agent,
    replay,
    run_plan,
    session_step,
)
from .tools import (
    DEFAULT_DOMAIN,
    ToolContext,
    ToolRegistry,
    VERB_TOOLS,
    standard_agents,
    standard_tool_registry,
)
from .types import (
    AgentSpec,
    MESSAGE_KINDS,
    Message,
    Plan,
    PlanNode,
    ROLES,
    TOPOLOGIES,
    Transcript,
    jsonable,
    load_plan,
    load_transcript,
    save_plan,
    save_transcript,
)

__all__ = [
    "AUTO_RECIPIENT",
    "AgentRegistry",
    "AgentSpec",
    "CATEGORY_NAMES",
    "DEFAULT_DOMAIN",
    "MESSAGE_KINDS",
    "Message",
    "Plan",
    "PlanNode",
    "ROLES",
    "ReplayReport",
    "STYLING_NOTE",
    "Session",
    "TOPOLOGIES",
    "ToolContext",
    "ToolRegistry",
    "Transcript",
    "VERBS",
    "VERB_ROLES",
    "VERB_TOOLS",
    "collect_artifact_ids",
    "format_command",
    "jsonable",
    "load_plan",
    "load_transcript",
    "make_prompt",
    "parse_command",
    "register_agent",
    "replay",
    "run_plan",
    "save_plan",
    "save_transcript",
    "session_step",
    "standard_agents",
    "standard_tool_registry",
]
