"""Deterministic orchestration runtime.

A Session owns one ordered message log (ids gapless from 0) plus the agent
registry and tool context it executes against.  Three entry points drive
it: session_step for the interactive loop, run_plan for whole plans, and
replay for verification.

Determinism contract: given the same registry, context data, plan and
inputs, a rerun produces the identical payload sequence.  replay() checks
exactly that, comparing (sender, recipient, kind, payload) per message —
ids and timestamps are positional bookkeeping, and artifact references
inside payloads are content hashes, so the comparison is content-addressed
end to end.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import (
    CommandError,
    DrivedeskError,
    DuplicateAgent,
    InvalidParams,
    ReplayIncomplete,
    SessionClosed,
    UnknownAgent,
)
from ..store import ARTIFACT_KINDS
from .grammar import parse_command
from .tools import VERB_TOOLS, ToolContext, ToolRegistry
from .types import AgentSpec, Message, Plan, Transcript, jsonable

#: recipient value that asks the orchestrator to route by verb
AUTO_RECIPIENT = "auto"

#: which role handles each verb when the sender does not address an agent
VERB_ROLES = {
    "sketch": "styling",
    "render": "styling",
    "retrieve": "cad",
    "interpolate": "cad",
    "reconstruct": "cad",
    "mesh": "meshing",
    "checkmesh": "meshing",
    "refine": "meshing",
    "predict-drag": "simulation",
    "report": "orchestrator",
}

#: every styling response carries this, per the scope contract
STYLING_NOTE = (
    "generative styling is out of scope: this agent returns deterministic "
    "silhouettes, edge sketches, and shape metadata"
)


class AgentRegistry:
    """Name -> AgentSpec table, bound to a tool registry for resolution."""

    def __init__(self, tools: ToolRegistry) -> None:
        self.tools = tools
        self._agents: dict = {}

    def register(self, spec: AgentSpec) -> AgentSpec:
        if spec.name in self._agents:
            raise DuplicateAgent(f"agent {spec.name!r} is already registered")
        for tool in spec.tools:
            if tool not in self.tools:
                # resolve() raises UnresolvedTool with the offending name
                self.tools.resolve(tool)
        self._agents[spec.name] = spec
        return spec

    def lookup(self, name: str) -> AgentSpec:
        try:
            return self._agents[name]
        except KeyError:
            raise UnknownAgent(f"no agent named {name!r} is registered") from None

    def by_role(self, role: str) -> AgentSpec:
        """First registered agent with the role (registration order)."""
        for spec in self._agents.values():
            if spec.role == role:
                return spec
        raise UnknownAgent(f"no registered agent has role {role!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._agents

    def names(self) -> list:
        return list(self._agents)


def register_agent(registry: AgentRegistry, spec: AgentSpec) -> AgentSpec:
    """Register an agent; DuplicateAgent on a name clash, UnresolvedTool
    when the spec names a tool the registry does not provide."""
    return registry.register(spec)


class Session:
    """One logical execution stream: an append-only message log."""

    def __init__(self, registry: AgentRegistry, context: ToolContext, session_id: str) -> None:
        if not session_id or not isinstance(session_id, str):
            raise InvalidParams("session_id must be a non-empty string")
        self.registry = registry
        self.context = context
        self.id = session_id
        self.messages: list = []
        self.closed = False

    def append(self, sender: str, recipient: str, kind: str, payload: dict) -> Message:
        """Stamp and log the next message; ids are gapless from zero and
        double as the session's logical clock."""
        if self.closed:
            raise SessionClosed(f"session {self.id!r} is closed")
        msg = Message(
            id=len(self.messages),
            session_id=self.id,
            sender=sender,
            recipient=recipient,
            kind=kind,
            payload=payload,
            timestamp=len(self.messages),
        )
        self.messages.append(msg)
        return msg

    def close(self) -> None:
        self.closed = True

    def transcript(self, final_artifacts=()) -> Transcript:
        return Transcript(self.id, tuple(self.messages), tuple(final_artifacts))


def _is_artifact_ref(value) -> bool:
    return (
        isinstance(value, dict)
        and isinstance(value.get("id"), str)
        and len(value.get("id", "")) == 64
        and value.get("kind") in ARTIFACT_KINDS
    )


def collect_artifact_ids(value) -> list:
    """Artifact ids referenced anywhere inside a payload, in order."""
    found: list = []

    def walk(node) -> None:
        if _is_artifact_ref(node):
            if node["id"] not in found:
                found.append(node["id"])
        if isinstance(node, dict):
            for child in node.values():
                walk(child)
        elif isinstance(node, list):
            for child in node:
                walk(child)

    walk(value)
    return found


def _run_task(
    session: Session,
    agent: AgentSpec,
    task: dict,
    inputs: list,
    requester: str,
    node_id=None,
):
    """Execute one task on one agent: tool_call, tool_result, response.

    Returns (status, artifact ids, response message).  Tool failures are
    recorded as error tool_results, never raised.
    """
    verb = task["verb"]
    tool_name = VERB_TOOLS[verb]

    def respond(status: str, artifacts: list, extra: dict) -> Message:
        payload = {"status": status, "artifacts": list(artifacts)}
        if node_id is not None:
            payload["node"] = node_id
        payload.update(extra)
        if agent.role == "styling":
            payload["note"] = STYLING_NOTE
        return session.append(agent.name, requester, "response", payload)

    if tool_name not in agent.tools:
        response = respond(
            "error",
            [],
            {
                "error": {
                    "type": "UnresolvedTool",
                    "message": f"agent {agent.name!r} has no tool for verb {verb!r}",
                }
            },
        )
        return "error", [], response

    args = {key: value for key, value in task.items() if key != "verb"}
    args["inputs"] = [str(s) for s in inputs]
    call = session.append(
        agent.name, f"tool:{tool_name}", "tool_call", {"tool": tool_name, "args": args}
    )
    fn = session.registry.tools.resolve(tool_name)
    try:
        result = jsonable(fn(session.context, args))
        result_payload = {"call": call.id, "status": "ok", "result": result}
        status = "ok"
    except DrivedeskError as exc:
        result_payload = {
            "call": call.id,
            "status": "error",
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }
        status = "error"
    session.append(f"tool:{tool_name}", agent.name, "tool_result", result_payload)

    artifacts = collect_artifact_ids(result_payload) if status == "ok" else []
    extra = {} if status == "ok" else {"error": result_payload["error"]}
    response = respond(status, artifacts, extra)
    return status, artifacts, response


def make_prompt(sender: str, command: str, recipient: str = AUTO_RECIPIENT, inputs=()) -> Message:
    """Draft prompt message for session_step; the session re-stamps ids."""
    payload: dict = {"command": command}
    if inputs:
        payload["inputs"] = [str(s) for s in inputs]
    return Message(
        id=0, session_id="draft", sender=sender, recipient=recipient,
        kind="prompt", payload=payload, timestamp=0,
    )


def session_step(session: Session, message: Message) -> list:
    """Route one prompt, execute the bound tool, return the new messages.

    The message is re-stamped with the session's next id.  Addressing: a
    concrete recipient must be a registered agent (UnknownAgent
    otherwise); the reserved recipient "auto" routes by the verb->role
    map.  The payload must carry a grammar command under "command".
    """
    if session.closed:
        raise SessionClosed(f"session {session.id!r} is closed")
    if message.kind != "prompt":
        raise InvalidParams(
            f"session_step accepts prompt messages, got kind {message.kind!r}"
        )
    command = message.payload.get("command")
    if not isinstance(command, str):
        raise CommandError("message payload needs a 'command' string")
    task = parse_command(command)
    if message.recipient == AUTO_RECIPIENT:
        agent = session.registry.by_role(VERB_ROLES[task["verb"]])
    else:
        agent = session.registry.lookup(message.recipient)

    inputs = message.payload.get("inputs", [])
    if not isinstance(inputs, list):
        raise InvalidParams("payload 'inputs' must be a list of artifact ids")

    incoming = session.append(message.sender, agent.name, message.kind, message.payload)
    before = len(session.messages)
    _run_task(session, agent, task, inputs, requester=message.sender)
    return [incoming, *session.messages[before:]]


def _node_inputs(results: dict, preds: list, plan_inputs: list) -> list:
    if not preds:
        return list(plan_inputs)
    merged: list = []
    for pred in preds:
        for artifact in results[pred][1]:
            if artifact not in merged:
                merged.append(artifact)
    return merged


def _exec_subtree(
    session: Session, plan: Plan, node_id: str, plan_inputs: list, requester: str, results: dict
):
    """Hierarchical execution: delegate to children depth-first, then run
    the node's own task on the children's artifacts."""
    node = plan.node(node_id)
    agent = session.registry.lookup(node.agent)
    children = plan.successors(node_id)

    child_artifacts: list = []
    failed_child = None
    for child_id in children:
        child = plan.node(child_id)
        session.append(
            node.agent,
            child.agent,
            "delegation",
            {"node": child_id, "command": child.task, "inputs": list(plan_inputs)},
        )
        status, artifacts = _exec_subtree(
            session, plan, child_id, plan_inputs, node.agent, results
        )
        if status != "ok":
            failed_child = child_id
            break
        for artifact in artifacts:
            if artifact not in child_artifacts:
                child_artifacts.append(artifact)

    if failed_child is not None:
        payload = {
            "status": "error",
            "artifacts": [],
            "node": node_id,
            "error": {
                "type": "ChildFailed",
                "message": f"delegated node {failed_child!r} failed; halting this branch",
            },
        }
        if agent.role == "styling":
            payload["note"] = STYLING_NOTE
        session.append(node.agent, requester, "response", payload)
        results[node_id] = ("error", [])
        return "error", []

    inputs = child_artifacts if children else list(plan_inputs)
    status, artifacts, _ = _run_task(
        session, agent, parse_command(node.task), inputs, requester, node_id
    )
    results[node_id] = (status, artifacts)
    return status, artifacts


def run_plan(plan: Plan, inputs, session: Session) -> Transcript:
    """Execute a plan in a fresh session and return its transcript.

    Message order is fully deterministic: sequential plans follow chain
    order, hierarchical plans delegate depth-first in node order, hybrid
    plans serialize in canonical order (dependency level, then node id).
    A failing node halts its branch: dependents are skipped, independent
    branches still run.
    """
    if session.closed:
        raise SessionClosed(f"session {session.id!r} is closed")
    if session.messages:
        raise InvalidParams("run_plan needs a fresh session (message log not empty)")
    for node in plan.nodes:
        session.registry.lookup(node.agent)

    plan_inputs = [str(s) for s in (inputs or [])]
    session.append(
        "user", "plan", "prompt", {"plan": plan.to_jsonable(), "inputs": plan_inputs}
    )

    results: dict = {}
    if plan.topology == "hierarchical":
        _exec_subtree(session, plan, plan.root(), plan_inputs, "plan", results)
        finals_from = [plan.root()]
    else:
        node_ids = [n.id for n in plan.nodes]
        for node_id in plan.canonical_order():
            node = plan.node(node_id)
            if plan.topology == "sequential":
                position = node_ids.index(node_id)
                preds = [node_ids[position - 1]] if position else []
            else:
                preds = plan.predecessors(node_id)
            if any(results.get(p, ("skipped", []))[0] != "ok" for p in preds):
                results[node_id] = ("skipped", [])
                continue
            node_inputs = _node_inputs(results, preds, plan_inputs)
            session.append(
                "plan",
                node.agent,
                "prompt",
                {"node": node.id, "command": node.task, "inputs": node_inputs},
            )
            agent = session.registry.lookup(node.agent)
            status, artifacts, _ = _run_task(
                session, agent, parse_command(node.task), node_inputs, "plan", node.id
            )
            results[node_id] = (status, artifacts)
            if status != "ok" and plan.topology == "sequential":
                break
        finals_from = plan.sinks()

    final_artifacts: list = []
    for node_id in finals_from:
        status, artifacts = results.get(node_id, ("skipped", []))
        if status == "ok":
            for artifact in artifacts:
                if artifact not in final_artifacts:
                    final_artifacts.append(artifact)
    return session.transcript(final_artifacts)


@dataclass(frozen=True)
class ReplayReport:
    """Outcome of replay verification."""

    verified: bool
    message_count: int
    divergence_id: int | None = None
    detail: str = ""

    def to_jsonable(self) -> dict:
        return {
            "verified": self.verified,
            "message_count": self.message_count,
            "divergence_id": self.divergence_id,
            "detail": self.detail,
        }


def replay(transcript: Transcript, registry: AgentRegistry, context: ToolContext) -> ReplayReport:
    """Re-execute a transcript's plan and compare payload sequences.

    Every artifact the transcript references must still exist in the
    store (ReplayIncomplete otherwise).  Comparison is by message
    signature — sender, recipient, kind, canonical payload — so artifact
    references compare by content hash and a relocated (compacted) store
    verifies unchanged.
    """
    if not transcript.messages:
        raise InvalidParams("transcript has no messages")
    first = transcript.messages[0]
    if first.kind != "prompt" or "plan" not in first.payload:
        raise InvalidParams("transcript does not begin with a plan prompt")
    plan = Plan.from_jsonable(first.payload["plan"])
    inputs = first.payload.get("inputs", [])

    referenced = set(transcript.final_artifacts)
    for message in transcript.messages:
        referenced.update(collect_artifact_ids(message.payload))
    missing = sorted(a for a in referenced if a not in context.store)
    if missing:
        raise ReplayIncomplete(
            f"{len(missing)} referenced artifact(s) missing from the store: "
            + ", ".join(missing[:3])
            + ("..." if len(missing) > 3 else "")
        )

    fresh = Session(registry, context, transcript.session_id)
    rerun = run_plan(plan, inputs, fresh)

    recorded = transcript.messages
    replayed = rerun.messages
    for index in range(min(len(recorded), len(replayed))):
        if recorded[index].signature() != replayed[index].signature():
            return ReplayReport(
                verified=False,
                message_count=index,
                divergence_id=recorded[index].id,
                detail=(
                    f"payload divergence at message id {recorded[index].id} "
                    f"(kind {recorded[index].kind})"
                ),
            )
    if len(recorded) != len(replayed):
        longer = recorded if len(recorded) > len(replayed) else replayed
        index = min(len(recorded), len(replayed))
        return ReplayReport(
            verified=False,
            message_count=index,
            divergence_id=longer[index].id,
            detail=(
                f"length mismatch: recorded {len(recorded)} vs replayed {len(replayed)}"
            ),
        )
    if tuple(transcript.final_artifacts) != tuple(rerun.final_artifacts):
        return ReplayReport(
            verified=False,
            message_count=len(recorded),
            divergence_id=None,
            detail="final artifact ids differ",
        )
    return ReplayReport(verified=True, message_count=len(recorded), detail="verified")
