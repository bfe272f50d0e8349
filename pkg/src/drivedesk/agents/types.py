"""Domain types for the orchestrator: agents, messages, plans, transcripts.

Everything here is immutable and JSON-faithful.  Message payloads are
normalized to plain JSON values at construction time so that a message is
bitwise-stable through persistence: what a live session compares during
replay is exactly what a JSONL file round-trips.

Artifact references inside payloads are ``{"id": ..., "kind": ...}`` dicts
— never filesystem paths — so payload equality is content-addressed:
relocating the artifact store does not change any transcript.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import CommandError, InvalidParams, InvalidPlan, IoError
from .grammar import parse_command

ROLES = ("styling", "cad", "meshing", "simulation", "orchestrator")
MESSAGE_KINDS = ("prompt", "tool_call", "tool_result", "response", "delegation")
TOPOLOGIES = ("sequential", "hierarchical", "hybrid")


def jsonable(value):
    """Deep-normalize a payload to plain JSON values (dict/list/str/num/bool).

    Tuples become lists and numpy scalars become Python numbers, so the
    in-memory form equals its JSON round trip.  Anything else is rejected.
    """
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise InvalidParams(f"payload floats must be finite, got {value!r}")
        return value
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for key, val in value.items():
            if not isinstance(key, str):
                raise InvalidParams(f"payload keys must be strings, got {key!r}")
            out[key] = jsonable(val)
        return out
    # numpy scalars and arrays expose tolist(); accept them via duck typing
    tolist = getattr(value, "tolist", None)
    if callable(tolist):
        return jsonable(tolist())
    raise InvalidParams(
        f"payload value of type {type(value).__name__} is not JSON-representable"
    )


@dataclass(frozen=True)
class AgentSpec:
    """One agent: a name, a role, and the tools it is allowed to call."""

    name: str
    role: str
    tools: tuple

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise InvalidParams(f"agent name must be a non-empty string, got {self.name!r}")
        if self.role not in ROLES:
            raise InvalidParams(f"role must be one of {ROLES}, got {self.role!r}")
        object.__setattr__(self, "tools", tuple(self.tools))
        for tool in self.tools:
            if not tool or not isinstance(tool, str):
                raise InvalidParams(f"tool names must be non-empty strings, got {tool!r}")
        if len(set(self.tools)) != len(self.tools):
            raise InvalidParams(f"duplicate tool names in spec for {self.name!r}")


@dataclass(frozen=True)
class Message:
    """One transcript entry.  ids are session-scoped, gapless, monotone."""

    id: int
    session_id: str
    sender: str
    recipient: str
    kind: str
    payload: dict
    timestamp: int

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or self.id < 0:
            raise InvalidParams(f"message id must be a non-negative int, got {self.id!r}")
        if not self.session_id or not isinstance(self.session_id, str):
            raise InvalidParams("session_id must be a non-empty string")
        if self.kind not in MESSAGE_KINDS:
            raise InvalidParams(f"kind must be one of {MESSAGE_KINDS}, got {self.kind!r}")
        if not self.sender or not self.recipient:
            raise InvalidParams("sender and recipient must be non-empty")
        object.__setattr__(self, "payload", jsonable(self.payload))
        if not isinstance(self.payload, dict):
            raise InvalidParams("payload must be a JSON object")
        if not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise InvalidParams("timestamp must be a non-negative int")

    def signature(self) -> tuple:
        """Replay-comparison key: everything except id/timestamp/session."""
        return (
            self.sender,
            self.recipient,
            self.kind,
            json.dumps(self.payload, sort_keys=True),
        )

    def to_jsonable(self) -> dict:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "sender": self.sender,
            "recipient": self.recipient,
            "kind": self.kind,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_jsonable(data: dict) -> "Message":
        try:
            return Message(
                id=data["id"],
                session_id=data["session_id"],
                sender=data["sender"],
                recipient=data["recipient"],
                kind=data["kind"],
                payload=data["payload"],
                timestamp=data["timestamp"],
            )
        except (KeyError, TypeError) as exc:
            raise InvalidParams(f"malformed message record: {exc}") from exc


@dataclass(frozen=True)
class PlanNode:
    """One unit of work: which agent runs which command."""

    id: str
    agent: str
    task: str

    def __post_init__(self) -> None:
        if not self.id or not isinstance(self.id, str):
            raise InvalidParams(f"node id must be a non-empty string, got {self.id!r}")
        if not self.agent or not isinstance(self.agent, str):
            raise InvalidParams(f"node agent must be a non-empty string, got {self.agent!r}")
        try:
            parse_command(self.task)
        except CommandError as exc:
            raise InvalidPlan(
                f"node {self.id!r} task does not parse: {exc} (position {exc.position})"
            ) from exc


def _check_acyclic(node_ids: list, edges: list) -> None:
    """Kahn's algorithm; raises InvalidPlan when a cycle survives."""
    indeg = {n: 0 for n in node_ids}
    adjacency = {n: [] for n in node_ids}
    for src, dst in edges:
        adjacency[src].append(dst)
        indeg[dst] += 1
    queue = [n for n in node_ids if indeg[n] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for nxt in adjacency[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if seen != len(node_ids):
        stuck = sorted(n for n in node_ids if indeg[n] > 0)
        raise InvalidPlan(f"plan contains a cycle through {stuck}")


def _check_connected(node_ids: list, edges: list) -> None:
    if len(node_ids) <= 1:
        return
    neighbors = {n: set() for n in node_ids}
    for src, dst in edges:
        neighbors[src].add(dst)
        neighbors[dst].add(src)
    seen = {node_ids[0]}
    stack = [node_ids[0]]
    while stack:
        for nxt in neighbors[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != len(node_ids):
        missing = sorted(set(node_ids) - seen)
        raise InvalidPlan(f"hybrid plan graph is disconnected: {missing} unreachable")


@dataclass(frozen=True)
class Plan:
    """An execution graph over registered agents.

    sequential: nodes run in list order; edges may be empty or exactly the
    chain (they are redundant either way).  hierarchical: edges form a tree
    with exactly one root (the supervisor); the root delegates depth-first.
    hybrid: edges form a connected DAG; execution order is canonical
    (dependency level, then node id).
    """

    topology: str
    nodes: tuple
    edges: tuple

    def __post_init__(self) -> None:
        if self.topology not in TOPOLOGIES:
            raise InvalidPlan(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self, "edges", tuple((str(a), str(b)) for a, b in self.edges)
        )
        if not self.nodes:
            raise InvalidPlan("plan needs at least one node")
        for node in self.nodes:
            if not isinstance(node, PlanNode):
                raise InvalidPlan(f"nodes must be PlanNode, got {type(node).__name__}")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidPlan("node ids must be unique")
        known = set(ids)
        for src, dst in self.edges:
            if src not in known or dst not in known:
                raise InvalidPlan(f"edge ({src!r}, {dst!r}) references an unknown node")
            if src == dst:
                raise InvalidPlan(f"self-edge on node {src!r}")
        if len(set(self.edges)) != len(self.edges):
            raise InvalidPlan("duplicate edges")
        _check_acyclic(ids, list(self.edges))

        if self.topology == "sequential":
            chain = tuple((ids[i], ids[i + 1]) for i in range(len(ids) - 1))
            if self.edges not in ((), chain):
                raise InvalidPlan(
                    "sequential plans take no edges (or exactly the chain edges)"
                )
        elif self.topology == "hierarchical":
            indeg = {n: 0 for n in ids}
            for _, dst in self.edges:
                indeg[dst] += 1
            roots = [n for n in ids if indeg[n] == 0]
            if len(roots) != 1:
                raise InvalidPlan(
                    f"hierarchical plan must have exactly one root, found {sorted(roots)}"
                )
            if any(v > 1 for v in indeg.values()):
                clash = sorted(n for n, v in indeg.items() if v > 1)
                raise InvalidPlan(f"hierarchical nodes with multiple parents: {clash}")
        else:  # hybrid
            _check_connected(ids, list(self.edges))

    def node(self, node_id: str) -> PlanNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise InvalidPlan(f"unknown node id {node_id!r}")

    def predecessors(self, node_id: str) -> list:
        """Predecessor node ids, in plan-node order."""
        order = {n.id: i for i, n in enumerate(self.nodes)}
        preds = [src for src, dst in self.edges if dst == node_id]
        return sorted(preds, key=lambda n: order[n])

    def successors(self, node_id: str) -> list:
        order = {n.id: i for i, n in enumerate(self.nodes)}
        return sorted(
            (dst for src, dst in self.edges if src == node_id),
            key=lambda n: order[n],
        )

    def sinks(self) -> list:
        """Nodes without outgoing edges, in plan-node order.

        For sequential plans without explicit edges the chain order is
        implied, so the sink is the last node.
        """
        if self.topology == "sequential":
            return [self.nodes[-1].id]
        with_out = {src for src, _ in self.edges}
        return [n.id for n in self.nodes if n.id not in with_out]

    def root(self) -> str:
        """The unique zero-in-degree node of a hierarchical plan."""
        if self.topology != "hierarchical":
            raise InvalidPlan("root() is defined for hierarchical plans only")
        with_in = {dst for _, dst in self.edges}
        roots = [n.id for n in self.nodes if n.id not in with_in]
        return roots[0]

    def canonical_order(self) -> list:
        """Total execution order: dependency level, then node id.

        A node's level is one more than the maximum level of its
        predecessors (0 for sources), so every node sorts after all of its
        dependencies; ties break on node id for cross-run stability.
        """
        if self.topology == "sequential":
            return [n.id for n in self.nodes]
        level: dict = {}
        remaining = [n.id for n in self.nodes]
        while remaining:
            progressed = False
            for node_id in list(remaining):
                preds = self.predecessors(node_id)
                if all(p in level for p in preds):
                    level[node_id] = 1 + max((level[p] for p in preds), default=-1)
                    remaining.remove(node_id)
                    progressed = True
            if not progressed:  # pragma: no cover - acyclicity already enforced
                raise InvalidPlan("plan contains a cycle")
        return sorted(level, key=lambda n: (level[n], n))

    def to_jsonable(self) -> dict:
        return {
            "topology": self.topology,
            "nodes": [
                {"id": n.id, "agent": n.agent, "task": n.task} for n in self.nodes
            ],
            "edges": [[src, dst] for src, dst in self.edges],
        }

    @staticmethod
    def from_jsonable(data: dict) -> "Plan":
        if not isinstance(data, dict):
            raise InvalidPlan(f"plan must be a JSON object, got {type(data).__name__}")
        for key in ("topology", "nodes", "edges"):
            if key not in data:
                raise InvalidPlan(f"plan is missing the {key!r} field")
        try:
            nodes = tuple(
                PlanNode(id=n["id"], agent=n["agent"], task=n["task"])
                for n in data["nodes"]
            )
            edges = tuple((e[0], e[1]) for e in data["edges"])
        except (KeyError, TypeError, IndexError) as exc:
            raise InvalidPlan(f"malformed plan record: {exc}") from exc
        return Plan(topology=data["topology"], nodes=nodes, edges=edges)


def save_plan(plan: Plan, path) -> None:
    """Write a plan file: JSON {topology, nodes, edges}."""
    text = json.dumps(plan.to_jsonable(), indent=2, sort_keys=True) + "\n"
    try:
        Path(path).write_text(text, encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write plan file {path}: {exc}") from exc


def load_plan(path) -> Plan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read plan file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidPlan(f"plan file is not valid JSON: {exc}") from exc
    return Plan.from_jsonable(data)


@dataclass(frozen=True)
class Transcript:
    """A finished session: its messages plus the final artifact ids."""

    session_id: str
    messages: tuple
    final_artifacts: tuple = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.session_id or not isinstance(self.session_id, str):
            raise InvalidParams("session_id must be a non-empty string")
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(
            self, "final_artifacts", tuple(str(a) for a in self.final_artifacts)
        )
        expected = 0
        for msg in self.messages:
            if not isinstance(msg, Message):
                raise InvalidParams("messages must be Message instances")
            if msg.session_id != self.session_id:
                raise InvalidParams(
                    f"message {msg.id} belongs to session {msg.session_id!r}, "
                    f"not {self.session_id!r}"
                )
            if msg.id != expected:
                raise InvalidParams(
                    f"message ids must be gapless from 0; expected {expected}, got {msg.id}"
                )
            expected += 1


def save_transcript(transcript: Transcript, path) -> None:
    """Persist as JSON Lines: one message per line, then one footer line
    carrying the final artifact ids (an object without a "kind" field)."""
    lines = [
        json.dumps(m.to_jsonable(), sort_keys=True) for m in transcript.messages
    ]
    lines.append(json.dumps({"final_artifacts": list(transcript.final_artifacts)}))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write transcript {path}: {exc}") from exc


def load_transcript(path) -> Transcript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read transcript {path}: {exc}") from exc
    messages = []
    final: list = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IoError(f"transcript line {lineno} is not valid JSON: {exc}") from exc
        if isinstance(record, dict) and "kind" in record:
            messages.append(Message.from_jsonable(record))
        elif isinstance(record, dict) and "final_artifacts" in record:
            final = list(record["final_artifacts"])
        else:
            raise IoError(f"transcript line {lineno} is neither message nor footer")
    if not messages:
        raise IoError(f"transcript {path} contains no messages")
    return Transcript(messages[0].session_id, tuple(messages), tuple(final))
