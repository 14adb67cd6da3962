"""Reflection produces typed knowledge deltas from session traces.

Two engines share one interface: a deterministic rule-based mock (all
offline tests and the simulator run on it) and an HTTP client for an
external LLM service.  Engine output is a closed set of self-modification
calls plus a structured rationale; the parser turns validated calls into a
KnowledgeDelta.  The control loop never depends on which engine produced a
delta.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence

import httpx

from .errors import (
    EngineUnavailable,
    MalformedArguments,
    ReflectionTimeout,
    UnknownTargetId,
    UnparseableOutput,
)
from .knowledge import (
    Component,
    DeltaOp,
    InstructionEntry,
    KnowledgeDelta,
    KnowledgeState,
    Origin,
    ProposedBy,
    Section,
    ToolEntry,
    ToolStatus,
    UserPreference,
    entry_key,
)

logger = logging.getLogger(__name__)

# The closed verb set of the self-modification API.  New verbs require a
# schema version bump.
APPEND_INSTRUCTION = "appendInstruction"
MODIFY_INSTRUCTION = "modifyInstruction"
CREATE_TOOL = "createTool"
DEPRECATE_TOOL = "deprecateTool"
ADD_USER_PREFERENCE = "addUserPreference"

VERBS = (APPEND_INSTRUCTION, MODIFY_INSTRUCTION, CREATE_TOOL, DEPRECATE_TOOL, ADD_USER_PREFERENCE)

_REQUIRED_ARGS = {
    APPEND_INSTRUCTION: ("text",),
    MODIFY_INSTRUCTION: ("id", "text"),
    CREATE_TOOL: ("name", "signature", "code"),
    DEPRECATE_TOOL: ("name",),
    ADD_USER_PREFERENCE: ("key", "value"),
}


@dataclass(frozen=True)
class SelfModCall:
    verb: str
    arguments: Mapping

    def __post_init__(self):
        object.__setattr__(self, "arguments", dict(self.arguments))
        if self.verb not in VERBS:
            raise MalformedArguments(f"unknown verb {self.verb!r}")
        missing = [a for a in _REQUIRED_ARGS[self.verb] if a not in self.arguments]
        if missing:
            raise MalformedArguments(f"{self.verb} missing arguments: {', '.join(missing)}")

    def as_dict(self) -> dict:
        return {"arguments": dict(self.arguments), "verb": self.verb}


@dataclass(frozen=True)
class ReflectionOutput:
    calls: tuple
    rationale: Mapping

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))
        object.__setattr__(self, "rationale", dict(self.rationale))
        if not self.rationale:
            raise MalformedArguments("reflection rationale must be non-empty")

    def as_dict(self) -> dict:
        return {"calls": [c.as_dict() for c in self.calls], "rationale": dict(self.rationale)}


@dataclass(frozen=True)
class SessionRecord:
    id: str
    input: str
    output: str
    state_commit: str
    created_at: float
    transcript: tuple = ()  # ordered (role, content) pairs
    tool_log: tuple = ()  # ordered (tool, args_digest, outcome) triples
    rating: Optional[int] = None
    rated_at: Optional[float] = None
    rated_by: Optional[str] = None

    @property
    def rated(self) -> bool:
        return self.rating is not None

    def as_payload(self) -> dict:
        return {
            "id": self.id,
            "input": self.input,
            "output": self.output,
            "state_commit": self.state_commit,
            "created_at": self.created_at,
            "transcript": [list(m) for m in self.transcript],
            "tool_log": [list(t) for t in self.tool_log],
            "rating": self.rating,
            "rated_at": self.rated_at,
            "rated_by": self.rated_by,
        }


@dataclass(frozen=True)
class ReflectionContext:
    """Everything an engine sees: trace, tool log, the recent rating window,
    and any recorded human veto flags."""

    transcript: tuple
    tool_log: tuple
    rating_window: tuple
    veto_flags: tuple = ()
    mode: str = "propose"  # "propose" | "repair"
    failed_delta: Optional[KnowledgeDelta] = None
    failed_decision: Optional[Mapping] = None

    def as_request_payload(self) -> dict:
        return {
            "mode": self.mode,
            "transcript": [list(m) for m in self.transcript],
            "tool_log": [list(t) for t in self.tool_log],
            "rating_window": list(self.rating_window),
            "veto_flags": [dict(f) for f in self.veto_flags],
            "failed_delta": self.failed_delta.canonical_dict() if self.failed_delta else None,
            "failed_decision": dict(self.failed_decision) if self.failed_decision else None,
        }


class ReflectionEngine(Protocol):
    def reflect(self, context: ReflectionContext) -> ReflectionOutput: ...


# ---------------------------------------------------------------------------
# Validation of raw engine documents
# ---------------------------------------------------------------------------


def validate_reflection_payload(doc: object) -> ReflectionOutput:
    """Strict schema check of a raw engine response document.

    Raises UnparseableOutput (carrying the raw payload for quarantine) on
    any violation.
    """
    if not isinstance(doc, Mapping):
        raise UnparseableOutput("reflection output is not an object", raw=doc)
    calls_doc = doc.get("calls")
    rationale = doc.get("rationale")
    if not isinstance(calls_doc, Sequence) or isinstance(calls_doc, (str, bytes)):
        raise UnparseableOutput("reflection output lacks a calls list", raw=doc)
    if not isinstance(rationale, Mapping) or not rationale:
        raise UnparseableOutput("reflection output lacks a non-empty rationale", raw=doc)
    calls = []
    for item in calls_doc:
        if not isinstance(item, Mapping):
            raise UnparseableOutput("call entry is not an object", raw=doc)
        verb = item.get("verb")
        args = item.get("arguments")
        if not isinstance(args, Mapping):
            raise UnparseableOutput(f"call {verb!r} lacks an arguments object", raw=doc)
        try:
            calls.append(SelfModCall(verb=verb, arguments=args))
        except MalformedArguments as exc:
            raise UnparseableOutput(str(exc), raw=doc) from exc
    return ReflectionOutput(calls=tuple(calls), rationale=rationale)


# ---------------------------------------------------------------------------
# Parsing calls into a delta
# ---------------------------------------------------------------------------


def parse_self_mod_calls(
    calls: Sequence[SelfModCall],
    current: KnowledgeState,
    *,
    id_factory: Callable[[], str],
    now: float,
    proposed_by: ProposedBy = ProposedBy.REFLECTION,
    rationale: Optional[Mapping] = None,
    origin: Optional[Origin] = None,
) -> KnowledgeDelta:
    """Map validated self-modification calls onto typed delta ops, in order.

    Targets are resolved against the current state plus the inserts pending
    earlier in the same call list.
    """
    if origin is None:
        origin = Origin.REPAIR if proposed_by is ProposedBy.REPAIR else Origin.REFLECTION
    views = {c: {entry_key(e): e for e in current.component(c)} for c in Component}
    ops = []
    for call in calls:
        args = call.arguments
        if call.verb == APPEND_INSTRUCTION:
            section = Section(args.get("section", Section.GLOBAL.value))
            entry = InstructionEntry(
                id=args.get("id") or id_factory(),
                section=section,
                text=str(args["text"]),
                created_at=now,
                origin=origin,
            )
            if entry.id in views[Component.S]:
                raise MalformedArguments(f"appendInstruction id {entry.id!r} already exists")
            views[Component.S][entry.id] = entry
            ops.append(DeltaOp.insert(Component.S, entry))
        elif call.verb == MODIFY_INSTRUCTION:
            target = str(args["id"])
            prior = views[Component.S].get(target)
            if prior is None:
                raise UnknownTargetId(f"modifyInstruction: unknown instruction {target!r}")
            entry = InstructionEntry(
                id=target,
                section=Section(args.get("section", prior.section.value)),
                text=str(args["text"]),
                created_at=prior.created_at,
                origin=origin,
            )
            views[Component.S][target] = entry
            ops.append(DeltaOp.modify(Component.S, target, entry))
        elif call.verb == CREATE_TOOL:
            name = str(args["name"])
            entry = ToolEntry(
                name=name,
                signature=str(args["signature"]),
                code=str(args["code"]),
                status=ToolStatus.QUARANTINED,  # quarantined until the policy scan + test gate pass
                sandbox_dir=name,
                created_at=now,
            )
            if name in views[Component.T]:
                raise MalformedArguments(f"createTool name {name!r} already exists")
            views[Component.T][name] = entry
            ops.append(DeltaOp.insert(Component.T, entry))
        elif call.verb == DEPRECATE_TOOL:
            name = str(args["name"])
            prior = views[Component.T].get(name)
            if prior is None:
                raise UnknownTargetId(f"deprecateTool: unknown tool {name!r}")
            entry = ToolEntry(
                name=prior.name,
                signature=prior.signature,
                code=prior.code,
                status=ToolStatus.DEPRECATED,
                sandbox_dir=prior.sandbox_dir,
                created_at=prior.created_at,
            )
            views[Component.T][name] = entry
            ops.append(DeltaOp.modify(Component.T, name, entry))
        else:  # ADD_USER_PREFERENCE
            key = str(args["key"])
            prior = views[Component.U].get(key)
            entry = UserPreference(
                key=key,
                value=str(args["value"]),
                created_at=prior.created_at if prior else now,
            )
            views[Component.U][key] = entry
            if prior is None:
                ops.append(DeltaOp.insert(Component.U, entry))
            else:
                ops.append(DeltaOp.modify(Component.U, key, entry))
    return KnowledgeDelta(
        ops=tuple(ops),
        rationale=rationale or {"summary": "parsed self-modification calls"},
        proposed_by=proposed_by,
    )


def render_calls(delta: KnowledgeDelta) -> list:
    """Inverse of parse_self_mod_calls for deltas expressible in the verb set."""
    calls = []
    for op in delta.ops:
        if op.component is Component.S and op.kind.value == "insert":
            calls.append(SelfModCall(APPEND_INSTRUCTION, {
                "id": op.payload.id, "text": op.payload.text, "section": op.payload.section.value,
            }))
        elif op.component is Component.S and op.kind.value == "modify":
            calls.append(SelfModCall(MODIFY_INSTRUCTION, {
                "id": op.target_id, "text": op.payload.text, "section": op.payload.section.value,
            }))
        elif op.component is Component.T and op.kind.value == "insert":
            calls.append(SelfModCall(CREATE_TOOL, {
                "name": op.payload.name, "signature": op.payload.signature, "code": op.payload.code,
            }))
        elif op.component is Component.T and op.kind.value == "modify" and op.payload.status is ToolStatus.DEPRECATED:
            calls.append(SelfModCall(DEPRECATE_TOOL, {"name": op.target_id}))
        elif op.component is Component.U:
            calls.append(SelfModCall(ADD_USER_PREFERENCE, {
                "key": entry_key(op.payload), "value": op.payload.value,
            }))
        else:
            raise MalformedArguments(f"delta op not expressible as a self-modification call: {op}")
    return calls


# ---------------------------------------------------------------------------
# Deterministic rule-based mock engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectionRule:
    """Pattern -> call template.  `marker` is matched as a line prefix inside
    user messages; the remainder of the line feeds the builder."""

    name: str
    marker: str
    build: Callable[[str], Optional[SelfModCall]]


def _build_correction(rest: str) -> Optional[SelfModCall]:
    text = rest.strip()
    if not text:
        return None
    return SelfModCall(APPEND_INSTRUCTION, {"text": text, "section": Section.GLOBAL.value})


def _build_preference(rest: str) -> Optional[SelfModCall]:
    if "=" not in rest:
        return None
    key, _, value = rest.partition("=")
    key, value = key.strip(), value.strip()
    if not key or not value:
        return None
    return SelfModCall(ADD_USER_PREFERENCE, {"key": key, "value": value})


def _build_tool(rest: str) -> Optional[SelfModCall]:
    parts = [p.strip() for p in rest.split("|")]
    if len(parts) != 3 or not all(parts):
        return None
    name, signature, code = parts
    return SelfModCall(CREATE_TOOL, {"name": name, "signature": signature, "code": code})


def _build_deprecation(rest: str) -> Optional[SelfModCall]:
    name = rest.strip()
    if not name:
        return None
    return SelfModCall(DEPRECATE_TOOL, {"name": name})


DEFAULT_RULES = (
    ReflectionRule("correction", "correction:", _build_correction),
    ReflectionRule("preference", "preference:", _build_preference),
    ReflectionRule("new-tool", "new tool:", _build_tool),
    ReflectionRule("deprecate-tool", "deprecate tool:", _build_deprecation),
)


class MockReflectionEngine:
    """Deterministic pattern->template engine for tests and the simulator.

    Byte-identical inputs yield byte-identical outputs.  When two rules
    match, calls come out in rule-table order.  Repair mode re-proposes the
    failed delta's calls with instruction texts suffixed "(refined)";
    constructing the engine with repair_enabled=False makes repair return
    an empty call list, which the loop treats as unrepairable.
    """

    def __init__(self, rules: Sequence[ReflectionRule] = DEFAULT_RULES, repair_enabled: bool = True):
        self.rules = tuple(rules)
        self.repair_enabled = repair_enabled

    def reflect(self, context: ReflectionContext) -> ReflectionOutput:
        if context.mode == "repair":
            return self._repair(context)
        calls = []
        matched = []
        user_lines = [
            line
            for role, content in context.transcript
            if role == "user"
            for line in content.splitlines()
        ]
        for rule in self.rules:
            for line in user_lines:
                stripped = line.strip()
                if stripped.lower().startswith(rule.marker):
                    call = rule.build(stripped[len(rule.marker):])
                    if call is not None:
                        calls.append(call)
                        matched.append(rule.name)
        window = context.rating_window
        rationale = {
            "summary": "no-op" if not calls else f"matched rules: {', '.join(matched)}",
            "rating_window_mean": (sum(window) / len(window)) if window else None,
            "veto_flags_seen": len(context.veto_flags),
        }
        return ReflectionOutput(calls=tuple(calls), rationale=rationale)

    def _repair(self, context: ReflectionContext) -> ReflectionOutput:
        if not self.repair_enabled or context.failed_delta is None:
            return ReflectionOutput(calls=(), rationale={"summary": "no repair available"})
        calls = []
        for call in render_calls(context.failed_delta):
            if call.verb in (APPEND_INSTRUCTION, MODIFY_INSTRUCTION):
                args = dict(call.arguments)
                if call.verb == APPEND_INSTRUCTION:
                    args.pop("id", None)  # repair inserts get fresh ids
                args["text"] = f"{args['text']} (refined)"
                calls.append(SelfModCall(call.verb, args))
            else:
                calls.append(call)
        return ReflectionOutput(
            calls=tuple(calls),
            rationale={"summary": "typed repair: refined failed proposal"},
        )


class ScriptedReflectionEngine:
    """Plays back a fixed sequence of outputs; handy in lifecycle tests."""

    def __init__(self, outputs: Sequence[ReflectionOutput]):
        self._outputs = list(outputs)
        self.contexts: list = []

    def reflect(self, context: ReflectionContext) -> ReflectionOutput:
        self.contexts.append(context)
        if not self._outputs:
            return ReflectionOutput(calls=(), rationale={"summary": "no-op"})
        return self._outputs.pop(0)


# ---------------------------------------------------------------------------
# External LLM engine client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LLMEngineConfig:
    endpoint: str
    timeout_s: float = 10.0
    retries: int = 2
    max_response_bytes: int = 262144
    token_env: str = "ILWS_REFLECTION_TOKEN"

    def headers(self) -> dict:
        headers = {"content-type": "application/json"}
        token = os.environ.get(self.token_env, "")
        if token:
            headers["authorization"] = f"Bearer {token}"
        return headers


class LLMReflectionEngine:
    """HTTP client for an external reflection service.

    Request: JSON ReflectionContext payload.  Response: a document with
    `calls` (list of {verb, arguments}) and a non-empty `rationale` map,
    validated before acceptance.  Responses over the size cap are rejected.
    """

    def __init__(self, config: LLMEngineConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self._transport = transport

    def reflect(self, context: ReflectionContext) -> ReflectionOutput:
        payload = context.as_request_payload()
        last_error: Optional[Exception] = None
        for attempt in range(self.config.retries + 1):
            try:
                with httpx.Client(transport=self._transport, timeout=self.config.timeout_s) as client:
                    response = client.post(self.config.endpoint, json=payload, headers=self.config.headers())
            except httpx.TimeoutException as exc:
                last_error = exc
                logger.warning("reflection endpoint timeout (attempt %d): %s", attempt + 1, exc)
                continue
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("reflection endpoint error (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = EngineUnavailable(f"engine returned {response.status_code}")
                continue
            if len(response.content) > self.config.max_response_bytes:
                raise UnparseableOutput(
                    f"response exceeds the {self.config.max_response_bytes}-byte cap",
                    raw=response.content[:1024].decode("utf-8", "replace"),
                )
            try:
                doc = response.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise UnparseableOutput(f"response is not JSON: {exc}", raw=response.text[:4096]) from exc
            return validate_reflection_payload(doc)
        if isinstance(last_error, httpx.TimeoutException):
            raise ReflectionTimeout(f"engine timed out after {self.config.retries + 1} attempts")
        raise EngineUnavailable(f"engine unreachable after {self.config.retries + 1} attempts: {last_error}")
