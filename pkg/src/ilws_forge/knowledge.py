"""Typed knowledge state, delta algebra, and deterministic prompt composition.

The state is the triple (instructions, preferences, tools) plus a pinned
schema version.  All values are immutable; every operation returns new
objects.  Canonical serialization is byte-deterministic and fully documented
in `canonical_dict` so independent implementations can agree on hashes:

* top-level key order: schema_version, instructions, preferences, tools
* entry objects carry their keys in ascending alphabetical order
* JSON separators are ("," , ":") with no insignificant whitespace
* strings are UTF-8, not ASCII-escaped; numbers use Python shortest repr

Component collections are kept sorted by their identity key (instruction id,
preference key, tool name).  That makes application order-insensitive for
disjoint ids, makes delta inversion restore canonical bytes exactly, and
gives prompt composition a stable entry order.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Optional, Union

from .errors import DuplicateId, InvariantViolation, UnknownTarget

SCHEMA_VERSION = "1.0.0"

_SANDBOX_SEGMENT = re.compile(r"^[A-Za-z0-9._-]+$")


class Section(str, Enum):
    GLOBAL = "global"
    PRODUCT = "product"
    TENANT = "tenant"


class Origin(str, Enum):
    REFLECTION = "reflection"
    REPAIR = "repair"
    MANUAL = "manual"
    TOOL_RUBRIC = "tool_rubric"


class ToolStatus(str, Enum):
    ACTIVE = "active"
    QUARANTINED = "quarantined"
    DEPRECATED = "deprecated"


class Component(str, Enum):
    S = "S"  # instructions
    U = "U"  # user preferences
    T = "T"  # tools


class DeltaKind(str, Enum):
    INSERT = "insert"
    MODIFY = "modify"
    DELETE = "delete"


class ProposedBy(str, Enum):
    REFLECTION = "reflection"
    REPAIR = "repair"
    MANUAL = "manual"


# ---------------------------------------------------------------------------
# Entries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstructionEntry:
    id: str
    section: Section
    text: str
    created_at: float
    origin: Origin

    def validate(self) -> None:
        if not self.id:
            raise InvariantViolation("instruction id must be non-empty")
        if not self.text or not self.text.strip():
            raise InvariantViolation(f"instruction {self.id!r} has empty text")

    def canonical_dict(self) -> dict:
        return {
            "created_at": self.created_at,
            "id": self.id,
            "origin": self.origin.value,
            "section": self.section.value,
            "text": self.text,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "InstructionEntry":
        return InstructionEntry(
            id=doc["id"],
            section=Section(doc["section"]),
            text=doc["text"],
            created_at=float(doc["created_at"]),
            origin=Origin(doc["origin"]),
        )


@dataclass(frozen=True)
class UserPreference:
    key: str
    value: str
    created_at: float

    def validate(self) -> None:
        if not self.key:
            raise InvariantViolation("preference key must be non-empty")

    def canonical_dict(self) -> dict:
        return {"created_at": self.created_at, "key": self.key, "value": self.value}

    @staticmethod
    def from_dict(doc: Mapping) -> "UserPreference":
        return UserPreference(key=doc["key"], value=doc["value"], created_at=float(doc["created_at"]))


@dataclass(frozen=True)
class ToolEntry:
    name: str
    signature: str
    code: str
    status: ToolStatus
    sandbox_dir: str
    created_at: float

    def validate(self) -> None:
        if not self.name:
            raise InvariantViolation("tool name must be non-empty")
        sd = self.sandbox_dir
        if not sd or sd.startswith(("/", "\\")) or "\\" in sd:
            raise InvariantViolation(f"tool {self.name!r}: sandbox_dir must be a relative posix path")
        segments = sd.split("/")
        if any(seg in ("", ".", "..") or not _SANDBOX_SEGMENT.match(seg) for seg in segments):
            raise InvariantViolation(f"tool {self.name!r}: sandbox_dir {sd!r} contains an invalid segment")

    def canonical_dict(self) -> dict:
        return {
            "code": self.code,
            "created_at": self.created_at,
            "name": self.name,
            "sandbox_dir": self.sandbox_dir,
            "signature": self.signature,
            "status": self.status.value,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "ToolEntry":
        return ToolEntry(
            name=doc["name"],
            signature=doc["signature"],
            code=doc["code"],
            status=ToolStatus(doc["status"]),
            sandbox_dir=doc["sandbox_dir"],
            created_at=float(doc["created_at"]),
        )


Entry = Union[InstructionEntry, UserPreference, ToolEntry]

_ENTRY_TYPE = {Component.S: InstructionEntry, Component.U: UserPreference, Component.T: ToolEntry}


def entry_key(entry: Entry) -> str:
    """Identity key of an entry inside its component."""
    if isinstance(entry, InstructionEntry):
        return entry.id
    if isinstance(entry, UserPreference):
        return entry.key
    return entry.name


def entry_text(entry: Entry) -> str:
    """The textual payload counted by the delta size metric."""
    if isinstance(entry, InstructionEntry):
        return entry.text
    if isinstance(entry, UserPreference):
        return entry.value
    return entry.code


def token_count(text: str) -> int:
    """Whitespace-delimited token count (deliberately tokenizer-agnostic)."""
    return len(text.split())


# ---------------------------------------------------------------------------
# Knowledge state
# ---------------------------------------------------------------------------


def _sorted_unique(entries: Iterable[Entry], what: str) -> tuple:
    ordered = sorted(entries, key=entry_key)
    seen = set()
    for e in ordered:
        e.validate()
        k = entry_key(e)
        if k in seen:
            raise InvariantViolation(f"duplicate {what} id {k!r}")
        seen.add(k)
    return tuple(ordered)


@dataclass(frozen=True)
class KnowledgeState:
    schema_version: str = SCHEMA_VERSION
    instructions: tuple = ()
    preferences: tuple = ()
    tools: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "instructions", _sorted_unique(self.instructions, "instruction"))
        object.__setattr__(self, "preferences", _sorted_unique(self.preferences, "preference"))
        object.__setattr__(self, "tools", _sorted_unique(self.tools, "tool"))

    def component(self, c: Component) -> tuple:
        if c is Component.S:
            return self.instructions
        if c is Component.U:
            return self.preferences
        return self.tools

    def canonical_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "instructions": [e.canonical_dict() for e in self.instructions],
            "preferences": [e.canonical_dict() for e in self.preferences],
            "tools": [e.canonical_dict() for e in self.tools],
        }

    @cached_property
    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical_dict(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    @cached_property
    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes).hexdigest()

    @staticmethod
    def from_dict(doc: Mapping) -> "KnowledgeState":
        return KnowledgeState(
            schema_version=doc["schema_version"],
            instructions=tuple(InstructionEntry.from_dict(d) for d in doc["instructions"]),
            preferences=tuple(UserPreference.from_dict(d) for d in doc["preferences"]),
            tools=tuple(ToolEntry.from_dict(d) for d in doc["tools"]),
        )

    @staticmethod
    def from_canonical_bytes(raw: bytes) -> "KnowledgeState":
        return KnowledgeState.from_dict(json.loads(raw.decode("utf-8")))


# ---------------------------------------------------------------------------
# Deltas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaOp:
    """One insert/modify/delete against a single component.

    Inserts carry the full new entry in `payload` and no target_id.
    Modifies carry target_id plus the full replacement entry.
    Deletes carry target_id; `payload` holds a snapshot of the removed
    entry when known, which makes inversion and size accounting
    self-contained.
    """

    kind: DeltaKind
    component: Component
    target_id: Optional[str] = None
    payload: Optional[Entry] = None

    def __post_init__(self):
        if self.kind is DeltaKind.INSERT:
            if self.payload is None or self.target_id is not None:
                raise InvariantViolation("insert ops carry a payload and no target_id")
        elif self.target_id is None:
            raise InvariantViolation(f"{self.kind.value} ops require a target_id")
        if self.kind is DeltaKind.MODIFY and self.payload is None:
            raise InvariantViolation("modify ops require a replacement payload")
        if self.payload is not None and not isinstance(self.payload, _ENTRY_TYPE[self.component]):
            raise InvariantViolation(
                f"payload type {type(self.payload).__name__} does not match component {self.component.value}"
            )

    @staticmethod
    def insert(component: Component, payload: Entry) -> "DeltaOp":
        return DeltaOp(DeltaKind.INSERT, component, payload=payload)

    @staticmethod
    def modify(component: Component, target_id: str, payload: Entry) -> "DeltaOp":
        return DeltaOp(DeltaKind.MODIFY, component, target_id=target_id, payload=payload)

    @staticmethod
    def delete(component: Component, target_id: str, snapshot: Optional[Entry] = None) -> "DeltaOp":
        return DeltaOp(DeltaKind.DELETE, component, target_id=target_id, payload=snapshot)

    def canonical_dict(self) -> dict:
        return {
            "component": self.component.value,
            "kind": self.kind.value,
            "payload": self.payload.canonical_dict() if self.payload is not None else None,
            "target_id": self.target_id,
        }


@dataclass(frozen=True)
class KnowledgeDelta:
    """Ordered edit list over the three components, plus the proposer's rationale."""

    ops: tuple = ()
    rationale: Mapping = field(default_factory=dict)
    proposed_by: ProposedBy = ProposedBy.MANUAL

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "rationale", dict(self.rationale))
        if self.proposed_by in (ProposedBy.REFLECTION, ProposedBy.REPAIR) and not self.rationale:
            raise InvariantViolation(f"{self.proposed_by.value} deltas require a rationale")

    @property
    def empty(self) -> bool:
        return not self.ops

    def canonical_dict(self) -> dict:
        return {
            "ops": [op.canonical_dict() for op in self.ops],
            "proposed_by": self.proposed_by.value,
            "rationale": self.rationale,
        }

    def digest(self) -> str:
        raw = json.dumps(self.canonical_dict(), ensure_ascii=False, separators=(",", ":"), sort_keys=True)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


EMPTY_DELTA = KnowledgeDelta()


def apply_delta(state: KnowledgeState, delta: KnowledgeDelta) -> KnowledgeState:
    """Apply ops strictly in list order; atomic (any failure leaves state untouched).

    Raises UnknownTarget, DuplicateId, or InvariantViolation; schema_version
    and the input state are never modified.
    """
    views = {c: {entry_key(e): e for e in state.component(c)} for c in Component}
    for op in delta.ops:
        view = views[op.component]
        if op.kind is DeltaKind.INSERT:
            op.payload.validate()
            key = entry_key(op.payload)
            if key in view:
                raise DuplicateId(f"insert collides with existing {op.component.value} id {key!r}")
            view[key] = op.payload
        elif op.kind is DeltaKind.MODIFY:
            if op.target_id not in view:
                raise UnknownTarget(f"modify of missing {op.component.value} id {op.target_id!r}")
            op.payload.validate()
            if entry_key(op.payload) != op.target_id:
                raise InvariantViolation(
                    f"modify payload id {entry_key(op.payload)!r} does not match target {op.target_id!r}"
                )
            view[op.target_id] = op.payload
        else:
            if op.target_id not in view:
                raise UnknownTarget(f"delete of missing {op.component.value} id {op.target_id!r}")
            del view[op.target_id]
    return KnowledgeState(
        schema_version=state.schema_version,
        instructions=tuple(views[Component.S].values()),
        preferences=tuple(views[Component.U].values()),
        tools=tuple(views[Component.T].values()),
    )


def invert_delta(state_before: KnowledgeState, delta: KnowledgeDelta) -> KnowledgeDelta:
    """Inverse delta such that apply(apply(K, d), invert(K, d)) == K byte-for-byte."""
    views = {c: {entry_key(e): e for e in state_before.component(c)} for c in Component}
    inverse: list[DeltaOp] = []
    for op in delta.ops:
        view = views[op.component]
        if op.kind is DeltaKind.INSERT:
            key = entry_key(op.payload)
            if key in view:
                raise DuplicateId(f"insert collides with existing {op.component.value} id {key!r}")
            view[key] = op.payload
            inverse.append(DeltaOp.delete(op.component, key, snapshot=op.payload))
        elif op.kind is DeltaKind.MODIFY:
            if op.target_id not in view:
                raise UnknownTarget(f"modify of missing {op.component.value} id {op.target_id!r}")
            prior = view[op.target_id]
            view[op.target_id] = op.payload
            inverse.append(DeltaOp.modify(op.component, op.target_id, prior))
        else:
            if op.target_id not in view:
                raise UnknownTarget(f"delete of missing {op.component.value} id {op.target_id!r}")
            prior = view.pop(op.target_id)
            inverse.append(DeltaOp.insert(op.component, prior))
    return KnowledgeDelta(ops=tuple(reversed(inverse)), rationale={"inverse_of": delta.digest()})


def delta_size(delta: KnowledgeDelta) -> int:
    """Whitespace token count across all textual payloads of the delta's ops.

    Deletes count the tokens of the removed entry's text as recorded in the
    op's payload snapshot (0 if the snapshot is absent).
    """
    total = 0
    for op in delta.ops:
        if op.payload is not None:
            total += token_count(entry_text(op.payload))
    return total


# ---------------------------------------------------------------------------
# Prompt composition
# ---------------------------------------------------------------------------

PROMPT_HEADER = "# Knowledge state (schema {version})"

_SECTION_TITLES = (
    (Section.GLOBAL, "## Global instructions"),
    (Section.PRODUCT, "## Product instructions"),
    (Section.TENANT, "## Tenant instructions"),
)


@dataclass(frozen=True)
class ComposedPrompt:
    text: str
    token_count: int
    budget_tokens: int
    over_budget: bool


def compose_prompt(state: KnowledgeState, budget_tokens: int) -> ComposedPrompt:
    """Deterministic system prompt from the state.

    Sections appear in fixed order (global, product, tenant, preferences,
    tools); empty sections are omitted; only active tools are advertised.
    Exceeding the token budget sets a warning flag rather than truncating.
    """
    if budget_tokens <= 0:
        raise InvariantViolation("budget_tokens must be positive")
    lines = [PROMPT_HEADER.format(version=state.schema_version)]
    for section, title in _SECTION_TITLES:
        entries = [e for e in state.instructions if e.section is section]
        if entries:
            lines.append(title)
            lines.extend(f"- {e.text}" for e in entries)
    if state.preferences:
        lines.append("## User preferences")
        lines.extend(f"- {p.key}: {p.value}" for p in state.preferences)
    active_tools = [t for t in state.tools if t.status is ToolStatus.ACTIVE]
    if active_tools:
        lines.append("## Tools")
        lines.extend(f"- {t.name}: {t.signature}" for t in active_tools)
    text = "\n".join(lines)
    n_tokens = token_count(text)
    return ComposedPrompt(
        text=text,
        token_count=n_tokens,
        budget_tokens=budget_tokens,
        over_budget=n_tokens > budget_tokens,
    )


def replace_entry(entry: Entry, **changes) -> Entry:
    """Convenience wrapper for building modify payloads."""
    return replace(entry, **changes)
