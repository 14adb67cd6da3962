"""Content-addressed, append-only commit store plus the structured audit log.

On-disk layout (FileCommitStore / FileAuditLog):

    <root>/commits/<commit id>.json   one JSON document per commit:
                                      {"id", "parent", "state_hash", "meta",
                                       "state": <canonical state document>}
    <root>/tags/<label>.json          {"label", "commit", "kind", "created_at"}
    <root>/audit/audit-YYYYMMDD.ndjson  one JSON record per line:
                                      {"seq", "kind", "at", "payload"}

Commit ids are the SHA-256 of the canonical JSON of (meta, parent,
state_hash) with sorted keys, so identical (parent, state, meta) triples
produce identical ids and commits are idempotent.  Nothing is ever
rewritten or deleted; reverts append new commits that point at an
ancestor's state hash.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import re
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from .errors import DuplicateLabel, StorageFailure, UnknownRef
from .knowledge import (
    Component,
    DeltaOp,
    KnowledgeDelta,
    KnowledgeState,
    ProposedBy,
    entry_key,
)

logger = logging.getLogger(__name__)

COMMIT_REASONS = ("provisional", "accept", "repair", "rollback", "veto", "quarantine", "manual")
AUDIT_KINDS = ("session", "reflection", "gate", "repair", "rollback", "veto", "tool", "distill", "alarm")
TAG_KINDS = ("good", "quarantine")

_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass(frozen=True)
class CommitMeta:
    author: str  # "system" | "admin"
    reason: str  # one of COMMIT_REASONS
    timestamp: float
    candidate_id: Optional[str] = None

    def __post_init__(self):
        if self.author not in ("system", "admin"):
            raise StorageFailure(f"unknown commit author {self.author!r}")
        if self.reason not in COMMIT_REASONS:
            raise StorageFailure(f"unknown commit reason {self.reason!r}")

    def as_dict(self) -> dict:
        return {
            "author": self.author,
            "candidate_id": self.candidate_id,
            "reason": self.reason,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_dict(doc: dict) -> "CommitMeta":
        return CommitMeta(
            author=doc["author"],
            reason=doc["reason"],
            timestamp=doc["timestamp"],
            candidate_id=doc.get("candidate_id"),
        )


@dataclass(frozen=True)
class Commit:
    id: str
    parent: Optional[str]
    state_hash: str
    meta: CommitMeta

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "meta": self.meta.as_dict(),
            "parent": self.parent,
            "state_hash": self.state_hash,
        }


def commit_id(parent: Optional[str], state_hash: str, meta: CommitMeta) -> str:
    core = {"meta": meta.as_dict(), "parent": parent, "state_hash": state_hash}
    raw = json.dumps(core, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Tag:
    label: str
    commit: str
    kind: str  # "good" | "quarantine"
    created_at: float

    def as_dict(self) -> dict:
        return {"commit": self.commit, "created_at": self.created_at, "kind": self.kind, "label": self.label}


class CommitStore:
    """In-memory commit store; the filesystem variant subclasses the hooks.

    `state_cache_limit` bounds how many distinct state payloads stay
    resident (LRU); long simulator runs set it since they only ever revert
    to recent bases.  The default (None) retains every state, which is the
    durable-store behavior.
    """

    def __init__(self, state_cache_limit: Optional[int] = None):
        self._commits: dict = {}
        self._states: "OrderedDict[str, bytes]" = OrderedDict()
        self._tags: dict = {}
        self._order: list = []  # commit ids in append order
        self._state_cache_limit = state_cache_limit

    # -- write hooks (overridden by FileCommitStore) --

    def _persist_commit(self, commit: Commit, state: KnowledgeState) -> None:
        pass

    def _persist_tag(self, tag: Tag) -> None:
        pass

    # -- operations --

    def commit_state(self, state: KnowledgeState, meta: CommitMeta,
                     parent: Optional[str] = None) -> Commit:
        """Append a commit; idempotent for identical (parent, state, meta)."""
        cid = commit_id(parent, state.content_hash, meta)
        existing = self._commits.get(cid)
        if existing is not None:
            return existing
        if parent is not None and parent not in self._commits:
            raise UnknownRef(f"parent commit {parent!r} not found")
        commit = Commit(id=cid, parent=parent, state_hash=state.content_hash, meta=meta)
        self._commits[cid] = commit
        self._states[state.content_hash] = state.canonical_bytes
        self._states.move_to_end(state.content_hash)
        if self._state_cache_limit is not None:
            while len(self._states) > self._state_cache_limit:
                self._states.popitem(last=False)
        self._order.append(cid)
        self._persist_commit(commit, state)
        return commit

    def get_commit(self, cid: str) -> Commit:
        try:
            return self._commits[cid]
        except KeyError:
            raise UnknownRef(f"unknown commit {cid!r}") from None

    def has_commit(self, cid: str) -> bool:
        return cid in self._commits

    def get_state(self, cid: str) -> KnowledgeState:
        commit = self.get_commit(cid)
        raw = self._states.get(commit.state_hash)
        if raw is None:
            raise StorageFailure(f"state bytes missing for commit {cid} (evicted or lost)")
        self._states.move_to_end(commit.state_hash)
        state = KnowledgeState.from_canonical_bytes(raw)
        if state.content_hash != commit.state_hash:
            raise StorageFailure(f"state hash mismatch for commit {cid}")
        return state

    def tag_commit(self, label: str, cid: str, kind: str, at: float) -> Tag:
        if kind not in TAG_KINDS:
            raise StorageFailure(f"unknown tag kind {kind!r}")
        if not _LABEL_RE.match(label):
            raise StorageFailure(f"invalid tag label {label!r}")
        if label in self._tags:
            raise DuplicateLabel(f"tag {label!r} already exists")
        self.get_commit(cid)
        tag = Tag(label=label, commit=cid, kind=kind, created_at=at)
        self._tags[label] = tag
        self._persist_tag(tag)
        return tag

    def resolve(self, ref: str) -> Commit:
        """Resolve a tag label or commit id to a commit."""
        tag = self._tags.get(ref)
        if tag is not None:
            return self.get_commit(tag.commit)
        return self.get_commit(ref)

    def revert_to(self, ref: str, meta: CommitMeta, parent: Optional[str]) -> Tuple[KnowledgeState, Commit]:
        """Return the exact state behind `ref` and record a new restoration commit."""
        target = self.resolve(ref)
        state = self.get_state(target.id)
        commit = self.commit_state(state, meta, parent=parent)
        return state, commit

    def get_tag(self, label: str) -> Tag:
        try:
            return self._tags[label]
        except KeyError:
            raise UnknownRef(f"unknown tag {label!r}") from None

    def tags(self) -> List[Tag]:
        return sorted(self._tags.values(), key=lambda t: t.label)

    def commits_in_order(self) -> List[Commit]:
        return [self._commits[c] for c in self._order]

    def chain(self, head: str) -> List[Commit]:
        """Parent chain from root to `head` inclusive."""
        out = []
        cur: Optional[str] = head
        while cur is not None:
            commit = self.get_commit(cur)
            out.append(commit)
            cur = commit.parent
        out.reverse()
        return out


class FileCommitStore(CommitStore):
    def __init__(self, root: Path):
        super().__init__()
        self.root = Path(root)
        self.commits_dir = self.root / "commits"
        self.tags_dir = self.root / "tags"
        self.commits_dir.mkdir(parents=True, exist_ok=True)
        self.tags_dir.mkdir(parents=True, exist_ok=True)
        self._load()

    def _load(self) -> None:
        docs = []
        for path in sorted(self.commits_dir.glob("*.json")):
            try:
                docs.append(json.loads(path.read_text(encoding="utf-8")))
            except (OSError, json.JSONDecodeError) as exc:
                raise StorageFailure(f"corrupt commit file {path}: {exc}") from exc
        # rebuild append order by walking parents from roots
        by_parent: dict = {}
        by_id = {}
        for doc in docs:
            by_id[doc["id"]] = doc
            by_parent.setdefault(doc["parent"], []).append(doc["id"])
        ordered: list = []
        frontier = sorted(by_parent.get(None, []))
        while frontier:
            nxt: list = []
            for cid in frontier:
                ordered.append(cid)
                nxt.extend(sorted(by_parent.get(cid, [])))
            frontier = nxt
        for cid in ordered:
            doc = by_id[cid]
            commit = Commit(
                id=doc["id"], parent=doc["parent"], state_hash=doc["state_hash"],
                meta=CommitMeta.from_dict(doc["meta"]),
            )
            state = KnowledgeState.from_dict(doc["state"])
            self._commits[commit.id] = commit
            self._states[commit.state_hash] = state.canonical_bytes
            self._order.append(commit.id)
        for path in sorted(self.tags_dir.glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            self._tags[doc["label"]] = Tag(
                label=doc["label"], commit=doc["commit"], kind=doc["kind"],
                created_at=doc["created_at"],
            )

    def _persist_commit(self, commit: Commit, state: KnowledgeState) -> None:
        doc = commit.as_dict()
        doc["state"] = state.canonical_dict()
        path = self.commits_dir / f"{commit.id}.json"
        if path.exists():
            return
        _atomic_write(path, json.dumps(doc, ensure_ascii=False, separators=(",", ":")))

    def _persist_tag(self, tag: Tag) -> None:
        path = self.tags_dir / f"{tag.label}.json"
        _atomic_write(path, json.dumps(tag.as_dict(), ensure_ascii=False, separators=(",", ":")))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageFailure(f"write failed for {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Typed diffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentDiff:
    inserts: tuple
    deletes: tuple
    modifies: tuple  # pairs (before, after)

    @property
    def empty(self) -> bool:
        return not (self.inserts or self.deletes or self.modifies)


@dataclass(frozen=True)
class TypedDiff:
    instructions: ComponentDiff
    preferences: ComponentDiff
    tools: ComponentDiff

    @property
    def empty(self) -> bool:
        return self.instructions.empty and self.preferences.empty and self.tools.empty

    def component(self, c: Component) -> ComponentDiff:
        return {Component.S: self.instructions, Component.U: self.preferences, Component.T: self.tools}[c]

    def as_delta(self) -> KnowledgeDelta:
        """Delta whose application to the `a` state yields the `b` state."""
        ops = []
        for comp in (Component.S, Component.U, Component.T):
            d = self.component(comp)
            ops.extend(DeltaOp.delete(comp, entry_key(e), snapshot=e) for e in d.deletes)
            ops.extend(DeltaOp.modify(comp, entry_key(after), after) for _, after in d.modifies)
            ops.extend(DeltaOp.insert(comp, e) for e in d.inserts)
        return KnowledgeDelta(ops=tuple(ops), proposed_by=ProposedBy.MANUAL)

    def as_payload(self) -> dict:
        def comp_doc(d: ComponentDiff) -> dict:
            return {
                "inserts": [e.canonical_dict() for e in d.inserts],
                "deletes": [e.canonical_dict() for e in d.deletes],
                "modifies": [
                    {"before": b.canonical_dict(), "after": a.canonical_dict()} for b, a in d.modifies
                ],
            }

        return {
            "instructions": comp_doc(self.instructions),
            "preferences": comp_doc(self.preferences),
            "tools": comp_doc(self.tools),
        }


def diff_states(a: KnowledgeState, b: KnowledgeState) -> TypedDiff:
    """Minimal per-id diff: only-in-b -> insert, only-in-a -> delete, changed -> modify."""
    parts = []
    for comp in (Component.S, Component.U, Component.T):
        va = {entry_key(e): e for e in a.component(comp)}
        vb = {entry_key(e): e for e in b.component(comp)}
        inserts = tuple(vb[k] for k in sorted(vb.keys() - va.keys()))
        deletes = tuple(va[k] for k in sorted(va.keys() - vb.keys()))
        modifies = tuple(
            (va[k], vb[k]) for k in sorted(va.keys() & vb.keys()) if va[k] != vb[k]
        )
        parts.append(ComponentDiff(inserts=inserts, deletes=deletes, modifies=modifies))
    return TypedDiff(instructions=parts[0], preferences=parts[1], tools=parts[2])


def diff_commits(store: CommitStore, a_ref: str, b_ref: str) -> TypedDiff:
    a = store.get_state(store.resolve(a_ref).id)
    b = store.get_state(store.resolve(b_ref).id)
    return diff_states(a, b)


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    kind: str
    at: float
    payload: dict

    def as_dict(self) -> dict:
        return {"at": self.at, "kind": self.kind, "payload": self.payload, "seq": self.seq}


class AuditLog:
    """Append-only event log with strictly increasing sequence numbers.

    retain_events=False keeps only the sequence counter (long simulator
    runs); reads then come back empty.
    """

    def __init__(self, retain_events: bool = True):
        self._events: list = []
        self._next_seq = 0
        self._retain = retain_events

    def _persist(self, event: AuditEvent) -> None:
        pass

    def append(self, kind: str, payload: dict, at: float) -> AuditEvent:
        if kind not in AUDIT_KINDS:
            raise StorageFailure(f"unknown audit kind {kind!r}")
        event = AuditEvent(seq=self._next_seq, kind=kind, at=at, payload=payload)
        self._next_seq += 1
        if self._retain:
            self._events.append(event)
        self._persist(event)
        return event

    def read(self, start: int = 0, end: Optional[int] = None) -> List[AuditEvent]:
        """Events with start <= seq < end, in seq order."""
        if end is None:
            end = self._next_seq
        return [e for e in self._events if start <= e.seq < end]

    def __len__(self) -> int:
        return len(self._events)

    @property
    def truncated_tail(self) -> Optional[str]:
        return None


class FileAuditLog(AuditLog):
    """One NDJSON file per UTC day; a torn final line is flagged, never fatal."""

    def __init__(self, directory: Path, fsync: bool = False):
        super().__init__()
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._truncated: Optional[str] = None
        self._load()

    def _load(self) -> None:
        self._torn_files: set = set()
        for path in sorted(self.directory.glob("audit-*.ndjson")):
            data = path.read_text(encoding="utf-8")
            if data and not data.endswith("\n"):
                self._torn_files.add(path)
            for line in data.split("\n"):
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError:
                    self._truncated = line
                    logger.warning("audit log %s: flagged truncated record (%d bytes)", path, len(line))
                    continue
                self._events.append(
                    AuditEvent(seq=doc["seq"], kind=doc["kind"], at=doc["at"], payload=doc["payload"])
                )
        self._events.sort(key=lambda e: e.seq)
        self._next_seq = self._events[-1].seq + 1 if self._events else 0

    @property
    def truncated_tail(self) -> Optional[str]:
        return self._truncated

    def _persist(self, event: AuditEvent) -> None:
        day = _dt.datetime.fromtimestamp(event.at, tz=_dt.timezone.utc).strftime("%Y%m%d")
        path = self.directory / f"audit-{day}.ndjson"
        line = json.dumps(event.as_dict(), ensure_ascii=False, separators=(",", ":"))
        if path in self._torn_files:
            # terminate a torn record from a previous crash before appending
            line = "\n" + line
            self._torn_files.discard(path)
        try:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
        except OSError as exc:
            raise StorageFailure(f"audit append failed: {exc}") from exc


def load_audit_events(directory: Path) -> Tuple[List[AuditEvent], Optional[str]]:
    """Read all events from an audit directory without opening it for writes."""
    log = FileAuditLog(directory)
    return log.read(), log.truncated_tail
