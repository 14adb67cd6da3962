"""Commit store, tags, typed diffs, and the audit log."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilws_forge.errors import DuplicateLabel, StorageFailure, UnknownRef
from ilws_forge.knowledge import (
    InstructionEntry,
    KnowledgeState,
    Origin,
    Section,
    apply_delta,
)
from ilws_forge.persistence import (
    AuditLog,
    CommitMeta,
    CommitStore,
    FileAuditLog,
    FileCommitStore,
    commit_id,
    diff_commits,
    diff_states,
    load_audit_events,
)

from conftest import make_instruction


def meta(reason="manual", at=1.0, author="system", candidate=None) -> CommitMeta:
    return CommitMeta(author=author, reason=reason, timestamp=at, candidate_id=candidate)


def state_with(*texts) -> KnowledgeState:
    entries = tuple(
        make_instruction(f"i{k}", text) for k, text in enumerate(texts, start=1)
    )
    return KnowledgeState(instructions=entries)


class TestCommitStore:
    def test_identical_commit_is_idempotent(self):
        store = CommitStore()
        state = state_with("alpha")
        a = store.commit_state(state, meta())
        b = store.commit_state(state, meta())
        assert a.id == b.id
        assert len(store.commits_in_order()) == 1

    def test_commit_id_deterministic(self):
        state = state_with("alpha")
        m = meta()
        assert commit_id(None, state.content_hash, m) == commit_id(None, state.content_hash, m)

    def test_rollback_state_hash_equals_ancestor(self):
        store = CommitStore()
        base = state_with("alpha")
        root = store.commit_state(base, meta())
        changed = state_with("alpha", "beta")
        head = store.commit_state(changed, meta(at=2.0), parent=root.id)
        restored, commit = store.revert_to(root.id, meta(reason="rollback", at=3.0), parent=head.id)
        assert commit.state_hash == root.state_hash
        assert restored.canonical_bytes == base.canonical_bytes

    def test_long_chain_replay(self):
        store = CommitStore()
        state = KnowledgeState()
        parent = None
        hashes = []
        for k in range(200):
            state = apply_delta(state, _insert_delta(f"e{k}", f"text number {k}"))
            commit = store.commit_state(state, meta(at=float(k)), parent=parent)
            parent = commit.id
            hashes.append(state.content_hash)
        chain = store.chain(parent)
        assert len(chain) == 200
        assert [c.state_hash for c in chain] == hashes
        for commit, expected in zip(chain, hashes):
            assert store.get_state(commit.id).content_hash == expected

    def test_unknown_parent_rejected(self):
        store = CommitStore()
        with pytest.raises(UnknownRef):
            store.commit_state(KnowledgeState(), meta(), parent="nope")


def _insert_delta(ident, text):
    from ilws_forge.knowledge import Component, DeltaOp, KnowledgeDelta

    entry = InstructionEntry(id=ident, section=Section.GLOBAL, text=text,
                             created_at=0.0, origin=Origin.MANUAL)
    return KnowledgeDelta(ops=(DeltaOp.insert(Component.S, entry),))


class TestTags:
    def test_tag_then_revert_round_trip(self):
        store = CommitStore()
        state = state_with("alpha")
        commit = store.commit_state(state, meta())
        store.tag_commit("good-0", commit.id, "good", at=1.0)
        restored, _ = store.revert_to("good-0", meta(reason="rollback", at=2.0), parent=commit.id)
        assert restored.content_hash == state.content_hash

    def test_duplicate_label_rejected(self):
        store = CommitStore()
        commit = store.commit_state(KnowledgeState(), meta())
        store.tag_commit("good-0", commit.id, "good", at=1.0)
        with pytest.raises(DuplicateLabel):
            store.tag_commit("good-0", commit.id, "good", at=2.0)

    def test_unknown_ref(self):
        store = CommitStore()
        with pytest.raises(UnknownRef):
            store.resolve("missing-label")

    def test_invalid_tag_kind(self):
        store = CommitStore()
        commit = store.commit_state(KnowledgeState(), meta())
        with pytest.raises(StorageFailure):
            store.tag_commit("x", commit.id, "verygood", at=1.0)


class TestFileStore:
    def test_round_trip_through_disk(self, tmp_path):
        store = FileCommitStore(tmp_path)
        base = state_with("alpha")
        root = store.commit_state(base, meta())
        head = store.commit_state(state_with("alpha", "beta"), meta(at=2.0), parent=root.id)
        store.tag_commit("good-0", head.id, "good", at=3.0)

        reopened = FileCommitStore(tmp_path)
        assert [c.id for c in reopened.commits_in_order()] == [root.id, head.id]
        assert reopened.get_state(root.id).canonical_bytes == base.canonical_bytes
        assert reopened.get_tag("good-0").commit == head.id

    def test_commit_files_are_content_addressed(self, tmp_path):
        store = FileCommitStore(tmp_path)
        commit = store.commit_state(state_with("alpha"), meta())
        path = tmp_path / "commits" / f"{commit.id}.json"
        assert path.exists()
        doc = json.loads(path.read_text())
        assert doc["id"] == commit.id and doc["state"]["schema_version"] == "1.0.0"


# ---------------------------------------------------------------------------
# Typed diffs
# ---------------------------------------------------------------------------


class TestDiff:
    def test_identity_diff_empty(self):
        state = state_with("alpha", "beta")
        assert diff_states(state, state).empty

    def test_single_insert_diff(self):
        a = state_with("alpha")
        b = apply_delta(a, _insert_delta("iz", "fresh rule"))
        diff = diff_states(a, b)
        assert len(diff.instructions.inserts) == 1
        assert diff.instructions.inserts[0].id == "iz"
        assert not diff.instructions.deletes and not diff.instructions.modifies

    def test_diff_commits_through_store(self):
        store = CommitStore()
        a_state = state_with("alpha")
        a = store.commit_state(a_state, meta())
        b = store.commit_state(apply_delta(a_state, _insert_delta("iz", "zz")), meta(at=2.0), parent=a.id)
        diff = diff_commits(store, a.id, b.id)
        assert len(diff.instructions.inserts) == 1

    @given(data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_diff_as_delta_reconstructs_target(self, data):
        texts = st.text(alphabet="abcdef ", min_size=1, max_size=12).filter(lambda s: s.strip())
        ids = [f"e{k}" for k in range(8)]

        def any_state():
            chosen = data.draw(st.lists(st.sampled_from(ids), unique=True, max_size=6))
            return KnowledgeState(instructions=tuple(
                InstructionEntry(id=i, section=Section.GLOBAL, text=data.draw(texts),
                                 created_at=0.0, origin=Origin.MANUAL)
                for i in chosen
            ))

        a, b = any_state(), any_state()
        diff = diff_states(a, b)
        rebuilt = apply_delta(a, diff.as_delta())
        assert rebuilt.canonical_bytes == b.canonical_bytes


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


class TestAuditLog:
    def test_append_then_read_last(self):
        log = AuditLog()
        event = log.append("session", {"id": "s1"}, at=1.0)
        assert log.read()[-1] == event

    def test_seq_strictly_increasing(self):
        log = AuditLog()
        for k in range(10):
            log.append("session", {"k": k}, at=float(k))
        seqs = [e.seq for e in log.read()]
        assert seqs == sorted(set(seqs)) == list(range(10))

    def test_unknown_kind_rejected(self):
        with pytest.raises(StorageFailure):
            AuditLog().append("surprise", {}, at=0.0)

    def test_file_log_round_trip(self, tmp_path):
        log = FileAuditLog(tmp_path)
        log.append("session", {"id": "s1"}, at=1.0)
        log.append("gate", {"p": 0.5}, at=90000.0)  # next UTC day
        events, truncated = load_audit_events(tmp_path)
        assert [e.kind for e in events] == ["session", "gate"]
        assert truncated is None
        assert len(list(tmp_path.glob("audit-*.ndjson"))) == 2

    def test_truncated_tail_flagged_and_prior_readable(self, tmp_path):
        log = FileAuditLog(tmp_path)
        log.append("session", {"id": "s1"}, at=1.0)
        log.append("session", {"id": "s2"}, at=2.0)
        path = next(tmp_path.glob("audit-*.ndjson"))
        raw = path.read_bytes()
        path.write_bytes(raw[:-25])  # torn mid-record, no trailing newline
        events, truncated = load_audit_events(tmp_path)
        assert [e.payload["id"] for e in events] == ["s1"]
        assert truncated is not None

    def test_append_after_torn_tail_stays_readable(self, tmp_path):
        log = FileAuditLog(tmp_path)
        log.append("session", {"id": "s1"}, at=1.0)
        log.append("session", {"id": "s2"}, at=2.0)
        path = next(tmp_path.glob("audit-*.ndjson"))
        path.write_bytes(path.read_bytes()[:-25])
        reopened = FileAuditLog(tmp_path)
        reopened.append("session", {"id": "s3"}, at=3.0)
        events, truncated = load_audit_events(tmp_path)
        assert [e.payload["id"] for e in events] == ["s1", "s3"]

    def test_resume_continues_sequence(self, tmp_path):
        log = FileAuditLog(tmp_path)
        log.append("session", {"id": "s1"}, at=1.0)
        reopened = FileAuditLog(tmp_path)
        event = reopened.append("session", {"id": "s2"}, at=2.0)
        assert event.seq == 1
