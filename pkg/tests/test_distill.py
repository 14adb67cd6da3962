"""Budget tracking, the distillation trigger, and dataset export."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilws_forge.distill import (
    BudgetTracker,
    compile_dataset,
    export_dataset,
    manifest_path,
    rating_weight,
    read_dataset,
)
from ilws_forge.errors import EmptyDataset, InvalidRating, UnmatchedDebit, UnresolvableCommit
from ilws_forge.knowledge import KnowledgeState
from ilws_forge.persistence import CommitMeta, CommitStore
from ilws_forge.reflection import SessionRecord

from conftest import LoopHarness


class TestWeights:
    def test_exact_affine_mapping(self):
        assert rating_weight(1) == 0.0
        assert rating_weight(2) == 0.25
        assert rating_weight(3) == 0.5
        assert rating_weight(4) == 0.75
        assert rating_weight(5) == 1.0

    def test_rating_domain(self):
        with pytest.raises(InvalidRating):
            rating_weight(0)


class TestBudget:
    def test_credit_then_veto_debit_restores(self):
        budget = BudgetTracker(threshold=100)
        budget.credit("cand-1", 42)
        assert budget.value == 42
        budget.debit("cand-1")
        assert budget.value == 0

    def test_unmatched_debit(self):
        with pytest.raises(UnmatchedDebit):
            BudgetTracker(threshold=10).debit("ghost")

    def test_double_debit(self):
        budget = BudgetTracker(threshold=10)
        budget.credit("cand-1", 5)
        budget.debit("cand-1")
        with pytest.raises(UnmatchedDebit):
            budget.debit("cand-1")

    def test_threshold_closed_inequality(self):
        budget = BudgetTracker(threshold=10)
        budget.credit("a", 9)
        assert not budget.should_distill()
        budget.credit("b", 1)
        assert budget.should_distill()  # value == M triggers

    @given(credits=st.lists(st.integers(1, 40), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_trigger_flips_exactly_at_crossing(self, credits):
        threshold = 50
        budget = BudgetTracker(threshold=threshold)
        running = 0
        fired = False
        for k, amount in enumerate(credits):
            budget.credit(f"cand-{k}", amount)
            running += amount
            if not fired:
                assert budget.should_distill() == (running >= threshold)
                if running >= threshold:
                    fired = True
        assert budget.value == running
        assert budget.trajectory[-1] == running

    def test_never_negative(self):
        budget = BudgetTracker(threshold=10)
        budget.credit("a", 3)
        budget.debit("a")
        assert budget.value == 0
        assert all(v >= 0 for v in budget.trajectory)


def _store_with_commit():
    store = CommitStore()
    commit = store.commit_state(KnowledgeState(), CommitMeta(author="system", reason="manual", timestamp=0.0))
    return store, commit


def _session(k, commit_id, rating=4, created_at=None):
    at = float(k) if created_at is None else created_at
    return SessionRecord(
        id=f"sess-{k:04d}", input=f"question {k}", output=f"answer {k}",
        state_commit=commit_id, created_at=at, rating=rating, rated_at=at + 0.5,
    )


class TestCompile:
    def test_cutoff_filters_by_commit_timestamp(self):
        store, early = _store_with_commit()
        cutoff_commit = store.commit_state(
            KnowledgeState(), CommitMeta(author="system", reason="manual", timestamp=2.0),
            parent=early.id,
        )
        sessions = [_session(k, early.id) for k in range(10)]  # created_at 0..9
        rows = compile_dataset(sessions, cutoff_commit.id, store)
        assert len(rows) == 7  # sessions 3..9 are strictly after t=2.0
        rows_all = compile_dataset(sessions, None, store)
        assert len(rows_all) == 10

    def test_unresolvable_commit(self):
        store, commit = _store_with_commit()
        bad = [_session(0, "no-such-commit")]
        with pytest.raises(UnresolvableCommit):
            compile_dataset(bad, None, store)
        with pytest.raises(UnresolvableCommit):
            compile_dataset([_session(0, commit.id)], "no-such-commit", store)

    def test_unrated_sessions_skipped_and_rows_ordered(self):
        store, commit = _store_with_commit()
        sessions = [
            _session(3, commit.id, rating=5),
            SessionRecord(id="sess-x", input="q", output="a", state_commit=commit.id,
                          created_at=1.0),  # unrated
            _session(1, commit.id, rating=1),
        ]
        rows = compile_dataset(sessions, None, store)
        assert [r.session_id for r in rows] == ["sess-0001", "sess-0003"]
        assert rows[0].weight == 0.0  # r=1 kept with weight zero, not filtered


class TestExport:
    def test_round_trip_lossless(self, tmp_path):
        store, commit = _store_with_commit()
        rows = compile_dataset([_session(k, commit.id, rating=1 + k % 5) for k in range(8)], None, store)
        path = tmp_path / "data.ndjson"
        manifest = export_dataset(rows, path, created_at=99.0, config_snapshot={"alpha": 0.05})
        again = read_dataset(path)
        assert again == rows
        assert manifest.row_count == 8
        assert manifest.weight_sum == pytest.approx(sum((r.rating - 1) / 4 for r in rows))

    def test_manifest_sidecar_contents(self, tmp_path):
        store, commit = _store_with_commit()
        rows = compile_dataset([_session(0, commit.id, rating=5)], None, store)
        path = tmp_path / "data.ndjson"
        export_dataset(rows, path, created_at=5.0, config_snapshot={"n_win": 30})
        doc = json.loads(manifest_path(path).read_text())
        assert doc["row_count"] == 1
        assert doc["weight_sum"] == 1.0
        assert doc["state_commits"] == [commit.id]
        assert doc["config_snapshot"] == {"n_win": 30}
        assert "cross-entropy" in doc["loss"]

    def test_empty_export_rejected(self, tmp_path):
        with pytest.raises(EmptyDataset):
            export_dataset([], tmp_path / "x.ndjson", created_at=0.0, config_snapshot={})


class TestLoopTrigger:
    def test_distill_fires_once_and_resets(self, tmp_path):
        h = LoopHarness(review_window=0.5, budget_threshold=5, export_dir=tmp_path)
        h.warm_up([2, 3, 4, 2, 3])
        h.session("correction: one two three four five", 3)  # size 5 on accept
        h.fill_window([4, 5, 4, 5, 5])
        assert h.loop.budget.value == 5
        assert len(h.loop.distill_events) == 0  # veto window still open
        h.session("routine resolves window", 3)
        assert len(h.loop.distill_events) == 1
        assert h.loop.budget.value == 0
        event = h.loop.distill_events[0]
        assert event.budget_before == 5
        dataset_files = list(tmp_path.glob("dataset-*.ndjson"))
        assert len(dataset_files) == 1
        rows = read_dataset(dataset_files[0])
        assert len(rows) == event.row_count
        distill_audits = [e for e in h.loop.audit.read() if e.kind == "distill"]
        assert len(distill_audits) == 1

    def test_vetoed_credit_never_triggers(self, tmp_path):
        h = LoopHarness(review_window=10.0, budget_threshold=5, export_dir=tmp_path)
        h.warm_up([2, 3, 4, 2, 3])
        h.session("correction: one two three four five", 3)
        h.fill_window([4, 5, 4, 5, 5])
        candidate = h.loop.candidates["cand-000001"]
        assert h.loop.budget.should_distill()
        h.loop.veto(candidate.id, at=h.t + 1)  # inside the window
        assert h.loop.budget.value == 0
        for _ in range(4):
            h.session("routine after veto", 3)
        assert h.loop.distill_events == []

    def test_second_crossing_fires_again(self, tmp_path):
        h = LoopHarness(review_window=0.5, budget_threshold=5, export_dir=tmp_path)
        h.warm_up([2, 3, 4, 2, 3])
        for round_no in range(2):
            h.session("correction: one two three four five", 3)
            h.fill_window([4, 5, 4, 5, 5])
            h.session("routine resolve", 3)
            # flush the buffer back toward base so the next window is clean
            for _ in range(5):
                h.session("routine washout", 3)
        assert len(h.loop.distill_events) == 2
        first, second = h.loop.distill_events
        assert first.row_count > 0 and second.row_count > 0
