"""The control loop: provisional deploys, gating, repair, rollback, veto, budget.

One instance owns all mutable state (serving commit, rating buffer, the
single candidate slot, budget, drift monitors).  Drivers push timestamped
events into it:

* ``create_session`` / ``rate_session`` -- the session path
* ``veto`` / ``manual_revert``          -- governance actions

Everything else (gate decisions, repairs, rollbacks, distillation) is
derived deterministically from those inputs, which is what makes replay
reproduce commits, decisions, and budget values hash-exactly.  Callers
serialize access (the HTTP service funnels mutations through one lock; the
simulator is single-threaded), matching the single-writer model.

Candidate slot policy: a candidate occupies the slot from open until its
terminal resolution, including the accepted-but-vetoable review window.
Reflections proposed while the slot is busy are dropped and counted, and
the distillation trigger is checked only once no candidate is unresolved,
so a veto can always restore the candidate's exact base state and a vetoed
credit can never have fired the trigger.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .backbone import BackboneAdapter
from .config import ForgeConfig
from .distill import BudgetTracker, build_manifest, compile_dataset, export_dataset
from .errors import (
    CandidateInFlight,
    EngineUnavailable,
    ForgeError,
    InvalidRating,
    InvariantViolation,
    NotAccepted,
    NotRepairable,
    UnparseableOutput,
    VetoWindowClosed,
    WarmupIncomplete,
)
from .gate import Candidate, GateDecision, Lifecycle, RatingBuffer, decide
from .knowledge import (
    Component,
    DeltaKind,
    DeltaOp,
    KnowledgeDelta,
    KnowledgeState,
    ProposedBy,
    ToolStatus,
    apply_delta,
    compose_prompt,
    delta_size,
    entry_text,
)
from .persistence import AuditLog, CommitMeta, CommitStore, diff_states
from .reflection import (
    ReflectionContext,
    ReflectionEngine,
    SessionRecord,
    parse_self_mod_calls,
)
from .stats import DriftMonitorState, DriftParams, cusum_update, ewma_update
from .tools import StubRunner, ToolTestRunner, scan_tool, usage_rubric

logger = logging.getLogger(__name__)


def ci95(values: Sequence[float]) -> Optional[list]:
    """Normal-approximation 95% confidence interval for a window mean."""
    n = len(values)
    if n < 2:
        return None
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = 1.96 * math.sqrt(var / n)
    return [mean - half, mean + half]


@dataclass
class DistillEvent:
    seq: int
    at: float
    row_count: int
    weight_sum: float
    budget_before: int
    dataset_path: Optional[str]


class ControlLoop:
    def __init__(
        self,
        config: ForgeConfig,
        store: CommitStore,
        audit: AuditLog,
        reflection_engine: ReflectionEngine,
        backbone: BackboneAdapter,
        tool_runner: Optional[ToolTestRunner] = None,
        initial_state: Optional[KnowledgeState] = None,
        session_retention: Optional[int] = None,
    ):
        self.config = config
        self.store = store
        self.audit = audit
        self.reflection_engine = reflection_engine
        self.backbone = backbone
        self.tool_runner = tool_runner if tool_runner is not None else StubRunner()
        # bounded session memory is a simulator concession; the service keeps
        # everything so distillation sees the full history
        self.session_retention = session_retention
        self._prompt_cache: Optional[tuple] = None  # (state_hash, ComposedPrompt)

        state = initial_state if initial_state is not None else KnowledgeState()
        # root commit timestamp is fixed so replays regenerate the same id
        root = store.commit_state(state, CommitMeta(author="system", reason="manual", timestamp=0.0))
        self.serving_commit: str = root.id
        self.serving_state: KnowledgeState = state

        self.buffer = RatingBuffer(config.gate.n_win)
        self.budget = BudgetTracker(config.budget_threshold)
        self.current: Optional[Candidate] = None
        self.candidates: Dict[str, Candidate] = {}
        self.sessions: Dict[str, SessionRecord] = {}
        self._session_order: deque = deque()
        self.decisions: List[GateDecision] = []
        self.veto_flags: List[dict] = []
        self.distill_events: List[DistillEvent] = []
        self.last_export_commit: Optional[str] = None
        self._exported_sessions: set = set()

        self.drift_params: Optional[DriftParams] = None
        self._ewma: Optional[DriftMonitorState] = None
        self._cusum: Optional[DriftMonitorState] = None

        self._session_seq = 0
        self._candidate_seq = 0
        self._entry_seq = 0
        self._good_seq = 0
        self._quarantine_seq = 0
        self._distill_seq = 0

        self.counters = {
            "sessions": 0,
            "ratings": 0,
            "accepted": 0,
            "rolled_back": 0,
            "vetoed": 0,
            "repairs": 0,
            "dropped_reflections": 0,
            "reflection_failures": 0,
            "prompt_over_budget": 0,
            "ewma_alarms": 0,
            "cusum_alarms": 0,
        }

    # ------------------------------------------------------------------
    # id factories (deterministic counters so replays regenerate identically)
    # ------------------------------------------------------------------

    def _next_session_id(self) -> str:
        self._session_seq += 1
        return f"sess-{self._session_seq:08d}"

    def _next_candidate_id(self) -> str:
        self._candidate_seq += 1
        return f"cand-{self._candidate_seq:06d}"

    def _next_entry_id(self) -> str:
        self._entry_seq += 1
        return f"ins-{self._entry_seq:06d}"

    # ------------------------------------------------------------------
    # session path
    # ------------------------------------------------------------------

    def create_session(self, input_text: str, at: float,
                       ephemeral_context: Optional[str] = None,
                       output_override: Optional[str] = None) -> SessionRecord:
        """Compose the prompt from the serving state, call the backbone, store
        the session.  Ephemeral context reaches the backbone only; it is never
        persisted into the knowledge state."""
        if not input_text or not input_text.strip():
            raise InvariantViolation("session input must be non-empty")
        self._resolve_deadlines(at)
        state_hash = self.serving_state.content_hash
        if self._prompt_cache is not None and self._prompt_cache[0] == state_hash:
            prompt = self._prompt_cache[1]
        else:
            prompt = compose_prompt(self.serving_state, self.config.prompt_budget)
            self._prompt_cache = (state_hash, prompt)
        if prompt.over_budget:
            self.counters["prompt_over_budget"] += 1
        if output_override is not None:
            output = output_override
        else:
            try:
                output = self.backbone.generate(
                    input_text, prompt, self.serving_state.content_hash, ephemeral_context
                )
            except ForgeError as exc:
                self.audit.append("session", {
                    "phase": "backbone_error",
                    "error": str(exc),
                    "input": input_text,
                }, at)
                raise
        session = SessionRecord(
            id=self._next_session_id(),
            input=input_text,
            output=output,
            state_commit=self.serving_commit,
            created_at=at,
            transcript=(("user", input_text), ("assistant", output)),
        )
        self.sessions[session.id] = session
        self._session_order.append(session.id)
        if self.session_retention is not None:
            while len(self._session_order) > self.session_retention:
                dropped = self._session_order.popleft()
                self.sessions.pop(dropped, None)
        self.counters["sessions"] += 1
        self.audit.append("session", {
            "phase": "created",
            "id": session.id,
            "input": input_text,
            "output": output,
            "state_commit": session.state_commit,
            "prompt_tokens": prompt.token_count,
            "prompt_over_budget": prompt.over_budget,
            "had_ephemeral_context": ephemeral_context is not None,
        }, at)
        return session

    def rate_session(self, session_id: str, rating: int, at: float,
                     submitted_by: Optional[str] = None) -> dict:
        """Record the rating and advance the loop (Algorithm-1 step for one session)."""
        session = self.sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        if session.rated:
            raise InvariantViolation(f"session {session_id} already rated")
        if rating not in (1, 2, 3, 4, 5):
            raise InvalidRating(f"rating {rating!r} outside 1..5")

        self._resolve_deadlines(at)

        session = replace(session, rating=rating, rated_at=at, rated_by=submitted_by)
        self.sessions[session_id] = session
        self.counters["ratings"] += 1
        self.audit.append("session", {
            "phase": "rated",
            "session_id": session_id,
            "rating": rating,
            "rated_by": submitted_by,
            "state_commit": session.state_commit,
        }, at)

        was_warmup = not self.buffer.full
        self.buffer.append(rating)
        if was_warmup and self.buffer.full:
            self._calibrate_drift()
        self._update_drift(rating, at)

        progress: dict = {"session_id": session_id, "rating": rating}

        if not self.buffer.full:
            progress["status"] = "warm-up"
            progress["buffer_fill"] = f"{len(self.buffer)}/{self.buffer.n_win}"
            return progress

        candidate = self.current
        if candidate is not None and candidate.in_flight:
            if session.state_commit == candidate.serving_commit:
                candidate.new_window.append(rating)
                if candidate.window_fill() >= self.config.gate.n_win:
                    self._evaluate_gate(candidate, at)
                    progress["status"] = "evaluated"
                    progress["candidate"] = candidate.id
                    progress["lifecycle"] = candidate.lifecycle.value
                else:
                    progress["status"] = "collecting"
                    progress["candidate"] = candidate.id
                    progress["window_fill"] = f"{candidate.window_fill()}/{self.config.gate.n_win}"
                    return progress
            else:
                # rating for a session served by an older state; buffer only
                progress["status"] = "collecting"
                progress["candidate"] = candidate.id
                progress["stale_state"] = True
                return progress

        if self.current is None:
            opened = self._reflect_and_maybe_open(session, at)
            if opened is not None:
                progress.setdefault("status", "candidate_opened")
                progress["next_candidate" if "candidate" in progress else "candidate"] = opened.id
            else:
                progress.setdefault("status", "idle")
        elif self.current.blocking and not self.current.in_flight:
            self.counters["dropped_reflections"] += 1
            logger.debug("reflection dropped: candidate %s inside its veto window", self.current.id)
            progress.setdefault("status", "veto_window_open")
            progress["candidate"] = self.current.id
        return progress

    # ------------------------------------------------------------------
    # reflection
    # ------------------------------------------------------------------

    def _reflection_context(self, session: SessionRecord, mode: str = "propose",
                            failed: Optional[Candidate] = None) -> ReflectionContext:
        return ReflectionContext(
            transcript=session.transcript,
            tool_log=session.tool_log,
            rating_window=self.buffer.snapshot(),
            veto_flags=tuple(self.veto_flags),
            mode=mode,
            failed_delta=failed.delta if failed else None,
            failed_decision=failed.decision.as_payload() if failed and failed.decision else None,
        )

    def _reflect_and_maybe_open(self, session: SessionRecord, at: float) -> Optional[Candidate]:
        try:
            output = self.reflection_engine.reflect(self._reflection_context(session))
        except UnparseableOutput as exc:
            self.counters["reflection_failures"] += 1
            self.audit.append("reflection", {
                "outcome": "unparseable",
                "error": str(exc),
                "raw_quarantined": repr(exc.raw)[:2000],
                "session_id": session.id,
            }, at)
            return None
        except EngineUnavailable as exc:
            self.counters["reflection_failures"] += 1
            self.audit.append("reflection", {
                "outcome": "engine_unavailable",
                "error": str(exc),
                "session_id": session.id,
            }, at)
            return None
        if not output.calls:
            self.audit.append("reflection", {
                "outcome": "no_op",
                "session_id": session.id,
                "rationale": dict(output.rationale),
            }, at)
            return None
        try:
            delta = parse_self_mod_calls(
                output.calls, self.serving_state,
                id_factory=self._next_entry_id, now=at, rationale=dict(output.rationale),
            )
            candidate = self._open_candidate(delta, at, session.id, dict(output.rationale))
        except ForgeError as exc:
            self.counters["reflection_failures"] += 1
            self.audit.append("reflection", {
                "outcome": "rejected",
                "error": str(exc),
                "session_id": session.id,
            }, at)
            return None
        return candidate

    # ------------------------------------------------------------------
    # tool gate inside a delta
    # ------------------------------------------------------------------

    def _prepare_delta(self, delta: KnowledgeDelta, at: float) -> KnowledgeDelta:
        """Run the tool policy/test pipeline over tool inserts.

        Passing tools become active and gain a usage-rubric instruction right
        after their op; failing or violating tools stay quarantined.  The
        delta is otherwise unchanged.
        """
        ops: List[DeltaOp] = []
        for op in delta.ops:
            if op.component is not Component.T or op.kind is not DeltaKind.INSERT:
                ops.append(op)
                continue
            tool = op.payload
            if tool.status is ToolStatus.DEPRECATED:
                ops.append(op)
                continue
            report = scan_tool(tool.code)
            if not report.passed:
                quarantined = replace(tool, status=ToolStatus.QUARANTINED)
                ops.append(DeltaOp.insert(Component.T, quarantined))
                self.audit.append("tool", {
                    "name": tool.name,
                    "outcome": "policy_failed",
                    "report": report.as_dict(),
                }, at)
                continue
            workdir = (self.config.sandbox_root or Path("sandbox")) / tool.sandbox_dir
            result = self.tool_runner.run(tool, workdir, timeout_s=10.0, output_cap=65536)
            if result.passed:
                active = replace(tool, status=ToolStatus.ACTIVE)
                ops.append(DeltaOp.insert(Component.T, active))
                rubric = usage_rubric(active, rubric_id=self._next_entry_id(), now=at)
                ops.append(DeltaOp.insert(Component.S, rubric))
                self.audit.append("tool", {
                    "name": tool.name,
                    "outcome": "activated",
                    "rubric_id": rubric.id,
                    "runner_output": result.output[:2000],
                }, at)
            else:
                quarantined = replace(tool, status=ToolStatus.QUARANTINED)
                ops.append(DeltaOp.insert(Component.T, quarantined))
                if self.config.sandbox_root is not None:
                    try:
                        workdir.mkdir(parents=True, exist_ok=True)
                        (workdir / "failure.diff").write_text(result.output, encoding="utf-8")
                    except OSError:
                        logger.warning("could not retain failure diff for tool %r", tool.name)
                self.audit.append("tool", {
                    "name": tool.name,
                    "outcome": "quarantined",
                    "failure_diff": result.output[:2000],
                }, at)
        return KnowledgeDelta(ops=tuple(ops), rationale=delta.rationale, proposed_by=delta.proposed_by)

    # ------------------------------------------------------------------
    # candidate lifecycle
    # ------------------------------------------------------------------

    def _open_candidate(self, delta: KnowledgeDelta, at: float, session_id: str,
                        rationale: dict) -> Candidate:
        if not self.buffer.full:
            raise WarmupIncomplete("rating buffer has not filled yet")
        if self.current is not None:
            raise CandidateInFlight(f"candidate {self.current.id} is unresolved")
        effective = self._prepare_delta(delta, at)
        new_state = apply_delta(self.serving_state, effective)
        base_commit = self.serving_commit
        cid = self._next_candidate_id()
        commit = self.store.commit_state(
            new_state,
            CommitMeta(author="system", reason="provisional", timestamp=at, candidate_id=cid),
            parent=base_commit,
        )
        candidate = Candidate(
            id=cid,
            delta=effective,
            base_commit=base_commit,
            provisional_commit=commit.id,
            prev_window=self.buffer.snapshot(),
            opened_at=at,
            size=delta_size(effective),
        )
        self.candidates[cid] = candidate
        self.current = candidate
        self.serving_commit = commit.id
        self.serving_state = new_state
        self.audit.append("reflection", {
            "outcome": "candidate_opened",
            "candidate_id": cid,
            "session_id": session_id,
            "delta": effective.canonical_dict(),
            "rationale": rationale,
            "base_commit": base_commit,
            "provisional_commit": commit.id,
        }, at)
        return candidate

    def _evaluate_gate(self, candidate: Candidate, at: float) -> GateDecision:
        decision = decide(
            candidate.prev_window, tuple(candidate.new_window),
            self.config.gate, at, candidate_id=candidate.id,
        )
        candidate.decision = decision
        self.decisions.append(decision)
        payload = decision.as_payload()
        payload["prev_window"] = list(candidate.prev_window)
        payload["new_window"] = list(candidate.new_window)
        payload["repair_count"] = candidate.repair_count

        if decision.accepted:
            candidate.transition(Lifecycle.ACCEPTED)
            candidate.veto_deadline = at + self.config.gate.review_window
            label = f"good-{self._good_seq:06d}"
            self._good_seq += 1
            self.store.tag_commit(label, candidate.serving_commit, "good", at)
            budget_after = self.budget.credit(candidate.id, candidate.size)
            self.counters["accepted"] += 1
            payload.update({
                "tag": label,
                "veto_deadline": candidate.veto_deadline,
                "budget_credit": candidate.size,
                "budget_after": budget_after,
            })
            self.audit.append("gate", payload, at)
        elif candidate.repair_count == 0:
            self.audit.append("gate", payload, at)
            candidate.transition(Lifecycle.REPAIR_PENDING)
            self._attempt_repair(candidate, at)
        else:
            self.audit.append("gate", payload, at)
            self._rollback(candidate, "second_failure", at)
        return decision

    def _attempt_repair(self, candidate: Candidate, at: float) -> None:
        """One typed repair, re-evaluated under the same gate; anything short
        of a usable repair delta rolls the candidate back."""
        if candidate.lifecycle is not Lifecycle.REPAIR_PENDING or candidate.repair_count != 0:
            raise NotRepairable(
                f"candidate {candidate.id} is {candidate.lifecycle.value} "
                f"with repair_count={candidate.repair_count}"
            )
        session = self.sessions[self._session_order[-1]]
        try:
            output = self.reflection_engine.reflect(
                self._reflection_context(session, mode="repair", failed=candidate)
            )
        except (EngineUnavailable, UnparseableOutput) as exc:
            self.audit.append("repair", {
                "candidate_id": candidate.id,
                "outcome": "engine_failed",
                "error": str(exc),
            }, at)
            self._rollback(candidate, "repair_unavailable", at)
            return
        if not output.calls:
            self.audit.append("repair", {
                "candidate_id": candidate.id,
                "outcome": "no_repair_offered",
            }, at)
            self._rollback(candidate, "repair_unavailable", at)
            return
        base_state = self.store.get_state(candidate.base_commit)
        try:
            repair_delta = parse_self_mod_calls(
                output.calls, base_state,
                id_factory=self._next_entry_id, now=at,
                proposed_by=ProposedBy.REPAIR, rationale=dict(output.rationale),
            )
            repair_delta = self._prepare_delta(repair_delta, at)
            repaired_state = apply_delta(base_state, repair_delta)
        except ForgeError as exc:
            self.audit.append("repair", {
                "candidate_id": candidate.id,
                "outcome": "repair_invalid",
                "error": str(exc),
            }, at)
            self._rollback(candidate, "repair_unavailable", at)
            return
        commit = self.store.commit_state(
            repaired_state,
            CommitMeta(author="system", reason="repair", timestamp=at, candidate_id=candidate.id),
            parent=self.serving_commit,
        )
        candidate.repair_delta = repair_delta
        candidate.repair_count = 1
        candidate.new_window = []
        candidate.serving_commit = commit.id
        candidate.size = delta_size(repair_delta)
        candidate.transition(Lifecycle.REPAIRED_PROVISIONAL)
        self.serving_commit = commit.id
        self.serving_state = repaired_state
        self.counters["repairs"] += 1
        self.audit.append("repair", {
            "candidate_id": candidate.id,
            "outcome": "applied",
            "repair_commit": commit.id,
            "delta": repair_delta.canonical_dict(),
        }, at)

    def _rollback(self, candidate: Candidate, trigger: str, at: float) -> None:
        """Restore the candidate's base state byte-exactly; quarantine-tag the
        faulty commit so it stays reachable for review."""
        reason = "veto" if trigger == "veto" else "rollback"
        restored = self.store.get_state(candidate.base_commit)
        commit = self.store.commit_state(
            restored,
            CommitMeta(author="system" if trigger != "veto" else "admin",
                       reason=reason, timestamp=at, candidate_id=candidate.id),
            parent=self.serving_commit,
        )
        label = f"quarantine-{self._quarantine_seq:06d}"
        self._quarantine_seq += 1
        self.store.tag_commit(label, candidate.serving_commit, "quarantine", at)
        candidate.quarantine_tag = label
        candidate.transition(Lifecycle.VETOED if trigger == "veto" else Lifecycle.ROLLED_BACK)
        self.serving_commit = commit.id
        self.serving_state = restored
        self.current = None
        if trigger != "veto":
            self.counters["rolled_back"] += 1
            self.audit.append("rollback", {
                "candidate_id": candidate.id,
                "trigger": trigger,
                "restored_commit": commit.id,
                "base_commit": candidate.base_commit,
                "quarantine_tag": label,
            }, at)

    # ------------------------------------------------------------------
    # veto and manual revert
    # ------------------------------------------------------------------

    def veto(self, candidate_id: str, at: float, by: str = "admin") -> dict:
        candidate = self.candidates.get(candidate_id)
        if candidate is None:
            raise KeyError(candidate_id)
        self._resolve_deadlines(at, skip=candidate_id)
        if candidate.lifecycle is not Lifecycle.ACCEPTED:
            raise NotAccepted(f"candidate {candidate_id} is {candidate.lifecycle.value}")
        if candidate.veto_resolved or at > candidate.veto_deadline:
            self.audit.append("veto", {
                "candidate_id": candidate_id,
                "outcome": "rejected_window_closed",
                "requested_at": at,
                "deadline": candidate.veto_deadline,
            }, at)
            candidate.veto_resolved = True
            if self.current is candidate:
                self.current = None
                self._maybe_distill(at)
            raise VetoWindowClosed(
                f"veto window for {candidate_id} closed at {candidate.veto_deadline}"
            )
        self._rollback(candidate, "veto", at)
        budget_after = self.budget.debit(candidate_id)
        flag = {
            "candidate_id": candidate_id,
            "at": at,
            "delta_digest": candidate.delta.digest(),
            "summary": _delta_summary(candidate.repair_delta or candidate.delta),
        }
        self.veto_flags.append(flag)
        self.counters["vetoed"] += 1
        self.audit.append("veto", {
            "candidate_id": candidate_id,
            "outcome": "executed",
            "by": by,
            "budget_debit": candidate.size,
            "budget_after": budget_after,
            "restored_commit": self.serving_commit,
            "quarantine_tag": candidate.quarantine_tag,
        }, at)
        return {
            "candidate_id": candidate_id,
            "lifecycle": candidate.lifecycle.value,
            "serving_commit": self.serving_commit,
            "budget": budget_after,
        }

    def manual_revert(self, ref: str, at: float, by: str = "admin") -> dict:
        """Admin revert to a tag or commit; refused while a candidate is unresolved."""
        self._resolve_deadlines(at)
        if self.current is not None:
            raise CandidateInFlight(
                f"candidate {self.current.id} is unresolved; veto or wait instead"
            )
        target = self.store.resolve(ref)
        target_tags = [t for t in self.store.tags() if t.commit == target.id]
        state, commit = self.store.revert_to(
            ref,
            CommitMeta(author="admin", reason="rollback", timestamp=at),
            parent=self.serving_commit,
        )
        self.serving_commit = commit.id
        self.serving_state = state
        self.audit.append("rollback", {
            "trigger": "manual",
            "target_ref": ref,
            "target_commit": target.id,
            "target_kinds": sorted({t.kind for t in target_tags}),
            "restored_commit": commit.id,
            "by": by,
        }, at)
        return {"serving_commit": commit.id, "state_hash": state.content_hash}

    # ------------------------------------------------------------------
    # deadline resolution and the distillation trigger
    # ------------------------------------------------------------------

    def _resolve_deadlines(self, at: float, skip: Optional[str] = None) -> None:
        candidate = self.current
        if (
            candidate is not None
            and candidate.lifecycle is Lifecycle.ACCEPTED
            and not candidate.veto_resolved
            and candidate.id != (skip or "")
            and at > candidate.veto_deadline
        ):
            candidate.veto_resolved = True
            self.current = None
            self._maybe_distill(at)

    def _maybe_distill(self, at: float) -> None:
        if not self.budget.should_distill() or self.current is not None:
            return
        pending = [
            self.sessions[sid]
            for sid in self._session_order
            if sid not in self._exported_sessions and self.sessions[sid].rated
        ]
        rows = compile_dataset(pending, None, self.store)
        if not rows:
            logger.warning("distillation trigger with zero rows; budget left untouched")
            return
        budget_before = self.budget.value
        dataset_path: Optional[str] = None
        config_snapshot = self.config.as_payload()
        if self.config.export_dir is not None:
            path = Path(self.config.export_dir) / f"dataset-{self._distill_seq:06d}.ndjson"
            manifest = export_dataset(rows, path, created_at=at, config_snapshot=config_snapshot)
            dataset_path = str(path)
        else:
            manifest = build_manifest(rows, created_at=at, config_snapshot=config_snapshot)
        self.budget.reset()
        event = DistillEvent(
            seq=self._distill_seq, at=at, row_count=manifest.row_count,
            weight_sum=manifest.weight_sum, budget_before=budget_before,
            dataset_path=dataset_path,
        )
        self._distill_seq += 1
        self.distill_events.append(event)
        self.last_export_commit = self.serving_commit
        self._exported_sessions.update(r.session_id for r in rows)
        self.audit.append("distill", {
            "seq": event.seq,
            "row_count": manifest.row_count,
            "weight_sum": manifest.weight_sum,
            "budget_before": budget_before,
            "budget_after": 0,
            "dataset_path": dataset_path,
            "state_commits": list(manifest.state_commits),
        }, at)

    # ------------------------------------------------------------------
    # drift monitors (advisory)
    # ------------------------------------------------------------------

    def _calibrate_drift(self) -> None:
        d = self.config.drift
        self.drift_params = DriftParams.calibrate(
            self.buffer.snapshot(), lam=d.lam, L=d.L,
            k_factor=d.k_factor, h_factor=d.h_factor, sigma_floor=d.sigma_floor,
        )
        self._ewma = DriftMonitorState.initial(self.drift_params)
        self._cusum = DriftMonitorState.initial(self.drift_params)

    def _update_drift(self, rating: int, at: float) -> None:
        if self._ewma is None or self._cusum is None:
            return
        prev_ewma_alarm = self._ewma.alarm
        prev_cusum_alarm = self._cusum.alarm
        self._ewma = ewma_update(self._ewma, rating)
        self._cusum = cusum_update(self._cusum, rating)
        if self._ewma.alarm and not prev_ewma_alarm:
            self.counters["ewma_alarms"] += 1
            self.audit.append("alarm", {
                "monitor": "ewma",
                "value": self._ewma.ewma_value,
                "limit": self.drift_params.ewma_lower_limit,
            }, at)
        if self._cusum.alarm and not prev_cusum_alarm:
            self.counters["cusum_alarms"] += 1
            self.audit.append("alarm", {
                "monitor": "cusum",
                "value": self._cusum.cusum_neg,
                "limit": self.drift_params.h,
            }, at)

    # ------------------------------------------------------------------
    # read-side snapshots
    # ------------------------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "serving_commit": self.serving_commit,
            "state_hash": self.serving_state.content_hash,
            "state": self.serving_state.canonical_dict(),
        }

    def candidates_payload(self, now: float) -> dict:
        return {
            "server_time": now,
            "current": self.current.as_payload(now) if self.current else None,
            "candidates": [c.as_payload(now) for c in self.candidates.values()],
        }

    def decisions_payload(self) -> list:
        return [d.as_payload() for d in self.decisions]

    def metrics_payload(self, now: float) -> dict:
        window = self.buffer.snapshot()
        candidate = self.current
        return {
            "server_time": now,
            "backend": None,  # filled by the service with the kernel backend name
            "warmed_up": self.buffer.full,
            "prior_mean": self.buffer.prior_mean,
            "sliding_mean": self.buffer.mean() if window else None,
            "sliding_ci95": ci95(window),
            "buffer_fill": len(self.buffer),
            "n_win": self.config.gate.n_win,
            "budget": self.budget.value,
            "budget_threshold": self.budget.threshold,
            "ewma": self._ewma.ewma_value if self._ewma else None,
            "ewma_alarm": self._ewma.alarm if self._ewma else False,
            "cusum_neg": self._cusum.cusum_neg if self._cusum else None,
            "cusum_pos": self._cusum.cusum_pos if self._cusum else None,
            "cusum_alarm": self._cusum.alarm if self._cusum else False,
            "counters": dict(self.counters),
            "distill_events": len(self.distill_events),
            "current_candidate": candidate.as_payload(now) if candidate else None,
            "current_windows": {
                "prev_ci95": ci95(candidate.prev_window),
                "new_ci95": ci95(candidate.new_window),
            } if candidate else None,
        }

    def diff_payload(self, a_ref: str, b_ref: str) -> dict:
        a = self.store.resolve(a_ref)
        b = self.store.resolve(b_ref)
        diff = diff_states(self.store.get_state(a.id), self.store.get_state(b.id))
        return {"a": a.id, "b": b.id, "diff": diff.as_payload()}

    # ------------------------------------------------------------------
    # determinism digest (replay equality)
    # ------------------------------------------------------------------

    def determinism_digest(self) -> str:
        doc = {
            "commits": [
                {"id": c.id, "state_hash": c.state_hash, "reason": c.meta.reason}
                for c in self.store.commits_in_order()
            ],
            "decisions": [d.as_payload() for d in self.decisions],
            "budget_trajectory": list(self.budget.trajectory),
        }
        raw = json.dumps(doc, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _delta_summary(delta: KnowledgeDelta) -> list:
    out = []
    for op in delta.ops[:3]:
        text = entry_text(op.payload) if op.payload is not None else ""
        out.append(f"{op.kind.value} {op.component.value}: {text[:80]}")
    return out


# ---------------------------------------------------------------------------
# Event-sourced replay
# ---------------------------------------------------------------------------

INPUT_SESSION_PHASES = ("created", "rated")


def replay_events(
    events,
    config: ForgeConfig,
    reflection_engine: ReflectionEngine,
    backbone: BackboneAdapter,
    tool_runner: Optional[ToolTestRunner] = None,
    store: Optional[CommitStore] = None,
    audit: Optional[AuditLog] = None,
) -> ControlLoop:
    """Re-drive a fresh loop from recorded input events.

    Input events are session created/rated records, veto requests, and
    manual reverts; everything else in the audit log is derived and gets
    re-derived here.  Recorded outputs are passed through so external-
    backbone sessions replay exactly.
    """
    loop = ControlLoop(
        config=config,
        store=store if store is not None else CommitStore(),
        audit=audit if audit is not None else AuditLog(),
        reflection_engine=reflection_engine,
        backbone=backbone,
        tool_runner=tool_runner,
    )
    for event in events:
        payload = event.payload
        if event.kind == "session":
            phase = payload.get("phase")
            if phase == "created":
                session = loop.create_session(
                    payload["input"], at=event.at,
                    output_override=payload.get("output"),
                )
                if session.id != payload.get("id"):
                    raise InvariantViolation(
                        f"replay divergence: session id {session.id} != recorded {payload.get('id')}"
                    )
            elif phase == "rated":
                loop.rate_session(
                    payload["session_id"], payload["rating"], at=event.at,
                    submitted_by=payload.get("rated_by"),
                )
        elif event.kind == "veto" and payload.get("outcome") in ("executed", "rejected_window_closed"):
            try:
                loop.veto(payload["candidate_id"], at=event.at, by=payload.get("by", "admin"))
            except (VetoWindowClosed, NotAccepted, KeyError):
                if payload.get("outcome") == "executed":
                    raise
        elif event.kind == "rollback" and payload.get("trigger") == "manual":
            loop.manual_revert(payload["target_ref"], at=event.at, by=payload.get("by", "admin"))
    return loop
