"""Monte Carlo harness: drives the full loop with synthetic sessions.

Rating models emit integer Likert values by discretizing a latent Gaussian
(round, then clamp to 1..5), so independent oracles can replicate them:

* null    -- latent mean stays at base_mean whether or not a candidate is
             being evaluated (both windows i.i.d.); measures the false-
             accept rate of the gate
* uplift  -- latent mean rises by `delta` for sessions served while a
             candidate (or its repair) is under evaluation; measures power
* drift   -- latent mean decays by drift_rate per session; exercises the
             EWMA/CUSUM alarms
* gamed   -- adversarial high-variance rater: 5 or 1 with equal
             probability (mean 3, maximal variance)

A scenario's seed fully determines the run; reports are byte-identical
across repeats.  The loop runs in-process by default; http mode drives the
FastAPI app through its test transport to show the API adds no
nondeterminism.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .config import DriftConfig, ForgeConfig
from .backbone import MockBackbone
from .errors import ConfigError
from .gate import GateConfig, Lifecycle
from .loop import ControlLoop
from .persistence import AuditLog, CommitStore
from .reflection import MockReflectionEngine
from .tools import StubRunner

RATING_MODELS = ("null", "uplift", "drift", "gamed")

TERMINAL = (Lifecycle.ACCEPTED, Lifecycle.ROLLED_BACK, Lifecycle.VETOED)

# ---------------------------------------------------------------------------
# Scenario definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    model: str
    n_candidates: int
    seed: int
    gate: GateConfig
    delta: float = 0.0
    drift_rate: float = 0.0
    repair: bool = True
    budget_threshold: int = 10_000_000
    prompt_budget: int = 1_000_000
    base_mean: float = 3.0
    base_sigma: float = 1.0
    washout: Optional[int] = None  # base sessions between candidates; None -> n_win

    def __post_init__(self):
        if self.model not in RATING_MODELS:
            raise ConfigError(f"unknown rating model {self.model!r}")
        if self.n_candidates <= 0:
            raise ConfigError("n_candidates must be positive")

    @property
    def washout_sessions(self) -> int:
        """Sessions between candidates that flush the sliding buffer, so each
        prev window is drawn from the baseline distribution rather than the
        previous candidate's evaluation window."""
        return self.gate.n_win if self.washout is None else self.washout

    def as_dict(self) -> dict:
        return {
            "base_mean": self.base_mean,
            "base_sigma": self.base_sigma,
            "budget_threshold": self.budget_threshold,
            "delta": self.delta,
            "drift_rate": self.drift_rate,
            "gate": self.gate.as_payload(),
            "model": self.model,
            "n_candidates": self.n_candidates,
            "name": self.name,
            "prompt_budget": self.prompt_budget,
            "repair": self.repair,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict, seed_override: Optional[int] = None) -> "Scenario":
        try:
            gate_doc = dict(doc.get("gate", {}))
            gate = GateConfig(
                n_win=int(gate_doc.get("n_win", 30)),
                tau=float(gate_doc.get("tau", 0.05)),
                alpha=float(gate_doc.get("alpha", 0.05)),
                review_window=float(gate_doc.get("review_window", 0.5)),
                alpha_normality=float(gate_doc.get("alpha_normality", 0.05)),
            )
            return Scenario(
                name=str(doc["name"]),
                model=str(doc["model"]),
                n_candidates=int(doc["n_candidates"]),
                seed=int(seed_override if seed_override is not None else doc.get("seed", 0)),
                gate=gate,
                delta=float(doc.get("delta", 0.0)),
                drift_rate=float(doc.get("drift_rate", 0.0)),
                repair=bool(doc.get("repair", True)),
                budget_threshold=int(doc.get("budget_threshold", 10_000_000)),
                prompt_budget=int(doc.get("prompt_budget", 1_000_000)),
                base_mean=float(doc.get("base_mean", 3.0)),
                base_sigma=float(doc.get("base_sigma", 1.0)),
                washout=int(doc["washout"]) if doc.get("washout") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @staticmethod
    def from_file(path: Path, seed_override: Optional[int] = None) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"could not read scenario {path}: {exc}") from exc
        return Scenario.from_dict(doc, seed_override)


def draw_rating(rng: random.Random, scenario: Scenario, in_candidate: bool, t: int) -> int:
    """Latent-Gaussian Likert draw; documented so oracles can replicate it."""
    if scenario.model == "gamed":
        return 5 if rng.random() < 0.5 else 1
    mu = scenario.base_mean
    if scenario.model == "uplift" and in_candidate:
        mu += scenario.delta
    elif scenario.model == "drift":
        mu -= scenario.drift_rate * t
    latent = rng.gauss(mu, scenario.base_sigma)
    return min(5, max(1, round(latent)))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

DECISION_COLUMNS = (
    "candidate_id", "opened_at", "decided_at", "repair_count", "test_used",
    "statistic", "p_value", "mean_prev", "mean_new", "accepted", "lifecycle",
)
BUDGET_COLUMNS = ("step", "value")
SUMMARY_COLUMNS = ("metric", "value")


@dataclass
class ScenarioReport:
    scenario: dict
    n_candidates: int
    accepted: int
    rolled_back: int
    vetoed: int
    repairs: int
    acceptance_rate: float
    false_accept_rate: Optional[float]  # null model: accepted / candidates
    false_reject_rate: Optional[float]  # uplift model: rolled back / candidates
    mean_sessions_to_decision: float
    mean_sessions_to_accept: Optional[float]
    sessions_total: int
    distill_events: int
    ewma_alarms: int
    cusum_alarms: int
    determinism_digest: str
    decision_rows: List[dict] = field(default_factory=list)
    budget_trajectory: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_candidates": self.n_candidates,
            "accepted": self.accepted,
            "rolled_back": self.rolled_back,
            "vetoed": self.vetoed,
            "repairs": self.repairs,
            "acceptance_rate": self.acceptance_rate,
            "false_accept_rate": self.false_accept_rate,
            "false_reject_rate": self.false_reject_rate,
            "mean_sessions_to_decision": self.mean_sessions_to_decision,
            "mean_sessions_to_accept": self.mean_sessions_to_accept,
            "sessions_total": self.sessions_total,
            "distill_events": self.distill_events,
            "ewma_alarms": self.ewma_alarms,
            "cusum_alarms": self.cusum_alarms,
            "determinism_digest": self.determinism_digest,
            "decision_rows": self.decision_rows,
            "budget_trajectory": self.budget_trajectory,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


class SteppingClock:
    """Deterministic event clock: one tick per advance."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self.value = start
        self.step = step

    def advance(self) -> float:
        self.value += self.step
        return self.value

    def __call__(self) -> float:
        return self.value


def _forge_config(scenario: Scenario, out_dir: Optional[Path]) -> ForgeConfig:
    return ForgeConfig(
        gate=scenario.gate,
        budget_threshold=scenario.budget_threshold,
        prompt_budget=scenario.prompt_budget,
        export_dir=(Path(out_dir) / "datasets") if out_dir is not None else None,
        drift=DriftConfig(),
    )


def _build_loop(scenario: Scenario, out_dir: Optional[Path], retain: bool) -> ControlLoop:
    config = _forge_config(scenario, out_dir)
    return ControlLoop(
        config=config,
        store=CommitStore(state_cache_limit=None if retain else 64),
        audit=AuditLog(retain_events=retain),
        reflection_engine=MockReflectionEngine(repair_enabled=scenario.repair),
        backbone=MockBackbone(seed=scenario.seed),
        tool_runner=StubRunner(),
        session_retention=None if retain else 8,
    )


def run_scenario(scenario: Scenario, out_dir: Optional[Path] = None,
                 retain_history: bool = False, max_sessions: Optional[int] = None,
                 loop: Optional[ControlLoop] = None,
                 driver=None) -> ScenarioReport:
    """Run the loop until `n_candidates` candidates resolve; deterministic per seed.

    `retain_history` keeps full audit/session history (needed by replay
    tests; large runs leave it off).  A custom `driver` (used for http mode)
    receives (input_text, rating, clock) callbacks instead of the in-process
    loop calls.
    """
    rng = random.Random(scenario.seed)
    clock = SteppingClock()
    if loop is None and driver is None:
        loop = _build_loop(scenario, out_dir, retain_history)
    if max_sessions is None:
        # warm-up + per candidate at most two full windows, the washout, and slack
        per_candidate = 2 * scenario.gate.n_win + scenario.washout_sessions + 8
        max_sessions = scenario.gate.n_win + scenario.n_candidates * per_candidate + 64

    observe = driver if driver is not None else _InProcessDriver(loop, clock)

    t = 0
    washout_remaining = 0
    resolved = 0
    while resolved < scenario.n_candidates and t < max_sessions:
        t += 1
        in_candidate = observe.candidate_in_flight()
        propose = observe.slot_free() and washout_remaining == 0
        rating = draw_rating(rng, scenario, in_candidate, t)
        text = f"correction: observed fact {t}" if propose else f"routine check {t}"
        observe.run_session(text, rating)
        if not in_candidate and washout_remaining > 0:
            washout_remaining -= 1
        now_resolved = observe.resolved_candidates()
        if now_resolved > resolved:
            washout_remaining = scenario.washout_sessions
        resolved = now_resolved

    if observe.resolved_candidates() < scenario.n_candidates:
        raise ConfigError(
            f"scenario exhausted {max_sessions} sessions with only "
            f"{observe.resolved_candidates()} of {scenario.n_candidates} candidates resolved"
        )
    return observe.build_report(scenario, t)


class _InProcessDriver:
    def __init__(self, loop: ControlLoop, clock: SteppingClock):
        self.loop = loop
        self.clock = clock

    def candidate_in_flight(self) -> bool:
        current = self.loop.current
        return current is not None and current.in_flight

    def slot_free(self) -> bool:
        return self.loop.current is None

    def resolved_candidates(self) -> int:
        counters = self.loop.counters
        return counters["accepted"] + counters["rolled_back"]  # vetoed were accepted first

    def run_session(self, input_text: str, rating: int) -> None:
        session = self.loop.create_session(input_text, at=self.clock.advance())
        self.loop.rate_session(session.id, rating, at=self.clock.advance())

    def build_report(self, scenario: Scenario, sessions_total: int) -> ScenarioReport:
        loop = self.loop
        counts = {lc: 0 for lc in Lifecycle}
        for c in loop.candidates.values():
            counts[c.lifecycle] += 1
        accepted = counts[Lifecycle.ACCEPTED] + counts[Lifecycle.VETOED]  # vetoed were accepted first
        decision_rows = []
        opened_at = {cid: c.opened_at for cid, c in loop.candidates.items()}
        for d in loop.decisions:
            c = loop.candidates[d.candidate_id]
            decision_rows.append({
                "candidate_id": d.candidate_id,
                "opened_at": opened_at[d.candidate_id],
                "decided_at": d.decided_at,
                "repair_count": c.repair_count,
                "test_used": d.test_used,
                "statistic": d.statistic,
                "p_value": d.p_value,
                "mean_prev": d.mean_prev,
                "mean_new": d.mean_new,
                "accepted": d.accepted,
                "lifecycle": c.lifecycle.value,
            })
        durations = [d.decided_at - opened_at[d.candidate_id] for d in loop.decisions]
        mean_sessions = (sum(durations) / len(durations) / 2.0) if durations else 0.0
        accept_durations = [
            d.decided_at - opened_at[d.candidate_id] for d in loop.decisions if d.accepted
        ]
        n_resolved = self.resolved_candidates()
        acceptance_rate = accepted / n_resolved if n_resolved else 0.0
        return ScenarioReport(
            scenario=scenario.as_dict(),
            n_candidates=n_resolved,
            accepted=accepted,
            rolled_back=counts[Lifecycle.ROLLED_BACK],
            vetoed=counts[Lifecycle.VETOED],
            repairs=loop.counters["repairs"],
            acceptance_rate=acceptance_rate,
            false_accept_rate=acceptance_rate if scenario.model == "null" else None,
            false_reject_rate=(
                counts[Lifecycle.ROLLED_BACK] / n_resolved
                if scenario.model == "uplift" and n_resolved
                else None
            ),
            mean_sessions_to_decision=mean_sessions,
            mean_sessions_to_accept=(
                sum(accept_durations) / len(accept_durations) / 2.0 if accept_durations else None
            ),
            sessions_total=sessions_total,
            distill_events=len(loop.distill_events),
            ewma_alarms=loop.counters["ewma_alarms"],
            cusum_alarms=loop.counters["cusum_alarms"],
            determinism_digest=loop.determinism_digest(),
            decision_rows=decision_rows,
            budget_trajectory=list(loop.budget.trajectory),
        )


# ---------------------------------------------------------------------------
# HTTP-mode driver (loop-engine equivalence)
# ---------------------------------------------------------------------------


class HttpDriver:
    """Drives a live app through its HTTP surface with the same event clock.

    The wrapped loop is only touched for read-side report assembly, mirroring
    what `/v1` exposes.
    """

    def __init__(self, client, loop: ControlLoop, clock: SteppingClock,
                 headers: Optional[dict] = None):
        self.client = client
        self.loop = loop
        self.clock = clock
        self.headers = headers or {}
        self._inner = _InProcessDriver(loop, clock)

    def candidate_in_flight(self) -> bool:
        return self._inner.candidate_in_flight()

    def slot_free(self) -> bool:
        return self._inner.slot_free()

    def resolved_candidates(self) -> int:
        return self._inner.resolved_candidates()

    def run_session(self, input_text: str, rating: int) -> None:
        self.clock.advance()
        created = self.client.post("/v1/sessions", json={"input": input_text}, headers=self.headers)
        created.raise_for_status()
        session_id = created.json()["session_id"]
        self.clock.advance()
        rated = self.client.post(
            f"/v1/sessions/{session_id}/rating", json={"rating": rating}, headers=self.headers
        )
        rated.raise_for_status()

    def build_report(self, scenario: Scenario, sessions_total: int) -> ScenarioReport:
        return self._inner.build_report(scenario, sessions_total)


def run_scenario_http(scenario: Scenario, out_dir: Optional[Path] = None,
                      retain_history: bool = True) -> ScenarioReport:
    from fastapi.testclient import TestClient

    from .service import create_app

    clock = SteppingClock()
    loop = _build_loop(scenario, out_dir, retain_history)
    app = create_app(_forge_config(scenario, out_dir), loop=loop, clock=clock)
    with TestClient(app) as client:
        driver = HttpDriver(client, loop, clock)
        return run_scenario(scenario, out_dir=out_dir, retain_history=retain_history, driver=driver)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def emit_report(report: ScenarioReport, out_dir: Path) -> List[Path]:
    """CSV tables plus a plain-text summary; no plotting dependencies."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    import csv

    decisions_path = out_dir / "decisions.csv"
    with open(decisions_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=DECISION_COLUMNS)
        writer.writeheader()
        for row in report.decision_rows:
            writer.writerow(row)
    written.append(decisions_path)

    budget_path = out_dir / "budget.csv"
    with open(budget_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BUDGET_COLUMNS)
        for step, value in enumerate(report.budget_trajectory):
            writer.writerow([step, value])
    written.append(budget_path)

    gate = report.scenario["gate"]
    summary_rows = [
        ("scenario", report.scenario["name"]),
        ("model", report.scenario["model"]),
        ("seed", report.scenario["seed"]),
        ("tau", gate["tau"]),
        ("alpha", gate["alpha"]),
        ("n_win", gate["n_win"]),
        ("n_candidates", report.n_candidates),
        ("accepted", report.accepted),
        ("rolled_back", report.rolled_back),
        ("vetoed", report.vetoed),
        ("repairs", report.repairs),
        ("acceptance_rate", report.acceptance_rate),
        ("false_accept_rate", report.false_accept_rate),
        ("false_reject_rate", report.false_reject_rate),
        ("mean_sessions_to_decision", report.mean_sessions_to_decision),
        ("mean_sessions_to_accept", report.mean_sessions_to_accept),
        ("sessions_total", report.sessions_total),
        ("distill_events", report.distill_events),
        ("ewma_alarms", report.ewma_alarms),
        ("cusum_alarms", report.cusum_alarms),
        ("determinism_digest", report.determinism_digest),
    ]
    summary_csv = out_dir / "summary.csv"
    with open(summary_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(summary_rows)
    written.append(summary_csv)

    summary_txt = out_dir / "summary.txt"
    lines = [f"scenario report: {report.scenario['name']}", ""]
    lines += [f"  {k:<28} {v}" for k, v in summary_rows]
    summary_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(summary_txt)

    report_json = out_dir / "report.json"
    report_json.write_text(report.to_json(), encoding="utf-8")
    written.append(report_json)
    return written
