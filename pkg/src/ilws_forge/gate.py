"""Gate configuration, candidate lifecycle types, and the acceptance decision.

The decision rule: accept a provisional delta iff the new window's mean
rating beats the previous window's mean by at least tau AND the one-sided
test (Welch by default, Mann-Whitney on normality failure) yields
p <= alpha.  The control loop (`loop.py`) owns the transitions between
lifecycle states; this module keeps the pure pieces.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigError, InvalidRating, WindowIncomplete
from .knowledge import KnowledgeDelta
from .stats import TestResult, run_gate_test

PRIOR_MEAN = 3.0  # neutral prior; reported before the first gate, never tested against


class Lifecycle(str, Enum):
    PROPOSED = "proposed"
    PROVISIONAL = "provisional"
    REPAIR_PENDING = "repair_pending"
    REPAIRED_PROVISIONAL = "repaired_provisional"
    ACCEPTED = "accepted"
    ROLLED_BACK = "rolled_back"
    VETOED = "vetoed"


# States in which a candidate occupies the single evaluation slot.
IN_FLIGHT_STATES = frozenset(
    {Lifecycle.PROVISIONAL, Lifecycle.REPAIR_PENDING, Lifecycle.REPAIRED_PROVISIONAL}
)

# Legal lifecycle transitions (a DAG; no state is ever revisited).
TRANSITIONS = {
    Lifecycle.PROPOSED: {Lifecycle.PROVISIONAL},
    Lifecycle.PROVISIONAL: {Lifecycle.ACCEPTED, Lifecycle.REPAIR_PENDING, Lifecycle.ROLLED_BACK},
    Lifecycle.REPAIR_PENDING: {Lifecycle.REPAIRED_PROVISIONAL, Lifecycle.ROLLED_BACK},
    Lifecycle.REPAIRED_PROVISIONAL: {Lifecycle.ACCEPTED, Lifecycle.ROLLED_BACK},
    Lifecycle.ACCEPTED: {Lifecycle.VETOED},
    Lifecycle.ROLLED_BACK: set(),
    Lifecycle.VETOED: set(),
}


@dataclass(frozen=True)
class GateConfig:
    n_win: int
    tau: float = 0.05
    alpha: float = 0.05
    review_window: float = 3600.0  # seconds after acceptance during which a veto is honored
    alpha_normality: float = 0.05

    def __post_init__(self):
        if self.n_win < 2:
            raise ConfigError(f"n_win must be >= 2, got {self.n_win}")
        if self.tau < 0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.alpha_normality < 1.0:
            raise ConfigError(f"alpha_normality must be in (0, 1), got {self.alpha_normality}")
        if self.review_window < 0:
            raise ConfigError(f"review_window must be >= 0, got {self.review_window}")

    def as_payload(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_normality": self.alpha_normality,
            "n_win": self.n_win,
            "review_window": self.review_window,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class GateDecision:
    mean_prev: float
    mean_new: float
    test_used: str
    statistic: float
    p_value: float
    accepted: bool
    config: GateConfig
    decided_at: float
    candidate_id: str = ""

    def as_payload(self) -> dict:
        return {
            "accepted": self.accepted,
            "candidate_id": self.candidate_id,
            "config": self.config.as_payload(),
            "decided_at": self.decided_at,
            "mean_new": self.mean_new,
            "mean_prev": self.mean_prev,
            "p_value": self.p_value,
            "statistic": self.statistic,
            "test_used": self.test_used,
        }


def decide(prev: Sequence[int], new: Sequence[int], config: GateConfig, at: float,
           candidate_id: str = "") -> GateDecision:
    """Evaluate the gate over two full windows.

    Raises WindowIncomplete unless both windows hold exactly n_win ratings.
    """
    if len(prev) != config.n_win or len(new) != config.n_win:
        raise WindowIncomplete(
            f"windows must hold {config.n_win} ratings (got {len(prev)}/{len(new)})"
        )
    result: TestResult = run_gate_test(prev, new, config.alpha_normality)
    mean_prev = sum(prev) / len(prev)
    mean_new = sum(new) / len(new)
    accepted = mean_new >= mean_prev + config.tau and result.p_value <= config.alpha
    return GateDecision(
        mean_prev=mean_prev,
        mean_new=mean_new,
        test_used=result.test,
        statistic=result.statistic,
        p_value=result.p_value,
        accepted=accepted,
        config=config,
        decided_at=at,
        candidate_id=candidate_id,
    )


@dataclass
class Candidate:
    """A provisional delta under evaluation (or resolved)."""

    id: str
    delta: KnowledgeDelta
    base_commit: str
    provisional_commit: str
    prev_window: tuple
    opened_at: float
    lifecycle: Lifecycle = Lifecycle.PROVISIONAL
    repair_count: int = 0
    new_window: list = field(default_factory=list)
    serving_commit: str = ""  # provisional_commit, or the repair commit after a repair
    repair_delta: Optional[KnowledgeDelta] = None
    decision: Optional[GateDecision] = None
    veto_deadline: Optional[float] = None
    veto_resolved: bool = False  # deadline passed without a veto
    quarantine_tag: Optional[str] = None
    size: int = 0  # delta_size of the edit that ended up serving

    def __post_init__(self):
        if not self.serving_commit:
            self.serving_commit = self.provisional_commit

    @property
    def in_flight(self) -> bool:
        return self.lifecycle in IN_FLIGHT_STATES

    @property
    def blocking(self) -> bool:
        """True while the candidate occupies the single evaluation slot,
        including the accepted-but-vetoable period."""
        if self.in_flight:
            return True
        return self.lifecycle is Lifecycle.ACCEPTED and not self.veto_resolved

    def transition(self, to: Lifecycle) -> None:
        if to not in TRANSITIONS[self.lifecycle]:
            raise AssertionError(f"illegal lifecycle transition {self.lifecycle.value} -> {to.value}")
        self.lifecycle = to

    def window_fill(self) -> int:
        return len(self.new_window)

    def as_payload(self, now: Optional[float] = None) -> dict:
        doc = {
            "id": self.id,
            "lifecycle": self.lifecycle.value,
            "base_commit": self.base_commit,
            "provisional_commit": self.provisional_commit,
            "serving_commit": self.serving_commit,
            "opened_at": self.opened_at,
            "repair_count": self.repair_count,
            "prev_window": list(self.prev_window),
            "new_window": list(self.new_window),
            "size": self.size,
            "decision": self.decision.as_payload() if self.decision else None,
            "veto_deadline": self.veto_deadline,
            "veto_resolved": self.veto_resolved,
            "quarantine_tag": self.quarantine_tag,
        }
        if now is not None and self.lifecycle is Lifecycle.ACCEPTED and self.veto_deadline is not None:
            doc["veto_seconds_left"] = max(0.0, self.veto_deadline - now) if not self.veto_resolved else 0.0
        return doc


class RatingBuffer:
    """Bounded FIFO of the last n_win ratings; holds the neutral prior before warm-up."""

    def __init__(self, n_win: int):
        self.n_win = n_win
        self._values: deque = deque(maxlen=n_win)
        self.prior_mean = PRIOR_MEAN
        self.total_seen = 0

    def append(self, rating: int) -> None:
        if rating not in (1, 2, 3, 4, 5):
            raise InvalidRating(f"rating {rating!r} outside 1..5")
        self._values.append(rating)
        self.total_seen += 1

    @property
    def full(self) -> bool:
        return len(self._values) == self.n_win

    def snapshot(self) -> tuple:
        return tuple(self._values)

    def mean(self) -> float:
        if not self._values:
            return self.prior_mean
        return sum(self._values) / len(self._values)

    def __len__(self) -> int:
        return len(self._values)
