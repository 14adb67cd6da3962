"""Edit-budget tracking and rating-weighted dataset compilation.

The budget accumulates the size of every accepted delta; a veto inside the
review window reverses exactly the credited amount.  Once the budget
reaches the threshold the loop compiles one dataset row per rated session
since the previous export, weighted w = (r - 1) / 4, and writes it out for
an external fine-tuning job.  Training itself is out of scope here: the
manifest records that rows are meant for token-level cross-entropy
weighted by w.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from .errors import ConfigError, EmptyDataset, InvalidRating, StorageFailure, UnmatchedDebit, UnresolvableCommit
from .persistence import CommitStore
from .reflection import SessionRecord

DATASET_FORMAT = "ndjson/v1"
LOSS_NOTE = "token-level cross-entropy weighted by w"


def rating_weight(rating: int) -> float:
    """w = (r - 1) / 4, exactly; r=1 rows are kept with weight 0."""
    if rating not in (1, 2, 3, 4, 5):
        raise InvalidRating(f"rating {rating!r} outside 1..5")
    return (rating - 1) / 4


@dataclass(frozen=True)
class DatasetRow:
    input: str
    state_commit: str
    output: str
    rating: int
    weight: float
    session_id: str
    session_time: float
    prompt: Optional[str] = None  # optionally inlined composed prompt

    def as_dict(self) -> dict:
        doc = {
            "input": self.input,
            "output": self.output,
            "rating": self.rating,
            "session_id": self.session_id,
            "session_time": self.session_time,
            "state_commit": self.state_commit,
            "weight": self.weight,
        }
        if self.prompt is not None:
            doc["prompt"] = self.prompt
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "DatasetRow":
        return DatasetRow(
            input=doc["input"],
            state_commit=doc["state_commit"],
            output=doc["output"],
            rating=doc["rating"],
            weight=doc["weight"],
            session_id=doc["session_id"],
            session_time=doc["session_time"],
            prompt=doc.get("prompt"),
        )


class BudgetTracker:
    """Nonnegative token budget; credits tracked per candidate so a veto can
    reverse exactly what was granted."""

    def __init__(self, threshold: int):
        if threshold <= 0:
            raise ConfigError(f"budget threshold must be positive, got {threshold}")
        self.threshold = threshold
        self.value = 0
        self._credits: dict = {}
        self.trajectory: List[int] = [0]

    def credit(self, candidate_id: str, size: int) -> int:
        if size < 0:
            raise UnmatchedDebit(f"negative credit {size}")
        if candidate_id in self._credits:
            raise UnmatchedDebit(f"candidate {candidate_id!r} already credited")
        self._credits[candidate_id] = size
        self.value += size
        self.trajectory.append(self.value)
        return self.value

    def debit(self, candidate_id: str) -> int:
        if candidate_id not in self._credits:
            raise UnmatchedDebit(f"no credit recorded for candidate {candidate_id!r}")
        self.value -= self._credits.pop(candidate_id)
        self.trajectory.append(self.value)
        return self.value

    def should_distill(self) -> bool:
        return self.value >= self.threshold

    def reset(self) -> None:
        self.value = 0
        self._credits.clear()
        self.trajectory.append(0)


def compile_dataset(
    sessions: Sequence[SessionRecord],
    since: Optional[str],
    store: CommitStore,
) -> List[DatasetRow]:
    """One row per rated session strictly after the `since` commit's timestamp.

    Every session must pin a resolvable state commit; rows come back ordered
    by session time.
    """
    cutoff: Optional[float] = None
    if since is not None:
        if not store.has_commit(since):
            raise UnresolvableCommit(f"cutoff commit {since!r} not found")
        cutoff = store.get_commit(since).meta.timestamp
    rows = []
    for session in sessions:
        if not session.rated:
            continue
        if not store.has_commit(session.state_commit):
            raise UnresolvableCommit(
                f"session {session.id!r} pins unknown commit {session.state_commit!r}"
            )
        if cutoff is not None and session.created_at <= cutoff:
            continue
        rows.append(
            DatasetRow(
                input=session.input,
                state_commit=session.state_commit,
                output=session.output,
                rating=session.rating,
                weight=rating_weight(session.rating),
                session_id=session.id,
                session_time=session.created_at,
            )
        )
    rows.sort(key=lambda r: (r.session_time, r.session_id))
    return rows


@dataclass(frozen=True)
class Manifest:
    row_count: int
    weight_sum: float
    state_commits: tuple
    created_at: float
    config_snapshot: dict
    loss: str = LOSS_NOTE
    format: str = DATASET_FORMAT

    def as_dict(self) -> dict:
        return {
            "config_snapshot": self.config_snapshot,
            "created_at": self.created_at,
            "format": self.format,
            "loss": self.loss,
            "row_count": self.row_count,
            "state_commits": list(self.state_commits),
            "weight_sum": self.weight_sum,
        }


def build_manifest(rows: Sequence[DatasetRow], *, created_at: float, config_snapshot: dict) -> Manifest:
    if not rows:
        raise EmptyDataset("refusing to build a manifest for zero rows")
    return Manifest(
        row_count=len(rows),
        weight_sum=sum(r.weight for r in rows),
        state_commits=tuple(sorted({r.state_commit for r in rows})),
        created_at=created_at,
        config_snapshot=dict(config_snapshot),
    )


def export_dataset(rows: Sequence[DatasetRow], path: Path, *, created_at: float,
                   config_snapshot: dict) -> Manifest:
    """Write rows as NDJSON plus a `.manifest.json` sidecar, atomically."""
    if not rows:
        raise EmptyDataset("no rows to export")
    manifest = build_manifest(rows, created_at=created_at, config_snapshot=config_snapshot)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(json.dumps(r.as_dict(), ensure_ascii=False, separators=(",", ":")) + "\n" for r in rows)
    _atomic(path, body)
    _atomic(manifest_path(path), json.dumps(manifest.as_dict(), ensure_ascii=False, indent=2) + "\n")
    return manifest


def manifest_path(dataset_path: Path) -> Path:
    dataset_path = Path(dataset_path)
    return dataset_path.with_name(dataset_path.name + ".manifest.json")


def read_dataset(path: Path) -> List[DatasetRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            rows.append(DatasetRow.from_dict(json.loads(line)))
    return rows


def _atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageFailure(f"export write failed for {path}: {exc}") from exc
