"""Tool-code policy and lifecycle: denylist scan, path isolation, test gate.

Tool source is opaque text to the control plane; execution happens only
behind the runner interface.  The default runners are a fixture-driven stub
(offline tests, simulator) and a local subprocess runner with a time limit
and an output cap.  Container isolation is an integration concern and lives
behind the same interface.
"""

from __future__ import annotations

import logging
import posixpath
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .errors import PathViolation, PolicyNotPassed, RunnerUnavailable, ToolTestTimeout, UnknownTool
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
    apply_delta,
)

logger = logging.getLogger(__name__)

# Literal, case-sensitive substrings; matched in code and in file-like
# parameters before any execution is attempted.
DEFAULT_DENYLIST = ("sudo", "chmod", "curl", "wget", "eval(")

LOCATION_CODE = "code"
LOCATION_PARAMETER = "parameter"

_EXCERPT_RADIUS = 30


@dataclass(frozen=True)
class Violation:
    pattern: str
    location: str  # LOCATION_CODE | LOCATION_PARAMETER
    excerpt: str

    def as_dict(self) -> dict:
        return {"excerpt": self.excerpt, "location": self.location, "pattern": self.pattern}


@dataclass(frozen=True)
class PolicyReport:
    violations: tuple

    @property
    def passed(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"passed": self.passed, "violations": [v.as_dict() for v in self.violations]}


def _find_pattern(text: str, pattern: str, location: str) -> list:
    found = []
    start = 0
    while True:
        idx = text.find(pattern, start)
        if idx < 0:
            break
        lo = max(0, idx - _EXCERPT_RADIUS)
        hi = min(len(text), idx + len(pattern) + _EXCERPT_RADIUS)
        found.append(Violation(pattern=pattern, location=location, excerpt=text[lo:hi]))
        start = idx + 1
    return found


def scan_tool(code: str, file_params: Sequence[str] = (),
              denylist: Sequence[str] = DEFAULT_DENYLIST) -> PolicyReport:
    """Report every denylist occurrence in the code and in file-like parameters."""
    violations = []
    for pattern in denylist:
        violations.extend(_find_pattern(code, pattern, LOCATION_CODE))
        for param in file_params:
            violations.extend(_find_pattern(param, pattern, LOCATION_PARAMETER))
    return PolicyReport(violations=tuple(violations))


def validate_path(name: str, sandbox_root: Path) -> str:
    """Normalize `name` and prove it stays inside sandbox_root.

    Rejects absolute paths, drive-letter paths, backslashes, and any path
    whose normalized form starts with a `..` segment.  Returns the
    normalized relative posix path.
    """
    if not name or not name.strip():
        raise PathViolation("empty filename")
    if "\x00" in name:
        raise PathViolation("filename contains a NUL byte")
    if "\\" in name:
        raise PathViolation(f"backslash separators not allowed: {name!r}")
    if name.startswith("/") or name.startswith("~"):
        raise PathViolation(f"absolute or home-relative path: {name!r}")
    if len(name) >= 2 and name[1] == ":":
        raise PathViolation(f"drive-letter path: {name!r}")
    if any(segment == ".." for segment in name.split("/")):
        # any traversal segment is rejected outright, even ones that would
        # normalize back inside the sandbox
        raise PathViolation(f"traversal segment in {name!r}")
    normalized = posixpath.normpath(name)
    if normalized == "." or normalized.startswith("../") or normalized == "..":
        raise PathViolation(f"path traversal outside the sandbox: {name!r}")
    # belt and braces: the joined lexical path must stay under the root
    root = posixpath.normpath(str(sandbox_root).replace("\\", "/"))
    joined = posixpath.normpath(posixpath.join(root, normalized))
    if joined != root and not joined.startswith(root + "/"):
        raise PathViolation(f"path escapes sandbox root: {name!r}")
    return normalized


# ---------------------------------------------------------------------------
# Test runners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunnerResult:
    passed: bool
    output: str
    duration_s: float = 0.0

    def as_dict(self) -> dict:
        return {"duration_s": self.duration_s, "output": self.output, "passed": self.passed}


class ToolTestRunner(Protocol):
    def run(self, tool: ToolEntry, workdir: Path, timeout_s: float, output_cap: int) -> RunnerResult: ...


class StubRunner:
    """Fixture-driven runner for offline tests: outcomes come from a table."""

    def __init__(self, outcomes: Optional[dict] = None, default_passed: bool = True):
        self.outcomes = dict(outcomes or {})
        self.default_passed = default_passed
        self.invocations: list = []

    def run(self, tool: ToolEntry, workdir: Path, timeout_s: float, output_cap: int) -> RunnerResult:
        self.invocations.append(tool.name)
        passed = self.outcomes.get(tool.name, self.default_passed)
        output = "scaffold passed" if passed else f"scaffold failed: fixture verdict for {tool.name}"
        return RunnerResult(passed=passed, output=output[:output_cap])


_SCAFFOLD = """\
import sys

sys.path.insert(0, ".")
import tool_under_test as t

selftest = getattr(t, "selftest", None)
if callable(selftest):
    selftest()
print("SCAFFOLD-OK")
"""


class LocalProcessRunner:
    """Runs the tool's scaffold in a separate python process.

    Isolation contract: working directory confined to the per-tool sandbox
    dir, bounded runtime, bounded captured output, minimal environment.
    Network isolation requires a container runtime and is not enforced here.
    """

    def run(self, tool: ToolEntry, workdir: Path, timeout_s: float, output_cap: int) -> RunnerResult:
        workdir.mkdir(parents=True, exist_ok=True)
        (workdir / "tool_under_test.py").write_text(tool.code, encoding="utf-8")
        (workdir / "run_scaffold.py").write_text(_SCAFFOLD, encoding="utf-8")
        try:
            proc = subprocess.run(
                [sys.executable, "-I", "run_scaffold.py"],
                cwd=workdir,
                capture_output=True,
                text=True,
                timeout=timeout_s,
                env={"PATH": ""},
            )
        except subprocess.TimeoutExpired as exc:
            raise ToolTestTimeout(f"tool {tool.name!r} scaffold exceeded {timeout_s}s") from exc
        except OSError as exc:
            raise RunnerUnavailable(f"could not launch scaffold: {exc}") from exc
        output = (proc.stdout + proc.stderr)[:output_cap]
        return RunnerResult(passed=proc.returncode == 0, output=output)


# ---------------------------------------------------------------------------
# Registration and lifecycle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegistrationOutcome:
    tool: ToolEntry  # entry with its post-gate status
    report: PolicyReport
    runner_result: RunnerResult
    rubric: Optional[InstructionEntry]  # usage rubric proposed for the instruction set on pass
    failure_diff_path: Optional[str] = None

    @property
    def activated(self) -> bool:
        return self.tool.status is ToolStatus.ACTIVE


def usage_rubric(tool: ToolEntry, *, rubric_id: str, now: float) -> InstructionEntry:
    """Concise instruction making an activated tool discoverable in prompts."""
    return InstructionEntry(
        id=rubric_id,
        section=Section.GLOBAL,
        text=f"Tool '{tool.name}' is available; call it as {tool.signature}.",
        created_at=now,
        origin=Origin.TOOL_RUBRIC,
    )


def register_tool(
    tool: ToolEntry,
    runner: ToolTestRunner,
    *,
    sandbox_root: Path,
    rubric_id_factory: Callable[[], str],
    now: float,
    denylist: Sequence[str] = DEFAULT_DENYLIST,
    file_params: Sequence[str] = (),
    timeout_s: float = 10.0,
    output_cap: int = 65536,
) -> RegistrationOutcome:
    """Policy scan, then the unit-test gate, then activation or quarantine.

    Raises PolicyNotPassed when the scan reports violations (no execution is
    ever attempted in that case).  On a failing scaffold the tool stays
    quarantined and the failure diff is retained under its sandbox dir.
    """
    report = scan_tool(tool.code, file_params, denylist)
    if not report.passed:
        raise PolicyNotPassed(
            f"tool {tool.name!r} failed the policy scan: "
            + ", ".join(sorted({v.pattern for v in report.violations}))
        )
    if runner is None:
        raise RunnerUnavailable("no tool test runner configured")
    rel = validate_path(tool.sandbox_dir, sandbox_root)
    workdir = Path(sandbox_root) / rel
    result = runner.run(tool, workdir, timeout_s, output_cap)
    if result.passed:
        activated = ToolEntry(
            name=tool.name, signature=tool.signature, code=tool.code,
            status=ToolStatus.ACTIVE, sandbox_dir=tool.sandbox_dir, created_at=tool.created_at,
        )
        rubric = usage_rubric(activated, rubric_id=rubric_id_factory(), now=now)
        return RegistrationOutcome(tool=activated, report=report, runner_result=result, rubric=rubric)
    diff_path: Optional[str] = None
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        diff_file = workdir / "failure.diff"
        diff_file.write_text(result.output, encoding="utf-8")
        diff_path = str(diff_file)
    except OSError:
        logger.warning("could not retain failure diff for tool %r", tool.name)
    quarantined = ToolEntry(
        name=tool.name, signature=tool.signature, code=tool.code,
        status=ToolStatus.QUARANTINED, sandbox_dir=tool.sandbox_dir, created_at=tool.created_at,
    )
    return RegistrationOutcome(
        tool=quarantined, report=report, runner_result=result, rubric=None,
        failure_diff_path=diff_path,
    )


def deprecate_tool(state: KnowledgeState, name: str) -> KnowledgeState:
    """Mark a tool deprecated; its signature disappears from the next composed
    prompt while its history stays in the registry."""
    current = {t.name: t for t in state.tools}
    prior = current.get(name)
    if prior is None:
        raise UnknownTool(f"unknown tool {name!r}")
    updated = ToolEntry(
        name=prior.name, signature=prior.signature, code=prior.code,
        status=ToolStatus.DEPRECATED, sandbox_dir=prior.sandbox_dir, created_at=prior.created_at,
    )
    delta = KnowledgeDelta(
        ops=(DeltaOp.modify(Component.T, name, updated),),
        proposed_by=ProposedBy.MANUAL,
    )
    return apply_delta(state, delta)
