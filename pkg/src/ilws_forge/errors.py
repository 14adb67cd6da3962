"""Exception hierarchy for the control plane.

Every error raised by this package derives from ForgeError so callers can
catch domain failures without swallowing programming errors.
"""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all control-plane errors."""


# --- knowledge state / delta algebra ---------------------------------------

class UnknownTarget(ForgeError):
    """A modify/delete referenced an id that does not exist in the component."""


# Alias used by the self-modification call parser.
UnknownTargetId = UnknownTarget


class DuplicateId(ForgeError):
    """An insert collided with an existing id/key/name."""


class InvariantViolation(ForgeError):
    """An entry payload or state document failed a structural invariant."""


# --- statistics --------------------------------------------------------------

class SampleTooSmall(ForgeError):
    """A sample was outside the size range required by a test."""


class ConstantSample(ForgeError):
    """A zero-variance sample where the test requires spread."""


class InvalidRating(ForgeError):
    """A rating outside the 1..5 scale."""


# --- candidate lifecycle ------------------------------------------------------

class WarmupIncomplete(ForgeError):
    """Candidate opened before the rating buffer first filled."""


class CandidateInFlight(ForgeError):
    """A second candidate was opened while one is still unresolved."""


class WindowIncomplete(ForgeError):
    """Gate evaluation requested before the evaluation window filled."""


class NotRepairable(ForgeError):
    """Repair requested in the wrong lifecycle state or after the one allowed repair."""


class VetoWindowClosed(ForgeError):
    """Veto arrived after the review window deadline."""


class NotAccepted(ForgeError):
    """Veto requested for a candidate that is not in the accepted state."""


# --- reflection ---------------------------------------------------------------

class EngineUnavailable(ForgeError):
    """The reflection engine could not be reached within the retry budget."""


class ReflectionTimeout(EngineUnavailable):
    """The reflection engine did not answer within the configured timeout."""


class UnparseableOutput(ForgeError):
    """Engine output failed schema validation; raw payload is quarantined."""

    def __init__(self, message: str, raw: object = None):
        super().__init__(message)
        self.raw = raw


class MalformedArguments(ForgeError):
    """A self-modification call carried missing or ill-typed arguments."""


# --- tool policy ----------------------------------------------------------------

class PolicyNotPassed(ForgeError):
    """Tool registration attempted without a passing policy report."""


class RunnerUnavailable(ForgeError):
    """No test runner is configured/usable for the tool gate."""


class ToolTestTimeout(ForgeError):
    """The tool's test scaffold exceeded its time limit."""


class UnknownTool(ForgeError):
    """Operation on a tool name absent from the registry."""


class PathViolation(ForgeError):
    """A filename escaped the sandbox (absolute path or traversal)."""


# --- persistence ------------------------------------------------------------------

class StorageFailure(ForgeError):
    """Underlying storage failed an append/write."""


class UnknownRef(ForgeError):
    """Commit id or tag label did not resolve."""


class DuplicateLabel(ForgeError):
    """Tag label already exists (tags are immutable)."""


# --- budget / distillation ----------------------------------------------------------

class UnmatchedDebit(ForgeError):
    """Budget debit without a matching prior credit for that candidate."""


class UnresolvableCommit(ForgeError):
    """A session pins a state commit that the store cannot resolve."""


class EmptyDataset(ForgeError):
    """Dataset export invoked with zero rows."""


# --- service / simulator --------------------------------------------------------------

class BackboneUnavailable(ForgeError):
    """The language-model backbone could not produce an output."""


class ConfigError(ForgeError):
    """Configuration file missing, ill-formed, or failing validation."""
