"""Statistical engine: gate tests, normality check, and drift monitors."""

from .engine import (
    BACKEND_NAME,
    EXACT_LIMIT,
    MANN_WHITNEY,
    WELCH,
    DriftMonitorState,
    DriftParams,
    TestResult,
    cusum_update,
    ewma_update,
    mann_whitney_one_sided,
    run_gate_test,
    select_test,
    shapiro_wilk,
    validate_sample,
    welch_one_sided,
)

__all__ = [
    "BACKEND_NAME",
    "EXACT_LIMIT",
    "MANN_WHITNEY",
    "WELCH",
    "DriftMonitorState",
    "DriftParams",
    "TestResult",
    "cusum_update",
    "ewma_update",
    "mann_whitney_one_sided",
    "run_gate_test",
    "select_test",
    "shapiro_wilk",
    "validate_sample",
    "welch_one_sided",
]
