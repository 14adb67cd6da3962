"""ilws-forge: a control plane for gated, versioned evolution of an LLM
agent's instruction state.

The package versions a typed knowledge state (instructions, user
preferences, tools), applies reflection-proposed deltas provisionally,
gates them with a sliding-window statistical test, repairs or rolls back
failures, enforces tool-code policy, tracks an edit budget, and compiles
rating-weighted distillation datasets.  A deterministic mock backbone and
reflection engine make every mechanism testable offline.
"""

__version__ = "0.1.0"
