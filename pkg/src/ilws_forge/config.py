"""Service configuration: loaded once at startup, immutable thereafter.

File format is JSON (see README for a commented example).  The budget
threshold and the prompt token budget are deliberately mandatory: there are
no defensible defaults, so deployments must choose.  Secrets (auth tokens,
engine credentials) come from environment variables named in the config;
literal values are accepted for tests.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .gate import GateConfig


@dataclass(frozen=True)
class DriftConfig:
    lam: float = 0.2
    L: float = 3.0
    k_factor: float = 0.5
    h_factor: float = 4.0
    sigma_floor: float = 0.25

    def as_payload(self) -> dict:
        return {
            "L": self.L,
            "h_factor": self.h_factor,
            "k_factor": self.k_factor,
            "lam": self.lam,
            "sigma_floor": self.sigma_floor,
        }


@dataclass(frozen=True)
class EndpointConfig:
    kind: str = "mock"  # "mock" | "external"
    endpoint: str = ""
    timeout_s: float = 10.0
    retries: int = 2
    max_response_bytes: int = 262144
    token_env: str = ""
    seed: int = 0  # mock backbone determinism seed

    def __post_init__(self):
        if self.kind not in ("mock", "external"):
            raise ConfigError(f"endpoint kind must be mock or external, got {self.kind!r}")
        if self.kind == "external" and not self.endpoint:
            raise ConfigError("external endpoint requires an endpoint URL")


@dataclass(frozen=True)
class AuthConfig:
    operator_token: str = ""
    admin_token: str = ""

    @staticmethod
    def from_doc(doc: dict) -> "AuthConfig":
        def resolve(key: str) -> str:
            env_name = doc.get(f"{key}_env")
            if env_name:
                value = os.environ.get(env_name, "")
                if not value:
                    raise ConfigError(f"environment variable {env_name!r} for {key} is unset")
                return value
            return doc.get(key, "")

        return AuthConfig(operator_token=resolve("operator_token"), admin_token=resolve("admin_token"))


@dataclass(frozen=True)
class ForgeConfig:
    gate: GateConfig
    budget_threshold: int  # M: edit-budget tokens before the distillation trigger
    prompt_budget: int  # C: composed-prompt token budget
    storage_root: Optional[Path] = None  # None keeps everything in memory
    sandbox_root: Optional[Path] = None
    export_dir: Optional[Path] = None
    reflection: EndpointConfig = field(default_factory=EndpointConfig)
    backbone: EndpointConfig = field(default_factory=EndpointConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    auth: AuthConfig = field(default_factory=AuthConfig)
    audit_fsync: bool = False

    def __post_init__(self):
        if self.budget_threshold <= 0:
            raise ConfigError(f"budget_threshold must be positive, got {self.budget_threshold}")
        if self.prompt_budget <= 0:
            raise ConfigError(f"prompt_budget must be positive, got {self.prompt_budget}")

    def as_payload(self) -> dict:
        return {
            "budget_threshold": self.budget_threshold,
            "drift": self.drift.as_payload(),
            "gate": self.gate.as_payload(),
            "prompt_budget": self.prompt_budget,
        }


def _require(doc: dict, key: str) -> object:
    if key not in doc:
        raise ConfigError(f"config is missing required key {key!r}")
    return doc[key]


def config_from_doc(doc: dict) -> ForgeConfig:
    try:
        gate_doc = dict(_require(doc, "gate"))
        gate = GateConfig(
            n_win=int(_require(gate_doc, "n_win")),
            tau=float(gate_doc.get("tau", 0.05)),
            alpha=float(gate_doc.get("alpha", 0.05)),
            review_window=float(gate_doc.get("review_window", 3600.0)),
            alpha_normality=float(gate_doc.get("alpha_normality", 0.05)),
        )
        refl_doc = dict(doc.get("reflection", {}))
        backbone_doc = dict(doc.get("backbone", {}))
        drift_doc = dict(doc.get("drift", {}))
        return ForgeConfig(
            gate=gate,
            budget_threshold=int(_require(doc, "budget_threshold")),
            prompt_budget=int(_require(doc, "prompt_budget")),
            storage_root=Path(doc["storage_root"]) if doc.get("storage_root") else None,
            sandbox_root=Path(doc["sandbox_root"]) if doc.get("sandbox_root") else None,
            export_dir=Path(doc["export_dir"]) if doc.get("export_dir") else None,
            reflection=EndpointConfig(**refl_doc),
            backbone=EndpointConfig(**backbone_doc),
            drift=DriftConfig(**drift_doc),
            auth=AuthConfig.from_doc(dict(doc.get("auth", {}))),
            audit_fsync=bool(doc.get("audit_fsync", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: Path) -> ForgeConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_doc(doc)
