from __future__ import annotations

import importlib

import pytest

from ilws_forge.backbone import MockBackbone
from ilws_forge.config import ForgeConfig
from ilws_forge.gate import GateConfig
from ilws_forge.knowledge import (
    InstructionEntry,
    KnowledgeState,
    Origin,
    Section,
    ToolEntry,
    ToolStatus,
    UserPreference,
)
from ilws_forge.loop import ControlLoop
from ilws_forge.persistence import AuditLog, CommitStore
from ilws_forge.reflection import MockReflectionEngine
from ilws_forge.stats import _kernels_py


def _load_backends():
    backends = [pytest.param(_kernels_py, id="python")]
    try:
        ck = importlib.import_module("ilws_forge.stats._ckernels")
        backends.append(pytest.param(ck, id="compiled"))
    except ImportError:
        backends.append(pytest.param(None, id="compiled", marks=pytest.mark.skip(reason="extension not built")))
    return backends


@pytest.fixture(params=_load_backends())
def kernels(request):
    """Run kernel-level tests against both the pure-Python and compiled backends."""
    return request.param


def make_instruction(ident="i1", text="php-fpm serves web traffic", section=Section.GLOBAL,
                     created_at=1.0, origin=Origin.MANUAL) -> InstructionEntry:
    return InstructionEntry(id=ident, section=section, text=text, created_at=created_at, origin=origin)


def make_preference(key="tone", value="concise", created_at=1.0) -> UserPreference:
    return UserPreference(key=key, value=value, created_at=created_at)


def make_tool(name="t1", signature="t1(path: str) -> str", code="def t1(path):\n    return path\n",
              status=ToolStatus.ACTIVE, created_at=1.0) -> ToolEntry:
    return ToolEntry(name=name, signature=signature, code=code, status=status,
                     sandbox_dir=name, created_at=created_at)


@pytest.fixture
def sample_state() -> KnowledgeState:
    return KnowledgeState(
        instructions=(
            make_instruction("i1", "check php-fpm for web traffic", Section.GLOBAL),
            make_instruction("i2", "prefer exact versions", Section.PRODUCT),
            make_instruction("i3", "tenant acme uses redis", Section.TENANT),
        ),
        preferences=(make_preference(),),
        tools=(make_tool(),),
    )


class LoopHarness:
    """Drives a ControlLoop with a deterministic event clock."""

    def __init__(self, n_win=5, tau=0.05, alpha=0.05, review_window=4.0,
                 budget_threshold=1000, repair_enabled=True, engine=None, **config_kwargs):
        self.config = ForgeConfig(
            gate=GateConfig(n_win=n_win, tau=tau, alpha=alpha, review_window=review_window),
            budget_threshold=budget_threshold,
            prompt_budget=config_kwargs.pop("prompt_budget", 100000),
            **config_kwargs,
        )
        self.engine = engine if engine is not None else MockReflectionEngine(repair_enabled=repair_enabled)
        self.loop = ControlLoop(
            self.config, CommitStore(), AuditLog(), self.engine, MockBackbone(seed=7),
        )
        self.t = 0.0

    def tick(self) -> float:
        self.t += 1.0
        return self.t

    def session(self, text: str, rating: int, ephemeral=None) -> dict:
        record = self.loop.create_session(text, at=self.tick(), ephemeral_context=ephemeral)
        return self.loop.rate_session(record.id, rating, at=self.tick())

    def warm_up(self, ratings=None):
        ratings = ratings if ratings is not None else [3] * self.config.gate.n_win
        for i, r in enumerate(ratings):
            self.session(f"routine warm-up {i}", r)

    def fill_window(self, ratings):
        out = None
        for i, r in enumerate(ratings):
            out = self.session(f"routine window {i}", r)
        return out


@pytest.fixture
def harness() -> LoopHarness:
    return LoopHarness()
