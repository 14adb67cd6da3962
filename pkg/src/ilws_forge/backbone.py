"""Backbone adapters: the frozen language model behind the session path.

The mock adapter synthesizes output as a digest of (seed, state hash,
input) so instruction changes visibly alter outputs while replays stay
byte-identical.  The external adapter posts to an HTTP endpoint and maps
every failure to BackboneUnavailable.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional, Protocol

import httpx

from .config import EndpointConfig
from .errors import BackboneUnavailable
from .knowledge import ComposedPrompt


class BackboneAdapter(Protocol):
    def generate(self, input_text: str, prompt: ComposedPrompt, state_hash: str,
                 ephemeral_context: Optional[str] = None) -> str: ...


@dataclass(frozen=True)
class MockBackbone:
    seed: int = 0

    def generate(self, input_text: str, prompt: ComposedPrompt, state_hash: str,
                 ephemeral_context: Optional[str] = None) -> str:
        material = f"{self.seed}|{state_hash}|{input_text}|{ephemeral_context or ''}"
        digest = hashlib.sha256(material.encode("utf-8")).hexdigest()[:12]
        return f"ack[{digest}] {input_text[:80]}"


class ExternalBackbone:
    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self._transport = transport

    def generate(self, input_text: str, prompt: ComposedPrompt, state_hash: str,
                 ephemeral_context: Optional[str] = None) -> str:
        headers = {"content-type": "application/json"}
        token = os.environ.get(self.config.token_env, "") if self.config.token_env else ""
        if token:
            headers["authorization"] = f"Bearer {token}"
        body = {
            "input": input_text,
            "system_prompt": prompt.text,
            "ephemeral_context": ephemeral_context,
        }
        try:
            with httpx.Client(transport=self._transport, timeout=self.config.timeout_s) as client:
                response = client.post(self.config.endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackboneUnavailable(f"backbone request failed: {exc}") from exc
        if response.status_code != 200:
            raise BackboneUnavailable(f"backbone returned {response.status_code}")
        try:
            doc = response.json()
            return str(doc["output"])
        except (ValueError, KeyError) as exc:
            raise BackboneUnavailable(f"backbone response malformed: {exc}") from exc


def build_backbone(config: EndpointConfig) -> BackboneAdapter:
    if config.kind == "mock":
        return MockBackbone(seed=config.seed)
    return ExternalBackbone(config)
