"""Reflection engines, self-modification call parsing, and the LLM client."""

from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilws_forge.errors import (
    EngineUnavailable,
    MalformedArguments,
    ReflectionTimeout,
    UnknownTargetId,
    UnparseableOutput,
)
from ilws_forge.knowledge import Component, DeltaKind, KnowledgeState, ToolStatus
from ilws_forge.reflection import (
    ADD_USER_PREFERENCE,
    APPEND_INSTRUCTION,
    CREATE_TOOL,
    DEPRECATE_TOOL,
    MODIFY_INSTRUCTION,
    LLMEngineConfig,
    LLMReflectionEngine,
    MockReflectionEngine,
    ReflectionContext,
    SelfModCall,
    parse_self_mod_calls,
    render_calls,
    validate_reflection_payload,
)

from conftest import make_instruction, make_tool


def ctx(*user_lines, mode="propose", rating_window=(3, 3, 3), **kwargs) -> ReflectionContext:
    transcript = tuple(("user", line) for line in user_lines)
    return ReflectionContext(transcript=transcript, tool_log=(), rating_window=rating_window,
                             mode=mode, **kwargs)


def make_id_factory():
    counter = {"n": 0}

    def factory():
        counter["n"] += 1
        return f"gen-{counter['n']:03d}"

    return factory


# ---------------------------------------------------------------------------
# Mock engine
# ---------------------------------------------------------------------------


class TestMockEngine:
    def test_correction_marker_appends_instruction(self):
        out = MockReflectionEngine().reflect(ctx("correction: php-fpm serves web traffic"))
        assert len(out.calls) == 1
        call = out.calls[0]
        assert call.verb == APPEND_INSTRUCTION
        assert call.arguments["text"] == "php-fpm serves web traffic"

    def test_empty_transcript_is_no_op(self):
        out = MockReflectionEngine().reflect(ctx())
        assert out.calls == ()
        assert out.rationale["summary"] == "no-op"

    def test_two_rules_emit_in_table_order(self):
        out = MockReflectionEngine().reflect(ctx(
            "preference: tone = formal",
            "correction: check ulimit first",
        ))
        # correction rule precedes preference rule in the table
        assert [c.verb for c in out.calls] == [APPEND_INSTRUCTION, ADD_USER_PREFERENCE]

    def test_determinism(self):
        context = ctx("correction: alpha", "preference: a = b", rating_window=(1, 2, 3))
        a = MockReflectionEngine().reflect(context)
        b = MockReflectionEngine().reflect(context)
        assert a.as_dict() == b.as_dict()

    def test_tool_rule(self):
        out = MockReflectionEngine().reflect(ctx("new tool: diskcheck | diskcheck(path) | def diskcheck(path):\n    return path"))
        assert out.calls[0].verb == CREATE_TOOL
        assert out.calls[0].arguments["name"] == "diskcheck"

    def test_repair_refines_failed_delta(self):
        engine = MockReflectionEngine()
        state = KnowledgeState()
        original = parse_self_mod_calls(
            [SelfModCall(APPEND_INSTRUCTION, {"text": "try the slow path"})],
            state, id_factory=make_id_factory(), now=1.0,
        )
        out = engine.reflect(ctx("anything", mode="repair", failed_delta=original))
        assert out.calls[0].arguments["text"] == "try the slow path (refined)"

    def test_repair_disabled_returns_empty(self):
        engine = MockReflectionEngine(repair_enabled=False)
        state = KnowledgeState()
        original = parse_self_mod_calls(
            [SelfModCall(APPEND_INSTRUCTION, {"text": "x"})], state,
            id_factory=make_id_factory(), now=1.0,
        )
        out = engine.reflect(ctx("x", mode="repair", failed_delta=original))
        assert out.calls == ()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class TestParseCalls:
    def test_append_instruction_maps_to_insert(self):
        delta = parse_self_mod_calls(
            [SelfModCall(APPEND_INSTRUCTION, {"text": "new rule"})],
            KnowledgeState(), id_factory=make_id_factory(), now=2.0,
        )
        op = delta.ops[0]
        assert op.kind is DeltaKind.INSERT and op.component is Component.S
        assert op.payload.text == "new rule"

    def test_create_tool_arrives_quarantined(self):
        delta = parse_self_mod_calls(
            [SelfModCall(CREATE_TOOL, {"name": "fetcher", "signature": "fetcher()", "code": "def fetcher():\n    pass"})],
            KnowledgeState(), id_factory=make_id_factory(), now=2.0,
        )
        assert delta.ops[0].payload.status is ToolStatus.QUARANTINED

    def test_modify_unknown_instruction(self):
        with pytest.raises(UnknownTargetId):
            parse_self_mod_calls(
                [SelfModCall(MODIFY_INSTRUCTION, {"id": "missing", "text": "x"})],
                KnowledgeState(), id_factory=make_id_factory(), now=2.0,
            )

    def test_modify_can_target_pending_insert(self):
        calls = [
            SelfModCall(APPEND_INSTRUCTION, {"id": "i-new", "text": "v1"}),
            SelfModCall(MODIFY_INSTRUCTION, {"id": "i-new", "text": "v2"}),
        ]
        delta = parse_self_mod_calls(calls, KnowledgeState(), id_factory=make_id_factory(), now=2.0)
        assert [op.kind.value for op in delta.ops] == ["insert", "modify"]

    def test_preference_upsert(self):
        state = KnowledgeState()
        delta = parse_self_mod_calls(
            [SelfModCall(ADD_USER_PREFERENCE, {"key": "tone", "value": "dry"})],
            state, id_factory=make_id_factory(), now=2.0,
        )
        assert delta.ops[0].kind is DeltaKind.INSERT
        from ilws_forge.knowledge import apply_delta

        with_pref = apply_delta(state, delta)
        delta2 = parse_self_mod_calls(
            [SelfModCall(ADD_USER_PREFERENCE, {"key": "tone", "value": "warm"})],
            with_pref, id_factory=make_id_factory(), now=3.0,
        )
        assert delta2.ops[0].kind is DeltaKind.MODIFY

    def test_deprecate_tool(self):
        state = KnowledgeState(tools=(make_tool("old"),))
        delta = parse_self_mod_calls(
            [SelfModCall(DEPRECATE_TOOL, {"name": "old"})],
            state, id_factory=make_id_factory(), now=2.0,
        )
        assert delta.ops[0].payload.status is ToolStatus.DEPRECATED

    def test_render_parse_round_trip(self):
        state = KnowledgeState(
            instructions=(make_instruction("i1", "original"),),
            tools=(make_tool("keeper"),),
        )
        calls = [
            SelfModCall(APPEND_INSTRUCTION, {"id": "i2", "text": "brand new", "section": "product"}),
            SelfModCall(MODIFY_INSTRUCTION, {"id": "i1", "text": "rewritten"}),
            SelfModCall(ADD_USER_PREFERENCE, {"key": "k", "value": "v"}),
            SelfModCall(DEPRECATE_TOOL, {"name": "keeper"}),
        ]
        delta = parse_self_mod_calls(calls, state, id_factory=make_id_factory(), now=2.0)
        rendered = render_calls(delta)
        reparsed = parse_self_mod_calls(rendered, state, id_factory=make_id_factory(), now=2.0)
        assert [op.canonical_dict() for op in reparsed.ops] == [op.canonical_dict() for op in delta.ops]


# ---------------------------------------------------------------------------
# Raw payload validation
# ---------------------------------------------------------------------------


class TestValidatePayload:
    def test_valid_document(self):
        doc = {"calls": [{"verb": APPEND_INSTRUCTION, "arguments": {"text": "x"}}],
               "rationale": {"summary": "ok"}}
        out = validate_reflection_payload(doc)
        assert out.calls[0].verb == APPEND_INSTRUCTION

    def test_unknown_verb_quarantines_raw(self):
        doc = {"calls": [{"verb": "dropTables", "arguments": {}}], "rationale": {"s": 1}}
        with pytest.raises(UnparseableOutput) as err:
            validate_reflection_payload(doc)
        assert err.value.raw == doc

    def test_missing_rationale(self):
        with pytest.raises(UnparseableOutput):
            validate_reflection_payload({"calls": []})

    @given(doc=st.recursive(
        st.one_of(st.none(), st.booleans(), st.integers(), st.text(max_size=8)),
        lambda children: st.one_of(
            st.lists(children, max_size=4),
            st.dictionaries(st.text(max_size=8), children, max_size=4),
        ),
        max_leaves=12,
    ))
    @settings(max_examples=150, deadline=None)
    def test_fuzzed_documents_never_crash(self, doc):
        try:
            out = validate_reflection_payload(doc)
        except UnparseableOutput:
            return
        # anything accepted must be structurally sound
        for call in out.calls:
            assert call.verb in (
                APPEND_INSTRUCTION, MODIFY_INSTRUCTION, CREATE_TOOL, DEPRECATE_TOOL, ADD_USER_PREFERENCE,
            )

    def test_malformed_arguments(self):
        with pytest.raises(MalformedArguments):
            SelfModCall(APPEND_INSTRUCTION, {})
        with pytest.raises(MalformedArguments):
            SelfModCall("unknownVerb", {"text": "x"})


# ---------------------------------------------------------------------------
# LLM client
# ---------------------------------------------------------------------------


def _engine(handler, retries=1, timeout_s=2.0, max_response_bytes=4096) -> LLMReflectionEngine:
    config = LLMEngineConfig(endpoint="http://reflection.test/v1/reflect", retries=retries,
                             timeout_s=timeout_s, max_response_bytes=max_response_bytes)
    return LLMReflectionEngine(config, transport=httpx.MockTransport(handler))


class TestLLMEngine:
    def test_valid_response_matches_mock_handling(self):
        body = {"calls": [{"verb": APPEND_INSTRUCTION, "arguments": {"text": "from llm"}}],
                "rationale": {"summary": "diagnosed"}}

        def handler(request):
            return httpx.Response(200, json=body)

        out = _engine(handler).reflect(ctx("anything"))
        assert out.calls[0].arguments["text"] == "from llm"

    def test_unreachable_after_retries(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            raise httpx.ConnectError("refused")

        with pytest.raises(EngineUnavailable):
            _engine(handler, retries=2).reflect(ctx("x"))
        assert calls["n"] == 3

    def test_timeout_maps_to_reflection_timeout(self):
        def handler(request):
            raise httpx.ReadTimeout("slow")

        with pytest.raises(ReflectionTimeout):
            _engine(handler, retries=0).reflect(ctx("x"))

    def test_server_errors_retry_then_fail(self):
        def handler(request):
            return httpx.Response(503, text="overloaded")

        with pytest.raises(EngineUnavailable):
            _engine(handler, retries=1).reflect(ctx("x"))

    def test_oversize_response_rejected(self):
        big = {"calls": [], "rationale": {"pad": "y" * 10000}}

        def handler(request):
            return httpx.Response(200, json=big)

        with pytest.raises(UnparseableOutput) as err:
            _engine(handler, max_response_bytes=512).reflect(ctx("x"))
        assert "cap" in str(err.value)

    def test_non_json_response(self):
        def handler(request):
            return httpx.Response(200, text="<html>oops</html>")

        with pytest.raises(UnparseableOutput):
            _engine(handler).reflect(ctx("x"))

    def test_request_carries_context(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"calls": [], "rationale": {"summary": "ok"}})

        context = ReflectionContext(
            transcript=(("user", "hello"),), tool_log=(("t", "d", "ok"),),
            rating_window=(3, 4, 5), veto_flags=({"candidate_id": "cand-1"},),
        )
        _engine(handler).reflect(context)
        assert seen["rating_window"] == [3, 4, 5]
        assert seen["veto_flags"] == [{"candidate_id": "cand-1"}]
        assert seen["mode"] == "propose"
