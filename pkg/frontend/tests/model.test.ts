/** Unit tests for the pure view-model and rendering helpers. */

import { describe, expect, it } from "vitest";

import { annotateRawPValues, type CandidatesPayload, type CandidateView } from "../src/api.js";
import {
  buildQueue,
  buildTimeline,
  diffTarget,
  formatCountdown,
  queueRow,
} from "../src/model.js";
import { escapeHtml } from "../src/render.js";

function candidate(overrides: Partial<CandidateView>): CandidateView {
  return {
    id: "cand-000001",
    lifecycle: "provisional",
    base_commit: "base",
    provisional_commit: "prov",
    serving_commit: "prov",
    opened_at: 1,
    repair_count: 0,
    prev_window: [3, 3, 3],
    new_window: [4],
    size: 3,
    decision: null,
    veto_deadline: null,
    veto_resolved: false,
    quarantine_tag: null,
    ...overrides,
  };
}

describe("formatCountdown", () => {
  it("renders mm:ss and clamps at zero", () => {
    expect(formatCountdown(120)).toBe("02:00");
    expect(formatCountdown(61.9)).toBe("01:01");
    expect(formatCountdown(0)).toBe("00:00");
    expect(formatCountdown(-5)).toBe("00:00");
  });
});

describe("queueRow", () => {
  it("marks in-flight candidates as evaluating with no countdown", () => {
    const row = queueRow(candidate({}), 5);
    expect(row.phase).toBe("evaluating");
    expect(row.countdownSeconds).toBeNull();
    expect(row.vetoEnabled).toBe(false);
    expect(row.windowFill).toBe("1/5");
  });

  it("enables veto exactly while the server reports seconds left", () => {
    const open = queueRow(
      candidate({ lifecycle: "accepted", veto_deadline: 100, veto_seconds_left: 12 }), 5,
    );
    expect(open.phase).toBe("veto-window");
    expect(open.vetoEnabled).toBe(true);
    const closed = queueRow(
      candidate({ lifecycle: "accepted", veto_deadline: 100, veto_seconds_left: 0 }), 5,
    );
    expect(closed.phase).toBe("resolved");
    expect(closed.vetoEnabled).toBe(false);
    const resolved = queueRow(
      candidate({ lifecycle: "accepted", veto_deadline: 100, veto_resolved: true, veto_seconds_left: 50 }), 5,
    );
    expect(resolved.vetoEnabled).toBe(false);
  });

  it("never enables veto for terminal candidates", () => {
    for (const lifecycle of ["vetoed", "rolled_back"]) {
      expect(queueRow(candidate({ lifecycle }), 5).vetoEnabled).toBe(false);
    }
  });
});

describe("buildQueue", () => {
  it("orders evaluating first, then veto-window, then history newest-first", () => {
    const payload: CandidatesPayload = {
      server_time: 10,
      current: null,
      candidates: [
        candidate({ id: "cand-1", lifecycle: "rolled_back" }),
        candidate({ id: "cand-2", lifecycle: "accepted", veto_seconds_left: 9 }),
        candidate({ id: "cand-3", lifecycle: "vetoed" }),
        candidate({ id: "cand-4", lifecycle: "repaired_provisional" }),
      ],
    };
    expect(buildQueue(payload, 5).map((r) => r.id)).toEqual(["cand-4", "cand-2", "cand-3", "cand-1"]);
  });
});

describe("buildTimeline", () => {
  it("collects rated sessions and alarm markers", () => {
    const timeline = buildTimeline([
      { seq: 0, kind: "session", at: 1, payload: { phase: "created", id: "s1" } },
      { seq: 1, kind: "session", at: 2, payload: { phase: "rated", session_id: "s1", rating: 4 } },
      { seq: 2, kind: "alarm", at: 3, payload: { monitor: "ewma", value: 2.1 } },
      { seq: 3, kind: "gate", at: 4, payload: {} },
    ]);
    expect(timeline.points).toEqual([{ at: 2, rating: 4 }]);
    expect(timeline.alarms).toEqual([{ at: 3, monitor: "ewma" }]);
  });
});

describe("diffTarget", () => {
  it("diffs the newest candidate's base against serving", () => {
    const payload: CandidatesPayload = {
      server_time: 1,
      current: null,
      candidates: [candidate({ id: "c1", base_commit: "b1" }), candidate({ id: "c2", base_commit: "b2" })],
    };
    expect(diffTarget(payload, "head")).toEqual({ a: "b2", b: "head" });
  });

  it("falls back to serving-vs-serving with no candidates", () => {
    const payload: CandidatesPayload = { server_time: 1, current: null, candidates: [] };
    expect(diffTarget(payload, "head")).toEqual({ a: "head", b: "head" });
  });
});

describe("annotateRawPValues", () => {
  it("pairs raw tokens with objects in document order", () => {
    const body = '{"a":{"p_value":3.1e-08},"list":[{"p_value":0.5},{"p_value":1e-07}]}';
    const doc = JSON.parse(body) as {
      a: { p_value: number; p_value_raw?: string };
      list: { p_value: number; p_value_raw?: string }[];
    };
    annotateRawPValues(doc, body);
    expect(doc.a.p_value_raw).toBe("3.1e-08");
    expect(doc.list[0].p_value_raw).toBe("0.5");
    expect(doc.list[1].p_value_raw).toBe("1e-07");
    // float round-trip would have lost the exponent formatting
    expect(String(doc.list[1].p_value)).toBe("1e-7");
  });
});

describe("escapeHtml", () => {
  it("escapes markup-significant characters", () => {
    expect(escapeHtml('<img src=x onerror="a&b">')).toBe(
      "&lt;img src=x onerror=&quot;a&amp;b&quot;&gt;",
    );
  });
});
