/**
 * View-model assembly: pure functions from API payloads to render-ready
 * rows. No statistics are computed here; server time decides every
 * deadline question so the veto button state cannot drift from what the
 * server would answer.
 */

import type {
  AuditEvent,
  CandidatesPayload,
  CandidateView,
  GateDecision,
  MetricsPayload,
  StatePayload,
} from "./api.js";

export interface QueueRow {
  id: string;
  lifecycle: string;
  phase: "evaluating" | "veto-window" | "resolved";
  windowFill: string;
  repairCount: number;
  countdownSeconds: number | null;
  vetoEnabled: boolean;
  pValueRaw: string | null;
  accepted: boolean | null;
  quarantineTag: string | null;
}

const IN_FLIGHT = new Set(["provisional", "repair_pending", "repaired_provisional"]);

export function queueRow(candidate: CandidateView, nWin: number): QueueRow {
  const inFlight = IN_FLIGHT.has(candidate.lifecycle);
  const inVetoWindow =
    candidate.lifecycle === "accepted" &&
    !candidate.veto_resolved &&
    (candidate.veto_seconds_left ?? 0) > 0;
  return {
    id: candidate.id,
    lifecycle: candidate.lifecycle,
    phase: inFlight ? "evaluating" : inVetoWindow ? "veto-window" : "resolved",
    windowFill: `${candidate.new_window.length}/${nWin}`,
    repairCount: candidate.repair_count,
    countdownSeconds: inVetoWindow ? (candidate.veto_seconds_left ?? 0) : null,
    vetoEnabled: inVetoWindow,
    pValueRaw: candidate.decision?.p_value_raw ?? null,
    accepted: candidate.decision?.accepted ?? null,
    quarantineTag: candidate.quarantine_tag,
  };
}

/** The single in-flight candidate plus accepted ones still inside their
 * veto window, then resolved history (newest first). */
export function buildQueue(payload: CandidatesPayload, nWin: number): QueueRow[] {
  const rows = payload.candidates.map((c) => queueRow(c, nWin));
  const weight = (row: QueueRow): number =>
    row.phase === "evaluating" ? 0 : row.phase === "veto-window" ? 1 : 2;
  return rows
    .map((row, index) => ({ row, index }))
    .sort((a, b) => weight(a.row) - weight(b.row) || b.index - a.index)
    .map((entry) => entry.row);
}

export function formatCountdown(seconds: number): string {
  const whole = Math.max(0, Math.floor(seconds));
  const minutes = Math.floor(whole / 60);
  const rest = whole % 60;
  return `${String(minutes).padStart(2, "0")}:${String(rest).padStart(2, "0")}`;
}

export interface TraceRow {
  candidateId: string;
  decidedAt: number;
  testUsed: string;
  meanPrev: number;
  meanNew: number;
  pValueRaw: string;
  marker: "ACCEPT" | "reject";
  alpha: number;
  tau: number;
}

export function buildTrace(decisions: GateDecision[]): TraceRow[] {
  return decisions.map((d) => ({
    candidateId: d.candidate_id,
    decidedAt: d.decided_at,
    testUsed: d.test_used,
    meanPrev: d.mean_prev,
    meanNew: d.mean_new,
    pValueRaw: d.p_value_raw ?? String(d.p_value),
    marker: d.accepted ? "ACCEPT" : "reject",
    alpha: d.config.alpha,
    tau: d.config.tau,
  }));
}

export interface TimelinePoint {
  at: number;
  rating: number;
}

export interface TimelineAlarm {
  at: number;
  monitor: string;
}

export interface Timeline {
  points: TimelinePoint[];
  alarms: TimelineAlarm[];
}

/** Ratings and drift alarms straight from the audit log. */
export function buildTimeline(events: AuditEvent[]): Timeline {
  const points: TimelinePoint[] = [];
  const alarms: TimelineAlarm[] = [];
  for (const event of events) {
    if (event.kind === "session" && event.payload.phase === "rated") {
      points.push({ at: event.at, rating: Number(event.payload.rating) });
    } else if (event.kind === "alarm") {
      alarms.push({ at: event.at, monitor: String(event.payload.monitor) });
    }
  }
  return { points, alarms };
}

export interface ToolReviewRow {
  name: string;
  signature: string;
  status: string;
  failureDiff: string | null;
}

export function buildToolReview(state: StatePayload, events: AuditEvent[]): ToolReviewRow[] {
  const lastDiff = new Map<string, string>();
  for (const event of events) {
    if (event.kind !== "tool") continue;
    const name = String(event.payload.name ?? "");
    const diff = event.payload.failure_diff ?? event.payload.report;
    if (name && diff !== undefined) lastDiff.set(name, typeof diff === "string" ? diff : JSON.stringify(diff));
  }
  return state.state.tools
    .filter((tool) => tool.status === "quarantined")
    .map((tool) => ({
      name: tool.name,
      signature: tool.signature,
      status: tool.status,
      failureDiff: lastDiff.get(tool.name) ?? null,
    }));
}

export interface MetricsSummary {
  warmedUp: boolean;
  slidingMean: number | null;
  priorMean: number;
  budget: number;
  budgetThreshold: number;
  ewma: number | null;
  cusumNeg: number | null;
  anyAlarm: boolean;
  distillEvents: number;
  counters: Record<string, number>;
}

export function buildMetricsSummary(metrics: MetricsPayload): MetricsSummary {
  return {
    warmedUp: metrics.warmed_up,
    slidingMean: metrics.sliding_mean,
    priorMean: metrics.prior_mean,
    budget: metrics.budget,
    budgetThreshold: metrics.budget_threshold,
    ewma: metrics.ewma,
    cusumNeg: metrics.cusum_neg,
    anyAlarm: metrics.ewma_alarm || metrics.cusum_alarm,
    distillEvents: metrics.distill_events,
    counters: metrics.counters,
  };
}

/** Pick the diff pair the dashboard shows: what the most recent candidate
 * changed relative to its base (an empty diff after rollback/veto shows the
 * serving state is back at base). */
export function diffTarget(payload: CandidatesPayload, servingCommit: string): { a: string; b: string } {
  const latest = payload.current ?? payload.candidates[payload.candidates.length - 1] ?? null;
  if (latest === null) return { a: servingCommit, b: servingCommit };
  return { a: latest.base_commit, b: servingCommit };
}
