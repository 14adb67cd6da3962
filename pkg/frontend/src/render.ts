/**
 * String renderers for the dashboard views. Keeping rendering as pure
 * functions of the view-model makes the views testable without a DOM.
 */

import type { DiffPayload, InstructionEntry, PreferenceEntry, ToolEntry } from "./api.js";
import {
  formatCountdown,
  type MetricsSummary,
  type QueueRow,
  type Timeline,
  type ToolReviewRow,
  type TraceRow,
} from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function short(commit: string): string {
  return commit.slice(0, 10);
}

// --- candidate queue -------------------------------------------------------

export function renderCandidateQueue(rows: QueueRow[]): string {
  if (rows.length === 0) {
    return `<section id="queue"><h2>Candidate queue</h2><p class="empty">no candidates yet</p></section>`;
  }
  const body = rows
    .map((row) => {
      const countdown =
        row.countdownSeconds !== null
          ? `<span class="countdown" data-candidate="${escapeHtml(row.id)}">${formatCountdown(row.countdownSeconds)}</span>`
          : "-";
      const veto = `<button data-action="veto" data-candidate="${escapeHtml(row.id)}"${row.vetoEnabled ? "" : " disabled"}>Veto</button>`;
      const verdict = row.accepted === null ? "-" : row.accepted ? "accepted" : "rejected";
      return (
        `<tr class="phase-${row.phase}">` +
        `<td>${escapeHtml(row.id)}</td>` +
        `<td class="lifecycle">${escapeHtml(row.lifecycle)}</td>` +
        `<td>${escapeHtml(row.windowFill)}</td>` +
        `<td>${row.repairCount}</td>` +
        `<td>${verdict}</td>` +
        `<td class="p-value">${row.pValueRaw === null ? "-" : escapeHtml(row.pValueRaw)}</td>` +
        `<td>${countdown}</td>` +
        `<td>${veto}</td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<section id="queue"><h2>Candidate queue</h2><table>` +
    `<thead><tr><th>id</th><th>lifecycle</th><th>window</th><th>repairs</th>` +
    `<th>verdict</th><th>p-value</th><th>veto window</th><th></th></tr></thead>` +
    `<tbody>${body}</tbody></table></section>`
  );
}

// --- state diff --------------------------------------------------------------

function entryLabel(entry: InstructionEntry | PreferenceEntry | ToolEntry): string {
  if ("text" in entry) return `${entry.id}: ${entry.text}`;
  if ("value" in entry) return `${entry.key} = ${entry.value}`;
  return `${entry.name} (${entry.status})`;
}

function renderComponentDiff<E extends InstructionEntry | PreferenceEntry | ToolEntry>(
  title: string,
  diff: { inserts: E[]; deletes: E[]; modifies: { before: E; after: E }[] },
): string {
  if (diff.inserts.length + diff.deletes.length + diff.modifies.length === 0) return "";
  const lines = [
    ...diff.inserts.map((e) => `<li class="insert">+ ${escapeHtml(entryLabel(e))}</li>`),
    ...diff.deletes.map((e) => `<li class="delete">- ${escapeHtml(entryLabel(e))}</li>`),
    ...diff.modifies.map(
      (m) =>
        `<li class="modify">~ ${escapeHtml(entryLabel(m.before))} <span class="arrow">to</span> ${escapeHtml(entryLabel(m.after))}</li>`,
    ),
  ];
  return `<h3>${escapeHtml(title)}</h3><ul>${lines.join("")}</ul>`;
}

export function renderStateDiff(diff: DiffPayload, stateHash: string): string {
  const sections =
    renderComponentDiff("Instructions", diff.diff.instructions) +
    renderComponentDiff("Preferences", diff.diff.preferences) +
    renderComponentDiff("Tools", diff.diff.tools);
  const body = sections || `<p class="empty">serving state equals base ${short(diff.a)}</p>`;
  return (
    `<section id="diff"><h2>State diff</h2>` +
    `<p class="meta">base ${short(diff.a)} vs serving ${short(diff.b)} (state ${short(stateHash)})</p>` +
    body +
    `</section>`
  );
}

// --- gate trace ----------------------------------------------------------------

export function renderGateTrace(rows: TraceRow[]): string {
  if (rows.length === 0) {
    return `<section id="trace"><h2>Gate trace</h2><p class="empty">no decisions yet</p></section>`;
  }
  const body = rows
    .map(
      (row) =>
        `<tr class="${row.marker === "ACCEPT" ? "accept" : "reject"}">` +
        `<td>${escapeHtml(row.candidateId)}</td>` +
        `<td>${row.decidedAt}</td>` +
        `<td>${escapeHtml(row.testUsed)}</td>` +
        `<td>${row.meanPrev}</td>` +
        `<td>${row.meanNew}</td>` +
        `<td class="p-value">${escapeHtml(row.pValueRaw)}</td>` +
        `<td>tau=${row.tau} alpha=${row.alpha}</td>` +
        `<td class="marker">${row.marker}</td></tr>`,
    )
    .join("");
  return (
    `<section id="trace"><h2>Gate trace</h2><table>` +
    `<thead><tr><th>candidate</th><th>decided</th><th>test</th><th>mean prev</th>` +
    `<th>mean new</th><th>p-value</th><th>gate</th><th></th></tr></thead>` +
    `<tbody>${body}</tbody></table></section>`
  );
}

// --- rating timeline -------------------------------------------------------------

export function renderTimeline(timeline: Timeline, summary: MetricsSummary): string {
  const width = 640;
  const height = 120;
  const points = timeline.points;
  let svg = "";
  if (points.length > 1) {
    const t0 = points[0].at;
    const t1 = points[points.length - 1].at;
    const span = Math.max(1e-9, t1 - t0);
    const x = (at: number): number => ((at - t0) / span) * (width - 20) + 10;
    const y = (rating: number): number => height - 15 - ((rating - 1) / 4) * (height - 30);
    const path = points.map((p, i) => `${i === 0 ? "M" : "L"}${x(p.at).toFixed(1)},${y(p.rating).toFixed(1)}`).join(" ");
    const markers = timeline.alarms
      .map(
        (alarm) =>
          `<line class="alarm alarm-${escapeHtml(alarm.monitor)}" x1="${x(alarm.at).toFixed(1)}" y1="5" ` +
          `x2="${x(alarm.at).toFixed(1)}" y2="${height - 5}" />`,
      )
      .join("");
    svg = `<svg viewBox="0 0 ${width} ${height}" role="img"><path class="ratings" d="${path}" fill="none"/>${markers}</svg>`;
  }
  const stats = [
    `sliding mean ${summary.slidingMean ?? "n/a"}`,
    `prior ${summary.priorMean}`,
    `ewma ${summary.ewma ?? "n/a"}`,
    `cusum ${summary.cusumNeg ?? "n/a"}`,
    `budget ${summary.budget}/${summary.budgetThreshold}`,
    `distillations ${summary.distillEvents}`,
  ].join(" | ");
  const alarmCount = timeline.alarms.length;
  const banner = summary.anyAlarm
    ? `<p class="alarm-banner">drift alarm active</p>`
    : alarmCount > 0
      ? `<p class="meta">${alarmCount} alarm marker${alarmCount === 1 ? "" : "s"} in window</p>`
      : "";
  return `<section id="timeline"><h2>Rating timeline</h2>${banner}${svg}<p class="meta">${escapeHtml(stats)}</p></section>`;
}

// --- quarantined tool review ------------------------------------------------------

export function renderToolReview(rows: ToolReviewRow[]): string {
  if (rows.length === 0) {
    return `<section id="tools"><h2>Tool review</h2><p class="empty">no quarantined tools</p></section>`;
  }
  const body = rows
    .map(
      (row) =>
        `<details><summary>${escapeHtml(row.name)} <code>${escapeHtml(row.signature)}</code></summary>` +
        `<pre class="diff">${escapeHtml(row.failureDiff ?? "no failure diff retained")}</pre></details>`,
    )
    .join("");
  return `<section id="tools"><h2>Tool review</h2>${body}</section>`;
}

// --- page assembly ------------------------------------------------------------------

export interface PageModel {
  queue: QueueRow[];
  diff: DiffPayload;
  stateHash: string;
  trace: TraceRow[];
  timeline: Timeline;
  metrics: MetricsSummary;
  tools: ToolReviewRow[];
  error: string | null;
  connected: boolean;
}

export function renderDashboard(model: PageModel): string {
  const banner = !model.connected
    ? `<div class="banner error">connection lost; retrying</div>`
    : model.error
      ? `<div class="banner error">${escapeHtml(model.error)}</div>`
      : "";
  return (
    banner +
    renderCandidateQueue(model.queue) +
    renderStateDiff(model.diff, model.stateHash) +
    renderGateTrace(model.trace) +
    renderTimeline(model.timeline, model.metrics) +
    renderToolReview(model.tools)
  );
}
