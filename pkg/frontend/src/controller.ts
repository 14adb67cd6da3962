/**
 * Poll-based dashboard controller: fetch snapshots, assemble the page
 * model, render, and execute the two write actions (veto, revert).
 * Server errors are surfaced verbatim; a failed poll flips the
 * connection banner without clearing the last good view.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  buildMetricsSummary,
  buildQueue,
  buildTimeline,
  buildToolReview,
  buildTrace,
  diffTarget,
} from "./model.js";
import { renderDashboard, type PageModel } from "./render.js";

export type RenderSink = (html: string, model: PageModel) => void;

export class DashboardController {
  model: PageModel | null = null;
  lastError: string | null = null;
  connected = true;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly sink: RenderSink,
  ) {}

  async refresh(): Promise<void> {
    try {
      const [state, candidates, decisions, metrics, audit] = await Promise.all([
        this.api.state(),
        this.api.candidates(),
        this.api.decisions(),
        this.api.metrics(),
        this.api.audit(),
      ]);
      const target = diffTarget(candidates, state.serving_commit);
      const diff = await this.api.diff(target.a, target.b);
      this.connected = true;
      this.model = {
        queue: buildQueue(candidates, metrics.n_win),
        diff,
        stateHash: state.state_hash,
        trace: buildTrace(decisions.decisions),
        timeline: buildTimeline(audit.events),
        metrics: buildMetricsSummary(metrics),
        tools: buildToolReview(state, audit.events),
        error: this.lastError,
        connected: true,
      };
    } catch {
      this.connected = false;
      if (this.model) {
        this.model = { ...this.model, connected: false };
      } else {
        return; // nothing to render yet; next poll retries
      }
    }
    this.sink(renderDashboard(this.model), this.model);
  }

  async veto(candidateId: string): Promise<boolean> {
    this.lastError = null;
    let ok = true;
    try {
      await this.api.veto(candidateId);
    } catch (error) {
      ok = false;
      // a 409 here means the review window closed between polls; show the
      // server's message verbatim
      this.lastError = error instanceof ApiError ? error.detail : String(error);
    }
    await this.refresh();
    return ok;
  }

  async revert(ref: string): Promise<boolean> {
    this.lastError = null;
    let ok = true;
    try {
      await this.api.revert(ref);
    } catch (error) {
      ok = false;
      this.lastError = error instanceof ApiError ? error.detail : String(error);
    }
    await this.refresh();
    return ok;
  }

  start(intervalMs: number): void {
    this.stop();
    this.timer = setInterval(() => {
      void this.refresh();
    }, intervalMs);
    void this.refresh();
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
