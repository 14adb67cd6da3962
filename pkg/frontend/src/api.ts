/**
 * Typed client for the /v1 control-plane API.
 *
 * The dashboard never computes gate statistics itself; every number it
 * shows is server-provided. p-values additionally keep their raw JSON
 * token (`pValueRaw`) so the UI can display exactly the bytes the server
 * sent, immune to float re-formatting drift.
 */

export interface DashboardConfig {
  baseUrl: string;
  operatorToken?: string;
  adminToken?: string;
}

export interface GateConfigPayload {
  alpha: number;
  alpha_normality: number;
  n_win: number;
  review_window: number;
  tau: number;
}

export interface GateDecision {
  accepted: boolean;
  candidate_id: string;
  config: GateConfigPayload;
  decided_at: number;
  mean_new: number;
  mean_prev: number;
  p_value: number;
  p_value_raw?: string;
  statistic: number;
  test_used: string;
}

export interface CandidateView {
  id: string;
  lifecycle: string;
  base_commit: string;
  provisional_commit: string;
  serving_commit: string;
  opened_at: number;
  repair_count: number;
  prev_window: number[];
  new_window: number[];
  size: number;
  decision: GateDecision | null;
  veto_deadline: number | null;
  veto_resolved: boolean;
  quarantine_tag: string | null;
  veto_seconds_left?: number;
}

export interface CandidatesPayload {
  server_time: number;
  current: CandidateView | null;
  candidates: CandidateView[];
}

export interface InstructionEntry {
  created_at: number;
  id: string;
  origin: string;
  section: string;
  text: string;
}

export interface PreferenceEntry {
  created_at: number;
  key: string;
  value: string;
}

export interface ToolEntry {
  code: string;
  created_at: number;
  name: string;
  sandbox_dir: string;
  signature: string;
  status: string;
}

export interface StatePayload {
  serving_commit: string;
  state_hash: string;
  state: {
    schema_version: string;
    instructions: InstructionEntry[];
    preferences: PreferenceEntry[];
    tools: ToolEntry[];
  };
}

export interface ComponentDiff<E> {
  inserts: E[];
  deletes: E[];
  modifies: { before: E; after: E }[];
}

export interface DiffPayload {
  a: string;
  b: string;
  diff: {
    instructions: ComponentDiff<InstructionEntry>;
    preferences: ComponentDiff<PreferenceEntry>;
    tools: ComponentDiff<ToolEntry>;
  };
}

export interface MetricsPayload {
  server_time: number;
  backend: string | null;
  warmed_up: boolean;
  prior_mean: number;
  sliding_mean: number | null;
  sliding_ci95: [number, number] | null;
  buffer_fill: number;
  n_win: number;
  budget: number;
  budget_threshold: number;
  ewma: number | null;
  ewma_alarm: boolean;
  cusum_neg: number | null;
  cusum_pos: number | null;
  cusum_alarm: boolean;
  counters: Record<string, number>;
  distill_events: number;
  current_candidate: CandidateView | null;
}

export interface AuditEvent {
  seq: number;
  kind: string;
  at: number;
  payload: Record<string, unknown>;
}

export interface DecisionsPayload {
  decisions: GateDecision[];
}

export interface AuditPayload {
  events: AuditEvent[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

const P_VALUE_TOKEN = /"p_value":\s*(-?[0-9][-+0-9.eE]*|null)/g;

/**
 * Attach the raw JSON number token of every `p_value` field to its object
 * as `p_value_raw`. JSON.parse preserves key and array order, so a
 * depth-first walk visits the fields in the same order the tokens appear
 * in the body.
 */
export function annotateRawPValues(doc: unknown, body: string): void {
  const tokens: string[] = [];
  for (const match of body.matchAll(P_VALUE_TOKEN)) tokens.push(match[1]);
  let next = 0;
  const walk = (node: unknown): void => {
    if (Array.isArray(node)) {
      node.forEach(walk);
      return;
    }
    if (node !== null && typeof node === "object") {
      for (const [key, value] of Object.entries(node as Record<string, unknown>)) {
        if (key === "p_value") {
          (node as Record<string, unknown>).p_value_raw = tokens[next] ?? String(value);
          next += 1;
        }
        walk(value);
      }
    }
  };
  walk(doc);
}

export class ApiClient {
  constructor(private readonly config: DashboardConfig) {}

  private headers(admin: boolean): Record<string, string> {
    const token = admin ? this.config.adminToken : (this.config.operatorToken ?? this.config.adminToken);
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (token) headers.authorization = `Bearer ${token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, admin = false): Promise<T> {
    const response = await fetch(`${this.config.baseUrl}${path}`, {
      method,
      headers: this.headers(admin),
    });
    const body = await response.text();
    if (!response.ok) {
      let detail = body;
      try {
        const parsed = JSON.parse(body) as { detail?: string };
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        // leave raw body as the detail
      }
      throw new ApiError(response.status, detail);
    }
    const doc = JSON.parse(body) as T;
    annotateRawPValues(doc, body);
    return doc;
  }

  state(): Promise<StatePayload> {
    return this.request("GET", "/v1/state");
  }

  candidates(): Promise<CandidatesPayload> {
    return this.request("GET", "/v1/candidates");
  }

  decisions(): Promise<DecisionsPayload> {
    return this.request("GET", "/v1/gate/decisions");
  }

  metrics(): Promise<MetricsPayload> {
    return this.request("GET", "/v1/metrics");
  }

  diff(a: string, b: string): Promise<DiffPayload> {
    return this.request("GET", `/v1/diff/${a}/${b}`);
  }

  audit(start = 0): Promise<AuditPayload> {
    return this.request("GET", `/v1/audit?start=${start}`);
  }

  veto(candidateId: string): Promise<unknown> {
    return this.request("POST", `/v1/candidates/${candidateId}/veto`, true);
  }

  revert(ref: string): Promise<unknown> {
    return this.request("POST", `/v1/revert/${ref}`, true);
  }
}
