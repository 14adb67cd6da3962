/**
 * Local HTTP fixture server for dashboard tests.
 *
 * Serves payloads recorded from the real control plane: the `before_*`
 * set has candidate cand-000001 accepted with its veto window open; a
 * successful POST veto switches every route to the `after_*` set
 * (candidate vetoed, serving state back at base, empty diff). Setting
 * `state.windowClosed` makes the veto endpoint answer 409 with the same
 * body shape the real service uses.
 */

import { readFileSync } from "node:fs";
import { createServer, type Server } from "node:http";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const FIXTURE_DIR = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export interface FixtureMeta {
  base_commit: string;
  serving_commit: string;
  serving_after: string;
  candidate_id: string;
  veto_deadline: number;
  base_state_hash: string;
}

export interface FixtureState {
  vetoed: boolean;
  windowClosed: boolean;
}

export interface FixtureServer {
  baseUrl: string;
  server: Server;
  state: FixtureState;
  meta: FixtureMeta;
  close(): Promise<void>;
}

function load(name: string): string {
  return readFileSync(join(FIXTURE_DIR, name), "utf-8");
}

export function loadMeta(): FixtureMeta {
  return JSON.parse(load("meta.json")) as FixtureMeta;
}

export async function startFixtureServer(adminToken = "adm-token"): Promise<FixtureServer> {
  const state: FixtureState = { vetoed: false, windowClosed: false };
  const meta = loadMeta();
  const vetoPath = /^\/v1\/candidates\/([^/]+)\/veto$/;

  const server = createServer((req, res) => {
    const url = new URL(req.url ?? "/", "http://localhost");
    const phase = state.vetoed ? "after" : "before";
    const send = (code: number, body: string): void => {
      res.writeHead(code, { "content-type": "application/json" });
      res.end(body);
    };

    const vetoMatch = req.method === "POST" ? vetoPath.exec(url.pathname) : null;
    if (vetoMatch) {
      if (req.headers.authorization !== `Bearer ${adminToken}`) {
        send(403, JSON.stringify({ detail: "admin role required" }));
        return;
      }
      if (vetoMatch[1] !== meta.candidate_id) {
        send(404, JSON.stringify({ detail: `unknown candidate ${vetoMatch[1]}` }));
        return;
      }
      if (state.windowClosed || state.vetoed) {
        send(409, JSON.stringify({
          error: "VetoWindowClosed",
          detail: `veto window for ${meta.candidate_id} closed at ${meta.veto_deadline}`,
        }));
        return;
      }
      state.vetoed = true;
      send(200, JSON.stringify({ candidate_id: meta.candidate_id, lifecycle: "vetoed" }));
      return;
    }

    if (req.method !== "GET") {
      send(405, JSON.stringify({ detail: "method not allowed" }));
      return;
    }
    if (url.pathname === "/v1/state") {
      send(200, load(`${phase}_state.json`));
    } else if (url.pathname === "/v1/candidates") {
      send(200, load(`${phase}_candidates.json`));
    } else if (url.pathname === "/v1/gate/decisions") {
      send(200, load(`${phase}_decisions.json`));
    } else if (url.pathname === "/v1/metrics") {
      send(200, load(`${phase}_metrics.json`));
    } else if (url.pathname === "/v1/audit") {
      send(200, load(`${phase}_audit.json`));
    } else if (url.pathname.startsWith("/v1/diff/")) {
      // the dashboard must ask for base-vs-serving of the newest candidate
      const expected = state.vetoed
        ? `/v1/diff/${meta.base_commit}/${meta.serving_after}`
        : `/v1/diff/${meta.base_commit}/${meta.serving_commit}`;
      if (url.pathname !== expected) {
        send(404, JSON.stringify({ detail: `unexpected diff request ${url.pathname}` }));
        return;
      }
      send(200, load(`${phase}_diff.json`));
    } else {
      send(404, JSON.stringify({ detail: "not found" }));
    }
  });

  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const address = server.address();
  const port = typeof address === "object" && address !== null ? address.port : 0;
  return {
    baseUrl: `http://127.0.0.1:${port}`,
    server,
    state,
    meta,
    close: () => new Promise<void>((resolve) => server.close(() => resolve())),
  };
}
