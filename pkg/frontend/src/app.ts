/**
 * Browser bootstrap: read connection settings, mount the dashboard, and
 * wire the veto/revert buttons through event delegation.
 *
 * Configuration, in precedence order: URL query parameters (?base, ?token),
 * then localStorage (forge.base, forge.token).
 */

import { ApiClient } from "./api.js";
import { DashboardController } from "./controller.js";

const POLL_INTERVAL_MS = 2000;

function readConfig(): { baseUrl: string; adminToken?: string } {
  const params = new URLSearchParams(window.location.search);
  const baseUrl =
    params.get("base") ?? window.localStorage.getItem("forge.base") ?? "http://127.0.0.1:8080";
  const adminToken = params.get("token") ?? window.localStorage.getItem("forge.token") ?? undefined;
  return { baseUrl, adminToken };
}

export function mount(root: HTMLElement): DashboardController {
  const config = readConfig();
  const api = new ApiClient(config);
  const controller = new DashboardController(api, (html) => {
    root.innerHTML = html;
  });
  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement | null;
    const button = target?.closest<HTMLButtonElement>("button[data-action]");
    if (!button || button.disabled) return;
    const action = button.dataset.action;
    if (action === "veto" && button.dataset.candidate) {
      button.disabled = true;
      void controller.veto(button.dataset.candidate);
    } else if (action === "revert" && button.dataset.ref) {
      button.disabled = true;
      void controller.revert(button.dataset.ref);
    }
  });
  controller.start(POLL_INTERVAL_MS);
  return controller;
}

const rootElement = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootElement) {
  mount(rootElement);
}
