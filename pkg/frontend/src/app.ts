/** DOM glue: wires the form, the recommendation card, the what-if panel,
 * and a 5s polling loop.  The server is the source of truth; report
 * responses are cached per covariate pattern between polls so toggling a
 * pattern re-renders without a re-fetch. */

import { ServiceError, TrialApi, type Recommendation, type TrialReport } from "./api.js";
import {
  renderEnrollmentForm,
  renderFutilityBanner,
  renderObdTable,
  renderRecommendation,
  renderSummary,
  renderWhatIf,
} from "./render.js";

const POLL_MS = 5000;

interface ConsoleState {
  trialId: string | null;
  report: TrialReport | null;
  lastRec: Recommendation | null;
  lastError: { code: string; message: string; field_paths?: string[] } | null;
  whatIfPattern: Record<string, string>;
  curveCache: Map<string, TrialReport>;
}

const state: ConsoleState = {
  trialId: null,
  report: null,
  lastRec: null,
  lastError: null,
  whatIfPattern: {},
  curveCache: new Map(),
};

const api = new TrialApi("");

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function patternKey(p: Record<string, string>): string {
  return Object.entries(p)
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([k, v]) => `${k}=${v}`)
    .join("|");
}

function formPattern(form: HTMLFormElement): Record<string, string> {
  const data = new FormData(form);
  const pattern: Record<string, string> = {};
  for (const [k, v] of data.entries()) {
    if (k !== "at") pattern[k] = String(v);
  }
  return pattern;
}

function renderAll(): void {
  const r = state.report;
  if (!r) return;
  el("summary").innerHTML = renderSummary(r);
  el("banner").innerHTML = renderFutilityBanner(r.futility_log, r.stage);
  const closed = ["Complete", "TerminatedFutile", "FinalAnalysis"].includes(r.stage);
  if (!document.querySelector("#form-holder form")) {
    el("form-holder").innerHTML = renderEnrollmentForm(r, closed);
    wireForm();
  }
  el("recommendation").innerHTML = renderRecommendation(state.lastRec, state.lastError);
  el("obd").innerHTML = renderObdTable(r);
  const cached = state.curveCache.get(patternKey(state.whatIfPattern));
  el("whatif").innerHTML = renderWhatIf(cached ?? r, state.whatIfPattern);
}

function showFieldErrors(paths: string[] | undefined): void {
  document.querySelectorAll<HTMLElement>(".field-error").forEach((n) => (n.textContent = ""));
  for (const p of paths ?? []) {
    const node = document.querySelector<HTMLElement>(`.field-error[data-for="${p}"]`);
    if (node) node.textContent = "check this field";
  }
}

function wireForm(): void {
  const form = document.querySelector<HTMLFormElement>("#enroll");
  if (!form) return;
  form.addEventListener("change", () => {
    state.whatIfPattern = formPattern(form);
    void refreshWhatIf();
  });
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const at = Number(new FormData(form).get("at") ?? 0);
    void enroll(formPattern(form), at);
  });
}

async function enroll(pattern: Record<string, string>, at: number): Promise<void> {
  if (!state.trialId) return;
  state.lastError = null;
  try {
    state.lastRec = await api.enroll(state.trialId, pattern, at);
    showFieldErrors([]);
  } catch (err) {
    state.lastRec = null;
    if (err instanceof ServiceError) {
      state.lastError = err.body;
      showFieldErrors(err.body.field_paths);
    } else {
      // network failure: keep the form state and offer a retry
      state.lastError = { code: "network", message: "Network error — your entries are preserved; retry." };
    }
  }
  await refresh();
}

async function refreshWhatIf(): Promise<void> {
  if (!state.trialId) return;
  const key = patternKey(state.whatIfPattern);
  if (!state.curveCache.has(key)) {
    const rep = await api.getReport(state.trialId, state.whatIfPattern);
    state.curveCache.set(key, rep);
  }
  renderAll();
}

async function refresh(): Promise<void> {
  if (!state.trialId) return;
  const report = await api.getReport(state.trialId, state.whatIfPattern);
  const changed = !state.report || report.version !== state.report.version;
  state.report = report;
  if (changed) state.curveCache.clear();
  state.curveCache.set(patternKey(state.whatIfPattern), report);
  renderAll();
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  let trialId = params.get("trial");
  if (!trialId) {
    const { trials } = await api.listTrials();
    trialId = trials[0] ?? null;
  }
  if (!trialId) {
    el("summary").innerHTML = `<p class="empty">No trials yet — create one through the API.</p>`;
    return;
  }
  state.trialId = trialId;
  await refresh();
  setInterval(() => void refresh(), POLL_MS);
}

void boot();
