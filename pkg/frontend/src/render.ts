/** Pure render functions: service payloads in, HTML/SVG strings out.
 *
 * The console performs no statistics of its own; every number shown is the
 * payload value rendered verbatim with String(). */

import type { CurveBand, FutilityOutcome, ReportCurves, TrialReport } from "./api.js";

const esc = (s: string): string =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");

export const show = (x: number | null | undefined): string =>
  x === null || x === undefined ? "—" : String(x);

export function renderSummary(r: TrialReport): string {
  const rows: [string, string][] = [
    ["Stage", r.stage],
    ["Enrolled", show(r.n_enrolled)],
    ["Toxicity MTD", show(r.mtd_tox)],
    ["Exposure MTD", show(r.mtd_pk)],
    ["Adjusted MTD", show(r.mtd_star)],
    ["Acceptable doses", r.acceptable.length ? r.acceptable.map(show).join(", ") : "—"],
  ];
  const cells = rows
    .map(([k, v]) => `<div class="stat"><span class="k">${esc(k)}</span><span class="v">${esc(v)}</span></div>`)
    .join("");
  return `<div class="summary" data-stage="${esc(r.stage)}">${cells}</div>`;
}

export function renderRecommendation(
  rec: { dose: number; stage: string; rationale: string; patient_id: number } | null,
  error: { code: string; message: string } | null,
): string {
  if (error) {
    const blocked = error.code === "excluded_subgroup";
    return (
      `<div class="card rec ${blocked ? "blocked" : "error"}" data-code="${esc(error.code)}">` +
      `<h3>${blocked ? "Enrollment blocked" : "Enrollment failed"}</h3>` +
      `<p>${esc(error.message)}</p></div>`
    );
  }
  if (!rec) {
    return `<div class="card rec empty"><p>No recommendation yet.</p></div>`;
  }
  return (
    `<div class="card rec" data-dose="${show(rec.dose)}">` +
    `<h3>Assign dose level ${show(rec.dose)}</h3>` +
    `<p class="stage">${esc(rec.stage)} · patient ${show(rec.patient_id)}</p>` +
    `<p class="why">${esc(rec.rationale)}</p></div>`
  );
}

export function renderFutilityBanner(log: FutilityOutcome[], stage: string): string {
  const notes: string[] = [];
  for (const entry of log) {
    if (entry.trial_stop) {
      notes.push(`Assessment ${show(entry.assessment_id)}: all subgroups futile — trial stopped.`);
    } else if (entry.eliminated) {
      const e = entry.eliminated;
      const what = e.op === "ne" ? `${e.characteristic}=${e.level}` : `${e.characteristic}≠${e.level}`;
      notes.push(`Assessment ${show(entry.assessment_id)}: enrollment closed for ${what}.`);
    }
  }
  if (stage === "TerminatedFutile" && !notes.some((n) => n.includes("stopped"))) {
    notes.push("Trial terminated for futility.");
  }
  if (!notes.length) {
    return `<div class="banner none">No futility eliminations.</div>`;
  }
  return `<div class="banner futile">${notes.map((n) => `<p>${esc(n)}</p>`).join("")}</div>`;
}

function bandPath(xs: number[], lo: number[], hi: number[], sx: (x: number) => number, sy: (y: number) => number): string {
  const up = xs.map((x, i) => `${sx(x)},${sy(hi[i])}`);
  const down = xs.map((x, i) => `${sx(x)},${sy(lo[i])}`).reverse();
  return `M${up.join(" L")} L${down.join(" L")} Z`;
}

export function renderCurveChart(curves: ReportCurves, obd: number | null = null): string {
  const w = 420;
  const h = 240;
  const pad = 36;
  const xs = curves.doses;
  const sx = (d: number) => pad + ((d - xs[0]) / Math.max(xs[xs.length - 1] - xs[0], 1)) * (w - 2 * pad);
  const sy = (p: number) => h - pad - p * (h - 2 * pad);
  const parts: string[] = [];
  parts.push(`<svg viewBox="0 0 ${w} ${h}" class="chart" role="img">`);
  parts.push(`<line x1="${pad}" y1="${h - pad}" x2="${w - pad}" y2="${h - pad}" class="axis"/>`);
  parts.push(`<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${h - pad}" class="axis"/>`);
  for (const series of ["toxicity", "efficacy"] as const) {
    const band: CurveBand | null = curves[series];
    if (!band) continue;
    parts.push(`<path class="band ${series}" d="${bandPath(xs, band.lo, band.hi, sx, sy)}"/>`);
    const line = xs.map((x, i) => `${sx(x)},${sy(band.mean[i])}`).join(" L");
    parts.push(`<path class="mean ${series}" d="M${line}"/>`);
    xs.forEach((x, i) => {
      parts.push(
        `<circle class="pt ${series}" cx="${sx(x)}" cy="${sy(band.mean[i])}" r="3">` +
          `<title>dose ${show(x)}: ${show(band.mean[i])} [${show(band.lo[i])}, ${show(band.hi[i])}]</title></circle>`,
      );
    });
  }
  for (const x of xs) {
    parts.push(`<text class="ticklabel" x="${sx(x)}" y="${h - pad + 16}" text-anchor="middle">${show(x)}</text>`);
  }
  if (obd !== null && curves.efficacy) {
    const i = xs.indexOf(obd);
    if (i >= 0) {
      parts.push(
        `<g class="obd-marker"><line x1="${sx(obd)}" y1="${pad}" x2="${sx(obd)}" y2="${h - pad}"/>` +
          `<text x="${sx(obd)}" y="${pad - 6}" text-anchor="middle">OBD ${show(obd)}</text></g>`,
      );
    }
  }
  if (curves.efficacy?.conditioning_fallback) {
    parts.push(`<text class="caveat" x="${w - pad}" y="${pad - 6}" text-anchor="end">unconditional draws</text>`);
  }
  parts.push("</svg>");
  return parts.join("");
}

export function renderWhatIf(r: TrialReport, pattern: Record<string, string>): string {
  if (!r.curves || !r.curves.efficacy) {
    return `<div class="whatif empty">No response data yet.</div>`;
  }
  let obd: number | null = null;
  if (r.report) {
    const cell = r.report.patterns.find((c) =>
      Object.entries(c.indicators).every(([name, v]) => {
        const [char, level] = name.split("=");
        return (pattern[char] === level ? 1 : 0) === v;
      }),
    );
    obd = cell ? cell.obd : null;
  }
  const label = Object.entries(pattern)
    .map(([k, v]) => `${k}=${v}`)
    .join(", ");
  const badge = r.curves.efficacy.conditioning_fallback
    ? `<span class="badge caveat">conditioning fallback</span>`
    : "";
  return (
    `<div class="whatif"><h4>${esc(label || "reference pattern")} ${badge}</h4>` +
    renderCurveChart(r.curves, obd) +
    `</div>`
  );
}

export function renderAuditTimeline(
  entries: { timestamp: number; actor: string; action: string }[],
): string {
  if (!entries.length) return `<ol class="audit empty"></ol>`;
  const items = entries
    .map(
      (e) =>
        `<li><span class="t">${new Date(e.timestamp * 1000).toISOString()}</span> ` +
        `<span class="actor">${esc(e.actor)}</span> <span class="action">${esc(e.action)}</span></li>`,
    )
    .join("");
  return `<ol class="audit">${items}</ol>`;
}

export function renderEnrollmentForm(r: TrialReport, disabled: boolean): string {
  const fields = r.schema.characteristics
    .map((c) => {
      const opts = c.levels
        .map((l) => `<option value="${esc(l)}">${esc(l)}${l === c.reference ? " (ref)" : ""}</option>`)
        .join("");
      return (
        `<label class="field" data-char="${esc(c.name)}">${esc(c.name)}` +
        `<select name="${esc(c.name)}">${opts}</select>` +
        `<span class="field-error" data-for="${esc(c.name)}"></span></label>`
      );
    })
    .join("");
  return (
    `<form id="enroll" class="enroll" ${disabled ? "data-disabled=\"1\"" : ""}>` +
    fields +
    `<label class="field">weeks on trial clock<input name="at" type="number" step="0.1" min="0" value="0"/>` +
    `<span class="field-error" data-for="at"></span></label>` +
    `<button type="submit" ${disabled ? "disabled" : ""}>Recommend dose</button></form>`
  );
}

export function renderObdTable(r: TrialReport): string {
  if (!r.report) return "";
  const rows = r.report.patterns
    .map((cell) => {
      const label =
        Object.entries(cell.pattern)
          .map(([k, v]) => `${k}=${v}`)
          .join(", ") || "all patients";
      const dose = cell.obd === null ? `no OBD (${cell.no_obd_reason ?? "futile"})` : `dose ${show(cell.obd)}`;
      return `<tr><td>${esc(label)}</td><td data-obd="${show(cell.obd)}">${esc(dose)}</td></tr>`;
    })
    .join("");
  return (
    `<table class="obd"><thead><tr><th>subpopulation</th><th>recommended dose</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}
