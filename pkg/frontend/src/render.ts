// Pure HTML/SVG renderers.  Kept framework-free and string-based so the
// feature table, badges and survival chart are unit-testable without a DOM.

import { SessionState } from "./state";
import { ConstraintViolation, FeatureMeta, SurvivalCurve } from "./types";

const DIRECTION_ARROWS: Record<string, string> = {
  free: "↕",
  increase_only: "↑",
  decrease_only: "↓",
};

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderFeatureRow(
  meta: FeatureMeta,
  baseValue: number,
  editedValue: number | undefined,
  violations: ConstraintViolation[],
): string {
  const name = escapeHtml(meta.name);
  const value = editedValue === undefined ? baseValue : editedValue;
  const locked = !meta.actionable;
  const badges: string[] = [];
  if (locked) {
    badges.push('<span class="badge locked">locked</span>');
  } else {
    badges.push(`<span class="badge direction">${DIRECTION_ARROWS[meta.direction]}</span>`);
  }
  for (const v of violations.filter((v) => v.feature === meta.name)) {
    badges.push(`<span class="badge violation">${escapeHtml(v.violation)}</span>`);
  }
  const edited = editedValue !== undefined ? " edited" : "";
  // locked features render without an input control: no way to edit them
  const control = locked
    ? `<span class="value">${value.toFixed(4)}</span>`
    : `<input type="number" step="0.01" min="${meta.lower_bound}" max="${meta.upper_bound}" ` +
      `value="${value.toFixed(4)}" data-feature="${name}">`;
  return (
    `<tr class="feature-row${edited}" data-feature="${name}">` +
    `<td class="name">${name} ${badges.join(" ")}</td>` +
    `<td class="base">${baseValue.toFixed(4)}</td>` +
    `<td class="control">${control}</td>` +
    `</tr>`
  );
}

export function renderFeatureTable(state: SessionState): string {
  const rows = state.meta
    .map((m, j) =>
      renderFeatureRow(m, state.baseFeatures[j], state.edits.get(m.name), state.violations),
    )
    .join("\n");
  return (
    '<table class="features"><thead><tr>' +
    "<th>feature</th><th>original</th><th>current</th>" +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderPredictionPanel(
  predictedClass: number | null,
  score: number | null,
  medianLifetimeDays: number | null,
  statusMessage: string,
): string {
  if (predictedClass === null) {
    return '<div class="prediction empty">no prediction yet</div>';
  }
  const label = predictedClass === 1 ? "retained (&ge;90d)" : "churn (&lt;90d)";
  return (
    `<div class="prediction class-${predictedClass}">` +
    `<span class="class" data-class="${predictedClass}">${label}</span>` +
    `<span class="score">S(90) = ${score!.toFixed(3)}</span>` +
    `<span class="median">median ${medianLifetimeDays!.toFixed(1)} days</span>` +
    (statusMessage ? `<span class="status">${escapeHtml(statusMessage)}</span>` : "") +
    `</div>`
  );
}

// Step chart of the survival curve with a reference line at the 90-day
// binarization threshold.
export function renderSurvivalChart(
  curve: SurvivalCurve,
  thresholdDays = 90,
  width = 420,
  height = 160,
): string {
  if (curve.times.length === 0) {
    return '<svg class="survival"></svg>';
  }
  const maxT = Math.max(curve.times[curve.times.length - 1], thresholdDays * 1.2);
  const sx = (t: number) => (t / maxT) * (width - 20) + 10;
  const sy = (p: number) => (1 - p) * (height - 20) + 10;
  let d = `M ${sx(0)} ${sy(1)}`;
  let prev = 1.0;
  for (let i = 0; i < curve.times.length; i++) {
    const x = sx(curve.times[i]);
    d += ` L ${x} ${sy(prev)} L ${x} ${sy(curve.probs[i])}`;
    prev = curve.probs[i];
  }
  d += ` L ${sx(maxT)} ${sy(prev)}`;
  const tx = sx(thresholdDays);
  return (
    `<svg class="survival" viewBox="0 0 ${width} ${height}">` +
    `<path class="curve" d="${d}" fill="none"/>` +
    `<line class="threshold" x1="${tx}" y1="10" x2="${tx}" y2="${height - 10}"/>` +
    `<text class="threshold-label" x="${tx + 4}" y="20">${thresholdDays}d</text>` +
    `</svg>`
  );
}

// Recourse summary in the report layout: largest changes first, original vs
// required columns, top five shown.
export function renderRecoursePanel(state: SessionState, topN = 5): string {
  const r = state.lastRecourse;
  if (!r) {
    return '<div class="recourse empty">no recourse requested</div>';
  }
  const rows = r.per_feature_changes
    .slice(0, topN)
    .map(
      (c) =>
        `<tr><td>${escapeHtml(c.name)}</td>` +
        `<td>${c.original.toFixed(4)}</td><td>${c.required.toFixed(4)}</td></tr>`,
    )
    .join("\n");
  const verdict = r.post_class === 1 ? "effective" : "ineffective";
  return (
    `<div class="recourse verdict-${verdict}">` +
    `<div class="cost">cost ||a||&sup2; = ${r.cost_sq.toFixed(4)} (${verdict})</div>` +
    `<table><thead><tr><th>features to change</th><th>original</th><th>required</th></tr></thead>` +
    `<tbody>${rows}</tbody></table></div>`
  );
}
