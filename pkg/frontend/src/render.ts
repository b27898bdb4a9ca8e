/**
 * Pure HTML builders for the two screens. Keeping these as functions from
 * payload to markup makes the blinding property directly testable: whatever
 * the server sends is all that can ever reach the DOM.
 */

import type { QueryView, StudyResults } from "./api.js";

function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** One query row: anonymized slots in server order, disease label on top. */
export function renderQuery(view: QueryView, completedCount: number, totalHint: string): string {
  if (view.query_id === null) {
    return `<section class="done"><h2>All queries rated.</h2>
      <p>Thank you — your ${completedCount} selections were recorded.</p></section>`;
  }
  const cells = view.images
    .map(
      (img, i) => `
      <figure class="slot" data-slot="${escapeHtml(img.slot)}" tabindex="0"
              role="button" aria-label="choose image ${i + 1}">
        <div class="viewport"><img src="data:image/png;base64,${img.png_base64}"
             draggable="false" alt="candidate image ${i + 1}"></div>
        <figcaption>image ${i + 1} <kbd>${i + 1}</kbd></figcaption>
      </figure>`,
    )
    .join("");
  return `<section class="query" data-query="${escapeHtml(view.query_id)}">
    <header>
      <span class="progress">${completedCount}${totalHint} rated</span>
      <h2>Which image would you prefer for diagnosis?</h2>
      <p class="label">Disease label: <strong>${escapeHtml(view.label || "unspecified")}</strong></p>
      <p class="hint">Click an image (or press its number key) to vote.
         Scroll to zoom, drag to pan.</p>
    </header>
    <div class="row">${cells}</div>
  </section>`;
}

/** Owner-facing ratio table; values come verbatim from the server. */
export function renderResults(results: StudyResults): string {
  if (results.total === 0) {
    return `<section class="results"><h2>Results</h2>
      <p class="empty">No votes recorded yet.</p></section>`;
  }
  const rows = Object.keys(results.ratios)
    .sort()
    .map(
      (method) => `<tr><td>${escapeHtml(method)}</td>
        <td>${results.counts[method]}</td>
        <td>${formatRatio(results.ratios[method])}</td></tr>`,
    )
    .join("");
  return `<section class="results"><h2>Results</h2>
    <table>
      <thead><tr><th>Method</th><th>Selections</th><th>Selection ratio</th></tr></thead>
      <tbody>${rows}</tbody>
      <tfoot><tr><td>Overall</td><td>${results.total}</td><td>1.0000</td></tr></tfoot>
    </table></section>`;
}

export function renderError(message: string): string {
  return `<section class="error"><p>${escapeHtml(message)}</p></section>`;
}

export function formatRatio(r: number): string {
  return r.toFixed(4);
}
