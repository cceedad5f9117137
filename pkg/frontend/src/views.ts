/** Pure render functions: API payload in, HTML string out.
 *
 * Every displayed number is copied verbatim from a service payload; the
 * client never recomputes a statistic. Identical payloads produce
 * identical markup, which the snapshot tests pin down.
 */

import type {
  ApiError,
  BatchResult,
  EventFeed,
  TrialReport,
  TrialSchema,
} from "./types.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const ARM_LABELS = ["control", "treatment"];

function fmt(value: number | null | undefined, digits = 3): string {
  if (value === null || value === undefined) return "–";
  return value.toFixed(digits);
}

// ---------------------------------------------------------------------------
// Enrollment form, generated from the trial schema.

export function renderEnrollmentForm(schema: TrialSchema): string {
  const rows = schema.schema
    .map(([name, kind, levels]) => {
      const id = `field-${escapeHtml(name)}`;
      let input: string;
      if (kind === "categorical") {
        const opts = levels
          .map((l) => `<option value="${escapeHtml(l)}">${escapeHtml(l)}</option>`)
          .join("");
        input = `<select id="${id}" name="${escapeHtml(name)}"><option value="">(missing)</option>${opts}</select>`;
      } else if (kind === "binary") {
        input = `<select id="${id}" name="${escapeHtml(name)}"><option value="">(missing)</option><option value="0">0</option><option value="1">1</option></select>`;
      } else {
        input = `<input id="${id}" name="${escapeHtml(name)}" type="number" step="any" placeholder="(missing)">`;
      }
      return `<label class="form-row" for="${id}"><span>${escapeHtml(name)}<em>${escapeHtml(kind)}</em></span>${input}</label>`;
    })
    .join("\n");
  const closed = schema.closed
    ? `<p class="closed">Trial closed: ${schema.enrolled}/${schema.planned_n} enrolled.</p>`
    : "";
  return `<form id="enroll-form" class="enroll" data-trial="${escapeHtml(schema.trial_id)}">
<label class="form-row" for="field-id"><span>participant id</span><input id="field-id" name="id" required></label>
${rows}
${closed}
<button type="submit"${schema.closed ? " disabled" : ""}>Add to batch</button>
</form>`;
}

// ---------------------------------------------------------------------------
// Assignment results panel.

export function renderAssignments(result: BatchResult): string {
  const imputedBy = new Map<string, string[]>();
  for (const note of result.imputations) {
    const list = imputedBy.get(note.id) ?? [];
    list.push(`${note.field} ← ${note.value} (${note.method})`);
    imputedBy.set(note.id, list);
  }
  const cards = result.assignments
    .map((a) => {
      const partner = a.matched_to
        ? `<div class="partner">matched to <b>${escapeHtml(a.matched_to)}</b></div>`
        : a.reservoir
          ? `<div class="partner">in reservoir</div>`
          : "";
      const imp = (imputedBy.get(a.id) ?? [])
        .map((t) => `<div class="imputed">imputed: ${escapeHtml(t)}</div>`)
        .join("");
      return `<article class="card arm-${a.arm}">
<h3>${escapeHtml(a.id)}</h3>
<div class="arm">${ARM_LABELS[a.arm] ?? escapeHtml(a.arm)}</div>
<div class="mechanism">${escapeHtml(a.mechanism)}</div>
${partner}${imp}
</article>`;
    })
    .join("\n");
  const closed = result.trial_closed
    ? `<p class="closed">Planned enrollment reached; trial is closed.</p>`
    : "";
  return `<section class="assignments" data-batch="${result.batch}">
<h2>Batch ${result.batch}: ${result.assignments.length} assignment(s)</h2>
${cards}
${closed}
</section>`;
}

// ---------------------------------------------------------------------------
// Balance dashboard: SMD bars, allocation, MTI headroom gauge.

export function renderBalance(report: TrialReport): string {
  const bars = Object.entries(report.smd)
    .map(([name, value]) => {
      const width = Math.min(Math.abs(value) * 100, 100);
      return `<div class="smd-row"><span class="smd-name">${escapeHtml(name)}</span><div class="smd-bar"><div class="smd-fill" style="width:${width.toFixed(1)}%"></div></div><span class="smd-value">${fmt(value)}</span></div>`;
    })
    .join("\n");
  const headroom =
    report.mti === null
      ? ""
      : `<div class="gauge">MTI headroom <b>${report.mti_headroom}</b> of ${report.mti}</div>`;
  return `<section class="balance">
<h2>Balance — ${report.enrolled}/${report.planned_n} enrolled</h2>
<div class="allocation">treatment ${report.allocation.treatment} · control ${report.allocation.control}</div>
${headroom}
${bars}
</section>`;
}

// ---------------------------------------------------------------------------
// Match graph: pairs with distances and quality percentiles.

export function renderMatchGraph(
  report: TrialReport,
  brokenPairs: [string, string][] = [],
): string {
  const brokenKeys = new Set(brokenPairs.map((p) => [...p].sort().join("|")));
  const rows = report.matches
    .map((m) => {
      const key = [...m.pair].sort().join("|");
      const cls = brokenKeys.has(key) ? "match broken" : "match";
      const quality =
        m.quality_percentile === null
          ? ""
          : ` · percentile ${fmt(m.quality_percentile)}`;
      return `<li class="${cls}">${escapeHtml(m.pair[0])} ↔ ${escapeHtml(m.pair[1])} · D² ${fmt(m.distance)}${quality}</li>`;
    })
    .join("\n");
  const rebroken = brokenPairs
    .map(
      (p) =>
        `<li class="rebroken">pair ${escapeHtml(p[0])} ↔ ${escapeHtml(p[1])} was rebroken</li>`,
    )
    .join("\n");
  const reservoir = report.reservoir.length
    ? `<p class="reservoir">unmatched: ${report.reservoir.map(escapeHtml).join(", ")}</p>`
    : `<p class="reservoir">no one waiting</p>`;
  return `<section class="matches">
<h2>Matches (${report.matches.length})</h2>
<ul>
${rows}
${rebroken}
</ul>
${reservoir}
</section>`;
}

// ---------------------------------------------------------------------------
// Event feed.

export function renderEventFeed(feed: EventFeed): string {
  const items = feed.events
    .map((e) => {
      const what =
        e.type === "batch"
          ? `batch of ${(e.data as { records?: unknown[] }).records?.length ?? "?"}`
          : e.type === "update"
            ? `update ${escapeHtml((e.data as { id?: string }).id ?? "")}.${escapeHtml((e.data as { field?: string }).field ?? "")}`
            : escapeHtml(e.type);
      return `<li class="event event-${escapeHtml(e.type)}"><span class="seq">#${e.seq}</span> ${what}</li>`;
    })
    .join("\n");
  return `<section class="events"><h2>Events</h2><ol>
${items}
</ol></section>`;
}

// ---------------------------------------------------------------------------
// Error and state banners.

export function renderErrorBanner(error: ApiError): string {
  return `<div class="banner error" role="alert">${escapeHtml(error.detail)}</div>`;
}

export function renderStaleBanner(): string {
  return `<div class="banner stale" role="alert">Service unreachable — showing the last loaded data.</div>`;
}

export function renderEmptyState(schema: TrialSchema): string {
  return `<section class="empty"><h2>${escapeHtml(schema.trial_id)}</h2><p>No participants enrolled yet (0 of ${schema.planned_n}). Submit the first batch to begin.</p></section>`;
}

export function renderBlindedNotice(): string {
  return `<section class="blinded"><p>The balance dashboard is hidden for the enrollment role until the trial closes.</p></section>`;
}
