// Pure HTML-string renderers. Every number shown here is a verbatim field
// from a service payload (the display strings are formatted server-side);
// the only arithmetic below is sparkline geometry, never displayed digits.

import type { CompareResult, HistoryEntry, SessionInfo, UpdateResult } from './types';

function esc(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function dt(label: string, value: string): string {
  return `<div class="field"><span class="field-label">${esc(label)}</span>` +
    `<span class="field-value">${esc(value)}</span></div>`;
}

export function renderSessionPanel(info: SessionInfo): string {
  const hp = info.hp;
  const preview = info.sample_previews
    .map((p) => `<tr><td>${p.row}</td><td>${p.features.join(', ')}</td><td>${p.label}</td></tr>`)
    .join('');
  return `
<section class="session-panel">
  <h2>Session</h2>
  ${dt('samples', String(info.n))}
  ${dt('features', String(info.m))}
  ${dt('model', info.model_kind)}
  ${dt('storage', info.storage_kind)}
  ${dt('cache mode', info.cache_mode)}
  ${dt('eta', String(hp.eta))}
  ${dt('lambda', String(hp.lam))}
  ${dt('batch size', String(hp.batch_size))}
  ${dt('iterations', String(hp.iterations))}
  ${dt('methods', info.methods.join(', '))}
  <table class="preview"><thead><tr><th>row</th><th>features</th><th>label</th></tr></thead>
  <tbody>${preview}</tbody></table>
</section>`.trim();
}

export function renderResultCard(result: UpdateResult): string {
  const d = result.display;
  const cosineRow = d.cosine === null ? '' : dt('cosine to exact retrain', d.cosine);
  const qualityRow = d.accuracy_or_mse === null ? '' : dt('validation metric', d.accuracy_or_mse);
  return `
<article class="result-card" data-request-id="${esc(result.request_id)}">
  <h3>${esc(result.method)} &middot; removed ${result.removed_count}</h3>
  ${dt('distance to exact retrain', d.l2_dist_to_base)}
  ${cosineRow}
  ${qualityRow}
  ${dt('update time (ms)', d.update_ms)}
</article>`.trim();
}

export function renderSideBySide(priu: UpdateResult, basel: UpdateResult): string {
  return `
<div class="side-by-side">
  ${renderResultCard(priu)}
  ${renderResultCard(basel)}
</div>`.trim();
}

export function renderComparePanel(cmp: CompareResult): string {
  const d = cmp.display;
  const cosineRow = d.cosine === null ? '' : dt('cosine', d.cosine);
  return `
<section class="compare-panel">
  <h3>${esc(cmp.a)} vs ${esc(cmp.b)}</h3>
  ${dt('distance', d.l2_dist)}
  ${cosineRow}
  ${dt('sign flips', d.sign_flips)}
  ${dt('max magnitude change', d.max_magnitude_change)}
</section>`.trim();
}

export function renderHistory(entries: HistoryEntry[]): string {
  if (!entries.length) {
    return '<p class="state state-empty">No updates yet. Pick rows to remove and submit.</p>';
  }
  const items = entries
    .map(
      (e) =>
        `<li class="history-item" data-request-id="${esc(e.request_id)}">` +
        `<label><input type="checkbox" class="history-pick" value="${esc(e.request_id)}">` +
        ` ${esc(e.method)} &middot; removed ${e.removed_count} &middot; ${esc(e.request_id)}</label></li>`,
    )
    .join('\n');
  return `<ul class="history-list">\n${items}\n</ul>`;
}

// Tiny inline sparkline of recent update times; geometry only, values are
// not rendered as text.
export function renderSparkline(values: number[], width = 120, height = 24): string {
  if (values.length < 2) return '';
  const max = Math.max(...values, 1e-12);
  const pts = values
    .map((v, i) => {
      const x = (i / (values.length - 1)) * (width - 4) + 2;
      const y = height - 2 - (v / max) * (height - 4);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
  return (
    `<svg class="sparkline" width="${width}" height="${height}">` +
    `<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="${pts}"/></svg>`
  );
}

export function renderErrorBanner(message: string, retryable = false): string {
  const retry = retryable ? ' <button class="retry">Retry</button>' : '';
  return `<div class="banner banner-error" role="alert">${esc(message)}${retry}</div>`;
}

export function renderValidationMessage(message: string): string {
  return `<div class="banner banner-validation">${esc(message)}</div>`;
}

export function renderToast(message: string): string {
  return `<div class="toast">${esc(message)}</div>`;
}
