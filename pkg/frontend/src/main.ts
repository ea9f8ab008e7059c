import { createClient, parseIdList, ServiceError } from './api';
import {
  renderComparePanel,
  renderErrorBanner,
  renderHistory,
  renderResultCard,
  renderSessionPanel,
  renderSideBySide,
  renderSparkline,
  renderToast,
  renderValidationMessage,
} from './render';
import type { HistoryEntry, RemovalSelection, UpdateResult } from './types';

const SERVICE_URL = (window as any).DELPROP_SERVICE_URL ?? 'http://127.0.0.1:8100';
const client = createClient(SERVICE_URL);

const el = (id: string) => document.getElementById(id)!;

const history: HistoryEntry[] = [];
const updateTimes: number[] = [];
let inflight = false;

async function loadSession(): Promise<void> {
  try {
    const info = await client.getSession();
    el('session').innerHTML = renderSessionPanel(info);
    history.splice(0, history.length, ...info.prior_requests);
    refreshHistory();
  } catch (err) {
    el('session').innerHTML = renderErrorBanner(
      `Cannot reach the service: ${(err as Error).message}`,
      true,
    );
    const retry = el('session').querySelector('.retry');
    retry?.addEventListener('click', () => void loadSession());
  }
}

function refreshHistory(): void {
  el('history').innerHTML = renderHistory(history);
  el('spark').innerHTML = renderSparkline(updateTimes);
  document.querySelectorAll<HTMLInputElement>('.history-pick').forEach((box) => {
    box.addEventListener('change', onPickChanged);
  });
}

function currentSelection(): RemovalSelection | null {
  const idsText = (el('ids') as HTMLTextAreaElement).value;
  const ids = parseIdList(idsText);
  if (ids !== null) return { kind: 'ids', ids };
  const rate = Number((el('rate') as HTMLInputElement).value);
  if (rate > 0) {
    const seed = Number((el('seed') as HTMLInputElement).value) || 0;
    return { kind: 'rate', rate, seed };
  }
  return null;
}

function pushResult(result: UpdateResult): void {
  if (!history.some((h) => h.request_id === result.request_id)) {
    history.push({
      request_id: result.request_id,
      method: result.method,
      removed_count: result.removed_count,
    });
    updateTimes.push(result.update_ms);
  }
}

async function submit(): Promise<void> {
  if (inflight) return; // at most one in-flight update
  const out = el('result');
  let selection: RemovalSelection | null;
  try {
    selection = currentSelection();
  } catch (err) {
    out.innerHTML = renderValidationMessage((err as Error).message);
    return;
  }
  if (selection === null) {
    out.innerHTML = renderValidationMessage(
      'Select rows to remove (id list) or set a removal rate first.',
    );
    return;
  }
  const method = (el('method') as HTMLSelectElement).value;
  const sideBySide = (el('side-by-side') as HTMLInputElement).checked;
  inflight = true;
  out.innerHTML = '<p class="state state-busy">Updating&hellip;</p>';
  try {
    const result = await client.postUpdate(method, selection);
    pushResult(result);
    if (sideBySide && method !== 'basel') {
      const exact = await client.postUpdate('basel', selection);
      pushResult(exact);
      out.innerHTML = renderSideBySide(result, exact);
    } else {
      out.innerHTML = renderResultCard(result);
    }
    refreshHistory();
  } catch (err) {
    const msg =
      err instanceof ServiceError ? `Service error ${err.status}: ${err.message}`
        : `Request failed: ${(err as Error).message}`;
    out.innerHTML = renderErrorBanner(msg);
  } finally {
    inflight = false;
  }
}

function pickedIds(): string[] {
  return Array.from(document.querySelectorAll<HTMLInputElement>('.history-pick'))
    .filter((b) => b.checked)
    .map((b) => b.value);
}

async function onPickChanged(): Promise<void> {
  const picked = pickedIds();
  if (picked.length !== 2) return;
  try {
    const cmp = await client.getCompare(picked[0], picked[1]);
    el('compare').innerHTML = renderComparePanel(cmp);
  } catch (err) {
    el('compare').innerHTML = renderToast(
      err instanceof ServiceError && err.status === 404
        ? `Unknown request id: ${err.message}`
        : `Compare failed: ${(err as Error).message}`,
    );
  }
}

export function start(): void {
  el('submit').addEventListener('click', () => void submit());
  void loadSession();
}

if (typeof document !== 'undefined' && document.getElementById('submit')) {
  start();
}
