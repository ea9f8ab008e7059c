import type { CompareResult, RemovalSelection, SessionInfo, UpdateResult } from './types';

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = 'ServiceError';
  }
}

async function fail(res: Response): Promise<never> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body: keep the status line
  }
  throw new ServiceError(res.status, detail);
}

export interface ServiceClient {
  getSession(): Promise<SessionInfo>;
  postUpdate(method: string, selection: RemovalSelection): Promise<UpdateResult>;
  getCompare(a: string, b: string): Promise<CompareResult>;
}

export function createClient(baseUrl: string, fetchFn: typeof fetch = fetch): ServiceClient {
  const base = baseUrl.replace(/\/$/, '');
  return {
    async getSession() {
      const res = await fetchFn(`${base}/session`);
      if (!res.ok) return fail(res);
      return res.json();
    },
    async postUpdate(method, selection) {
      const body =
        selection.kind === 'ids'
          ? { method, removed: selection.ids }
          : { method, rate: selection.rate, seed: selection.seed };
      const res = await fetchFn(`${base}/update`, {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(body),
      });
      if (!res.ok) return fail(res);
      return res.json();
    },
    async getCompare(a, b) {
      const params = new URLSearchParams({ a, b });
      const res = await fetchFn(`${base}/compare?${params}`);
      if (!res.ok) return fail(res);
      return res.json();
    },
  };
}

// "3, 7, 12" or "3 7 12" -> ids; blank -> null; anything else -> throws
export function parseIdList(text: string): number[] | null {
  const trimmed = text.trim();
  if (!trimmed) return null;
  const ids = trimmed.split(/[\s,;]+/).map((tok) => {
    const v = Number(tok);
    if (!Number.isInteger(v) || v < 0) {
      throw new Error(`"${tok}" is not a non-negative row id`);
    }
    return v;
  });
  return ids;
}
