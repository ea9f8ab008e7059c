// Payload shapes of the what-if service. The `display` objects carry
// server-formatted strings; the UI shows those verbatim and never formats
// numbers itself.

export interface SessionInfo {
  n: number;
  m: number;
  q: number;
  model_kind: string;
  storage_kind: string;
  cache_mode: string;
  hp: {
    eta: number;
    lam: number;
    batch_size: number;
    iterations: number;
    seed: number;
  };
  methods: string[];
  sample_previews: { row: number; features: number[]; label: number }[];
  prior_requests: HistoryEntry[];
}

export interface HistoryEntry {
  request_id: string;
  method: string;
  removed_count: number;
}

export interface UpdateDisplay {
  l2_dist_to_base: string;
  cosine: string | null;
  accuracy_or_mse: string | null;
  update_ms: string;
}

export interface UpdateResult {
  request_id: string;
  method: string;
  removed_count: number;
  w_summary: { l2_norm: number; head: number[] };
  l2_dist_to_base: number;
  cosine: number | null;
  accuracy_or_mse: number | null;
  update_ms: number;
  display: UpdateDisplay;
}

export interface CompareResult {
  a: string;
  b: string;
  l2_dist: number;
  cosine: number | null;
  sign_flips: number;
  max_magnitude_change: number;
  display: {
    l2_dist: string;
    cosine: string | null;
    sign_flips: string;
    max_magnitude_change: string;
  };
}

export type RemovalSelection =
  | { kind: 'ids'; ids: number[] }
  | { kind: 'rate'; rate: number; seed: number };
