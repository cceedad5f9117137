/** Payload shapes of the trial service HTTP API. */

export type SchemaEntry = [name: string, kind: string, levels: string[]];

export interface TrialSchema {
  trial_id: string;
  schema: SchemaEntry[];
  planned_n: number;
  enrolled: number;
  closed: boolean;
}

export interface Assignment {
  id: string;
  arm: number;
  mechanism: string;
  matched_to: string | null;
  reservoir: boolean;
}

export interface ImputationNote {
  id: string;
  field: string;
  value: number | string;
  method: string;
  donor: string | null;
}

export interface BatchResult {
  batch: number;
  assignments: Assignment[];
  imputations: ImputationNote[];
  pairs_broken: [string, string][];
  pairs_formed: [string, string][];
  trial_closed: boolean;
}

export interface MatchEntry {
  pair: [string, string];
  distance: number;
  quality_percentile: number | null;
}

export interface TrialReport {
  trial_id: string;
  enrolled: number;
  planned_n: number;
  allocation: { treatment: number; control: number };
  smd: Record<string, number>;
  reservoir: string[];
  matches: MatchEntry[];
  mti: number | null;
  mti_headroom: number | null;
  imputed: Record<string, string[]>;
}

export interface TrialEvent {
  seq: number;
  type: string;
  data: Record<string, unknown>;
  prev: string;
  hash: string;
}

export interface EventFeed {
  events: TrialEvent[];
}

export interface ApiError {
  detail: string;
}
