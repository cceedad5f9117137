/** Typed client for the trial service HTTP API. */

import type {
  BatchResult,
  EventFeed,
  TrialReport,
  TrialSchema,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface TrialRecord {
  id: string;
  [covariate: string]: string | number | null;
}

export class TrialApi {
  constructor(
    private readonly baseUrl: string,
    private readonly roleToken?: string,
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = { "content-type": "application/json" };
    if (this.roleToken) h["x-role-token"] = this.roleToken;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail =
        typeof payload?.detail === "string"
          ? payload.detail
          : JSON.stringify(payload);
      throw new ApiRequestError(res.status, detail);
    }
    return payload as T;
  }

  createTrial(body: {
    config: Record<string, unknown>;
    schema: unknown[];
    planned_n: number;
    seed?: number;
    idempotency?: string;
  }): Promise<{ trial_id: string }> {
    return this.request("POST", "/trials", body);
  }

  getSchema(trialId: string): Promise<TrialSchema> {
    return this.request("GET", `/trials/${trialId}/schema`);
  }

  enrollBatch(trialId: string, records: TrialRecord[]): Promise<BatchResult> {
    return this.request("POST", `/trials/${trialId}/batches`, { records });
  }

  updateCovariate(
    trialId: string,
    pid: string,
    field: string,
    value: string | number | null,
  ): Promise<Record<string, unknown>> {
    return this.request("PATCH", `/trials/${trialId}/participants/${pid}`, {
      field,
      value,
    });
  }

  getReport(trialId: string): Promise<TrialReport> {
    return this.request("GET", `/trials/${trialId}/report`);
  }

  getEvents(trialId: string, since = -1): Promise<EventFeed> {
    return this.request("GET", `/trials/${trialId}/events?since=${since}`);
  }
}
