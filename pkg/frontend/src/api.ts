/** Typed client for the campaign metrics API. */

export interface CampaignSummary {
  campaign_id: string;
  status: string;
  current_round: number;
  rounds_total: number;
  latest_loss: number | null;
  latest_accuracy: number | null;
  connected_clients: number;
}

export interface RoundReport {
  round: number;
  fitted_clients: string[];
  failed_clients: [string, string][];
  eval_loss: number | null;
  eval_accuracy: number | null;
  eval_mode_used: string;
  wall_time_ms: number;
  committed: boolean;
}

export type LogLevel = "INFO" | "DEBUG" | "ERROR";

export interface LogEvent {
  timestamp_ms: number;
  level: LogLevel;
  source: string;
  message: string;
  round: number | null;
}

export type StreamObject =
  | { kind: "round"; round: RoundReport }
  | { kind: "event"; event: LogEvent }
  | { kind: "status"; summary: CampaignSummary };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly violations: string[] = [],
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`;
  let violations: string[] = [];
  try {
    const body = (await resp.json()) as { error?: string; violations?: string[] };
    if (body.error) message = body.error;
    if (body.violations) violations = body.violations;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, message, violations);
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  listCampaigns(): Promise<CampaignSummary[]> {
    return this.get("/campaigns");
  }

  async createCampaign(config: Record<string, unknown>): Promise<string> {
    const resp = await fetch(this.baseUrl + "/campaigns", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(config),
    });
    if (!resp.ok) throw await parseError(resp);
    const body = (await resp.json()) as { id: string };
    return body.id;
  }

  rounds(id: string): Promise<RoundReport[]> {
    return this.get(`/campaigns/${encodeURIComponent(id)}/rounds`);
  }

  events(id: string, level?: LogLevel): Promise<LogEvent[]> {
    const query = level ? `?level=${level}` : "";
    return this.get(`/campaigns/${encodeURIComponent(id)}/events${query}`);
  }

  config(id: string): Promise<Record<string, unknown>> {
    return this.get(`/campaigns/${encodeURIComponent(id)}/config`);
  }

  async abort(id: string): Promise<string> {
    const resp = await fetch(
      `${this.baseUrl}/campaigns/${encodeURIComponent(id)}/abort`,
      { method: "POST" },
    );
    if (!resp.ok) throw await parseError(resp);
    const body = (await resp.json()) as { status: string };
    return body.status;
  }
}
