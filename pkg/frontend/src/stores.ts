/** In-memory view state fed by the stream; charts and tables render from
 * these, never from model parameters (the dashboard only sees metrics). */

import type { CampaignSummary, LogEvent, LogLevel, RoundReport, StreamObject } from "./api.js";

export interface SeriesPoint {
  x: number;
  y: number;
}

export class CampaignViewStore {
  rounds = new Map<number, RoundReport>();
  events: LogEvent[] = [];
  summary: CampaignSummary | null = null;
  onChange: () => void = () => {};

  /** Called at every (re)connect: the stream replays its backlog. */
  reset(): void {
    this.rounds.clear();
    this.events = [];
    this.onChange();
  }

  apply(obj: StreamObject): void {
    if (obj.kind === "round") {
      this.rounds.set(obj.round.round, obj.round);
    } else if (obj.kind === "event") {
      this.events.push(obj.event);
    } else {
      this.summary = obj.summary;
    }
    this.onChange();
  }

  backfill(rounds: RoundReport[]): void {
    for (const report of rounds) this.rounds.set(report.round, report);
    this.onChange();
  }

  sortedRounds(): RoundReport[] {
    return [...this.rounds.values()].sort((a, b) => a.round - b.round);
  }

  accuracySeries(): SeriesPoint[] {
    return this.sortedRounds()
      .filter((r) => r.eval_accuracy !== null)
      .map((r) => ({ x: r.round, y: r.eval_accuracy as number }));
  }

  lossSeries(): SeriesPoint[] {
    return this.sortedRounds()
      .filter((r) => r.eval_loss !== null)
      .map((r) => ({ x: r.round, y: r.eval_loss as number }));
  }

  filteredEvents(level: LogLevel | "ALL"): LogEvent[] {
    if (level === "ALL") return this.events;
    return this.events.filter((e) => e.level === level);
  }

  status(): string {
    return this.summary?.status ?? "Unknown";
  }

  isTerminal(): boolean {
    const status = this.status();
    return status === "Converged" || status === "Exhausted" || status === "Aborted";
  }
}

/** Map data points into pixel space for a simple line chart. */
export function scaleToCanvas(
  points: SeriesPoint[],
  width: number,
  height: number,
  pad = 28,
): { px: number; py: number }[] {
  if (points.length === 0) return [];
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const xMin = Math.min(...xs, 1);
  const xMax = Math.max(...xs, xMin + 1);
  const yMin = Math.min(...ys, 0);
  const yMax = Math.max(...ys, yMin + 1e-9);
  const spanX = xMax - xMin || 1;
  const spanY = yMax - yMin || 1;
  return points.map((p) => ({
    px: pad + ((p.x - xMin) / spanX) * (width - 2 * pad),
    py: height - pad - ((p.y - yMin) / spanY) * (height - 2 * pad),
  }));
}
