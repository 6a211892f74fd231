/** Server-push subscription over fetch streams (works in browsers and node).
 *
 * The server replays the campaign's backlog on every connect and closes the
 * stream once the campaign is terminal. On an unexpected drop we notify the
 * consumer (so it can clear state), backfill rounds from /rounds, and
 * resubscribe.
 */

import { ApiClient, type StreamObject } from "./api.js";

export interface StreamOptions {
  /** called at each (re)connect before any objects arrive */
  onReset?: () => void;
  /** called with rounds fetched from /rounds after a dropped connection */
  onBackfill?: (rounds: import("./api.js").RoundReport[]) => void;
  retryDelayMs?: number;
}

export interface StreamHandle {
  close(): void;
  /** resolves when the server ends the stream (terminal campaign) or close() */
  done: Promise<void>;
}

export function parseSseChunk(buffer: string): { events: string[]; rest: string } {
  const events: string[] = [];
  let rest = buffer;
  for (;;) {
    const cut = rest.indexOf("\n\n");
    if (cut < 0) return { events, rest };
    const block = rest.slice(0, cut);
    rest = rest.slice(cut + 2);
    const data = block
      .split("\n")
      .filter((line) => line.startsWith("data:"))
      .map((line) => line.slice(5).trimStart())
      .join("\n");
    if (data) events.push(data);
  }
}

export function openStream(
  baseUrl: string,
  campaignId: string,
  onObject: (obj: StreamObject) => void,
  options: StreamOptions = {},
): StreamHandle {
  const api = new ApiClient(baseUrl);
  const retryDelayMs = options.retryDelayMs ?? 1000;
  let closed = false;
  let abort = new AbortController();

  const done = (async () => {
    while (!closed) {
      let cleanEnd = false;
      try {
        abort = new AbortController();
        const resp = await fetch(
          `${baseUrl}/campaigns/${encodeURIComponent(campaignId)}/stream`,
          { signal: abort.signal },
        );
        if (!resp.ok || !resp.body) throw new Error(`stream HTTP ${resp.status}`);
        options.onReset?.();
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done: eof, value } = await reader.read();
          if (eof) {
            cleanEnd = true; // server closed: campaign is terminal
            break;
          }
          buffer += decoder.decode(value, { stream: true });
          const { events, rest } = parseSseChunk(buffer);
          buffer = rest;
          for (const data of events) onObject(JSON.parse(data) as StreamObject);
        }
      } catch {
        cleanEnd = false; // dropped mid-stream or connect failure
      }
      if (closed || cleanEnd) return;
      try {
        options.onBackfill?.(await api.rounds(campaignId));
      } catch {
        // backfill is best effort; the resubscribe replays the backlog anyway
      }
      await new Promise((resolve) => setTimeout(resolve, retryDelayMs));
    }
  })();

  return {
    close() {
      closed = true;
      abort.abort();
    },
    done,
  };
}
