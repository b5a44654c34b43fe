/**
 * NDJSON event stream client.
 *
 * Reads GET /events as an incremental byte stream, splits it into lines,
 * skips the blank keepalive heartbeats, and hands each parsed record to the
 * caller in seq order. On any break it reconnects and resumes from the seq
 * after the last record it delivered, so no event is lost or duplicated.
 */

import { EventRecord, parseEventRecord } from "./protocol.js";

export type ConnectionState = "connecting" | "live" | "retrying" | "closed";

/**
 * Incremental line splitter: feed chunks, get completed lines.
 * Carries partial trailing lines between feeds.
 */
export class LineSplitter {
  private partial = "";

  feed(chunk: string): string[] {
    const combined = this.partial + chunk;
    const pieces = combined.split("\n");
    this.partial = pieces.pop() ?? "";
    return pieces;
  }

  /** The unterminated tail, if the stream ended mid-line. */
  flush(): string {
    const rest = this.partial;
    this.partial = "";
    return rest;
  }
}

export interface StreamCallbacks {
  onRecord(record: EventRecord): void;
  onState?(state: ConnectionState, detail?: string): void;
}

export interface StreamOptions {
  fromSeq?: number;
  retryDelayMs?: number;
  fetchImpl?: typeof fetch;
}

export class EventStream {
  private nextSeq: number;
  private readonly retryDelayMs: number;
  private readonly fetchImpl: typeof fetch;
  private stopped = false;
  private abort: AbortController | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly callbacks: StreamCallbacks,
    options: StreamOptions = {},
  ) {
    this.nextSeq = options.fromSeq ?? 0;
    this.retryDelayMs = options.retryDelayMs ?? 1000;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  /** Seq the next (re)connection will resume from. */
  get resumeSeq(): number {
    return this.nextSeq;
  }

  /** Run until close(); resolves once closed. */
  async run(): Promise<void> {
    while (!this.stopped) {
      this.setState(this.nextSeq === 0 ? "connecting" : "retrying");
      try {
        await this.consumeOnce();
        if (!this.stopped) {
          this.setState("retrying", "stream ended");
        }
      } catch (err) {
        if (this.stopped) break;
        this.setState("retrying", String(err));
      }
      if (!this.stopped) {
        await sleep(this.retryDelayMs);
      }
    }
    this.setState("closed");
  }

  close(): void {
    this.stopped = true;
    this.abort?.abort();
  }

  private async consumeOnce(): Promise<void> {
    this.abort = new AbortController();
    const url = `${this.baseUrl}/events?from_seq=${this.nextSeq}`;
    const res = await this.fetchImpl(url, { signal: this.abort.signal });
    if (!res.ok || res.body === null) {
      throw new Error(`event stream responded ${res.status}`);
    }
    this.setState("live");
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    const splitter = new LineSplitter();
    for (;;) {
      const { done, value } = await reader.read();
      const text = decoder.decode(value ?? new Uint8Array(), { stream: !done });
      for (const line of splitter.feed(text)) {
        this.deliver(line);
      }
      if (done) {
        const tail = splitter.flush();
        if (tail.trim() !== "") this.deliver(tail);
        return;
      }
    }
  }

  private deliver(line: string): void {
    if (line.trim() === "") return; // keepalive heartbeat
    const record = parseEventRecord(line);
    if (record.seq < this.nextSeq) return; // duplicate after a resume race
    this.nextSeq = record.seq + 1;
    this.callbacks.onRecord(record);
  }

  private setState(state: ConnectionState, detail?: string): void {
    this.callbacks.onState?.(state, detail);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
