/**
 * HTTP + server-sent-events client for the session service.
 *
 * fetch/ReadableStream only, so the same code runs in the browser and under
 * node-driven tests. A rejected action throws ApiError carrying the server's
 * rule code; the SSE generator yields events in server order and resumes
 * from an explicit sequence number after reconnects.
 */

import type {
  ClientEvent,
  HumanAction,
  SessionCreated,
  SessionMetrics,
  Snapshot,
  SubmitAck,
} from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(`${code}: ${message}`);
    this.code = code;
    this.status = status;
  }
}

export interface CreateSessionOptions {
  difficulty?: string;
  seed?: number;
  time_scale?: number;
  memorize_s?: number;
  config?: Record<string, unknown>;
}

async function parseFailure(resp: Response): Promise<never> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = (await resp.json()) as {
      error?: { code?: string; message?: string };
      detail?: string;
    };
    if (body.error?.code) {
      code = body.error.code;
      message = body.error.message ?? message;
    } else if (body.detail) {
      code = "validation_error";
      message = body.detail;
    }
  } catch {
    // non-JSON body: keep the HTTP status text
  }
  throw new ApiError(resp.status, code, message);
}

export class CoplanClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.url(path), {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) {
      await parseFailure(resp);
    }
    return (await resp.json()) as T;
  }

  createSession(options: CreateSessionOptions = {}): Promise<SessionCreated> {
    return this.request<SessionCreated>("/sessions", {
      method: "POST",
      body: JSON.stringify(options),
    });
  }

  start(sessionId: string): Promise<{ phase: string }> {
    return this.request(`/sessions/${sessionId}/start`, { method: "POST" });
  }

  state(sessionId: string): Promise<Snapshot> {
    return this.request(`/sessions/${sessionId}/state`);
  }

  submit(sessionId: string, action: HumanAction): Promise<SubmitAck> {
    return this.request(`/sessions/${sessionId}/actions`, {
      method: "POST",
      body: JSON.stringify(action),
    });
  }

  finish(sessionId: string): Promise<{ phase: string; completed: boolean }> {
    return this.request(`/sessions/${sessionId}/finish`, { method: "POST" });
  }

  metrics(sessionId: string): Promise<SessionMetrics> {
    return this.request(`/sessions/${sessionId}/metrics`);
  }

  async log(sessionId: string): Promise<string> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/log`));
    if (!resp.ok) {
      await parseFailure(resp);
    }
    return resp.text();
  }

  /**
   * Subscribe to the ordered event stream. Replays from `fromSeq`, then
   * stays live until the server's end marker or `signal` aborts.
   */
  async *events(
    sessionId: string,
    fromSeq = 0,
    signal?: AbortSignal,
  ): AsyncGenerator<ClientEvent> {
    const resp = await fetch(
      this.url(`/sessions/${sessionId}/events?from_seq=${fromSeq}`),
      { signal },
    );
    if (!resp.ok || resp.body === null) {
      await parseFailure(resp);
      return;
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) {
          return;
        }
        buffer += decoder.decode(value, { stream: true });
        let sep: number;
        while ((sep = buffer.indexOf("\n\n")) >= 0) {
          const block = buffer.slice(0, sep);
          buffer = buffer.slice(sep + 2);
          let isEnd = false;
          let data = "";
          for (const line of block.split("\n")) {
            if (line.startsWith("event: end")) {
              isEnd = true;
            } else if (line.startsWith("data: ")) {
              data += line.slice(6);
            }
            // comment lines (": ping") keep the connection warm; ignore
          }
          if (isEnd) {
            return;
          }
          if (data) {
            const parsed = JSON.parse(data) as ClientEvent;
            yield parsed;
          }
        }
      }
    } finally {
      reader.releaseLock();
      try {
        await resp.body.cancel();
      } catch {
        // stream already closed
      }
    }
  }
}
