// Typed client for the pipeline HTTP+SSE contract. Uses plain fetch so it
// runs in browsers and in node-based tests alike (EventSource is not
// assumed; SSE is consumed by parsing the response stream).

import type {
  DefinitionCheckDoc,
  JobAccepted,
  ProgressEventDoc,
  SessionDoc,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: Record<string, unknown>,
  ) {
    super(
      typeof body.detail === 'string'
        ? body.detail
        : `request failed with HTTP ${status}`,
    );
  }

  get kind(): string {
    return typeof this.body.error === 'string' ? this.body.error : 'unknown';
  }
}

/** A long-stage POST either starts a job (202) or returns the stored result. */
export interface StageStart {
  job: JobAccepted | null;
  stored: unknown | null;
}

export interface SseParseState {
  buffer: string;
}

/** Incremental SSE parser: feed chunks, collect complete `data:` payloads. */
export function parseSseChunk(state: SseParseState, chunk: string): string[] {
  state.buffer += chunk;
  const payloads: string[] = [];
  let boundary = state.buffer.indexOf('\n\n');
  while (boundary !== -1) {
    const block = state.buffer.slice(0, boundary);
    state.buffer = state.buffer.slice(boundary + 2);
    for (const line of block.split('\n')) {
      if (line.startsWith('data: ')) {
        payloads.push(line.slice('data: '.length));
      }
    }
    boundary = state.buffer.indexOf('\n\n');
  }
  return payloads;
}

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchImpl: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(
    path: string,
    init?: RequestInit,
  ): Promise<{ status: number; body: unknown }> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const text = await response.text();
    let body: unknown = null;
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = { detail: text };
      }
    }
    if (response.status >= 400) {
      throw new ApiError(response.status, (body ?? {}) as Record<string, unknown>);
    }
    return { status: response.status, body };
  }

  private postJson(path: string, payload?: unknown) {
    return this.request(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: payload === undefined ? undefined : JSON.stringify(payload),
    });
  }

  async createSession(concept: {
    name: string;
    subject: string;
    learner_level: string | null;
  }): Promise<SessionDoc> {
    const { body } = await this.postJson('/sessions', concept);
    return body as SessionDoc;
  }

  async getSession(id: string): Promise<SessionDoc> {
    const { body } = await this.request(`/sessions/${id}`);
    return body as SessionDoc;
  }

  private async startStage(path: string): Promise<StageStart> {
    const { status, body } = await this.postJson(path);
    if (status === 202) {
      return { job: body as JobAccepted, stored: null };
    }
    return { job: null, stored: body };
  }

  startValidate(id: string): Promise<StageStart> {
    return this.startStage(`/sessions/${id}/validate`);
  }

  startAnalogies(id: string): Promise<StageStart> {
    return this.startStage(`/sessions/${id}/analogies`);
  }

  startStoryboard(id: string): Promise<StageStart> {
    return this.startStage(`/sessions/${id}/storyboard`);
  }

  startVideo(id: string): Promise<StageStart> {
    return this.startStage(`/sessions/${id}/video`);
  }

  startRegenerateScene(id: string, index: number): Promise<StageStart> {
    return this.startStage(`/sessions/${id}/scenes/${index}/regenerate`);
  }

  async choose(id: string, analogyId: string): Promise<SessionDoc> {
    const { body } = await this.postJson(`/sessions/${id}/choose`, {
      analogy_id: analogyId,
    });
    return body as SessionDoc;
  }

  async editScene(
    id: string,
    index: number,
    patch: { description?: string; image_prompt?: string },
  ): Promise<SessionDoc> {
    const { body } = await this.request(`/sessions/${id}/scenes/${index}`, {
      method: 'PATCH',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(patch),
    });
    return body as SessionDoc;
  }

  blobUrl(hash: string): string {
    return `${this.baseUrl}/blobs/${hash}`;
  }

  async definitionFromStored(stored: unknown): Promise<DefinitionCheckDoc> {
    return stored as DefinitionCheckDoc;
  }

  /**
   * Consume a job's SSE stream; resolves with the terminal event.
   * Falls back to polling the job status if the stream ends early.
   */
  async streamJob(
    job: JobAccepted,
    onEvent?: (event: ProgressEventDoc) => void,
  ): Promise<ProgressEventDoc> {
    const response = await this.fetchImpl(this.baseUrl + job.events_url);
    if (response.status >= 400 || response.body === null) {
      throw new ApiError(response.status, { detail: 'event stream unavailable' });
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const state: SseParseState = { buffer: '' };
    let terminal: ProgressEventDoc | null = null;
    for (;;) {
      const { done, value } = await reader.read();
      if (value) {
        for (const payload of parseSseChunk(state, decoder.decode(value, { stream: true }))) {
          const event = JSON.parse(payload) as ProgressEventDoc;
          onEvent?.(event);
          if (event.terminal) {
            terminal = event;
          }
        }
      }
      if (done || terminal) {
        break;
      }
    }
    if (terminal === null) {
      throw new ApiError(502, { detail: 'event stream ended without a terminal event' });
    }
    return terminal;
  }
}
