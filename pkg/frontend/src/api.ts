/** Typed client for the manipulation service.
 *
 * Every request asks for PNG payloads (Accept: image/png) so panes can
 * be shown as data URIs without any client-side decoding; diff and
 * attention maps are always PGM and go through the pgm module.
 */

export interface StagePayload {
  size: number;
  image_b64: string;
}

export interface CreateSessionResponse {
  session_id: string;
  caption: string[];
  image_b64: string;
  format: string;
  stages: StagePayload[];
}

export interface EditResponse {
  session_id: string;
  caption: string[];
  image_b64: string;
  format: string;
  diff_b64: string;
  l2_full: number;
  attention: Record<string, string>;
}

export interface SessionStateResponse {
  session_id: string;
  original_caption: string[];
  caption: string[];
  image_b64: string;
  original_image_b64: string;
  format: string;
  edits: number;
}

export interface HealthResponse {
  status: string;
  step: number;
  config_hash: string | null;
  png: boolean;
}

/** Non-2xx response; carries the server's JSON error payload. */
export class ApiError extends Error {
  status: number;
  /** Offending tokens when the server rejects out-of-vocabulary words. */
  tokens: string[];

  constructor(status: number, payload: { error?: string; tokens?: string[] }) {
    super(payload.error ?? `request failed with status ${status}`);
    this.status = status;
    this.tokens = payload.tokens ?? [];
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, {
    ...init,
    headers: {
      Accept: "image/png, application/json",
      ...(init?.body ? { "Content-Type": "application/json" } : {}),
      ...init?.headers,
    },
  });
  const body = await response.json();
  if (!response.ok) {
    throw new ApiError(response.status, body);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  health(): Promise<HealthResponse> {
    return request(this.base, "/health");
  }

  vocab(): Promise<{ tokens: string[] }> {
    return request(this.base, "/vocab");
  }

  createSession(caption: string, seed?: number): Promise<CreateSessionResponse> {
    const body: { caption: string; seed?: number } = { caption };
    if (seed !== undefined) body.seed = seed;
    return request(this.base, "/session", { method: "POST", body: JSON.stringify(body) });
  }

  editSession(sessionId: string, caption: string): Promise<EditResponse> {
    return request(this.base, `/session/${sessionId}/edit`, {
      method: "POST",
      body: JSON.stringify({ caption }),
    });
  }

  sessionState(sessionId: string): Promise<SessionStateResponse> {
    return request(this.base, `/session/${sessionId}`);
  }
}
