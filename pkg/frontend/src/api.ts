import type { ApiErrorBody, CatalogInfo, EditKind, MapPayload, SessionResponse } from './types.ts';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  if (!res.ok) {
    const body = (await res.json().catch(() => ({}))) as Partial<ApiErrorBody>;
    throw new ApiError(res.status, body.code ?? 'error', body.message ?? `HTTP ${res.status}`);
  }
  return res.json() as Promise<T>;
}

function post<T>(url: string, payload: unknown): Promise<T> {
  return request<T>(url, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(payload),
  });
}

/** Thin typed client over the map-generation service. */
export class ApiClient {
  constructor(readonly base: string) {}

  catalog(): Promise<CatalogInfo> {
    return request<CatalogInfo>(`${this.base}/catalog`);
  }

  sample(labels: string[], seed: number): Promise<MapPayload> {
    return post<MapPayload>(`${this.base}/sample`, { labels, seed });
  }

  /** Create an editing session; the server samples a map for the label-set. */
  createSession(labels: string[], seed: number): Promise<SessionResponse> {
    return post<SessionResponse>(`${this.base}/session`, { labels, seed });
  }

  edit(session: string, kind: EditKind, target: string, seed: number): Promise<SessionResponse> {
    return post<SessionResponse>(`${this.base}/edit`, { session, kind, target, seed });
  }

  sessionState(session: string): Promise<SessionResponse> {
    return request<SessionResponse>(`${this.base}/session/${session}`);
  }

  exportUrl(session: string): string {
    return `${this.base}/session/${session}/export`;
  }
}
