/** Thin typed client for the imagechat HTTP API.
 *
 * Every method maps to exactly one endpoint; error responses
 * ({code, message} bodies) become ApiError exceptions.
 */

import type {
  ApiErrorBody,
  Catalog,
  ChatReply,
  RankRequest,
  RankResponse,
  SessionExport,
  SessionTurnRequest,
  StartSessionRequest,
  StartSessionResponse,
  StatelessChatRequest,
} from "./types";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.code;
  }
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = fetch) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined
        ? undefined
        : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, payload as ApiErrorBody);
    }
    return payload as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  catalog(): Promise<Catalog> {
    return this.request("GET", "/api/catalog");
  }

  startSession(req: StartSessionRequest): Promise<StartSessionResponse> {
    return this.request("POST", "/api/chat", req);
  }

  sendTurn(req: SessionTurnRequest): Promise<ChatReply> {
    return this.request("POST", "/api/chat", req);
  }

  chatStateless(req: StatelessChatRequest): Promise<ChatReply> {
    return this.request("POST", "/api/chat", req);
  }

  rank(req: RankRequest): Promise<RankResponse> {
    return this.request("POST", "/api/rank", req);
  }

  sessionExport(sessionId: string): Promise<SessionExport> {
    return this.request(
      "GET",
      `/api/session/${encodeURIComponent(sessionId)}`,
    );
  }
}
