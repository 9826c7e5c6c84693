/** Typed HTTP client for the dialogue service.
 *
 * This module is the only place the frontend touches the network. Every
 * exported method maps 1:1 onto a service endpoint and returns the parsed
 * JSON payload; non-2xx responses become `ApiError` so callers can surface
 * the server's own detail message inline and offer a retry.
 *
 * No dialogue logic lives here (or anywhere else in the browser): question
 * selection, emote choice, scoring and termination are all server-side.
 */

export interface QuestionPayload {
  text: string;
  finding_id: string;
  emote: string;
}

export interface DifferentialEntry {
  disease_id: string;
  name: string;
  raw_score: number;
  probability: number;
}

export interface ConclusionPayload {
  reason: string;
  margin: number | null;
  question_count: number;
  differential: DifferentialEntry[];
}

/** One turn's outcome for a session, as returned by start/answer calls. */
export type StepResult =
  | { kind: "question"; question: QuestionPayload }
  | { kind: "clarification"; text: string }
  | { kind: "conclusion"; conclusion: ConclusionPayload };

export interface ConversationRequest {
  age_band: string;
  gender: string;
  rfe: string;
  variant?: string;
  seed?: number;
  emote_mode?: string;
  max_questions?: number;
  margin_threshold?: number;
}

export type StartResult = StepResult & { session_id: number };

export interface PairRequest {
  age_band: string;
  gender: string;
  rfe: string;
  variant_a: string;
  variant_b: string;
  seed?: number;
}

export interface PairResponse {
  pair_id: number;
  sessions: { a: StartResult; b: StartResult };
}

export interface DifferentialResponse {
  differential: DifferentialEntry[];
  margin: number | null;
}

export interface RatingPayload {
  pair_id: number;
  rater_id: string;
  points_a: number;
  points_b: number;
  comment: string;
}

/** Rating acknowledgement; `models` is the side-to-variant reveal. */
export interface RatingReveal {
  record: {
    rater_id: string;
    case_ref: string;
    points_a: number;
    points_b: number;
    comment: string;
  };
  models: Record<string, string>;
}

export interface HealthResponse {
  status: string;
  diseases: number;
  findings: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn =
      fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: body === undefined ? {} : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (error) {
      throw new ApiError(0, `service unreachable: ${String(error)}`);
    }
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        const parsed = JSON.parse(text) as { detail?: unknown };
        if (typeof parsed.detail === "string") {
          detail = parsed.detail;
        } else if (parsed.detail !== undefined) {
          detail = JSON.stringify(parsed.detail);
        }
      } catch {
        // keep raw body as the detail
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  startConversation(req: ConversationRequest): Promise<StartResult> {
    return this.request("POST", "/conversations", req);
  }

  submitAnswer(sessionId: number, answerText: string): Promise<StepResult> {
    return this.request("POST", `/conversations/${sessionId}/answers`, {
      text: answerText,
    });
  }

  getDifferential(sessionId: number): Promise<DifferentialResponse> {
    return this.request("GET", `/conversations/${sessionId}/differential`);
  }

  startPair(req: PairRequest): Promise<PairResponse> {
    return this.request("POST", "/pairs", req);
  }

  submitRating(payload: RatingPayload): Promise<RatingReveal> {
    return this.request("POST", "/ratings", payload);
  }
}
