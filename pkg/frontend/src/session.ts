/** UI session state machines.
 *
 * These classes own every conversational invariant the browser must hold;
 * the DOM layer merely renders their state and forwards user intents. They
 * contain no dialogue logic — question choice, scoring and termination are
 * the service's job — only bookkeeping about what the service said.
 *
 * Invariants enforced here:
 *  - a pane's message log preserves server turn order (answer, then the
 *    server's reply, appended atomically per completed round trip);
 *  - at most one in-flight answer per pane;
 *  - in A/B mode a single composed answer fans out to every still-active
 *    session, and input stays locked until *both* requests settle;
 *  - input is disabled once a pane concludes (both panes, in A/B mode);
 *  - a rating can only be submitted after both sessions conclude, and the
 *    side-to-variant mapping stays hidden until the rating is accepted;
 *  - failed requests surface the server's message inline and can be
 *    retried without losing the composed answer.
 */

import {
  ApiClient,
  ApiError,
  type ConclusionPayload,
  type ConversationRequest,
  type PairRequest,
  type RatingReveal,
  type StepResult,
} from "./api.js";
import { buildRatingPayload, validateRating, type RatingDraft } from "./rating.js";

export type MessageRole =
  | "question"
  | "answer"
  | "clarification"
  | "conclusion"
  | "error";

export interface Message {
  role: MessageRole;
  text: string;
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) {
    return error.status === 0
      ? error.detail
      : `service error ${error.status}: ${error.detail}`;
  }
  return String(error);
}

function conclusionText(conclusion: ConclusionPayload): string {
  const margin =
    conclusion.margin === null ? "n/a" : conclusion.margin.toString();
  return (
    `concluded: ${conclusion.reason} ` +
    `(margin ${margin}, ${conclusion.question_count} questions)`
  );
}

/** One conversation pane: its log, identity and lifecycle flags. */
export class Pane {
  readonly log: Message[] = [];
  sessionId: number | null = null;
  concluded = false;
  conclusion: ConclusionPayload | null = null;

  /** Appends the server's reply for one turn, in the order it arrived. */
  applyResult(result: StepResult): void {
    if (result.kind === "question") {
      this.log.push({ role: "question", text: result.question.text });
    } else if (result.kind === "clarification") {
      this.log.push({ role: "clarification", text: result.text });
    } else {
      this.concluded = true;
      this.conclusion = result.conclusion;
      this.log.push({ role: "conclusion", text: conclusionText(result.conclusion) });
    }
  }
}

/** Single-conversation mode: one pane, strict request serialization. */
export class SingleSession {
  readonly pane = new Pane();
  readonly mode = "single" as const;
  private inFlight = false;
  /** Composed answer preserved across a failed request, for retry. */
  pendingAnswer: string | null = null;
  lastError: string | null = null;

  constructor(private readonly api: ApiClient) {}

  get started(): boolean {
    return this.pane.sessionId !== null;
  }

  get canAnswer(): boolean {
    return this.started && !this.inFlight && !this.pane.concluded;
  }

  get canRetry(): boolean {
    return this.pendingAnswer !== null && !this.inFlight;
  }

  async start(req: ConversationRequest): Promise<void> {
    if (this.started || this.inFlight) {
      return;
    }
    this.inFlight = true;
    try {
      const result = await this.api.startConversation(req);
      this.pane.sessionId = result.session_id;
      this.pane.applyResult(result);
      this.lastError = null;
    } catch (error) {
      this.lastError = describeError(error);
      this.pane.log.push({ role: "error", text: this.lastError });
    } finally {
      this.inFlight = false;
    }
  }

  async answer(text: string): Promise<void> {
    if (!this.canAnswer || text.trim() === "") {
      return;
    }
    await this.send(text.trim());
  }

  /** Re-sends the answer whose request failed. */
  async retry(): Promise<void> {
    if (!this.canRetry || this.pane.concluded) {
      return;
    }
    const text = this.pendingAnswer as string;
    await this.send(text);
  }

  private async send(text: string): Promise<void> {
    this.inFlight = true;
    try {
      const result = await this.api.submitAnswer(
        this.pane.sessionId as number,
        text,
      );
      this.pane.log.push({ role: "answer", text });
      this.pane.applyResult(result);
      this.pendingAnswer = null;
      this.lastError = null;
    } catch (error) {
      this.pendingAnswer = text;
      this.lastError = describeError(error);
      this.pane.log.push({ role: "error", text: this.lastError });
    } finally {
      this.inFlight = false;
    }
  }
}

export type Side = "a" | "b";
export const SIDES: readonly Side[] = ["a", "b"];

/** A/B mode: two anonymized panes fed by one shared answer stream. */
export class PairedSession {
  readonly panes: Record<Side, Pane> = { a: new Pane(), b: new Pane() };
  readonly mode = "ab" as const;
  pairId: number | null = null;
  private inFlight = false;
  /** Composed answer and the sides it still needs to reach, for retry. */
  pendingAnswer: { text: string; sides: Side[] } | null = null;
  lastError: string | null = null;
  /** Side-to-variant reveal; stays null until a rating is accepted. */
  models: Record<string, string> | null = null;
  ratingError: string | null = null;
  rated = false;

  constructor(private readonly api: ApiClient) {}

  get started(): boolean {
    return this.pairId !== null;
  }

  get bothConcluded(): boolean {
    return this.panes.a.concluded && this.panes.b.concluded;
  }

  get canAnswer(): boolean {
    return (
      this.started &&
      !this.inFlight &&
      this.pendingAnswer === null &&
      !this.bothConcluded
    );
  }

  get canRetry(): boolean {
    return this.pendingAnswer !== null && !this.inFlight;
  }

  get canRate(): boolean {
    return this.started && this.bothConcluded && !this.rated;
  }

  async start(req: PairRequest): Promise<void> {
    if (this.started || this.inFlight) {
      return;
    }
    this.inFlight = true;
    try {
      const response = await this.api.startPair(req);
      this.pairId = response.pair_id;
      for (const side of SIDES) {
        const result = response.sessions[side];
        this.panes[side].sessionId = result.session_id;
        this.panes[side].applyResult(result);
      }
      this.lastError = null;
    } catch (error) {
      this.lastError = describeError(error);
      for (const side of SIDES) {
        this.panes[side].log.push({ role: "error", text: this.lastError });
      }
    } finally {
      this.inFlight = false;
    }
  }

  /** Fans one composed answer out to every still-active pane. */
  async answer(text: string): Promise<void> {
    if (!this.canAnswer || text.trim() === "") {
      return;
    }
    const targets = SIDES.filter((side) => !this.panes[side].concluded);
    await this.fanOut(text.trim(), targets);
  }

  /** Re-sends the shared answer to the sides whose requests failed. */
  async retry(): Promise<void> {
    if (!this.canRetry) {
      return;
    }
    const pending = this.pendingAnswer as { text: string; sides: Side[] };
    const targets = pending.sides.filter((side) => !this.panes[side].concluded);
    if (targets.length === 0) {
      this.pendingAnswer = null;
      return;
    }
    await this.fanOut(pending.text, targets);
  }

  private async fanOut(text: string, targets: Side[]): Promise<void> {
    this.inFlight = true;
    // Both requests are issued together and *both* are awaited before the
    // lock releases: the user cannot compose the next answer until every
    // active pane has received this one.
    const settled = await Promise.allSettled(
      targets.map((side) =>
        this.api.submitAnswer(this.panes[side].sessionId as number, text),
      ),
    );
    const failedSides: Side[] = [];
    settled.forEach((outcome, index) => {
      const side = targets[index] as Side;
      const pane = this.panes[side];
      if (outcome.status === "fulfilled") {
        pane.log.push({ role: "answer", text });
        pane.applyResult(outcome.value);
      } else {
        failedSides.push(side);
        pane.log.push({ role: "error", text: describeError(outcome.reason) });
      }
    });
    if (failedSides.length > 0) {
      this.pendingAnswer = { text, sides: failedSides };
      this.lastError = `answer did not reach side ${failedSides.join(" and ")}`;
    } else {
      this.pendingAnswer = null;
      this.lastError = null;
    }
    this.inFlight = false;
  }

  /** Validates locally, posts the rating, and stores the variant reveal. */
  async rate(draft: Omit<RatingDraft, "pairId">): Promise<RatingReveal | null> {
    if (!this.canRate) {
      this.ratingError = this.rated
        ? "this pair has already been rated"
        : "both conversations must conclude before rating";
      return null;
    }
    const full: RatingDraft = { ...draft, pairId: this.pairId as number };
    const problem = validateRating(full);
    if (problem !== null) {
      this.ratingError = problem;
      return null;
    }
    try {
      const reveal = await this.api.submitRating(buildRatingPayload(full));
      this.rated = true;
      this.models = reveal.models;
      this.ratingError = null;
      return reveal;
    } catch (error) {
      this.ratingError = describeError(error);
      return null;
    }
  }
}
