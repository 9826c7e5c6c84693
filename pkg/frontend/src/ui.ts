/** DOM layer: renders session state and forwards user intents.
 *
 * Deliberately logic-free — every conversational rule lives in the session
 * classes, every wire concern in the API client. This file only builds
 * elements, re-renders after each intent settles, and keeps controls
 * enabled exactly when the underlying session says they may be used.
 */

import {
  ApiClient,
  type DifferentialEntry,
  type DifferentialResponse,
} from "./api.js";
import {
  PairedSession,
  SingleSession,
  SIDES,
  type Message,
  type Pane,
  type Side,
} from "./session.js";

const AGE_BANDS = [
  "child (0 to 17 yrs)",
  "young adult (18 to 40 yrs)",
  "middle-aged adult (41 to 65 yrs)",
  "senior (66+ yrs)",
];
const GENDERS = ["female", "male"];
const VARIANTS = ["expert", "paraphrase", "emotive"];
const SIDE_LABELS: Record<Side, string> = { a: "model A", b: "model B" };

type ActiveSession = SingleSession | PairedSession;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function option(value: string): HTMLOptionElement {
  const node = document.createElement("option");
  node.value = value;
  node.textContent = value;
  return node;
}

function select(values: string[], selected?: string): HTMLSelectElement {
  const node = document.createElement("select");
  for (const value of values) {
    node.append(option(value));
  }
  if (selected !== undefined) {
    node.value = selected;
  }
  return node;
}

function renderMessages(container: HTMLElement, log: Message[]): void {
  container.replaceChildren();
  for (const message of log) {
    container.append(el("div", `msg msg-${message.role}`, message.text));
  }
  container.scrollTop = container.scrollHeight;
}

function renderDifferential(
  container: HTMLElement,
  entries: DifferentialEntry[],
  margin: number | null,
): void {
  container.replaceChildren();
  container.append(
    el(
      "div",
      "diff-title",
      margin === null ? "differential" : `differential (margin ${margin})`,
    ),
  );
  for (const entry of entries.slice(0, 5)) {
    const row = el("div", "diff-row");
    const bar = el("div", "diff-bar");
    bar.style.width = `${Math.round(entry.probability * 100)}%`;
    row.append(
      el("span", "diff-name", entry.name),
      el("span", "diff-prob", `${(entry.probability * 100).toFixed(1)}%`),
      bar,
    );
    container.append(row);
  }
}

interface PaneView {
  root: HTMLElement;
  title: HTMLElement;
  messages: HTMLElement;
  differential: HTMLElement;
}

function buildPaneView(label: string): PaneView {
  const root = el("section", "pane");
  const title = el("h2", "pane-title", label);
  const messages = el("div", "messages");
  const differential = el("div", "differential");
  root.append(title, messages, differential);
  return { root, title, messages, differential };
}

export class ChatUi {
  private api: ApiClient;
  private session: ActiveSession | null = null;
  private paneViews: PaneView[] = [];
  private readonly differentials = new Map<number, DifferentialResponse>();

  private readonly root: HTMLElement;
  private readonly baseUrlInput = el("input") as HTMLInputElement;
  private readonly healthNote = el("span", "health-note");
  private readonly modeSelect = select(["single", "ab"]);
  private readonly ageSelect = select(AGE_BANDS, AGE_BANDS[1]);
  private readonly genderSelect = select(GENDERS);
  private readonly rfeInput = el("input") as HTMLInputElement;
  private readonly variantA = select(VARIANTS, "expert");
  private readonly variantB = select(VARIANTS, "emotive");
  private readonly startButton = el("button", "", "start");
  private readonly panesBox = el("div", "panes");
  private readonly answerInput = el("input") as HTMLInputElement;
  private readonly sendButton = el("button", "", "send");
  private readonly retryButton = el("button", "retry", "retry");
  private readonly errorLine = el("div", "error-line");

  private readonly ratingBox = el("div", "rating");
  private readonly raterInput = el("input") as HTMLInputElement;
  private readonly pointsA = select(["0", "1"], "1");
  private readonly pointsB = select(["0", "1"], "0");
  private readonly commentInput = el("input") as HTMLInputElement;
  private readonly rateButton = el("button", "", "submit rating");
  private readonly ratingError = el("div", "error-line");
  private readonly revealLine = el("div", "reveal-line");

  constructor(root: HTMLElement) {
    this.root = root;
    this.baseUrlInput.value =
      localStorage.getItem("service-base-url") ?? "http://127.0.0.1:8000";
    this.api = new ApiClient(this.baseUrlInput.value);
    this.rfeInput.value = "sign 00-0";
    this.rfeInput.placeholder = "reason for encounter";
    this.raterInput.value = "rater-1";
    this.commentInput.placeholder = "comment (required for equal ratings)";
    this.answerInput.placeholder = "type an answer (yes / no / ...)";
    this.build();
    this.wire();
    this.render();
    void this.checkHealth();
  }

  private build(): void {
    const config = el("div", "config");
    config.append(
      el("label", "", "service"),
      this.baseUrlInput,
      this.healthNote,
      el("label", "", "mode"),
      this.modeSelect,
      el("label", "", "age"),
      this.ageSelect,
      el("label", "", "gender"),
      this.genderSelect,
      el("label", "", "reason for encounter"),
      this.rfeInput,
      el("label", "", "variant A"),
      this.variantA,
      el("label", "", "variant B"),
      this.variantB,
      this.startButton,
    );

    const composer = el("div", "composer");
    composer.append(this.answerInput, this.sendButton, this.retryButton);

    this.ratingBox.append(
      el("h2", "pane-title", "rate the pair"),
      el("label", "", "rater"),
      this.raterInput,
      el("label", "", "points for model A"),
      this.pointsA,
      el("label", "", "points for model B"),
      this.pointsB,
      this.commentInput,
      this.rateButton,
      this.ratingError,
      this.revealLine,
    );

    this.root.append(config, this.panesBox, composer, this.errorLine, this.ratingBox);
  }

  private wire(): void {
    this.baseUrlInput.addEventListener("change", () => {
      localStorage.setItem("service-base-url", this.baseUrlInput.value);
      this.api = new ApiClient(this.baseUrlInput.value);
      void this.checkHealth();
    });
    this.startButton.addEventListener("click", () => void this.start());
    this.sendButton.addEventListener("click", () => void this.send());
    this.answerInput.addEventListener("keydown", (event) => {
      if (event.key === "Enter") {
        void this.send();
      }
    });
    this.retryButton.addEventListener("click", () => void this.retry());
    this.rateButton.addEventListener("click", () => void this.rate());
  }

  private async checkHealth(): Promise<void> {
    try {
      const health = await this.api.health();
      this.healthNote.textContent = `ok: ${health.diseases} diseases, ${health.findings} findings`;
      this.healthNote.classList.remove("bad");
    } catch (error) {
      this.healthNote.textContent = String(error);
      this.healthNote.classList.add("bad");
    }
  }

  private async start(): Promise<void> {
    const profile = {
      age_band: this.ageSelect.value,
      gender: this.genderSelect.value,
      rfe: this.rfeInput.value.trim(),
    };
    this.differentials.clear();
    this.revealLine.textContent = "";
    this.ratingError.textContent = "";
    if (this.modeSelect.value === "ab") {
      const session = new PairedSession(this.api);
      this.session = session;
      this.setupPanes([SIDE_LABELS.a, SIDE_LABELS.b]);
      await session.start({
        ...profile,
        variant_a: this.variantA.value,
        variant_b: this.variantB.value,
      });
    } else {
      const session = new SingleSession(this.api);
      this.session = session;
      this.setupPanes(["conversation"]);
      await session.start(profile);
    }
    await this.refreshDifferentials();
    this.render();
    this.answerInput.focus();
  }

  private setupPanes(labels: string[]): void {
    this.paneViews = labels.map((label) => buildPaneView(label));
    this.panesBox.replaceChildren(...this.paneViews.map((view) => view.root));
  }

  private async send(): Promise<void> {
    if (!this.session || !this.session.canAnswer) {
      return;
    }
    const text = this.answerInput.value;
    if (text.trim() === "") {
      return;
    }
    this.render(); // lock controls while in flight
    await this.session.answer(text);
    if (this.session.lastError === null) {
      this.answerInput.value = "";
    }
    await this.refreshDifferentials();
    this.render();
    this.answerInput.focus();
  }

  private async retry(): Promise<void> {
    if (!this.session || !this.session.canRetry) {
      return;
    }
    await this.session.retry();
    await this.refreshDifferentials();
    this.render();
  }

  private async rate(): Promise<void> {
    if (!(this.session instanceof PairedSession)) {
      return;
    }
    const reveal = await this.session.rate({
      raterId: this.raterInput.value,
      pointsA: Number(this.pointsA.value),
      pointsB: Number(this.pointsB.value),
      comment: this.commentInput.value,
    });
    if (reveal !== null) {
      this.revealLine.textContent = `recorded as ${reveal.record.case_ref}`;
    }
    this.render();
  }

  private panes(): Pane[] {
    if (this.session instanceof PairedSession) {
      return SIDES.map((side) => (this.session as PairedSession).panes[side]);
    }
    if (this.session instanceof SingleSession) {
      return [this.session.pane];
    }
    return [];
  }

  private async refreshDifferentials(): Promise<void> {
    const jobs = this.panes()
      .filter((pane) => pane.sessionId !== null)
      .map(async (pane) => {
        const sessionId = pane.sessionId as number;
        if (pane.concluded && pane.conclusion !== null) {
          this.differentials.set(sessionId, {
            differential: pane.conclusion.differential,
            margin: pane.conclusion.margin,
          });
          return;
        }
        try {
          this.differentials.set(sessionId, await this.api.getDifferential(sessionId));
        } catch {
          // panel keeps its last known ranking
        }
      });
    await Promise.all(jobs);
  }

  private render(): void {
    const session = this.session;
    const panes = this.panes();
    panes.forEach((pane, index) => {
      const view = this.paneViews[index];
      if (view === undefined) {
        return;
      }
      renderMessages(view.messages, pane.log);
      const ranking = pane.sessionId === null
        ? undefined
        : this.differentials.get(pane.sessionId);
      if (ranking !== undefined) {
        renderDifferential(view.differential, ranking.differential, ranking.margin);
      }
    });

    // Reveal variant names only once the session reports an accepted rating.
    if (session instanceof PairedSession && session.models !== null) {
      SIDES.forEach((side, index) => {
        const view = this.paneViews[index];
        const variant = (session.models as Record<string, string>)[side];
        if (view !== undefined && variant !== undefined) {
          view.title.textContent = `${SIDE_LABELS[side]} — ${variant}`;
        }
      });
    }

    const canAnswer = session?.canAnswer ?? false;
    this.answerInput.disabled = !canAnswer;
    this.sendButton.disabled = !canAnswer;
    this.retryButton.style.display = session?.canRetry ? "" : "none";
    this.errorLine.textContent = session?.lastError ?? "";

    const pairReady =
      session instanceof PairedSession && (session.canRate || session.rated);
    this.ratingBox.style.display = pairReady ? "" : "none";
    if (session instanceof PairedSession) {
      this.rateButton.disabled = !session.canRate;
      this.ratingError.textContent = session.ratingError ?? "";
    }
  }
}
