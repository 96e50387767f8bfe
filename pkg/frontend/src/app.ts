/** Annotation flow: fetch next pair, render, submit a choice, auto-advance.
 *
 * The view renders exactly what the server sends; nothing about sentence
 * sources or presentation order exists client-side. Failed requests raise a
 * retry banner and re-issue the same idempotent call, so a double submit
 * can never store two records.
 */

import { AnnotationApi, Choice, PairPayload } from "./api.js";

export interface AppOptions {
  api: AnnotationApi;
  annotatorId: string;
  root: HTMLElement;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export class AnnotateApp {
  private current: PairPayload | null = null;
  private busy = false;
  private retryAction: (() => Promise<void>) | null = null;
  private chain: Promise<void> = Promise.resolve();
  private keyHandler: ((event: KeyboardEvent) => void) | null = null;

  constructor(private readonly options: AppOptions) {}

  start(): Promise<void> {
    const doc = this.options.root.ownerDocument;
    this.keyHandler = (event: KeyboardEvent) => {
      if (event.key === "1") this.requestChoice("a");
      if (event.key === "2") this.requestChoice("b");
    };
    doc.addEventListener("keydown", this.keyHandler as EventListener);
    return this.track(() => this.loadNext());
  }

  stop(): void {
    if (this.keyHandler) {
      this.options.root.ownerDocument.removeEventListener(
        "keydown",
        this.keyHandler as EventListener,
      );
      this.keyHandler = null;
    }
  }

  /** Settles when every queued fetch/submit cycle has finished. */
  whenIdle(): Promise<void> {
    return this.chain;
  }

  private track(task: () => Promise<void>): Promise<void> {
    this.chain = this.chain.then(task, task);
    return this.chain;
  }

  private requestChoice(choice: Choice): void {
    if (this.busy || !this.current) return;
    this.busy = true;
    const pair = this.current;
    void this.track(() => this.submitAndAdvance(pair, choice));
  }

  private async submitAndAdvance(pair: PairPayload, choice: Choice): Promise<void> {
    try {
      await this.options.api.submit(pair.pair_id, this.options.annotatorId, choice);
    } catch (error) {
      this.showRetry(
        `Could not save your choice (${String(error)}). Nothing was lost.`,
        () => this.submitAndAdvance(pair, choice),
      );
      return;
    }
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    let response;
    try {
      response = await this.options.api.next(this.options.annotatorId);
    } catch (error) {
      this.showRetry(`Could not load the next pair (${String(error)}).`, () => this.loadNext());
      return;
    }
    this.retryAction = null;
    this.busy = false;
    if (response.done || response.pair === null) {
      this.current = null;
      this.renderDone();
      return;
    }
    this.current = response.pair;
    this.renderPair(response.pair);
  }

  private showRetry(message: string, action: () => Promise<void>): void {
    this.retryAction = action;
    const banner = this.options.root.querySelector(".retry-banner");
    const html = `
      <div class="retry-banner" role="alert">
        <span>${escapeHtml(message)}</span>
        <button type="button" class="retry-button">Retry</button>
      </div>`;
    if (banner) {
      banner.outerHTML = html;
    } else {
      this.options.root.insertAdjacentHTML("afterbegin", html);
    }
    this.bindRetry();
  }

  private bindRetry(): void {
    const button = this.options.root.querySelector<HTMLButtonElement>(".retry-button");
    button?.addEventListener("click", () => {
      const action = this.retryAction;
      if (action) void this.track(action);
    });
  }

  private renderPair(pair: PairPayload): void {
    const { root } = this.options;
    root.innerHTML = `
      <main class="pair-view">
        <header>
          <h1>${escapeHtml(pair.word)} <span class="pos">(${escapeHtml(pair.pos)})</span></h1>
          <p class="definition">${escapeHtml(pair.definition)}</p>
          <p class="progress">Pair ${pair.index + 1} of ${pair.total}</p>
        </header>
        <section class="panels">
          <button type="button" class="panel" data-choice="a">
            <span class="slot">(a)</span>
            <span class="sentence">${escapeHtml(pair.output_a)}</span>
          </button>
          <button type="button" class="panel" data-choice="b">
            <span class="slot">(b)</span>
            <span class="sentence">${escapeHtml(pair.output_b)}</span>
          </button>
        </section>
        <p class="hint">Click the better sentence, or press 1 / 2.</p>
      </main>`;
    for (const button of root.querySelectorAll<HTMLButtonElement>(".panel")) {
      button.addEventListener("click", () => {
        this.requestChoice(button.dataset.choice as Choice);
      });
    }
  }

  private renderDone(): void {
    this.options.root.innerHTML = `
      <main class="done-view">
        <h1>All pairs labeled</h1>
        <p>Thank you. You can close this tab.</p>
      </main>`;
  }
}
