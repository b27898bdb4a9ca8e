/**
 * Rating session state machine: fetch a query, collect exactly one vote,
 * advance. Slot order is fixed for the lifetime of one query view; a vote
 * click (or number key) submits immediately and double submissions collapse
 * onto one idempotency token.
 */

import { makeIdempotencyToken, StudyClient } from "./api.js";
import type { QueryView } from "./api.js";
import { renderError, renderQuery } from "./render.js";
import { attachZoomPan } from "./zoom.js";

export interface SessionHooks {
  onRendered?: () => void;
}

export class RatingSession {
  private current: QueryView | null = null;
  private token = "";
  private pending = false;
  completed = 0;

  constructor(
    private readonly client: StudyClient,
    private readonly rater: string,
    private readonly rootEl: HTMLElement,
    private readonly hooks: SessionHooks = {},
  ) {}

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    try {
      this.current = await this.client.fetchNext(this.rater);
    } catch (err) {
      this.rootEl.innerHTML = renderError(`Could not reach the study server: ${String(err)}`);
      return;
    }
    if (this.current.query_id !== null) {
      this.token = makeIdempotencyToken(this.rater, this.current.query_id);
    }
    this.render();
  }

  private render(): void {
    if (!this.current) return;
    this.rootEl.innerHTML = renderQuery(this.current, this.completed, "");
    if (this.current.query_id !== null) {
      this.rootEl.querySelectorAll<HTMLElement>(".slot").forEach((el) => {
        el.addEventListener("click", () => void this.vote(el.dataset.slot ?? ""));
      });
      attachZoomPan(this.rootEl);
    }
    this.hooks.onRendered?.();
  }

  /** Number keys vote for the matching on-screen position. */
  handleKey(key: string): void {
    if (!this.current || this.current.query_id === null) return;
    const idx = Number.parseInt(key, 10) - 1;
    if (Number.isInteger(idx) && idx >= 0 && idx < this.current.images.length) {
      void this.vote(this.current.images[idx].slot);
    }
  }

  async vote(slot: string): Promise<void> {
    if (!this.current || this.current.query_id === null || this.pending || !slot) return;
    this.pending = true;
    try {
      const ack = await this.client.submitVote(this.rater, this.current.query_id, slot, this.token);
      if (!ack.accepted) {
        this.rootEl.innerHTML = renderError(
          `Vote rejected (${ack.reason ?? "unknown reason"}); loading the next query.`);
      } else {
        this.completed += 1;
      }
      await this.advance();
    } catch (err) {
      this.rootEl.innerHTML = renderError(
        `Vote could not be delivered (${String(err)}). Reload to retry.`);
    } finally {
      this.pending = false;
    }
  }
}
