/**
 * Typed client for the study server's JSON API.
 *
 * Vote submission is idempotent: each (rater, query) gets one token, and
 * transient network failures are retried with the same token so the server
 * can ack a replay without counting it twice.
 */

export interface SlotImage {
  slot: string;
  png_base64: string;
}

export interface QueryView {
  query_id: string | null;
  label: string;
  images: SlotImage[];
}

export interface VoteAck {
  accepted: boolean;
  duplicate?: boolean;
  reason?: string;
}

export interface StudyResults {
  total: number;
  counts: Record<string, number>;
  ratios: Record<string, number>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const delay = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class StudyClient {
  constructor(
    private readonly studyId: string,
    private readonly fetchImpl: FetchLike = fetch.bind(globalThis),
    private readonly base = "",
    private readonly retryDelayMs = 250,
  ) {}

  async fetchNext(rater: string): Promise<QueryView> {
    const url = `${this.base}/study/${encodeURIComponent(this.studyId)}/next?rater=${encodeURIComponent(rater)}`;
    const resp = await this.fetchImpl(url);
    if (!resp.ok) throw new Error(`next failed: HTTP ${resp.status}`);
    return (await resp.json()) as QueryView;
  }

  /**
   * Submit one vote. Retries up to `retries` times on *network* failure,
   * reusing the same idempotency token; an HTTP-level rejection (stale or
   * duplicate query) is surfaced to the caller, never retried.
   */
  async submitVote(
    rater: string,
    queryId: string,
    slot: string,
    token: string,
    retries = 2,
  ): Promise<VoteAck> {
    const url = `${this.base}/study/${encodeURIComponent(this.studyId)}/vote`;
    const body = JSON.stringify({ query_id: queryId, rater, slot, token });
    let lastError: unknown;
    for (let attempt = 0; attempt <= retries; attempt++) {
      try {
        const resp = await this.fetchImpl(url, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body,
        });
        return (await resp.json()) as VoteAck;
      } catch (err) {
        lastError = err;
        if (attempt < retries) await delay(this.retryDelayMs);
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  async fetchResults(): Promise<StudyResults> {
    const url = `${this.base}/study/${encodeURIComponent(this.studyId)}/results`;
    const resp = await this.fetchImpl(url);
    if (!resp.ok) throw new Error(`results failed: HTTP ${resp.status}`);
    return (await resp.json()) as StudyResults;
  }
}

/** One token per (rater, query); reused across retries of the same vote. */
export function makeIdempotencyToken(rater: string, queryId: string): string {
  const nonce = Math.random().toString(36).slice(2, 10);
  return `${rater}:${queryId}:${nonce}`;
}
