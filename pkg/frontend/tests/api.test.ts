import { describe, expect, it } from "vitest";

import { makeIdempotencyToken, StudyClient } from "../src/api.js";
import type { FetchLike } from "../src/api.js";

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("StudyClient.fetchNext", () => {
  it("requests the rater's next query", async () => {
    const calls: string[] = [];
    const fetchImpl: FetchLike = async (url) => {
      calls.push(url);
      return jsonResponse({ query_id: "q0000", label: "", images: [] });
    };
    const client = new StudyClient("demo", fetchImpl);
    const view = await client.fetchNext("md one");
    expect(view.query_id).toBe("q0000");
    expect(calls[0]).toBe("/study/demo/next?rater=md%20one");
  });

  it("raises on server errors", async () => {
    const fetchImpl: FetchLike = async () => jsonResponse({ error: "x" }, 404);
    await expect(new StudyClient("demo", fetchImpl).fetchNext("r")).rejects.toThrow("404");
  });
});

describe("StudyClient.submitVote", () => {
  it("sends query, rater, slot and token", async () => {
    let body = "";
    const fetchImpl: FetchLike = async (_url, init) => {
      body = String(init?.body);
      return jsonResponse({ accepted: true });
    };
    const ack = await new StudyClient("demo", fetchImpl).submitVote("r", "q1", "s2", "tok");
    expect(ack.accepted).toBe(true);
    expect(JSON.parse(body)).toEqual({ query_id: "q1", rater: "r", slot: "s2", token: "tok" });
  });

  it("retries transient network failures with the same token", async () => {
    const bodies: string[] = [];
    let failures = 2;
    const fetchImpl: FetchLike = async (_url, init) => {
      if (failures > 0) {
        failures -= 1;
        throw new TypeError("network down");
      }
      bodies.push(String(init?.body));
      return jsonResponse({ accepted: true });
    };
    const client = new StudyClient("demo", fetchImpl, "", 1);
    const ack = await client.submitVote("r", "q1", "s0", "tok-1", 3);
    expect(ack.accepted).toBe(true);
    expect(bodies).toHaveLength(1);
    expect(JSON.parse(bodies[0]).token).toBe("tok-1");
  });

  it("does not retry an HTTP-level rejection", async () => {
    let calls = 0;
    const fetchImpl: FetchLike = async () => {
      calls += 1;
      return jsonResponse({ accepted: false, reason: "already voted on this query" }, 400);
    };
    const ack = await new StudyClient("demo", fetchImpl).submitVote("r", "q1", "s0", "tok");
    expect(ack.accepted).toBe(false);
    expect(ack.reason).toContain("already voted");
    expect(calls).toBe(1);
  });

  it("gives up after exhausting retries", async () => {
    const fetchImpl: FetchLike = async () => {
      throw new TypeError("network down");
    };
    const client = new StudyClient("demo", fetchImpl, "", 1);
    await expect(client.submitVote("r", "q1", "s0", "t", 2)).rejects.toThrow("network down");
  });
});

describe("makeIdempotencyToken", () => {
  it("binds rater and query and is unique per call", () => {
    const a = makeIdempotencyToken("md1", "q7");
    const b = makeIdempotencyToken("md1", "q7");
    expect(a).toContain("md1:q7:");
    expect(a).not.toBe(b);
  });
});
