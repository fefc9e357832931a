import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(status: number, body: string) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(body, {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { impl, calls };
}

describe("ApiClient", () => {
  it("keeps the raw body for byte comparisons", async () => {
    const raw = '{"positions":[0.0,1.0],"faces":[0]}';
    const { impl } = fakeFetch(200, raw);
    const client = new ApiClient("", impl);
    const res = await client.getReference();
    expect(res.raw).toBe(raw);
    expect(res.value.positions).toEqual([0, 1]);
  });

  it("posts slider weights verbatim", async () => {
    const { impl, calls } = fakeFetch(200, '{"positions":[],"faces":[]}');
    const client = new ApiClient("", impl);
    await client.decode([{ level: 1, ae: 0, index: 2, value: 0.5 }]);
    expect(calls[0].url).toBe("/api/decode");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      weights: [{ level: 1, ae: 0, index: 2, value: 0.5 }],
    });
  });

  it("surfaces server error messages with status codes", async () => {
    const { impl } = fakeFetch(400, '{"error":"level-1 index 99 out of range","code":400}');
    const client = new ApiClient("", impl);
    await expect(client.decode([{ level: 1, ae: 0, index: 99, value: 1 }]))
      .rejects.toThrowError(ApiError);
    try {
      await client.decode([{ level: 1, ae: 0, index: 99, value: 1 }]);
    } catch (err) {
      expect((err as ApiError).status).toBe(400);
      expect((err as ApiError).message).toMatch(/out of range/);
    }
  });

  it("handles non-JSON error bodies", async () => {
    const { impl } = fakeFetch(503, "Service Unavailable");
    const client = new ApiClient("", impl);
    await expect(client.getModel()).rejects.toThrowError(/HTTP 503/);
  });

  it("prefixes the base URL", async () => {
    const { impl, calls } = fakeFetch(200, "{}");
    const client = new ApiClient("http://localhost:7878", impl);
    await client.getModel();
    expect(calls[0].url).toBe("http://localhost:7878/api/model");
  });
});
