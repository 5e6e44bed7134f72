import { afterEach, describe, expect, it, vi } from "vitest";

import { isReachable, predict, ServiceError, ServiceUnreachableError } from "../src/api";

const RESPONSE = {
  label: "positive",
  probabilities: { negative: 0.0269, positive: 0.9731 },
  model_id: "abc123",
  heatmap: null,
  latency_ms: 12.5,
};

afterEach(() => vi.unstubAllGlobals());

describe("predict", () => {
  it("posts the picked bytes unaltered to /predict?explain=true", async () => {
    const captured: { url?: string; body?: FormData } = {};
    vi.stubGlobal(
      "fetch",
      vi.fn(async (url: string, init: RequestInit) => {
        captured.url = url;
        captured.body = init.body as FormData;
        return new Response(JSON.stringify(RESPONSE), { status: 200 });
      }),
    );

    const original = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10, 1, 2, 3]);
    const file = new File([original], "slide.png", { type: "image/png" });
    const result = await predict(file, "slide.png", "http://svc");

    expect(result).toEqual(RESPONSE);
    expect(captured.url).toBe("http://svc/predict?explain=true");
    const part = captured.body!.get("file") as File;
    const sent = new Uint8Array(
      await new Promise<ArrayBuffer>((resolve, reject) => {
        const reader = new FileReader();
        reader.onload = () => resolve(reader.result as ArrayBuffer);
        reader.onerror = () => reject(reader.error);
        reader.readAsArrayBuffer(part);
      }),
    );
    expect(Array.from(sent)).toEqual(Array.from(original)); // checksum-identical upload
  });

  it("maps service error envelopes to ServiceError", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () =>
        new Response(
          JSON.stringify({ error: { code: "undecodable_image", message: "not an image" } }),
          { status: 422 },
        ),
      ),
    );
    await expect(predict(new Blob([1 as never]), "x.png")).rejects.toMatchObject({
      name: "ServiceError",
      status: 422,
      code: "undecodable_image",
    });
  });

  it("keeps a status-derived message for non-JSON error bodies", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => new Response("boom", { status: 503 })));
    const failure = await predict(new Blob(["x"]), "x.png").catch((e: ServiceError) => e);
    expect(failure).toBeInstanceOf(ServiceError);
    expect(failure.status).toBe(503);
    expect(failure.code).toBe("unknown_error");
  });

  it("wraps network failures as ServiceUnreachableError", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => Promise.reject(new TypeError("ECONNREFUSED"))));
    await expect(predict(new Blob(["x"]), "x.png")).rejects.toBeInstanceOf(
      ServiceUnreachableError,
    );
  });
});

describe("isReachable", () => {
  it("true on a healthy service, false when unreachable", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => new Response("{}", { status: 200 })));
    expect(await isReachable()).toBe(true);
    vi.stubGlobal("fetch", vi.fn(async () => Promise.reject(new TypeError("down"))));
    expect(await isReachable()).toBe(false);
  });
});
