import type { PredictionResponse } from "./types";

/** Error envelope returned by the service (422/503 paths). */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** Network-level failure: the service could not be reached at all. */
export class ServiceUnreachableError extends Error {
  constructor(cause: unknown) {
    super(`inference service unreachable: ${String(cause)}`);
    this.name = "ServiceUnreachableError";
  }
}

/**
 * Upload an image and ask for a prediction with an explanation overlay.
 *
 * The file's bytes are passed through untouched — the multipart part is the
 * picked File object itself, so the service sees exactly what was selected.
 */
export async function predict(
  file: Blob,
  filename: string,
  baseUrl = "",
): Promise<PredictionResponse> {
  const form = new FormData();
  form.append("file", file, filename);
  let response: Response;
  try {
    response = await fetch(`${baseUrl}/predict?explain=true`, {
      method: "POST",
      body: form,
    });
  } catch (cause) {
    throw new ServiceUnreachableError(cause);
  }
  if (!response.ok) {
    let code = "unknown_error";
    let message = `service responded ${response.status}`;
    try {
      const body = await response.json();
      if (body?.error) {
        code = body.error.code ?? code;
        message = body.error.message ?? message;
      }
    } catch {
      // non-JSON error body; keep the status-derived message
    }
    throw new ServiceError(response.status, code, message);
  }
  return (await response.json()) as PredictionResponse;
}

/** True when the service answers /health with 2xx. */
export async function isReachable(baseUrl = ""): Promise<boolean> {
  try {
    const response = await fetch(`${baseUrl}/health`);
    return response.ok;
  } catch {
    return false;
  }
}
