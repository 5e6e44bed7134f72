/** Raw RGBA pixels, the shape shared by canvas ImageData. */
export interface PixelBuffer {
  width: number;
  height: number;
  data: Uint8ClampedArray;
}

/**
 * Alpha-blend the relevance overlay onto the raw preview:
 * out = (1 - alpha) * raw + alpha * overlay per RGB channel.
 *
 * alpha = 0 is an exact identity — the result is byte-for-byte the raw
 * preview, with no rounding applied.
 */
export function blend(
  raw: PixelBuffer,
  overlay: PixelBuffer,
  alpha: number,
): PixelBuffer {
  if (alpha < 0 || alpha > 1 || Number.isNaN(alpha)) {
    throw new RangeError(`alpha must lie in [0, 1], got ${alpha}`);
  }
  if (raw.width !== overlay.width || raw.height !== overlay.height) {
    throw new RangeError(
      `dimension mismatch: raw ${raw.width}x${raw.height}, overlay ${overlay.width}x${overlay.height}`,
    );
  }
  const out = new Uint8ClampedArray(raw.data);
  if (alpha === 0) {
    return { width: raw.width, height: raw.height, data: out };
  }
  for (let i = 0; i < out.length; i += 4) {
    out[i] = (1 - alpha) * raw.data[i] + alpha * overlay.data[i];
    out[i + 1] = (1 - alpha) * raw.data[i + 1] + alpha * overlay.data[i + 1];
    out[i + 2] = (1 - alpha) * raw.data[i + 2] + alpha * overlay.data[i + 2];
    out[i + 3] = 255;
  }
  return { width: raw.width, height: raw.height, data: out };
}

/**
 * Draw the blended composite onto a canvas from two decoded images.
 * Returns false where the 2D canvas API is unavailable (e.g. non-browser
 * test environments); the live preview then relies on CSS compositing only.
 */
export function renderComposite(
  canvas: HTMLCanvasElement,
  raw: HTMLImageElement,
  overlay: HTMLImageElement,
  alpha: number,
): boolean {
  const context = canvas.getContext("2d");
  if (!context) return false;
  canvas.width = raw.naturalWidth;
  canvas.height = raw.naturalHeight;
  context.drawImage(raw, 0, 0);
  const rawPixels = context.getImageData(0, 0, canvas.width, canvas.height);
  context.drawImage(overlay, 0, 0, canvas.width, canvas.height);
  const overlayPixels = context.getImageData(0, 0, canvas.width, canvas.height);
  const composite = blend(rawPixels, overlayPixels, alpha);
  const imageData = context.createImageData(composite.width, composite.height);
  imageData.data.set(composite.data);
  context.putImageData(imageData, 0, 0);
  return true;
}
