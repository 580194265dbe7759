/** Canvas geometry and rendering.
 *
 * Zoom is restricted to positive integers so the canvas-to-pixel mapping is
 * exact: the z*z square of canvas points [c*z, (c+1)*z) x [r*z, (r+1)*z)
 * maps to image pixel (r, c), with no rounding ambiguity.
 */

import type { PlacedClick } from "./state.js";

export interface PixelHit {
  row: number;
  col: number;
}

export function assertIntegerZoom(zoom: number): void {
  if (!Number.isInteger(zoom) || zoom < 1) {
    throw new Error(`zoom must be a positive integer, got ${zoom}`);
  }
}

/** Canvas coordinates to image pixel; null when outside the image. */
export function canvasToPixel(
  x: number,
  y: number,
  zoom: number,
  width: number,
  height: number,
): PixelHit | null {
  assertIntegerZoom(zoom);
  const col = Math.floor(x / zoom);
  const row = Math.floor(y / zoom);
  if (row < 0 || col < 0 || row >= height || col >= width) return null;
  return { row, col };
}

/** Center of an image pixel in canvas coordinates (for markers). */
export function pixelToCanvas(
  row: number,
  col: number,
  zoom: number,
): { x: number; y: number } {
  assertIntegerZoom(zoom);
  return { x: col * zoom + zoom / 2, y: row * zoom + zoom / 2 };
}

/** Draw base image, translucent overlay, and click markers. Browser-only. */
export async function drawScene(
  canvas: HTMLCanvasElement,
  image: ImageBitmap,
  overlayPng: ArrayBuffer | null,
  alpha: number,
  markers: PlacedClick[],
  pendingFrom: number,
  zoom: number,
): Promise<void> {
  assertIntegerZoom(zoom);
  canvas.width = image.width * zoom;
  canvas.height = image.height * zoom;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(image, 0, 0, canvas.width, canvas.height);

  if (overlayPng !== null) {
    const bitmap = await createImageBitmap(
      new Blob([overlayPng], { type: "image/png" }),
    );
    ctx.globalAlpha = alpha;
    ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 1.0;
    bitmap.close();
  }

  markers.forEach((click, i) => {
    const { x, y } = pixelToCanvas(click.row, click.col, zoom);
    ctx.beginPath();
    ctx.arc(x, y, Math.max(3, zoom * 0.45), 0, 2 * Math.PI);
    ctx.fillStyle = click.label === 1 ? "#2e7d32" : "#c62828";
    ctx.globalAlpha = i >= pendingFrom ? 0.5 : 1.0; // pending = translucent
    ctx.fill();
    ctx.globalAlpha = 1.0;
    ctx.lineWidth = 1.5;
    ctx.strokeStyle = "#ffffff";
    ctx.stroke();
  });
}
