/** DOM wiring for the single-page client. */

import { ApiClient } from "./api.js";
import { canvasToPixel, drawScene } from "./canvas.js";
import { SessionUi, type OverlayMode } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const canvas = $<HTMLCanvasElement>("view");
const statusEl = $<HTMLElement>("status");
const readoutEl = $<HTMLElement>("readout");

let api = new ApiClient();
let ui: SessionUi | null = null;
let bitmap: ImageBitmap | null = null;
let zoom = 8;
let renderToken = 0;

function nudge(message: string): void {
  statusEl.textContent = message;
  canvas.classList.remove("nudge");
  void canvas.offsetWidth; // restart the animation
  canvas.classList.add("nudge");
}

function labelFor(event: MouseEvent): 1 | -1 {
  const negToggle = $<HTMLInputElement>("neg").checked;
  const rightClick = event.button === 2;
  return rightClick || negToggle ? -1 : 1;
}

async function render(): Promise<void> {
  if (!ui || !bitmap) return;
  const token = ++renderToken;
  const markers = ui.markers();
  const pendingFrom = ui.clicks.length;
  const overlay = ui.mode === "mask" || ui.clicks.length > 0 ? ui.overlay : null;
  await drawScene(canvas, bitmap, overlay, ui.alpha, markers, pendingFrom, zoom);
  if (token !== renderToken) return; // a newer render superseded this one
  const iou = ui.iou == null ? "n/a" : ui.iou.toFixed(3);
  const prob = ui.probAtClick == null ? "n/a" : ui.probAtClick.toFixed(3);
  readoutEl.textContent =
    `clicks ${ui.clicks.length}` +
    (ui.queue.length ? ` (+${ui.queue.length} pending)` : "") +
    `  |  prob@click ${prob}  |  IoU ${iou}` +
    (ui.busy ? "  |  working..." : "");
  statusEl.textContent = ui.lastError ? `error: ${ui.lastError}` : "";
}

async function openSession(): Promise<void> {
  const imageFile = $<HTMLInputElement>("image").files?.[0];
  if (!imageFile) {
    nudge("choose an image first");
    return;
  }
  const gtFile = $<HTMLInputElement>("gt").files?.[0] ?? null;
  const seed = $<HTMLInputElement>("seed").value.trim() || null;
  api = new ApiClient($<HTMLInputElement>("base").value.trim());
  statusEl.textContent = "opening session...";
  try {
    const info = await api.createSession(imageFile, { gt: gtFile, seed });
    bitmap = await createImageBitmap(imageFile);
    ui = new SessionUi(api, info.id, info.width, info.height, () => {
      void render();
    });
    statusEl.textContent = `session ${info.id.slice(0, 8)} (${info.width}x${info.height})`;
    void render();
  } catch (err) {
    statusEl.textContent = `error: ${err instanceof Error ? err.message : err}`;
  }
}

function onCanvasClick(event: MouseEvent): void {
  if (!ui) {
    nudge("no session open");
    return;
  }
  const rect = canvas.getBoundingClientRect();
  const hit = canvasToPixel(
    event.clientX - rect.left,
    event.clientY - rect.top,
    zoom,
    ui.width,
    ui.height,
  );
  if (hit === null) {
    nudge("outside the image");
    return;
  }
  if (!ui.place(hit.row, hit.col, labelFor(event))) {
    nudge("outside the image");
  }
}

async function exportMask(): Promise<void> {
  if (!ui || ui.clicks.length === 0) {
    nudge("nothing to export yet");
    return;
  }
  const { png } = await api.mask(ui.sid);
  const url = URL.createObjectURL(new Blob([png], { type: "image/png" }));
  const a = document.createElement("a");
  a.href = url;
  a.download = "mask.png";
  a.click();
  URL.revokeObjectURL(url);
}

function wire(): void {
  $<HTMLButtonElement>("open").addEventListener("click", () => {
    void openSession();
  });
  canvas.addEventListener("mousedown", onCanvasClick);
  canvas.addEventListener("contextmenu", (e) => e.preventDefault());
  $<HTMLButtonElement>("undo").addEventListener("click", () => {
    void ui?.undo();
  });
  $<HTMLButtonElement>("export").addEventListener("click", () => {
    void exportMask();
  });
  $<HTMLSelectElement>("panel").addEventListener("change", (e) => {
    const mode = (e.target as HTMLSelectElement).value as OverlayMode;
    void ui?.setMode(mode);
  });
  $<HTMLInputElement>("alpha").addEventListener("input", (e) => {
    if (ui) {
      ui.alpha = Number((e.target as HTMLInputElement).value);
      void render();
    }
  });
  $<HTMLSelectElement>("zoom").addEventListener("change", (e) => {
    zoom = Number((e.target as HTMLSelectElement).value);
    void render();
  });
  window.addEventListener("beforeunload", () => {
    if (ui) void api.remove(ui.sid);
  });
}

wire();
