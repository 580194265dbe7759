/** Client-side session state.
 *
 * The click list mirrors the server: a click enters `clicks` only after the
 * server acknowledges it.  Placed-but-unacknowledged clicks live in `queue`
 * and render as optimistic markers; a rejected click is rolled back (its
 * marker disappears).  At most one mutation is in flight at a time; extra
 * clicks wait in the queue and are sent sequentially.
 */

import type { ClickSummary, Panel } from "./api.js";

export type OverlayMode = "mask" | Panel;

export interface PlacedClick {
  row: number;
  col: number;
  label: 1 | -1;
}

/** The slice of ApiClient the state machine needs (narrow for testing). */
export interface SessionApi {
  addClick(
    sid: string,
    row: number,
    col: number,
    label: 1 | -1,
  ): Promise<ClickSummary>;
  undo(sid: string): Promise<ClickSummary>;
  mask(sid: string): Promise<{ png: ArrayBuffer; noClicks: boolean }>;
  map(sid: string, panel: Panel): Promise<ArrayBuffer>;
}

export class SessionUi {
  readonly clicks: PlacedClick[] = [];
  readonly queue: PlacedClick[] = [];
  mode: OverlayMode = "mask";
  alpha = 0.6;
  iou: number | null = null;
  probAtClick: number | null = null;
  overlay: ArrayBuffer | null = null;
  busy = false;
  lastError: string | null = null;

  constructor(
    private readonly api: SessionApi,
    readonly sid: string,
    readonly width: number,
    readonly height: number,
    private readonly onChange: () => void = () => {},
  ) {}

  /** Confirmed clicks plus optimistic markers, in placement order. */
  markers(): PlacedClick[] {
    return [...this.clicks, ...this.queue];
  }

  /** Queue a click.  Returns false (and issues no request) out of bounds. */
  place(row: number, col: number, label: 1 | -1): boolean {
    if (row < 0 || col < 0 || row >= this.height || col >= this.width) {
      return false;
    }
    this.queue.push({ row, col, label });
    this.onChange();
    void this.pump();
    return true;
  }

  private async pump(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.onChange();
    while (this.queue.length > 0) {
      const next = this.queue[0];
      let summary: ClickSummary;
      try {
        summary = await this.api.addClick(
          this.sid,
          next.row,
          next.col,
          next.label,
        );
      } catch (err) {
        this.queue.shift(); // roll the optimistic marker back
        this.lastError = err instanceof Error ? err.message : String(err);
        this.onChange();
        continue;
      }
      this.queue.shift();
      this.clicks.push(next);
      this.apply(summary);
      await this.safeRefreshOverlay();
      this.onChange();
    }
    this.busy = false;
    this.onChange();
  }

  async undo(): Promise<void> {
    if (this.busy || this.queue.length > 0 || this.clicks.length === 0) {
      return;
    }
    this.busy = true;
    this.onChange();
    try {
      const summary = await this.api.undo(this.sid);
      this.clicks.pop();
      this.apply(summary);
      await this.safeRefreshOverlay();
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    } finally {
      this.busy = false;
      this.onChange();
    }
  }

  async setMode(mode: OverlayMode): Promise<void> {
    this.mode = mode;
    await this.safeRefreshOverlay();
    this.onChange();
  }

  /** Resolves once the queue has drained and no request is in flight. */
  async idle(): Promise<void> {
    while (this.busy || this.queue.length > 0) {
      await new Promise((resolve) => setTimeout(resolve, 5));
    }
  }

  private apply(summary: ClickSummary): void {
    this.probAtClick = summary.prob_at_click;
    this.iou = summary.iou;
  }

  /** Refresh the overlay; a fetch failure never corrupts the click mirror. */
  private async safeRefreshOverlay(): Promise<void> {
    if (this.clicks.length === 0 && this.mode !== "mask") {
      this.overlay = null; // panels are undefined before the first click
      return;
    }
    try {
      if (this.mode === "mask") {
        this.overlay = (await this.api.mask(this.sid)).png;
      } else {
        this.overlay = await this.api.map(this.sid, this.mode);
      }
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
  }
}
