/** Typed client for the click-session HTTP API.
 *
 * All methods throw ApiError carrying the server's {code, message} body on
 * any non-2xx response; network-level failures propagate as-is.
 */

export type Panel = "prob" | "prior" | "update";

export interface SessionInfo {
  id: string;
  width: number;
  height: number;
  n_clicks: number;
}

export interface ClickSummary {
  n_clicks: number;
  prob_at_click: number | null;
  iou: number | null;
}

export interface MaskResult {
  png: ArrayBuffer;
  noClicks: boolean;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  /** base is prepended verbatim; "" means same-origin relative URLs. */
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let code = "http_error";
      let message = `${resp.status}`;
      try {
        const body = await resp.json();
        if (body && typeof body.code === "string") code = body.code;
        if (body && typeof body.message === "string") message = body.message;
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  async createSession(
    image: Blob,
    opts: { gt?: Blob | null; seed?: string | null } = {},
  ): Promise<SessionInfo> {
    const form = new FormData();
    form.append("image", image, "image.png");
    if (opts.gt) form.append("gt", opts.gt, "gt.png");
    if (opts.seed != null && opts.seed !== "") form.append("seed", opts.seed);
    const resp = await this.request("/v1/sessions", {
      method: "POST",
      body: form,
    });
    return (await resp.json()) as SessionInfo;
  }

  async addClick(
    sid: string,
    row: number,
    col: number,
    label: 1 | -1,
  ): Promise<ClickSummary> {
    const resp = await this.request(`/v1/sessions/${sid}/clicks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ row, col, label }),
    });
    return (await resp.json()) as ClickSummary;
  }

  async undo(sid: string): Promise<ClickSummary> {
    const resp = await this.request(`/v1/sessions/${sid}/undo`, {
      method: "POST",
    });
    return (await resp.json()) as ClickSummary;
  }

  async mask(sid: string): Promise<MaskResult> {
    const resp = await this.request(`/v1/sessions/${sid}/mask`);
    return {
      png: await resp.arrayBuffer(),
      noClicks: resp.headers.get("X-No-Clicks") === "1",
    };
  }

  async map(sid: string, panel: Panel): Promise<ArrayBuffer> {
    const resp = await this.request(
      `/v1/sessions/${sid}/maps?panel=${encodeURIComponent(panel)}`,
    );
    return resp.arrayBuffer();
  }

  async remove(sid: string): Promise<void> {
    await this.request(`/v1/sessions/${sid}`, { method: "DELETE" });
  }
}
