/** End-to-end walkthrough against a live service process.
 *
 * Trains the quick desk model, starts `python3 -m gpis.cli serve`, and runs
 * the scripted blob session through the real ApiClient + SessionUi: three
 * clicks reach the IoU >= 0.9 readout, the prob panel matches the mask's
 * source probabilities, and undo + re-place reproduces the overlay byte
 * for byte.
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import fs from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";

import { PNG } from "pngjs";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionUi } from "../src/state.js";

// Fixed blob scene (scene seed 3, 48x48) and the clicks scripted for it.
const SCRIPTED_CLICKS: Array<[number, number, 1 | -1]> = [
  [24, 31, 1],
  [0, 0, -1],
  [38, 24, 1],
];

const FIXTURE_PY = `
import sys
import numpy as np
from PIL import Image
from gpis.synthetic import synth_scene
img, gt = synth_scene(3, 48, 48, shape="blob")
Image.fromarray(np.uint8(img.pixels * 255.0)).save(sys.argv[1])
Image.fromarray(np.uint8(gt) * 255).save(sys.argv[2])
`;

let tmp: string;
let server: ChildProcess | null = null;
let api: ApiClient;
let ui: SessionUi;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.listen(0, "127.0.0.1", () => {
      const addr = probe.address();
      if (addr && typeof addr === "object") {
        probe.close(() => resolve(addr.port));
      } else {
        probe.close(() => reject(new Error("could not allocate a port")));
      }
    });
  });
}

async function waitForApi(base: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${base}/v1/sessions/probe/mask`);
      if (resp.status === 404) return; // the API is answering
    } catch {
      /* not listening yet */
    }
    if (Date.now() > deadline) {
      throw new Error("service did not come up in time");
    }
    await new Promise((r) => setTimeout(r, 250));
  }
}

function fileBlob(p: string): Blob {
  return new Blob([fs.readFileSync(p)], { type: "image/png" });
}

function grayAt(png: PNG, pixel: number): number {
  return png.data[pixel * 4]; // RGBA expansion of a grayscale PNG
}

beforeAll(async () => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "gpis-ui-"));
  const ckpt = path.join(tmp, "desk.ckpt");
  execFileSync(
    "python3",
    ["-m", "gpis.cli", "train", "--synthetic", "40", "--epochs", "16",
     "--batch", "4", "--out", ckpt, "--seed", "0"],
    { stdio: "pipe" },
  );
  execFileSync(
    "python3",
    ["-c", FIXTURE_PY, path.join(tmp, "scene.png"), path.join(tmp, "gt.png")],
    { stdio: "pipe" },
  );

  const port = await freePort();
  const base = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    ["-m", "gpis.cli", "serve", "--model", ckpt, "--port", String(port)],
    { stdio: "ignore" },
  );
  await waitForApi(base, 120_000);

  api = new ApiClient(base);
  const info = await api.createSession(fileBlob(path.join(tmp, "scene.png")), {
    gt: fileBlob(path.join(tmp, "gt.png")),
    seed: "0",
  });
  expect(info.width).toBe(48);
  expect(info.height).toBe(48);
  ui = new SessionUi(api, info.id, info.width, info.height);
});

afterAll(async () => {
  if (ui) await api.remove(ui.sid).catch(() => {});
  server?.kill();
});

describe("scripted blob session", () => {
  it("reaches the IoU >= 0.9 readout after three clicks", async () => {
    for (const [row, col, label] of SCRIPTED_CLICKS) {
      expect(ui.place(row, col, label)).toBe(true);
    }
    await ui.idle();
    expect(ui.lastError).toBeNull();
    expect(ui.clicks).toHaveLength(3); // mirror matches the server
    expect(ui.iou).not.toBeNull();
    expect(ui.iou!).toBeGreaterThanOrEqual(0.9);
  });

  it("prob panel equals the mask's source probabilities", async () => {
    const { png: maskBytes, noClicks } = await api.mask(ui.sid);
    expect(noClicks).toBe(false);
    const probBytes = await api.map(ui.sid, "prob");
    const mask = PNG.sync.read(Buffer.from(maskBytes));
    const prob = PNG.sync.read(Buffer.from(probBytes));
    expect(mask.width).toBe(48);
    expect(prob.width).toBe(48);
    for (let p = 0; p < 48 * 48; p++) {
      expect(grayAt(mask, p) > 0).toBe(grayAt(prob, p) >= 128);
    }
  });

  it("undo then re-place reproduces a byte-identical overlay", async () => {
    const before = Buffer.from((await api.mask(ui.sid)).png);

    await ui.undo();
    expect(ui.clicks).toHaveLength(2);
    const undone = Buffer.from((await api.mask(ui.sid)).png);
    expect(undone.equals(before)).toBe(false);

    const [row, col, label] = SCRIPTED_CLICKS[2];
    ui.place(row, col, label);
    await ui.idle();
    expect(ui.clicks).toHaveLength(3);
    const after = Buffer.from((await api.mask(ui.sid)).png);
    expect(after.equals(before)).toBe(true);
    // the UI overlay is the same bytes the mask endpoint just served
    expect(Buffer.from(ui.overlay!).equals(after)).toBe(true);
  });
});
