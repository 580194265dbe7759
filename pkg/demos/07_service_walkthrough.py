"""
Click-session service, end to end
=================================

Drives the HTTP API in process (no sockets) with a test client: open a
session by uploading a PNG, place clicks, read back masks and probability
panels, undo, and delete.  `python -m gpis.cli serve` exposes the same app
over a real port.
"""

import io

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image as PILImage

from gpis.posterior import build_model
from gpis.service import create_app
from gpis.synthetic import synth_scene

# Fixed untrained model keeps the demo quick; `serve --model` loads a
# trained checkpoint instead.
model = build_model(seed=0, kernel_mode="fixed", ws_mode="fixed",
                    head_scheme="zero")
client = TestClient(create_app(model, max_image_dim=128))

scene, gt = synth_scene(seed=7, height=48, width=48)
buf = io.BytesIO()
PILImage.fromarray(np.uint8(scene.pixels * 255.0)).save(buf, format="PNG")
gt_buf = io.BytesIO()
PILImage.fromarray(np.uint8(gt) * 255).save(gt_buf, format="PNG")

# Create a session.  The optional gt upload enables IoU readouts.
resp = client.post(
    "/v1/sessions",
    files={"image": ("scene.png", buf.getvalue(), "image/png"),
           "gt": ("gt.png", gt_buf.getvalue(), "image/png")},
    data={"seed": "0"},
)
resp.raise_for_status()
sid = resp.json()["id"]
print(f"session {sid[:8]}...: {resp.json()['width']}x{resp.json()['height']}")

# Click the middle of the shape, then one background corner.
rows, cols = np.nonzero(gt)
mid = len(rows) // 2
for row, col, label in [(int(rows[mid]), int(cols[mid]), 1), (0, 0, -1)]:
    resp = client.post(f"/v1/sessions/{sid}/clicks",
                       json={"row": row, "col": col, "label": label})
    resp.raise_for_status()
    body = resp.json()
    print(f"click ({row:>2},{col:>2},{label:+d}) -> "
          f"prob_at_click={body['prob_at_click']:.3f} IoU={body['iou']:.3f}")

# The mask endpoint returns a PNG; ?panel= selects the probability maps.
mask_png = client.get(f"/v1/sessions/{sid}/mask").content
print(f"mask PNG: {len(mask_png)} bytes")
for panel in ("prob", "prior", "update"):
    panel_png = client.get(f"/v1/sessions/{sid}/maps",
                           params={"panel": panel}).content
    print(f"{panel} panel PNG: {len(panel_png)} bytes")

# Undo rolls back to the one-click state deterministically.
resp = client.post(f"/v1/sessions/{sid}/undo")
resp.raise_for_status()
print(f"after undo: {resp.json()['n_clicks']} click(s), "
      f"IoU={resp.json()['iou']:.3f}")

client.delete(f"/v1/sessions/{sid}")
print("session deleted")
