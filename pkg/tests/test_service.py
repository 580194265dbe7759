"""HTTP session service: endpoints, error codes, determinism, eviction."""

import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image as PILImage

from gpis import synthetic
from gpis.service import SessionStore, create_app


def png_bytes(arr_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(arr_u8).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def scene():
    img, gt = synthetic.synth_scene(11, 32, 32)
    return (
        png_bytes(np.uint8(img.pixels * 255.0)),
        png_bytes(np.uint8(gt) * 255),
        gt,
    )


@pytest.fixture(scope="module")
def client(desk_model):
    app = create_app(desk_model, max_image_dim=64)
    return TestClient(app)


def make_session(client, scene, seed="5", with_gt=False):
    files = {"image": ("scene.png", scene[0], "image/png")}
    if with_gt:
        files["gt"] = ("gt.png", scene[1], "image/png")
    r = client.post("/v1/sessions", files=files, data={"seed": seed})
    assert r.status_code == 200, r.text
    return r.json()


def test_create_session(client, scene):
    doc = make_session(client, scene)
    assert set(doc) == {"id", "width", "height", "n_clicks"}
    assert (doc["width"], doc["height"], doc["n_clicks"]) == (32, 32, 0)


def test_zero_click_mask_is_background(client, scene):
    sid = make_session(client, scene)["id"]
    r = client.get(f"/v1/sessions/{sid}/mask")
    assert r.status_code == 200
    assert r.headers["x-no-clicks"] == "1"
    arr = np.asarray(PILImage.open(io.BytesIO(r.content)))
    assert arr.shape == (32, 32)
    assert (arr == 0).all()


def test_maps_409_before_first_click(client, scene):
    sid = make_session(client, scene)["id"]
    r = client.get(f"/v1/sessions/{sid}/maps", params={"panel": "prob"})
    assert r.status_code == 409
    assert r.json()["code"] == "no_clicks"


def test_click_flow_and_summary(client, scene):
    sid = make_session(client, scene, with_gt=True)["id"]
    r = client.post(f"/v1/sessions/{sid}/clicks",
                    json={"row": 12, "col": 12, "label": 1})
    assert r.status_code == 200
    doc = r.json()
    assert doc["n_clicks"] == 1
    assert 0.0 < doc["prob_at_click"] < 1.0
    assert doc["iou"] is not None and 0.0 <= doc["iou"] <= 1.0
    r = client.get(f"/v1/sessions/{sid}/mask")
    assert r.headers["x-no-clicks"] == "0"


def test_iou_missing_without_gt(client, scene):
    sid = make_session(client, scene)["id"]
    doc = client.post(f"/v1/sessions/{sid}/clicks",
                      json={"row": 12, "col": 12, "label": 1}).json()
    assert doc["iou"] is None


def test_mask_matches_prob_binarization(client, scene):
    sid = make_session(client, scene)["id"]
    client.post(f"/v1/sessions/{sid}/clicks",
                json={"row": 12, "col": 12, "label": 1})
    mask = np.asarray(PILImage.open(io.BytesIO(
        client.get(f"/v1/sessions/{sid}/mask").content)))
    prob = np.asarray(PILImage.open(io.BytesIO(
        client.get(f"/v1/sessions/{sid}/maps", params={"panel": "prob"}).content)))
    # prob panel is the rounded probability in [0, 255]; 0.5 maps to >= 128
    np.testing.assert_array_equal(mask > 0, prob >= 128)


def test_all_three_panels_render(client, scene):
    sid = make_session(client, scene)["id"]
    client.post(f"/v1/sessions/{sid}/clicks",
                json={"row": 10, "col": 20, "label": 1})
    shapes = set()
    for panel in ("prob", "prior", "update"):
        r = client.get(f"/v1/sessions/{sid}/maps", params={"panel": panel})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        shapes.add(np.asarray(PILImage.open(io.BytesIO(r.content))).shape)
    assert shapes == {(32, 32)}
    r = client.get(f"/v1/sessions/{sid}/maps", params={"panel": "bogus"})
    assert r.status_code == 400


def test_determinism_across_sessions(client, scene):
    masks = []
    for _ in range(2):
        sid = make_session(client, scene, seed="7")["id"]
        client.post(f"/v1/sessions/{sid}/clicks",
                    json={"row": 12, "col": 12, "label": 1})
        masks.append(client.get(f"/v1/sessions/{sid}/mask").content)
    assert masks[0] == masks[1]


def test_default_seed_from_image_hash(client, scene):
    a = make_session(client, scene, seed=None)
    b = make_session(client, scene, seed=None)
    for sid in (a["id"], b["id"]):
        client.post(f"/v1/sessions/{sid}/clicks",
                    json={"row": 9, "col": 9, "label": 1})
    ma = client.get(f"/v1/sessions/{a['id']}/mask").content
    mb = client.get(f"/v1/sessions/{b['id']}/mask").content
    assert ma == mb, "same upload must derive the same session seed"


def test_undo_reverts_state(client, scene):
    sid = make_session(client, scene)["id"]
    client.post(f"/v1/sessions/{sid}/clicks",
                json={"row": 12, "col": 12, "label": 1})
    m1 = client.get(f"/v1/sessions/{sid}/mask").content
    client.post(f"/v1/sessions/{sid}/clicks",
                json={"row": 3, "col": 3, "label": -1})
    r = client.post(f"/v1/sessions/{sid}/undo")
    assert r.status_code == 200 and r.json()["n_clicks"] == 1
    assert client.get(f"/v1/sessions/{sid}/mask").content == m1
    client.post(f"/v1/sessions/{sid}/undo")
    r = client.post(f"/v1/sessions/{sid}/undo")
    assert r.status_code == 409
    assert r.json()["code"] == "no_clicks"


def test_click_validation(client, scene):
    sid = make_session(client, scene)["id"]
    cases = [
        ({"row": 40, "col": 0, "label": 1}, 400),
        ({"row": -1, "col": 0, "label": 1}, 400),
        ({"row": 0, "col": 0, "label": 2}, 400),
        ({"row": 0, "label": 1}, 400),
    ]
    for body, status in cases:
        r = client.post(f"/v1/sessions/{sid}/clicks", json=body)
        assert r.status_code == status, (body, r.status_code)
        assert "code" in r.json() and "message" in r.json()
    client.post(f"/v1/sessions/{sid}/clicks", json={"row": 4, "col": 4, "label": 1})
    r = client.post(f"/v1/sessions/{sid}/clicks", json={"row": 4, "col": 4, "label": -1})
    assert r.status_code == 409
    assert r.json()["code"] == "duplicate_click"


def test_unknown_session_404(client):
    assert client.get("/v1/sessions/nope/mask").status_code == 404
    assert client.post("/v1/sessions/nope/clicks",
                       json={"row": 0, "col": 0, "label": 1}).status_code == 404
    assert client.delete("/v1/sessions/nope").status_code == 404


def test_image_too_large_413(client):
    big = png_bytes(np.zeros((10, 65, 3), dtype=np.uint8))
    r = client.post("/v1/sessions", files={"image": ("b.png", big, "image/png")})
    assert r.status_code == 413
    assert r.json()["code"] == "image_too_large"


def test_undecodable_image_400(client):
    r = client.post("/v1/sessions",
                    files={"image": ("x.png", b"not a png", "image/png")})
    assert r.status_code == 400


def test_missing_image_field_400(client):
    r = client.post("/v1/sessions", data={"seed": "1"})
    assert r.status_code == 400


def test_gt_shape_mismatch_400(client, scene):
    bad_gt = png_bytes(np.zeros((16, 16), dtype=np.uint8))
    r = client.post("/v1/sessions",
                    files={"image": ("scene.png", scene[0], "image/png"),
                           "gt": ("gt.png", bad_gt, "image/png")})
    assert r.status_code == 400


def test_delete_session(client, scene):
    sid = make_session(client, scene)["id"]
    assert client.delete(f"/v1/sessions/{sid}").status_code == 204
    assert client.get(f"/v1/sessions/{sid}/mask").status_code == 404


def test_cors_headers_present(client, scene):
    r = client.post("/v1/sessions",
                    files={"image": ("scene.png", scene[0], "image/png")},
                    headers={"origin": "http://localhost:5173"})
    assert r.headers.get("access-control-allow-origin") == "*"


# -- SessionStore unit behavior ------------------------------------------------------


class FakeClock:
    """Stands in for the time module inside gpis.service."""

    def __init__(self):
        self.t = 0.0

    def monotonic(self):
        return self.t


@pytest.fixture()
def clock(monkeypatch):
    import gpis.service as service_mod

    fake = FakeClock()
    monkeypatch.setattr(service_mod, "time", fake)
    return fake


def entry(sid, touched):
    import types

    return types.SimpleNamespace(id=sid, touched=touched,
                                 lock=threading.Lock())


def test_store_cap_evicts_oldest(clock):
    from gpis.service import ServiceError

    store = SessionStore(ttl=1000.0, cap=3)
    for i in range(4):
        clock.t = float(i)
        store.add(entry(f"s{i}", clock.t))
    assert len(store) == 3
    with pytest.raises(ServiceError):
        store.get("s0")
    assert store.get("s3").id == "s3"


def test_store_ttl_expiry_and_touch(clock):
    from gpis.service import ServiceError

    store = SessionStore(ttl=10.0, cap=8)
    store.add(entry("a", 0.0))
    store.add(entry("b", 0.0))
    clock.t = 8.0
    assert store.get("a").id == "a"  # touches a
    clock.t = 17.0
    assert store.get("a").id == "a"  # within ttl of the touch
    with pytest.raises(ServiceError):
        store.get("b")  # expired untouched
