"""HTTP click sessions: upload an image, click, fetch masks and panel maps.

State is an in-memory session table.  Each session owns its feature map
(computed once at creation), its click history, and the last posterior
sample; operations on one session serialize on its lock while distinct
sessions proceed in parallel.  All prediction happens at the test jitter
with one posterior sample per click under a per-session fixed seed, so a
given click sequence always produces the same masks.
"""

from __future__ import annotations

import hashlib
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import clicksim
from .exceptions import GpisError, InvalidInputError, NumericalError
from .image_io import encode_gray_png, encode_mask_png, load_image, load_mask
from .posterior import ClickSet, GpModel, PosteriorSample, Predictor, decompose
from .rng import MASK64

DEFAULT_MAX_IMAGE_DIM = 512
DEFAULT_SESSION_TTL = 1800.0
DEFAULT_MAX_SESSIONS = 64

PANELS = ("prob", "prior", "update")


class ServiceError(GpisError):
    """An HTTP-mappable failure."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(sid: str) -> ServiceError:
    return ServiceError(404, "unknown_session", f"no session {sid!r}")


@dataclass
class Session:
    id: str
    predictor: Predictor
    seed: int
    gt: np.ndarray | None = None
    clicks: ClickSet = field(default_factory=ClickSet)
    last_sample: PosteriorSample | None = None
    last_prob: np.ndarray | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    touched: float = field(default_factory=time.monotonic)

    def summary(self) -> dict:
        out = {"n_clicks": self.clicks.n}
        if self.clicks.n and self.last_prob is not None:
            out["prob_at_click"] = float(
                self.last_prob[self.clicks.indices[-1]]
            )
        else:
            out["prob_at_click"] = None
        if self.gt is not None and self.last_prob is not None and self.clicks.n:
            pred = self.predictor.grid(self.last_prob >= 0.5)
            out["iou"] = clicksim.iou(pred, self.gt)
        else:
            out["iou"] = None
        return out


class SessionStore:
    """TTL-evicting session table with a hard size cap."""

    def __init__(self, ttl: float, cap: int):
        self.ttl = ttl
        self.cap = cap
        self._table: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _evict_locked(self) -> None:
        now = time.monotonic()
        dead = [k for k, s in self._table.items() if now - s.touched > self.ttl]
        for k in dead:
            del self._table[k]
        while len(self._table) >= self.cap:
            oldest = min(self._table.values(), key=lambda s: s.touched)
            del self._table[oldest.id]

    def add(self, session: Session) -> None:
        with self._lock:
            self._evict_locked()
            self._table[session.id] = session

    def get(self, sid: str) -> Session:
        with self._lock:
            self._evict_locked()
            session = self._table.get(sid)
            if session is None:
                raise _not_found(sid)
            session.touched = time.monotonic()
            return session

    def remove(self, sid: str) -> None:
        with self._lock:
            if sid not in self._table:
                raise _not_found(sid)
            del self._table[sid]

    def __len__(self) -> int:
        with self._lock:
            return len(self._table)


def _seed_from_bytes(data: bytes) -> int:
    """Deterministic fallback seed: sessions on the same image behave alike."""
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little") & MASK64


def _recompute(session: Session) -> None:
    """Refresh the cached sample/probability for the current click set."""
    if session.clicks.n == 0:
        session.last_sample = None
        session.last_prob = None
        return
    sample = session.predictor.sample(session.clicks, seed=session.seed)
    session.last_sample = sample
    session.last_prob = sample.prob


def create_app(
    model: GpModel,
    *,
    max_image_dim: int = DEFAULT_MAX_IMAGE_DIM,
    session_ttl: float = DEFAULT_SESSION_TTL,
    max_sessions: int = DEFAULT_MAX_SESSIONS,
    static_dir: str | None = None,
) -> FastAPI:
    """Build the FastAPI app around one immutable model."""
    app = FastAPI(title="gpis", docs_url=None, redoc_url=None)
    store = SessionStore(session_ttl, max_sessions)
    app.state.store = store
    app.state.model = model

    try:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=["*"],
            allow_methods=["*"],
            allow_headers=["*"],
            expose_headers=["X-No-Clicks"],
        )
    except ImportError:  # pragma: no cover - cors ships with fastapi
        pass

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(InvalidInputError)
    async def _invalid(_req: Request, exc: InvalidInputError):
        return JSONResponse(
            status_code=400,
            content={"code": "invalid_input", "message": str(exc)},
        )

    @app.exception_handler(NumericalError)
    async def _numerical(_req: Request, exc: NumericalError):
        return JSONResponse(
            status_code=500,
            content={"code": "numerical_failure", "message": str(exc)},
        )

    @app.post("/v1/sessions")
    async def create_session(request: Request):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise ServiceError(400, "missing_image", "multipart field 'image' required")
        data = await upload.read() if hasattr(upload, "read") else bytes(upload, "utf-8")
        image = load_image(data)  # InvalidInputError -> 400
        if image.width > max_image_dim or image.height > max_image_dim:
            raise ServiceError(
                413, "image_too_large",
                f"image is {image.width}x{image.height}, cap is "
                f"{max_image_dim}x{max_image_dim}",
            )
        gt = None
        gt_upload = form.get("gt")
        if gt_upload is not None:
            gt_data = await gt_upload.read() if hasattr(gt_upload, "read") else bytes(
                gt_upload, "utf-8"
            )
            gt = load_mask(gt_data, expected_shape=(image.height, image.width))
        seed_field = form.get("seed")
        if seed_field is not None and str(seed_field) != "":
            try:
                seed = int(str(seed_field))
            except ValueError:
                raise ServiceError(400, "bad_seed", f"seed {seed_field!r} is not an integer")
        else:
            seed = _seed_from_bytes(data)
        session = Session(
            id=uuid.uuid4().hex,
            predictor=Predictor(model, image, cache_phi=False),
            seed=seed,
            gt=gt,
        )
        store.add(session)
        return {
            "id": session.id,
            "width": image.width,
            "height": image.height,
            "n_clicks": 0,
        }

    @app.post("/v1/sessions/{sid}/clicks")
    async def add_click(sid: str, request: Request):
        body = await request.json()
        try:
            row, col = int(body["row"]), int(body["col"])
            label = int(body["label"])
        except (KeyError, TypeError, ValueError):
            raise ServiceError(
                400, "bad_click", "body must carry integer row, col and label"
            )
        session = store.get(sid)
        with session.lock:
            p = session.predictor
            if not (0 <= row < p.height and 0 <= col < p.width):
                raise ServiceError(
                    400, "out_of_range",
                    f"({row}, {col}) outside {p.height}x{p.width} image",
                )
            if label not in (1, -1):
                raise ServiceError(400, "bad_label", "label must be +1 or -1")
            pixel = row * p.width + col
            if pixel in set(int(i) for i in session.clicks.indices):
                raise ServiceError(
                    409, "duplicate_click", f"pixel ({row}, {col}) already clicked"
                )
            session.clicks = session.clicks.with_click(pixel, label)
            _recompute(session)
            return session.summary()

    @app.post("/v1/sessions/{sid}/undo")
    async def undo_click(sid: str):
        session = store.get(sid)
        with session.lock:
            if session.clicks.n == 0:
                raise ServiceError(409, "no_clicks", "nothing to undo")
            session.clicks = session.clicks.without_last()
            _recompute(session)
            return session.summary()

    @app.get("/v1/sessions/{sid}/mask")
    async def get_mask(sid: str):
        session = store.get(sid)
        with session.lock:
            p = session.predictor
            if session.clicks.n == 0 or session.last_prob is None:
                mask = np.zeros((p.height, p.width), dtype=bool)
                headers = {"X-No-Clicks": "1"}
            else:
                mask = p.grid(session.last_prob >= 0.5)
                headers = {"X-No-Clicks": "0"}
            return Response(
                content=encode_mask_png(mask), media_type="image/png",
                headers=headers,
            )

    @app.get("/v1/sessions/{sid}/maps")
    async def get_maps(sid: str, panel: str = "prob"):
        if panel not in PANELS:
            raise ServiceError(
                400, "bad_panel", f"panel must be one of {', '.join(PANELS)}"
            )
        session = store.get(sid)
        with session.lock:
            if session.last_sample is None:
                raise ServiceError(
                    409, "no_clicks", "maps are undefined before the first click"
                )
            sample = session.last_sample
            if panel == "prob":
                values = sample.prob
            else:
                prior_prob, update_prob = decompose(sample)
                values = prior_prob if panel == "prior" else update_prob
            png = encode_gray_png(session.predictor.grid(values))
            return Response(content=png, media_type="image/png")

    @app.delete("/v1/sessions/{sid}")
    async def delete_session(sid: str):
        store.remove(sid)
        return Response(status_code=204)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
