"""Automatic click protocol and the benchmark metric suite.

The simulator mimics a careful annotator: each new click lands at the point
of the largest error region farthest from that region's border (exact
Euclidean distance transform over the 4-connected component), labeled by
the ground truth there.  Rollouts record IoU and the model's probability at
every click, and the metrics (NoC, NoF, IoU&N, NoIC) are pure arithmetic on
those traces.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import InvalidInputError
from .posterior import ClickSet, GpModel, Predictor

DEFAULT_MAX_CLICKS = 20
DEFAULT_EPS_LEVELS = tuple(10.0**-k for k in range(1, 8))


def _as_mask(arr, name: str) -> np.ndarray:
    m = np.asarray(arr)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D mask, got shape {m.shape}")
    return m.astype(bool)


def iou(a, b) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    a = _as_mask(a, "first mask")
    b = _as_mask(b, "second mask")
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def _component_distances(comp: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance of each component pixel to its complement.

    When the component covers the whole frame the image border acts as the
    complement (computed on a zero-padded copy).
    """
    if comp.all():
        padded = np.zeros((comp.shape[0] + 2, comp.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = comp
        return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    return ndimage.distance_transform_edt(comp)


def next_click(pred, gt, already_clicked=()) -> tuple[int, int] | None:
    """The protocol's next interaction, or None when nothing is left to fix.

    Picks the largest 4-connected component of pred XOR gt (ties by scan
    order), then the unclicked pixel in it with maximal distance to the
    component's complement (ties by lowest row-major index).  The label is
    +1 where the ground truth is foreground, -1 elsewhere.  Falls through
    to smaller components when a component is fully clicked already.
    """
    pred = _as_mask(pred, "prediction")
    gt = _as_mask(gt, "ground truth")
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if isinstance(already_clicked, ClickSet):
        clicked = already_clicked.indices
    else:
        clicked = np.asarray(list(already_clicked), dtype=np.int64)
    err = np.logical_xor(pred, gt)
    if not err.any():
        return None
    comp_ids, n_comp = ndimage.label(err)  # default structure = 4-connectivity
    counts = np.bincount(comp_ids.ravel())
    counts[0] = 0
    # stable sort keeps scan order among equal-sized components
    by_size = np.argsort(-counts[1:], kind="stable") + 1
    gt_flat = gt.ravel()
    for cid in by_size:
        comp = comp_ids == cid
        flat = np.flatnonzero(comp.ravel())
        open_mask = ~np.isin(flat, clicked) if clicked.size else np.ones(
            flat.size, dtype=bool
        )
        if not open_mask.any():
            continue
        dist = _component_distances(comp).ravel()[flat]
        order = np.lexsort((flat, -dist))
        for pos in order:
            if open_mask[pos]:
                p = int(flat[pos])
                return p, 1 if gt_flat[p] else -1
    return None


# -- rollouts -----------------------------------------------------------------


@dataclass
class ClickTrace:
    """One simulated interaction session.

    ``seconds`` holds wall-clock prediction times and never enters the JSON
    serialization, keeping reports reproducible byte for byte.
    """

    clicks: list = field(default_factory=list)  # (pixel, label) pairs
    iou_after: list = field(default_factory=list)
    pred_at_click: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "clicks": [[int(p), int(l)] for p, l in self.clicks],
            "iou_after": [float(v) for v in self.iou_after],
            "pred_at_click": [float(v) for v in self.pred_at_click],
        }


def _as_predictor(model, image) -> Predictor:
    if isinstance(model, Predictor):
        return model
    if isinstance(model, GpModel):
        return Predictor(model, image)
    inner = getattr(model, "model", None)
    if isinstance(inner, GpModel):
        return Predictor(inner, image)
    raise InvalidInputError("expected a model, checkpoint, or predictor")


def simulate(model, image, gt, max_clicks: int = DEFAULT_MAX_CLICKS,
             seed: int = 0, *, sigma2: float | None = None,
             eps2: float | None = None) -> ClickTrace:
    """Run the click protocol until the prediction matches gt or the budget
    runs out.  One posterior sample per round, all rounds sharing the seed,
    so a trace is a pure function of (model, image, gt, seed)."""
    gt = _as_mask(gt, "ground truth")
    if not gt.any() or gt.all():
        raise InvalidInputError("ground truth must contain both classes")
    if max_clicks < 1:
        raise InvalidInputError("max_clicks must be at least 1")
    predictor = _as_predictor(model, image)
    if gt.shape != (predictor.height, predictor.width):
        raise InvalidInputError(
            f"ground truth shape {gt.shape} does not match image "
            f"({predictor.height}, {predictor.width})"
        )
    trace = ClickTrace()
    clicks = ClickSet()
    pred = np.zeros_like(gt)
    for _ in range(max_clicks):
        nxt = next_click(pred, gt, clicks)
        if nxt is None:
            break
        pixel, label = nxt
        clicks = clicks.with_click(pixel, label)
        t0 = time.perf_counter()
        prob = predictor.predict(clicks, seed=seed, sigma2=sigma2, eps2=eps2)
        trace.seconds.append(time.perf_counter() - t0)
        pred = predictor.grid(prob >= 0.5)
        trace.clicks.append((pixel, label))
        trace.iou_after.append(iou(pred, gt))
        trace.pred_at_click.append(float(prob[pixel]))
    return trace


# -- metrics ------------------------------------------------------------------


def _require_traces(traces) -> list:
    traces = list(traces)
    if not traces:
        raise InvalidInputError("no traces to aggregate")
    return traces


def noc(traces, iou_threshold: float, max_clicks: int = DEFAULT_MAX_CLICKS) -> float:
    """Mean number of clicks to reach the IoU target; failures count as
    max_clicks."""
    traces = _require_traces(traces)
    total = 0
    for t in traces:
        hit = next(
            (i + 1 for i, v in enumerate(t.iou_after) if v >= iou_threshold),
            max_clicks,
        )
        total += hit
    return total / len(traces)


def nof(traces, iou_threshold: float) -> int:
    """Number of images whose trace never reaches the IoU target."""
    traces = _require_traces(traces)
    return sum(
        1 for t in traces if not any(v >= iou_threshold for v in t.iou_after)
    )


def iou_at(traces, n: int) -> float:
    """Mean IoU after the n-th click, clamped to each trace's last click."""
    if n < 1:
        raise InvalidInputError("click number must be at least 1")
    traces = _require_traces(traces)
    vals = [t.iou_after[min(n, len(t.iou_after)) - 1] for t in traces]
    return float(np.mean(vals))


def noic(traces) -> int:
    """Count of clicks whose recorded probability fails its label: +1 needs
    prob > 0.5 and -1 needs prob < 0.5; exactly 0.5 always counts."""
    traces = _require_traces(traces)
    bad = 0
    for t in traces:
        for (_, label), p in zip(t.clicks, t.pred_at_click):
            ok = p > 0.5 if label == 1 else p < 0.5
            bad += 0 if ok else 1
    return bad


# -- reports ------------------------------------------------------------------


@dataclass
class BenchmarkReport:
    """Traces plus the standard aggregate metrics for one evaluation run."""

    traces: list
    max_clicks: int
    noc85: float
    noc90: float
    nof: int
    iou_at: dict
    noic: int
    spc: float  # mean seconds per click; display only

    def to_json(self) -> str:
        doc = {
            "metrics": {
                "noc85": self.noc85,
                "noc90": self.noc90,
                "nof": self.nof,
                "iou_at": {str(k): v for k, v in self.iou_at.items()},
                "noic": self.noic,
                "n_images": len(self.traces),
                "max_clicks": self.max_clicks,
            },
            "traces": [t.to_json_dict() for t in self.traces],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        head = ["NoC@85", "NoC@90", "NoF", "IoU&1", "IoU&5", "NoIC", "SPC"]
        row = [
            f"{self.noc85:.2f}",
            f"{self.noc90:.2f}",
            f"{self.nof:d}",
            f"{self.iou_at.get(1, float('nan')):.3f}",
            f"{self.iou_at.get(5, float('nan')):.3f}",
            f"{self.noic:d}",
            f"{self.spc:.3f}s",
        ]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(head, widths))
        line2 = "  ".join(r.rjust(w) for r, w in zip(row, widths))
        return line1 + "\n" + line2


def evaluate(model, dataset, max_clicks: int = DEFAULT_MAX_CLICKS, seed: int = 0,
             *, sigma2: float | None = None, eps2: float | None = None,
             iou_ns=(1, 5), jobs: int = 1) -> BenchmarkReport:
    """Simulate every (image, gt) pair and aggregate the metric suite.

    Image i runs with a seed derived from (seed, i), so reports are
    reproducible regardless of ``jobs``.
    """
    from . import rng

    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("empty evaluation dataset")

    def run(i: int) -> ClickTrace:
        image, gt = dataset[i]
        return simulate(
            model, image, gt, max_clicks,
            seed=rng.derive_seed(seed, "image", i), sigma2=sigma2, eps2=eps2,
        )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(run, range(len(dataset))))
    else:
        traces = [run(i) for i in range(len(dataset))]

    click_count = sum(len(t.clicks) for t in traces)
    total_secs = sum(sum(t.seconds) for t in traces)
    return BenchmarkReport(
        traces=traces,
        max_clicks=max_clicks,
        noc85=noc(traces, 0.85, max_clicks),
        noc90=noc(traces, 0.90, max_clicks),
        nof=nof(traces, 0.90),
        iou_at={n: iou_at(traces, n) for n in iou_ns},
        noic=noic(traces),
        spc=total_secs / click_count if click_count else 0.0,
    )


def sweep_eps(model, dataset, eps_levels=DEFAULT_EPS_LEVELS,
              max_clicks: int = DEFAULT_MAX_CLICKS, seed: int = 0) -> list:
    """NoIC as the test-time jitter shrinks, with sigma2 pinned to zero.

    Every level replays the same per-image seeds, so the only moving part
    is eps2.  Returns [(eps2, noic), ...] in the given level order.
    """
    rows = []
    for eps2 in eps_levels:
        if eps2 <= 0:
            raise InvalidInputError("jitter levels must be positive")
        report = evaluate(
            model, dataset, max_clicks, seed, sigma2=0.0, eps2=float(eps2)
        )
        rows.append((float(eps2), report.noic))
    return rows
