"""
Linear scaling of a posterior draw
==================================

Times one pathwise sample as the image grows and fits the scaling exponent
of time vs pixel count.  Nothing in the sampler forms an m x m matrix, so
the fit lands near 1.0 rather than the naive cubic.
"""

import time

import numpy as np

from gpis.features import extract_features
from gpis.image_io import Image
from gpis.posterior import ClickSet, build_model, pathwise_sample
from gpis.rng import derive_seed, stream

model = build_model(l=128, seed=0, ws_mode="fixed")

sizes = [(64, 64), (128, 128), (256, 256), (512, 512)]
pixel_counts, seconds = [], []
print(f"{'image':>10}  {'pixels':>8}  {'ms/draw':>8}")
for i, (w, h) in enumerate(sizes):
    g = stream(0, "bench", i)
    fm = extract_features(Image.from_array(g.random((h, w, 3))))
    clicks = ClickSet()
    for k, p in enumerate(g.choice(fm.m, size=5, replace=False)):
        clicks = clicks.with_click(int(p), 1 if k % 2 == 0 else -1)
    best = np.inf
    for r in range(3):
        t0 = time.perf_counter()
        pathwise_sample(fm, clicks, model.head, model.kp, model.ws,
                        model.jitter.eps2_test,
                        seed=derive_seed(0, "draw", i, r),
                        concat_image=model.concat_image)
        best = min(best, time.perf_counter() - t0)
    pixel_counts.append(w * h)
    seconds.append(best)
    print(f"{w}x{h:>5}  {w * h:>8}  {best * 1000.0:>8.1f}")

slope = np.polyfit(np.log(pixel_counts), np.log(seconds), 1)[0]
print(f"fitted exponent: {slope:.3f}  (1.0 = linear in pixels)")
