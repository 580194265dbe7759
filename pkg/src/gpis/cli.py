"""Command-line entry points.

Subcommands: train, segment, eval, bench, sweep-eps, selftest, serve.  Every
run prints its resolved configuration and seed up front; --seed falls back
to the GPCIS_SEED environment variable and then to 0.  Exit codes: 0 on
success, 1 for validation problems, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import clicksim, image_io, synthetic
from .exceptions import (
    CheckpointFormatError,
    InvalidInputError,
    NumericalError,
)
from .posterior import ClickSet, Predictor, build_model, decompose, pathwise_sample
from .rng import derive_seed, stream

SEED_ENV = "GPCIS_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError:
            raise InvalidInputError(
                f"{SEED_ENV}={env!r} is not an integer"
            ) from None
    return 0


def _announce(args, seed: int) -> None:
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "seed")
    }
    print("config:", json.dumps(config, sort_keys=True, default=str))
    print("seed:", seed)


def parse_clicks(text: str, width: int, height: int) -> ClickSet:
    """Parse the 'r,c,+;r,c,-' micro-format, reporting entry positions."""
    clicks = ClickSet()
    for pos, token in enumerate(text.split(";"), start=1):
        item = token.strip()
        if not item:
            raise InvalidInputError(f"click {pos}: empty entry")
        parts = [p.strip() for p in item.split(",")]
        if len(parts) != 3:
            raise InvalidInputError(
                f"click {pos}: expected 'row,col,+' or 'row,col,-', got {item!r}"
            )
        try:
            row, col = int(parts[0]), int(parts[1])
        except ValueError:
            raise InvalidInputError(
                f"click {pos}: non-integer coordinates in {item!r}"
            ) from None
        if parts[2] not in ("+", "-"):
            raise InvalidInputError(
                f"click {pos}: label must be '+' or '-', got {parts[2]!r}"
            )
        if not (0 <= row < height and 0 <= col < width):
            raise InvalidInputError(
                f"click {pos}: ({row}, {col}) outside {height}x{width} image"
            )
        try:
            clicks = clicks.with_click(row * width + col, 1 if parts[2] == "+" else -1)
        except InvalidInputError:
            raise InvalidInputError(
                f"click {pos}: pixel ({row}, {col}) clicked twice"
            ) from None
    return clicks


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise InvalidInputError(
            f"size {text!r} must look like 100x100"
        ) from None


def _parse_eps_levels(text: str) -> tuple[float, ...]:
    """Either a comma list or a 'A..B' range over powers of ten."""
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = float(lo_s), float(hi_s)
        e_lo, e_hi = np.log10(lo), np.log10(hi)
        if not (np.isclose(e_lo, round(e_lo)) and np.isclose(e_hi, round(e_hi))):
            raise InvalidInputError(
                f"range endpoints must be powers of ten, got {text!r}"
            )
        step = -1 if e_lo > e_hi else 1
        return tuple(
            10.0**k for k in range(int(round(e_lo)), int(round(e_hi)) + step, step)
        )
    try:
        levels = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise InvalidInputError(f"cannot parse jitter levels {text!r}") from None
    if not levels:
        raise InvalidInputError("no jitter levels given")
    return levels


def _load_pairs(args, default_suite) -> list:
    if getattr(args, "data", None):
        triples = image_io.load_dataset_dir(args.data)
        pairs = []
        for name, image, mask in triples:
            if not mask.any() or mask.all():
                raise InvalidInputError(
                    f"{name}: mask is degenerate (all one class)"
                )
            pairs.append((image, mask))
        return pairs
    n = getattr(args, "synthetic", None)
    return default_suite(n) if n else default_suite()


def _load_model(path):
    from .training import load_checkpoint

    return load_checkpoint(path).model


# -- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    from .training import TrainConfig, save_checkpoint, train, write_loss_csv

    seed = resolve_seed(args.seed)
    _announce(args, seed)
    if args.data:
        dataset = _load_pairs(args, synthetic.train_suite)
    else:
        dataset = synthetic.train_suite(args.synthetic or 200)
    cfg = TrainConfig(
        alpha=0.0 if args.no_vi else args.alpha,
        lr=args.lr,
        epochs=args.epochs,
        batch=args.batch,
        seed=seed,
        click_sampler=args.click_sampler,
        basis_count=args.basis,
        fixed_kernel=args.fixed_kernel,
        fixed_weightspace=args.fixed_weightspace,
        concat_image=not args.no_concat_image,
        hflip=args.hflip,
    )
    ckpt = train(dataset, cfg)
    save_checkpoint(ckpt, args.out)
    csv_path = args.loss_csv or (str(args.out) + ".loss.csv")
    write_loss_csv(ckpt.metadata["loss_trace"], csv_path)
    last = ckpt.metadata["loss_trace"][-1]
    print(f"checkpoint: {args.out}")
    print(f"loss csv: {csv_path}")
    print(f"final epoch {last[0]}: nfl={last[1]:.6f} vi={last[2]:.6f} total={last[3]:.6f}")
    return 0


def cmd_segment(args) -> int:
    seed = resolve_seed(args.seed)
    _announce(args, seed)
    model = _load_model(args.model)
    image = image_io.load_image(args.image)
    clicks = parse_clicks(args.clicks, image.width, image.height)
    if clicks.n == 0:
        raise InvalidInputError("at least one click is required")
    predictor = Predictor(model, image)
    sample = predictor.sample(clicks, seed=seed)
    mask = predictor.grid(sample.prob >= 0.5)
    image_io.save_png(image_io.encode_mask_png(mask), args.out)
    print(f"mask: {args.out}")
    if args.maps_out:
        os.makedirs(args.maps_out, exist_ok=True)
        prior_prob, update_prob = decompose(sample)
        panels = {"prob": sample.prob, "prior": prior_prob, "update": update_prob}
        for name, values in panels.items():
            png_path = os.path.join(args.maps_out, f"{name}.png")
            image_io.save_png(
                image_io.encode_gray_png(predictor.grid(values)), png_path
            )
            image_io.write_flat_f32(
                values, os.path.join(args.maps_out, f"{name}.f32")
            )
        print(f"maps: {args.maps_out}")
    return 0


def cmd_eval(args) -> int:
    seed = resolve_seed(args.seed)
    _announce(args, seed)
    model = _load_model(args.model)
    dataset = _load_pairs(args, synthetic.eval_suite)
    report = clicksim.evaluate(
        model, dataset, max_clicks=args.max_clicks, seed=seed, jobs=args.jobs
    )
    targets = []
    for tok in args.targets.split(","):
        tok = tok.strip()
        if tok:
            t = float(tok)
            if not 0 < t < 100:
                raise InvalidInputError(f"target {tok!r} must be in (0, 100)")
            targets.append(t)
    headers, row = [], []
    for t in targets:
        headers.append(f"NoC@{t:g}")
        row.append(f"{clicksim.noc(report.traces, t / 100.0, args.max_clicks):.2f}")
    headers += ["NoF", "IoU&1", "IoU&5", "NoIC", "SPC"]
    row += [
        f"{report.nof:d}",
        f"{report.iou_at[1]:.3f}",
        f"{report.iou_at[5]:.3f}",
        f"{report.noic:d}",
        f"{report.spc * 1000.0:.1f}ms",
    ]
    widths = [max(len(h), len(r)) for h, r in zip(headers, row)]
    print("  ".join(h.rjust(w) for h, w in zip(headers, widths)))
    print("  ".join(r.rjust(w) for r, w in zip(row, widths)))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        print(f"report: {args.report}")
    return 0


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    _announce(args, seed)
    if args.model:
        model = _load_model(args.model)
    else:
        model = build_model(l=args.basis, seed=seed, ws_mode="fixed")
    sizes = [_parse_size(tok) for tok in args.sizes.split(",") if tok.strip()]
    if not sizes:
        raise InvalidInputError("no sizes given")
    if args.repeat < 1:
        raise InvalidInputError("repeat must be at least 1")
    from .features import extract_features
    from .image_io import Image

    ms, times = [], []
    for i, (w, h) in enumerate(sizes):
        g = stream(seed, "bench", i)
        fm = extract_features(Image.from_array(g.random((h, w, 3))))
        clicks = ClickSet()
        idx = g.choice(fm.m, size=min(args.clicks, fm.m), replace=False)
        for k, p in enumerate(idx):
            clicks = clicks.with_click(int(p), 1 if k % 2 == 0 else -1)
        best = np.inf
        for r in range(args.repeat):
            t0 = time.perf_counter()
            pathwise_sample(
                fm, clicks, model.head, model.kp, model.ws,
                model.jitter.eps2_test, seed=derive_seed(seed, "draw", i, r),
                concat_image=model.concat_image,
            )
            best = min(best, time.perf_counter() - t0)
        ms.append(w * h)
        times.append(best)
        print(f"m={w * h:>8d} ({w}x{h}): {best * 1000.0:.1f} ms")
    exponent = float(np.polyfit(np.log(ms), np.log(times), 1)[0])
    import platform

    doc = {
        "sizes": ms,
        "seconds": times,
        "exponent": exponent,
        "machine": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "cpus": os.cpu_count(),
        },
    }
    print(f"scaling exponent: {exponent:.3f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"report: {args.report}")
    return 0


def cmd_sweep_eps(args) -> int:
    seed = resolve_seed(args.seed)
    _announce(args, seed)
    if args.model:
        model = _load_model(args.model)
    else:
        model = build_model(
            l=args.basis, seed=seed, kernel_mode="fixed", ws_mode="fixed",
            head_scheme="zero",
        )
    dataset = _load_pairs(args, synthetic.sweep_suite)
    levels = _parse_eps_levels(args.eps2)
    rows = clicksim.sweep_eps(
        model, dataset, levels, max_clicks=args.max_clicks, seed=seed
    )
    print(f"{'eps2':>10}  {'noic':>6}")
    for eps2, count in rows:
        print(f"{eps2:>10.1e}  {count:>6d}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("eps2,noic\n")
            for eps2, count in rows:
                fh.write(f"{eps2!r},{count}\n")
        print(f"csv: {args.csv}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    seed = resolve_seed(args.seed)
    _announce(args, seed)
    results = run_selftest(seed)
    failed = 0
    for r in results:
        status = "ok  " if r.ok else "FAIL"
        print(f"{status}  {r.name}: {r.detail}")
        failed += 0 if r.ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    seed = resolve_seed(args.seed)
    _announce(args, seed)
    model = _load_model(args.model)
    app = create_app(
        model,
        max_image_dim=args.max_image_dim,
        session_ttl=args.session_ttl,
        max_sessions=args.max_sessions,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="gpis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"run seed (fallback: ${SEED_ENV}, then 0)")

    p = sub.add_parser("train", help="fit a model on an image/mask dataset")
    p.add_argument("--data", help="dataset dir with images/ and masks/")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="train on N bundled synthetic scenes instead of --data")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--basis", type=int, default=128, help="Fourier basis count")
    p.add_argument("--click-sampler", choices=("random", "iterative"),
                   default="random")
    p.add_argument("--hflip", action="store_true",
                   help="random horizontal flips during training")
    p.add_argument("--loss-csv", help="loss trace CSV path (default: OUT.loss.csv)")
    p.add_argument("--no-vi", action="store_true",
                   help="drop the variational term (same as --alpha 0)")
    p.add_argument("--fixed-kernel", action="store_true")
    p.add_argument("--fixed-weightspace", action="store_true")
    p.add_argument("--no-concat-image", action="store_true")
    add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one image from scripted clicks")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--clicks", required=True,
                   help="clicks as 'row,col,+;row,col,-' (row-major pixels)")
    p.add_argument("--out", required=True, help="output mask PNG")
    p.add_argument("--maps-out", help="directory for prob/prior/update panels")
    add_seed(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="run the click protocol over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset dir with images/ and masks/")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="evaluate on N bundled held-out scenes")
    p.add_argument("--max-clicks", type=int, default=20)
    p.add_argument("--targets", default="85,90", help="IoU percent targets")
    p.add_argument("--report", help="write the full JSON report here")
    p.add_argument("--jobs", type=int, default=1)
    add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time one posterior sample vs pixel count")
    p.add_argument("--model")
    p.add_argument("--sizes", default="100x100,200x200,400x400")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--clicks", type=int, default=5)
    p.add_argument("--basis", type=int, default=128)
    p.add_argument("--report", help="write timings + machine metadata JSON here")
    add_seed(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-eps", help="NoIC as the test jitter shrinks")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--synthetic", type=int, metavar="N")
    p.add_argument("--eps2", default="1e-1..1e-7",
                   help="comma list or power-of-ten range like 1e-1..1e-7")
    p.add_argument("--max-clicks", type=int, default=20)
    p.add_argument("--basis", type=int, default=128)
    p.add_argument("--csv", help="write (eps2, noic) rows here")
    add_seed(p)
    p.set_defaults(func=cmd_sweep_eps)

    p = sub.add_parser("selftest", help="run the oracle validation suite")
    add_seed(p)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("serve", help="start the HTTP click-session service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--max-image-dim", type=int, default=512)
    p.add_argument("--session-ttl", type=float, default=1800.0)
    p.add_argument("--max-sessions", type=int, default=64)
    p.add_argument("--static", help="serve this directory at / (the web UI)")
    add_seed(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, CheckpointFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
