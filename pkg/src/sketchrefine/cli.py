"""Command-line entry point.

Subcommands: ``gen`` (synthesize a corpus to disk), ``build-index`` (fit shape
spaces from an exported corpus), ``refine`` (run the pipeline on one item
directory), ``eval`` (perturb-and-recover benchmark), ``serve`` (HTTP
service).  Exit codes: 0 success, 1 usage error, 2 data error, 3 internal
error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import (
    _LABEL_COLORS,
    corpus_entries,
    corpus_prior,
    export_item,
    ingest_item,
    load_index,
    sample_corpus,
    save_index,
)
from .errors import MissingFile, SketchRefineError
from .pipeline import RefineRequest, perturb_and_recover, run_pipeline
from .shapespace import DEFAULT_LATENT_DIM, DEFAULT_NEIGHBORS, build_shape_spaces
from .structure import DEFAULT_STEPS, PerturbMagnitude

_ITEM_PREFIX = "item_"


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchrefine",
        description="Sketch refinement: corpus generation, indexing, pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("--n", type=int, required=True, help="number of figures")
    gen.add_argument("--seed", type=int, default=0, help="master seed")
    gen.add_argument("--out", required=True, help="output directory")

    build = sub.add_parser("build-index", help="fit shape spaces from a corpus")
    build.add_argument("--corpus", required=True, help="directory of item folders")
    build.add_argument(
        "--d", type=int, default=DEFAULT_LATENT_DIM, help="latent dimensionality"
    )
    build.add_argument("--out", required=True, help="output .frix file")

    refine = sub.add_parser("refine", help="refine one exported item")
    refine.add_argument("--index", required=True, help=".frix index file")
    refine.add_argument("--in", dest="in_dir", required=True, help="item directory")
    refine.add_argument("--out", required=True, help="output directory")
    refine.add_argument("--k", type=int, default=DEFAULT_NEIGHBORS)
    refine.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    refine.add_argument(
        "--no-projection", action="store_true", help="skip shape-space projection"
    )
    refine.add_argument(
        "--no-transform", action="store_true", help="skip cascaded alignment"
    )

    ev = sub.add_parser("eval", help="perturb-and-recover benchmark")
    ev.add_argument("--index", required=True, help=".frix index file")
    ev.add_argument("--corpus", required=True, help="directory of item folders")
    ev.add_argument("--seeds", type=int, default=20, help="number of seeded runs")
    ev.add_argument(
        "--magnitude",
        default=None,
        help="T,R,S,H: translation px, rotation deg, scale frac, shear frac",
    )
    ev.add_argument("--report", required=True, help="output JSON report path")

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--index", required=True, help=".frix index file")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--host", default="127.0.0.1")

    return parser


def _item_dirs(corpus_dir: Path) -> list[Path]:
    if not corpus_dir.is_dir():
        raise MissingFile(f"no corpus directory at {corpus_dir}")
    dirs = sorted(p for p in corpus_dir.iterdir() if p.is_dir())
    if not dirs:
        raise MissingFile(f"corpus directory {corpus_dir} has no item folders")
    return dirs


def _load_corpus(corpus_dir: Path) -> list:
    return [
        ingest_item(path, item_id=i) for i, path in enumerate(_item_dirs(corpus_dir))
    ]


def _usage_exit(message: str) -> int:
    print(f"sketchrefine: error: {message}", file=sys.stderr)
    return 1


def _parse_magnitude(text: str) -> PerturbMagnitude:
    fields = text.split(",")
    try:
        t, r, s, h = (float(f) for f in fields)
    except ValueError:
        raise SystemExit(
            _usage_exit("--magnitude expects four comma-separated numbers: T,R,S,H")
        ) from None
    return PerturbMagnitude(
        translate_px=t, rotate_deg=r, scale_frac=s, shear_frac=h
    )


def _cmd_gen(args: argparse.Namespace) -> int:
    if args.n < 0:
        return _usage_exit("--n must be non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = sample_corpus(args.n, master_seed=args.seed)
    for item in items:
        export_item(item, out / f"{_ITEM_PREFIX}{item.item_id:04d}")
    print(f"wrote {len(items)} figure(s) to {out}")
    return 0


def _cmd_build_index(args: argparse.Namespace) -> int:
    if args.d < 1:
        return _usage_exit("--d must be at least 1")
    items = _load_corpus(Path(args.corpus))
    index = build_shape_spaces(corpus_entries(items), latent_dim=args.d)
    prior = corpus_prior(items)
    path = save_index(index, Path(args.out), prior=prior)
    sizes = ", ".join(
        f"{cls.name}:{space.size}" for cls, space in sorted(index.spaces.items())
    )
    print(f"wrote index {path} ({sizes})")
    return 0


def _cmd_refine(args: argparse.Namespace) -> int:
    if args.k < 1:
        return _usage_exit("--k must be at least 1")
    if args.steps < 0:
        return _usage_exit("--steps must be non-negative")
    index, prior = load_index(Path(args.index))
    item = ingest_item(Path(args.in_dir), item_id=0)
    req = RefineRequest.from_item(
        item,
        k=args.k,
        steps=args.steps,
        skip_projection=args.no_projection,
        skip_transformation=args.no_transform,
    )
    resp = run_pipeline(req, index, prior)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ink = 255 - np.round(resp.sketch.data * 255.0).astype(np.uint8)
    Image.fromarray(ink, mode="L").save(out / "sketch.png")
    labels = Image.fromarray(resp.parsing.data, mode="P")
    palette = [channel for color in _LABEL_COLORS for channel in color]
    labels.putpalette(palette + [0] * (768 - len(palette)))
    labels.save(out / "labels.png")
    Image.fromarray(resp.preview, mode="RGB").save(out / "preview.png")

    report = {
        "step_transforms": [
            {
                label.token: [t.a, t.b, t.tx, t.c, t.d, t.ty]
                for label, t in sorted(step.items(), key=lambda kv: int(kv[0]))
            }
            for step in resp.step_transforms
        ],
        "total_transforms": {
            label.token: [t.a, t.b, t.tx, t.c, t.d, t.ty]
            for label, t in sorted(
                resp.total_transforms.items(), key=lambda kv: int(kv[0])
            )
        },
        "projections": {
            label.token: {
                "neighbor_ids": list(result.neighbor_ids),
                "weights": [float(w) for w in result.weights],
                "residual": result.residual,
            }
            for label, result in sorted(
                resp.projections.items(), key=lambda kv: int(kv[0])
            )
        },
        "energy_trace": resp.energy_trace,
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    total = resp.timings_ms.get("total_ms", 0.0)
    print(f"refined {args.in_dir} -> {out} in {total:.0f} ms")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        return _usage_exit("--seeds must be at least 1")
    magnitude = _parse_magnitude(args.magnitude) if args.magnitude else None
    index, prior = load_index(Path(args.index))
    if prior is None:
        raise MissingFile(
            f"index {args.index} has no skeleton prior sidecar; rebuild it"
        )
    items = _load_corpus(Path(args.corpus))
    t0 = time.perf_counter()
    report = perturb_and_recover(items, prior, n_seeds=args.seeds, magnitude=magnitude)
    report["runtime_s"] = time.perf_counter() - t0
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(
        f"{args.seeds} runs: mean joint gap {report['mean_pre_gap']:.2f} px -> "
        f"{report['mean_post_gap']:.2f} px (ratio {report['gap_ratio']:.3f}), "
        f"report at {args.report}"
    )
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(args.index, port=args.port, host=args.host)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "build-index": _cmd_build_index,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems (and 0 for --help); fold usage
        # failures into this tool's exit-code contract
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 1
    except SketchRefineError as exc:
        print(f"sketchrefine: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"sketchrefine: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
