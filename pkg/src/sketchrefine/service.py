"""HTTP JSON service exposing the refinement pipeline.

All request and response bodies are JSON with snake_case fields; rasters
travel as base64 PNG strings without line breaks.  The index and skeleton
prior are loaded once at startup and shared read-only across requests, so
every response depends only on the request body.
"""

from __future__ import annotations

import base64
import binascii
import io
import socket
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from . import __version__
from .corpus import _LABEL_COLORS, ingest_item, load_index
from .errors import (
    BadLabelCode,
    DimensionMismatch,
    EmptySketch,
    IndexNotFound,
    MissingFile,
    PortInUse,
    SketchRefineError,
)
from .model import BoundingBox, PartSketch, SketchRaster, label_from_token
from .pipeline import RefineRequest, run_pipeline
from .shapespace import (
    DEFAULT_NEIGHBORS,
    ShapeSpaceIndex,
    decode_sketch,
    encode,
    project,
)
from .structure import JointId, PartKeypointSet, SkeletonPrior

_NOT_FOUND_CODES = {"missing_file", "index_not_found"}
_INTERNAL_CODES = {"internal", "non_finite_energy"}


# --- raster <-> base64 PNG ----------------------------------------------------


def _png_bytes(img: Image.Image) -> str:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_gray_png(ink: np.ndarray) -> str:
    """Ink raster (float 0..1, 1 = full ink) to dark-on-white grayscale PNG."""
    arr = 255 - np.round(np.asarray(ink, dtype=np.float64) * 255.0).astype(np.uint8)
    return _png_bytes(Image.fromarray(arr, mode="L"))


def encode_label_png(codes: np.ndarray) -> str:
    """Parsing map to palette PNG whose pixel values are the label codes."""
    img = Image.fromarray(np.asarray(codes, dtype=np.uint8), mode="P")
    palette = [channel for color in _LABEL_COLORS for channel in color]
    img.putpalette(palette + [0] * (768 - len(palette)))
    return _png_bytes(img)


def encode_rgb_png(arr: np.ndarray) -> str:
    return _png_bytes(Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB"))


def decode_gray_png(data: str, field: str) -> np.ndarray:
    """Base64 grayscale PNG back to an ink raster (float 0..1)."""
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (binascii.Error, OSError, ValueError) as exc:
        raise DimensionMismatch(f"{field} is not a valid base64 PNG: {exc}") from exc
    if img.mode != "L":
        img = img.convert("L")
    arr = np.asarray(img, dtype=np.float64)
    return (255.0 - arr) / 255.0


# --- request parsing ------------------------------------------------------------


def _parse_box(raw: object) -> BoundingBox:
    if not isinstance(raw, dict):
        raise DimensionMismatch("part box must be an object with x, y, w, h")
    try:
        return BoundingBox(
            float(raw["x"]), float(raw["y"]), float(raw["w"]), float(raw["h"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionMismatch(f"part box is malformed: {exc}") from exc


def _parse_keypoints(raw: object) -> dict:
    if not isinstance(raw, dict):
        raise DimensionMismatch("keypoints must map part tokens to joint maps")
    out = {}
    for token, joints in raw.items():
        label = label_from_token(token)
        if not isinstance(joints, dict):
            raise DimensionMismatch(f"joints of {token} must be a mapping")
        parsed = {}
        for name, xy in joints.items():
            try:
                joint = JointId(name)
            except ValueError:
                raise BadLabelCode(f"unknown joint name {name!r}") from None
            parsed[joint] = (float(xy[0]), float(xy[1]))
        out[label] = PartKeypointSet(label, parsed)
    return out


def _parse_inline_parts(raw: object) -> tuple[dict, dict]:
    if not isinstance(raw, list) or not raw:
        raise EmptySketch("request contains no parts")
    parts, masks = {}, {}
    for entry in raw:
        if not isinstance(entry, dict):
            raise DimensionMismatch("each part must be an object")
        token = entry.get("label")
        if not isinstance(token, str):
            raise BadLabelCode("part is missing its label token")
        label = label_from_token(token)
        crop = decode_gray_png(str(entry.get("crop_png", "")), f"{token}.crop_png")
        box = _parse_box(entry.get("box"))
        part = PartSketch(label, box, SketchRaster(crop))
        if "mask_png" in entry:
            mask = decode_gray_png(str(entry["mask_png"]), f"{token}.mask_png")
            mask = (mask > 0.5).astype(np.float64)
        else:
            mask = (crop > 0.0).astype(np.float64)
        parts[label] = part
        masks[label] = mask
    return parts, masks


def _build_request(body: dict) -> RefineRequest:
    options = {}
    if "k" in body:
        options["k"] = int(body["k"])
    if "steps" in body:
        options["steps"] = int(body["steps"])
    for key, attr in (
        ("lambda_connect", "lam_connect"),
        ("lambda_proportion", "lam_proportion"),
        ("lambda_regularize", "lam_regularize"),
    ):
        if key in body:
            options[attr] = float(body[key])
    for key in ("skip_projection", "skip_transformation"):
        if key in body:
            options[key] = bool(body[key])

    has_inline = bool(body.get("parts"))
    has_item = "item_dir" in body
    if has_inline and has_item:
        raise DimensionMismatch(
            "request must carry either inline parts or item_dir, not both"
        )
    if has_item:
        item = ingest_item(Path(str(body["item_dir"])), item_id=0)
        return RefineRequest.from_item(item, **options)
    parts, masks = _parse_inline_parts(body.get("parts"))
    keypoints = None
    if body.get("keypoints"):
        keypoints = _parse_keypoints(body["keypoints"])
    return RefineRequest(parts=parts, masks=masks, keypoints=keypoints, **options)


def _transforms_json(transforms: dict) -> dict:
    return {
        label.token: [t.a, t.b, t.tx, t.c, t.d, t.ty]
        for label, t in sorted(transforms.items(), key=lambda kv: int(kv[0]))
    }


# --- application ------------------------------------------------------------------


def create_app(index: ShapeSpaceIndex, prior: SkeletonPrior | None) -> FastAPI:
    """Build the service around one loaded index and optional prior."""
    app = FastAPI(title="sketchrefine", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(SketchRefineError)
    async def _package_error(_request: Request, exc: SketchRefineError):
        if exc.code in _NOT_FOUND_CODES:
            status = 404
        elif exc.code in _INTERNAL_CODES:
            status = 500
        else:
            status = 422
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": str(exc)}
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422, content={"code": "bad_request", "message": str(exc)}
        )

    @app.exception_handler(Exception)
    async def _unexpected_error(_request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"code": "internal", "message": str(exc)}
        )

    @app.get("/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.get("/index/stats")
    async def index_stats():
        classes = []
        for cls in sorted(index.spaces, key=int):
            space = index.spaces[cls]
            classes.append(
                {
                    "class": cls.name,
                    "n": int(space.size),
                    "d": int(space.latent_dim),
                    "p": int(space.resolution),
                }
            )
        return {"classes": classes}

    @app.post("/refine")
    async def refine(body: dict):
        req = _build_request(body)
        resp = run_pipeline(req, index, prior)
        return {
            "sketch_png": encode_gray_png(resp.sketch.data),
            "parsing_png": encode_label_png(resp.parsing.data),
            "preview_png": encode_rgb_png(resp.preview),
            "step_transforms": [_transforms_json(step) for step in resp.step_transforms],
            "total_transforms": _transforms_json(resp.total_transforms),
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
            "timings_ms": resp.timings_ms,
        }

    @app.post("/project")
    async def project_part(body: dict):
        token = body.get("label")
        if not isinstance(token, str):
            raise BadLabelCode("request is missing its part label token")
        label = label_from_token(token)
        crop = decode_gray_png(str(body.get("crop_png", "")), "crop_png")
        if not np.any(crop):
            raise EmptySketch("crop contains no ink")
        k = int(body.get("k", DEFAULT_NEIGHBORS))
        space, mirrored = index.space_for_label(label)
        latent = encode(space, crop, mirrored)
        result = project(space, latent, k=k)
        decoded = decode_sketch(space, result.latent, mirrored)
        return {
            "label": token,
            "neighbor_ids": list(result.neighbor_ids),
            "weights": [float(w) for w in result.weights],
            "residual": result.residual,
            "crop_png": encode_gray_png(decoded),
        }

    return app


def serve(index_path: str | Path, port: int = 8000, host: str = "127.0.0.1") -> None:
    """Load an index and block serving HTTP until interrupted."""
    index_path = Path(index_path)
    if not index_path.is_file():
        raise IndexNotFound(f"no index file at {index_path}")
    try:
        index, prior = load_index(index_path)
    except MissingFile as exc:
        raise IndexNotFound(str(exc)) from exc

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        raise PortInUse(f"cannot bind {host}:{port}: {exc}") from exc
    finally:
        probe.close()

    import uvicorn

    app = create_app(index, prior)
    uvicorn.run(app, host=host, port=port, log_level="info")
