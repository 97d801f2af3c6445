"""Synthetic figure corpus, disk exchange, and shape-index persistence.

The generator builds articulated stick figures from a parametric skeleton:
each part is inflated into a closed region (capsules for limbs, trapezoids
for the clothed torso and hips, a disc for the face, an arc band for hair),
its outline is rendered as wobbly pen strokes, and exact joint positions are
emitted alongside.  Items round-trip through PNG + JSON files, and fitted
shape spaces round-trip through a small binary index format.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadLabelCode,
    BadMagic,
    ChecksumFailure,
    MissingFile,
    SizeMismatch,
    SpecOutOfBounds,
    TruncatedFile,
    VersionMismatch,
)
from .model import (
    CANVAS_SIZE,
    PARSING_PRIORITY,
    PART_RESOLUTION,
    BoundingBox,
    ParsingMap,
    PartLabel,
    PartSketch,
    ShapeClass,
    SketchRaster,
    crop_array,
    label_from_token,
)
from .shapespace import ShapeSpace, ShapeSpaceIndex
from .structure import (
    FigureKeypoints,
    JointId,
    PartKeypointSet,
    SkeletonPrior,
    build_skeleton_prior,
    extract_figure_keypoints,
)

STROKE_WIDTH = 1.5
BOX_DILATION = 0.08
_REACH = STROKE_WIDTH / 2.0 + 0.5  # stamp support radius around a stroke
_REGION_MARGIN = 3.0  # region outline sits this far outside the stroke path

SKETCH_FILE = "sketch.png"
LABELS_FILE = "labels.png"
KEYPOINTS_FILE = "keypoints.json"

INDEX_MAGIC = b"FRIX"
INDEX_VERSION = 1


# --- figure specification ------------------------------------------------------

# Hard validity bounds per parameter: (low, high), inclusive.
SPEC_BOUNDS: dict[str, tuple[float, float]] = {
    "head_radius": (8.0, 26.0),
    "torso_width": (30.0, 90.0),
    "torso_height": (40.0, 100.0),
    "arm_upper": (16.0, 50.0),
    "arm_lower": (14.0, 45.0),
    "arm_width": (5.0, 16.0),
    "shoulder_angle_deg": (0.0, 80.0),
    "elbow_flex_deg": (0.0, 150.0),
    "hip_angle_deg": (0.0, 30.0),
    "knee_angle_deg": (-30.0, 30.0),
    "hem_drop": (20.0, 70.0),
    "leg_length": (20.0, 60.0),
    "leg_width": (6.0, 18.0),
    "translate_x": (-30.0, 30.0),
    "top_y": (4.0, 80.0),
    "jitter": (0.0, 2.5),
}


@dataclass(frozen=True)
class FigureSpec:
    """Parameters of one synthetic figure (pixel units, degrees).

    Angles measure limb direction from straight down, positive away from the
    body on each side; ``elbow_flex_deg`` bends the forearm back toward the
    body.  ``jitter`` is the wobble amplitude of the pen strokes; it never
    moves regions or keypoints.
    """

    seed: int = 0
    head_radius: float = 16.0
    torso_width: float = 56.0
    torso_height: float = 70.0
    arm_upper: float = 32.0
    arm_lower: float = 28.0
    arm_width: float = 9.0
    shoulder_angle_deg: float = 18.0
    elbow_flex_deg: float = 12.0
    hip_angle_deg: float = 6.0
    knee_angle_deg: float = 0.0
    hem_drop: float = 45.0
    leg_length: float = 40.0
    leg_width: float = 11.0
    translate_x: float = 0.0
    top_y: float = 12.0
    jitter: float = 0.0

    def __post_init__(self) -> None:
        for name, (lo, hi) in SPEC_BOUNDS.items():
            value = getattr(self, name)
            if not (lo <= value <= hi) or not math.isfinite(value):
                raise SpecOutOfBounds(
                    f"{name}={value!r} outside [{lo}, {hi}]"
                )


def _skeleton(spec: FigureSpec) -> dict[str, np.ndarray]:
    """Joint positions implied by a spec; shared joints appear once."""
    cx = 127.5 + spec.translate_x
    r = spec.head_radius
    neck_y = spec.top_y + 2.0 * r
    shoulder_y = neck_y + 0.1 * spec.torso_height
    hip_y = neck_y + spec.torso_height
    half_w = spec.torso_width / 2.0
    hip_half = 0.39 * spec.torso_width

    pts = {
        "head_top": (cx, spec.top_y),
        "head_center": (cx, spec.top_y + r),
        "neck": (cx, neck_y),
        "l_shoulder": (cx - half_w, shoulder_y),
        "r_shoulder": (cx + half_w, shoulder_y),
        "l_hip": (cx - hip_half, hip_y),
        "r_hip": (cx + hip_half, hip_y),
    }

    a = math.radians(spec.shoulder_angle_deg)
    f = math.radians(spec.elbow_flex_deg)
    for side, sign in (("l", -1.0), ("r", 1.0)):
        sh = pts[f"{side}_shoulder"]
        elbow = (
            sh[0] + sign * spec.arm_upper * math.sin(a),
            sh[1] + spec.arm_upper * math.cos(a),
        )
        wrist = (
            elbow[0] + sign * spec.arm_lower * math.sin(a - f),
            elbow[1] + spec.arm_lower * math.cos(a - f),
        )
        pts[f"{side}_elbow"] = elbow
        pts[f"{side}_wrist"] = wrist

    h = math.radians(spec.hip_angle_deg)
    k = math.radians(spec.knee_angle_deg)
    for side, sign in (("l", -1.0), ("r", 1.0)):
        hip = pts[f"{side}_hip"]
        knee = (
            hip[0] + sign * spec.hem_drop * math.sin(h),
            hip[1] + spec.hem_drop * math.cos(h),
        )
        ankle = (
            knee[0] + sign * spec.leg_length * math.sin(k),
            knee[1] + spec.leg_length * math.cos(k),
        )
        pts[f"{side}_knee"] = knee
        pts[f"{side}_ankle"] = ankle

    return {name: np.asarray(p, dtype=np.float64) for name, p in pts.items()}


def _keypoints_from_skeleton(sk: dict[str, np.ndarray]) -> FigureKeypoints:
    def p(name: str) -> tuple[float, float]:
        return (float(sk[name][0]), float(sk[name][1]))

    return {
        PartLabel.HAIR: PartKeypointSet(
            PartLabel.HAIR, {JointId.HEAD_TOP: p("head_top")}
        ),
        PartLabel.FACE: PartKeypointSet(
            PartLabel.FACE,
            {JointId.HEAD_TOP: p("head_top"), JointId.NECK: p("neck")},
        ),
        PartLabel.TOP_CLOTHES: PartKeypointSet(
            PartLabel.TOP_CLOTHES,
            {
                JointId.NECK: p("neck"),
                JointId.L_SHOULDER: p("l_shoulder"),
                JointId.R_SHOULDER: p("r_shoulder"),
                JointId.L_HIP: p("l_hip"),
                JointId.R_HIP: p("r_hip"),
            },
        ),
        PartLabel.BOTTOM_CLOTHES: PartKeypointSet(
            PartLabel.BOTTOM_CLOTHES,
            {
                JointId.L_HIP: p("l_hip"),
                JointId.R_HIP: p("r_hip"),
                JointId.L_KNEE: p("l_knee"),
                JointId.R_KNEE: p("r_knee"),
            },
        ),
        PartLabel.LEFT_ARM: PartKeypointSet(
            PartLabel.LEFT_ARM,
            {
                JointId.L_SHOULDER: p("l_shoulder"),
                JointId.L_ELBOW: p("l_elbow"),
                JointId.L_WRIST: p("l_wrist"),
            },
        ),
        PartLabel.RIGHT_ARM: PartKeypointSet(
            PartLabel.RIGHT_ARM,
            {
                JointId.R_SHOULDER: p("r_shoulder"),
                JointId.R_ELBOW: p("r_elbow"),
                JointId.R_WRIST: p("r_wrist"),
            },
        ),
        PartLabel.LEFT_LEG: PartKeypointSet(
            PartLabel.LEFT_LEG,
            {JointId.L_KNEE: p("l_knee"), JointId.L_ANKLE: p("l_ankle")},
        ),
        PartLabel.RIGHT_LEG: PartKeypointSet(
            PartLabel.RIGHT_LEG,
            {JointId.R_KNEE: p("r_knee"), JointId.R_ANKLE: p("r_ankle")},
        ),
    }


# --- region rasterization -----------------------------------------------------


def _grids(size: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(size, dtype=np.float64)[None, :]
    ys = np.arange(size, dtype=np.float64)[:, None]
    return xs, ys


def _disc_mask(size: int, center: np.ndarray, radius: float) -> np.ndarray:
    xs, ys = _grids(size)
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius**2


def _hair_band_mask(size: int, center: np.ndarray, head_r: float) -> np.ndarray:
    xs, ys = _grids(size)
    d2 = (xs - center[0]) ** 2 + (ys - center[1]) ** 2
    lo, hi = 1.02 * head_r, 1.38 * head_r
    return (d2 >= lo**2) & (d2 <= hi**2) & (ys <= center[1])


def _convex_poly_mask(size: int, verts: list[np.ndarray]) -> np.ndarray:
    xs, ys = _grids(size)
    inside_pos = np.ones((size, size), dtype=bool)
    inside_neg = np.ones((size, size), dtype=bool)
    n = len(verts)
    for i in range(n):
        px, py = verts[i]
        qx, qy = verts[(i + 1) % n]
        cross = (qx - px) * (ys - py) - (qy - py) * (xs - px)
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    return inside_pos | inside_neg


def _segment_fields(
    size: int, p0: np.ndarray, p1: np.ndarray, pad: float
) -> tuple[slice, slice, np.ndarray, np.ndarray, np.ndarray] | None:
    """Window around a segment plus (t, signed-perp, axial-overshoot) fields."""
    x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - pad)))
    x_hi = min(size, int(math.ceil(max(p0[0], p1[0]) + pad)) + 1)
    y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - pad)))
    y_hi = min(size, int(math.ceil(max(p0[1], p1[1]) + pad)) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return None
    xs = np.arange(x_lo, x_hi, dtype=np.float64)[None, :]
    ys = np.arange(y_lo, y_hi, dtype=np.float64)[:, None]
    d = p1 - p0
    length = float(np.hypot(d[0], d[1]))
    if length < 1e-9:
        rad = np.hypot(xs - p0[0], ys - p0[1])
        zeros = np.zeros_like(rad)
        return (slice(y_lo, y_hi), slice(x_lo, x_hi), zeros, rad, zeros)
    ux, uy = d[0] / length, d[1] / length
    axial = (xs - p0[0]) * ux + (ys - p0[1]) * uy
    perp = -(xs - p0[0]) * uy + (ys - p0[1]) * ux
    over = np.maximum(0.0, np.maximum(-axial, axial - length))
    t = np.clip(axial / length, 0.0, 1.0)
    return (slice(y_lo, y_hi), slice(x_lo, x_hi), t, perp, over)


def _capsule_mask(size: int, chain: list[np.ndarray], radius: float) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    for p0, p1 in zip(chain[:-1], chain[1:]):
        fields = _segment_fields(size, p0, p1, radius + 1.5)
        if fields is None:
            continue
        rows, cols, _, perp, over = fields
        mask[rows, cols] |= np.hypot(perp, over) <= radius
    return mask


# --- stroke rendering -----------------------------------------------------------

_WOBBLE_HARMONICS = 8


def _draw_wobble(rng: np.random.Generator, jitter: float):
    amps = rng.uniform(-jitter, jitter, size=_WOBBLE_HARMONICS)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=_WOBBLE_HARMONICS)
    return amps, phases


def _wobble_of(t: np.ndarray, amps: np.ndarray, phases: np.ndarray) -> np.ndarray:
    total = np.zeros_like(t)
    for k in range(_WOBBLE_HARMONICS):
        total += amps[k] * np.sin((k + 2) * np.pi * t + phases[k])
    return total


def _stamp(acc: np.ndarray, rows, cols, dist: np.ndarray) -> None:
    value = np.clip(_REACH - dist, 0.0, 1.0)
    region = acc[rows, cols]
    np.maximum(region, value, out=region)


def _stroke_segment(
    acc: np.ndarray,
    p0: np.ndarray,
    p1: np.ndarray,
    rng: np.random.Generator,
    jitter: float,
) -> None:
    amps, phases = _draw_wobble(rng, jitter)
    fields = _segment_fields(acc.shape[0], p0, p1, _REACH + jitter + 1.0)
    if fields is None:
        return
    rows, cols, t, perp, over = fields
    dist = np.hypot(perp - _wobble_of(t, amps, phases), over)
    _stamp(acc, rows, cols, dist)


def _stroke_circle(
    acc: np.ndarray,
    center: np.ndarray,
    radius: float,
    rng: np.random.Generator,
    jitter: float,
    upper_half_only: bool = False,
) -> None:
    """Wobbly circle (or upper-half arc) stroke; wobble is periodic in angle."""
    amps, phases = _draw_wobble(rng, jitter)
    size = acc.shape[0]
    pad = radius + _REACH + jitter + 1.0
    x_lo = max(0, int(math.floor(center[0] - pad)))
    x_hi = min(size, int(math.ceil(center[0] + pad)) + 1)
    y_lo = max(0, int(math.floor(center[1] - pad)))
    y_hi = min(size, int(math.ceil(center[1] + pad)) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    xs = np.arange(x_lo, x_hi, dtype=np.float64)[None, :]
    ys = np.arange(y_lo, y_hi, dtype=np.float64)[:, None]
    dx, dy = xs - center[0], ys - center[1]
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    wobble = np.zeros_like(rho)
    for k in range(_WOBBLE_HARMONICS):
        wobble += amps[k] * np.sin((k + 1) * theta + phases[k])
    dist = np.abs(rho - (radius + wobble))
    if upper_half_only:
        dist = np.where(dy <= 0.0, dist, np.inf)
    _stamp(acc, slice(y_lo, y_hi), slice(x_lo, x_hi), dist)


def _stroke_capsule_outline(
    acc: np.ndarray,
    chain: list[np.ndarray],
    radius: float,
    rng: np.random.Generator,
    jitter: float,
) -> None:
    """Both long edges of a limb capsule plus small end circles."""
    offset = max(radius - 2.5, 0.8)
    for p0, p1 in zip(chain[:-1], chain[1:]):
        d = p1 - p0
        length = float(np.hypot(d[0], d[1]))
        if length < 1e-9:
            continue
        normal = np.array([-d[1], d[0]]) / length
        for side in (1.0, -1.0):
            _stroke_segment(
                acc, p0 + side * offset * normal, p1 + side * offset * normal,
                rng, jitter,
            )
    _stroke_circle(acc, chain[0], offset, rng, jitter)
    _stroke_circle(acc, chain[-1], offset, rng, jitter)


def _quad_outline(
    acc: np.ndarray,
    verts: list[np.ndarray],
    rng: np.random.Generator,
    jitter: float,
) -> None:
    for i in range(len(verts)):
        _stroke_segment(acc, verts[i], verts[(i + 1) % len(verts)], rng, jitter)


def _outset_quad(verts: list[np.ndarray], margin: float) -> list[np.ndarray]:
    """Push each vertex of a convex quad away from the centroid by ``margin``."""
    centroid = np.mean(verts, axis=0)
    out = []
    for v in verts:
        d = v - centroid
        norm = float(np.hypot(d[0], d[1]))
        out.append(v + d / norm * margin if norm > 1e-9 else v)
    return out


# --- figure assembly -----------------------------------------------------------


@dataclass
class CorpusItem:
    """One figure: global ink, labels, per-part crops, and joints."""

    item_id: int
    sketch: SketchRaster
    parsing: ParsingMap
    parts: dict[PartLabel, PartSketch]
    masks: dict[PartLabel, np.ndarray]
    keypoints: FigureKeypoints
    provenance: str = "synthetic"
    spec: FigureSpec | None = None


def _regions(spec: FigureSpec, sk: dict[str, np.ndarray]) -> dict[PartLabel, np.ndarray]:
    size = CANVAS_SIZE
    half_w = spec.torso_width / 2.0
    cx = 127.5 + spec.translate_x

    torso_quad = [
        np.array([cx - half_w, sk["neck"][1]]),
        np.array([cx + half_w, sk["neck"][1]]),
        np.array([sk["r_hip"][0], sk["r_hip"][1]]),
        np.array([sk["l_hip"][0], sk["l_hip"][1]]),
    ]
    bottom_quad = [
        sk["l_hip"].copy(),
        sk["r_hip"].copy(),
        sk["r_knee"] + np.array([6.0, 0.0]),
        sk["l_knee"] + np.array([-6.0, 0.0]),
    ]

    return {
        PartLabel.FACE: _disc_mask(size, sk["head_center"], spec.head_radius),
        PartLabel.HAIR: _hair_band_mask(size, sk["head_center"], spec.head_radius),
        PartLabel.TOP_CLOTHES: _convex_poly_mask(
            size, _outset_quad(torso_quad, _REGION_MARGIN)
        ),
        PartLabel.BOTTOM_CLOTHES: _convex_poly_mask(
            size, _outset_quad(bottom_quad, _REGION_MARGIN)
        ),
        PartLabel.LEFT_ARM: _capsule_mask(
            size,
            [sk["l_shoulder"], sk["l_elbow"], sk["l_wrist"]],
            spec.arm_width / 2.0,
        ),
        PartLabel.RIGHT_ARM: _capsule_mask(
            size,
            [sk["r_shoulder"], sk["r_elbow"], sk["r_wrist"]],
            spec.arm_width / 2.0,
        ),
        PartLabel.LEFT_LEG: _capsule_mask(
            size, [sk["l_knee"], sk["l_ankle"]], spec.leg_width / 2.0
        ),
        PartLabel.RIGHT_LEG: _capsule_mask(
            size, [sk["r_knee"], sk["r_ankle"]], spec.leg_width / 2.0
        ),
    }


def _strokes(
    spec: FigureSpec, sk: dict[str, np.ndarray]
) -> dict[PartLabel, np.ndarray]:
    """Raw (unclipped) ink per part, quantized to 8-bit levels.

    One RNG drives all wobble draws in fixed label order, so a spec maps to
    exactly one ink pattern.
    """
    size = CANVAS_SIZE
    rng = np.random.default_rng(spec.seed)
    j = spec.jitter
    half_w = spec.torso_width / 2.0
    cx = 127.5 + spec.translate_x

    layers: dict[PartLabel, np.ndarray] = {}
    for label in sorted(PartLabel, key=int):
        acc = np.zeros((size, size), dtype=np.float64)
        if label is PartLabel.HAIR:
            for strand in (1.06, 1.20, 1.34):
                _stroke_circle(
                    acc, sk["head_center"], strand * spec.head_radius, rng, j,
                    upper_half_only=True,
                )
        elif label is PartLabel.FACE:
            r = spec.head_radius
            c = sk["head_center"]
            steady = 0.5 * j  # faces are drawn with a steadier hand
            _stroke_circle(acc, c, r - 2.0, rng, steady)
            for ex in (-0.35, 0.35):  # eyes
                eye = c + np.array([ex * r, -0.15 * r])
                _stroke_segment(
                    acc,
                    eye + np.array([-0.18 * r, 0.0]),
                    eye + np.array([0.18 * r, 0.0]),
                    rng,
                    steady,
                )
            mouth = c + np.array([0.0, 0.45 * r])
            _stroke_segment(
                acc,
                mouth + np.array([-0.28 * r, 0.0]),
                mouth + np.array([0.28 * r, 0.0]),
                rng,
                steady,
            )
        elif label is PartLabel.TOP_CLOTHES:
            _quad_outline(
                acc,
                [
                    np.array([cx - half_w, sk["neck"][1]]),
                    np.array([cx + half_w, sk["neck"][1]]),
                    sk["r_hip"].copy(),
                    sk["l_hip"].copy(),
                ],
                rng,
                j,
            )
        elif label is PartLabel.BOTTOM_CLOTHES:
            _quad_outline(
                acc,
                [
                    sk["l_hip"].copy(),
                    sk["r_hip"].copy(),
                    sk["r_knee"] + np.array([6.0, 0.0]),
                    sk["l_knee"] + np.array([-6.0, 0.0]),
                ],
                rng,
                j,
            )
        elif label is PartLabel.LEFT_ARM:
            _stroke_capsule_outline(
                acc,
                [sk["l_shoulder"], sk["l_elbow"], sk["l_wrist"]],
                spec.arm_width / 2.0,
                rng,
                j,
            )
        elif label is PartLabel.RIGHT_ARM:
            _stroke_capsule_outline(
                acc,
                [sk["r_shoulder"], sk["r_elbow"], sk["r_wrist"]],
                spec.arm_width / 2.0,
                rng,
                j,
            )
        elif label is PartLabel.LEFT_LEG:
            _stroke_capsule_outline(
                acc, [sk["l_knee"], sk["l_ankle"]], spec.leg_width / 2.0, rng, j
            )
        else:
            _stroke_capsule_outline(
                acc, [sk["r_knee"], sk["r_ankle"]], spec.leg_width / 2.0, rng, j
            )
        layers[label] = np.round(acc * 255.0) / 255.0
    return layers


def item_from_arrays(
    item_id: int,
    ink: np.ndarray,
    parsing: np.ndarray,
    keypoints: FigureKeypoints | None = None,
    resolution: int = PART_RESOLUTION,
    provenance: str = "synthetic",
    spec: FigureSpec | None = None,
) -> CorpusItem:
    """Assemble a CorpusItem from a global ink canvas and a label map.

    This is the single path from (ink, labels) to per-part crops; the
    generator and the file ingester both use it, which is what makes the
    export → ingest round trip exact.
    """
    ink = np.asarray(ink, dtype=np.float64)
    parsing = np.asarray(parsing)
    if ink.shape != parsing.shape:
        raise SizeMismatch(
            f"ink {ink.shape} and labels {parsing.shape} differ in size"
        )
    parts: dict[PartLabel, PartSketch] = {}
    masks: dict[PartLabel, np.ndarray] = {}
    for code in sorted(int(c) for c in np.unique(parsing) if c != 0):
        label = PartLabel(code)
        region = parsing == code
        ys, xs = np.nonzero(region)
        tight = BoundingBox(
            float(xs.min()),
            float(ys.min()),
            float(xs.max() - xs.min() + 1),
            float(ys.max() - ys.min() + 1),
        )
        box = tight.dilated(BOX_DILATION)
        crop = crop_array(ink * region, box, resolution, "bilinear")
        mask = crop_array(region.astype(np.float64), box, resolution, "nearest")
        parts[label] = PartSketch(label, box, SketchRaster(np.clip(crop, 0.0, 1.0)))
        masks[label] = mask
    if keypoints is None:
        keypoints = extract_figure_keypoints(
            {label: (masks[label], parts[label].box) for label in parts}
        )
        provenance = provenance + ";keypoints=extracted"
    return CorpusItem(
        item_id=item_id,
        sketch=SketchRaster(ink),
        parsing=ParsingMap(parsing),
        parts=parts,
        masks=masks,
        keypoints=keypoints,
        provenance=provenance,
        spec=spec,
    )


def generate_figure(spec: FigureSpec, item_id: int = 0) -> CorpusItem:
    """Deterministically render one synthetic figure from its parameters."""
    sk = _skeleton(spec)
    regions = _regions(spec, sk)
    layers = _strokes(spec, sk)

    parsing = np.zeros((CANVAS_SIZE, CANVAS_SIZE), dtype=np.uint8)
    for label in reversed(PARSING_PRIORITY):  # lowest priority first
        parsing[regions[label]] = int(label)

    ink = np.zeros((CANVAS_SIZE, CANVAS_SIZE), dtype=np.float64)
    for label, layer in layers.items():
        own = parsing == int(label)
        np.maximum(ink, layer * own, out=ink)

    return item_from_arrays(
        item_id,
        ink,
        parsing,
        keypoints=_keypoints_from_skeleton(sk),
        provenance="synthetic",
        spec=spec,
    )


# --- corpus sampling -----------------------------------------------------------

# The default sampler draws shape parameters from small discrete level sets
# rather than continuous ranges.  Every level combination repeats across the
# corpus, so each part crop has near-replicas (same geometry up to an integer
# canvas translation, differing only in stroke wobble) among its nearest
# neighbors.  That keeps every local neighborhood tight enough for the blended
# reconstruction to reproduce an indexed crop almost exactly.  Positions
# (``translate_x``, ``top_y``) use integer levels so that replicas land on the
# same pixel phase and their crops match bit-for-bit modulo wobble.
DEFAULT_SAMPLING_LEVELS: dict[str, tuple[float, ...]] = {
    "torso_width": (50.0, 60.0, 70.0),
    "arm_width": (10.0,),
    "shoulder_angle_deg": (14.0, 26.0),
    "elbow_flex_deg": (5.0, 15.0),
    "hip_angle_deg": (6.0,),
    "knee_angle_deg": (-6.0, 0.0, 6.0),
    "leg_width": (11.0,),
    "translate_x": tuple(float(i) for i in range(-12, 13)),
    "top_y": tuple(float(i) for i in range(8, 21)),
    "jitter": (0.07,),
}

# Every length parameter follows the torso width at a fixed ratio, so all
# default-sampled figures share identical bone-length proportions.  The
# alignment prior averages bone ratios over the corpus; with zero variance the
# average equals every item's own ratios, which makes an unperturbed figure an
# exact energy minimum (the proportion term vanishes at identity instead of
# dragging well-formed parts toward a corpus-average body).  Figures still
# differ in overall size, limb angles, placement, and stroke wobble.
BODY_PROPORTIONS: dict[str, float] = {
    "head_radius": 16.0 / 60.0,
    "torso_height": 70.0 / 60.0,
    "arm_upper": 32.0 / 60.0,
    "arm_lower": 28.0 / 60.0,
    "hem_drop": 45.0 / 60.0,
    "leg_length": 39.0 / 60.0,
}

# Continuous fallback ranges, used only when a caller overrides sampling with
# explicit ``bounds``.  Continuous draws make every figure unique, which is
# more varied but leaves crops without close neighbors; the lattice above is
# the supported default.
DEFAULT_SAMPLING_BOUNDS: dict[str, tuple[float, float]] = {
    "head_radius": (14.0, 18.0),
    "torso_width": (48.0, 62.0),
    "torso_height": (60.0, 78.0),
    "arm_upper": (28.0, 36.0),
    "arm_lower": (24.0, 31.0),
    "arm_width": (8.0, 11.0),
    "shoulder_angle_deg": (10.0, 30.0),
    "elbow_flex_deg": (0.0, 25.0),
    "hip_angle_deg": (3.0, 10.0),
    "knee_angle_deg": (-8.0, 8.0),
    "hem_drop": (38.0, 52.0),
    "leg_length": (34.0, 46.0),
    "leg_width": (9.0, 13.0),
    "translate_x": (-12.0, 12.0),
    "top_y": (8.0, 20.0),
    "jitter": (0.1, 0.4),
}

_SAMPLED_FIELDS = tuple(DEFAULT_SAMPLING_LEVELS)  # fixed draw order

# Replica families are keyed by the level combinations that change a crop's
# normalized geometry: the clothed torso by width and shoulder angle (arms sit
# above the torso in the parsing priority, so their silhouettes punch holes in
# its region), arms by width and both arm angles, legs by width and knee
# angle.  Independent draws leave some of those joint cells with fewer members
# than a neighbor query needs, so these four fields are tiled evenly (every
# combination appears the same number of times, +/-1) and only shuffled by the
# seed; all other fields are drawn independently.
_BALANCED_FIELDS = (
    "torso_width",
    "shoulder_angle_deg",
    "elbow_flex_deg",
    "knee_angle_deg",
)


def sample_corpus(
    n: int,
    master_seed: int = 0,
    bounds: dict[str, tuple[float, float]] | None = None,
) -> list[CorpusItem]:
    """Draw ``n`` synthetic figures.

    With no ``bounds``, the width/angle fields come from the discrete
    ``DEFAULT_SAMPLING_LEVELS`` lattice (the family-keying fields tiled evenly
    over their joint combinations, the rest drawn uniformly), and every length
    field follows the torso width at its fixed ``BODY_PROPORTIONS`` ratio.
    Passing ``bounds`` switches the overridden fields (and only those) to
    continuous uniform draws; overriding a length field breaks the constant
    proportions, so aligned outputs may then drift toward the corpus-average
    body.
    """
    if bounds:
        unknown = set(bounds) - set(DEFAULT_SAMPLING_LEVELS) - set(BODY_PROPORTIONS)
        if unknown:
            raise SpecOutOfBounds(f"unknown sampling field(s): {sorted(unknown)}")
    rng = np.random.default_rng(master_seed)

    balanced = [f for f in _BALANCED_FIELDS if not (bounds and f in bounds)]
    cells = [()]
    for name in balanced:
        cells = [c + (lvl,) for c in cells for lvl in DEFAULT_SAMPLING_LEVELS[name]]
    reps = -(-n // len(cells))  # ceil
    # one independent shuffle per full pass keeps every cell's count within
    # +/-1 even when n is not a multiple of the cell count
    passes = [rng.permutation(len(cells)) for _ in range(reps)]
    order = np.concatenate(passes)[:n] if passes else np.zeros(0, dtype=int)

    items = []
    for i in range(n):
        cell = dict(zip(balanced, cells[order[i]]))
        values = {}
        for name in _SAMPLED_FIELDS:
            if bounds and name in bounds:
                values[name] = float(rng.uniform(*bounds[name]))
            elif name in cell:
                values[name] = cell[name]
            else:
                levels = DEFAULT_SAMPLING_LEVELS[name]
                values[name] = levels[int(rng.integers(0, len(levels)))]
        for name, ratio in BODY_PROPORTIONS.items():
            if bounds and name in bounds:
                values[name] = float(rng.uniform(*bounds[name]))
            else:
                values[name] = values["torso_width"] * ratio
        seed = int(rng.integers(0, 2**63 - 1))
        items.append(generate_figure(FigureSpec(seed=seed, **values), item_id=i))
    return items


# --- disk exchange ---------------------------------------------------------------

# Debug palette for labels.png: background plus one color per part code.
# Pixel VALUES are the codes 0..8; colors are presentation only.
_LABEL_COLORS = [
    (255, 255, 255),  # 0 background
    (134, 94, 60),  # 1 hair
    (244, 206, 180),  # 2 face
    (66, 133, 244),  # 3 top clothes
    (52, 120, 86),  # 4 bottom clothes
    (219, 68, 55),  # 5 left arm
    (244, 160, 0),  # 6 right arm
    (128, 62, 152),  # 7 left leg
    (0, 150, 166),  # 8 right leg
]


def export_item(item: CorpusItem, directory: str | Path) -> Path:
    """Write sketch.png (ink = dark), labels.png (codes), keypoints.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    ink_bytes = 255 - np.round(item.sketch.data * 255.0).astype(np.uint8)
    Image.fromarray(ink_bytes, mode="L").save(directory / SKETCH_FILE)

    labels = Image.fromarray(item.parsing.data, mode="P")
    palette = [channel for color in _LABEL_COLORS for channel in color]
    labels.putpalette(palette + [0] * (768 - len(palette)))
    labels.save(directory / LABELS_FILE)

    payload = {
        "parts": [
            {
                "label": label.token,
                "joints": {
                    joint.value: [float(p[0]), float(p[1])]
                    for joint, p in kp_set.joints.items()
                },
            }
            for label, kp_set in sorted(item.keypoints.items(), key=lambda kv: int(kv[0]))
        ]
    }
    with open(directory / KEYPOINTS_FILE, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    return directory


def _load_keypoints_json(path: Path) -> FigureKeypoints:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    out: FigureKeypoints = {}
    for entry in payload.get("parts", []):
        label = label_from_token(entry["label"])
        joints = {}
        for name, xy in entry["joints"].items():
            try:
                joint = JointId(name)
            except ValueError:
                raise BadLabelCode(f"unknown joint name {name!r}") from None
            joints[joint] = (float(xy[0]), float(xy[1]))
        out[label] = PartKeypointSet(label, joints)
    return out


def ingest_item(
    directory: str | Path,
    item_id: int = 0,
    resolution: int = PART_RESOLUTION,
) -> CorpusItem:
    """Load one item from a directory of sketch.png / labels.png [/ keypoints].

    Ink is inverted from the dark-on-light file convention; crops and boxes
    are rebuilt exactly the way the generator builds them.
    """
    directory = Path(directory)
    sketch_path = directory / SKETCH_FILE
    labels_path = directory / LABELS_FILE
    for path in (sketch_path, labels_path):
        if not path.is_file():
            raise MissingFile(f"missing {path.name} in {directory}")

    with Image.open(sketch_path) as img:
        sketch_arr = np.asarray(img.convert("L"), dtype=np.float64)
    with Image.open(labels_path) as img:
        if img.mode not in ("L", "P"):
            raise BadLabelCode(
                f"labels.png must be single-channel, got mode {img.mode!r}"
            )
        labels_arr = np.asarray(img, dtype=np.int64)

    if sketch_arr.shape != labels_arr.shape:
        raise SizeMismatch(
            f"sketch {sketch_arr.shape} and labels {labels_arr.shape} differ"
        )
    bad = labels_arr > 8
    if bad.any():
        codes = sorted(int(c) for c in np.unique(labels_arr[bad]))
        raise BadLabelCode(
            f"labels.png contains invalid code(s) {codes} on {int(bad.sum())} pixel(s)"
        )

    ink = (255.0 - sketch_arr) / 255.0
    keypoints = None
    provenance = f"ingested:{directory}"
    kp_path = directory / KEYPOINTS_FILE
    if kp_path.is_file():
        keypoints = _load_keypoints_json(kp_path)
    return item_from_arrays(
        item_id,
        ink,
        labels_arr.astype(np.uint8),
        keypoints=keypoints,
        resolution=resolution,
        provenance=provenance,
    )


# --- index persistence -----------------------------------------------------------


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_index(
    index: ShapeSpaceIndex,
    path: str | Path,
    prior: SkeletonPrior | None = None,
) -> Path:
    """Serialize fitted shape spaces (and optionally a skeleton prior).

    Layout: magic, u32 version, u32 class count, then per class (ascending
    code): u32 code, P, d, n; n x u64 entry ids; mean, basis, latents and
    mask regressor as little-endian float64 in row-major order.  A 64-bit
    FNV-1a checksum of everything after the version field closes the file.
    The prior, when given, goes to ``<path>.prior.json`` alongside.
    """
    path = Path(path)
    chunks = [struct.pack("<I", len(index.spaces))]
    for cls in sorted(index.spaces, key=int):
        space = index.spaces[cls]
        n, d = space.latents.shape
        chunks.append(
            struct.pack("<IIII", int(cls), space.resolution, d, n)
        )
        chunks.append(
            np.ascontiguousarray(space.entry_ids, dtype="<u8").tobytes()
        )
        chunks.append(_pack_array(space.mean))
        chunks.append(_pack_array(space.basis))
        chunks.append(_pack_array(space.latents))
        chunks.append(_pack_array(space.mask_coeffs))
    payload = b"".join(chunks)
    blob = (
        INDEX_MAGIC
        + struct.pack("<I", INDEX_VERSION)
        + payload
        + struct.pack("<Q", fnv1a_64(payload))
    )
    path.write_bytes(blob)
    if prior is not None:
        save_prior(prior, prior_sidecar_path(path))
    return path


def load_index(path: str | Path) -> tuple[ShapeSpaceIndex, SkeletonPrior | None]:
    """Read an index written by :func:`save_index`, verifying its checksum."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no index file at {path}")
    blob = path.read_bytes()
    if len(blob) < 4:
        raise TruncatedFile(f"{path} is {len(blob)} bytes; too short for a header")
    if blob[:4] != INDEX_MAGIC:
        raise BadMagic(f"{path} does not start with {INDEX_MAGIC!r}")
    if len(blob) < 16:
        raise TruncatedFile(f"{path} ends inside the header")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != INDEX_VERSION:
        raise VersionMismatch(
            f"file has version {version}, this reader supports {INDEX_VERSION}"
        )
    payload = blob[8:-8]

    offset = 0

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(payload):
            raise TruncatedFile(f"{path} ends inside class data")
        piece = payload[offset : offset + count]
        offset += count
        return piece

    (n_classes,) = struct.unpack("<I", take(4))
    spaces = {}
    for _ in range(n_classes):
        code, resolution, d, n = struct.unpack("<IIII", take(16))
        try:
            cls = ShapeClass(code)
        except ValueError:
            raise BadLabelCode(f"unknown shape class code {code}") from None
        size = resolution * resolution
        entry_ids = np.frombuffer(take(8 * n), dtype="<u8").astype(np.int64)
        mean = np.frombuffer(take(8 * size), dtype="<f8").copy()
        basis = np.frombuffer(take(8 * size * d), dtype="<f8").reshape(size, d).copy()
        latents = np.frombuffer(take(8 * n * d), dtype="<f8").reshape(n, d).copy()
        coeffs = (
            np.frombuffer(take(8 * (d + 1) * size), dtype="<f8")
            .reshape(d + 1, size)
            .copy()
        )
        spaces[cls] = ShapeSpace(
            class_id=cls,
            resolution=resolution,
            mean=mean,
            basis=basis,
            latents=latents,
            entry_ids=entry_ids,
            mask_coeffs=coeffs,
        )
    if offset != len(payload):
        raise TruncatedFile(
            f"{path} has {len(payload) - offset} unread byte(s) after class data"
        )
    # Structural checks run first so a cut-off file reports as truncated;
    # the checksum then catches in-place byte damage.
    stored = struct.unpack_from("<Q", blob, len(blob) - 8)[0]
    actual = fnv1a_64(payload)
    if stored != actual:
        raise ChecksumFailure(
            f"checksum {stored:#018x} does not match payload {actual:#018x}"
        )
    index = ShapeSpaceIndex(spaces=spaces)

    prior = None
    sidecar = prior_sidecar_path(path)
    if sidecar.is_file():
        prior = load_prior(sidecar)
    return index, prior


def prior_sidecar_path(index_path: str | Path) -> Path:
    return Path(str(index_path) + ".prior.json")


def save_prior(prior: SkeletonPrior, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "ratios": [
            {
                "part": label.token,
                "joint_a": j1.value,
                "joint_b": j2.value,
                "mean": mean,
                "std": std,
            }
            for (label, j1, j2), (mean, std) in sorted(
                prior.ratios.items(), key=lambda kv: (int(kv[0][0]), kv[0][1].value)
            )
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    return path


def load_prior(path: str | Path) -> SkeletonPrior:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no skeleton prior at {path}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    ratios = {}
    for entry in payload["ratios"]:
        bone = (
            label_from_token(entry["part"]),
            JointId(entry["joint_a"]),
            JointId(entry["joint_b"]),
        )
        ratios[bone] = (float(entry["mean"]), float(entry["std"]))
    return SkeletonPrior(ratios)


# --- shape-space corpus glue -----------------------------------------------------


def corpus_entries(
    items: list[CorpusItem],
) -> list[tuple[int, PartSketch, np.ndarray]]:
    """(item id, part, mask) triples for shape-space fitting."""
    entries = []
    for item in items:
        for label in sorted(item.parts, key=int):
            entries.append((item.item_id, item.parts[label], item.masks[label]))
    return entries


def corpus_prior(items: list[CorpusItem]) -> SkeletonPrior:
    """Skeleton prior over all corpus figures."""
    return build_skeleton_prior([item.keypoints for item in items])
