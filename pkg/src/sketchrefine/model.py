"""Core vocabulary for part-segmented figure sketches.

Conventions used throughout the package:

* Rasters are ``(height, width)`` arrays indexed ``[y, x]``; pixel centers sit
  at integer coordinates, so pixel ``(x, y)`` covers ``[x-0.5, x+0.5)``.
* Ink is white-on-black internally: 0.0 means blank, 1.0 means full ink.
* Points are ``(x, y)`` pairs; rotation angles follow the mathematical
  convention (``rotation(90)`` maps ``(1, 0)`` to ``(0, 1)``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BadLabelCode, DimensionMismatch, SingularTransform

CANVAS_SIZE = 256
PART_RESOLUTION = 64

# |det| at or below this is treated as non-invertible.
_SINGULAR_EPS = 1e-12


class PartLabel(enum.IntEnum):
    """Semantic part codes used in parsing maps (0 is background)."""

    HAIR = 1
    FACE = 2
    TOP_CLOTHES = 3
    BOTTOM_CLOTHES = 4
    LEFT_ARM = 5
    RIGHT_ARM = 6
    LEFT_LEG = 7
    RIGHT_LEG = 8

    @property
    def token(self) -> str:
        return _LABEL_TOKENS[self]


_LABEL_TOKENS = {
    PartLabel.HAIR: "Hair",
    PartLabel.FACE: "Face",
    PartLabel.TOP_CLOTHES: "TopClothes",
    PartLabel.BOTTOM_CLOTHES: "BottomClothes",
    PartLabel.LEFT_ARM: "LeftArm",
    PartLabel.RIGHT_ARM: "RightArm",
    PartLabel.LEFT_LEG: "LeftLeg",
    PartLabel.RIGHT_LEG: "RightLeg",
}

_TOKEN_LABELS = {v: k for k, v in _LABEL_TOKENS.items()}


def label_from_token(token: str) -> PartLabel:
    try:
        return _TOKEN_LABELS[token]
    except KeyError:
        raise BadLabelCode(f"unknown part label token: {token!r}") from None


class ShapeClass(enum.IntEnum):
    """Shape-space classes; left/right limbs share one mirrored class."""

    HAIR = 1
    FACE = 2
    TOP_CLOTHES = 3
    BOTTOM_CLOTHES = 4
    ARM = 5
    LEG = 6


_SHAPE_CLASS = {
    PartLabel.HAIR: (ShapeClass.HAIR, False),
    PartLabel.FACE: (ShapeClass.FACE, False),
    PartLabel.TOP_CLOTHES: (ShapeClass.TOP_CLOTHES, False),
    PartLabel.BOTTOM_CLOTHES: (ShapeClass.BOTTOM_CLOTHES, False),
    PartLabel.LEFT_ARM: (ShapeClass.ARM, False),
    PartLabel.RIGHT_ARM: (ShapeClass.ARM, True),
    PartLabel.LEFT_LEG: (ShapeClass.LEG, False),
    PartLabel.RIGHT_LEG: (ShapeClass.LEG, True),
}


def shape_class_of(label: PartLabel) -> tuple[ShapeClass, bool]:
    """Return ``(shape class, mirrored)`` for a part label.

    Right-side limbs map onto the left-side class via a horizontal mirror.
    """
    return _SHAPE_CLASS[PartLabel(label)]


# Conflict resolution when assembling parsing maps; earlier entries win.
PARSING_PRIORITY: tuple[PartLabel, ...] = (
    PartLabel.FACE,
    PartLabel.HAIR,
    PartLabel.LEFT_ARM,
    PartLabel.RIGHT_ARM,
    PartLabel.TOP_CLOTHES,
    PartLabel.LEFT_LEG,
    PartLabel.RIGHT_LEG,
    PartLabel.BOTTOM_CLOTHES,
)


# --- raster containers -------------------------------------------------------


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SketchRaster:
    """Grayscale ink raster with values in [0, 1] (1 = full ink)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"raster must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch("raster contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DimensionMismatch("raster values must lie in [0, 1]")
        object.__setattr__(self, "data", _as_readonly(arr))

    @classmethod
    def blank(cls, width: int, height: int) -> "SketchRaster":
        return cls(np.zeros((height, width), dtype=np.float64))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ParsingMap:
    """Per-pixel part labels; 0 is background, 1..8 are part codes."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise DimensionMismatch(f"parsing map must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 8):
            raise DimensionMismatch("parsing map codes must lie in 0..8")
        object.__setattr__(self, "data", _as_readonly(arr.astype(np.uint8)))

    @classmethod
    def blank(cls, width: int, height: int) -> "ParsingMap":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in canvas coordinates (may extend past the canvas)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise DimensionMismatch(f"box must have positive extent, got {self}")

    def dilated(self, fraction: float) -> "BoundingBox":
        """Grow width and height by ``fraction``, keeping the center fixed."""
        dw = self.w * fraction
        dh = self.h * fraction
        return BoundingBox(self.x - dw / 2, self.y - dh / 2, self.w + dw, self.h + dh)


@dataclass(frozen=True)
class PartSketch:
    """One part's square ink crop together with its canvas placement."""

    label: PartLabel
    box: BoundingBox
    crop: SketchRaster

    def __post_init__(self) -> None:
        if self.crop.width != self.crop.height:
            raise DimensionMismatch(
                f"part crop must be square, got {self.crop.width}x{self.crop.height}"
            )

    @property
    def resolution(self) -> int:
        return self.crop.width

    @property
    def is_absent(self) -> bool:
        """A part with an all-zero crop stands for 'not drawn'."""
        return not bool(np.any(self.crop.data))


# --- affine transforms -------------------------------------------------------


@dataclass(frozen=True)
class AffineTransform2D:
    """Row-major 2x3 affine map ``(x, y) -> (a x + b y + tx, c x + d y + ty)``."""

    a: float
    b: float
    tx: float
    c: float
    d: float
    ty: float

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform2D":
        return cls(1.0, 0.0, float(dx), 0.0, 1.0, float(dy))

    @classmethod
    def scaling(
        cls,
        sx: float,
        sy: float | None = None,
        center: tuple[float, float] = (0.0, 0.0),
    ) -> "AffineTransform2D":
        if sy is None:
            sy = sx
        return cls._about_center(float(sx), 0.0, 0.0, float(sy), center)

    @classmethod
    def rotation(
        cls, degrees: float, center: tuple[float, float] = (0.0, 0.0)
    ) -> "AffineTransform2D":
        rad = math.radians(degrees)
        ca, sa = math.cos(rad), math.sin(rad)
        return cls._about_center(ca, -sa, sa, ca, center)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "AffineTransform2D":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (2, 3):
            raise DimensionMismatch(f"affine matrix must be 2x3, got {m.shape}")
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2])

    @classmethod
    def _about_center(
        cls, a: float, b: float, c: float, d: float, center: tuple[float, float]
    ) -> "AffineTransform2D":
        cx, cy = center
        tx = cx - (a * cx + b * cy)
        ty = cy - (c * cx + d * cy)
        return cls(a, b, tx, c, d, ty)

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.a, self.b, self.tx], [self.c, self.d, self.ty]], dtype=np.float64
        )

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def is_invertible(self) -> bool:
        return abs(self.det) > _SINGULAR_EPS

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map one ``(x, y)`` point or an ``(n, 2)`` stack of points."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[-1] != 2:
            raise DimensionMismatch(f"points must have 2 coordinates, got {pts.shape}")
        out = np.empty_like(pts)
        out[:, 0] = self.a * pts[:, 0] + self.b * pts[:, 1] + self.tx
        out[:, 1] = self.c * pts[:, 0] + self.d * pts[:, 1] + self.ty
        return out[0] if single else out

    def compose(self, inner: "AffineTransform2D") -> "AffineTransform2D":
        """Return the map 'apply ``inner`` first, then this transform'."""
        return AffineTransform2D(
            a=self.a * inner.a + self.b * inner.c,
            b=self.a * inner.b + self.b * inner.d,
            tx=self.a * inner.tx + self.b * inner.ty + self.tx,
            c=self.c * inner.a + self.d * inner.c,
            d=self.c * inner.b + self.d * inner.d,
            ty=self.c * inner.tx + self.d * inner.ty + self.ty,
        )

    def invert(self) -> "AffineTransform2D":
        det = self.det
        if abs(det) <= _SINGULAR_EPS:
            raise SingularTransform(f"transform is singular (det={det:.3e})")
        ia = self.d / det
        ib = -self.b / det
        ic = -self.c / det
        id_ = self.a / det
        return AffineTransform2D(
            a=ia,
            b=ib,
            tx=-(ia * self.tx + ib * self.ty),
            c=ic,
            d=id_,
            ty=-(ic * self.tx + id_ * self.ty),
        )

    def identity_distance(self) -> float:
        """Frobenius distance of the 2x3 matrix from the identity map."""
        return math.sqrt(
            (self.a - 1.0) ** 2
            + self.b**2
            + self.tx**2
            + self.c**2
            + (self.d - 1.0) ** 2
            + self.ty**2
        )


# --- resampling --------------------------------------------------------------


def sample_bilinear(
    arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float = 0.0
) -> np.ndarray:
    """Bilinearly sample ``arr`` at float coordinates; outside reads ``fill``."""
    h, w = arr.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)

    out = np.zeros(xs.shape, dtype=np.float64)
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0i + dx
        yi = y0i + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.where(
            valid, arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], fill
        )
        out += wgt * vals
    return out


def sample_nearest(
    arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill
) -> np.ndarray:
    """Nearest-neighbor sample; outside reads ``fill``. Keeps ``arr``'s dtype."""
    h, w = arr.shape
    xi = np.rint(xs).astype(np.int64)
    yi = np.rint(ys).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.full(xs.shape, fill, dtype=arr.dtype)
    out[valid] = arr[yi[valid], xi[valid]]
    return out


def _inverse_grid(
    t: AffineTransform2D, out_w: int, out_h: int
) -> tuple[np.ndarray, np.ndarray]:
    inv = t.invert()
    xs, ys = np.meshgrid(
        np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64)
    )
    sx = inv.a * xs + inv.b * ys + inv.tx
    sy = inv.c * xs + inv.d * ys + inv.ty
    return sx, sy


def warp_array(
    arr: np.ndarray,
    t: AffineTransform2D,
    out_w: int,
    out_h: int,
    fill=0.0,
    mode: str = "bilinear",
) -> np.ndarray:
    """Forward-map ``arr`` content by ``t`` via backward sampling.

    Output pixel ``(x, y)`` reads the source at ``t.invert() @ (x, y)``.
    """
    sx, sy = _inverse_grid(t, out_w, out_h)
    if mode == "bilinear":
        return sample_bilinear(np.asarray(arr, dtype=np.float64), sx, sy, float(fill))
    if mode == "nearest":
        return sample_nearest(np.asarray(arr), sx, sy, fill)
    raise DimensionMismatch(f"unknown sampling mode: {mode!r}")


def warp_raster(
    src: SketchRaster,
    t: AffineTransform2D,
    out_w: int | None = None,
    out_h: int | None = None,
    fill: float = 0.0,
) -> SketchRaster:
    """Warp an ink raster; bilinear sampling preserves the [0, 1] range."""
    if not 0.0 <= fill <= 1.0:
        raise DimensionMismatch("fill value must lie in [0, 1]")
    out_w = src.width if out_w is None else out_w
    out_h = src.height if out_h is None else out_h
    return SketchRaster(warp_array(src.data, t, out_w, out_h, fill, "bilinear"))


def warp_labels(
    src: ParsingMap,
    t: AffineTransform2D,
    out_w: int | None = None,
    out_h: int | None = None,
    fill: int = 0,
) -> ParsingMap:
    """Warp a label map with nearest-neighbor sampling (no invented codes)."""
    out_w = src.width if out_w is None else out_w
    out_h = src.height if out_h is None else out_h
    return ParsingMap(warp_array(src.data, t, out_w, out_h, np.uint8(fill), "nearest"))


def box_to_canvas(box: BoundingBox, resolution: int) -> AffineTransform2D:
    """Affine map from crop pixel coordinates to canvas coordinates.

    Crop pixel ``(j, i)`` covers the box cell ``[j, j+1) * box.w / P``; its
    center maps to ``box.x + (j + 0.5) * box.w / P - 0.5`` (pixel-area
    convention), so a box covering the full canvas at equal resolution is the
    identity map.
    """
    sx = box.w / resolution
    sy = box.h / resolution
    return AffineTransform2D(
        a=sx, b=0.0, tx=box.x + 0.5 * sx - 0.5, c=0.0, d=sy, ty=box.y + 0.5 * sy - 0.5
    )


def crop_array(
    arr: np.ndarray, box: BoundingBox, resolution: int, mode: str = "bilinear"
) -> np.ndarray:
    """Resample the boxed region of a canvas array to ``resolution`` squared."""
    to_canvas = box_to_canvas(box, resolution)
    js, is_ = np.meshgrid(
        np.arange(resolution, dtype=np.float64),
        np.arange(resolution, dtype=np.float64),
    )
    xs = to_canvas.a * js + to_canvas.tx
    ys = to_canvas.d * is_ + to_canvas.ty
    if mode == "bilinear":
        return sample_bilinear(np.asarray(arr, dtype=np.float64), xs, ys, 0.0)
    if mode == "nearest":
        return sample_nearest(np.asarray(arr), xs, ys, np.asarray(arr).dtype.type(0))
    raise DimensionMismatch(f"unknown sampling mode: {mode!r}")


def crop_resample(
    src: SketchRaster, box: BoundingBox, resolution: int
) -> SketchRaster:
    """Cut the boxed region out of a canvas raster as a square crop."""
    return SketchRaster(crop_array(src.data, box, resolution))


def _paste_bounds(
    box: BoundingBox, canvas_w: int, canvas_h: int
) -> tuple[int, int, int, int]:
    x_lo = max(0, int(math.floor(box.x - 1.0)))
    y_lo = max(0, int(math.floor(box.y - 1.0)))
    x_hi = min(canvas_w, int(math.ceil(box.x + box.w + 1.0)) + 1)
    y_hi = min(canvas_h, int(math.ceil(box.y + box.h + 1.0)) + 1)
    return x_lo, y_lo, x_hi, y_hi


def paste_max_array(
    canvas: np.ndarray, crop: np.ndarray, box: BoundingBox
) -> np.ndarray:
    """Paste a crop back through its box, max-blending ink into ``canvas``."""
    out = np.array(canvas, dtype=np.float64)
    h, w = out.shape
    resolution = crop.shape[0]
    x_lo, y_lo, x_hi, y_hi = _paste_bounds(box, w, h)
    if x_lo >= x_hi or y_lo >= y_hi:
        return out
    inv = box_to_canvas(box, resolution).invert()
    xs, ys = np.meshgrid(
        np.arange(x_lo, x_hi, dtype=np.float64),
        np.arange(y_lo, y_hi, dtype=np.float64),
    )
    cx = inv.a * xs + inv.b * ys + inv.tx
    cy = inv.c * xs + inv.d * ys + inv.ty
    vals = sample_bilinear(np.asarray(crop, dtype=np.float64), cx, cy, 0.0)
    inside = (
        (cx >= -0.5)
        & (cx <= resolution - 0.5)
        & (cy >= -0.5)
        & (cy <= resolution - 0.5)
    )
    region = out[y_lo:y_hi, x_lo:x_hi]
    region[inside] = np.maximum(region[inside], vals[inside])
    return out


def paste_crop(
    canvas: SketchRaster, crop: SketchRaster, box: BoundingBox
) -> SketchRaster:
    """Typed wrapper over :func:`paste_max_array`."""
    return SketchRaster(paste_max_array(canvas.data, crop.data, box))


def paste_mask_labels(
    labels: np.ndarray, mask: np.ndarray, box: BoundingBox, code: int
) -> np.ndarray:
    """Write ``code`` into ``labels`` wherever the boxed mask is foreground.

    Nearest-neighbor sampling; the caller is responsible for priority order
    (later pastes overwrite earlier ones).
    """
    out = np.array(labels)
    h, w = out.shape
    resolution = mask.shape[0]
    x_lo, y_lo, x_hi, y_hi = _paste_bounds(box, w, h)
    if x_lo >= x_hi or y_lo >= y_hi:
        return out
    inv = box_to_canvas(box, resolution).invert()
    xs, ys = np.meshgrid(
        np.arange(x_lo, x_hi, dtype=np.float64),
        np.arange(y_lo, y_hi, dtype=np.float64),
    )
    cx = inv.a * xs + inv.b * ys + inv.tx
    cy = inv.c * xs + inv.d * ys + inv.ty
    hit = sample_nearest(np.asarray(mask), cx, cy, np.asarray(mask).dtype.type(0))
    region = out[y_lo:y_hi, x_lo:x_hi]
    region[hit > 0.5] = code
    return out


def mirror_array(arr: np.ndarray) -> np.ndarray:
    """Horizontal (left-right) flip used to fold right-side limbs."""
    return arr[:, ::-1].copy()
