"""Structure refinement: joint connectivity and body-proportion alignment.

Each part carries a small set of named joints.  Adjacent parts share joints
(face and hair share the head top, torso and arms share the shoulders, ...);
a rough sketch pulls those shared positions apart.  This module scores the
disagreement plus proportion drift against a skeleton prior, and removes it
with a short cascade of per-part affine corrections fitted by a damped
Gauss-Newton loop.  The torso is the reference part and is never moved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateReference,
    DimensionMismatch,
    EmptyMask,
    FlatHeatmap,
    InsufficientCorpus,
    MissingReferencePart,
    NonFiniteEnergy,
)
from .model import (
    AffineTransform2D,
    BoundingBox,
    PartLabel,
    PartSketch,
    SketchRaster,
    box_to_canvas,
    paste_mask_labels,
    paste_max_array,
    warp_array,
)

REFERENCE_PART = PartLabel.TOP_CLOTHES

DEFAULT_STEPS = 3
LAMBDA_CONNECTIVITY = 100.0
LAMBDA_PROPORTION = 1.0
LAMBDA_REGULARIZER = 1.0

HEATMAP_SIGMA = 6.0
HEATMAP_STRIDE = 4

# Damped Gauss-Newton schedule.
_DAMPING_INIT = 1e-3
_DAMPING_GROW = 10.0
_DAMPING_SHRINK = 10.0
_DAMPING_MAX = 1e12
_MAX_INNER_ITERATIONS = 50
_GRADIENT_STOP = 1e-8


class JointId(enum.Enum):
    """Fourteen named joints; left/right follow image coordinates."""

    HEAD_TOP = "HeadTop"
    NECK = "Neck"
    L_SHOULDER = "LShoulder"
    R_SHOULDER = "RShoulder"
    L_ELBOW = "LElbow"
    R_ELBOW = "RElbow"
    L_WRIST = "LWrist"
    R_WRIST = "RWrist"
    L_HIP = "LHip"
    R_HIP = "RHip"
    L_KNEE = "LKnee"
    R_KNEE = "RKnee"
    L_ANKLE = "LAnkle"
    R_ANKLE = "RAnkle"


# Joints each part owns.
PART_JOINTS: dict[PartLabel, tuple[JointId, ...]] = {
    PartLabel.HAIR: (JointId.HEAD_TOP,),
    PartLabel.FACE: (JointId.HEAD_TOP, JointId.NECK),
    PartLabel.TOP_CLOTHES: (
        JointId.NECK,
        JointId.L_SHOULDER,
        JointId.R_SHOULDER,
        JointId.L_HIP,
        JointId.R_HIP,
    ),
    PartLabel.BOTTOM_CLOTHES: (
        JointId.L_HIP,
        JointId.R_HIP,
        JointId.L_KNEE,
        JointId.R_KNEE,
    ),
    PartLabel.LEFT_ARM: (JointId.L_SHOULDER, JointId.L_ELBOW, JointId.L_WRIST),
    PartLabel.RIGHT_ARM: (JointId.R_SHOULDER, JointId.R_ELBOW, JointId.R_WRIST),
    PartLabel.LEFT_LEG: (JointId.L_KNEE, JointId.L_ANKLE),
    PartLabel.RIGHT_LEG: (JointId.R_KNEE, JointId.R_ANKLE),
}

# Joints owned by two adjacent parts; refinement pulls the pair together.
SHARED_JOINTS: tuple[tuple[JointId, PartLabel, PartLabel], ...] = (
    (JointId.HEAD_TOP, PartLabel.FACE, PartLabel.HAIR),
    (JointId.NECK, PartLabel.FACE, PartLabel.TOP_CLOTHES),
    (JointId.L_SHOULDER, PartLabel.TOP_CLOTHES, PartLabel.LEFT_ARM),
    (JointId.R_SHOULDER, PartLabel.TOP_CLOTHES, PartLabel.RIGHT_ARM),
    (JointId.L_HIP, PartLabel.TOP_CLOTHES, PartLabel.BOTTOM_CLOTHES),
    (JointId.R_HIP, PartLabel.TOP_CLOTHES, PartLabel.BOTTOM_CLOTHES),
    (JointId.L_KNEE, PartLabel.BOTTOM_CLOTHES, PartLabel.LEFT_LEG),
    (JointId.R_KNEE, PartLabel.BOTTOM_CLOTHES, PartLabel.RIGHT_LEG),
)

# Ordered joint pairs whose lengths are scored against the prior.  The
# shoulder segment is the unit of measure, so its ratio is exactly 1.
BONES: tuple[tuple[PartLabel, JointId, JointId], ...] = (
    (PartLabel.FACE, JointId.HEAD_TOP, JointId.NECK),
    (PartLabel.TOP_CLOTHES, JointId.L_SHOULDER, JointId.R_SHOULDER),
    (PartLabel.TOP_CLOTHES, JointId.L_HIP, JointId.R_HIP),
    (PartLabel.TOP_CLOTHES, JointId.L_SHOULDER, JointId.L_HIP),
    (PartLabel.TOP_CLOTHES, JointId.R_SHOULDER, JointId.R_HIP),
    (PartLabel.LEFT_ARM, JointId.L_SHOULDER, JointId.L_ELBOW),
    (PartLabel.LEFT_ARM, JointId.L_ELBOW, JointId.L_WRIST),
    (PartLabel.RIGHT_ARM, JointId.R_SHOULDER, JointId.R_ELBOW),
    (PartLabel.RIGHT_ARM, JointId.R_ELBOW, JointId.R_WRIST),
    (PartLabel.BOTTOM_CLOTHES, JointId.L_HIP, JointId.R_HIP),
    (PartLabel.BOTTOM_CLOTHES, JointId.L_HIP, JointId.L_KNEE),
    (PartLabel.BOTTOM_CLOTHES, JointId.R_HIP, JointId.R_KNEE),
    (PartLabel.LEFT_LEG, JointId.L_KNEE, JointId.L_ANKLE),
    (PartLabel.RIGHT_LEG, JointId.R_KNEE, JointId.R_ANKLE),
)


@dataclass(frozen=True)
class PartKeypointSet:
    """Joint positions (canvas coordinates) owned by one part."""

    label: PartLabel
    joints: dict[JointId, tuple[float, float]]

    def __post_init__(self) -> None:
        allowed = set(PART_JOINTS[self.label])
        extra = set(self.joints) - allowed
        if extra:
            names = ", ".join(sorted(j.value for j in extra))
            raise DimensionMismatch(
                f"{self.label.token} does not own joint(s): {names}"
            )

    def transformed(self, t: AffineTransform2D) -> "PartKeypointSet":
        moved = {
            j: tuple(t.apply(np.asarray(p, dtype=np.float64)))
            for j, p in self.joints.items()
        }
        return PartKeypointSet(self.label, moved)

    def centroid(self) -> np.ndarray:
        pts = np.asarray(list(self.joints.values()), dtype=np.float64)
        return pts.mean(axis=0)


FigureKeypoints = dict[PartLabel, PartKeypointSet]


# --- keypoint extraction -----------------------------------------------------


def _principal_axis(points: np.ndarray) -> np.ndarray:
    """Unit direction of largest spread, with a deterministic sign."""
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / max(len(points), 1)
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]  # eigh orders eigenvalues ascending
    peak = int(np.argmax(np.abs(axis)))
    return axis if axis[peak] >= 0 else -axis


def extract_keypoints(
    mask: np.ndarray,
    label: PartLabel,
    box: BoundingBox,
    torso: PartKeypointSet | None = None,
) -> PartKeypointSet:
    """Estimate a part's joints from its region mask.

    Limbs take the endpoints of the mask's principal-axis segment (2nd/98th
    percentile along the first principal direction) plus the centroid for the
    middle joint; box-like parts (face, hair, torso, bottom) read off their
    tight bounding box.  ``torso``, when given, disambiguates which limb
    endpoint is the proximal joint; otherwise the upper endpoint is used.
    """
    arr = np.asarray(mask, dtype=np.float64)
    fg = arr > 0.5
    if not fg.any():
        raise EmptyMask(f"no foreground pixels in {PartLabel(label).token} mask")
    to_canvas = box_to_canvas(box, arr.shape[0])

    ys, xs = np.nonzero(fg)
    pts = np.column_stack([xs, ys]).astype(np.float64)

    label = PartLabel(label)
    if label in (
        PartLabel.LEFT_ARM,
        PartLabel.RIGHT_ARM,
        PartLabel.LEFT_LEG,
        PartLabel.RIGHT_LEG,
    ):
        return _extract_limb(label, pts, to_canvas, torso)

    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    mid_x = (x_lo + x_hi) / 2.0
    width = x_hi - x_lo

    def g(x: float, y: float) -> tuple[float, float]:
        return tuple(to_canvas.apply(np.array([x, y])))

    if label is PartLabel.FACE:
        joints = {JointId.HEAD_TOP: g(mid_x, y_lo), JointId.NECK: g(mid_x, y_hi)}
    elif label is PartLabel.HAIR:
        joints = {JointId.HEAD_TOP: g(mid_x, y_lo)}
    elif label is PartLabel.TOP_CLOTHES:
        inset = 0.1 * width
        joints = {
            JointId.NECK: g(mid_x, y_lo),
            JointId.L_SHOULDER: g(x_lo + inset, y_lo),
            JointId.R_SHOULDER: g(x_hi - inset, y_lo),
            JointId.L_HIP: g(x_lo + inset, y_hi),
            JointId.R_HIP: g(x_hi - inset, y_hi),
        }
    elif label is PartLabel.BOTTOM_CLOTHES:
        inset = 0.1 * width
        joints = {
            JointId.L_HIP: g(x_lo + inset, y_lo),
            JointId.R_HIP: g(x_hi - inset, y_lo),
            JointId.L_KNEE: g(x_lo + inset, y_hi),
            JointId.R_KNEE: g(x_hi - inset, y_hi),
        }
    else:  # pragma: no cover - every label is handled above
        raise DimensionMismatch(f"unhandled label {label}")
    return PartKeypointSet(label, joints)


_LIMB_ANCHORS = {
    PartLabel.LEFT_ARM: JointId.L_SHOULDER,
    PartLabel.RIGHT_ARM: JointId.R_SHOULDER,
    PartLabel.LEFT_LEG: JointId.L_HIP,
    PartLabel.RIGHT_LEG: JointId.R_HIP,
}


def _extract_limb(
    label: PartLabel,
    pts: np.ndarray,
    to_canvas: AffineTransform2D,
    torso: PartKeypointSet | None,
) -> PartKeypointSet:
    center = pts.mean(axis=0)
    axis = _principal_axis(pts)
    offsets = (pts - center) @ axis
    lo, hi = np.percentile(offsets, [2.0, 98.0])
    e1 = to_canvas.apply(center + lo * axis)
    e2 = to_canvas.apply(center + hi * axis)
    centroid = to_canvas.apply(center)

    anchor_joint = _LIMB_ANCHORS[label]
    anchor = None
    if torso is not None:
        anchor = torso.joints.get(anchor_joint)
    if anchor is not None:
        a = np.asarray(anchor, dtype=np.float64)
        proximal, distal = (
            (e1, e2) if np.linalg.norm(e1 - a) <= np.linalg.norm(e2 - a) else (e2, e1)
        )
    else:
        proximal, distal = (e1, e2) if e1[1] <= e2[1] else (e2, e1)

    if label is PartLabel.LEFT_ARM:
        joints = {
            JointId.L_SHOULDER: tuple(proximal),
            JointId.L_ELBOW: tuple(centroid),
            JointId.L_WRIST: tuple(distal),
        }
    elif label is PartLabel.RIGHT_ARM:
        joints = {
            JointId.R_SHOULDER: tuple(proximal),
            JointId.R_ELBOW: tuple(centroid),
            JointId.R_WRIST: tuple(distal),
        }
    elif label is PartLabel.LEFT_LEG:
        joints = {JointId.L_KNEE: tuple(proximal), JointId.L_ANKLE: tuple(distal)}
    else:
        joints = {JointId.R_KNEE: tuple(proximal), JointId.R_ANKLE: tuple(distal)}
    return PartKeypointSet(label, joints)


def extract_figure_keypoints(
    parts: dict[PartLabel, tuple[np.ndarray, BoundingBox]],
) -> FigureKeypoints:
    """Extract joints for a whole figure, torso first so limbs can orient."""
    out: FigureKeypoints = {}
    torso = None
    if REFERENCE_PART in parts:
        mask, box = parts[REFERENCE_PART]
        torso = extract_keypoints(mask, REFERENCE_PART, box)
        out[REFERENCE_PART] = torso
    for label in sorted(parts, key=int):
        if label == REFERENCE_PART:
            continue
        mask, box = parts[label]
        out[label] = extract_keypoints(mask, label, box, torso)
    return out


# --- heatmaps ------------------------------------------------------------------


def render_heatmaps(
    joints: dict[JointId, tuple[float, float]],
    sigma: float = HEATMAP_SIGMA,
    stride: int = HEATMAP_STRIDE,
    canvas: tuple[int, int] = (256, 256),
) -> dict[JointId, np.ndarray]:
    """Isotropic Gaussian bump per joint on a stride-subsampled grid.

    Grid cell ``(i, j)`` sits at canvas position ``(j * stride, i * stride)``;
    the value is ``exp(-|p - k|^2 / (2 sigma^2))``, so a keypoint exactly on a
    grid cell peaks at exactly 1.0.
    """
    if sigma <= 0:
        raise DimensionMismatch("sigma must be positive")
    if stride < 1:
        raise DimensionMismatch("stride must be at least 1")
    w, h = canvas
    gw = (w + stride - 1) // stride
    gh = (h + stride - 1) // stride
    gx = np.arange(gw, dtype=np.float64) * stride
    gy = np.arange(gh, dtype=np.float64) * stride
    xs, ys = np.meshgrid(gx, gy)
    out = {}
    for joint, (kx, ky) in joints.items():
        d2 = (xs - float(kx)) ** 2 + (ys - float(ky)) ** 2
        out[joint] = np.exp(-d2 / (2.0 * sigma * sigma))
    return out


def _axis_offset(vm: float, v0: float, vp: float) -> float:
    """Sub-cell peak offset from a three-point quadratic fit.

    Uses the log-domain fit when all three samples are positive (exact for
    Gaussian bumps); degenerate fits return 0.
    """
    if vm > 0.0 and v0 > 0.0 and vp > 0.0:
        vm, v0, vp = math.log(vm), math.log(v0), math.log(vp)
    denom = vm - 2.0 * v0 + vp
    if abs(denom) < 1e-12:
        return 0.0
    off = 0.5 * (vm - vp) / denom
    return float(np.clip(off, -1.0, 1.0))


def heatmap_argmax(heatmap: np.ndarray, stride: int = 1) -> tuple[float, float]:
    """Sub-pixel peak of a heatmap, reported in canvas coordinates.

    The integer argmax cell is refined by a separable quadratic fit; border
    peaks (no three-cell stencil) fall back to the exact grid maximum.
    """
    arr = np.asarray(heatmap, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"heatmap must be 2-D, got shape {arr.shape}")
    if arr.max() == arr.min():
        raise FlatHeatmap("all heatmap cells are equal; argmax is undefined")
    i, j = np.unravel_index(int(np.argmax(arr)), arr.shape)
    off_x = (
        _axis_offset(arr[i, j - 1], arr[i, j], arr[i, j + 1])
        if 0 < j < arr.shape[1] - 1
        else 0.0
    )
    off_y = (
        _axis_offset(arr[i - 1, j], arr[i, j], arr[i + 1, j])
        if 0 < i < arr.shape[0] - 1
        else 0.0
    )
    return ((j + off_x) * stride, (i + off_y) * stride)


# --- skeleton prior ---------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonPrior:
    """Per-bone length ratios (relative to shoulder width): mean and std."""

    ratios: dict[tuple[PartLabel, JointId, JointId], tuple[float, float]]

    def mean(self, bone: tuple[PartLabel, JointId, JointId]) -> float:
        return self.ratios[bone][0]

    def std(self, bone: tuple[PartLabel, JointId, JointId]) -> float:
        return self.ratios[bone][1]


def shoulder_width(kps: FigureKeypoints) -> float:
    """Distance between the torso's shoulders; the proportion unit."""
    torso = kps.get(REFERENCE_PART)
    if torso is None:
        raise MissingReferencePart("figure has no torso keypoints")
    try:
        l = np.asarray(torso.joints[JointId.L_SHOULDER], dtype=np.float64)
        r = np.asarray(torso.joints[JointId.R_SHOULDER], dtype=np.float64)
    except KeyError:
        raise DegenerateReference("torso keypoints lack shoulder joints") from None
    width = float(np.linalg.norm(l - r))
    if width < 1e-9:
        raise DegenerateReference("shoulder width is zero")
    return width


def build_skeleton_prior(figures: list[FigureKeypoints]) -> SkeletonPrior:
    """Average bone-length ratios over a corpus of figures."""
    if len(figures) < 2:
        raise InsufficientCorpus(
            f"prior needs at least 2 figures, got {len(figures)}"
        )
    samples: dict[tuple[PartLabel, JointId, JointId], list[float]] = {
        bone: [] for bone in BONES
    }
    for kps in figures:
        width = shoulder_width(kps)
        for bone in BONES:
            label, j1, j2 = bone
            part = kps.get(label)
            if part is None or j1 not in part.joints or j2 not in part.joints:
                continue
            p1 = np.asarray(part.joints[j1], dtype=np.float64)
            p2 = np.asarray(part.joints[j2], dtype=np.float64)
            samples[bone].append(float(np.linalg.norm(p1 - p2)) / width)
    ratios = {
        bone: (float(np.mean(vals)), float(np.std(vals)))
        for bone, vals in samples.items()
        if vals
    }
    return SkeletonPrior(ratios)


# --- residual system ----------------------------------------------------------------


def _theta_identity(count: int) -> np.ndarray:
    theta = np.zeros(count * 6, dtype=np.float64)
    theta[0::6] = 1.0  # a
    theta[3::6] = 1.0  # d
    return theta


def theta_to_transform(theta6: np.ndarray, anchor: np.ndarray) -> AffineTransform2D:
    """Canvas-frame transform for one part's six parameters.

    The linear part acts about ``anchor`` (the part's keypoint centroid), and
    ``(u, v)`` is the translation measured at the anchor; this keeps rotation
    and scale well conditioned regardless of where the part sits.
    """
    a, b, c, d, u, v = (float(x) for x in theta6)
    ax, ay = float(anchor[0]), float(anchor[1])
    return AffineTransform2D(
        a=a,
        b=b,
        tx=ax + u - (a * ax + b * ay),
        c=c,
        d=d,
        ty=ay + v - (c * ax + d * ay),
    )


def transform_to_theta(t: AffineTransform2D, anchor: np.ndarray) -> np.ndarray:
    """Inverse of :func:`theta_to_transform`."""
    moved = t.apply(np.asarray(anchor, dtype=np.float64))
    return np.array(
        [t.a, t.b, t.c, t.d, moved[0] - anchor[0], moved[1] - anchor[1]],
        dtype=np.float64,
    )


class ResidualSystem:
    """Weighted residual vector and analytic Jacobian of the alignment energy.

    The parameter vector stacks six numbers per movable part (in ``labels``
    order): the 2x2 linear entries ``(a, b, c, d)`` acting about the part's
    keypoint centroid, then the anchor-frame translation ``(u, v)``.  Energy
    is the squared norm of ``residuals(theta)``.
    """

    def __init__(
        self,
        kps: FigureKeypoints,
        prior: SkeletonPrior,
        lam_connect: float = LAMBDA_CONNECTIVITY,
        lam_proportion: float = LAMBDA_PROPORTION,
        lam_regularize: float = LAMBDA_REGULARIZER,
        reference_transform: AffineTransform2D | None = None,
    ) -> None:
        if REFERENCE_PART not in kps:
            raise MissingReferencePart("structure refinement needs the torso part")
        self.kps = kps
        self.prior = prior
        self.sqrt_h = math.sqrt(lam_connect)
        self.sqrt_p = math.sqrt(lam_proportion)
        self.sqrt_l = math.sqrt(lam_regularize)
        self.reference_transform = reference_transform or AffineTransform2D.identity()

        self.labels: tuple[PartLabel, ...] = tuple(
            sorted((l for l in kps if l != REFERENCE_PART), key=int)
        )
        self.slot = {label: i for i, label in enumerate(self.labels)}
        self.anchors = {label: kps[label].centroid() for label in self.labels}

        ref_kps = kps[REFERENCE_PART].transformed(self.reference_transform)
        self.ref_width = shoulder_width({REFERENCE_PART: ref_kps})
        self._ref_points = {
            j: np.asarray(p, dtype=np.float64) for j, p in ref_kps.joints.items()
        }

        self._connect = [
            (joint, pa, pb)
            for joint, pa, pb in SHARED_JOINTS
            if pa in kps and pb in kps
            and joint in kps[pa].joints and joint in kps[pb].joints
        ]
        self._bones = [
            bone
            for bone in BONES
            if bone[0] in kps
            and bone[1] in kps[bone[0]].joints
            and bone[2] in kps[bone[0]].joints
            and bone in prior.ratios
        ]
        self.n_params = 6 * len(self.labels)
        self.n_residuals = (
            2 * len(self._connect) + len(self._bones) + 6 * len(self.labels)
        )

    def identity_theta(self) -> np.ndarray:
        return _theta_identity(len(self.labels))

    def theta_from_transforms(
        self, transforms: dict[PartLabel, AffineTransform2D]
    ) -> np.ndarray:
        theta = self.identity_theta()
        for label, t in transforms.items():
            if label == REFERENCE_PART or label not in self.slot:
                continue
            i = self.slot[label] * 6
            theta[i : i + 6] = transform_to_theta(t, self.anchors[label])
        return theta

    def transforms_from_theta(
        self, theta: np.ndarray
    ) -> dict[PartLabel, AffineTransform2D]:
        out = {REFERENCE_PART: self.reference_transform}
        for label in self.labels:
            i = self.slot[label] * 6
            out[label] = theta_to_transform(theta[i : i + 6], self.anchors[label])
        return out

    # -- evaluation ------------------------------------------------------------

    def _apply(self, theta: np.ndarray, label: PartLabel, joint: JointId) -> np.ndarray:
        point = np.asarray(self.kps[label].joints[joint], dtype=np.float64)
        if label == REFERENCE_PART:
            return self.reference_transform.apply(point)
        i = self.slot[label] * 6
        a, b, c, d, u, v = theta[i : i + 6]
        ax, ay = self.anchors[label]
        dx, dy = point[0] - ax, point[1] - ay
        return np.array([a * dx + b * dy + ax + u, c * dx + d * dy + ay + v])

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        r = np.zeros(self.n_residuals, dtype=np.float64)
        pos = 0
        for joint, pa, pb in self._connect:
            gap = self._apply(theta, pa, joint) - self._apply(theta, pb, joint)
            r[pos : pos + 2] = self.sqrt_h * gap
            pos += 2
        for label, j1, j2 in self._bones:
            length = self._bone_length(theta, label, j1, j2)
            rho = self.prior.mean((label, j1, j2))
            r[pos] = self.sqrt_p * (length / self.ref_width - rho)
            pos += 1
        for label in self.labels:
            i = self.slot[label] * 6
            a, b, c, d, u, v = theta[i : i + 6]
            r[pos : pos + 6] = self.sqrt_l * np.array(
                [a - 1.0, b, c, d - 1.0, u, v]
            )
            pos += 6
        return r

    def _bone_length(
        self, theta: np.ndarray, label: PartLabel, j1: JointId, j2: JointId
    ) -> float:
        p1 = np.asarray(self.kps[label].joints[j1], dtype=np.float64)
        p2 = np.asarray(self.kps[label].joints[j2], dtype=np.float64)
        d = p1 - p2
        if label == REFERENCE_PART:
            lin = self.reference_transform
            vec = np.array([lin.a * d[0] + lin.b * d[1], lin.c * d[0] + lin.d * d[1]])
        else:
            i = self.slot[label] * 6
            a, b, c, dd = theta[i : i + 4]
            vec = np.array([a * d[0] + b * d[1], c * d[0] + dd * d[1]])
        return float(np.linalg.norm(vec))

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        J = np.zeros((self.n_residuals, self.n_params), dtype=np.float64)
        pos = 0
        for joint, pa, pb in self._connect:
            for label, sign in ((pa, 1.0), (pb, -1.0)):
                if label == REFERENCE_PART:
                    continue
                i = self.slot[label] * 6
                point = np.asarray(self.kps[label].joints[joint], dtype=np.float64)
                ax, ay = self.anchors[label]
                dx, dy = point[0] - ax, point[1] - ay
                s = sign * self.sqrt_h
                J[pos, i + 0] = s * dx  # d r_x / d a
                J[pos, i + 1] = s * dy  # d r_x / d b
                J[pos, i + 4] = s  #      d r_x / d u
                J[pos + 1, i + 2] = s * dx
                J[pos + 1, i + 3] = s * dy
                J[pos + 1, i + 5] = s
            pos += 2
        for label, j1, j2 in self._bones:
            if label != REFERENCE_PART:
                i = self.slot[label] * 6
                p1 = np.asarray(self.kps[label].joints[j1], dtype=np.float64)
                p2 = np.asarray(self.kps[label].joints[j2], dtype=np.float64)
                dx, dy = p1[0] - p2[0], p1[1] - p2[1]
                a, b, c, d = theta[i : i + 4]
                ux, uy = a * dx + b * dy, c * dx + d * dy
                length = math.hypot(ux, uy)
                if length > 1e-12:
                    scale = self.sqrt_p / (self.ref_width * length)
                    J[pos, i + 0] = scale * ux * dx
                    J[pos, i + 1] = scale * ux * dy
                    J[pos, i + 2] = scale * uy * dx
                    J[pos, i + 3] = scale * uy * dy
            pos += 1
        for label in self.labels:
            i = self.slot[label] * 6
            for k in range(6):
                J[pos + k, i + k] = self.sqrt_l
            pos += 6
        return J


def structure_energy(
    kps: FigureKeypoints,
    prior: SkeletonPrior,
    transforms: dict[PartLabel, AffineTransform2D] | None = None,
    lam_connect: float = LAMBDA_CONNECTIVITY,
    lam_proportion: float = LAMBDA_PROPORTION,
    lam_regularize: float = LAMBDA_REGULARIZER,
) -> float:
    """Alignment energy of a figure under per-part transforms.

    Sums weighted shared-joint gaps, bone-proportion drift against the prior,
    and the identity distance of every non-reference transform (measured in
    the part's anchor frame, so the score is translation-equivariant).
    """
    transforms = transforms or {}
    ref_t = transforms.get(REFERENCE_PART)
    system = ResidualSystem(
        kps, prior, lam_connect, lam_proportion, lam_regularize, ref_t
    )
    theta = system.theta_from_transforms(transforms)
    r = system.residuals(theta)
    energy = float(r @ r)
    if not math.isfinite(energy):
        raise NonFiniteEnergy("alignment energy is not finite")
    return energy


@dataclass(frozen=True)
class EnergyTerms:
    connectivity: float
    proportion: float
    regularizer: float

    @property
    def total(self) -> float:
        return self.connectivity + self.proportion + self.regularizer


def structure_energy_terms(
    kps: FigureKeypoints,
    prior: SkeletonPrior,
    transforms: dict[PartLabel, AffineTransform2D] | None = None,
    lam_connect: float = LAMBDA_CONNECTIVITY,
    lam_proportion: float = LAMBDA_PROPORTION,
    lam_regularize: float = LAMBDA_REGULARIZER,
) -> EnergyTerms:
    """Per-term breakdown of :func:`structure_energy`."""
    transforms = transforms or {}
    ref_t = transforms.get(REFERENCE_PART)
    system = ResidualSystem(
        kps, prior, lam_connect, lam_proportion, lam_regularize, ref_t
    )
    theta = system.theta_from_transforms(transforms)
    r = system.residuals(theta)
    nc = 2 * len(system._connect)
    nb = len(system._bones)
    return EnergyTerms(
        connectivity=float(r[:nc] @ r[:nc]),
        proportion=float(r[nc : nc + nb] @ r[nc : nc + nb]),
        regularizer=float(r[nc + nb :] @ r[nc + nb :]),
    )


# --- cascaded refinement --------------------------------------------------------


@dataclass
class StructureSolution:
    """Result of the cascaded alignment.

    ``energy_trace`` holds (start, end) energies flattened per step; the end
    of one step never exceeds its start, and each step's start never exceeds
    the previous step's end (the per-step transform penalty resets).
    """

    step_transforms: list[dict[PartLabel, AffineTransform2D]]
    total_transforms: dict[PartLabel, AffineTransform2D]
    final_keypoints: FigureKeypoints
    final_sketches: dict[PartLabel, np.ndarray] = field(default_factory=dict)
    final_masks: dict[PartLabel, np.ndarray] = field(default_factory=dict)
    final_heatmaps: dict[PartLabel, dict[JointId, np.ndarray]] = field(
        default_factory=dict
    )
    energy_trace: list[float] = field(default_factory=list)


def _minimize_step(system: ResidualSystem) -> tuple[np.ndarray, float, float]:
    """One damped Gauss-Newton solve from the identity parameters."""
    theta = system.identity_theta()
    r = system.residuals(theta)
    energy = float(r @ r)
    if not math.isfinite(energy):
        raise NonFiniteEnergy("alignment energy is not finite")
    start_energy = energy
    damping = _DAMPING_INIT
    for _ in range(_MAX_INNER_ITERATIONS):
        J = system.jacobian(theta)
        grad = 2.0 * (J.T @ r)
        if np.linalg.norm(grad) <= _GRADIENT_STOP:
            break
        H = J.T @ J + damping * np.eye(system.n_params)
        try:
            delta = np.linalg.solve(H, -(J.T @ r))
        except np.linalg.LinAlgError:
            damping *= _DAMPING_GROW
            continue
        trial = theta + delta
        r_trial = system.residuals(trial)
        e_trial = float(r_trial @ r_trial)
        if math.isfinite(e_trial) and e_trial < energy:
            theta, r, energy = trial, r_trial, e_trial
            damping /= _DAMPING_SHRINK
        else:
            damping *= _DAMPING_GROW
            if damping > _DAMPING_MAX:
                break
    return theta, start_energy, energy


def refine_structure(
    parts: dict[PartLabel, PartSketch],
    masks: dict[PartLabel, np.ndarray],
    kps: FigureKeypoints,
    prior: SkeletonPrior,
    steps: int = DEFAULT_STEPS,
    lam_connect: float = LAMBDA_CONNECTIVITY,
    lam_proportion: float = LAMBDA_PROPORTION,
    lam_regularize: float = LAMBDA_REGULARIZER,
    canvas: tuple[int, int] = (256, 256),
    sigma: float = HEATMAP_SIGMA,
    stride: int = HEATMAP_STRIDE,
) -> StructureSolution:
    """Cascade of per-part affine corrections toward a connected figure.

    Each step re-fits all movable parts jointly (damped Gauss-Newton), then
    bakes the accepted correction into the keypoints before the next step.
    Output rasters are produced by a single warp of the original inputs under
    the per-part composed totals -- no repeated resampling.
    """
    if REFERENCE_PART not in kps:
        raise MissingReferencePart("structure refinement needs the torso part")
    if len(kps) < 2:
        raise MissingReferencePart("structure refinement needs at least 2 parts")
    if steps < 0:
        raise DimensionMismatch("steps must be non-negative")

    kps_cur: FigureKeypoints = dict(kps)
    totals = {label: AffineTransform2D.identity() for label in kps}
    step_transforms: list[dict[PartLabel, AffineTransform2D]] = []
    trace: list[float] = []

    for _ in range(steps):
        system = ResidualSystem(
            kps_cur, prior, lam_connect, lam_proportion, lam_regularize
        )
        theta, e_start, e_end = _minimize_step(system)
        step = system.transforms_from_theta(theta)
        step[REFERENCE_PART] = AffineTransform2D.identity()
        step_transforms.append(step)
        trace.extend([e_start, e_end])
        for label in kps_cur:
            t = step.get(label, AffineTransform2D.identity())
            totals[label] = t.compose(totals[label])
            kps_cur[label] = kps_cur[label].transformed(t)

    w, h = canvas
    final_sketches: dict[PartLabel, np.ndarray] = {}
    final_masks: dict[PartLabel, np.ndarray] = {}
    final_heatmaps: dict[PartLabel, dict[JointId, np.ndarray]] = {}
    identity = AffineTransform2D.identity()
    for label, part in parts.items():
        total = totals.get(label, identity)
        layer = paste_max_array(np.zeros((h, w)), part.crop.data, part.box)
        mask_layer = paste_mask_labels(
            np.zeros((h, w), dtype=np.uint8), masks[label], part.box, 1
        ).astype(np.float64)
        if total == identity:
            final_sketches[label] = layer
            final_masks[label] = mask_layer
        else:
            final_sketches[label] = warp_array(layer, total, w, h, 0.0, "bilinear")
            final_masks[label] = warp_array(mask_layer, total, w, h, 0.0, "nearest")
        if label in kps:
            hm = render_heatmaps(kps[label].joints, sigma, stride, canvas)
            grid_scale = AffineTransform2D.scaling(float(stride))
            in_grid = grid_scale.invert().compose(total).compose(grid_scale)
            final_heatmaps[label] = {
                j: (
                    arr
                    if in_grid == identity
                    else warp_array(
                        arr, in_grid, arr.shape[1], arr.shape[0], 0.0, "bilinear"
                    )
                )
                for j, arr in hm.items()
            }

    return StructureSolution(
        step_transforms=step_transforms,
        total_transforms=totals,
        final_keypoints=kps_cur,
        final_sketches=final_sketches,
        final_masks=final_masks,
        final_heatmaps=final_heatmaps,
        energy_trace=trace,
    )


# --- perturbation (benchmark support) ----------------------------------------------


@dataclass(frozen=True)
class PerturbMagnitude:
    """Uniform sampling half-ranges for the perturb-and-recover benchmark."""

    translate_px: float = 10.0
    rotate_deg: float = 15.0
    scale_frac: float = 0.10
    shear_frac: float = 0.05


def perturb_parts(
    parts: dict[PartLabel, PartSketch],
    masks: dict[PartLabel, np.ndarray],
    kps: FigureKeypoints,
    magnitude: PerturbMagnitude,
    seed: int,
) -> tuple[
    dict[PartLabel, PartSketch],
    dict[PartLabel, np.ndarray],
    FigureKeypoints,
    dict[PartLabel, AffineTransform2D],
]:
    """Seeded random affine disturbance of every movable part.

    The reference part is never touched.  Draws happen in label order
    (translation x, y, rotation, scale, shear per part), so identical seeds
    reproduce identical outputs.  Zero magnitudes return bit-identical data.
    """
    rng = np.random.default_rng(seed)
    out_parts = dict(parts)
    out_masks = dict(masks)
    out_kps = dict(kps)
    true_transforms: dict[PartLabel, AffineTransform2D] = {
        label: AffineTransform2D.identity() for label in parts
    }
    identity = AffineTransform2D.identity()

    for label in sorted(parts, key=int):
        part = parts[label]
        if label == REFERENCE_PART or part.is_absent:
            continue
        dx = rng.uniform(-magnitude.translate_px, magnitude.translate_px)
        dy = rng.uniform(-magnitude.translate_px, magnitude.translate_px)
        ang = rng.uniform(-magnitude.rotate_deg, magnitude.rotate_deg)
        s = rng.uniform(1.0 - magnitude.scale_frac, 1.0 + magnitude.scale_frac)
        shear = rng.uniform(-magnitude.shear_frac, magnitude.shear_frac)

        mask = np.asarray(masks[label])
        fg = np.nonzero(mask > 0.5)
        if fg[0].size:
            crop_c = np.array([fg[1].mean(), fg[0].mean()])
            center = box_to_canvas(part.box, part.resolution).apply(crop_c)
        else:
            center = kps[label].centroid() if label in kps else np.zeros(2)

        rad = math.radians(ang)
        ca, sa = math.cos(rad), math.sin(rad)
        # rotate(ang) . shear . scale, all about the part centroid
        la = ca * s
        lb = ca * s * shear - sa * s
        lc = sa * s
        ld = sa * s * shear + ca * s
        cx, cy = float(center[0]), float(center[1])
        g = AffineTransform2D(
            a=la,
            b=lb,
            tx=cx - (la * cx + lb * cy) + dx,
            c=lc,
            d=ld,
            ty=cy - (lc * cx + ld * cy) + dy,
        )
        true_transforms[label] = g
        if g == identity:
            continue

        to_canvas = box_to_canvas(part.box, part.resolution)
        in_crop = to_canvas.invert().compose(g).compose(to_canvas)
        p = part.resolution
        new_crop = warp_array(part.crop.data, in_crop, p, p, 0.0, "bilinear")
        new_mask = warp_array(mask, in_crop, p, p, 0.0, "nearest")
        out_parts[label] = PartSketch(label, part.box, SketchRaster(new_crop))
        out_masks[label] = new_mask
        if label in kps:
            out_kps[label] = kps[label].transformed(g)

    return out_parts, out_masks, out_kps, true_transforms


def mean_shared_joint_gap(kps: FigureKeypoints) -> float:
    """Average distance between the two copies of each shared joint."""
    gaps = []
    for joint, pa, pb in SHARED_JOINTS:
        if pa not in kps or pb not in kps:
            continue
        a = kps[pa].joints.get(joint)
        b = kps[pb].joints.get(joint)
        if a is None or b is None:
            continue
        gaps.append(
            float(
                np.linalg.norm(
                    np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
                )
            )
        )
    return float(np.mean(gaps)) if gaps else 0.0
