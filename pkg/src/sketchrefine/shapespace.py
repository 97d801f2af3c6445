"""Per-class linear shape spaces with neighborhood-based latent projection.

Each of the six shape classes gets a linear latent space fitted to its corpus
crops (mean + orthonormal basis from an SVD of the centered data).  A query
crop is encoded, snapped toward the corpus by a convex-combination-style
least-squares blend of its nearest corpus latents, and decoded back into a
cleaned-up crop plus a filled region mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCorpusWarning,
    DimensionMismatch,
    EmptyNeighborSet,
    InsufficientCorpus,
)
from .model import (
    BoundingBox,
    PARSING_PRIORITY,
    ParsingMap,
    PartLabel,
    PartSketch,
    ShapeClass,
    SketchRaster,
    mirror_array,
    paste_max_array,
    paste_mask_labels,
    shape_class_of,
)

DEFAULT_LATENT_DIM = 128
DEFAULT_NEIGHBORS = 10

# Ridge strength for the latent -> mask regressor.
MASK_RIDGE_LAMBDA = 1e-2

# Relative Tikhonov floor for the neighbor-weight solve.
WEIGHT_EPSILON_SCALE = 1e-3
WEIGHT_EPSILON_FLOOR = 1e-8


@dataclass
class ShapeSpace:
    """Linear latent space for one shape class.

    Attributes:
        class_id: which of the six shape classes this space models.
        resolution: crop side length P (crops are P*P).
        mean: flattened mean crop, shape (P*P,).
        basis: orthonormal principal directions, shape (P*P, d).
        latents: corpus coordinates in the basis, shape (n, d).
        entry_ids: stable per-entry ids aligned with ``latents`` rows.
        mask_coeffs: ridge regressor from [latent, 1] to flattened region
            masks, shape (d + 1, P*P).
    """

    class_id: ShapeClass
    resolution: int
    mean: np.ndarray
    basis: np.ndarray
    latents: np.ndarray
    entry_ids: np.ndarray
    mask_coeffs: np.ndarray

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def size(self) -> int:
        return self.latents.shape[0]


@dataclass
class ShapeSpaceIndex:
    """All per-class shape spaces built from one corpus."""

    spaces: dict[ShapeClass, ShapeSpace] = field(default_factory=dict)

    def space_for_label(self, label: PartLabel) -> tuple[ShapeSpace, bool]:
        cls, mirrored = shape_class_of(label)
        try:
            return self.spaces[cls], mirrored
        except KeyError:
            raise InsufficientCorpus(
                f"no shape space for class {cls.name}"
            ) from None


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of snapping a latent onto the corpus neighborhood."""

    latent: np.ndarray
    neighbor_ids: tuple[int, ...]
    weights: np.ndarray
    residual: float


def entry_id_for(item_id: int, label: PartLabel) -> int:
    """Stable id for one corpus entry (one part of one item).

    Shared classes (arms, legs) hold two entries per item, so the id folds
    the part code into the low decimal digit: ``item_id * 10 + label``.
    """
    return int(item_id) * 10 + int(label)


def _flatten_crop(crop: np.ndarray, mirrored: bool) -> np.ndarray:
    arr = mirror_array(crop) if mirrored else np.asarray(crop, dtype=np.float64)
    return arr.reshape(-1)


def build_shape_spaces(
    entries: list[tuple[int, PartSketch, np.ndarray]],
    latent_dim: int | None = DEFAULT_LATENT_DIM,
) -> ShapeSpaceIndex:
    """Fit one shape space per class from corpus entries.

    Args:
        entries: triples ``(item_id, part, mask_crop)``; right-side limbs are
            mirrored onto the shared left-side class automatically.
        latent_dim: requested latent dimensionality; ``None`` keeps the full
            positive rank.  The effective value is clamped to the rank of the
            centered crop matrix (a warning reports any clamping).

    Returns:
        Index holding a space for every class that appears in ``entries``.
    """
    by_class: dict[ShapeClass, dict[str, list]] = {}
    for item_id, part, mask in entries:
        cls, mirrored = shape_class_of(part.label)
        bucket = by_class.setdefault(cls, {"x": [], "m": [], "ids": [], "p": None})
        p = part.resolution
        if bucket["p"] is None:
            bucket["p"] = p
        elif bucket["p"] != p:
            raise DimensionMismatch(
                f"class {cls.name} mixes crop resolutions {bucket['p']} and {p}"
            )
        if np.asarray(mask).shape != (p, p):
            raise DimensionMismatch(
                f"mask crop shape {np.asarray(mask).shape} != ({p}, {p})"
            )
        bucket["x"].append(_flatten_crop(part.crop.data, mirrored))
        bucket["m"].append(_flatten_crop(mask, mirrored))
        bucket["ids"].append(entry_id_for(item_id, part.label))

    index = ShapeSpaceIndex()
    for cls, bucket in sorted(by_class.items()):
        n = len(bucket["x"])
        if n < 2:
            raise InsufficientCorpus(
                f"class {cls.name} has {n} crop(s); at least 2 are required"
            )
        X = np.vstack(bucket["x"])
        M = np.vstack(bucket["m"])
        ids = np.asarray(bucket["ids"], dtype=np.int64)
        index.spaces[cls] = _fit_space(
            cls, bucket["p"], X, M, ids, latent_dim
        )
    return index


def _fit_space(
    cls: ShapeClass,
    resolution: int,
    X: np.ndarray,
    M: np.ndarray,
    ids: np.ndarray,
    latent_dim: int | None,
) -> ShapeSpace:
    mean = X.mean(axis=0)
    centered = X - mean

    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = svals[0] * max(centered.shape) * np.finfo(np.float64).eps if svals.size else 0.0
    rank = int(np.sum(svals > tol))

    requested = rank if latent_dim is None else int(latent_dim)
    d = min(requested, rank)
    if rank == 0:
        warnings.warn(
            f"class {cls.name}: all crops identical; latent dimension clamped to 0",
            DegenerateCorpusWarning,
            stacklevel=3,
        )
    elif latent_dim is not None and d < requested:
        warnings.warn(
            f"class {cls.name}: latent dimension clamped from {requested} to rank {d}",
            stacklevel=3,
        )

    basis = vt[:d].T.copy()  # (P*P, d)
    # Deterministic sign convention: the largest-magnitude entry of each
    # column is positive; argmax breaks magnitude ties at the lowest index.
    for k in range(d):
        col = basis[:, k]
        peak = int(np.argmax(np.abs(col)))
        if col[peak] < 0:
            basis[:, k] = -col

    latents = centered @ basis  # (n, d)

    # Ridge regression from [latent, 1] to flattened masks.
    A = np.hstack([latents, np.ones((X.shape[0], 1))])
    gram = A.T @ A + MASK_RIDGE_LAMBDA * np.eye(d + 1)
    mask_coeffs = np.linalg.solve(gram, A.T @ M)

    return ShapeSpace(
        class_id=cls,
        resolution=resolution,
        mean=mean,
        basis=basis,
        latents=latents,
        entry_ids=ids,
        mask_coeffs=mask_coeffs,
    )


# --- encode / decode ----------------------------------------------------------


def encode(space: ShapeSpace, crop: np.ndarray, mirrored: bool = False) -> np.ndarray:
    """Project a crop into the class's latent coordinates."""
    arr = np.asarray(crop, dtype=np.float64)
    p = space.resolution
    if arr.shape != (p, p):
        raise DimensionMismatch(f"crop shape {arr.shape} != ({p}, {p})")
    x = _flatten_crop(arr, mirrored)
    return space.basis.T @ (x - space.mean)


def decode_sketch(
    space: ShapeSpace, latent: np.ndarray, mirrored: bool = False
) -> np.ndarray:
    """Reconstruct a crop from latent coordinates, clamped to [0, 1]."""
    v = _check_latent(space, latent)
    flat = np.clip(space.mean + space.basis @ v, 0.0, 1.0)
    out = flat.reshape(space.resolution, space.resolution)
    return mirror_array(out) if mirrored else out


def decode_mask(
    space: ShapeSpace, latent: np.ndarray, mirrored: bool = False
) -> np.ndarray:
    """Predict the binary region mask for a latent (threshold 0.5)."""
    v = _check_latent(space, latent)
    scores = np.concatenate([v, [1.0]]) @ space.mask_coeffs
    out = (scores >= 0.5).astype(np.float64).reshape(
        space.resolution, space.resolution
    )
    return mirror_array(out) if mirrored else out


def _check_latent(space: ShapeSpace, latent: np.ndarray) -> np.ndarray:
    v = np.asarray(latent, dtype=np.float64).reshape(-1)
    if v.shape[0] != space.latent_dim:
        raise DimensionMismatch(
            f"latent has {v.shape[0]} coords, space expects {space.latent_dim}"
        )
    return v


# --- neighborhood projection ----------------------------------------------------


def knn_query(
    space: ShapeSpace,
    latent: np.ndarray,
    k: int = DEFAULT_NEIGHBORS,
    exclude_ids: frozenset[int] | set[int] = frozenset(),
) -> np.ndarray:
    """Indices (rows into ``space.latents``) of the k nearest entries.

    Exact Euclidean search; distance ties are broken by ascending entry id.
    """
    if k < 1:
        raise EmptyNeighborSet("neighbor count must be at least 1")
    v = _check_latent(space, latent)
    rows = np.arange(space.size)
    if exclude_ids:
        keep = ~np.isin(space.entry_ids, list(exclude_ids))
        rows = rows[keep]
    if rows.size < k:
        raise InsufficientCorpus(
            f"class {space.class_id.name} has {rows.size} entries, need k={k}"
        )
    diffs = space.latents[rows] - v
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    order = np.lexsort((space.entry_ids[rows], dists))
    return rows[order[:k]]


def solve_neighbor_weights(latent: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Sum-to-one least-squares blend weights for reconstructing ``latent``.

    Minimizes ``|v - sum_k w_k v_k|^2`` subject to ``sum_k w_k = 1`` via the
    local Gram system ``C_jk = (v - v_j) . (v - v_k)``, floored by a relative
    Tikhonov term so near-degenerate neighborhoods stay solvable.
    """
    v = np.asarray(latent, dtype=np.float64).reshape(-1)
    N = np.atleast_2d(np.asarray(neighbors, dtype=np.float64))
    if N.shape[0] < 1:
        raise EmptyNeighborSet("need at least one neighbor")
    if N.shape[1] != v.shape[0]:
        raise DimensionMismatch(
            f"neighbors have {N.shape[1]} coords, latent has {v.shape[0]}"
        )
    k = N.shape[0]
    G = v[None, :] - N
    C = G @ G.T
    trace = float(np.trace(C))
    eps = WEIGHT_EPSILON_SCALE * trace / k if trace > 0.0 else WEIGHT_EPSILON_FLOOR
    Creg = C + eps * np.eye(k)
    w = np.linalg.solve(Creg, np.ones(k))
    return w / w.sum()


def project(
    space: ShapeSpace,
    latent: np.ndarray,
    k: int = DEFAULT_NEIGHBORS,
    exclude_ids: frozenset[int] | set[int] = frozenset(),
) -> ProjectionResult:
    """Snap a latent onto the blend of its k nearest corpus latents."""
    rows = knn_query(space, latent, k, exclude_ids)
    neighbors = space.latents[rows]
    w = solve_neighbor_weights(latent, neighbors)
    blended = w @ neighbors
    v = _check_latent(space, latent)
    return ProjectionResult(
        latent=blended,
        neighbor_ids=tuple(int(i) for i in space.entry_ids[rows]),
        weights=w,
        residual=float(np.linalg.norm(v - blended)),
    )


def refine_part(
    index: ShapeSpaceIndex,
    part: PartSketch,
    k: int = DEFAULT_NEIGHBORS,
    exclude_ids: frozenset[int] | set[int] = frozenset(),
) -> tuple[PartSketch, np.ndarray, ProjectionResult | None]:
    """Geometry-refine one part through its class's shape space.

    Absent parts (all-zero crop) pass through unchanged with an empty mask
    and no projection diagnostics.
    """
    if part.is_absent:
        p = part.resolution
        return part, np.zeros((p, p), dtype=np.float64), None
    space, mirrored = index.space_for_label(part.label)
    v = encode(space, part.crop.data, mirrored)
    result = project(space, v, k, exclude_ids)
    crop = decode_sketch(space, result.latent, mirrored)
    mask = decode_mask(space, result.latent, mirrored)
    refined = PartSketch(part.label, part.box, SketchRaster(crop))
    return refined, mask, result


def assemble_global(
    parts: list[tuple[PartSketch, np.ndarray]],
    width: int,
    height: int,
) -> tuple[SketchRaster, ParsingMap]:
    """Compose per-part crops and masks into a canvas sketch and parsing map.

    Ink blends by per-pixel max; label conflicts resolve by the fixed
    priority order (painted lowest priority first, so later writes win).
    """
    sketch = np.zeros((height, width), dtype=np.float64)
    labels = np.zeros((height, width), dtype=np.uint8)
    rank = {label: i for i, label in enumerate(PARSING_PRIORITY)}
    ordered = sorted(parts, key=lambda pm: rank[pm[0].label], reverse=True)
    for part, mask in ordered:
        if part.is_absent and not np.any(mask):
            continue
        sketch = paste_max_array(sketch, part.crop.data, part.box)
        labels = paste_mask_labels(labels, mask, part.box, int(part.label))
    return SketchRaster(sketch), ParsingMap(labels)


def project_corpus(
    index: ShapeSpaceIndex,
    entries: list[tuple[int, PartSketch, np.ndarray]],
    k: int = DEFAULT_NEIGHBORS,
    leave_one_out: bool = True,
) -> dict[int, PartSketch]:
    """Refine every corpus entry through its own index.

    With ``leave_one_out`` set, each entry is excluded from its own neighbor
    retrieval so the stored refined form does not simply reproduce itself.
    Returns refined parts keyed by entry id.
    """
    out: dict[int, PartSketch] = {}
    for item_id, part, _mask in entries:
        eid = entry_id_for(item_id, part.label)
        exclude = frozenset({eid}) if leave_one_out else frozenset()
        refined, _m, _r = refine_part(index, part, k, exclude)
        out[eid] = refined
    return out
