"""Shape spaces: PCA fitting, encode/decode, neighbor blending, assembly."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from sketchrefine.errors import (
    DegenerateCorpusWarning,
    DimensionMismatch,
    EmptyNeighborSet,
    InsufficientCorpus,
)
from sketchrefine.model import (
    BoundingBox,
    PartLabel,
    PartSketch,
    ShapeClass,
    SketchRaster,
    mirror_array,
)
from sketchrefine.shapespace import (
    ProjectionResult,
    ShapeSpace,
    assemble_global,
    build_shape_spaces,
    decode_mask,
    decode_sketch,
    encode,
    entry_id_for,
    knn_query,
    project,
    project_corpus,
    refine_part,
    solve_neighbor_weights,
)

P = 8
BOX = BoundingBox(0.0, 0.0, float(P), float(P))


def part_of(arr, label=PartLabel.FACE):
    return PartSketch(label, BOX, SketchRaster(np.clip(arr, 0.0, 1.0)))


def random_entries(rng, n, label=PartLabel.FACE, start_id=0):
    entries = []
    for i in range(n):
        crop = rng.random((P, P)) * 0.9
        mask = (rng.random((P, P)) > 0.5).astype(np.float64)
        entries.append((start_id + i, part_of(crop, label), mask))
    return entries


def reference_weights_oracle(v, N, restarts=24, seed=0):
    """Random-restart numerical minimizer of the regularized blend objective."""
    k = N.shape[0]
    G = v[None, :] - N
    C = G @ G.T
    tr = float(np.trace(C))
    eps = 1e-3 * tr / k if tr > 0 else 1e-8

    def objective(free):
        w = np.append(free, 1.0 - free.sum())
        r = v - w @ N
        return float(r @ r + eps * (w @ w))

    rng = np.random.default_rng(seed)
    best_val, best_w = np.inf, None
    starts = [np.full(k - 1, 1.0 / k)] + [
        rng.normal(scale=1.0, size=k - 1) for _ in range(restarts - 1)
    ]
    for x0 in starts:
        res = optimize.minimize(objective, x0, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        if res.fun < best_val:
            best_val = res.fun
            best_w = np.append(res.x, 1.0 - res.x.sum())
    return best_w, best_val


def regularized_objective(v, N, w):
    k = N.shape[0]
    G = v[None, :] - N
    C = G @ G.T
    tr = float(np.trace(C))
    eps = 1e-3 * tr / k if tr > 0 else 1e-8
    r = v - w @ N
    return float(r @ r + eps * (w @ w))


# --- PCA fitting ----------------------------------------------------------------


def test_two_point_corpus_recovers_the_difference_axis():
    # Hand-computed oracle: mean is the midpoint, the single basis vector is
    # the normalized difference, latents are +/- half the distance apart.
    x1 = np.zeros((P, P))
    x1[2, :] = 1.0
    x2 = np.zeros((P, P))
    x2[5, :] = 1.0
    m = np.ones((P, P))
    entries = [(0, part_of(x1), m), (1, part_of(x2), m)]
    index = build_shape_spaces(entries, latent_dim=None)
    space = index.spaces[ShapeClass.FACE]

    assert space.latent_dim == 1
    assert np.allclose(space.mean, ((x1 + x2) / 2).reshape(-1))
    diff = (x1 - x2).reshape(-1)
    axis = diff / np.linalg.norm(diff)
    # Sign convention: the largest-magnitude entry is positive; ties break at
    # the lowest index, which lives on row 2 of x1, so the axis keeps +.
    assert np.allclose(space.basis[:, 0], axis, atol=1e-12)
    half = np.linalg.norm(diff) / 2
    assert np.allclose(sorted(space.latents[:, 0]), [-half, half])


def test_basis_is_orthonormal():
    rng = np.random.default_rng(10)
    index = build_shape_spaces(random_entries(rng, 20), latent_dim=12)
    B = index.spaces[ShapeClass.FACE].basis
    assert np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-8)


def test_sign_convention_largest_entry_positive():
    rng = np.random.default_rng(11)
    index = build_shape_spaces(random_entries(rng, 15), latent_dim=None)
    B = index.spaces[ShapeClass.FACE].basis
    for k in range(B.shape[1]):
        peak = np.argmax(np.abs(B[:, k]))
        assert B[peak, k] > 0


def test_full_rank_decode_reproduces_corpus_crops():
    rng = np.random.default_rng(12)
    entries = random_entries(rng, 12)
    index = build_shape_spaces(entries, latent_dim=None)
    space = index.spaces[ShapeClass.FACE]
    for _, part, _ in entries:
        v = encode(space, part.crop.data)
        out = decode_sketch(space, v)
        assert np.max(np.abs(out - part.crop.data)) < 1e-5


def test_reconstruction_error_non_increasing_in_latent_dim():
    rng = np.random.default_rng(13)
    entries = random_entries(rng, 30)
    errs = []
    for d in (2, 5, 11):
        index = build_shape_spaces(entries, latent_dim=d)
        space = index.spaces[ShapeClass.FACE]
        errs.append(
            np.mean(
                [
                    np.linalg.norm(
                        decode_sketch(space, encode(space, p.crop.data)) - p.crop.data
                    )
                    for _, p, _ in entries
                ]
            )
        )
    assert errs[0] >= errs[1] >= errs[2]


def test_latent_dim_clamped_to_corpus_rank_with_warning():
    rng = np.random.default_rng(14)
    entries = random_entries(rng, 5)  # centered rank at most 4
    with pytest.warns(UserWarning, match="clamped"):
        index = build_shape_spaces(entries, latent_dim=50)
    assert index.spaces[ShapeClass.FACE].latent_dim == 4


def test_identical_crops_warn_and_clamp_to_zero_rank():
    crop = np.full((P, P), 0.5)
    m = np.ones((P, P))
    entries = [(i, part_of(crop), m) for i in range(4)]
    with pytest.warns(DegenerateCorpusWarning):
        index = build_shape_spaces(entries, latent_dim=8)
    space = index.spaces[ShapeClass.FACE]
    assert space.latent_dim == 0
    # Zero-dimensional latents still decode to the shared mean crop.
    assert np.allclose(decode_sketch(space, np.zeros(0)), crop)


def test_single_entry_class_is_rejected():
    rng = np.random.default_rng(15)
    entries = random_entries(rng, 1)
    with pytest.raises(InsufficientCorpus):
        build_shape_spaces(entries)


def test_mixed_resolutions_are_rejected():
    rng = np.random.default_rng(16)
    small = PartSketch(
        PartLabel.FACE, BOX, SketchRaster(rng.random((P // 2, P // 2)))
    )
    entries = random_entries(rng, 2) + [(9, small, np.ones((P // 2, P // 2)))]
    with pytest.raises(DimensionMismatch):
        build_shape_spaces(entries)


def test_build_is_deterministic():
    rng1 = np.random.default_rng(17)
    rng2 = np.random.default_rng(17)
    i1 = build_shape_spaces(random_entries(rng1, 18), latent_dim=6)
    i2 = build_shape_spaces(random_entries(rng2, 18), latent_dim=6)
    s1, s2 = i1.spaces[ShapeClass.FACE], i2.spaces[ShapeClass.FACE]
    assert s1.basis.tobytes() == s2.basis.tobytes()
    assert s1.latents.tobytes() == s2.latents.tobytes()
    assert s1.mask_coeffs.tobytes() == s2.mask_coeffs.tobytes()


# --- encode / decode --------------------------------------------------------------


def test_encode_of_mean_is_zero():
    rng = np.random.default_rng(18)
    index = build_shape_spaces(random_entries(rng, 10), latent_dim=5)
    space = index.spaces[ShapeClass.FACE]
    v = encode(space, space.mean.reshape(P, P))
    assert np.allclose(v, 0.0, atol=1e-10)


def test_decode_clamps_to_unit_interval():
    rng = np.random.default_rng(19)
    index = build_shape_spaces(random_entries(rng, 10), latent_dim=5)
    space = index.spaces[ShapeClass.FACE]
    out = decode_sketch(space, np.full(5, 50.0))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_latent_length_is_validated():
    rng = np.random.default_rng(20)
    index = build_shape_spaces(random_entries(rng, 10), latent_dim=5)
    space = index.spaces[ShapeClass.FACE]
    with pytest.raises(DimensionMismatch):
        decode_sketch(space, np.zeros(7))
    with pytest.raises(DimensionMismatch):
        encode(space, np.zeros((P, P + 1)))


def test_identical_masks_decode_exactly():
    rng = np.random.default_rng(21)
    mask = np.zeros((P, P))
    mask[2:6, 2:6] = 1.0
    entries = [
        (i, part_of(rng.random((P, P))), mask.copy()) for i in range(8)
    ]
    index = build_shape_spaces(entries, latent_dim=None)
    space = index.spaces[ShapeClass.FACE]
    for _, part, _ in entries:
        out = decode_mask(space, encode(space, part.crop.data))
        assert np.array_equal(out, mask)


def test_mask_decoder_recovers_corpus_masks_reasonably():
    # Masks correlated with the crops must come back with high overlap.
    rng = np.random.default_rng(22)
    entries = []
    for i in range(24):
        y = rng.integers(1, P - 3)
        crop = np.zeros((P, P))
        crop[y : y + 2, 1 : P - 1] = 0.8
        mask = np.zeros((P, P))
        mask[y : y + 2, :] = 1.0
        entries.append((i, part_of(crop), mask))
    index = build_shape_spaces(entries, latent_dim=None)
    space = index.spaces[ShapeClass.FACE]
    ious = []
    for _, part, mask in entries:
        pred = decode_mask(space, encode(space, part.crop.data))
        inter = np.sum((pred > 0) & (mask > 0))
        union = np.sum((pred > 0) | (mask > 0))
        ious.append(inter / union)
    assert np.mean(ious) >= 0.8


# --- neighbor retrieval ------------------------------------------------------------


def make_space(latents, ids=None):
    latents = np.asarray(latents, dtype=np.float64)
    n, d = latents.shape
    return ShapeSpace(
        class_id=ShapeClass.FACE,
        resolution=P,
        mean=np.zeros(P * P),
        basis=np.zeros((P * P, d)),
        latents=latents,
        entry_ids=np.asarray(ids if ids is not None else range(n), dtype=np.int64),
        mask_coeffs=np.zeros((d + 1, P * P)),
    )


def test_knn_orders_by_distance():
    space = make_space([[0.0], [3.0], [1.0], [10.0]])
    rows = knn_query(space, np.array([0.9]), k=3)
    assert space.entry_ids[rows].tolist() == [2, 0, 1]


def test_knn_breaks_distance_ties_by_ascending_id():
    space = make_space([[-1.0], [1.0]], ids=[5, 3])
    rows = knn_query(space, np.array([0.0]), k=1)
    assert space.entry_ids[rows].tolist() == [3]
    rows = knn_query(space, np.array([0.0]), k=2)
    assert space.entry_ids[rows].tolist() == [3, 5]


def test_knn_k_larger_than_corpus_raises():
    space = make_space([[0.0], [1.0]])
    with pytest.raises(InsufficientCorpus):
        knn_query(space, np.array([0.0]), k=3)


def test_knn_zero_neighbors_raises():
    space = make_space([[0.0], [1.0]])
    with pytest.raises(EmptyNeighborSet):
        knn_query(space, np.array([0.0]), k=0)


def test_knn_exclusion_removes_entries():
    space = make_space([[0.0], [0.5], [2.0]], ids=[7, 8, 9])
    rows = knn_query(space, np.array([0.0]), k=1, exclude_ids={7})
    assert space.entry_ids[rows].tolist() == [8]


# --- blend weights ------------------------------------------------------------------


def test_single_neighbor_weight_is_exactly_one():
    w = solve_neighbor_weights(np.array([3.0, 1.0]), np.array([[0.0, 0.0]]))
    assert w.tolist() == [1.0]


def test_midpoint_between_two_neighbors_splits_evenly():
    w = solve_neighbor_weights(
        np.array([1.0, 0.0]), np.array([[0.0, 0.0], [2.0, 0.0]])
    )
    assert np.allclose(w, [0.5, 0.5], atol=1e-12)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_duplicate_neighbor_dominates():
    # One neighbor equals the query; the rest form a tight remote cluster.
    rng = np.random.default_rng(23)
    d = 16
    base = rng.normal(size=d) * 10
    v = base.copy()
    neighbors = np.vstack(
        [v] + [base + rng.normal(scale=0.2, size=d) + 1.0 for _ in range(9)]
    )
    w = solve_neighbor_weights(v, neighbors)
    assert w[0] >= 0.99
    blended = w @ neighbors
    assert np.linalg.norm(v - blended) <= 1e-3 * (1 + np.linalg.norm(v))


def test_weights_match_random_restart_minimizer():
    rng = np.random.default_rng(24)
    v = rng.normal(size=4)
    N = rng.normal(size=(6, 4))
    w = solve_neighbor_weights(v, N)
    _, oracle_val = reference_weights_oracle(v, N)
    ours = regularized_objective(v, N, w)
    assert ours <= oracle_val + 1e-9


def test_weights_beat_random_sum_to_one_candidates():
    rng = np.random.default_rng(25)
    for _ in range(20):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(2, 6))
        v = rng.normal(size=d) * 3
        N = rng.normal(size=(k, d)) * 3
        w = solve_neighbor_weights(v, N)
        ours = regularized_objective(v, N, w)
        cand = rng.normal(size=(2000, k))
        cand /= cand.sum(axis=1, keepdims=True)
        vals = [regularized_objective(v, N, c) for c in cand]
        assert ours <= min(vals) + 1e-9


def test_identical_neighbors_fall_back_to_uniform_weights():
    v = np.array([1.0, 2.0])
    N = np.tile(v, (4, 1))  # zero trace path
    w = solve_neighbor_weights(v, N)
    assert np.allclose(w, 0.25, atol=1e-12)


@given(
    seed=st.integers(0, 10_000),
    d=st.integers(1, 6),
    k=st.integers(1, 8),
)
@settings(max_examples=60, deadline=None)
def test_weights_always_sum_to_one(seed, d, k):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d)
    N = rng.normal(size=(k, d))
    w = solve_neighbor_weights(v, N)
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.isfinite(w))


# --- projection ----------------------------------------------------------------------


def test_projection_lands_in_neighbor_affine_hull():
    rng = np.random.default_rng(26)
    space = make_space(rng.normal(size=(12, 3)))
    res = project(space, rng.normal(size=3), k=4)
    assert isinstance(res, ProjectionResult)
    rows = [np.where(space.entry_ids == i)[0][0] for i in res.neighbor_ids]
    hull_point = res.weights @ space.latents[rows]
    assert np.allclose(hull_point, res.latent, atol=1e-12)
    assert res.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_projection_of_corpus_latent_is_near_fixed_point():
    # Corpus with tight local neighborhoods: each point's blend stays put.
    rng = np.random.default_rng(27)
    centers = rng.normal(size=(5, 8)) * 20
    latents = np.vstack([c + rng.normal(scale=0.05, size=(12, 8)) for c in centers])
    space = make_space(latents)
    for row in range(0, 60, 11):
        v = latents[row]
        res = project(space, v, k=10)
        assert np.linalg.norm(res.latent - v) <= 1e-3 * (1 + np.linalg.norm(v))


def test_projection_determinism():
    rng = np.random.default_rng(28)
    space = make_space(rng.normal(size=(20, 4)))
    v = rng.normal(size=4)
    r1 = project(space, v, k=5)
    r2 = project(space, v, k=5)
    assert r1.latent.tobytes() == r2.latent.tobytes()
    assert r1.weights.tobytes() == r2.weights.tobytes()
    assert r1.neighbor_ids == r2.neighbor_ids
    assert r1.residual == r2.residual


# --- part refinement -------------------------------------------------------------------


def test_refine_part_skips_absent_parts():
    rng = np.random.default_rng(29)
    index = build_shape_spaces(random_entries(rng, 12), latent_dim=None)
    absent = part_of(np.zeros((P, P)))
    refined, mask, res = refine_part(index, absent, k=3)
    assert refined is absent
    assert not np.any(mask)
    assert res is None


def test_refine_part_unknown_class_raises():
    rng = np.random.default_rng(30)
    index = build_shape_spaces(random_entries(rng, 12), latent_dim=None)
    arm = part_of(np.full((P, P), 0.4), PartLabel.LEFT_ARM)
    with pytest.raises(InsufficientCorpus):
        refine_part(index, arm, k=3)


def test_mirror_consistency_for_right_side_parts():
    # Refining a right arm equals mirror -> refine as left -> mirror back.
    rng = np.random.default_rng(31)
    entries = random_entries(rng, 14, label=PartLabel.LEFT_ARM)
    index = build_shape_spaces(entries, latent_dim=None)
    crop = rng.random((P, P)) * 0.8
    right = part_of(crop, PartLabel.RIGHT_ARM)
    refined_r, mask_r, res_r = refine_part(index, right, k=5)

    left_view = part_of(mirror_array(crop), PartLabel.LEFT_ARM)
    refined_l, mask_l, res_l = refine_part(index, left_view, k=5)

    assert np.array_equal(refined_r.crop.data, mirror_array(refined_l.crop.data))
    assert np.array_equal(mask_r, mirror_array(mask_l))
    assert np.allclose(res_r.latent, res_l.latent)
    assert res_r.neighbor_ids == res_l.neighbor_ids


def test_entry_ids_fold_item_and_label():
    assert entry_id_for(7, PartLabel.RIGHT_ARM) == 76
    assert entry_id_for(0, PartLabel.HAIR) == 1


def test_project_corpus_leave_one_out_excludes_self():
    rng = np.random.default_rng(32)
    entries = random_entries(rng, 10)
    index = build_shape_spaces(entries, latent_dim=None)
    space = index.spaces[ShapeClass.FACE]
    refined = project_corpus(index, entries, k=3, leave_one_out=True)
    assert set(refined) == {entry_id_for(i, PartLabel.FACE) for i in range(10)}
    # With leave-one-out the blend cannot sit exactly on the source crop.
    item0 = entries[0][1]
    v = encode(space, item0.crop.data)
    res_loo = project(space, v, k=3, exclude_ids={entry_id_for(0, PartLabel.FACE)})
    assert entry_id_for(0, PartLabel.FACE) not in res_loo.neighbor_ids


# --- assembly ------------------------------------------------------------------------


def test_assemble_priority_face_beats_hair():
    crop = np.full((4, 4), 0.5)
    mask = np.ones((4, 4))
    box = BoundingBox(0, 0, 4, 4)
    face = PartSketch(PartLabel.FACE, box, SketchRaster(crop))
    hair = PartSketch(PartLabel.HAIR, box, SketchRaster(crop * 0.2))
    sketch, labels = assemble_global([(hair, mask), (face, mask)], 4, 4)
    assert np.all(labels.data == int(PartLabel.FACE))
    # Ink still max-blends regardless of label priority.
    assert np.allclose(sketch.data, 0.5)


def test_assemble_respects_full_priority_chain():
    mask = np.ones((2, 2))
    box = BoundingBox(0, 0, 2, 2)
    parts = []
    for label in PartLabel:
        crop = np.full((2, 2), float(label) / 10.0)
        parts.append((PartSketch(label, box, SketchRaster(crop)), mask))
    _, labels = assemble_global(parts, 2, 2)
    assert np.all(labels.data == int(PartLabel.FACE))
    _, labels2 = assemble_global(
        [pm for pm in parts if pm[0].label != PartLabel.FACE], 2, 2
    )
    assert np.all(labels2.data == int(PartLabel.HAIR))


def test_assemble_disjoint_parts_keep_own_labels():
    mask = np.ones((2, 2))
    left = PartSketch(
        PartLabel.LEFT_ARM, BoundingBox(0, 0, 2, 2), SketchRaster(np.full((2, 2), 0.7))
    )
    right = PartSketch(
        PartLabel.RIGHT_ARM, BoundingBox(2, 0, 2, 2), SketchRaster(np.full((2, 2), 0.7))
    )
    sketch, labels = assemble_global([(left, mask), (right, mask)], 4, 2)
    assert np.all(labels.data[:, :2] == int(PartLabel.LEFT_ARM))
    assert np.all(labels.data[:, 2:] == int(PartLabel.RIGHT_ARM))
    assert np.allclose(sketch.data, 0.7)
