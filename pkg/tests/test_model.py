"""Core geometry: labels, rasters, boxes, affine algebra, warps, crops."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from sketchrefine.errors import BadLabelCode, DimensionMismatch, SingularTransform
from sketchrefine.model import (
    AffineTransform2D,
    BoundingBox,
    PARSING_PRIORITY,
    ParsingMap,
    PartLabel,
    PartSketch,
    ShapeClass,
    SketchRaster,
    box_to_canvas,
    crop_array,
    crop_resample,
    label_from_token,
    mirror_array,
    paste_crop,
    paste_max_array,
    paste_mask_labels,
    shape_class_of,
    warp_array,
    warp_labels,
    warp_raster,
)

finite_coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
# Linear parts bounded away from singularity for group-law tests.
linear_part = st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3)


def random_raster(rng, w=16, h=16):
    return SketchRaster(rng.random((h, w)))


# --- labels -------------------------------------------------------------------


def test_eight_part_labels_with_stable_codes():
    assert [int(l) for l in PartLabel] == [1, 2, 3, 4, 5, 6, 7, 8]
    assert PartLabel.HAIR.token == "Hair"
    assert label_from_token("RightLeg") is PartLabel.RIGHT_LEG
    with pytest.raises(BadLabelCode):
        label_from_token("Torso")


def test_shape_classes_fold_right_side_onto_left():
    assert shape_class_of(PartLabel.LEFT_ARM) == (ShapeClass.ARM, False)
    assert shape_class_of(PartLabel.RIGHT_ARM) == (ShapeClass.ARM, True)
    assert shape_class_of(PartLabel.LEFT_LEG) == (ShapeClass.LEG, False)
    assert shape_class_of(PartLabel.RIGHT_LEG) == (ShapeClass.LEG, True)
    # Six distinct classes overall.
    classes = {shape_class_of(l)[0] for l in PartLabel}
    assert len(classes) == 6


def test_parsing_priority_covers_every_label_once():
    assert sorted(PARSING_PRIORITY) == sorted(PartLabel)
    assert PARSING_PRIORITY[0] is PartLabel.FACE
    assert PARSING_PRIORITY[-1] is PartLabel.BOTTOM_CLOTHES


# --- containers ---------------------------------------------------------------


def test_raster_rejects_out_of_range_values():
    with pytest.raises(DimensionMismatch):
        SketchRaster(np.array([[0.0, 1.5]]))
    with pytest.raises(DimensionMismatch):
        SketchRaster(np.array([[np.nan]]))


def test_raster_is_immutable():
    r = SketchRaster.blank(4, 4)
    with pytest.raises(ValueError):
        r.data[0, 0] = 1.0


def test_parsing_map_rejects_bad_codes():
    with pytest.raises(DimensionMismatch):
        ParsingMap(np.array([[9]], dtype=np.uint8))


def test_box_requires_positive_extent():
    with pytest.raises(DimensionMismatch):
        BoundingBox(0, 0, 0, 5)


def test_box_dilation_keeps_center():
    b = BoundingBox(10, 20, 50, 100).dilated(0.08)
    assert b.w == pytest.approx(54.0)
    assert b.h == pytest.approx(108.0)
    assert b.x + b.w / 2 == pytest.approx(35.0)
    assert b.y + b.h / 2 == pytest.approx(70.0)


def test_part_sketch_requires_square_crop_and_flags_absence():
    with pytest.raises(DimensionMismatch):
        PartSketch(PartLabel.FACE, BoundingBox(0, 0, 1, 1), SketchRaster.blank(3, 4))
    p = PartSketch(PartLabel.FACE, BoundingBox(0, 0, 1, 1), SketchRaster.blank(4, 4))
    assert p.is_absent
    inked = SketchRaster(np.eye(4) * 0.5)
    assert not PartSketch(PartLabel.FACE, p.box, inked).is_absent


# --- affine algebra -----------------------------------------------------------


def test_scale_then_translate_composite():
    scale = AffineTransform2D.scaling(2.0)
    shift = AffineTransform2D.translation(2.0, 3.0)
    composite = shift.compose(scale)  # scale first, then translate
    assert composite.apply(np.array([1.0, 1.0])) == pytest.approx([4.0, 5.0])


def test_rotation_quarter_turn():
    r = AffineTransform2D.rotation(90.0)
    assert r.apply(np.array([1.0, 0.0])) == pytest.approx([0.0, 1.0], abs=1e-12)


def test_invert_unit_shear():
    shear = AffineTransform2D(1.0, 1.0, 0.0, 0.0, 1.0, 0.0)
    inv = shear.invert()
    assert inv.as_matrix() == pytest.approx(
        np.array([[1.0, -1.0, 0.0], [0.0, 1.0, 0.0]])
    )


def test_singular_transform_raises():
    t = AffineTransform2D(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)  # rank-1 linear part
    assert not t.is_invertible
    with pytest.raises(SingularTransform):
        t.invert()


def test_identity_distance_examples():
    assert AffineTransform2D.identity().identity_distance() == 0.0
    assert AffineTransform2D.translation(3.0, 4.0).identity_distance() == pytest.approx(
        5.0
    )
    assert AffineTransform2D.scaling(2.0).identity_distance() == pytest.approx(
        math.sqrt(2.0)
    )


@given(
    a=linear_part, b=finite_coord, c=finite_coord, d=linear_part,
    tx=finite_coord, ty=finite_coord, px=finite_coord, py=finite_coord,
)
@settings(max_examples=60)
def test_invert_round_trips_points(a, b, c, d, tx, ty, px, py):
    t = AffineTransform2D(a, b / 10, tx, c / 10, d, ty)
    if not t.is_invertible:
        return
    p = np.array([px, py])
    back = t.invert().apply(t.apply(p))
    assert np.allclose(back, p, atol=1e-6 * (1 + np.abs(p).max()))


@given(
    data=st.tuples(*([linear_part] * 4), finite_coord, finite_coord),
    data2=st.tuples(*([linear_part] * 4), finite_coord, finite_coord),
    px=finite_coord,
    py=finite_coord,
)
@settings(max_examples=60)
def test_compose_matches_sequential_application(data, data2, px, py):
    t1 = AffineTransform2D(data[0], data[1] / 10, data[4], data[2] / 10, data[3], data[5])
    t2 = AffineTransform2D(data2[0], data2[1] / 10, data2[4], data2[2] / 10, data2[3], data2[5])
    p = np.array([px, py])
    lhs = t1.compose(t2).apply(p)
    rhs = t1.apply(t2.apply(p))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_rotation_about_center_fixes_center():
    r = AffineTransform2D.rotation(37.0, center=(12.0, -3.0))
    assert r.apply(np.array([12.0, -3.0])) == pytest.approx([12.0, -3.0])


# --- warps ---------------------------------------------------------------------


def test_warp_identity_is_bit_exact():
    rng = np.random.default_rng(0)
    src = random_raster(rng)
    out = warp_raster(src, AffineTransform2D.identity())
    assert np.array_equal(out.data, src.data)


def test_warp_integer_translation_shifts_and_fills():
    rng = np.random.default_rng(1)
    src = random_raster(rng, 8, 8)
    out = warp_raster(src, AffineTransform2D.translation(5.0, 0.0), fill=0.25)
    assert np.array_equal(out.data[:, 5:], src.data[:, :3])
    assert np.all(out.data[:, :5] == 0.25)


def test_warp_quarter_turn_about_center_permutes_pixels():
    # Hand-derived oracle: output pixel (x, y) reads the source at the
    # inverse rotation about (1, 1), i.e. source point (y, 2 - x).
    src_arr = np.arange(9, dtype=np.float64).reshape(3, 3) / 10.0
    src = SketchRaster(src_arr)
    out = warp_raster(src, AffineTransform2D.rotation(90.0, center=(1.0, 1.0)))
    expected = np.empty((3, 3))
    for y in range(3):
        for x in range(3):
            expected[y, x] = src_arr[2 - x, y]
    assert np.allclose(out.data, expected, atol=1e-12)


def test_warp_matches_scipy_map_coordinates():
    # Independent resampling oracle for a generic affine map.
    rng = np.random.default_rng(2)
    src = rng.random((24, 24))
    t = AffineTransform2D.rotation(30.0, center=(10.0, 12.0)).compose(
        AffineTransform2D.scaling(1.3, 0.8, center=(5.0, 5.0))
    )
    out = warp_array(src, t, 24, 24, 0.0, "bilinear")
    inv = t.invert()
    xs, ys = np.meshgrid(np.arange(24.0), np.arange(24.0))
    sx = inv.a * xs + inv.b * ys + inv.tx
    sy = inv.c * xs + inv.d * ys + inv.ty
    oracle = ndimage.map_coordinates(
        src, [sy.ravel(), sx.ravel()], order=1, mode="grid-constant", cval=0.0
    ).reshape(24, 24)
    assert np.allclose(out, oracle, atol=1e-9)


def test_warp_preserves_value_range():
    rng = np.random.default_rng(3)
    src = random_raster(rng, 20, 20)
    t = AffineTransform2D.rotation(33.0, center=(10, 10)).compose(
        AffineTransform2D.scaling(0.7, 1.4, center=(3, 3))
    )
    out = warp_raster(src, t, fill=0.5)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_warp_labels_nearest_keeps_codes():
    src = ParsingMap(np.array([[1, 2], [3, 4]], dtype=np.uint8))
    out = warp_labels(src, AffineTransform2D.translation(1.0, 0.0), fill=0)
    assert out.data.tolist() == [[0, 1], [0, 3]]
    # Nearest sampling never invents codes.
    rot = warp_labels(src, AffineTransform2D.rotation(45.0, center=(0.5, 0.5)))
    assert set(np.unique(rot.data)) <= {0, 1, 2, 3, 4}


# --- crops ---------------------------------------------------------------------


def test_full_canvas_crop_is_identity_copy():
    rng = np.random.default_rng(4)
    src = random_raster(rng, 16, 16)
    box = BoundingBox(0.0, 0.0, 16.0, 16.0)
    out = crop_resample(src, box, 16)
    assert np.array_equal(out.data, src.data)


def test_box_to_canvas_maps_crop_centers():
    box = BoundingBox(10.0, 20.0, 32.0, 64.0)
    t = box_to_canvas(box, 16)
    # First crop pixel center maps to one half-cell inside the box.
    assert t.apply(np.array([0.0, 0.0])) == pytest.approx([10.5, 21.5])
    # Last crop pixel center maps one half-cell before the box end.
    assert t.apply(np.array([15.0, 15.0])) == pytest.approx([40.5, 81.5])


def test_crop_then_paste_round_trip_on_aligned_box():
    rng = np.random.default_rng(5)
    src = random_raster(rng, 32, 32)
    box = BoundingBox(4.0, 6.0, 12.0, 12.0)
    crop = crop_resample(src, box, 12)
    pasted = paste_crop(SketchRaster.blank(32, 32), crop, box)
    assert np.allclose(pasted.data[6:18, 4:16], src.data[6:18, 4:16], atol=1e-6)
    # Nothing is written outside the box.
    outside = np.array(pasted.data)
    outside[6:18, 4:16] = 0.0
    assert np.all(outside == 0.0)


def test_paste_is_max_blend():
    canvas = SketchRaster(np.full((8, 8), 0.6))
    crop = SketchRaster(np.full((4, 4), 0.3))
    out = paste_crop(canvas, crop, BoundingBox(2, 2, 4, 4))
    assert np.all(out.data == 0.6)  # lower ink never erases higher ink


def test_paste_clips_out_of_canvas_box():
    crop = SketchRaster(np.ones((4, 4)))
    out = paste_crop(SketchRaster.blank(8, 8), crop, BoundingBox(-2.0, -2.0, 4.0, 4.0))
    assert out.data[0, 0] == pytest.approx(1.0)
    assert np.all(out.data[4:, :] == 0.0) and np.all(out.data[:, 4:] == 0.0)


def test_crop_array_nearest_mode_keeps_dtype_values():
    labels = np.zeros((16, 16), dtype=np.uint8)
    labels[4:8, 4:8] = 7
    out = crop_array(labels, BoundingBox(4, 4, 4, 4), 4, mode="nearest")
    assert np.all(out == 7)


def test_paste_mask_labels_overwrites_in_call_order():
    labels = np.zeros((8, 8), dtype=np.uint8)
    mask = np.ones((4, 4))
    labels = paste_mask_labels(labels, mask, BoundingBox(0, 0, 4, 4), 3)
    labels = paste_mask_labels(labels, mask, BoundingBox(2, 2, 4, 4), 5)
    assert labels[1, 1] == 3
    assert labels[3, 3] == 5  # later paste wins where masks overlap
    assert labels[7, 7] == 0


def test_mirror_is_an_involution():
    rng = np.random.default_rng(6)
    arr = rng.random((5, 9))
    assert np.array_equal(mirror_array(mirror_array(arr)), arr)


def test_upscaling_paste_matches_scipy_oracle():
    # Single part with a canvas-sized box: the global map is the crop
    # upsampled to the canvas; checked against an independent resampler.
    rng = np.random.default_rng(7)
    crop = rng.random((8, 8))
    box = BoundingBox(0.0, 0.0, 32.0, 32.0)
    pasted = paste_max_array(np.zeros((32, 32)), crop, box)
    inv = box_to_canvas(box, 8).invert()
    xs, ys = np.meshgrid(np.arange(32.0), np.arange(32.0))
    oracle = ndimage.map_coordinates(
        crop,
        [(inv.c * xs + inv.d * ys + inv.ty).ravel(), (inv.a * xs + inv.b * ys + inv.tx).ravel()],
        order=1,
        mode="grid-constant",
        cval=0.0,
    ).reshape(32, 32)
    assert np.allclose(pasted, oracle, atol=1e-9)
