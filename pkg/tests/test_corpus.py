"""Synthetic figure generator, disk exchange, and index persistence."""

import json
import struct

import numpy as np
import pytest
from PIL import Image

from sketchrefine.corpus import (
    BODY_PROPORTIONS,
    BOX_DILATION,
    DEFAULT_SAMPLING_LEVELS,
    INDEX_MAGIC,
    KEYPOINTS_FILE,
    LABELS_FILE,
    SKETCH_FILE,
    CorpusItem,
    FigureSpec,
    corpus_entries,
    corpus_prior,
    export_item,
    fnv1a_64,
    generate_figure,
    ingest_item,
    load_index,
    load_prior,
    prior_sidecar_path,
    sample_corpus,
    save_index,
    save_prior,
)
from sketchrefine.errors import (
    BadLabelCode,
    BadMagic,
    ChecksumFailure,
    MissingFile,
    SizeMismatch,
    SpecOutOfBounds,
    TruncatedFile,
    VersionMismatch,
)
from sketchrefine.model import CANVAS_SIZE, PartLabel
from sketchrefine.shapespace import build_shape_spaces
from sketchrefine.structure import (
    BONES,
    SHARED_JOINTS,
    shoulder_width,
    structure_energy_terms,
)

MIRROR_SWAP = {
    PartLabel.LEFT_ARM: PartLabel.RIGHT_ARM,
    PartLabel.RIGHT_ARM: PartLabel.LEFT_ARM,
    PartLabel.LEFT_LEG: PartLabel.RIGHT_LEG,
    PartLabel.RIGHT_LEG: PartLabel.LEFT_LEG,
}


def _mirror_labels(parsing: np.ndarray) -> np.ndarray:
    flipped = parsing[:, ::-1].copy()
    out = flipped.copy()
    for a, b in MIRROR_SWAP.items():
        out[flipped == int(a)] = int(b)
    return out


# --- figure generation -----------------------------------------------------------


class TestGenerateFigure:
    def test_deterministic(self):
        spec = FigureSpec(seed=11, jitter=0.2)
        a = generate_figure(spec, item_id=1)
        b = generate_figure(spec, item_id=1)
        assert np.array_equal(a.sketch.data, b.sketch.data)
        assert np.array_equal(a.parsing.data, b.parsing.data)
        for label in a.parts:
            assert np.array_equal(
                a.parts[label].crop.data, b.parts[label].crop.data
            )

    def test_seed_changes_ink_not_parsing(self):
        a = generate_figure(FigureSpec(seed=1, jitter=0.3))
        b = generate_figure(FigureSpec(seed=2, jitter=0.3))
        assert not np.array_equal(a.sketch.data, b.sketch.data)
        assert np.array_equal(a.parsing.data, b.parsing.data)

    def test_all_parts_present(self):
        item = generate_figure(FigureSpec(seed=5))
        assert set(item.parts) == set(PartLabel)
        for label, part in item.parts.items():
            assert not part.is_absent, label

    def test_ink_confined_to_labeled_pixels(self):
        item = generate_figure(FigureSpec(seed=5, jitter=0.4))
        outside = item.sketch.data[item.parsing.data == 0]
        assert np.all(outside == 0.0)

    def test_ink_on_8bit_grid(self):
        # quantizing at generation time is what makes export lossless
        ink = generate_figure(FigureSpec(seed=6)).sketch.data
        assert np.array_equal(ink, np.round(ink * 255.0) / 255.0)

    def test_figure_fits_canvas(self):
        item = generate_figure(FigureSpec(seed=5))
        ys, xs = np.nonzero(item.parsing.data)
        assert ys.min() >= 0 and ys.max() < CANVAS_SIZE
        assert xs.min() >= 0 and xs.max() < CANVAS_SIZE

    def test_boxes_cover_labeled_pixels(self):
        item = generate_figure(FigureSpec(seed=5))
        for label, part in item.parts.items():
            ys, xs = np.nonzero(item.parsing.data == int(label))
            box = part.box
            assert box.x <= xs.min() and xs.max() <= box.x + box.w
            assert box.y <= ys.min() and ys.max() <= box.y + box.h
            # and the box is the 8%-dilated tight bounds, not something looser
            assert box.w <= (xs.max() - xs.min() + 1) * (1 + 2 * BOX_DILATION) + 1e-9

    def test_mirror_symmetric_ink_without_jitter(self):
        ink = generate_figure(FigureSpec(seed=3, translate_x=0.0, jitter=0.0)).sketch.data
        assert np.array_equal(ink, ink[:, ::-1])

    def test_mirror_symmetric_parsing_even_with_jitter(self):
        parsing = generate_figure(
            FigureSpec(seed=3, translate_x=0.0, jitter=0.4)
        ).parsing.data
        assert np.array_equal(parsing, _mirror_labels(parsing))

    def test_left_right_crops_mirror(self):
        item = generate_figure(FigureSpec(seed=3, translate_x=0.0, jitter=0.0))
        left = item.parts[PartLabel.LEFT_ARM].crop.data
        right = item.parts[PartLabel.RIGHT_ARM].crop.data
        assert np.allclose(left, right[:, ::-1], atol=1e-12)

    def test_head_keypoints_exact(self):
        spec = FigureSpec(seed=0, translate_x=4.0, top_y=10.0, head_radius=16.0)
        kps = generate_figure(spec).keypoints
        face = kps[PartLabel.FACE]
        joints = {j.value: p for j, p in face.joints.items()}
        assert joints["HeadTop"] == (131.5, 10.0)
        assert joints["Neck"] == (131.5, 42.0)

    def test_shoulder_width_equals_torso_width(self):
        spec = FigureSpec(seed=0, torso_width=56.0)
        kps = generate_figure(spec).keypoints
        assert shoulder_width(kps) == 56.0

    def test_shared_joints_exactly_equal(self):
        kps = generate_figure(FigureSpec(seed=8)).keypoints
        for joint, label_a, label_b in SHARED_JOINTS:
            assert kps[label_a].joints[joint] == kps[label_b].joints[joint]

    def test_connectivity_energy_zero(self):
        items = sample_corpus(4, master_seed=3)
        prior = corpus_prior(items)
        for item in items:
            terms = structure_energy_terms(item.keypoints, prior)
            assert terms.connectivity == 0.0

    def test_proportions_within_three_sigma(self):
        items = sample_corpus(60, master_seed=9)
        prior = corpus_prior(items)
        for item in items:
            ref = shoulder_width(item.keypoints)
            for label, j1, j2 in BONES:
                if (label, j1, j2) not in prior.ratios:
                    continue
                kp = item.keypoints.get(label)
                if kp is None or j1 not in kp.joints or j2 not in kp.joints:
                    continue
                p1 = np.asarray(kp.joints[j1])
                p2 = np.asarray(kp.joints[j2])
                ratio = float(np.linalg.norm(p1 - p2)) / ref
                mean, std = prior.ratios[(label, j1, j2)]
                if std == 0.0:
                    assert ratio == pytest.approx(mean, abs=1e-12)
                else:
                    assert abs(ratio - mean) <= 3.0 * std

    def test_out_of_bounds_spec_rejected(self):
        with pytest.raises(SpecOutOfBounds):
            FigureSpec(seed=0, head_radius=7.0)
        with pytest.raises(SpecOutOfBounds):
            FigureSpec(seed=0, jitter=2.6)
        with pytest.raises(SpecOutOfBounds):
            FigureSpec(seed=0, translate_x=-31.0)


# --- corpus sampling -----------------------------------------------------------


class TestSampleCorpus:
    def test_deterministic(self):
        a = sample_corpus(6, master_seed=77)
        b = sample_corpus(6, master_seed=77)
        for x, y in zip(a, b):
            assert x.spec == y.spec
            assert np.array_equal(x.sketch.data, y.sketch.data)

    def test_master_seed_changes_draws(self):
        a = sample_corpus(6, master_seed=1)
        b = sample_corpus(6, master_seed=2)
        assert any(x.spec != y.spec for x, y in zip(a, b))

    def test_item_ids_sequential(self):
        items = sample_corpus(5, master_seed=0)
        assert [it.item_id for it in items] == [0, 1, 2, 3, 4]

    def test_zero_items(self):
        assert sample_corpus(0, master_seed=0) == []

    def test_values_on_lattice(self):
        for item in sample_corpus(8, master_seed=4):
            for field, levels in DEFAULT_SAMPLING_LEVELS.items():
                assert getattr(item.spec, field) in levels

    def test_lengths_follow_torso_width(self):
        for item in sample_corpus(8, master_seed=4):
            for field, ratio in BODY_PROPORTIONS.items():
                assert getattr(item.spec, field) == item.spec.torso_width * ratio

    def test_family_cells_balanced(self):
        items = sample_corpus(200, master_seed=5)
        counts = {}
        for it in items:
            key = (
                it.spec.torso_width,
                it.spec.shoulder_angle_deg,
                it.spec.elbow_flex_deg,
                it.spec.knee_angle_deg,
            )
            counts[key] = counts.get(key, 0) + 1
        n_cells = (
            len(DEFAULT_SAMPLING_LEVELS["torso_width"])
            * len(DEFAULT_SAMPLING_LEVELS["shoulder_angle_deg"])
            * len(DEFAULT_SAMPLING_LEVELS["elbow_flex_deg"])
            * len(DEFAULT_SAMPLING_LEVELS["knee_angle_deg"])
        )
        assert len(counts) == n_cells
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_bounds_override_continuous(self):
        items = sample_corpus(12, master_seed=6, bounds={"jitter": (0.21, 0.29)})
        values = {it.spec.jitter for it in items}
        assert all(0.21 <= v <= 0.29 for v in values)
        assert len(values) == len(items)  # continuous draws, all distinct
        # non-overridden fields stay on the lattice / at fixed proportions
        for it in items:
            assert it.spec.torso_width in DEFAULT_SAMPLING_LEVELS["torso_width"]
            expected_radius = it.spec.torso_width * BODY_PROPORTIONS["head_radius"]
            assert it.spec.head_radius == expected_radius

    def test_bounds_can_override_proportioned_field(self):
        items = sample_corpus(
            6, master_seed=6, bounds={"head_radius": (20.0, 22.0)}
        )
        radii = {it.spec.head_radius for it in items}
        assert all(20.0 <= r <= 22.0 for r in radii)
        assert len(radii) == len(items)

    def test_unknown_bounds_field_rejected(self):
        with pytest.raises(SpecOutOfBounds):
            sample_corpus(1, master_seed=0, bounds={"wingspan": (0.0, 1.0)})

    def test_entries_cover_all_parts(self):
        items = sample_corpus(3, master_seed=1)
        entries = corpus_entries(items)
        assert len(entries) == 3 * len(PartLabel)
        for item_id, part, mask in entries:
            assert mask.shape == part.crop.data.shape


# --- disk exchange ---------------------------------------------------------------


class TestExportIngest:
    def test_round_trip_exact(self, tmp_path):
        item = generate_figure(FigureSpec(seed=21, jitter=0.2), item_id=4)
        export_item(item, tmp_path / "item")
        back = ingest_item(tmp_path / "item", item_id=4)

        assert np.array_equal(back.parsing.data, item.parsing.data)
        assert np.array_equal(back.sketch.data, item.sketch.data)
        assert set(back.parts) == set(item.parts)
        for label in item.parts:
            assert back.parts[label].box == item.parts[label].box
            assert np.array_equal(
                back.parts[label].crop.data, item.parts[label].crop.data
            )
        assert back.keypoints == item.keypoints
        assert back.provenance.startswith("ingested:")

    def test_export_file_conventions(self, tmp_path):
        item = generate_figure(FigureSpec(seed=21))
        export_item(item, tmp_path / "d")
        with Image.open(tmp_path / "d" / SKETCH_FILE) as img:
            assert img.mode == "L"
            arr = np.asarray(img)
        # blank canvas is white (255), ink is dark
        assert arr[0, 0] == 255
        assert arr.min() < 64
        with Image.open(tmp_path / "d" / LABELS_FILE) as img:
            assert img.mode == "P"
            codes = np.asarray(img)
        assert set(np.unique(codes)) <= set(range(9))
        payload = json.loads((tmp_path / "d" / KEYPOINTS_FILE).read_text())
        labels = [entry["label"] for entry in payload["parts"]]
        assert labels == [
            "Hair", "Face", "TopClothes", "BottomClothes",
            "LeftArm", "RightArm", "LeftLeg", "RightLeg",
        ]

    def test_missing_files(self, tmp_path):
        with pytest.raises(MissingFile):
            ingest_item(tmp_path / "nowhere")
        d = tmp_path / "partial"
        d.mkdir()
        Image.fromarray(np.full((8, 8), 255, np.uint8), "L").save(d / SKETCH_FILE)
        with pytest.raises(MissingFile):
            ingest_item(d)

    def test_size_mismatch(self, tmp_path):
        d = tmp_path / "d"
        d.mkdir()
        Image.fromarray(np.full((16, 16), 255, np.uint8), "L").save(d / SKETCH_FILE)
        Image.fromarray(np.zeros((8, 8), np.uint8), "P").save(d / LABELS_FILE)
        with pytest.raises(SizeMismatch):
            ingest_item(d)

    def test_invalid_label_code_named(self, tmp_path):
        d = tmp_path / "d"
        d.mkdir()
        Image.fromarray(np.full((16, 16), 255, np.uint8), "L").save(d / SKETCH_FILE)
        labels = np.zeros((16, 16), np.uint8)
        labels[2:5, 2:5] = 9
        img = Image.fromarray(labels, "P")
        img.putpalette([0] * 768)  # full palette stops PIL remapping indices
        img.save(d / LABELS_FILE)
        with pytest.raises(BadLabelCode) as exc:
            ingest_item(d)
        assert "9" in str(exc.value)
        assert "9 pixel(s)" in str(exc.value)

    def test_rgb_labels_rejected(self, tmp_path):
        d = tmp_path / "d"
        d.mkdir()
        Image.fromarray(np.full((16, 16), 255, np.uint8), "L").save(d / SKETCH_FILE)
        Image.fromarray(np.zeros((16, 16, 3), np.uint8), "RGB").save(d / LABELS_FILE)
        with pytest.raises(BadLabelCode):
            ingest_item(d)

    def test_missing_keypoints_extracted(self, tmp_path):
        item = generate_figure(FigureSpec(seed=21))
        export_item(item, tmp_path / "d")
        (tmp_path / "d" / KEYPOINTS_FILE).unlink()
        back = ingest_item(tmp_path / "d")
        assert back.provenance.endswith(";keypoints=extracted")
        assert set(back.keypoints) == set(back.parts)

    def test_unknown_joint_name_rejected(self, tmp_path):
        item = generate_figure(FigureSpec(seed=21))
        export_item(item, tmp_path / "d")
        payload = json.loads((tmp_path / "d" / KEYPOINTS_FILE).read_text())
        payload["parts"][0]["joints"]["Antenna"] = [1.0, 2.0]
        (tmp_path / "d" / KEYPOINTS_FILE).write_text(json.dumps(payload))
        with pytest.raises(BadLabelCode):
            ingest_item(tmp_path / "d")


# --- index persistence -----------------------------------------------------------


def _small_index():
    items = sample_corpus(12, master_seed=31)
    return build_shape_spaces(corpus_entries(items), latent_dim=6), items


class TestFnv1a:
    def test_known_vectors(self):
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a_64(b"foobar") == 0x85944171F73967E8


class TestIndexPersistence:
    def test_save_load_round_trip(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "corpus.frix"
        save_index(index, path)
        loaded, prior = load_index(path)
        assert prior is None
        assert set(loaded.spaces) == set(index.spaces)
        for cls, space in index.spaces.items():
            got = loaded.spaces[cls]
            assert np.array_equal(got.entry_ids, space.entry_ids)
            assert np.array_equal(got.mean, space.mean)
            assert np.array_equal(got.basis, space.basis)
            assert np.array_equal(got.latents, space.latents)
            assert np.array_equal(got.mask_coeffs, space.mask_coeffs)

    def test_resave_bit_identical(self, tmp_path):
        index, _ = _small_index()
        p1, p2 = tmp_path / "a.frix", tmp_path / "b.frix"
        save_index(index, p1)
        loaded, _ = load_index(p1)
        save_index(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_and_prefix(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        assert path.read_bytes()[:4] == INDEX_MAGIC

    def test_load_missing(self, tmp_path):
        with pytest.raises(MissingFile):
            load_index(tmp_path / "absent.frix")

    def test_bad_magic(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"JUNK"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            load_index(path)

    def test_version_mismatch_names_versions(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch) as exc:
            load_index(path)
        assert "9" in str(exc.value) and "1" in str(exc.value)

    def test_corrupted_payload_fails_checksum(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        blob = bytearray(path.read_bytes())
        blob[100] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumFailure):
            load_index(path)

    def test_truncations(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        blob = path.read_bytes()
        for cut in (2, 10, len(blob) // 2, len(blob) - 3):
            path.write_bytes(blob[:cut])
            with pytest.raises(TruncatedFile):
                load_index(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(TruncatedFile):
            load_index(path)

    def test_unknown_class_code(self, tmp_path):
        index, _ = _small_index()
        path = tmp_path / "c.frix"
        save_index(index, path)
        blob = bytearray(path.read_bytes())
        # first class header directly follows magic+version+count
        blob[12:16] = struct.pack("<I", 42)
        payload = bytes(blob[8:-8])
        blob[-8:] = struct.pack("<Q", fnv1a_64(payload))
        path.write_bytes(bytes(blob))
        with pytest.raises(BadLabelCode):
            load_index(path)


class TestPriorSidecar:
    def test_round_trip(self, tmp_path):
        items = sample_corpus(8, master_seed=13)
        prior = corpus_prior(items)
        path = tmp_path / "corpus.frix.prior.json"
        save_prior(prior, path)
        assert load_prior(path).ratios == prior.ratios

    def test_saved_alongside_index(self, tmp_path):
        index, items = _small_index()
        prior = corpus_prior(items)
        path = tmp_path / "c.frix"
        save_index(index, path, prior=prior)
        sidecar = prior_sidecar_path(path)
        assert sidecar.is_file()
        loaded_index, loaded_prior = load_index(path)
        assert loaded_prior is not None
        assert loaded_prior.ratios == prior.ratios

    def test_load_missing_prior(self, tmp_path):
        with pytest.raises(MissingFile):
            load_prior(tmp_path / "absent.prior.json")
