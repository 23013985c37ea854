from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kcflatten.dataset import (
    Capture,
    DatasetManifest,
    ManifestEntry,
    Modality,
    compose_modalities,
    load_manifest,
    manifest_fingerprint,
    mask_depth,
    read_depth_image,
    read_mask_image,
    read_rgb_image,
    save_manifest,
    segment_garment,
    validate_manifest,
    write_depth_image,
    write_mask_image,
    write_rgb_image,
)
from kcflatten.errors import DatasetError
from kcflatten.labels import ClassLabel, GarmentCategory, GarmentInstance

from conftest import memory_manifest


# ---------------------------------------------------------------- masking


def test_mask_depth_identity_under_full_mask():
    depth = np.arange(16, dtype=np.uint16).reshape(4, 4) + 1
    mask = np.ones((4, 4), dtype=bool)
    assert np.array_equal(mask_depth(depth, mask), depth)


def test_mask_depth_rejects_empty_mask():
    depth = np.ones((4, 4), dtype=np.uint16)
    with pytest.raises(DatasetError, match="no true pixels"):
        mask_depth(depth, np.zeros((4, 4), dtype=bool))


def test_mask_depth_rejects_shape_mismatch():
    with pytest.raises(DatasetError, match="shape"):
        mask_depth(np.ones((4, 4), np.uint16), np.ones((4, 5), bool))


def test_mask_depth_checkerboard_pixelwise():
    rng = np.random.default_rng(0)
    depth = rng.integers(1, 3000, size=(16, 16)).astype(np.uint16)
    mask = np.indices((16, 16)).sum(axis=0) % 2 == 0
    out = mask_depth(depth, mask)
    # independent pixel-by-pixel oracle loop
    for r in range(16):
        for c in range(16):
            expected = depth[r, c] if mask[r, c] else 0
            assert out[r, c] == expected


@settings(max_examples=25, deadline=None)
@given(
    depth=arrays(np.uint16, (12, 12), elements=st.integers(0, 4000)),
    mask_bits=arrays(np.bool_, (12, 12)),
)
def test_mask_depth_idempotent(depth, mask_bits):
    mask = mask_bits.copy()
    mask[0, 0] = True  # keep the mask nonempty
    once = mask_depth(depth, mask)
    assert np.array_equal(mask_depth(once, mask), once)


# ---------------------------------------------------------------- segmentation


def test_segment_solid_square_area_balance():
    mask = np.zeros((120, 120), dtype=bool)
    mask[10:110, 10:110] = True  # 100x100 = 10000 pixels
    segments = segment_garment(mask)
    assert len(segments) == 10
    for seg in segments:
        assert abs(seg.area - 1000) <= 10  # within 1% of mask area / 10


def test_segment_partition_property():
    mask = np.zeros((60, 60), dtype=bool)
    mask[5:50, 8:55] = True
    mask[20:30, 0:8] = True  # asymmetric appendage
    segments = segment_garment(mask)
    union = np.zeros_like(mask)
    total = 0
    for seg in segments:
        assert not (union & seg.pixel_region).any(), "segments overlap"
        union |= seg.pixel_region
        total += seg.area
    assert np.array_equal(union, mask)
    assert total == int(mask.sum())


def test_segment_grasp_point_inside_region():
    mask = np.zeros((40, 80), dtype=bool)
    mask[3:37, 5:75] = True
    for seg in segment_garment(mask):
        assert seg.pixel_region[seg.grasp_point]


def test_segment_rejects_tiny_mask():
    mask = np.zeros((10, 10), dtype=bool)
    mask[0, 0:3] = True
    with pytest.raises(DatasetError, match="at least 10"):
        segment_garment(mask)


@settings(max_examples=20, deadline=None)
@given(st.data())
def test_segment_partition_on_random_blobs(data):
    rng_seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(rng_seed)
    mask = np.zeros((32, 32), dtype=bool)
    r0, c0 = rng.integers(0, 16, size=2)
    h, w = rng.integers(8, 16, size=2)
    mask[r0 : r0 + h, c0 : c0 + w] = True
    segments = segment_garment(mask)
    union = np.zeros_like(mask)
    for seg in segments:
        assert seg.area > 0
        assert not (union & seg.pixel_region).any()
        union |= seg.pixel_region
        assert seg.pixel_region[seg.grasp_point]
    assert np.array_equal(union, mask)


# ---------------------------------------------------------------- modalities


def _capture(res: int = 32, with_rgb: bool = True) -> Capture:
    rng = np.random.default_rng(7)
    mask = np.zeros((res, res), dtype=bool)
    mask[4:-4, 4:-4] = True
    depth = np.where(mask, rng.integers(100, 2400, (res, res)), 0).astype(np.uint16)
    rgb = None
    if with_rgb:
        rgb = np.where(
            mask[..., None], rng.integers(0, 256, (res, res, 3)), 0
        ).astype(np.uint8)
    label = ClassLabel(GarmentCategory.TOWEL, 3)
    inst = GarmentInstance(GarmentCategory.TOWEL, 0)
    return Capture(label, inst, depth, rgb, mask)


def test_depth_stack_shape_and_range():
    stack = compose_modalities(_capture(), Modality.DEPTH, 2500.0)
    assert stack.shape == (1, 32, 32)
    assert stack.min() >= 0.0 and stack.max() <= 1.0


@pytest.mark.parametrize(
    "modality", [Modality.DEPTH, Modality.RGB, Modality.RGBD]
)
def test_channel_counts_match_modality(modality):
    stack = compose_modalities(_capture(), modality, 2500.0)
    assert stack.shape[0] == modality.channel_count


def test_rgbd_depth_plane_equals_depth_stack():
    cap = _capture()
    rgbd = compose_modalities(cap, Modality.RGBD, 2500.0)
    depth = compose_modalities(cap, Modality.DEPTH, 2500.0)
    assert np.array_equal(rgbd[3], depth[0])


def test_rgbd_without_rgb_channel_errors():
    cap = _capture(with_rgb=False)
    with pytest.raises(DatasetError, match="no rgb channel"):
        compose_modalities(cap, Modality.RGBD, 2500.0)


def test_unknown_modality_name_rejected():
    with pytest.raises(DatasetError, match="unknown modality"):
        Modality.from_name("thermal")


# ---------------------------------------------------------------- image io


def test_depth_png_round_trip(tmp_path):
    depth = np.random.default_rng(1).integers(0, 65535, (20, 20)).astype(np.uint16)
    path = tmp_path / "d.png"
    write_depth_image(path, depth)
    assert np.array_equal(read_depth_image(path), depth)


def test_rgb_and_mask_png_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
    mask = rng.random((20, 20)) > 0.5
    write_rgb_image(tmp_path / "c.png", rgb)
    write_mask_image(tmp_path / "m.png", mask)
    assert np.array_equal(read_rgb_image(tmp_path / "c.png"), rgb)
    assert np.array_equal(read_mask_image(tmp_path / "m.png"), mask)


# ---------------------------------------------------------------- manifest


def test_manifest_round_trip(tiny_manifest):
    # write the copy next to the images so relative paths keep resolving
    save_manifest(tiny_manifest, tiny_manifest.root_path / "copy.jsonl")
    reloaded = load_manifest(tiny_manifest.root_path / "copy.jsonl")
    assert reloaded.entries == tiny_manifest.entries
    assert reloaded.resolution == tiny_manifest.resolution
    assert reloaded.max_depth_mm == tiny_manifest.max_depth_mm
    assert manifest_fingerprint(reloaded) == manifest_fingerprint(tiny_manifest)


def test_manifest_counts(tiny_manifest):
    counts = tiny_manifest.counts
    assert len(counts) == 5 * 2 * 10
    assert all(v == 2 for v in counts.values())
    assert len(tiny_manifest.entries) == 200


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_manifest(tmp_path / "nope.jsonl")


def test_load_rejects_dangling_file_reference(tiny_manifest_path):
    lines = tiny_manifest_path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["depth_path"] = "missing/oops.png"
    bad = tiny_manifest_path.parent / "bad.jsonl"
    bad.write_text("\n".join([lines[0], json.dumps(rec)]) + "\n")
    with pytest.raises(DatasetError, match="oops.png"):
        load_manifest(bad)
    bad.unlink()


def test_load_rejects_unparseable_row(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"resolution": 64, "max_depth_mm": 2500, "dataset_name": "x"}\n'
        "this is not json\n"
    )
    with pytest.raises(DatasetError, match="unparseable"):
        load_manifest(path)


def test_load_rejects_missing_key(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        '{"resolution": 64, "max_depth_mm": 2500, "dataset_name": "x"}\n'
        '{"depth_path": "a.png"}\n'
    )
    with pytest.raises(DatasetError, match="missing key"):
        load_manifest(path)


def test_validate_clean_dataset(tiny_manifest):
    report = validate_manifest(tiny_manifest)
    assert report.ok, report.summary()


def test_validate_flags_wrong_resolution(tiny_manifest):
    # same images, but the header declares a larger resolution
    declared = DatasetManifest(
        root_path=tiny_manifest.root_path,
        dataset_name=tiny_manifest.dataset_name,
        resolution=128,
        max_depth_mm=tiny_manifest.max_depth_mm,
        entries=list(tiny_manifest.entries),
    )
    report = validate_manifest(declared, check_images=True)
    assert "bad_resolution" in report.codes()


def _swap_entry(manifest, index: int, **changes):
    old = manifest.entries[index]
    fields = old.to_record()
    fields.update(changes)
    manifest.entries[index] = ManifestEntry(**fields)


def test_validate_flags_out_of_range_segment():
    manifest = memory_manifest(instances_per_category=4)
    _swap_entry(manifest, 0, segment_id=10)
    report = validate_manifest(manifest, check_images=False)
    assert "bad_label" in report.codes()


def test_validate_flags_unknown_category():
    manifest = memory_manifest(instances_per_category=2)
    _swap_entry(manifest, 0, category="hat")
    report = validate_manifest(manifest, check_images=False)
    assert "bad_label" in report.codes()


def test_validate_accepts_uneven_counts_summing_to_real_total():
    # real-dataset-shaped: nominal 100 per position but variable, 19,269 total
    manifest = memory_manifest(instances_per_category=4, captures_per_position=96)
    # 5*4*10*96 = 19200; add 69 extra captures spread over positions
    first = manifest.entries[0]
    for i in range(69):
        manifest.entries.append(
            ManifestEntry(
                depth_path=f"extra_{i}_depth.png",
                rgb_path=f"extra_{i}_rgb.png",
                mask_path=f"extra_{i}_mask.png",
                category=first.category,
                instance_id=i % 4,
                segment_id=i % 10,
            )
        )
    assert len(manifest.entries) == 19269
    report = validate_manifest(manifest, check_images=False)
    assert report.ok, report.summary()


def test_validate_flags_missing_position():
    manifest = memory_manifest(instances_per_category=2)
    # drop all captures of (jean, instance 0, segment 7)
    manifest.entries = [
        e
        for e in manifest.entries
        if not (e.category == "jean" and e.instance_id == 0 and e.segment_id == 7)
    ]
    report = validate_manifest(manifest, check_images=False)
    assert "count_anomaly" in report.codes()
