from __future__ import annotations

from pathlib import Path

import pytest

from kcflatten.dataset import DatasetManifest, ManifestEntry, load_manifest
from kcflatten.labels import CATEGORIES
from kcflatten.synthgen import SyntheticSpec, build_synthetic_dataset


def entries_for(
    instances_per_category: int,
    segments: int = 10,
    captures_per_position: int = 1,
    categories=CATEGORIES,
) -> list[ManifestEntry]:
    """In-memory manifest entries with fake paths, for protocol-level tests
    that never touch image files."""
    entries = []
    for cat in categories:
        for inst in range(instances_per_category):
            for seg in range(segments):
                for idx in range(captures_per_position):
                    stem = f"{cat.value}_i{inst}_s{seg}_{idx}"
                    entries.append(
                        ManifestEntry(
                            depth_path=f"{stem}_depth.png",
                            rgb_path=f"{stem}_rgb.png",
                            mask_path=f"{stem}_mask.png",
                            category=cat.value,
                            instance_id=inst,
                            segment_id=seg,
                        )
                    )
    return entries


def memory_manifest(
    instances_per_category: int = 4,
    segments: int = 10,
    captures_per_position: int = 1,
    categories=CATEGORIES,
) -> DatasetManifest:
    return DatasetManifest(
        root_path=Path("/nonexistent"),
        dataset_name="in-memory",
        resolution=256,
        max_depth_mm=2500.0,
        entries=entries_for(
            instances_per_category, segments, captures_per_position, categories
        ),
    )


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory) -> "DatasetManifest":
    """Small real synthetic dataset: 5 categories x 2 instances x 10 segments
    x 2 captures at 48 px. Shared read-only across the suite."""
    out = tmp_path_factory.mktemp("tiny_ds")
    spec = SyntheticSpec(
        instances_per_category=2,
        captures_per_position=2,
        resolution=48,
        noise_mm=3.0,
        seed=101,
        dataset_name="tiny",
    )
    return build_synthetic_dataset(spec, out)


@pytest.fixture(scope="session")
def tiny_manifest_path(tiny_manifest) -> Path:
    return tiny_manifest.root_path / "manifest.jsonl"
