"""Dataset schema, manifest I/O, depth masking and grasp-segment discretization.

On-disk layout
--------------
A dataset is a JSON-lines manifest plus lossless raster images. The first
manifest line is a header record::

    {"resolution": 256, "max_depth_mm": 2500, "dataset_name": "..."}

and every following line describes one capture::

    {"depth_path": "...", "rgb_path": "...", "mask_path": "...",
     "category": "towel", "instance_id": 0, "segment_id": 3}

Paths are relative to the manifest's directory. Depth images are 16-bit
grayscale PNG in millimeters, RGB is 8-bit 3-channel PNG, masks are 8-bit
PNG (nonzero = garment). ``rgb_path`` may be null for depth-only datasets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DatasetError, LabelError
from .labels import (
    NUM_SEGMENTS,
    ClassLabel,
    GarmentCategory,
    GarmentInstance,
)
from .validation import ValidationReport

# Per-channel normalization applied to RGB inputs; matches the statistics the
# pretrained backbone expects. Depth is min-max scaled by the manifest's
# max_depth_mm instead.
RGB_MEAN = (0.485, 0.456, 0.406)
RGB_STD = (0.229, 0.224, 0.225)


class Modality:
    """Input channel set fed to the classifier."""

    DEPTH: "Modality"
    RGB: "Modality"
    RGBD: "Modality"

    _CHANNELS = {"depth": 1, "rgb": 3, "rgbd": 4}

    def __init__(self, kind: str):
        if kind not in self._CHANNELS:
            raise DatasetError(f"unknown modality {kind!r}; expected depth|rgb|rgbd")
        self.kind = kind

    @property
    def channel_count(self) -> int:
        return self._CHANNELS[self.kind]

    @property
    def needs_depth(self) -> bool:
        return self.kind in ("depth", "rgbd")

    @property
    def needs_rgb(self) -> bool:
        return self.kind in ("rgb", "rgbd")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Modality) and other.kind == self.kind

    def __hash__(self) -> int:
        return hash(self.kind)

    def __repr__(self) -> str:
        return f"Modality({self.kind!r})"

    def __str__(self) -> str:
        return self.kind

    @classmethod
    def from_name(cls, name: str) -> "Modality":
        return cls(name)


Modality.DEPTH = Modality("depth")
Modality.RGB = Modality("rgb")
Modality.RGBD = Modality("rgbd")


# --------------------------------------------------------------------------
# Image I/O (lossless PNG via OpenCV; arrays are RGB-ordered in memory)
# --------------------------------------------------------------------------


def read_depth_image(path: Path | str) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"cannot decode depth image {path}")
    if img.ndim != 2:
        raise DatasetError(f"depth image {path} is not single-channel")
    if img.dtype != np.uint16:
        raise DatasetError(f"depth image {path} is not 16-bit, got {img.dtype}")
    return img


def write_depth_image(path: Path | str, depth: np.ndarray) -> None:
    if depth.dtype != np.uint16 or depth.ndim != 2:
        raise DatasetError("depth image must be a 2-D uint16 array (millimeters)")
    if not cv2.imwrite(str(path), depth):
        raise DatasetError(f"failed to write depth image {path}")


def read_rgb_image(path: Path | str) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DatasetError(f"cannot decode rgb image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_rgb_image(path: Path | str, rgb: np.ndarray) -> None:
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DatasetError("rgb image must be an HxWx3 uint8 array")
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"failed to write rgb image {path}")


def read_mask_image(path: Path | str) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"cannot decode mask image {path}")
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0


def write_mask_image(path: Path | str, mask: np.ndarray) -> None:
    if mask.dtype != np.bool_ or mask.ndim != 2:
        raise DatasetError("mask must be a 2-D boolean array")
    if not cv2.imwrite(str(path), mask.astype(np.uint8) * 255):
        raise DatasetError(f"failed to write mask image {path}")


# --------------------------------------------------------------------------
# Captures
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Capture:
    """One observation of a hung garment.

    ``depth_image`` is uint16 millimeters, zero outside the mask. Label and
    instance are None only for anonymous captures fed to the pipeline;
    dataset-loaded captures always carry them.
    """

    label: ClassLabel | None
    instance: GarmentInstance | None
    depth_image: np.ndarray | None
    rgb_image: np.ndarray | None
    mask: np.ndarray

    @property
    def resolution(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]


def mask_depth(depth_image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every depth pixel outside the garment mask."""
    if depth_image.shape != mask.shape:
        raise DatasetError(
            f"depth shape {depth_image.shape} != mask shape {mask.shape}"
        )
    if not mask.any():
        raise DatasetError("mask has no true pixels (empty garment region)")
    return np.where(mask, depth_image, 0).astype(depth_image.dtype)


def mask_rgb(rgb_image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every rgb pixel outside the garment mask."""
    if rgb_image.shape[:2] != mask.shape:
        raise DatasetError(f"rgb shape {rgb_image.shape} != mask shape {mask.shape}")
    if not mask.any():
        raise DatasetError("mask has no true pixels (empty garment region)")
    return np.where(mask[..., None], rgb_image, 0).astype(rgb_image.dtype)


# --------------------------------------------------------------------------
# Grasp-segment discretization
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraspSegment:
    """One of the ten regions of a garment mask, with its grasp point.

    The grasp point is the region pixel nearest the region centroid, so it
    is guaranteed to lie inside the region even for concave shapes.
    """

    segment_id: int
    pixel_region: np.ndarray  # (H, W) boolean
    grasp_point: tuple[int, int]  # (row, col)

    @property
    def area(self) -> int:
        return int(self.pixel_region.sum())


def _balanced_assignment(
    coords: np.ndarray, centroids: np.ndarray, quotas: np.ndarray
) -> np.ndarray:
    """Assign each pixel to the nearest centroid subject to region quotas.

    Greedy over (pixel, region) pairs in increasing distance order; ties are
    broken by the stable flat order, so the result is deterministic.
    """
    n_pix, n_reg = coords.shape[0], centroids.shape[0]
    d2 = ((coords[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=None, kind="stable")
    assign = np.full(n_pix, -1, dtype=np.int64)
    remaining = quotas.copy()
    filled = 0
    for flat in order:
        p, r = divmod(int(flat), n_reg)
        if assign[p] >= 0 or remaining[r] == 0:
            continue
        assign[p] = r
        remaining[r] -= 1
        filled += 1
        if filled == n_pix:
            break
    return assign


def segment_garment(
    mask: np.ndarray, n_segments: int = NUM_SEGMENTS, iterations: int = 8
) -> list[GraspSegment]:
    """Partition a garment mask into ``n_segments`` near-equal-area regions.

    Pixels are first bucketed by a coarse 2x5 grid over the mask bounding
    box, then iteratively reassigned to the nearest region centroid under
    per-region quotas. The quotas keep every region within one pixel of
    N / n_segments, which makes the partition property easy to verify.
    """
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise DatasetError("mask must be a 2-D boolean array")
    coords = np.argwhere(mask)  # row-major order
    n_pix = coords.shape[0]
    if n_pix < n_segments:
        raise DatasetError(
            f"mask has {n_pix} pixels; at least {n_segments} required to "
            f"form {n_segments} nonempty segments"
        )

    grid_rows, grid_cols = 2, 5
    if grid_rows * grid_cols != n_segments:
        # fall back to a single strip of cells for non-default counts
        grid_rows, grid_cols = 1, n_segments

    rmin, cmin = coords.min(axis=0)
    rmax, cmax = coords.max(axis=0)
    r_extent = max(int(rmax - rmin) + 1, 1)
    c_extent = max(int(cmax - cmin) + 1, 1)
    cell_r = np.minimum((coords[:, 0] - rmin) * grid_rows // r_extent, grid_rows - 1)
    cell_c = np.minimum((coords[:, 1] - cmin) * grid_cols // c_extent, grid_cols - 1)
    assign = (cell_r * grid_cols + cell_c).astype(np.int64)

    base, rem = divmod(n_pix, n_segments)
    quotas = np.full(n_segments, base, dtype=np.int64)
    quotas[:rem] += 1

    cell_centers = np.array(
        [
            (
                rmin + (i // grid_cols + 0.5) * r_extent / grid_rows,
                cmin + (i % grid_cols + 0.5) * c_extent / grid_cols,
            )
            for i in range(n_segments)
        ]
    )

    for _ in range(iterations):
        centroids = cell_centers.copy()
        for seg in range(n_segments):
            members = coords[assign == seg]
            if len(members):
                centroids[seg] = members.mean(axis=0)
        new_assign = _balanced_assignment(coords, centroids, quotas)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    segments = []
    for seg in range(n_segments):
        members = coords[assign == seg]
        region = np.zeros_like(mask)
        region[members[:, 0], members[:, 1]] = True
        centroid = members.mean(axis=0)
        nearest = int(((members - centroid) ** 2).sum(axis=1).argmin())
        grasp = (int(members[nearest, 0]), int(members[nearest, 1]))
        segments.append(GraspSegment(seg, region, grasp))
    return segments


# --------------------------------------------------------------------------
# Modality composition
# --------------------------------------------------------------------------


def compose_modalities(
    capture: Capture, modality: Modality, max_depth_mm: float
) -> np.ndarray:
    """Stack a capture's channels for the requested modality.

    Returns float32 (C, H, W). Depth is scaled to [0, 1] by ``max_depth_mm``;
    RGB is normalized by the documented per-channel mean/std. For rgbd the
    depth plane is appended as channel 4 and equals the depth-only stack.
    """
    if max_depth_mm <= 0:
        raise DatasetError(f"max_depth_mm must be positive, got {max_depth_mm}")

    depth_stack = None
    if modality.needs_depth:
        if capture.depth_image is None:
            raise DatasetError(f"capture has no depth channel for modality {modality}")
        depth = capture.depth_image.astype(np.float32) / float(max_depth_mm)
        depth_stack = np.clip(depth, 0.0, 1.0)[None, :, :]

    rgb_stack = None
    if modality.needs_rgb:
        if capture.rgb_image is None:
            raise DatasetError(f"capture has no rgb channel for modality {modality}")
        rgb = capture.rgb_image.astype(np.float32) / 255.0
        mean = np.array(RGB_MEAN, dtype=np.float32).reshape(3, 1, 1)
        std = np.array(RGB_STD, dtype=np.float32).reshape(3, 1, 1)
        rgb_stack = (rgb.transpose(2, 0, 1) - mean) / std

    if modality.kind == "depth":
        return depth_stack
    if modality.kind == "rgb":
        return rgb_stack
    return np.concatenate([rgb_stack, depth_stack], axis=0)


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One manifest row. Label fields are kept raw so that validation can
    report bad values instead of failing the load."""

    depth_path: str
    mask_path: str
    category: str
    instance_id: int
    segment_id: int
    rgb_path: str | None = None

    @property
    def label(self) -> ClassLabel:
        return ClassLabel(GarmentCategory.from_name(self.category), self.segment_id)

    @property
    def instance(self) -> GarmentInstance:
        return GarmentInstance(GarmentCategory.from_name(self.category), self.instance_id)

    def to_record(self) -> dict:
        return {
            "depth_path": self.depth_path,
            "rgb_path": self.rgb_path,
            "mask_path": self.mask_path,
            "category": self.category,
            "instance_id": self.instance_id,
            "segment_id": self.segment_id,
        }


@dataclass
class DatasetManifest:
    root_path: Path
    dataset_name: str
    resolution: int
    max_depth_mm: float
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def counts(self) -> dict[tuple[str, int, int], int]:
        """Capture count per (category, instance_id, segment_id)."""
        out: dict[tuple[str, int, int], int] = {}
        for e in self.entries:
            key = (e.category, e.instance_id, e.segment_id)
            out[key] = out.get(key, 0) + 1
        return out

    def instances(self) -> list[GarmentInstance]:
        """Distinct instances, sorted by (category, instance_id). Raises on
        entries whose labels are invalid; validate first."""
        seen = {e.instance for e in self.entries}
        return sorted(seen, key=GarmentInstance.sort_key)

    def resolve(self, rel_path: str) -> Path:
        return self.root_path / rel_path

    def load_capture(self, entry: ManifestEntry) -> Capture:
        depth = read_depth_image(self.resolve(entry.depth_path))
        mask = read_mask_image(self.resolve(entry.mask_path))
        rgb = None
        if entry.rgb_path is not None:
            rgb = read_rgb_image(self.resolve(entry.rgb_path))
        return Capture(
            label=entry.label,
            instance=entry.instance,
            depth_image=depth,
            rgb_image=rgb,
            mask=mask,
        )


_ENTRY_KEYS = ("depth_path", "mask_path", "category", "instance_id", "segment_id")


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load and structurally check a JSON-lines manifest.

    Raises DatasetError for a missing manifest, unparseable rows or entries
    referencing files that do not exist. Semantic checks (resolution,
    label ranges, count anomalies) belong to :func:`validate_manifest`.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    root = path.parent

    lines = path.read_text(encoding="utf-8").splitlines()
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{lineno}: unparseable manifest row: {e}") from e
    if not records:
        raise DatasetError(f"manifest is empty: {path}")

    header_line, header = records[0]
    for key in ("resolution", "max_depth_mm", "dataset_name"):
        if key not in header:
            raise DatasetError(
                f"{path}:{header_line}: manifest header missing key {key!r}"
            )

    entries = []
    for lineno, rec in records[1:]:
        for key in _ENTRY_KEYS:
            if key not in rec:
                raise DatasetError(f"{path}:{lineno}: manifest row missing key {key!r}")
        try:
            entry = ManifestEntry(
                depth_path=str(rec["depth_path"]),
                rgb_path=None if rec.get("rgb_path") is None else str(rec["rgb_path"]),
                mask_path=str(rec["mask_path"]),
                category=str(rec["category"]),
                instance_id=int(rec["instance_id"]),
                segment_id=int(rec["segment_id"]),
            )
        except (TypeError, ValueError) as e:
            raise DatasetError(f"{path}:{lineno}: unparseable manifest row: {e}") from e
        for rel in (entry.depth_path, entry.rgb_path, entry.mask_path):
            if rel is not None and not (root / rel).is_file():
                raise DatasetError(
                    f"{path}:{lineno}: referenced file does not exist: {rel}"
                )
        entries.append(entry)

    return DatasetManifest(
        root_path=root,
        dataset_name=str(header["dataset_name"]),
        resolution=int(header["resolution"]),
        max_depth_mm=float(header["max_depth_mm"]),
        entries=entries,
    )


def save_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    """Write the manifest as JSON lines (header first). Returns the path."""
    path = Path(path)
    header = {
        "resolution": manifest.resolution,
        "max_depth_mm": manifest.max_depth_mm,
        "dataset_name": manifest.dataset_name,
    }
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for entry in manifest.entries:
            f.write(json.dumps(entry.to_record()) + "\n")
    return path


def validate_manifest(
    manifest: DatasetManifest, check_images: bool = True
) -> ValidationReport:
    """Report semantic violations; an empty report means a conforming dataset.

    Checks labels, per-position coverage, fold-protocol instance balance and
    (optionally) that every image decodes at the declared resolution with
    depth masked and within the declared range.
    """
    report = ValidationReport()
    if not manifest.entries:
        report.add("empty_manifest", "manifest has no capture entries")
        return report

    known = {c.value for c in GarmentCategory}
    for i, e in enumerate(manifest.entries):
        if e.category not in known:
            report.add("bad_label", f"entry {i}: unknown category {e.category!r}")
        if not 0 <= e.segment_id < NUM_SEGMENTS:
            report.add(
                "bad_label",
                f"entry {i}: segment_id {e.segment_id} outside 0..{NUM_SEGMENTS - 1}",
            )
        if e.instance_id < 0:
            report.add("bad_label", f"entry {i}: negative instance_id {e.instance_id}")

    # every (category, instance) present must cover all ten grasp positions
    counts = manifest.counts
    instances = {(c, i) for (c, i, _s) in counts}
    for cat, inst in sorted(instances):
        missing = [s for s in range(NUM_SEGMENTS) if (cat, inst, s) not in counts]
        if missing and cat in known:
            report.add(
                "count_anomaly",
                f"{cat} instance {inst} has no captures for segments {missing}",
            )

    per_cat = {}
    for cat, inst in instances:
        per_cat.setdefault(cat, set()).add(inst)
    sizes = {len(v) for v in per_cat.values()}
    if len(sizes) > 1:
        report.add(
            "uneven_instances",
            "instance counts differ across categories: "
            + ", ".join(f"{c}={len(per_cat[c])}" for c in sorted(per_cat)),
        )

    if check_images:
        for i, e in enumerate(manifest.entries):
            try:
                capture = manifest.load_capture(e)
            except (DatasetError, LabelError) as err:
                report.add("unreadable_capture", f"entry {i}: {err}")
                continue
            _check_capture(capture, manifest, i, report)
    return report


def _check_capture(
    capture: Capture, manifest: DatasetManifest, index: int, report: ValidationReport
) -> None:
    expected = (manifest.resolution, manifest.resolution)
    for name, img in (
        ("depth", capture.depth_image),
        ("mask", capture.mask),
        ("rgb", capture.rgb_image),
    ):
        if img is None:
            continue
        if img.shape[:2] != expected:
            report.add(
                "bad_resolution",
                f"entry {index}: {name} image is {img.shape[1]}x{img.shape[0]}, "
                f"declared {expected[1]}x{expected[0]}",
            )
    if capture.depth_image is not None and capture.depth_image.shape == capture.mask.shape:
        off_mask = capture.depth_image[~capture.mask]
        if off_mask.size and off_mask.any():
            report.add(
                "unmasked_depth",
                f"entry {index}: depth has nonzero pixels outside the mask",
            )
        if capture.depth_image.max(initial=0) > manifest.max_depth_mm:
            report.add(
                "depth_range",
                f"entry {index}: depth exceeds max_depth_mm={manifest.max_depth_mm}",
            )


# --------------------------------------------------------------------------
# Fingerprints
# --------------------------------------------------------------------------


def manifest_fingerprint(manifest: DatasetManifest) -> str:
    """Hash of the manifest content (header + entries), not the image bytes."""
    h = hashlib.sha256()
    h.update(
        json.dumps(
            {
                "resolution": manifest.resolution,
                "max_depth_mm": manifest.max_depth_mm,
                "dataset_name": manifest.dataset_name,
            },
            sort_keys=True,
        ).encode()
    )
    for e in manifest.entries:
        h.update(json.dumps(e.to_record(), sort_keys=True).encode())
    return h.hexdigest()


def dataset_fingerprint(manifest: DatasetManifest) -> str:
    """Hash covering the manifest and every referenced image's bytes."""
    h = hashlib.sha256()
    h.update(manifest_fingerprint(manifest).encode())
    for e in manifest.entries:
        for rel in (e.depth_path, e.rgb_path, e.mask_path):
            if rel is None:
                continue
            h.update(hashlib.sha256(manifest.resolve(rel).read_bytes()).digest())
    return h.hexdigest()
