"""Procedural hanging-garment depth captures with known grasp labels.

The drape model is a geometric heightfield, not cloth physics. A flat
silhouette pixel p grasped at g maps to the hung view as:

* vertical drop  = geodesic distance from g to p on the silhouette raster
  (4-connected wavefront), so the grasp point is always the highest point;
* image x        = the flat horizontal offset from g, contracted linearly
  with drop depth (to 0.4 of its width at the deepest drop);
* camera depth   = the flat vertical offset from g folded toward/away from
  the camera with the same contraction.

Overlapping points are resolved by a z-buffer (nearest wins). This keeps
the one property the pipeline needs: the hung appearance is a deterministic
function of the grasp location, with inter-segment differences far larger
than the per-capture jitter and sensor noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import minimum_filter

from .dataset import (
    Capture,
    DatasetManifest,
    GraspSegment,
    ManifestEntry,
    load_manifest,
    save_manifest,
    segment_garment,
    write_depth_image,
    write_mask_image,
    write_rgb_image,
)
from .errors import DatasetError
from .labels import (
    CATEGORIES,
    NUM_SEGMENTS,
    ClassLabel,
    GarmentCategory,
    GarmentInstance,
)

BASE_DEPTH_MM = 1200.0  # camera distance of the grasp point
DEFAULT_MAX_DEPTH_MM = 2500.0
MIN_CONTRACTION = 0.4  # lateral contraction at the deepest drop
GRASP_JITTER_PX = 1.0  # std of the per-capture grasp-point jitter


@dataclass(frozen=True)
class SyntheticSpec:
    categories: tuple[GarmentCategory, ...] = CATEGORIES
    instances_per_category: int = 4
    captures_per_position: int = 20
    resolution: int = 64
    noise_mm: float = 3.0
    seed: int = 0
    dataset_name: str = "synthetic"
    max_depth_mm: float = DEFAULT_MAX_DEPTH_MM

    def __post_init__(self) -> None:
        if not self.categories:
            raise DatasetError("at least one category required")
        if self.instances_per_category <= 0 or self.captures_per_position <= 0:
            raise DatasetError("instance and capture counts must be positive")
        if self.resolution < 32:
            raise DatasetError(f"resolution must be >= 32, got {self.resolution}")
        if self.noise_mm < 0:
            raise DatasetError("noise_mm must be >= 0")
        if self.seed < 0:
            raise DatasetError("seed must be >= 0")  # seed-sequence keys are unsigned

    @property
    def total_captures(self) -> int:
        return (
            len(self.categories)
            * self.instances_per_category
            * NUM_SEGMENTS
            * self.captures_per_position
        )


@dataclass(eq=False)
class GarmentSilhouette:
    """Flat 2-D outline of one garment instance, in meters, y pointing down."""

    category: GarmentCategory
    instance_id: int
    vertices: np.ndarray  # (N, 2) of (x, y)
    dimensions: dict[str, float] = field(default_factory=dict)

    @property
    def width(self) -> float:
        return float(self.vertices[:, 0].max() - self.vertices[:, 0].min())

    @property
    def height(self) -> float:
        return float(self.vertices[:, 1].max() - self.vertices[:, 1].min())


def generate_instance(
    category: GarmentCategory, instance_seed: int, instance_id: int = 0
) -> GarmentSilhouette:
    """Category-typical silhouette with seeded +-10% dimension jitter."""
    rng = np.random.default_rng(instance_seed)

    def jitter(nominal: float) -> float:
        return float(nominal * rng.uniform(0.9, 1.1))

    if category is GarmentCategory.TOWEL:
        w, h = jitter(0.60), jitter(0.45)
        verts = [(-w / 2, 0.0), (w / 2, 0.0), (w / 2, h), (-w / 2, h)]
        dims = {"width": w, "height": h}
    elif category is GarmentCategory.JEAN:
        w, h = jitter(0.44), jitter(1.00)
        leg_w = jitter(0.36) * w
        crotch = jitter(0.42) * h
        verts = [
            (-w / 2, 0.0),
            (w / 2, 0.0),
            (w / 2, h),
            (w / 2 - leg_w, h),
            (0.0, crotch),
            (-w / 2 + leg_w, h),
            (-w / 2, h),
        ]
        dims = {"width": w, "height": h, "leg_width": leg_w, "crotch": crotch}
    else:
        nominal = {
            GarmentCategory.TSHIRT: (0.46, 0.66, 0.14, 0.16),
            GarmentCategory.SHIRT: (0.50, 0.75, 0.26, 0.13),
            GarmentCategory.SWEATER: (0.56, 0.68, 0.24, 0.18),
        }[category]
        tw, h, sl, sw = (jitter(v) for v in nominal)
        sd = 0.02  # shoulder drop to the sleeve's top edge
        verts = [
            (-tw / 2, 0.0),
            (tw / 2, 0.0),
            (tw / 2, sd),
            (tw / 2 + sl, sd),
            (tw / 2 + sl, sd + sw),
            (tw / 2, sd + sw),
            (tw / 2, h),
            (-tw / 2, h),
            (-tw / 2, sd + sw),
            (-tw / 2 - sl, sd + sw),
            (-tw / 2 - sl, sd),
            (-tw / 2, sd),
        ]
        dims = {
            "torso_width": tw,
            "height": h,
            "sleeve_length": sl,
            "sleeve_width": sw,
        }
    return GarmentSilhouette(
        category=category,
        instance_id=instance_id,
        vertices=np.array(verts, dtype=np.float64),
        dimensions=dims,
    )


# --------------------------------------------------------------------------
# Rasterization and geodesic distances
# --------------------------------------------------------------------------


def rasterize_silhouette(
    silhouette: GarmentSilhouette, resolution: int
) -> tuple[np.ndarray, float]:
    """Fill the silhouette into a centered boolean grid.

    Returns (mask, meters_per_pixel); the silhouette's longer side spans
    86% of the grid.
    """
    verts = silhouette.vertices
    extent = max(silhouette.width, silhouette.height)
    if extent <= 0:
        raise DatasetError("degenerate silhouette: zero extent")
    mpp = extent / (0.86 * resolution)
    x0 = verts[:, 0].min()
    y0 = verts[:, 1].min()
    cols = (verts[:, 0] - x0) / mpp
    rows = (verts[:, 1] - y0) / mpp
    col_off = (resolution - cols.max()) / 2.0
    row_off = (resolution - rows.max()) / 2.0
    points = np.stack(
        [np.round(cols + col_off), np.round(rows + row_off)], axis=1
    ).astype(np.int32)
    canvas = np.zeros((resolution, resolution), dtype=np.uint8)
    cv2.fillPoly(canvas, [points], 1)
    mask = canvas.astype(bool)
    if not mask.any():
        raise DatasetError("degenerate silhouette: rasterized to an empty mask")
    return mask, mpp


def geodesic_distance_map(mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Integer 4-connected geodesic distances from ``start`` over the mask.

    Breadth-first wavefront; off-mask and unreachable pixels are -1.
    """
    if not mask[start]:
        raise DatasetError(f"start pixel {start} is outside the mask")
    dist = np.full(mask.shape, -1, dtype=np.int32)
    dist[start] = 0
    frontier = np.zeros_like(mask)
    frontier[start] = True
    d = 0
    grow = np.zeros_like(mask)
    while True:
        grow[:] = False
        grow[:-1, :] |= frontier[1:, :]
        grow[1:, :] |= frontier[:-1, :]
        grow[:, :-1] |= frontier[:, 1:]
        grow[:, 1:] |= frontier[:, :-1]
        nxt = grow & mask & (dist < 0)
        if not nxt.any():
            return dist
        d += 1
        dist[nxt] = d
        frontier = nxt


@dataclass(eq=False)
class RenderContext:
    """Per-instance raster data shared by all of the instance's captures."""

    flat_mask: np.ndarray
    meters_per_pixel: float
    segments: list[GraspSegment]
    hang_budget_m: float  # upper bound on the hung vertical extent


def make_render_context(
    silhouette: GarmentSilhouette, resolution: int
) -> RenderContext:
    flat_mask, mpp = rasterize_silhouette(silhouette, resolution)
    segments = segment_garment(flat_mask)
    max_d = 0
    for seg in segments:
        dist = geodesic_distance_map(flat_mask, seg.grasp_point)
        max_d = max(max_d, int(dist.max()))
    # 8% headroom so jittered grasp points stay inside the budget
    budget = max_d * mpp * 1.08
    return RenderContext(flat_mask, mpp, segments, budget)


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def render_hang(
    silhouette: GarmentSilhouette,
    segment_id: int,
    resolution: int,
    noise_mm: float,
    seed: int,
    context: RenderContext | None = None,
    max_depth_mm: float = DEFAULT_MAX_DEPTH_MM,
) -> Capture:
    """Render one capture of the garment hung from the given segment.

    Deterministic for fixed arguments: the grasp-point jitter, the depth
    noise and the flat-shade color all derive from ``seed``.
    """
    if not 0 <= segment_id < NUM_SEGMENTS:
        raise DatasetError(f"segment_id {segment_id} outside 0..{NUM_SEGMENTS - 1}")
    if context is None:
        context = make_render_context(silhouette, resolution)
    rng = np.random.default_rng(seed)

    segment = context.segments[segment_id]
    grasp = _jitter_grasp(segment, rng)

    mask = context.flat_mask
    mpp = context.meters_per_pixel
    dist = geodesic_distance_map(mask, grasp)
    reachable = dist >= 0
    rows, cols = np.nonzero(reachable)
    d_m = dist[rows, cols].astype(np.float64) * mpp

    budget = max(context.hang_budget_m, d_m.max(), 1e-6)
    hung_mpp = budget / (0.88 * resolution)
    anchor_row = max(int(round(0.05 * resolution)), 1)
    anchor_col = resolution // 2

    contraction = 1.0 - (1.0 - MIN_CONTRACTION) * (d_m / budget)
    lateral_m = (cols - grasp[1]) * mpp * contraction
    row_h = anchor_row + np.round(d_m / hung_mpp).astype(np.int64)
    col_h = anchor_col + np.round(lateral_m / hung_mpp).astype(np.int64)
    row_h = np.clip(row_h, 0, resolution - 1)
    col_h = np.clip(col_h, 0, resolution - 1)
    depth_mm = BASE_DEPTH_MM + contraction * (rows - grasp[0]) * mpp * 1000.0

    depth_img = np.full((resolution, resolution), np.inf, dtype=np.float64)
    np.minimum.at(depth_img, (row_h, col_h), depth_mm)
    footprint = np.isfinite(depth_img)

    # close single-pixel cracks left by the integer mapping
    kernel = np.ones((3, 3), dtype=np.uint8)
    closed = cv2.morphologyEx(
        footprint.astype(np.uint8), cv2.MORPH_CLOSE, kernel
    ).astype(bool)
    holes = closed & ~footprint
    if holes.any():
        neighborhood_min = minimum_filter(depth_img, size=3, mode="constant", cval=np.inf)
        depth_img[holes] = neighborhood_min[holes]
    hung_mask = np.isfinite(depth_img)

    depth_vals = depth_img[hung_mask]
    if noise_mm > 0:
        depth_vals = depth_vals + rng.normal(0.0, noise_mm, size=depth_vals.shape)
    depth_vals = np.clip(depth_vals, 1.0, max_depth_mm)
    depth_u16 = np.zeros((resolution, resolution), dtype=np.uint16)
    depth_u16[hung_mask] = np.round(depth_vals).astype(np.uint16)

    # flat shading with a per-capture random color decorrelates RGB from the
    # configuration; the silhouette is the only shape cue RGB keeps
    color = rng.integers(40, 256, size=3).astype(np.uint8)
    rgb = np.zeros((resolution, resolution, 3), dtype=np.uint8)
    rgb[hung_mask] = color

    return Capture(
        label=ClassLabel(silhouette.category, segment_id),
        instance=GarmentInstance(silhouette.category, silhouette.instance_id),
        depth_image=depth_u16,
        rgb_image=rgb,
        mask=hung_mask,
    )


def _jitter_grasp(segment: GraspSegment, rng: np.random.Generator) -> tuple[int, int]:
    """Perturb the grasp point within its segment; captures of one position
    then vary slightly, like repeated physical grasps."""
    base = segment.grasp_point
    offset = rng.normal(0.0, GRASP_JITTER_PX, size=2)
    candidate = (int(round(base[0] + offset[0])), int(round(base[1] + offset[1])))
    h, w = segment.pixel_region.shape
    if 0 <= candidate[0] < h and 0 <= candidate[1] < w:
        if segment.pixel_region[candidate]:
            return candidate
    return base


# --------------------------------------------------------------------------
# Dataset builder
# --------------------------------------------------------------------------


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def build_synthetic_dataset(spec: SyntheticSpec, out_path: Path | str) -> DatasetManifest:
    """Write images + manifest in the standard dataset layout.

    Capture counts are exact per the spec and every byte is reproducible
    from ``spec.seed``.
    """
    out_path = Path(out_path)
    out_path.mkdir(parents=True, exist_ok=True)

    entries = []
    for category in spec.categories:
        cat_dir = out_path / category.value
        cat_dir.mkdir(exist_ok=True)
        for inst in range(spec.instances_per_category):
            instance_seed = _derived_seed(spec.seed, category.index, inst)
            silhouette = generate_instance(category, instance_seed, instance_id=inst)
            context = make_render_context(silhouette, spec.resolution)
            for segment_id in range(NUM_SEGMENTS):
                for idx in range(spec.captures_per_position):
                    seed = _derived_seed(
                        spec.seed, category.index, inst, segment_id, idx
                    )
                    capture = render_hang(
                        silhouette,
                        segment_id,
                        spec.resolution,
                        spec.noise_mm,
                        seed,
                        context=context,
                        max_depth_mm=spec.max_depth_mm,
                    )
                    stem = f"{category.value}_i{inst}_s{segment_id}_{idx:03d}"
                    depth_rel = f"{category.value}/{stem}_depth.png"
                    rgb_rel = f"{category.value}/{stem}_rgb.png"
                    mask_rel = f"{category.value}/{stem}_mask.png"
                    write_depth_image(out_path / depth_rel, capture.depth_image)
                    write_rgb_image(out_path / rgb_rel, capture.rgb_image)
                    write_mask_image(out_path / mask_rel, capture.mask)
                    entries.append(
                        ManifestEntry(
                            depth_path=depth_rel,
                            rgb_path=rgb_rel,
                            mask_path=mask_rel,
                            category=category.value,
                            instance_id=inst,
                            segment_id=segment_id,
                        )
                    )

    manifest = DatasetManifest(
        root_path=out_path,
        dataset_name=spec.dataset_name,
        resolution=spec.resolution,
        max_depth_mm=spec.max_depth_mm,
        entries=entries,
    )
    manifest_path = save_manifest(manifest, out_path / "manifest.jsonl")
    return load_manifest(manifest_path)
