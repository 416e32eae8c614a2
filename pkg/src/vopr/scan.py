"""Imitate omnidirectional range scans from keyframe point streams.

A rolling cache accumulates keyframe points in the world frame; for each
keyframe the points within the scan range are re-expressed in that
keyframe's camera frame, then thinned either per polar ray (keep the
closest point) or per voxel (keep the centroid).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import ConfigError, DataFormatError
from .ingest import Keyframe, PointCloud
from .geometry import RigidTransform

FILTER_KINDS = ("polar", "voxel")


@dataclass(frozen=True)
class LocalPointCache:
    """World-frame points from recent keyframes, bounded by an eviction radius."""

    positions: np.ndarray  # (N, 3) world frame
    intensities: np.ndarray  # (N,)
    source_ids: np.ndarray  # (N,) id of the keyframe that contributed each point
    last_pose: RigidTransform | None
    last_id: int | None

    @classmethod
    def empty(cls) -> "LocalPointCache":
        return cls(
            np.empty((0, 3)),
            np.empty((0,), dtype=np.uint8),
            np.empty((0,), dtype=np.int64),
            None,
            None,
        )

    def __len__(self) -> int:
        return self.positions.shape[0]


def update_cache(cache: LocalPointCache, kf: Keyframe, eviction_radius: float) -> LocalPointCache:
    """Append kf's points (world frame), then drop points beyond eviction_radius of kf."""
    if cache.last_id is not None and kf.id <= cache.last_id:
        raise DataFormatError(
            f"keyframe {kf.id} arrived out of order (cache already at {cache.last_id})"
        )
    world = kf.pose.transform(kf.points.positions) if len(kf.points) else np.empty((0, 3))
    positions = np.vstack([cache.positions, world])
    intensities = np.concatenate([cache.intensities, kf.points.intensities])
    source_ids = np.concatenate(
        [cache.source_ids, np.full(len(kf.points), kf.id, dtype=np.int64)]
    )
    origin = kf.pose.translation
    keep = np.linalg.norm(positions - origin, axis=1) <= eviction_radius
    return LocalPointCache(
        positions[keep], intensities[keep], source_ids[keep], kf.pose, kf.id
    )


def imitate_scan(cache: LocalPointCache, current: Keyframe, scan_range: float) -> PointCloud:
    """Cached points within scan_range of the current keyframe, in its camera frame."""
    if scan_range <= 0:
        raise ConfigError(f"scan range must be positive, got {scan_range}")
    if len(cache) == 0:
        return PointCloud.empty()
    dist = np.linalg.norm(cache.positions - current.pose.translation, axis=1)
    keep = dist <= scan_range
    local = current.pose.inverse().transform(cache.positions[keep])
    return PointCloud(local, cache.intensities[keep])


@dataclass(frozen=True)
class FilteredScan:
    keyframe_id: int
    points: PointCloud
    filter_kind: str

    def __post_init__(self) -> None:
        if self.filter_kind not in FILTER_KINDS:
            raise ConfigError(f"unknown filter kind {self.filter_kind!r}")


def _polar_cells(positions: np.ndarray, angular_res_deg: float):
    """(azimuth_bin, elevation_bin, range) per point; origin points land in cell (0, 0)."""
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    rng = np.linalg.norm(positions, axis=1)
    az = np.degrees(np.arctan2(y, x))
    az = np.where(az < 0, az + 360.0, az)
    safe_rng = np.where(rng > 0, rng, 1.0)
    ratio = np.where(rng > 0, np.clip(z / safe_rng, -1.0, 1.0), 0.0)
    el = np.degrees(np.arcsin(ratio))
    az_bin = np.floor(az / angular_res_deg).astype(np.int64)
    az_bin = np.minimum(az_bin, int(round(360.0 / angular_res_deg)) - 1)
    el_bin = np.floor(el / angular_res_deg).astype(np.int64)
    return az_bin, el_bin, rng


def filter_polar(
    points: PointCloud, angular_res_deg: float = 1.0, keyframe_id: int = -1
) -> FilteredScan:
    """Keep the closest point per (azimuth, elevation) cell; ties go to the earliest point."""
    ncells = 360.0 / angular_res_deg
    if angular_res_deg <= 0 or abs(ncells - round(ncells)) > 1e-9:
        raise ConfigError(f"angular resolution {angular_res_deg} must divide 360 evenly")
    n = len(points)
    if n == 0:
        return FilteredScan(keyframe_id, points, "polar")
    az_bin, el_bin, rng = _polar_cells(points.positions, angular_res_deg)
    # el_bin is in [-90/res, 90/res]; offset to build a single non-negative cell key
    el_off = el_bin - el_bin.min()
    cell = az_bin * (el_off.max() + 1) + el_off
    order = np.lexsort((np.arange(n), rng, cell))
    _, first = np.unique(cell[order], return_index=True)
    keep = np.sort(order[first])
    return FilteredScan(keyframe_id, points.select(keep), "polar")


def filter_voxel(
    points: PointCloud,
    cell: tuple[float, float, float] = (1.5, 0.75, 1.5),
    keyframe_id: int = -1,
) -> FilteredScan:
    """One representative per occupied voxel: centroid position, rounded mean intensity."""
    if len(cell) != 3 or any(c <= 0 for c in cell):
        raise ConfigError(f"voxel cell sizes must be positive, got {cell}")
    n = len(points)
    if n == 0:
        return FilteredScan(keyframe_id, points, "voxel")
    idx = np.floor(points.positions / np.asarray(cell, dtype=np.float64)).astype(np.int64)
    # group points by voxel via a lexicographic sort of the 3 indices
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sorted_idx = idx[order]
    boundary = np.ones(n, dtype=bool)
    boundary[1:] = np.any(sorted_idx[1:] != sorted_idx[:-1], axis=1)
    group = np.cumsum(boundary) - 1
    n_groups = group[-1] + 1
    counts = np.bincount(group, minlength=n_groups).astype(np.float64)
    pos_sorted = points.positions[order]
    centroids = np.empty((n_groups, 3))
    for k in range(3):
        centroids[:, k] = np.bincount(group, weights=pos_sorted[:, k], minlength=n_groups)
    centroids /= counts[:, None]
    mean_int = (
        np.bincount(group, weights=points.intensities[order].astype(np.float64), minlength=n_groups)
        / counts
    )
    intensities = np.rint(mean_int).astype(np.uint8)
    return FilteredScan(keyframe_id, PointCloud(centroids, intensities), "voxel")


def imitate_sequence(
    keyframes: list[Keyframe],
    config: PipelineConfig,
    filter_kind: str,
) -> list[FilteredScan]:
    """Run the sequential cache pass and emit one filtered scan per keyframe."""
    if filter_kind not in FILTER_KINDS:
        raise ConfigError(f"unknown filter kind {filter_kind!r}")
    cache = LocalPointCache.empty()
    scans: list[FilteredScan] = []
    for kf in keyframes:
        cache = update_cache(cache, kf, eviction_radius=config.scan_range)
        raw = imitate_scan(cache, kf, config.scan_range)
        if filter_kind == "polar":
            scans.append(filter_polar(raw, config.polar_res_deg, keyframe_id=kf.id))
        else:
            scans.append(filter_voxel(raw, config.voxel_cell, keyframe_id=kf.id))
    return scans


# --- scan archive (text) ---------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_scan_archive(scans: list[FilteredScan], path, config: PipelineConfig) -> None:
    lines = [f"CONFIG {config.fingerprint()} {config.to_json()}"]
    for scan in scans:
        lines.append(f"SCAN {scan.keyframe_id} {scan.filter_kind} {len(scan.points)}")
        pos = scan.points.positions
        inten = scan.points.intensities
        for j in range(len(scan.points)):
            lines.append(f"{_fmt(pos[j, 0])} {_fmt(pos[j, 1])} {_fmt(pos[j, 2])} {int(inten[j])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scan_archive(path) -> tuple[list[FilteredScan], PipelineConfig]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    if not lines or not lines[0].startswith("CONFIG "):
        raise DataFormatError(f"{path}:1: scan archive must start with a CONFIG line")
    head = lines[0].split(maxsplit=2)
    if len(head) != 3:
        raise DataFormatError(f"{path}:1: bad CONFIG line")
    try:
        config = PipelineConfig.from_json(head[2])
    except ConfigError as e:
        raise DataFormatError(f"{path}:1: {e}") from None
    if config.fingerprint() != head[1]:
        raise DataFormatError(f"{path}:1: config fingerprint mismatch")

    scans: list[FilteredScan] = []
    i = 1
    n_lines = len(lines)
    while i < n_lines:
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        toks = line.split()
        if toks[0] != "SCAN" or len(toks) != 4:
            raise DataFormatError(f"{path}:{i + 1}: expected SCAN header")
        try:
            kf_id = int(toks[1])
            n_points = int(toks[3])
        except ValueError as e:
            raise DataFormatError(f"{path}:{i + 1}: {e}") from None
        kind = toks[2]
        if kind not in FILTER_KINDS or n_points < 0:
            raise DataFormatError(f"{path}:{i + 1}: bad SCAN header")
        if i + n_points >= n_lines:
            raise DataFormatError(f"{path}:{i + 1}: scan {kf_id} truncated")
        positions = np.empty((n_points, 3))
        intensities = np.empty((n_points,), dtype=np.int64)
        for j in range(n_points):
            ptoks = lines[i + 1 + j].split()
            if len(ptoks) != 4:
                raise DataFormatError(f"{path}:{i + 2 + j}: point line has {len(ptoks)} fields")
            try:
                positions[j] = [float(ptoks[0]), float(ptoks[1]), float(ptoks[2])]
                intensities[j] = int(ptoks[3])
            except ValueError as e:
                raise DataFormatError(f"{path}:{i + 2 + j}: {e}") from None
        scans.append(FilteredScan(kf_id, PointCloud(positions, intensities), kind))
        i += 1 + n_points
    return scans, config
