"""Global place signatures for aligned scans.

Three descriptor families, all intensity-augmented:

* ``delight``   -- grayscale histograms over a 16-way spherical partition
                   (2 radial shells x 4 azimuth quadrants x 2 hemispheres),
                   4 aligned variants.
* ``m2dp``      -- point counts in ring/sector bins on a fan of projection
                   planes, compressed to the first singular vectors, plus a
                   binarized mean-intensity grid; 4 aligned variants.
* ``scan_context`` -- ring/sector grid on the horizontal principal plane with
                   per-cell height range and binarized mean intensity; single
                   variant, matched under circular sector shifts.

Binning conventions shared by every descriptor: azimuth is atan2(y, x)
mapped to [0, 360) degrees; cell indices are floors clamped to the last
cell so boundary values at the top edge stay inside the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import AlignedCloudSet, pca_align
from .config import PipelineConfig
from .errors import ConfigError, DegenerateInputError
from .ingest import PointCloud
from .scan import FilteredScan

DELIGHT_BINS = 16
INTENSITY_LEVELS = 256


@dataclass(frozen=True)
class DelightSignature:
    histograms: np.ndarray  # (4, 16, 256) int64 counts


@dataclass(frozen=True)
class M2dpSignature:
    structure: np.ndarray  # (4, planes + bins) float64
    intensity: np.ndarray  # (4, bins) uint8 in {0, 1}


@dataclass(frozen=True)
class ScanContextSignature:
    structure: np.ndarray  # (rings, sectors) float64, height range >= 0
    intensity: np.ndarray  # (rings, sectors) uint8 in {0, 1}


def _azimuth_deg(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    az = np.degrees(np.arctan2(y, x))
    return np.where(az < 0, az + 360.0, az)


def describe_delight(
    aligned: AlignedCloudSet, r_inner: float = 10.0, r_outer: float = 45.0
) -> DelightSignature:
    if not 0 < r_inner < r_outer:
        raise ConfigError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    histograms = np.zeros((4, DELIGHT_BINS, INTENSITY_LEVELS), dtype=np.int64)
    for v, cloud in enumerate(aligned.variants):
        if len(cloud) == 0:
            continue
        pos = cloud.positions
        rng = np.linalg.norm(pos, axis=1)
        keep = rng <= r_outer
        if not np.any(keep):
            continue
        pos = pos[keep]
        rng = rng[keep]
        inten = cloud.intensities[keep].astype(np.int64)
        shell = (rng >= r_inner).astype(np.int64)
        quadrant = np.minimum(
            np.floor(_azimuth_deg(pos[:, 0], pos[:, 1]) / 90.0).astype(np.int64), 3
        )
        upper = (pos[:, 2] >= 0).astype(np.int64)
        bin_idx = shell * 8 + quadrant * 2 + upper
        flat = bin_idx * INTENSITY_LEVELS + inten
        histograms[v] = np.bincount(flat, minlength=DELIGHT_BINS * INTENSITY_LEVELS).reshape(
            DELIGHT_BINS, INTENSITY_LEVELS
        )
    return DelightSignature(histograms)


def _projection_frames(plane_azimuths: int, plane_elevations: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-plane in-plane basis vectors px, py for the fan of projection planes."""
    thetas = np.linspace(-np.pi / 2, np.pi / 2, plane_azimuths)
    phis = np.linspace(0, np.pi / 2, plane_elevations)
    px = np.empty((plane_azimuths * plane_elevations, 3))
    py = np.empty_like(px)
    row = 0
    for theta in thetas:
        for phi in phis:
            normal = np.array(
                [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)]
            )
            bx = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
            if np.linalg.norm(bx) < 1e-12:
                bx = np.array([0.0, 1.0, 0.0]) - normal[1] * normal
            bx /= np.linalg.norm(bx)
            px[row] = bx
            py[row] = np.cross(normal, bx)
            row += 1
    return px, py


def _ring_sector_indices(
    rho: np.ndarray, theta: np.ndarray, ring_edges: np.ndarray, sectors: int
) -> np.ndarray:
    rings = len(ring_edges) - 1
    ring = np.clip(np.searchsorted(ring_edges, rho, side="right") - 1, 0, rings - 1)
    sector = np.clip(
        np.floor((theta + np.pi) / (2 * np.pi / sectors)).astype(np.int64), 0, sectors - 1
    )
    return ring * sectors + sector


def _horizontal_intensity_bits(
    cloud: PointCloud, ring_edges: np.ndarray, sectors: int
) -> np.ndarray:
    """Binarized mean intensity on the ring/sector grid of the horizontal plane."""
    rings = len(ring_edges) - 1
    n_bins = rings * sectors
    if len(cloud) == 0:
        return np.zeros(n_bins, dtype=np.uint8)
    x, y = cloud.positions[:, 0], cloud.positions[:, 1]
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    idx = _ring_sector_indices(rho, theta, ring_edges, sectors)
    inten = cloud.intensities.astype(np.float64)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=inten, minlength=n_bins)
    global_mean = inten.mean()
    bits = np.zeros(n_bins, dtype=np.uint8)
    occupied = counts > 0
    bits[occupied] = (sums[occupied] / counts[occupied] > global_mean).astype(np.uint8)
    return bits


def m2dp_bin_matrix(
    cloud: PointCloud,
    rings: int = 8,
    sectors: int = 16,
    plane_azimuths: int = 4,
    plane_elevations: int = 16,
) -> np.ndarray:
    """Point-count matrix A: one row per projection plane, one column per ring/sector bin."""
    n_planes = plane_azimuths * plane_elevations
    n_bins = rings * sectors
    if len(cloud) == 0:
        return np.zeros((n_planes, n_bins))
    pos = cloud.positions
    max_rho = float(np.linalg.norm(pos, axis=1).max())
    if max_rho == 0.0:
        raise DegenerateInputError("all points at the frame origin")
    ring_edges = np.linspace(0.0, np.sqrt(max_rho), rings + 1) ** 2
    px, py = _projection_frames(plane_azimuths, plane_elevations)
    u = pos @ px.T  # (N, planes)
    v = pos @ py.T
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    bin_idx = _ring_sector_indices(rho.ravel(), theta.ravel(), ring_edges, sectors)
    plane_idx = np.broadcast_to(np.arange(n_planes), (len(cloud), n_planes)).ravel()
    flat = plane_idx * n_bins + bin_idx
    return (
        np.bincount(flat, minlength=n_planes * n_bins)
        .reshape(n_planes, n_bins)
        .astype(np.float64)
    )


def _signed_singular_vectors(a: np.ndarray) -> np.ndarray:
    """First left + right singular vectors, each with its largest-|entry| forced positive."""
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    u1 = u[:, 0]
    v1 = vt[0]
    if u1[np.argmax(np.abs(u1))] < 0:
        u1 = -u1
    if v1[np.argmax(np.abs(v1))] < 0:
        v1 = -v1
    return np.concatenate([u1, v1])


def describe_m2dp(
    aligned: AlignedCloudSet,
    rings: int = 8,
    sectors: int = 16,
    plane_azimuths: int = 4,
    plane_elevations: int = 16,
) -> M2dpSignature:
    if min(rings, sectors, plane_azimuths, plane_elevations) < 1:
        raise ConfigError("projection descriptor parameters must be positive")
    n_planes = plane_azimuths * plane_elevations
    n_bins = rings * sectors
    structure = np.empty((4, n_planes + n_bins))
    intensity = np.empty((4, n_bins), dtype=np.uint8)
    for v, cloud in enumerate(aligned.variants):
        a = m2dp_bin_matrix(cloud, rings, sectors, plane_azimuths, plane_elevations)
        if not np.any(a):
            raise DegenerateInputError("empty cloud yields an all-zero bin matrix")
        structure[v] = _signed_singular_vectors(a)
        max_rho = float(np.linalg.norm(cloud.positions, axis=1).max())
        ring_edges = np.linspace(0.0, np.sqrt(max_rho), rings + 1) ** 2
        intensity[v] = _horizontal_intensity_bits(cloud, ring_edges, sectors)
    return M2dpSignature(structure, intensity)


def describe_scan_context(
    cloud: PointCloud, rings: int = 20, sectors: int = 60, r_max: float = 45.0
) -> ScanContextSignature:
    """Height-range grid over the horizontal plane of an aligned cloud (variant 0)."""
    if rings < 1 or sectors < 1 or r_max <= 0:
        raise ConfigError("polar-grid parameters must be positive")
    structure = np.zeros((rings, sectors))
    intensity = np.zeros((rings, sectors), dtype=np.uint8)
    if len(cloud) == 0:
        return ScanContextSignature(structure, intensity)
    pos = cloud.positions
    rho = np.hypot(pos[:, 0], pos[:, 1])
    ring = np.floor(rho / (r_max / rings)).astype(np.int64)
    keep = ring < rings
    if not np.any(keep):
        return ScanContextSignature(structure, intensity)
    ring = ring[keep]
    z = pos[keep, 2]
    az = _azimuth_deg(pos[keep, 0], pos[keep, 1])
    sector = np.minimum(np.floor(az / (360.0 / sectors)).astype(np.int64), sectors - 1)
    idx = ring * sectors + sector
    n_cells = rings * sectors

    zmax = np.full(n_cells, -np.inf)
    zmin = np.full(n_cells, np.inf)
    np.maximum.at(zmax, idx, z)
    np.minimum.at(zmin, idx, z)
    counts = np.bincount(idx, minlength=n_cells)
    occupied = counts > 0
    heights = np.zeros(n_cells)
    heights[occupied] = zmax[occupied] - zmin[occupied]
    structure = heights.reshape(rings, sectors)

    inten = cloud.intensities[keep].astype(np.float64)
    sums = np.bincount(idx, weights=inten, minlength=n_cells)
    global_mean = cloud.intensities.astype(np.float64).mean()
    bits = np.zeros(n_cells, dtype=np.uint8)
    bits[occupied] = (sums[occupied] / counts[occupied] > global_mean).astype(np.uint8)
    return ScanContextSignature(structure, bits.reshape(rings, sectors))


def describe(scan: FilteredScan, kind: str, config: PipelineConfig):
    """Align a filtered scan and compute the requested signature."""
    aligned = pca_align(scan.points)
    if kind == "delight":
        return describe_delight(aligned, config.delight_r_inner, config.delight_r_outer)
    if kind == "m2dp":
        return describe_m2dp(
            aligned,
            config.m2dp_rings,
            config.m2dp_sectors,
            config.m2dp_plane_azimuths,
            config.m2dp_plane_elevations,
        )
    if kind == "scan_context":
        return describe_scan_context(
            aligned.variants[0], config.sc_rings, config.sc_sectors, config.scan_range
        )
    raise ConfigError(f"unknown descriptor kind {kind!r}")
