import numpy as np
import pytest

from conftest import random_transform, structured_cloud
from oracles import delight_histogram_oracle, m2dp_matrix_oracle, scan_context_oracle
from vopr.alignment import AlignedCloudSet, pca_align
from vopr.config import PipelineConfig
from vopr.descriptors import (
    describe,
    describe_delight,
    describe_m2dp,
    describe_scan_context,
    m2dp_bin_matrix,
)
from vopr.errors import DegenerateInputError
from vopr.geometry import yaw_rotation
from vopr.ingest import PointCloud
from vopr.matching import min_variant_distance, chi_squared_distance, euclidean_signature_distance, scan_context_distance
from vopr.scan import FilteredScan


def raw_aligned(positions, intensities) -> AlignedCloudSet:
    """Aligned set whose variant clouds are exactly the given points (no recentering)."""
    c = PointCloud(positions, intensities)
    return AlignedCloudSet(
        (c, c, c, c),
        np.broadcast_to(np.eye(3), (4, 3, 3)).copy(),
        np.zeros(3),
        np.array([3.0, 2.0, 1.0]),
    )


# --- intensity-histogram descriptor (delight) -----------------------------------

def test_delight_single_point_bin():
    # range 5 m, azimuth 45 deg, elevation +10 deg, intensity 128
    az, el, r = np.deg2rad(45), np.deg2rad(10), 5.0
    p = [r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)]
    aligned = raw_aligned(np.array([p]), np.array([128]))
    sig = describe_delight(aligned, 10.0, 45.0)
    for v in range(4):
        hist = sig.histograms[v]
        assert hist.sum() == 1
        # inner shell (0), first quadrant (0), upper hemisphere (1) -> bin 1
        assert hist[1, 128] == 1


def test_delight_empty_cloud_all_zero():
    aligned = raw_aligned(np.empty((0, 3)), np.empty(0, dtype=np.uint8))
    sig = describe_delight(aligned, 10.0, 45.0)
    assert sig.histograms.sum() == 0


def test_delight_discards_beyond_outer():
    aligned = raw_aligned(np.array([[50.0, 0.0, 0.0]]), np.array([7]))
    sig = describe_delight(aligned, 10.0, 45.0)
    assert sig.histograms.sum() == 0


def test_delight_mass_conservation(rng):
    cloud = structured_cloud(rng, n=600)
    aligned = pca_align(cloud)
    sig = describe_delight(aligned, 10.0, 45.0)
    for v in range(4):
        within = (np.linalg.norm(aligned.variants[v].positions, axis=1) <= 45.0).sum()
        assert sig.histograms[v].sum() == within


def test_delight_matches_brute_force(rng):
    for _ in range(3):
        cloud = structured_cloud(rng, n=2000)
        aligned = pca_align(cloud)
        sig = describe_delight(aligned, 10.0, 45.0)
        for v in range(4):
            oracle = delight_histogram_oracle(
                aligned.variants[v].positions, aligned.variants[v].intensities, 10.0, 45.0
            )
            assert np.array_equal(sig.histograms[v], oracle)


# --- projection descriptor (m2dp) ------------------------------------------------

def test_m2dp_bin_matrix_matches_brute_force(rng):
    cloud = structured_cloud(rng, n=500)
    aligned = pca_align(cloud)
    a = m2dp_bin_matrix(aligned.variants[0], 8, 16, 4, 16)
    oracle = m2dp_matrix_oracle(aligned.variants[0].positions, 8, 16, 4, 16)
    assert np.array_equal(a, oracle)
    assert a.sum() == len(cloud) * 64  # every point lands in exactly one bin per plane


def test_m2dp_signature_matches_oracle_svd(rng):
    cloud = structured_cloud(rng, n=500)
    aligned = pca_align(cloud)
    sig = describe_m2dp(aligned)
    for v in range(4):
        a = m2dp_matrix_oracle(aligned.variants[v].positions, 8, 16, 4, 16)
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        u1, v1 = u[:, 0], vt[0]
        if u1[np.argmax(np.abs(u1))] < 0:
            u1 = -u1
        if v1[np.argmax(np.abs(v1))] < 0:
            v1 = -v1
        expected = np.concatenate([u1, v1])
        assert np.abs(sig.structure[v] - expected).max() < 1e-6


def test_m2dp_empty_cloud_errors():
    aligned = raw_aligned(np.empty((0, 3)), np.empty(0, dtype=np.uint8))
    with pytest.raises(DegenerateInputError):
        describe_m2dp(aligned)


def test_m2dp_uniform_intensity_all_zero_bits(rng):
    pos = rng.uniform(-20, 20, (300, 3))
    aligned = raw_aligned(pos, np.full(300, 77))
    sig = describe_m2dp(aligned)
    assert sig.intensity.sum() == 0  # no bucket mean strictly exceeds the global mean


def test_m2dp_intensity_bits_binary(rng):
    cloud = structured_cloud(rng, n=400)
    sig = describe_m2dp(pca_align(cloud))
    assert set(np.unique(sig.intensity)).issubset({0, 1})


# --- polar-grid descriptor (scan_context) ----------------------------------------

def test_scan_context_height_range_example():
    pos = np.array([[5.0, 0.0, -1.0], [5.0, 0.0, 2.0]])
    sig = describe_scan_context(PointCloud(pos, np.array([10, 20])), 20, 60, 45.0)
    ring = int(np.floor(5.0 / (45.0 / 20)))
    assert sig.structure[ring, 0] == pytest.approx(3.0)
    assert sig.structure.sum() == pytest.approx(3.0)


def test_scan_context_singleton_zero():
    sig = describe_scan_context(PointCloud(np.array([[5.0, 0.0, 2.0]]), np.array([9])), 20, 60, 45.0)
    assert sig.structure.sum() == 0.0


def test_scan_context_empty_cloud_zero_matrices():
    sig = describe_scan_context(PointCloud.empty(), 20, 60, 45.0)
    assert sig.structure.shape == (20, 60)
    assert sig.structure.sum() == 0 and sig.intensity.sum() == 0


def test_scan_context_matches_brute_force(rng):
    for _ in range(3):
        cloud = structured_cloud(rng, n=2000)
        aligned = pca_align(cloud)
        sig = describe_scan_context(aligned.variants[0], 20, 60, 45.0)
        oracle = scan_context_oracle(aligned.variants[0].positions, 20, 60, 45.0)
        assert np.abs(sig.structure - oracle).max() < 1e-9


def test_scan_context_vertical_flip_invariance(rng):
    cloud = structured_cloud(rng, n=800)
    flipped = PointCloud(cloud.positions * np.array([1.0, 1.0, -1.0]), cloud.intensities)
    a = describe_scan_context(cloud, 20, 60, 45.0)
    b = describe_scan_context(flipped, 20, 60, 45.0)
    assert np.array_equal(a.structure, b.structure)


def test_scan_context_yaw_covariance():
    """Points at bucket centers: k-sector yaw rotation shifts columns by exactly k."""
    rings, sectors, r_max = 20, 60, 45.0
    rng_local = np.random.default_rng(7)
    cells = [(i, j) for i in range(2, 18, 3) for j in range(0, 60, 7)]
    pts = []
    for i, j in cells:
        rho = (i + 0.5) * (r_max / rings)
        az = np.deg2rad((j + 0.5) * (360.0 / sectors))
        for z in (0.0, rng_local.uniform(1, 5)):
            pts.append([rho * np.cos(az), rho * np.sin(az), z])
    cloud = PointCloud(np.array(pts), np.arange(len(pts)) % 256)
    base = describe_scan_context(cloud, rings, sectors, r_max)
    for k in (1, 7, 30):
        rotated = PointCloud(cloud.positions @ yaw_rotation(k * 6.0).T, cloud.intensities)
        shifted = describe_scan_context(rotated, rings, sectors, r_max)
        assert np.array_equal(shifted.structure, np.roll(base.structure, k, axis=1))
        assert np.array_equal(shifted.intensity, np.roll(base.intensity, k, axis=1))


# --- cross-cutting properties ------------------------------------------------------

def test_describe_deterministic(rng):
    cloud = structured_cloud(rng, n=700)
    config = PipelineConfig()
    scan = FilteredScan(0, cloud, "voxel")
    for kind in ("delight", "m2dp", "scan_context"):
        a = describe(scan, kind, config)
        b = describe(scan, kind, config)
        for field in vars(a):
            assert np.array_equal(getattr(a, field), getattr(b, field))


def test_rigid_motion_invariance_min_variant(rng):
    """Min variant-pair distance between C and T(C) descriptors is ~0."""
    config = PipelineConfig()
    for _ in range(5):
        cloud = structured_cloud(rng, n=600)
        t = random_transform(rng)
        moved = cloud.transform(t)
        a_del = describe_delight(pca_align(cloud))
        b_del = describe_delight(pca_align(moved))
        d = min_variant_distance(a_del.histograms, b_del.histograms, chi_squared_distance)
        assert d < 1e-6
        a_m = describe_m2dp(pca_align(cloud))
        b_m = describe_m2dp(pca_align(moved))
        d = min_variant_distance(a_m.structure, b_m.structure, euclidean_signature_distance)
        assert d < 1e-6


def test_scan_context_yaw_invariance_through_alignment(rng):
    config = PipelineConfig()
    for k in (3, 17, 30, 59):
        cloud = structured_cloud(rng, n=600)
        rot = yaw_rotation(k * (360.0 / config.sc_sectors))
        moved = PointCloud(cloud.positions @ rot.T, cloud.intensities)
        a = describe_scan_context(pca_align(cloud).variants[0], 20, 60, 45.0)
        b = describe_scan_context(pca_align(moved).variants[0], 20, 60, 45.0)
        assert scan_context_distance(a.structure, b.structure) < 1e-6
