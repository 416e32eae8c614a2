"""Canonical reference frames for point clouds via principal component analysis.

The two leading axes carry a sign ambiguity, so descriptors consume four
aligned variants (all sign combinations of the first two axes, third axis
from the cross product). Base axis signs are disambiguated by the third
central moment of the cloud along each axis, which depends only on the
cloud's shape, so variant 0 is stable under rigid motion of the input.

The smallest-eigenvalue axis (the vertical in driving scenes) is anchored
first: its moment signal (mass near the ground, tail upward) is strong,
while the horizontal moments can hover near zero on symmetric streets.
The second axis is completed right-handed around it, so even when the
leading axis flips between two visits, variant 0 changes by a pure 180-degree
yaw, which the polar-grid descriptor's shift search absorbs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .ingest import PointCloud

DEGENERACY_RATIO = 1e-9
_MOMENT_EPS = 1e-12


@dataclass(frozen=True)
class AlignedCloudSet:
    """Four sign-resolved alignments of one cloud in its principal frame."""

    variants: tuple[PointCloud, PointCloud, PointCloud, PointCloud]
    rotations: np.ndarray  # (4, 3, 3), world-to-aligned, det +1 each
    centroid: np.ndarray  # (3,)
    eigenvalues: np.ndarray  # (3,) descending


def _axis_sign(centered: np.ndarray, axis: np.ndarray) -> float:
    """Orient the axis so the cloud's third moment along it is non-negative."""
    proj = centered @ axis
    skew = float(np.sum(proj**3))
    scale = float(np.sum(np.abs(proj) ** 3)) or 1.0
    if abs(skew) / scale > _MOMENT_EPS:
        return 1.0 if skew > 0 else -1.0
    # symmetric cloud: fall back to a fixed component-sign rule
    k = int(np.argmax(np.abs(axis)))
    return 1.0 if axis[k] >= 0 else -1.0


def pca_align(points: PointCloud) -> AlignedCloudSet:
    """Center the cloud and rotate it into its four candidate principal frames."""
    n = len(points)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points for a reference frame, got {n}")
    pos = points.positions
    centroid = pos.mean(axis=0)
    centered = pos - centroid
    cov = centered.T @ centered / n
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.maximum(eigenvalues[order], 0.0)
    axes = eigenvectors[:, order].T  # rows, descending eigenvalue
    if eigenvalues[0] <= 0 or eigenvalues[1] / eigenvalues[0] < DEGENERACY_RATIO:
        raise DegenerateInputError(
            "degenerate cloud: points are collinear or near-coincident "
            f"(eigenvalues {eigenvalues.tolist()})"
        )
    e1 = axes[0] * _axis_sign(centered, axes[0])
    e3 = axes[2] * _axis_sign(centered, axes[2])
    e2 = np.cross(e3, e1)

    rotations = np.empty((4, 3, 3))
    variants = []
    for v, (s1, s2) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
        a1 = s1 * e1
        a2 = s2 * e2
        rot = np.vstack([a1, a2, np.cross(a1, a2)])
        rotations[v] = rot
        variants.append(PointCloud(centered @ rot.T, points.intensities))
    return AlignedCloudSet(tuple(variants), rotations, centroid, eigenvalues)
