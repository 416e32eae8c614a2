"""Rigid-body transforms (rotation + translation) used throughout the pipeline.

Poses are camera-to-world: ``world = R @ p_cam + t``. The quaternion parsed
from a keyframe file is cached (sign-canonicalized) so that serializing a
loaded sequence reproduces the pose lines byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataFormatError

ORTHONORMAL_TOL = 1e-6
QUAT_NORM_TOL = 1e-6


def _canonical_quat_sign(q: np.ndarray) -> np.ndarray:
    """Fix the sign ambiguity q <-> -q: qw >= 0, ties resolved by first nonzero."""
    qx, qy, qz, qw = q
    if qw < 0:
        return -q
    if qw == 0:
        for c in (qx, qy, qz):
            if c != 0:
                return q if c > 0 else -q
    return q


@dataclass(frozen=True)
class RigidTransform:
    """3D rigid transform with an orthonormal, right-handed rotation."""

    rotation: np.ndarray
    translation: np.ndarray
    # Quaternion (xyzw) exactly as parsed from disk, kept for lossless rewrite.
    source_quat: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tra.shape != (3,):
            raise DataFormatError(
                f"bad transform shapes: rotation {rot.shape}, translation {tra.shape}"
            )
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise DataFormatError("transform contains non-finite values")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        det = np.linalg.det(rot)
        if err > ORTHONORMAL_TOL or abs(det - 1.0) > ORTHONORMAL_TOL:
            raise DataFormatError(
                f"rotation not orthonormal (|R R^T - I|={err:.2e}, det={det:.8f})"
            )
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> "RigidTransform":
        """Build from an xyzw quaternion; must be unit length within 1e-6."""
        q = np.asarray(quat_xyzw, dtype=np.float64)
        if q.shape != (4,):
            raise DataFormatError(f"quaternion must have 4 components, got {q.shape}")
        norm = float(np.linalg.norm(q))
        if not np.isfinite(norm) or abs(norm - 1.0) > QUAT_NORM_TOL:
            raise DataFormatError(f"quaternion norm {norm:.8f} deviates from 1 by more than {QUAT_NORM_TOL}")
        q = _canonical_quat_sign(q)
        rot = Rotation.from_quat(q).as_matrix()
        return cls(rot, translation, source_quat=q.copy())

    def quaternion_xyzw(self) -> np.ndarray:
        """Sign-canonical xyzw quaternion; returns the parsed one when available."""
        if self.source_quat is not None:
            return self.source_quat
        return _canonical_quat_sign(Rotation.from_matrix(self.rotation).as_quat())

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).transform(p) == self.transform(other.transform(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def yaw_rotation(angle_deg: float) -> np.ndarray:
    """Rotation matrix about the +z axis, angle in degrees (CCW)."""
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
