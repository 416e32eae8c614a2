"""Keyframe sequences on disk: poses with associated intensity points.

File format (UTF-8 text, one record per keyframe):

    KF <id> <tx> <ty> <tz> <qx> <qy> <qz> <qw> <n_points> [<gt_x> <gt_y> <gt_z>]
    <x> <y> <z> <intensity>     (n_points lines)

Numbers are decimal ASCII, whitespace runs are arbitrary. Poses are
camera-to-world, point coordinates are in the camera frame, intensity is an
integer in [0, 255]. The optional trailing triple is a global ground-truth
position used for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .geometry import RigidTransform


@dataclass(frozen=True)
class PointCloud:
    """Positions (N, 3) in meters plus grayscale intensities (N,) in [0, 255]."""

    positions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DataFormatError(f"positions must be (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise DataFormatError("point positions contain non-finite values")
        inten = np.asarray(self.intensities)
        if inten.shape != (pos.shape[0],):
            raise DataFormatError(
                f"intensities shape {inten.shape} does not match {pos.shape[0]} points"
            )
        if inten.size and (inten.min() < 0 or inten.max() > 255):
            raise DataFormatError("intensity out of range [0, 255]")
        inten = inten.astype(np.uint8)
        pos.setflags(write=False)
        inten.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", inten)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 3)), np.empty((0,), dtype=np.uint8))

    def select(self, mask_or_index) -> "PointCloud":
        return PointCloud(self.positions[mask_or_index], self.intensities[mask_or_index])

    def transform(self, rt: RigidTransform) -> "PointCloud":
        return PointCloud(rt.transform(self.positions), self.intensities)


@dataclass(frozen=True)
class Keyframe:
    """One visual-odometry keyframe: pose, its 3D points, optional GT position."""

    id: int
    pose: RigidTransform
    points: PointCloud
    gt_position: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.gt_position is not None:
            gt = np.asarray(self.gt_position, dtype=np.float64)
            if gt.shape != (3,) or not np.all(np.isfinite(gt)):
                raise DataFormatError(f"bad gt position for keyframe {self.id}")
            gt.setflags(write=False)
            object.__setattr__(self, "gt_position", gt)


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that parses back exactly
    return repr(float(x))


def load_sequence(path) -> list[Keyframe]:
    """Parse a keyframe file. Raises DataFormatError with the offending line number."""
    path = Path(path)
    keyframes: list[Keyframe] = []
    last_id: int | None = None
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()

    i = 0
    n_lines = len(lines)
    while i < n_lines:
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        tokens = line.split()
        if tokens[0] != "KF":
            raise DataFormatError(f"{path}:{i + 1}: expected KF record, got {tokens[0]!r}")
        if len(tokens) not in (10, 13):
            raise DataFormatError(
                f"{path}:{i + 1}: KF record has {len(tokens)} fields, expected 10 or 13"
            )
        try:
            kf_id = int(tokens[1])
            vals = [float(t) for t in tokens[2:]]
        except ValueError as e:
            raise DataFormatError(f"{path}:{i + 1}: {e}") from None
        if last_id is not None and kf_id <= last_id:
            raise DataFormatError(
                f"{path}:{i + 1}: keyframe id {kf_id} not greater than previous {last_id}"
            )
        translation = vals[0:3]
        quat = vals[3:7]
        n_points = tokens[9]
        try:
            n_points = int(n_points)
        except ValueError:
            raise DataFormatError(f"{path}:{i + 1}: bad point count {tokens[9]!r}") from None
        if n_points < 0:
            raise DataFormatError(f"{path}:{i + 1}: negative point count")
        gt = np.array(vals[8:11]) if len(tokens) == 13 else None
        try:
            pose = RigidTransform.from_quaternion(quat, translation)
        except DataFormatError as e:
            raise DataFormatError(f"{path}:{i + 1}: {e}") from None

        if i + n_points >= n_lines:
            raise DataFormatError(
                f"{path}:{i + 1}: keyframe {kf_id} declares {n_points} points, file ends early"
            )
        positions = np.empty((n_points, 3))
        intensities = np.empty((n_points,), dtype=np.int64)
        for j in range(n_points):
            ptoks = lines[i + 1 + j].split()
            if len(ptoks) != 4:
                raise DataFormatError(
                    f"{path}:{i + 2 + j}: point line has {len(ptoks)} fields, expected 4"
                )
            try:
                positions[j, 0] = float(ptoks[0])
                positions[j, 1] = float(ptoks[1])
                positions[j, 2] = float(ptoks[2])
                intensities[j] = int(ptoks[3])
            except ValueError as e:
                raise DataFormatError(f"{path}:{i + 2 + j}: {e}") from None
        try:
            points = PointCloud(positions, intensities)
        except DataFormatError as e:
            raise DataFormatError(f"{path}:{i + 1}: keyframe {kf_id}: {e}") from None

        keyframes.append(Keyframe(kf_id, pose, points, gt))
        last_id = kf_id
        i += 1 + n_points
    return keyframes


def dump_sequence(keyframes) -> str:
    """Canonical text form; load_sequence(dump) round-trips byte-identically."""
    out: list[str] = []
    for kf in keyframes:
        q = kf.pose.quaternion_xyzw()
        t = kf.pose.translation
        head = [
            "KF",
            str(kf.id),
            _fmt(t[0]),
            _fmt(t[1]),
            _fmt(t[2]),
            _fmt(q[0]),
            _fmt(q[1]),
            _fmt(q[2]),
            _fmt(q[3]),
            str(len(kf.points)),
        ]
        if kf.gt_position is not None:
            head += [_fmt(v) for v in kf.gt_position]
        out.append(" ".join(head))
        pos = kf.points.positions
        inten = kf.points.intensities
        for j in range(len(kf.points)):
            out.append(
                f"{_fmt(pos[j, 0])} {_fmt(pos[j, 1])} {_fmt(pos[j, 2])} {int(inten[j])}"
            )
    return "\n".join(out) + ("\n" if out else "")


def write_sequence(keyframes, path) -> None:
    Path(path).write_text(dump_sequence(keyframes), encoding="utf-8")
