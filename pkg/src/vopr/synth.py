"""Synthetic keyframe sequences with controllable revisits and perturbations.

A world is a fixed set of surface samples (building walls, tree blobs,
ground plane) with per-point class and grayscale intensity. A camera drives
a waypoint polyline and each keyframe observes the world points inside a
forward frustum, so the scan-imitation cache is exercised the same way a
real forward-moving platform would.

Perturbation models a revisit after environmental change: intensities are
rescaled/shifted/noised (optionally per class), and a fraction of the
vegetation points is resampled in place; building geometry never moves.

Identical spec (same seed) always regenerates bit-identical sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .geometry import RigidTransform
from .ingest import Keyframe, PointCloud

CLASS_GROUND = 0
CLASS_BUILDING = 1
CLASS_VEGETATION = 2
CLASS_NAMES = {"ground": CLASS_GROUND, "building": CLASS_BUILDING, "vegetation": CLASS_VEGETATION}


@dataclass(frozen=True)
class Building:
    cx: float
    cy: float
    sx: float
    sy: float
    height: float
    intensity_mean: float
    intensity_std: float
    n_points: int

    class_code = CLASS_BUILDING


@dataclass(frozen=True)
class Tree:
    cx: float
    cy: float
    radius: float
    zc: float  # canopy center height
    intensity_mean: float
    intensity_std: float
    n_points: int

    class_code = CLASS_VEGETATION


@dataclass(frozen=True)
class Ground:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    intensity_mean: float
    intensity_std: float
    n_points: int

    class_code = CLASS_GROUND


@dataclass(frozen=True)
class PerturbationSpec:
    vegetation_resample_fraction: float = 0.0
    intensity_scale: float = 1.0
    intensity_offset: float = 0.0
    intensity_noise_std: float = 0.0
    # extra per-class intensity offsets, e.g. (("vegetation", -40.0),)
    class_intensity_offsets: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.vegetation_resample_fraction <= 1.0:
            raise ConfigError("vegetation_resample_fraction must be in [0, 1]")
        for name, _ in self.class_intensity_offsets:
            if name not in CLASS_NAMES:
                raise ConfigError(f"unknown point class {name!r}")


@dataclass(frozen=True)
class WorldSpec:
    seed: int
    layout: tuple
    waypoints: tuple[tuple[float, float], ...]
    speed: float = 1.0  # meters per keyframe
    camera_height: float = 1.6
    fov_deg: float = 90.0
    max_range: float = 45.0
    points_per_keyframe: int = 400
    revisit_segments: tuple[tuple[int, int, float], ...] = ()
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    pose_jitter_pos: float = 0.0
    pose_jitter_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.speed <= 0 or self.fov_deg <= 0 or self.max_range <= 0:
            raise ConfigError("speed, fov_deg and max_range must be positive")
        if self.points_per_keyframe < 1:
            raise ConfigError("points_per_keyframe must be >= 1")
        if len(self.waypoints) < 2:
            raise ConfigError("need at least 2 waypoints")
        for seg in self.revisit_segments:
            i0, i1, _ = seg
            if not (0 <= int(i0) < int(i1) < len(self.waypoints)):
                raise ConfigError(f"bad revisit segment {seg}")


@dataclass(frozen=True)
class SyntheticSequence:
    """Generated keyframes plus the world-level metadata needed to perturb them."""

    keyframes: list[Keyframe]
    world_positions: np.ndarray  # (W, 3)
    world_intensities: np.ndarray  # (W,) uint8
    world_classes: np.ndarray  # (W,) int8
    world_element_ids: np.ndarray  # (W,) int32 index into spec.layout
    selections: list[np.ndarray]  # per keyframe: indices into the world arrays
    spec: WorldSpec

    def point_classes(self, kf_index: int) -> np.ndarray:
        return self.world_classes[self.selections[kf_index]]


# --- world sampling ----------------------------------------------------------

def _sample_element(element, rng: np.random.Generator) -> np.ndarray:
    n = element.n_points
    if isinstance(element, Ground):
        x = rng.uniform(element.xmin, element.xmax, n)
        y = rng.uniform(element.ymin, element.ymax, n)
        z = np.zeros(n)
    elif isinstance(element, Building):
        # walls only; pick a wall proportionally to its width
        perim = 2 * (element.sx + element.sy)
        side = rng.uniform(0, perim, n)
        z = rng.uniform(0, element.height, n)
        x = np.empty(n)
        y = np.empty(n)
        hx, hy = element.sx / 2, element.sy / 2
        m = side < element.sx
        x[m] = element.cx - hx + side[m]
        y[m] = element.cy - hy
        m = (side >= element.sx) & (side < element.sx + element.sy)
        x[m] = element.cx + hx
        y[m] = element.cy - hy + (side[m] - element.sx)
        m = (side >= element.sx + element.sy) & (side < 2 * element.sx + element.sy)
        x[m] = element.cx + hx - (side[m] - element.sx - element.sy)
        y[m] = element.cy + hy
        m = side >= 2 * element.sx + element.sy
        x[m] = element.cx - hx
        y[m] = element.cy + hy - (side[m] - 2 * element.sx - element.sy)
    elif isinstance(element, Tree):
        # uniform in a ball around the canopy center
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = element.radius * rng.uniform(0, 1, n) ** (1 / 3)
        x = element.cx + v[:, 0] * r
        y = element.cy + v[:, 1] * r
        z = np.maximum(element.zc + v[:, 2] * r, 0.05)
    else:
        raise ConfigError(f"unknown layout element {type(element).__name__}")
    return np.column_stack([x, y, z])


def _sample_intensities(element, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(element.intensity_mean, element.intensity_std, element.n_points)
    return np.clip(np.rint(raw), 0, 255).astype(np.uint8)


def _build_world(spec: WorldSpec, rng: np.random.Generator):
    if not spec.layout:
        raise ConfigError("world layout is empty")
    positions, intensities, classes, element_ids = [], [], [], []
    for eid, element in enumerate(spec.layout):
        positions.append(_sample_element(element, rng))
        intensities.append(_sample_intensities(element, rng))
        classes.append(np.full(element.n_points, element.class_code, dtype=np.int8))
        element_ids.append(np.full(element.n_points, eid, dtype=np.int32))
    return (
        np.vstack(positions),
        np.concatenate(intensities),
        np.concatenate(classes),
        np.concatenate(element_ids),
    )


# --- trajectory --------------------------------------------------------------

def _polyline(points: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Resample a 2D polyline every `step` meters; returns positions and headings."""
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len == 0):
        raise ConfigError("repeated consecutive waypoints")
    total = float(seg_len.sum())
    s_values = np.arange(0.0, total + 1e-9, step)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    pos = np.empty((len(s_values), 2))
    heading = np.empty(len(s_values))
    for i, s in enumerate(s_values):
        k = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        t = (s - cum[k]) / seg_len[k]
        pos[i] = points[k] + t * seg[k]
        heading[i] = np.arctan2(seg[k, 1], seg[k, 0])
    return pos, heading


def _trajectory(spec: WorldSpec) -> tuple[np.ndarray, np.ndarray]:
    wp = np.asarray(spec.waypoints, dtype=np.float64)
    pos, heading = _polyline(wp, spec.speed)
    for i0, i1, offset in spec.revisit_segments:
        sub = wp[int(i0) : int(i1) + 1].copy()
        if offset != 0.0:
            d = np.diff(sub, axis=0)
            d = np.vstack([d, d[-1]])
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            normal = np.column_stack([-d[:, 1], d[:, 0]])  # left of travel
            sub += offset * normal
        p2, h2 = _polyline(sub, spec.speed)
        pos = np.vstack([pos, p2])
        heading = np.concatenate([heading, h2])
    return pos, heading


def _camera_pose(xy: np.ndarray, heading: float, height: float) -> RigidTransform:
    """Camera frame: x lateral (right), y down, z forward along the heading."""
    c, s = np.cos(heading), np.sin(heading)
    rot = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    return RigidTransform(rot, np.array([xy[0], xy[1], height]))


# --- generation ---------------------------------------------------------------

def generate(spec: WorldSpec) -> SyntheticSequence:
    rng = np.random.default_rng(spec.seed)
    world_pos, world_int, world_cls, world_eid = _build_world(spec, rng)
    traj_xy, traj_heading = _trajectory(spec)

    half_fov = np.deg2rad(spec.fov_deg / 2)
    keyframes: list[Keyframe] = []
    selections: list[np.ndarray] = []
    for k in range(len(traj_xy)):
        xy = traj_xy[k]
        heading = traj_heading[k]
        if spec.pose_jitter_pos > 0:
            xy = xy + rng.normal(0, spec.pose_jitter_pos, 2)
        if spec.pose_jitter_deg > 0:
            heading = heading + np.deg2rad(rng.normal(0, spec.pose_jitter_deg))
        pose = _camera_pose(xy, heading, spec.camera_height)
        origin = pose.translation

        delta = world_pos - origin
        dist = np.linalg.norm(delta, axis=1)
        bearing = np.arctan2(delta[:, 1], delta[:, 0])
        ang = np.abs((bearing - heading + np.pi) % (2 * np.pi) - np.pi)
        visible = np.flatnonzero((dist <= spec.max_range) & (ang <= half_fov))
        if len(visible) > spec.points_per_keyframe:
            pick = rng.choice(len(visible), size=spec.points_per_keyframe, replace=False)
            visible = np.sort(visible[pick])
        local = pose.inverse().transform(world_pos[visible])
        keyframes.append(
            Keyframe(
                k,
                pose,
                PointCloud(local, world_int[visible]),
                gt_position=origin.copy(),
            )
        )
        selections.append(visible)
    return SyntheticSequence(
        keyframes, world_pos, world_int, world_cls, world_eid, selections, spec
    )


def perturb(seq: SyntheticSequence, perturbation: PerturbationSpec | None = None) -> SyntheticSequence:
    """Re-render the same trajectory over the perturbed world."""
    p = perturbation if perturbation is not None else seq.spec.perturbation
    rng = np.random.default_rng([seq.spec.seed, 7919])

    world_pos = seq.world_positions.copy()
    if p.vegetation_resample_fraction > 0:
        veg = np.flatnonzero(seq.world_classes == CLASS_VEGETATION)
        moved = veg[rng.random(len(veg)) < p.vegetation_resample_fraction]
        for eid in np.unique(seq.world_element_ids[moved]):
            element = seq.spec.layout[eid]
            idx = moved[seq.world_element_ids[moved] == eid]
            fresh = _sample_element(replace(element, n_points=len(idx)), rng)
            world_pos[idx] = fresh

    inten = seq.world_intensities.astype(np.float64)
    inten = p.intensity_scale * inten + p.intensity_offset
    for name, off in p.class_intensity_offsets:
        inten[seq.world_classes == CLASS_NAMES[name]] += off
    if p.intensity_noise_std > 0:
        inten += rng.normal(0, p.intensity_noise_std, len(inten))
    world_int = np.clip(np.rint(inten), 0, 255).astype(np.uint8)

    keyframes = []
    for k, kf in enumerate(seq.keyframes):
        sel = seq.selections[k]
        local = kf.pose.inverse().transform(world_pos[sel])
        keyframes.append(
            Keyframe(kf.id, kf.pose, PointCloud(local, world_int[sel]), kf.gt_position)
        )
    return SyntheticSequence(
        keyframes,
        world_pos,
        world_int,
        seq.world_classes,
        seq.world_element_ids,
        [s.copy() for s in seq.selections],
        seq.spec,
    )


def reversed_spec(spec: WorldSpec) -> WorldSpec:
    """Same world, trajectory driven in the opposite direction."""
    return replace(spec, waypoints=tuple(spec.waypoints[::-1]))


# --- presets -------------------------------------------------------------------

def street_world(
    seed: int = 0,
    length: float = 110.0,
    n_buildings: int = 14,
    n_trees: int = 12,
    points_per_keyframe: int = 400,
    out_and_back: bool = False,
    perturbation: PerturbationSpec | None = None,
    twin_blocks: bool = False,
) -> WorldSpec:
    """A street flanked by varied buildings and trees; the default test corpus.

    twin_blocks plants two identical building groups far apart, so structure
    alone cannot fully separate them but surface intensity can.
    """
    rng = np.random.default_rng([seed, 1234])
    layout: list = [
        Ground(-20.0, length + 20.0, -30.0, 30.0, 120.0, 10.0, 9000),
    ]
    xs = np.linspace(6.0, length - 6.0, n_buildings)
    for i, x in enumerate(xs):
        side = 1 if i % 2 == 0 else -1
        layout.append(
            Building(
                cx=float(x + rng.uniform(-2, 2)),
                cy=float(side * rng.uniform(9.0, 16.0)),
                sx=float(rng.uniform(5.0, 12.0)),
                sy=float(rng.uniform(4.0, 8.0)),
                height=float(rng.uniform(6.0, 22.0)),
                intensity_mean=float(rng.uniform(140.0, 220.0)),
                intensity_std=8.0,
                n_points=900,
            )
        )
    if twin_blocks:
        base = dict(sx=9.0, sy=6.0, height=16.0, intensity_std=6.0, n_points=1100)
        layout.append(Building(cx=0.25 * length, cy=22.0, intensity_mean=150.0, **base))
        layout.append(Building(cx=0.75 * length, cy=22.0, intensity_mean=205.0, **base))
    xt = np.linspace(3.0, length - 3.0, n_trees)
    for x in xt:
        side = rng.choice([-1.0, 1.0])
        layout.append(
            Tree(
                cx=float(x + rng.uniform(-1.5, 1.5)),
                cy=float(side * rng.uniform(4.0, 6.5)),
                radius=float(rng.uniform(1.5, 3.0)),
                zc=float(rng.uniform(3.0, 6.0)),
                intensity_mean=float(rng.uniform(70.0, 110.0)),
                intensity_std=15.0,
                n_points=300,
            )
        )
    waypoints = [(0.0, 0.0), (length, 0.0)]
    if out_and_back:
        waypoints.append((0.0, 0.0))
    return WorldSpec(
        seed=seed,
        layout=tuple(layout),
        waypoints=tuple(waypoints),
        points_per_keyframe=points_per_keyframe,
        perturbation=perturbation or PerturbationSpec(),
    )


def seasonal_perturbation(strength: float = 1.0, vegetation_resample: float = 0.0) -> PerturbationSpec:
    """Drastic appearance change: global dimming plus class-dependent shifts."""
    return PerturbationSpec(
        vegetation_resample_fraction=vegetation_resample,
        intensity_scale=1.0 - 0.35 * strength,
        intensity_offset=-20.0 * strength,
        intensity_noise_std=22.0 * strength,
        class_intensity_offsets=(
            ("vegetation", -45.0 * strength),
            ("ground", 85.0 * strength),
        ),
    )


# --- world-spec files -----------------------------------------------------------

_ELEMENT_FIELDS = {
    "ground": ("xmin", "xmax", "ymin", "ymax", "intensity_mean", "intensity_std", "n_points"),
    "building": ("cx", "cy", "sx", "sy", "height", "intensity_mean", "intensity_std", "n_points"),
    "tree": ("cx", "cy", "radius", "zc", "intensity_mean", "intensity_std", "n_points"),
}
_ELEMENT_TYPES = {"ground": Ground, "building": Building, "tree": Tree}


def load_world_spec(path) -> WorldSpec:
    """Parse the plain-text key=value world description (see README for the format)."""
    path = Path(path)
    scalars: dict[str, float] = {}
    layout: list = []
    waypoints: list[tuple[float, float]] = []
    revisits: list[tuple[int, int, float]] = []
    perturb_kwargs: dict = {}
    class_offsets: list[tuple[str, float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            toks = value.split()
            try:
                if key in _ELEMENT_TYPES:
                    fields = _ELEMENT_FIELDS[key]
                    if len(toks) != len(fields):
                        raise ValueError(f"{key} needs {len(fields)} values")
                    kwargs = {f: float(t) for f, t in zip(fields, toks)}
                    kwargs["n_points"] = int(kwargs["n_points"])
                    layout.append(_ELEMENT_TYPES[key](**kwargs))
                elif key == "waypoint":
                    waypoints.append((float(toks[0]), float(toks[1])))
                elif key == "revisit":
                    revisits.append((int(toks[0]), int(toks[1]), float(toks[2])))
                elif key == "perturb_vegetation":
                    perturb_kwargs["vegetation_resample_fraction"] = float(toks[0])
                elif key == "perturb_intensity":
                    perturb_kwargs["intensity_scale"] = float(toks[0])
                    perturb_kwargs["intensity_offset"] = float(toks[1])
                    perturb_kwargs["intensity_noise_std"] = float(toks[2])
                elif key == "perturb_class_offset":
                    class_offsets.append((toks[0], float(toks[1])))
                elif key in (
                    "seed",
                    "points_per_keyframe",
                ):
                    scalars[key] = int(toks[0])
                elif key in (
                    "speed",
                    "camera_height",
                    "fov_deg",
                    "max_range",
                    "pose_jitter_pos",
                    "pose_jitter_deg",
                ):
                    scalars[key] = float(toks[0])
                else:
                    raise ValueError(f"unknown key {key!r}")
            except (ValueError, IndexError) as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
    if "seed" not in scalars:
        raise DataFormatError(f"{path}: missing required key 'seed'")
    if class_offsets:
        perturb_kwargs["class_intensity_offsets"] = tuple(class_offsets)
    return WorldSpec(
        layout=tuple(layout),
        waypoints=tuple(waypoints),
        revisit_segments=tuple(revisits),
        perturbation=PerturbationSpec(**perturb_kwargs),
        **scalars,
    )


def write_world_spec(spec: WorldSpec, path) -> None:
    lines = [
        f"seed = {spec.seed}",
        f"speed = {spec.speed}",
        f"camera_height = {spec.camera_height}",
        f"fov_deg = {spec.fov_deg}",
        f"max_range = {spec.max_range}",
        f"points_per_keyframe = {spec.points_per_keyframe}",
    ]
    if spec.pose_jitter_pos:
        lines.append(f"pose_jitter_pos = {spec.pose_jitter_pos}")
    if spec.pose_jitter_deg:
        lines.append(f"pose_jitter_deg = {spec.pose_jitter_deg}")
    for wp in spec.waypoints:
        lines.append(f"waypoint = {wp[0]} {wp[1]}")
    for seg in spec.revisit_segments:
        lines.append(f"revisit = {seg[0]} {seg[1]} {seg[2]}")
    for element in spec.layout:
        kind = {Ground: "ground", Building: "building", Tree: "tree"}[type(element)]
        values = " ".join(str(getattr(element, f)) for f in _ELEMENT_FIELDS[kind])
        lines.append(f"{kind} = {values}")
    p = spec.perturbation
    if p.vegetation_resample_fraction:
        lines.append(f"perturb_vegetation = {p.vegetation_resample_fraction}")
    if (p.intensity_scale, p.intensity_offset, p.intensity_noise_std) != (1.0, 0.0, 0.0):
        lines.append(
            f"perturb_intensity = {p.intensity_scale} {p.intensity_offset} {p.intensity_noise_std}"
        )
    for name, off in p.class_intensity_offsets:
        lines.append(f"perturb_class_offset = {name} {off}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
