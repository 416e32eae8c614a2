"""Pipeline configuration: one frozen record stamped into every artifact.

Defaults: 45 m scan range, 1-degree polar filter, 1.5 x 0.75 x 1.5 m voxel
filter (fine axis vertical), 10/45 m intensity-histogram shells, projection
descriptor 8 rings x 16 sectors on 4 x 16 planes, polar-grid descriptor
20 rings x 60 sectors, structure weight 2 in fusion, 10 m ground-truth
radius, 100-keyframe self-match exclusion window.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ConfigError

DESCRIPTOR_KINDS = ("delight", "m2dp", "scan_context")

# Recorded in signature archives so future binarization changes refuse to compare.
BINARIZATION_RULE = "global-mean-strict-greater/1"


@dataclass(frozen=True)
class PipelineConfig:
    scan_range: float = 45.0
    polar_res_deg: float = 1.0
    voxel_cell: tuple[float, float, float] = (1.5, 0.75, 1.5)
    delight_r_inner: float = 10.0
    delight_r_outer: float = 45.0
    m2dp_rings: int = 8
    m2dp_sectors: int = 16
    m2dp_plane_azimuths: int = 4
    m2dp_plane_elevations: int = 16
    sc_rings: int = 20
    sc_sectors: int = 60
    structure_weight: float = 2.0
    gt_threshold: float = 10.0
    exclusion_window: int = 100
    # True: min signature distance over all 4x4 variant pairs (symmetric metric).
    # False: query variant 0 against the 4 reference variants only.
    symmetric_variants: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "voxel_cell", tuple(float(v) for v in self.voxel_cell))
        positive = {
            "scan_range": self.scan_range,
            "polar_res_deg": self.polar_res_deg,
            "delight_r_inner": self.delight_r_inner,
            "delight_r_outer": self.delight_r_outer,
            "m2dp_rings": self.m2dp_rings,
            "m2dp_sectors": self.m2dp_sectors,
            "m2dp_plane_azimuths": self.m2dp_plane_azimuths,
            "m2dp_plane_elevations": self.m2dp_plane_elevations,
            "sc_rings": self.sc_rings,
            "sc_sectors": self.sc_sectors,
            "structure_weight": self.structure_weight,
            "gt_threshold": self.gt_threshold,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if len(self.voxel_cell) != 3 or any(c <= 0 for c in self.voxel_cell):
            raise ConfigError(f"voxel_cell must be 3 positive sizes, got {self.voxel_cell}")
        if self.exclusion_window < 0:
            raise ConfigError("exclusion_window must be >= 0")
        if self.delight_r_inner >= self.delight_r_outer:
            raise ConfigError("delight_r_inner must be smaller than delight_r_outer")
        ncells = 360.0 / self.polar_res_deg
        if abs(ncells - round(ncells)) > 1e-9:
            raise ConfigError(f"polar_res_deg {self.polar_res_deg} must divide 360 evenly")

    def to_json(self) -> str:
        d = asdict(self)
        d["voxel_cell"] = list(d["voxel_cell"])
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad config JSON: {e}") from None
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "voxel_cell" in d:
            d["voxel_cell"] = tuple(d["voxel_cell"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs) if kwargs else self
