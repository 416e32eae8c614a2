"""Signature archives: all signatures of a sequence plus the config that made them.

Stored as an ``.npz`` with a JSON ``meta`` entry (descriptor kind, binarization
rule, full pipeline config + fingerprint) and stacked payload arrays. Archives
refuse to be compared unless kind and config fingerprint match.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import BINARIZATION_RULE, DESCRIPTOR_KINDS, PipelineConfig
from .errors import ConfigError, DataFormatError

_PAYLOAD_FIELDS = {
    "delight": ("histograms",),
    "m2dp": ("structure", "intensity"),
    "scan_context": ("structure", "intensity"),
}


@dataclass(frozen=True)
class SignatureSet:
    """Signatures for a set of keyframes, stacked along the first axis."""

    kind: str
    keyframe_ids: np.ndarray  # (N,) int64
    payload: dict[str, np.ndarray]
    config: PipelineConfig

    def __post_init__(self) -> None:
        if self.kind not in DESCRIPTOR_KINDS:
            raise ConfigError(f"unknown descriptor kind {self.kind!r}")
        expected = _PAYLOAD_FIELDS[self.kind]
        if set(self.payload) != set(expected):
            raise DataFormatError(
                f"{self.kind} payload needs fields {expected}, got {sorted(self.payload)}"
            )
        ids = np.asarray(self.keyframe_ids, dtype=np.int64)
        n = ids.shape[0]
        for name, arr in self.payload.items():
            if arr.shape[0] != n:
                raise DataFormatError(
                    f"payload {name} has {arr.shape[0]} entries for {n} keyframes"
                )
        object.__setattr__(self, "keyframe_ids", ids)

    def __len__(self) -> int:
        return int(self.keyframe_ids.shape[0])

    @classmethod
    def from_signatures(cls, kind, keyframe_ids, signatures, config) -> "SignatureSet":
        if len(signatures) == 0:
            raise DataFormatError("cannot build an empty signature set")
        if kind == "delight":
            payload = {"histograms": np.stack([s.histograms for s in signatures])}
        elif kind in ("m2dp", "scan_context"):
            payload = {
                "structure": np.stack([s.structure for s in signatures]),
                "intensity": np.stack([s.intensity for s in signatures]),
            }
        else:
            raise ConfigError(f"unknown descriptor kind {kind!r}")
        return cls(kind, np.asarray(keyframe_ids, dtype=np.int64), payload, config)

    def compatible_with(self, other: "SignatureSet") -> None:
        """Raise unless the two archives may be matched against each other."""
        if self.kind != other.kind:
            raise ConfigError(
                f"descriptor kinds differ: {self.kind} vs {other.kind}"
            )
        if self.config.fingerprint() != other.config.fingerprint():
            raise ConfigError(
                "config fingerprints differ: "
                f"{self.config.fingerprint()} vs {other.config.fingerprint()}"
            )

    def save(self, path) -> None:
        meta = {
            "descriptor": self.kind,
            "binarization_rule": BINARIZATION_RULE,
            "fingerprint": self.config.fingerprint(),
            "config": json.loads(self.config.to_json()),
        }
        with open(path, "wb") as f:
            np.savez_compressed(
                f,
                meta=np.array(json.dumps(meta, sort_keys=True)),
                keyframe_ids=self.keyframe_ids,
                **self.payload,
            )

    @classmethod
    def load(cls, path) -> "SignatureSet":
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as data:
                if "meta" not in data or "keyframe_ids" not in data:
                    raise DataFormatError(f"{path}: not a signature archive")
                meta = json.loads(str(data["meta"]))
                kind = meta.get("descriptor")
                if kind not in DESCRIPTOR_KINDS:
                    raise DataFormatError(f"{path}: unknown descriptor {kind!r}")
                if meta.get("binarization_rule") != BINARIZATION_RULE:
                    raise ConfigError(
                        f"{path}: binarization rule {meta.get('binarization_rule')!r} "
                        f"not supported (expected {BINARIZATION_RULE!r})"
                    )
                config = PipelineConfig.from_json(json.dumps(meta["config"]))
                if config.fingerprint() != meta.get("fingerprint"):
                    raise DataFormatError(f"{path}: config fingerprint mismatch")
                payload = {
                    name: data[name] for name in _PAYLOAD_FIELDS[kind] if name in data
                }
                return cls(kind, data["keyframe_ids"], payload, config)
        except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
            raise DataFormatError(f"{path}: cannot read signature archive: {e}") from None
