"""Signature distances, query/reference difference matrices, fusion, matching.

Distances: chi-squared for the intensity-histogram descriptor; Euclidean
between L2-normalized vectors otherwise. Multi-variant signatures take the
minimum over variant pairs; the polar-grid descriptor searches all circular
sector shifts instead, with structure and intensity sharing one shift so the
two stay geometrically consistent.

Fusion: fused = structure_weight * row_normalize(structure matrix)
+ row_normalize(intensity matrix), where row_normalize subtracts each row's
mean and divides by its population standard deviation. A constant row
normalizes to all zeros (logged as degenerate).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import SignatureSet
from .config import PipelineConfig
from .errors import ConfigError, DataFormatError, DegenerateInputError

log = logging.getLogger(__name__)

MATRIX_KINDS = ("structure", "intensity", "fused")

# Row std below this (relative to the row's magnitude) counts as constant.
_CONST_ROW_EPS = 1e-12

# Dot-product distances lose ~sqrt(ulp) near zero; entries below this are
# recomputed with the exact difference formula so true duplicates come out 0.
_REFINE_EPS = 1e-4


@dataclass(frozen=True)
class DifferenceMatrix:
    values: np.ndarray  # (Q, R)
    query_ids: np.ndarray  # (Q,)
    reference_ids: np.ndarray  # (R,)
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in MATRIX_KINDS:
            raise ConfigError(f"unknown matrix kind {self.kind!r}")
        if self.values.shape != (len(self.query_ids), len(self.reference_ids)):
            raise DataFormatError(
                f"matrix shape {self.values.shape} does not match id lists "
                f"({len(self.query_ids)}, {len(self.reference_ids)})"
            )


@dataclass(frozen=True)
class MatchResult:
    query_ids: np.ndarray  # (Q,)
    best_reference_ids: np.ndarray  # (Q,), -1 when a row has no admissible reference
    differences: np.ndarray  # (Q,), +inf when no admissible reference


# --- pairwise distances ------------------------------------------------------

def chi_squared_distance(h1, h2) -> float:
    """Sum of (a-b)^2 / (a+b) over bins; empty bins (a+b == 0) contribute 0."""
    a = np.asarray(h1, dtype=np.float64).ravel()
    b = np.asarray(h2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataFormatError(f"histogram lengths differ: {a.shape} vs {b.shape}")
    denom = a + b
    mask = denom > 0
    diff = a[mask] - b[mask]
    return float(np.sum(diff * diff / denom[mask]))


def euclidean_signature_distance(s1, s2) -> float:
    """Euclidean distance between L2-normalized vectors, in [0, 2].

    Convention for empty scans: a zero vector is at distance 2 from any
    nonzero vector and at distance 0 from another zero vector.
    """
    a = np.asarray(s1, dtype=np.float64).ravel()
    b = np.asarray(s2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataFormatError(f"signature lengths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 0.0
    if na == 0.0 or nb == 0.0:
        return 2.0
    return float(np.linalg.norm(a / na - b / nb))


def min_variant_distance(a_variants, b_variants, metric, symmetric: bool = True) -> float:
    """Minimum metric distance over variant pairs.

    symmetric=True: all pairs (4x4). symmetric=False: variant 0 of the query
    against every variant of the reference (the faithful 1x4 form).
    """
    a = np.asarray(a_variants)
    b = np.asarray(b_variants)
    if a.shape != b.shape:
        raise ConfigError(f"variant stacks differ in shape: {a.shape} vs {b.shape}")
    query_variants = range(a.shape[0]) if symmetric else (0,)
    return min(metric(a[i], b[j]) for i in query_variants for j in range(b.shape[0]))


def scan_context_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Min over all circular column shifts of b of the normalized Euclidean distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DataFormatError(f"grid shapes differ: {a.shape} vs {b.shape}")
    return min(
        euclidean_signature_distance(a, np.roll(b, k, axis=1)) for k in range(a.shape[1])
    )


# --- batched matrix construction ---------------------------------------------

def _unit_rows(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize rows to unit L2 norm; zero rows stay zero (flagged separately)."""
    norms = np.linalg.norm(flat, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return flat / safe[:, None], zero


def _distance_from_dots(dots: np.ndarray, qzero: np.ndarray, rzero: np.ndarray) -> np.ndarray:
    """Convert unit-vector dot products (Q, R) to distances, honoring zero-vector rules."""
    d = np.sqrt(np.maximum(2.0 - 2.0 * dots, 0.0))
    both = qzero[:, None] & rzero[None, :]
    either = qzero[:, None] ^ rzero[None, :]
    d[either] = 2.0
    d[both] = 0.0
    return d


def _euclidean_min_variant_matrix(
    q: np.ndarray, r: np.ndarray, symmetric: bool
) -> np.ndarray:
    """(Q, R) min normalized-Euclidean distance over variant pairs of stacked (N, V, D)."""
    nq, nv, _ = q.shape
    qf = q.reshape(nq, nv, -1).astype(np.float64)
    rf = r.reshape(r.shape[0], nv, -1).astype(np.float64)
    qu, qz = _unit_rows(qf.reshape(nq * nv, -1))
    ru, rz = _unit_rows(rf.reshape(r.shape[0] * nv, -1))
    dots = qu @ ru.T  # (Q*V, R*V)
    d = _distance_from_dots(dots, qz, rz)
    d = d.reshape(nq, nv, r.shape[0], nv)
    if not symmetric:
        d = d[:, :1]
    out = d.min(axis=(1, 3))
    q_variants = range(nv) if symmetric else (0,)
    for qi, rj in np.argwhere(out < _REFINE_EPS):
        out[qi, rj] = min(
            euclidean_signature_distance(qf[qi, i], rf[rj, j])
            for i in q_variants
            for j in range(nv)
        )
    return out


def _chi2_min_variant_matrix(q: np.ndarray, r: np.ndarray, symmetric: bool) -> np.ndarray:
    """(Q, R) min chi-squared over variant pairs of stacked histograms (N, V, ...)."""
    nq, nv = q.shape[0], q.shape[1]
    nr = r.shape[0]
    qf = q.reshape(nq, nv, -1).astype(np.float64)
    rf = r.reshape(nr, nv, -1).astype(np.float64)
    out = np.full((nq, nr), np.inf)
    query_variants = range(nv) if symmetric else (0,)
    for i in query_variants:
        for j in range(nv):
            a = qf[:, i][:, None, :]  # (Q, 1, D)
            b = rf[:, j][None, :, :]  # (1, R, D)
            # chunk over queries to bound the (Q, R, D) temporaries
            for s in range(0, nq, 8):
                e = min(s + 8, nq)
                denom = a[s:e] + b
                diff = a[s:e] - b
                with np.errstate(invalid="ignore", divide="ignore"):
                    term = np.where(denom > 0, diff * diff / np.where(denom > 0, denom, 1.0), 0.0)
                np.minimum(out[s:e], term.sum(axis=2), out=out[s:e])
    return out


def _sc_shift_distances(
    q_grids: np.ndarray, r_grids: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances (Q, R, S) for every circular sector shift of the references.

    Returns (distances, qzero, rzero). Entry [qi, rj, k] is the normalized
    Euclidean distance between query qi and reference rj shifted by k columns.
    """
    nq, rings, sectors = q_grids.shape
    nr = r_grids.shape[0]
    qf = q_grids.reshape(nq, -1).astype(np.float64)
    qu, qz = _unit_rows(qf)
    ru, rz = _unit_rows(r_grids.reshape(nr, -1).astype(np.float64))
    # rolling the reference by k equals rolling the query by -k: precompute all
    # query shifts once and hit the references with a single matmul
    qshift = np.empty((nq, sectors, rings * sectors))
    qgrid_u = qu.reshape(nq, rings, sectors)
    for k in range(sectors):
        qshift[:, k, :] = np.roll(qgrid_u, -k, axis=2).reshape(nq, -1)
    dots = qshift.reshape(nq * sectors, -1) @ ru.T  # (Q*S, R)
    dots = dots.reshape(nq, sectors, nr).transpose(0, 2, 1)  # (Q, R, S)
    d = np.sqrt(np.maximum(2.0 - 2.0 * dots, 0.0))
    both = qz[:, None] & rz[None, :]
    either = qz[:, None] ^ rz[None, :]
    d[either] = 2.0
    d[both] = 0.0
    return d, qz, rz


def _payload_pair(qset: SignatureSet, rset: SignatureSet, part: str) -> tuple[np.ndarray, np.ndarray]:
    if part not in ("structure", "intensity"):
        raise ConfigError(f"part must be structure or intensity, got {part!r}")
    if qset.kind == "delight":
        if part == "structure":
            raise ConfigError("the intensity-histogram descriptor has no structure part")
        return qset.payload["histograms"], rset.payload["histograms"]
    return qset.payload[part], rset.payload[part]


def build_difference_matrix(
    qset: SignatureSet, rset: SignatureSet, part: str, config: PipelineConfig | None = None
) -> DifferenceMatrix:
    """Single-part difference matrix, searched independently of the other part."""
    qset.compatible_with(rset)
    config = config or qset.config
    if len(qset) == 0 or len(rset) == 0:
        raise DegenerateInputError("empty query or reference signature set")
    q, r = _payload_pair(qset, rset, part)
    if qset.kind == "delight":
        values = _chi2_min_variant_matrix(q, r, config.symmetric_variants)
    elif qset.kind == "m2dp":
        values = _euclidean_min_variant_matrix(q, r, config.symmetric_variants)
    else:
        d, _, _ = _sc_shift_distances(q, r)
        values = d.min(axis=2)
        best = np.argmin(d, axis=2)
        qf = q.astype(np.float64)
        rf = r.astype(np.float64)
        for qi, rj in np.argwhere(values < _REFINE_EPS):
            values[qi, rj] = euclidean_signature_distance(
                qf[qi], np.roll(rf[rj], best[qi, rj], axis=1)
            )
    return DifferenceMatrix(values, qset.keyframe_ids, rset.keyframe_ids, part)


def build_difference_matrices(
    qset: SignatureSet, rset: SignatureSet, config: PipelineConfig | None = None
) -> tuple[DifferenceMatrix | None, DifferenceMatrix]:
    """(structure matrix, intensity matrix) for the fusion path.

    The intensity-histogram descriptor has no structure part and returns
    (None, matrix). The polar-grid descriptor picks one sector shift per
    pair by the minimum combined structure+intensity distance.
    """
    qset.compatible_with(rset)
    config = config or qset.config
    if len(qset) == 0 or len(rset) == 0:
        raise DegenerateInputError("empty query or reference signature set")
    qids, rids = qset.keyframe_ids, rset.keyframe_ids
    if qset.kind == "delight":
        q, r = qset.payload["histograms"], rset.payload["histograms"]
        d = _chi2_min_variant_matrix(q, r, config.symmetric_variants)
        return None, DifferenceMatrix(d, qids, rids, "intensity")
    if qset.kind == "m2dp":
        ds = _euclidean_min_variant_matrix(
            qset.payload["structure"], rset.payload["structure"], config.symmetric_variants
        )
        di = _euclidean_min_variant_matrix(
            qset.payload["intensity"], rset.payload["intensity"], config.symmetric_variants
        )
        return (
            DifferenceMatrix(ds, qids, rids, "structure"),
            DifferenceMatrix(di, qids, rids, "intensity"),
        )
    q_struct = qset.payload["structure"]
    r_struct = rset.payload["structure"]
    q_int = qset.payload["intensity"].astype(np.float64)
    r_int = rset.payload["intensity"].astype(np.float64)
    ds_all, _, _ = _sc_shift_distances(q_struct, r_struct)
    di_all, _, _ = _sc_shift_distances(q_int, r_int)
    best = np.argmin(ds_all + di_all, axis=2)
    take = np.ogrid[: ds_all.shape[0], : ds_all.shape[1]]
    ds = ds_all[take[0], take[1], best]
    di = di_all[take[0], take[1], best]
    for qi, rj in np.argwhere((ds < _REFINE_EPS) | (di < _REFINE_EPS)):
        k = best[qi, rj]
        ds[qi, rj] = euclidean_signature_distance(
            q_struct[qi], np.roll(r_struct[rj], k, axis=1)
        )
        di[qi, rj] = euclidean_signature_distance(q_int[qi], np.roll(r_int[rj], k, axis=1))
    return (
        DifferenceMatrix(ds, qids, rids, "structure"),
        DifferenceMatrix(di, qids, rids, "intensity"),
    )


# --- fusion and matching -----------------------------------------------------

def row_normalize(values: np.ndarray) -> np.ndarray:
    """Per row: subtract the mean, divide by the population std; constant rows -> 0."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=1, keepdims=True)
    std = values.std(axis=1, keepdims=True)
    scale = np.maximum(np.abs(mean), 1.0)
    degenerate = (std <= _CONST_ROW_EPS * scale).ravel()
    if np.any(degenerate):
        log.warning("row normalization: %d constant row(s) set to zero", degenerate.sum())
    out = np.zeros_like(values)
    ok = ~degenerate
    out[ok] = (values[ok] - mean[ok]) / std[ok]
    return out


def fuse(
    d_structure: DifferenceMatrix, d_intensity: DifferenceMatrix, structure_weight: float = 2.0
) -> DifferenceMatrix:
    if d_structure.values.shape != d_intensity.values.shape:
        raise DataFormatError(
            f"matrix shapes differ: {d_structure.values.shape} vs {d_intensity.values.shape}"
        )
    if not np.array_equal(d_structure.query_ids, d_intensity.query_ids) or not np.array_equal(
        d_structure.reference_ids, d_intensity.reference_ids
    ):
        raise DataFormatError("difference matrices index different keyframes")
    fused = structure_weight * row_normalize(d_structure.values) + row_normalize(
        d_intensity.values
    )
    return DifferenceMatrix(fused, d_structure.query_ids, d_structure.reference_ids, "fused")


def apply_exclusion(d: DifferenceMatrix, window: int) -> DifferenceMatrix:
    """Mask references within +-window keyframe ids of each query (same-sequence runs)."""
    if window <= 0:
        return d
    gap = np.abs(d.query_ids[:, None] - d.reference_ids[None, :])
    values = np.where(gap < window, np.inf, d.values)
    return DifferenceMatrix(values, d.query_ids, d.reference_ids, d.kind)


def write_matrix_csv(d: DifferenceMatrix, path, config: PipelineConfig) -> None:
    """Row = query id, header = reference ids; first line records the config."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config {config.fingerprint()} kind {d.kind} json {config.to_json()}\n")
        w = csv.writer(f)
        w.writerow(["query_id"] + [str(int(r)) for r in d.reference_ids])
        for qi, qid in enumerate(d.query_ids):
            w.writerow([str(int(qid))] + [repr(float(v)) for v in d.values[qi]])


def read_matrix_csv(path) -> tuple[DifferenceMatrix, PipelineConfig]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        toks = header.split()
        if (
            not header.startswith("# config ")
            or len(toks) != 7
            or toks[3] != "kind"
            or toks[5] != "json"
        ):
            raise DataFormatError(f"{path}:1: bad config header")
        kind = toks[4]
        try:
            config = PipelineConfig.from_json(toks[6])
        except ConfigError as e:
            raise DataFormatError(f"{path}:1: {e}") from None
        if config.fingerprint() != toks[2]:
            raise DataFormatError(f"{path}:1: config fingerprint mismatch")
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "query_id":
        raise DataFormatError(f"{path}: missing column header")
    try:
        reference_ids = np.array([int(c) for c in rows[0][1:]], dtype=np.int64)
        query_ids = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
        values = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
    except (ValueError, IndexError) as e:
        raise DataFormatError(f"{path}: {e}") from None
    return DifferenceMatrix(values, query_ids, reference_ids, kind), config


def write_matches_csv(
    result: MatchResult, path, config: PipelineConfig, part: str, same_sequence: bool
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(
            f"# config {config.fingerprint()} part {part} "
            f"same_sequence {int(same_sequence)} json {config.to_json()}\n"
        )
        w = csv.writer(f)
        w.writerow(["query_id", "best_reference_id", "difference"])
        for qi, qid in enumerate(result.query_ids):
            diff = result.differences[qi]
            w.writerow(
                [
                    str(int(qid)),
                    str(int(result.best_reference_ids[qi])),
                    repr(float(diff)) if np.isfinite(diff) else "inf",
                ]
            )


def read_matches_csv(path) -> tuple[MatchResult, PipelineConfig, str, bool]:
    """Returns (matches, config, part, same_sequence)."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        toks = header.split()
        if (
            not header.startswith("# config ")
            or len(toks) != 9
            or toks[3] != "part"
            or toks[5] != "same_sequence"
            or toks[7] != "json"
        ):
            raise DataFormatError(f"{path}:1: bad config header")
        try:
            part, same_sequence = toks[4], bool(int(toks[6]))
            config = PipelineConfig.from_json(toks[8])
        except (ValueError, ConfigError) as e:
            raise DataFormatError(f"{path}:1: {e}") from None
        if config.fingerprint() != toks[2]:
            raise DataFormatError(f"{path}:1: config fingerprint mismatch")
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["query_id", "best_reference_id", "difference"]:
        raise DataFormatError(f"{path}: missing column header")
    try:
        query_ids = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
        best = np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
        diffs = np.array([float(r[2]) for r in rows[1:]])
    except (ValueError, IndexError) as e:
        raise DataFormatError(f"{path}: {e}") from None
    return MatchResult(query_ids, best, diffs), config, part, same_sequence


def match(d: DifferenceMatrix) -> MatchResult:
    """Per query: the reference with the smallest difference; ties -> smallest id."""
    if d.values.size == 0:
        raise DegenerateInputError("cannot match an empty difference matrix")
    nq = d.values.shape[0]
    best_ids = np.empty(nq, dtype=np.int64)
    best_vals = np.empty(nq)
    # order columns by reference id so the first argmin hit is the smallest id
    col_order = np.argsort(d.reference_ids, kind="stable")
    ordered_vals = d.values[:, col_order]
    ordered_ids = d.reference_ids[col_order]
    for qi in range(nq):
        row = ordered_vals[qi]
        j = int(np.argmin(row))
        if not np.isfinite(row[j]):
            best_ids[qi] = -1
            best_vals[qi] = np.inf
        else:
            best_ids[qi] = ordered_ids[j]
            best_vals[qi] = row[j]
    return MatchResult(d.query_ids.copy(), best_ids, best_vals)
