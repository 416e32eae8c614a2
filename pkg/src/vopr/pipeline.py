"""End-to-end orchestration shared by the CLI and the test harness."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .archive import SignatureSet
from .config import PipelineConfig
from .descriptors import describe
from .errors import ConfigError, DataFormatError, DegenerateInputError
from .evaluation import (
    GroundTruthRelation,
    PrCurve,
    RecognizedPlace,
    build_ground_truth,
    pr_curve,
    recognized_places,
)
from .ingest import Keyframe
from .matching import (
    DifferenceMatrix,
    MatchResult,
    apply_exclusion,
    build_difference_matrices,
    build_difference_matrix,
    fuse,
    match,
)
from .scan import FilteredScan, imitate_sequence

log = logging.getLogger(__name__)

# The filter each descriptor was designed around; others work but warn.
RECOMMENDED_FILTER = {"delight": "polar", "m2dp": "polar", "scan_context": "voxel"}


def _describe_one(args) -> tuple[int, object | None]:
    scan, kind, config = args
    try:
        return scan.keyframe_id, describe(scan, kind, config)
    except DegenerateInputError:
        return scan.keyframe_id, None


def describe_scans(
    scans: list[FilteredScan],
    kind: str,
    config: PipelineConfig,
    jobs: int = 1,
    on_degenerate: str = "skip",
) -> SignatureSet:
    """Describe every scan; degenerate ones (too few points) are skipped or fatal."""
    if on_degenerate not in ("skip", "error"):
        raise ConfigError(f"on_degenerate must be 'skip' or 'error', got {on_degenerate!r}")
    if kind not in RECOMMENDED_FILTER:
        raise ConfigError(f"unknown descriptor kind {kind!r}")
    recommended = RECOMMENDED_FILTER[kind]
    kinds = {s.filter_kind for s in scans}
    if kinds - {recommended}:
        log.warning(
            "descriptor %s is normally paired with the %s filter, archive has %s",
            kind,
            recommended,
            sorted(kinds),
        )
    work = [(scan, kind, config) for scan in scans]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_describe_one, work, chunksize=8))
    else:
        results = [_describe_one(w) for w in work]
    ids, sigs = [], []
    skipped = []
    for kf_id, sig in results:
        if sig is None:
            skipped.append(kf_id)
        else:
            ids.append(kf_id)
            sigs.append(sig)
    if skipped:
        if on_degenerate == "error":
            raise DegenerateInputError(
                f"{len(skipped)} scan(s) were degenerate (e.g. keyframe {skipped[0]})"
            )
        log.warning("skipped %d degenerate scan(s): keyframes %s", len(skipped), skipped[:10])
    if not sigs:
        raise DegenerateInputError("every scan in the archive was degenerate")
    return SignatureSet.from_signatures(kind, np.asarray(ids), sigs, config)


@dataclass(frozen=True)
class MatchOutput:
    d_structure: DifferenceMatrix | None
    d_intensity: DifferenceMatrix | None
    d_final: DifferenceMatrix  # the matrix the matches were taken from
    matches: MatchResult
    part: str
    same_sequence: bool


def match_signature_sets(
    qset: SignatureSet,
    rset: SignatureSet,
    config: PipelineConfig | None = None,
    part: str = "fused",
    same_sequence: bool = False,
) -> MatchOutput:
    """Build difference matrices for the requested part and take per-query argmins.

    part='fused' runs the weighted row-normalized fusion (the single-matrix
    descriptor uses its one matrix directly); 'structure'/'intensity' match on
    that matrix alone.
    """
    qset.compatible_with(rset)
    config = config or qset.config
    window = config.exclusion_window if same_sequence else 0
    if part == "fused":
        d_s, d_i = build_difference_matrices(qset, rset, config)
        if d_s is None:
            final = d_i
        else:
            final = fuse(d_s, d_i, config.structure_weight)
    elif part in ("structure", "intensity"):
        d = build_difference_matrix(qset, rset, part, config)
        d_s = d if part == "structure" else None
        d_i = d if part == "intensity" else None
        final = d
    else:
        raise ConfigError(f"unknown matching part {part!r}")
    result = match(apply_exclusion(final, window))
    return MatchOutput(d_s, d_i, final, result, part, same_sequence)


@dataclass(frozen=True)
class EvaluationOutput:
    curve: PrCurve
    gt: GroundTruthRelation
    recognized: list[RecognizedPlace]


def evaluate_matches(
    result: MatchResult,
    query_keyframes: list[Keyframe],
    reference_keyframes: list[Keyframe],
    config: PipelineConfig,
    same_sequence: bool = False,
) -> EvaluationOutput:
    """Score a match table against keyframe ground-truth positions."""
    q_pos = _gt_positions(query_keyframes, result.query_ids)
    ref_ids = np.array([kf.id for kf in reference_keyframes], dtype=np.int64)
    r_pos = _gt_positions(reference_keyframes, ref_ids)
    gt = build_ground_truth(
        q_pos,
        r_pos,
        config.gt_threshold,
        result.query_ids,
        ref_ids,
        exclusion_window=config.exclusion_window if same_sequence else 0,
    )
    curve = pr_curve(result, gt)
    recognized = recognized_places(result, q_pos, curve)
    return EvaluationOutput(curve, gt, recognized)


def _gt_positions(keyframes: list[Keyframe], ids: np.ndarray) -> np.ndarray:
    by_id = {kf.id: kf for kf in keyframes}
    out = np.empty((len(ids), 3))
    for i, kf_id in enumerate(ids):
        kf = by_id.get(int(kf_id))
        if kf is None:
            raise DataFormatError(f"keyframe {kf_id} missing from the sequence")
        if kf.gt_position is None:
            raise DataFormatError(f"keyframe {kf_id} has no ground-truth position")
        out[i] = kf.gt_position
    return out


@dataclass(frozen=True)
class PipelineResult:
    scans_query: list[FilteredScan]
    scans_reference: list[FilteredScan]
    signatures_query: SignatureSet
    signatures_reference: SignatureSet
    matching: MatchOutput
    evaluation: EvaluationOutput


def run_pipeline(
    query_keyframes: list[Keyframe],
    reference_keyframes: list[Keyframe] | None,
    kind: str,
    config: PipelineConfig,
    part: str = "fused",
    filter_kind: str | None = None,
    jobs: int = 1,
) -> PipelineResult:
    """imitate -> describe -> match -> evaluate, returning every intermediate.

    With reference_keyframes=None the sequence is matched against itself and
    the temporal exclusion window applies.
    """
    same_sequence = reference_keyframes is None
    filter_kind = filter_kind or RECOMMENDED_FILTER[kind]
    q_scans = imitate_sequence(query_keyframes, config, filter_kind)
    q_sigs = describe_scans(q_scans, kind, config, jobs=jobs)
    if same_sequence:
        r_scans, r_sigs = q_scans, q_sigs
        reference_keyframes = query_keyframes
    else:
        r_scans = imitate_sequence(reference_keyframes, config, filter_kind)
        r_sigs = describe_scans(r_scans, kind, config, jobs=jobs)
    matching = match_signature_sets(q_sigs, r_sigs, config, part, same_sequence)
    evaluation = evaluate_matches(
        matching.matches, query_keyframes, reference_keyframes, config, same_sequence
    )
    return PipelineResult(q_scans, r_scans, q_sigs, r_sigs, matching, evaluation)
