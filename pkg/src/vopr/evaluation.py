"""Score matches against ground-truth positions.

Two places count as the same iff their ground-truth distance is strictly
below the threshold. The precision-recall sweep accepts matches whose
difference value is at or below a moving threshold; recall is measured
against the queries that have at least one admissible true reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DegenerateInputError
from .matching import MatchResult


@dataclass(frozen=True)
class GroundTruthRelation:
    matrix: np.ndarray  # (Q, R) bool
    query_ids: np.ndarray
    reference_ids: np.ndarray
    threshold: float


@dataclass(frozen=True)
class PrCurve:
    thresholds: np.ndarray  # sorted difference values swept as acceptance cutoffs
    precisions: np.ndarray
    recalls: np.ndarray
    auc: float
    max_recall_at_full_precision: float
    # Difference cutoff achieving that recall with zero false positives (None if recall 0).
    operating_threshold: float | None


def build_ground_truth(
    query_positions: np.ndarray,
    reference_positions: np.ndarray,
    threshold: float,
    query_ids: np.ndarray,
    reference_ids: np.ndarray,
    exclusion_window: int = 0,
) -> GroundTruthRelation:
    """Pairwise strict-inequality distance test, optionally masking nearby ids."""
    qp = np.asarray(query_positions, dtype=np.float64)
    rp = np.asarray(reference_positions, dtype=np.float64)
    if qp.ndim != 2 or qp.shape[1] != 3 or rp.ndim != 2 or rp.shape[1] != 3:
        raise DataFormatError("positions must be (N, 3) arrays")
    if not (np.all(np.isfinite(qp)) and np.all(np.isfinite(rp))):
        raise DataFormatError("ground-truth positions contain non-finite values")
    dist = np.linalg.norm(qp[:, None, :] - rp[None, :, :], axis=2)
    rel = dist < threshold
    qids = np.asarray(query_ids, dtype=np.int64)
    rids = np.asarray(reference_ids, dtype=np.int64)
    if exclusion_window > 0:
        gap = np.abs(qids[:, None] - rids[None, :])
        rel = rel & (gap >= exclusion_window)
    return GroundTruthRelation(rel, qids, rids, float(threshold))


def _correct_flags(result: MatchResult, gt: GroundTruthRelation) -> np.ndarray:
    """Per query: does the matched reference lie within the GT threshold?"""
    if not np.array_equal(result.query_ids, gt.query_ids):
        raise DataFormatError("match result and ground truth index different queries")
    rid_to_col = {int(rid): j for j, rid in enumerate(gt.reference_ids)}
    correct = np.zeros(len(result.query_ids), dtype=bool)
    for qi, rid in enumerate(result.best_reference_ids):
        if rid < 0:
            continue
        col = rid_to_col.get(int(rid))
        if col is None:
            raise DataFormatError(f"matched reference id {rid} missing from ground truth")
        correct[qi] = gt.matrix[qi, col]
    return correct


def pr_curve(result: MatchResult, gt: GroundTruthRelation) -> PrCurve:
    """Sweep the acceptance threshold over the observed match difference values."""
    correct = _correct_flags(result, gt)
    matchable = gt.matrix.any(axis=1)
    n_matchable = int(matchable.sum())
    if n_matchable == 0:
        raise DegenerateInputError(
            "no query has any true reference; recall is undefined"
        )
    finite = np.isfinite(result.differences)
    thresholds = np.unique(result.differences[finite])
    if thresholds.size == 0:
        raise DegenerateInputError("no query produced a finite match difference")

    precisions = np.empty(thresholds.size)
    recalls = np.empty(thresholds.size)
    max_recall_full = 0.0
    operating = None
    for k, tau in enumerate(thresholds):
        accepted = finite & (result.differences <= tau)
        n_acc = int(accepted.sum())
        n_tp = int((accepted & correct).sum())
        precisions[k] = n_tp / n_acc
        recalls[k] = n_tp / n_matchable
        if n_tp == n_acc and recalls[k] > max_recall_full:
            max_recall_full = float(recalls[k])
            operating = float(tau)

    # trapezoid over (recall, precision), anchored at recall 0 with the best precision
    r_pts = np.concatenate([[0.0], recalls])
    p_pts = np.concatenate([[precisions.max()], precisions])
    auc = float(np.sum(np.diff(r_pts) * (p_pts[1:] + p_pts[:-1]) / 2.0))
    return PrCurve(thresholds, precisions, recalls, auc, max_recall_full, operating)


@dataclass(frozen=True)
class RecognizedPlace:
    query_id: int
    gt_position: np.ndarray
    best_reference_id: int
    difference: float
    recognized: bool


def recognized_places(
    result: MatchResult, query_positions: np.ndarray, curve: PrCurve
) -> list[RecognizedPlace]:
    """Per-query acceptance flags at the zero-false-positive operating point."""
    tau = curve.operating_threshold
    out = []
    for qi, qid in enumerate(result.query_ids):
        diff = float(result.differences[qi])
        flag = tau is not None and np.isfinite(diff) and diff <= tau
        out.append(
            RecognizedPlace(
                int(qid),
                np.asarray(query_positions[qi], dtype=np.float64),
                int(result.best_reference_ids[qi]),
                diff,
                bool(flag),
            )
        )
    return out


# --- CSV outputs --------------------------------------------------------------

def write_pr_curve_csv(curve: PrCurve, path, fingerprint: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config {fingerprint}\n")
        w = csv.writer(f)
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(curve.thresholds, curve.precisions, curve.recalls):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])


def write_summary_csv(curve: PrCurve, path, fingerprint: str, extra: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config {fingerprint}\n")
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerow(["auc", repr(float(curve.auc))])
        w.writerow(["max_recall_at_full_precision", repr(float(curve.max_recall_at_full_precision))])
        w.writerow(
            [
                "operating_threshold",
                "" if curve.operating_threshold is None else repr(float(curve.operating_threshold)),
            ]
        )
        for key, value in (extra or {}).items():
            w.writerow([key, value])


def write_recognized_csv(records: list[RecognizedPlace], path, fingerprint: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config {fingerprint}\n")
        w = csv.writer(f)
        w.writerow(["query_id", "gt_x", "gt_y", "gt_z", "best_reference_id", "difference", "recognized"])
        for rec in records:
            w.writerow(
                [
                    rec.query_id,
                    repr(float(rec.gt_position[0])),
                    repr(float(rec.gt_position[1])),
                    repr(float(rec.gt_position[2])),
                    rec.best_reference_id,
                    repr(float(rec.difference)) if np.isfinite(rec.difference) else "inf",
                    int(rec.recognized),
                ]
            )


def read_pr_summary(path) -> dict:
    """Parse a summary.csv back into a dict (used by tests and tooling)."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        rows = [line for line in f if not line.startswith("#")]
    for row in csv.reader(rows):
        if not row or row[0] == "metric":
            continue
        if row[1] == "":
            out[row[0]] = None
            continue
        try:
            out[row[0]] = float(row[1])
        except ValueError:
            out[row[0]] = row[1]
    return out
