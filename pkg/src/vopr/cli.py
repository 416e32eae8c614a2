"""Command-line pipeline: imitate, describe, match, evaluate, pipeline, synth.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 degenerate computation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .archive import SignatureSet
from .config import DESCRIPTOR_KINDS, PipelineConfig
from .errors import ConfigError, DataFormatError, DegenerateInputError
from .evaluation import write_pr_curve_csv, write_recognized_csv, write_summary_csv
from .ingest import load_sequence, write_sequence
from .matching import read_matches_csv, write_matches_csv, write_matrix_csv
from .pipeline import (
    describe_scans,
    evaluate_matches,
    match_signature_sets,
    run_pipeline,
)
from .scan import FILTER_KINDS, imitate_sequence, read_scan_archive, write_scan_archive
from .synth import (
    generate,
    load_world_spec,
    perturb,
    reversed_spec,
    seasonal_perturbation,
    street_world,
    write_world_spec,
)

_CONFIG_FLAGS = (
    ("--scan-range", "scan_range", float, "scan radius in meters"),
    ("--polar-res", "polar_res_deg", float, "polar filter resolution in degrees"),
    ("--delight-inner", "delight_r_inner", float, "inner shell radius in meters"),
    ("--delight-outer", "delight_r_outer", float, "outer shell radius in meters"),
    ("--m2dp-rings", "m2dp_rings", int, "projection bin rings"),
    ("--m2dp-sectors", "m2dp_sectors", int, "projection bin sectors"),
    ("--m2dp-plane-azimuths", "m2dp_plane_azimuths", int, "projection plane azimuth count"),
    ("--m2dp-plane-elevations", "m2dp_plane_elevations", int, "projection plane elevation count"),
    ("--sc-rings", "sc_rings", int, "polar-grid rings"),
    ("--sc-sectors", "sc_sectors", int, "polar-grid sectors"),
    ("--structure-weight", "structure_weight", float, "structure weight in fusion"),
    ("--gt-threshold", "gt_threshold", float, "ground-truth distance threshold in meters"),
    ("--exclusion-window", "exclusion_window", int, "same-sequence id exclusion window"),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise ConfigError(message)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", metavar="FILE", help="JSON config file (flags override it)")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        g.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)
    g.add_argument(
        "--voxel-cell",
        dest="voxel_cell",
        type=float,
        nargs=3,
        metavar=("DX", "DY", "DZ"),
        default=None,
        help="voxel filter cell sizes in meters",
    )
    g.add_argument(
        "--variant-match",
        choices=("symmetric", "query0"),
        default=None,
        help="min over all variant pairs (symmetric) or query variant 0 only",
    )


def _collect_overrides(args) -> dict:
    overrides = {}
    for _, dest, _, _ in _CONFIG_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dest] = value
    if getattr(args, "voxel_cell", None) is not None:
        overrides["voxel_cell"] = tuple(args.voxel_cell)
    if getattr(args, "variant_match", None) is not None:
        overrides["symmetric_variants"] = args.variant_match == "symmetric"
    return overrides


def _resolve_config(args, base: PipelineConfig | None = None) -> PipelineConfig:
    """defaults < config file < flags; downstream stages must agree with the artifact."""
    overrides = _collect_overrides(args)
    file_cfg = PipelineConfig.from_file(args.config) if getattr(args, "config", None) else None
    if base is None:
        return (file_cfg or PipelineConfig()).with_overrides(**overrides)
    if file_cfg is not None and file_cfg.fingerprint() != base.fingerprint():
        raise ConfigError(
            "config file fingerprint does not match the input artifact "
            f"({file_cfg.fingerprint()} vs {base.fingerprint()})"
        )
    candidate = base.with_overrides(**overrides)
    if candidate.fingerprint() != base.fingerprint():
        raise ConfigError(
            "flags change the configuration recorded in the input artifact; "
            "rerun the pipeline from the imitate stage instead"
        )
    return base


def _figures_enabled(args) -> bool:
    return not getattr(args, "no_figures", False)


def cmd_imitate(args) -> int:
    config = _resolve_config(args)
    keyframes = load_sequence(args.input)
    if not keyframes:
        raise DataFormatError(f"{args.input}: no keyframes")
    scans = imitate_sequence(keyframes, config, args.filter)
    counts = np.array([len(s.points) for s in scans])
    if args.out:
        write_scan_archive(scans, args.out, config)
        print(f"wrote {len(scans)} scans to {args.out}")
    if args.split_dir:
        out_dir = Path(args.split_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for scan in scans:
            write_scan_archive([scan], out_dir / f"scan_{scan.keyframe_id:06d}.sca", config)
        print(f"wrote {len(scans)} per-keyframe scan files to {out_dir}")
    print(
        f"filtered points per scan: mean {counts.mean():.1f}, "
        f"min {counts.min()}, max {counts.max()} ({args.filter} filter)"
    )
    return 0


def cmd_describe(args) -> int:
    scans, archive_cfg = read_scan_archive(args.scans)
    config = _resolve_config(args, base=archive_cfg)
    sigs = describe_scans(
        scans, args.descriptor, config, jobs=args.jobs, on_degenerate=args.on_degenerate
    )
    sigs.save(args.out)
    print(f"wrote {len(sigs)} {args.descriptor} signatures to {args.out}")
    return 0


def cmd_match(args) -> int:
    qset = SignatureSet.load(args.query)
    rset = SignatureSet.load(args.reference)
    config = _resolve_config(args, base=qset.config)
    out = match_signature_sets(
        qset, rset, config, part=args.part, same_sequence=args.same_sequence
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if out.d_structure is not None:
        write_matrix_csv(out.d_structure, out_dir / "d_structure.csv", config)
    if out.d_intensity is not None:
        write_matrix_csv(out.d_intensity, out_dir / "d_intensity.csv", config)
    write_matrix_csv(out.d_final, out_dir / "d_final.csv", config)
    write_matches_csv(
        out.matches, out_dir / "matches.csv", config, args.part, args.same_sequence
    )
    if _figures_enabled(args):
        from .report import save_difference_matrix_figure

        save_difference_matrix_figure(
            out.d_final.values, out_dir / "d_final.png", f"{qset.kind} ({args.part})"
        )
    print(f"matched {len(qset)} queries against {len(rset)} references -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    result, config, part, same_sequence = read_matches_csv(args.matches)
    config = _resolve_config(args, base=config)
    query_kfs = load_sequence(args.query_keyframes)
    ref_path = args.reference_keyframes or args.query_keyframes
    ref_kfs = load_sequence(ref_path)
    ev = evaluate_matches(result, query_kfs, ref_kfs, config, same_sequence)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fp = config.fingerprint()
    write_pr_curve_csv(ev.curve, out_dir / "pr_curve.csv", fp)
    write_summary_csv(
        ev.curve,
        out_dir / "summary.csv",
        fp,
        extra={"part": part, "n_queries": len(result.query_ids)},
    )
    write_recognized_csv(ev.recognized, out_dir / "recognized.csv", fp)
    if _figures_enabled(args):
        from .report import save_pr_curve_figure, save_recognized_figure

        title = f"{part} matching"
        save_pr_curve_figure(ev.curve, out_dir / "pr_curve.png", title)
        ref_positions = np.array(
            [kf.gt_position for kf in ref_kfs if kf.gt_position is not None]
        )
        save_recognized_figure(ev.recognized, ref_positions, out_dir / "recognized.png", title)
    print(
        f"AUC {ev.curve.auc:.4f}, max recall at full precision "
        f"{ev.curve.max_recall_at_full_precision:.4f} -> {out_dir}"
    )
    return 0


def cmd_pipeline(args) -> int:
    config = _resolve_config(args)
    query_kfs = load_sequence(args.query)
    ref_kfs = load_sequence(args.reference) if args.reference else None
    same_sequence = ref_kfs is None
    result = run_pipeline(
        query_kfs,
        ref_kfs,
        args.descriptor,
        config,
        part=args.part,
        filter_kind=args.filter,
        jobs=args.jobs,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scan_archive(result.scans_query, out_dir / "scans_query.sca", config)
    result.signatures_query.save(out_dir / "sigs_query.npz")
    if not same_sequence:
        write_scan_archive(result.scans_reference, out_dir / "scans_reference.sca", config)
        result.signatures_reference.save(out_dir / "sigs_reference.npz")
    m = result.matching
    if m.d_structure is not None:
        write_matrix_csv(m.d_structure, out_dir / "d_structure.csv", config)
    if m.d_intensity is not None:
        write_matrix_csv(m.d_intensity, out_dir / "d_intensity.csv", config)
    write_matrix_csv(m.d_final, out_dir / "d_final.csv", config)
    write_matches_csv(m.matches, out_dir / "matches.csv", config, args.part, same_sequence)
    fp = config.fingerprint()
    write_pr_curve_csv(result.evaluation.curve, out_dir / "pr_curve.csv", fp)
    write_summary_csv(
        result.evaluation.curve,
        out_dir / "summary.csv",
        fp,
        extra={"part": args.part, "n_queries": len(m.matches.query_ids)},
    )
    write_recognized_csv(result.evaluation.recognized, out_dir / "recognized.csv", fp)
    if _figures_enabled(args):
        from .report import (
            save_difference_matrix_figure,
            save_pr_curve_figure,
            save_recognized_figure,
        )

        title = f"{args.descriptor} ({args.part})"
        save_difference_matrix_figure(m.d_final.values, out_dir / "d_final.png", title)
        save_pr_curve_figure(result.evaluation.curve, out_dir / "pr_curve.png", title)
        ref_for_plot = ref_kfs if ref_kfs is not None else query_kfs
        ref_positions = np.array(
            [kf.gt_position for kf in ref_for_plot if kf.gt_position is not None]
        )
        save_recognized_figure(
            result.evaluation.recognized, ref_positions, out_dir / "recognized.png", title
        )
    curve = result.evaluation.curve
    print(
        f"{args.descriptor} ({args.part}): AUC {curve.auc:.4f}, "
        f"max recall at full precision {curve.max_recall_at_full_precision:.4f} -> {out_dir}"
    )
    return 0


def cmd_synth(args) -> int:
    if args.write_demo_spec:
        demo = street_world(
            seed=args.seed,
            length=160.0,
            n_buildings=18,
            n_trees=16,
            out_and_back=True,
            perturbation=seasonal_perturbation(strength=1.0, vegetation_resample=0.3),
        )
        write_world_spec(demo, args.write_demo_spec)
        print(f"wrote demo world spec to {args.write_demo_spec}")
        return 0
    if not args.spec or not args.out:
        raise ConfigError("synth needs a world spec and --out (or --write-demo-spec)")
    spec = load_world_spec(args.spec)
    if args.reverse:
        spec = reversed_spec(spec)
    seq = generate(spec)
    if args.perturb:
        seq = perturb(seq)
    write_sequence(seq.keyframes, args.out)
    n_points = sum(len(kf.points) for kf in seq.keyframes)
    print(f"wrote {len(seq.keyframes)} keyframes ({n_points} points) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="vopr",
        description="Place recognition for stereo visual odometry via imitated range scans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("imitate", help="keyframes -> filtered scan archive")
    p.add_argument("input", help="keyframe file")
    p.add_argument("--out", help="concatenated scan archive path")
    p.add_argument("--split-dir", help="also write one scan file per keyframe here")
    p.add_argument("--filter", choices=FILTER_KINDS, default="voxel")
    _add_config_args(p)
    p.set_defaults(func=cmd_imitate)

    p = sub.add_parser("describe", help="scan archive -> signature archive")
    p.add_argument("scans", help="scan archive path")
    p.add_argument("--descriptor", choices=DESCRIPTOR_KINDS, required=True)
    p.add_argument("--out", required=True, help="signature archive (.npz)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--on-degenerate", choices=("skip", "error"), default="skip")
    _add_config_args(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="two signature archives -> difference matrices + matches")
    p.add_argument("query", help="query signature archive")
    p.add_argument("reference", help="reference signature archive")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--part", choices=("fused", "structure", "intensity"), default="fused")
    p.add_argument(
        "--same-sequence",
        action="store_true",
        help="apply the temporal exclusion window (query and reference are one sequence)",
    )
    p.add_argument("--no-figures", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", help="match table + ground truth -> PR curve and reports")
    p.add_argument("--matches", required=True, help="matches.csv from the match stage")
    p.add_argument("--query-keyframes", required=True)
    p.add_argument("--reference-keyframes", help="defaults to the query keyframes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run all stages, keeping intermediates")
    p.add_argument("--query", required=True, help="query keyframe file")
    p.add_argument("--reference", help="reference keyframe file (omit for self-matching)")
    p.add_argument("--descriptor", choices=DESCRIPTOR_KINDS, default="scan_context")
    p.add_argument("--part", choices=("fused", "structure", "intensity"), default="fused")
    p.add_argument("--filter", choices=FILTER_KINDS, help="defaults to the descriptor's pairing")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="generate a synthetic keyframe sequence")
    p.add_argument("spec", nargs="?", help="world spec file (key = value text)")
    p.add_argument("--out", help="output keyframe file")
    p.add_argument("--perturb", action="store_true", help="apply the spec's perturbation")
    p.add_argument("--reverse", action="store_true", help="drive the trajectory backwards")
    p.add_argument("--write-demo-spec", metavar="PATH", help="write a demo world spec and exit")
    p.add_argument("--seed", type=int, default=0, help="seed for --write-demo-spec")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except DegenerateInputError as e:
        print(f"degenerate computation: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
