"""Command line entry point: phantom, simulate, calibrate, evaluate."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .errors import (CoverageError, DegenerateConfiguration, FormatError, InsufficientFiducials,
                     InsufficientMatches, InvalidArgument, NoConsensus)
from .evaluation import (analytic_tip_poses, fiducial_pair_errors, pair_errors_from_positions,
                         tip_poses_of, tip_world_positions, write_report)
from .geom import format_transform, load_transform, pose_delta, save_transform
from .phantom import load_phantom, rasterize_labelmap, save_labelmap, save_phantom
from .pipeline import analyze_sweep, calibrate_sweeps
from .refine import RefineConfig, refine_calibration
from .simulate import (ImagingGeometry, NoiseConfig, SweepKind, default_calibration,
                       make_trajectory, simulate_sweep)

log = logging.getLogger("protip")

EXIT_OK = 0
EXIT_NO_CONSENSUS = 2
EXIT_INSUFFICIENT = 3
EXIT_FORMAT = 4
EXIT_COVERAGE = 5
EXIT_USAGE = 64


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma separated numbers, got {text!r}") from None
    if a < 0 or b < 0:
        raise argparse.ArgumentTypeError("noise magnitudes must be non-negative")
    return a, b


def _seg_mode(text: str) -> str:
    if text in ("reference", "true-labels") or (text.startswith("external:") and len(text) > 9):
        return text
    raise argparse.ArgumentTypeError("segmentation is reference, true-labels or external:DIR")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protip", description="Cone phantom ultrasound probe calibration")
    p.add_argument("--config", help="key = value file with defaults for the subcommand's options")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="write the phantom description and its label volume")
    ph.add_argument("--out", required=True)
    ph.add_argument("--phantom", default="default", help="phantom file or 'default'")
    ph.add_argument("--spacing", type=float, default=1.0, help="label volume voxel size, mm")

    sm = sub.add_parser("simulate", help="simulate an axial and a sagittal tracked sweep")
    sm.add_argument("--phantom", default="default")
    sm.add_argument("--out", required=True)
    sm.add_argument("--seed", type=int, required=True)
    sm.add_argument("--frames", type=int, default=200)
    sm.add_argument("--tracking-noise", type=_pair, default=(0.0, 0.0), metavar="MM,DEG")
    sm.add_argument("--image-noise", type=float, default=0.0, help="0 = noiseless, 1 = default speckle")
    sm.add_argument("--geometry", choices=("linear", "convex"), default="linear")
    sm.add_argument("--no-labels", action="store_true", help="do not write true label images")

    cal = sub.add_parser("calibrate", help="estimate the calibration from two sweeps")
    cal.add_argument("--sweep-a", required=True)
    cal.add_argument("--sweep-b", required=True)
    cal.add_argument("--seg", type=_seg_mode, default="reference")
    cal.add_argument("--no-refine", action="store_true")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", required=True)
    cal.add_argument("--phantom", default="default", help="phantom used for the fiducial report")
    cal.add_argument("--groundtruth", help="groundtruth.txt for a pose error line in the report")
    cal.add_argument("--debug-tracks", action="store_true", help="write per-sweep detection/track tables")

    ev = sub.add_parser("evaluate", help="fiducial pair errors of a calibration")
    ev.add_argument("--calibration", required=True)
    ev.add_argument("--sweep-a", required=True)
    ev.add_argument("--sweep-b", required=True)
    ev.add_argument("--phantom", default="default")
    ev.add_argument("--seg", type=_seg_mode, default="reference")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--groundtruth")
    ev.add_argument("--csv", help="also write the per-pair errors as CSV")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    """With --config, file values become the subcommand's defaults; flags win."""
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config = pre.parse_known_args(argv)[0].config
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if not config or command is None:
        return parser.parse_args(argv)
    values = io.read_keyvalue(config)
    sub = choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        action = known.get(dest)
        if action is None:
            raise FormatError(f"{config}: unknown option {key!r} for {command}")
        if action.nargs == 0:
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise FormatError(f"{config}: {key}: {exc}") from None
        else:
            defaults[dest] = raw
        # satisfied by the file, so no longer required on the command line
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def cmd_phantom(args) -> int:
    spec = load_phantom(args.phantom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_phantom(out / "phantom.txt", spec)
    vol = rasterize_labelmap(spec, args.spacing)
    save_labelmap(out, vol)
    log.info("phantom written to %s (%d x %d x %d voxels)", out, *vol.dims)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_phantom(args.phantom)
    if args.frames < 1:
        raise InvalidArgument("--frames must be at least 1")
    geom = ImagingGeometry.convex() if args.geometry == "convex" else ImagingGeometry()
    C = default_calibration()
    noise = NoiseConfig.from_level(args.image_noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_phantom(out / "phantom.txt", spec)
    gts = []
    for kind, sweep_id, name in ((SweepKind.AxialSweep, "A", "sweep_a"),
                                 (SweepKind.SagittalSweep, "B", "sweep_b")):
        traj = make_trajectory(kind, args.frames, spec, C, geom, seed=args.seed)
        sweep, gt = simulate_sweep(spec, traj, C, geom, noise, tuple(args.tracking_noise),
                                   seed=args.seed, sweep_id=sweep_id, jobs=args.jobs)
        io.save_sweep(out / name, sweep, gt, write_labels=not args.no_labels)
        gts.append(gt)
        log.info("%s: %d frames", name, len(sweep))
    lines = ["# calibration: image -> marker"] + format_transform(C, io.TRACKING_DIGITS).splitlines()
    lines += [f"tip = {k} " + " ".join(f"{v:.17g}" for v in tip) for k, tip in enumerate(gts[0].tips)]
    (out / "groundtruth.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _find_groundtruth(explicit, sweep_dir):
    if explicit:
        return io.load_ground_truth(explicit)
    for cand in (Path(sweep_dir) / "groundtruth.txt", Path(sweep_dir).parent / "groundtruth.txt"):
        if cand.exists():
            return io.load_ground_truth(cand)
    return None


def _fiducial_report(analyses, sweeps, C, spec):
    tip_poses = [tp for an, sw in zip(analyses, sweeps) for tp in tip_poses_of(an, sw)]
    try:
        return fiducial_pair_errors(tip_poses, C, spec)
    except InsufficientFiducials as exc:
        log.warning("fiducial report skipped: %s", exc)
        return None


def _analytic_report(sweep_dirs, sweeps, C, spec):
    gts = []
    for d in sweep_dirs:
        path = Path(d) / "groundtruth.txt"
        if not path.exists():
            return None
        gts.append(io.load_ground_truth(path))
    if any(len(gt.frame_tips) == 0 for gt in gts):
        return None
    try:
        positions = tip_world_positions(analytic_tip_poses(gts, sweeps, spec), C, spec)
        return pair_errors_from_positions(positions, spec)
    except InsufficientFiducials:
        return None


def _write_debug(out: Path, analysis) -> None:
    rows = ["frame\ttrack\tbbox\thighest_x\thighest_y\theight\tapex_x\tapex_y\tapex_height\tarea"]
    for t in analysis.tracks:
        for d in t.detections:
            rows.append(f"{d.frame_index}\t{t.track_id}\t{','.join(map(str, d.bbox))}\t"
                        f"{d.highest_point[0]:.4f}\t{d.highest_point[1]:.4f}\t{d.height:.4f}\t"
                        f"{d.apex[0]:.4f}\t{d.apex[1]:.4f}\t{d.apex_height:.4f}\t{d.area:.1f}")
    (out / f"tracks_{analysis.sweep_id}.tsv").write_text("\n".join(rows) + "\n")


def cmd_calibrate(args) -> int:
    sweep_a = io.load_sweep(args.sweep_a, "A")
    sweep_b = io.load_sweep(args.sweep_b, "B")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    run = calibrate_sweeps(sweep_a, sweep_b, seg=args.seg, seed=args.seed, jobs=args.jobs)
    log.info("tips A=%d B=%d, matches=%d, inliers=%d (%.1fs)", len(run.analysis_a.tips),
             len(run.analysis_b.tips), len(run.matches), len(run.result.inliers),
             time.perf_counter() - t0)
    if args.debug_tracks:
        _write_debug(out, run.analysis_a)
        _write_debug(out, run.analysis_b)
    C0 = run.result.C
    save_transform(out / "calibration_initial.txt", C0)

    items = {"tips_a": len(run.analysis_a.tips), "tips_b": len(run.analysis_b.tips),
             "skipped_frames_a": run.analysis_a.skipped_frames,
             "skipped_frames_b": run.analysis_b.skipped_frames}
    items.update(run.result.summary())
    items["refit_residual"] = f"{run.result.refit_residual:.6f}"
    C = C0
    if args.no_refine:
        items["refinement"] = "skipped"
    else:
        t0 = time.perf_counter()
        res = refine_calibration(sweep_a, sweep_b, C0, RefineConfig(), jobs=args.jobs)
        log.info("refinement: %d evaluations (%.1fs)", res.evaluations, time.perf_counter() - t0)
        if res.no_overlap:
            items["refinement"] = "no_overlap"
        else:
            C = res.C
            items["refinement"] = "done"
            items["ncc_initial"] = f"{res.initial_objective:.9f}"
            items["ncc_final"] = f"{res.objective:.9f}"
    save_transform(out / "calibration.txt", C)

    spec = load_phantom(args.phantom)
    gt = _find_groundtruth(args.groundtruth, args.sweep_a)
    if gt is not None:
        for label, cal in (("initial", C0), ("final", C)):
            dt, dr = pose_delta(cal, gt.calibration)
            items[f"pose_error_{label}_mm"] = f"{dt:.6f}"
            items[f"pose_error_{label}_deg"] = f"{dr:.6f}"
    report = _fiducial_report([run.analysis_a, run.analysis_b], [sweep_a, sweep_b], C, spec)
    if report is None:
        (out / "report.txt").write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
    else:
        initial = _fiducial_report([run.analysis_a, run.analysis_b], [sweep_a, sweep_b], C0, spec)
        items["median_pair_error_initial_mm"] = f"{initial.median:.6f}"
        analytic = _analytic_report([args.sweep_a, args.sweep_b], [sweep_a, sweep_b], C, spec)
        write_report(out / "report.txt", report, items, analytic)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    C = load_transform(args.calibration)
    sweep_a = io.load_sweep(args.sweep_a, "A")
    sweep_b = io.load_sweep(args.sweep_b, "B")
    spec = load_phantom(args.phantom)
    analyses = [analyze_sweep(sweep_a, args.seg, args.seed, args.jobs),
                analyze_sweep(sweep_b, args.seg, args.seed, args.jobs)]
    tip_poses = [tp for an, sw in zip(analyses, (sweep_a, sweep_b)) for tp in tip_poses_of(an, sw)]
    report = fiducial_pair_errors(tip_poses, C, spec)
    gt = _find_groundtruth(args.groundtruth, args.sweep_a)
    if gt is not None:
        report.pose_error = pose_delta(C, gt.calibration)
    analytic = _analytic_report([args.sweep_a, args.sweep_b], [sweep_a, sweep_b], C, spec)
    summary = report.summary()
    if analytic is not None:
        summary.update({f"analytic_{k}": v for k, v in analytic.summary().items()})
    sys.stdout.write("".join(f"{k} = {v}\n" for k, v in summary.items()) + "\n" + report.table())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


COMMANDS = {"phantom": cmd_phantom, "simulate": cmd_simulate,
            "calibrate": cmd_calibrate, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except FormatError as exc:
        print(f"protip: config: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("protip: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    stage = args.command
    try:
        return COMMANDS[args.command](args)
    except (NoConsensus, DegenerateConfiguration) as exc:
        print(f"protip {stage}: calibration estimation failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    except InsufficientMatches as exc:
        print(f"protip {stage}: tip matching: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except InsufficientFiducials as exc:
        print(f"protip {stage}: evaluation: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except FormatError as exc:
        print(f"protip {stage}: input: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CoverageError as exc:
        print(f"protip {stage}: simulation: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except InvalidArgument as exc:
        print(f"protip {stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
