"""End-to-end processing of two sweeps into a calibration."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .segment import BaseLineConfig, fit_base_line, load_external_masks, segment_frame
from .solve import RansacConfig, ransac_calibrate
from .track import Tracker, detect_cones, extract_tips, match_tips

# named substreams of the master seed
STREAM_BASELINE = 101
STREAM_RANSAC = 102


@dataclass
class SweepAnalysis:
    sweep_id: str
    masks: list
    base_lines: list
    detections: list  # per frame
    tracks: list
    tips: list

    @property
    def skipped_frames(self) -> int:
        return sum(b is None for b in self.base_lines)


@dataclass
class CalibrationRun:
    analysis_a: SweepAnalysis
    analysis_b: SweepAnalysis
    matches: list
    result: object = None  # CalibrationResult
    extra: dict = field(default_factory=dict)


def _baseline_rng(seed: int, sweep_id: str, index: int) -> np.random.Generator:
    key = sum(ord(ch) for ch in sweep_id)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAM_BASELINE, key, index)))


def analyze_sweep(sweep, seg: str = "reference", seed: int = 0, jobs: int = 1,
                  baseline_cfg: BaseLineConfig | None = None) -> SweepAnalysis:
    """Segment every frame, fit base lines, detect cones, track and extract tips.

    ``seg`` is ``reference``, ``true-labels`` or ``external:<dir>``.
    """
    baseline_cfg = baseline_cfg or BaseLineConfig()
    geom = sweep.geometry
    external = None
    if seg.startswith("external:"):
        external = load_external_masks(seg.split(":", 1)[1], sweep)
    elif seg not in ("reference", "true-labels"):
        raise ValueError(f"unknown segmentation mode {seg!r}")

    def per_frame(k):
        frame = sweep.frames[k]
        if external is not None:
            mask = external[k]
        else:
            mask = segment_frame(frame, geom.spacing, use_true_labels=(seg == "true-labels"))
        base = fit_base_line(mask, baseline_cfg, _baseline_rng(seed, sweep.sweep_id, frame.index))
        return mask, base, detect_cones(mask, base, geom, frame.index)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(per_frame, range(len(sweep.frames))))
    else:
        results = [per_frame(k) for k in range(len(sweep.frames))]

    tracker = Tracker()
    for frame, (_, _, dets) in zip(sweep.frames, results):
        tracker.update(dets, frame.index)
    tracks = tracker.finish()
    tips = extract_tips(tracks, geom, sweep.sweep_id)
    return SweepAnalysis(sweep.sweep_id, [r[0] for r in results], [r[1] for r in results],
                         [r[2] for r in results], tracks, tips)


def correspondences(matches, sweep_a, sweep_b) -> list:
    """(T_A, p_A, T_B, p_B) tuples for the solver."""
    out = []
    for m in matches:
        ta, tb = m.tip_a, m.tip_b
        out.append((sweep_a.frames[ta.frame_index].tracking, np.array(ta.image_point),
                    sweep_b.frames[tb.frame_index].tracking, np.array(tb.image_point)))
    return out


def calibrate_sweeps(sweep_a, sweep_b, seg: str = "reference", seed: int = 0,
                     ransac: RansacConfig | None = None, jobs: int = 1) -> CalibrationRun:
    """Tips from both sweeps, height matches, then RANSAC calibration."""
    a = analyze_sweep(sweep_a, seg, seed, jobs)
    b = analyze_sweep(sweep_b, seg, seed, jobs)
    matches = match_tips(a.tips, b.tips)
    cfg = ransac or RansacConfig(seed=int(np.random.SeedSequence(seed, spawn_key=(STREAM_RANSAC,))
                                         .generate_state(1)[0]))
    run = CalibrationRun(a, b, matches)
    run.result = ransac_calibrate(correspondences(matches, sweep_a, sweep_b), cfg)
    return run
