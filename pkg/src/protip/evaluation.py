"""Calibration quality: fiducial pair distances and ground-truth comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientFiducials
from .geom import RigidTransform, map_to_world, pose_delta
from .phantom import PhantomSpec, pair_indices

ID_TOLERANCE = 2.5  # mm, height window for assigning a tip to a cone


@dataclass
class ErrorReport:
    pairs: list  # (cone i, cone j, measured mm, true mm)
    n_tips_found: int
    identities: dict = field(default_factory=dict)  # cone -> world position
    pose_error: tuple | None = None

    @property
    def errors(self) -> np.ndarray:
        return np.array([abs(m - t) for _, _, m, t in self.pairs], float)

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    def summary(self) -> dict:
        out = {"n_tips_found": self.n_tips_found, "n_pairs": len(self.pairs),
               "median_pair_error_mm": f"{self.median:.6f}",
               "mean_pair_error_mm": f"{self.mean:.6f}",
               "max_pair_error_mm": f"{self.max:.6f}"}
        if self.pose_error is not None:
            out["pose_error_mm"] = f"{self.pose_error[0]:.6f}"
            out["pose_error_deg"] = f"{self.pose_error[1]:.6f}"
        return out

    def table(self) -> str:
        """Tab-separated per-pair listing."""
        lines = ["cone_i\tcone_j\tmeasured_mm\ttrue_mm\terror_mm"]
        for (i, j, m, t), e in zip(self.pairs, self.errors):
            lines.append(f"{i}\t{j}\t{m:.6f}\t{t:.6f}\t{e:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cone_i", "cone_j", "measured_mm", "true_mm", "error_mm"])
            for (i, j, m, t), e in zip(self.pairs, self.errors):
                w.writerow([i, j, f"{m:.6f}", f"{t:.6f}", f"{e:.6f}"])


def identify_cone(height: float, spec: PhantomSpec, tol: float = ID_TOLERANCE) -> int | None:
    """Cone whose height is the only one within ``tol`` of ``height``."""
    close = np.flatnonzero(np.abs(spec.heights - height) <= tol)
    return int(close[0]) if len(close) == 1 else None


def tip_world_positions(tip_poses, C: RigidTransform, spec: PhantomSpec) -> dict:
    """Cone index -> world tip position, averaged over the sweeps that saw it.

    ``tip_poses`` holds (Tip, tracking transform) pairs.  Within one sweep a
    cone keeps only the tip whose height is closest to it.
    """
    best = {}  # (sweep, cone) -> (height diff, world point)
    for tip, T in tip_poses:
        k = identify_cone(tip.smoothed_height, spec)
        if k is None:
            continue
        diff = abs(tip.smoothed_height - spec.heights[k])
        q = map_to_world(T, C, np.array(tip.image_point, float))
        key = (tip.sweep_id, k)
        if key not in best or diff < best[key][0]:
            best[key] = (diff, q)
    merged = {}
    for (_, k), (_, q) in sorted(best.items()):
        merged.setdefault(k, []).append(q)
    return {k: np.mean(v, axis=0) for k, v in sorted(merged.items())}


def pair_errors_from_positions(positions: dict, spec: PhantomSpec, n_tips: int | None = None) -> ErrorReport:
    if len(positions) < 2:
        raise InsufficientFiducials(f"{len(positions)} identified tip(s); at least 2 are needed")
    truth = spec.tips()
    pairs = []
    for i, j in pair_indices(len(spec.cones)):
        if i in positions and j in positions:
            measured = float(np.linalg.norm(positions[i] - positions[j]))
            pairs.append((i, j, measured, float(np.linalg.norm(truth[i] - truth[j]))))
    return ErrorReport(pairs, len(positions) if n_tips is None else n_tips, positions)


def fiducial_pair_errors(tip_poses, C: RigidTransform, spec: PhantomSpec) -> ErrorReport:
    """Absolute differences between measured and true inter-tip distances."""
    tip_poses = list(tip_poses)
    positions = tip_world_positions(tip_poses, C, spec)
    return pair_errors_from_positions(positions, spec, n_tips=len(positions))


def compare_to_gt(C: RigidTransform, C_gt: RigidTransform) -> tuple[float, float]:
    return pose_delta(C, C_gt)


def tip_poses_of(analysis, sweep) -> list:
    """(Tip, tracking) pairs of a sweep analysis."""
    return [(t, sweep.frames[t.frame_index].tracking) for t in analysis.tips]


def analytic_tip_poses(ground_truths, sweeps, spec: PhantomSpec) -> list:
    """Stand-in Tips at the analytic apex, one per cone and sweep.

    Each uses the frame whose plane passes closest to the apex and the apex
    projected into that plane, so the report measures calibration error
    without detection error.
    """
    from .track import Tip

    out = []
    for gt, sweep in zip(ground_truths, sweeps):
        for k in range(len(spec.cones)):
            row = gt.tip_in_frame(k)
            if row is None:
                continue
            f = int(row[0])
            tip = Tip(sweep.sweep_id, f, (float(row[2]), float(row[3])), float(spec.heights[k]))
            out.append((tip, sweep.frames[f].tracking))
    return out


def tip_detection_errors(tips, gt, spec: PhantomSpec) -> dict:
    """In-frame distance from each detected tip to the analytic apex.

    The apex is projected into the tip's own frame.  Tips that cannot be
    identified or whose frame does not show the apex are left out.
    """
    out = {}
    for tip in tips:
        k = identify_cone(tip.smoothed_height, spec)
        if k is None:
            continue
        rows = gt.frame_tips[(gt.frame_tips[:, 0] == tip.frame_index) & (gt.frame_tips[:, 1] == k)]
        if len(rows) == 0:
            continue
        d = float(np.hypot(rows[0, 2] - tip.image_point[0], rows[0, 3] - tip.image_point[1]))
        if k not in out or d < out[k]:
            out[k] = d
    return out


def write_report(path, report: ErrorReport, extra: dict | None = None,
                 analytic: ErrorReport | None = None) -> None:
    """key = value summary followed by the per-pair table."""
    items = dict(extra or {})
    items.update(report.summary())
    if analytic is not None:
        items.update({f"analytic_{k}": v for k, v in analytic.summary().items()})
    text = "".join(f"{k} = {v}\n" for k, v in items.items())
    Path(path).write_text(text + "\n" + report.table())
