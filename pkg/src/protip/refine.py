"""Image-based refinement of a calibration by slice-to-reconstruction NCC."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import masked_ncc, reslice_accumulate
from .errors import InvalidArgument
from .geom import RigidTransform

PARAM_NAMES = ("tx", "ty", "tz", "rx", "ry", "rz")


class NoOverlapWarning(UserWarning):
    """No frame of one sweep overlaps the other sweep under the calibration."""


@dataclass(frozen=True)
class RefineConfig:
    translation_steps: tuple = (2.0, 1.0, 0.5, 0.25, 0.1)  # mm
    rotation_steps: tuple = (2.0, 1.0, 0.5, 0.25, 0.1)  # degrees
    slab_halfwidth: float = 1.5  # mm
    frame_stride: int = 2
    min_overlap_fraction: float = 0.1
    pivot: tuple | None = None  # rotation centre in image mm; None = image centre
    max_passes: int = 50  # per step size; a safety bound, normally never reached

    def __post_init__(self):
        for name in ("translation_steps", "rotation_steps"):
            s = np.asarray(getattr(self, name), float)
            if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
                raise InvalidArgument(f"{name} must be positive and strictly decreasing")
        if len(self.translation_steps) != len(self.rotation_steps):
            raise InvalidArgument("translation and rotation schedules differ in length")
        if self.slab_halfwidth <= 0:
            raise InvalidArgument("slab_halfwidth must be positive")
        if self.frame_stride < 1:
            raise InvalidArgument("frame_stride must be at least 1")


@dataclass
class ReconstructedSlice:
    image: np.ndarray
    validity: np.ndarray


@dataclass
class RefineResult:
    C: RigidTransform
    initial_objective: float
    objective: float
    evaluations: int
    no_overlap: bool = False
    history: list = field(default_factory=list)  # (step index, param, sign, objective)


def interior_cells(valid: np.ndarray) -> np.ndarray:
    """Cells whose four bilinear corners are all valid, indexed by top-left pixel."""
    out = np.zeros_like(valid, dtype=bool)
    out[:-1, :-1] = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]
    return out


class _SweepCache:
    """Images and validity of one sweep in the kernel's [column, row] layout."""

    def __init__(self, sweep):
        geom = sweep.geometry
        self.geom = geom
        stack = np.stack([np.asarray(f.intensity) for f in sweep.frames])
        if stack.dtype != np.uint8:
            stack = stack.astype(float)
        self.images_t = np.ascontiguousarray(stack.transpose(0, 2, 1))
        self.tracking = [f.tracking for f in sweep.frames]
        self.valid = geom.valid_mask()
        self.valid_t = np.ascontiguousarray(self.valid.T)
        self.interior_t = np.ascontiguousarray(interior_cells(self.valid).T)
        self.x0 = -(geom.shape[1] - 1) / 2.0 * geom.spacing


def _inverse_planes(cache: _SweepCache, C: RigidTransform):
    n = len(cache.tracking)
    rot = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    for j, T in enumerate(cache.tracking):
        inv = (T @ C).inverse()
        rot[j] = inv.rotation
        trans[j] = inv.translation
    return rot, trans


def _accumulate(pose_a: RigidTransform, geom_a, valid_a_t, cache_b, planes, slab):
    """(acc, wsum) in [column, row] layout for the A plane at ``pose_a``."""
    acc = np.zeros(valid_a_t.shape)
    wsum = np.zeros(valid_a_t.shape)
    x0_a = -(geom_a.shape[1] - 1) / 2.0 * geom_a.spacing
    reslice_accumulate(pose_a.rotation, pose_a.translation, x0_a, geom_a.spacing, valid_a_t,
                       planes[0], planes[1], cache_b.images_t, cache_b.interior_t,
                       cache_b.x0, cache_b.geom.spacing, float(slab), acc, wsum)
    return acc, wsum


def reconstruct_slice(sweep_b, frame_a, C: RigidTransform, geom_a=None,
                      slab_halfwidth: float = 1.5) -> ReconstructedSlice:
    """Compound the frames of ``sweep_b`` in the plane of ``frame_a``.

    Each B frame contributes bilinear samples at A pixels lying within
    ``slab_halfwidth`` of its plane, weighted 1 - |offplane| / slab.
    ``geom_a`` defaults to the geometry of ``sweep_b``.
    """
    cache_b = _SweepCache(sweep_b)
    geom_a = geom_a or sweep_b.geometry
    valid_a_t = np.ascontiguousarray(geom_a.valid_mask().T)
    planes = _inverse_planes(cache_b, C)
    acc, wsum = _accumulate(frame_a.tracking @ C, geom_a, valid_a_t, cache_b, planes, slab_halfwidth)
    acc, wsum = acc.T, wsum.T
    validity = wsum > 0
    image = np.zeros(validity.shape)
    image[validity] = acc[validity] / wsum[validity]
    return ReconstructedSlice(image, validity)


def ncc(a, b, validity=None, full: bool = False):
    """Pearson correlation of ``a`` and ``b`` over ``validity``.

    Returns 0 when either image has no variance there (or fewer than two
    pixels); with ``full=True`` returns (score, degenerate).
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if validity is not None:
        a = a[validity]
        b = b[validity]
    a = a.ravel()
    b = b.ravel()
    score, degenerate = 0.0, True
    if a.size >= 2:
        da = a - a.mean()
        db = b - b.mean()
        va = float(da @ da)
        vb = float(db @ db)
        scale = max(float(np.abs(a).max()), float(np.abs(b).max()), 1.0)
        # variance below round-off of the mean counts as constant
        tiny = (1e-12 * scale) ** 2 * a.size
        if va > tiny and vb > tiny:
            score = float(np.clip((da @ db) / np.sqrt(va * vb), -1.0, 1.0))
            degenerate = False
    return (score, degenerate) if full else score


class Objective:
    """Mean NCC between strided A frames and their reconstructions from B."""

    def __init__(self, sweep_a, sweep_b, cfg: RefineConfig | None = None, jobs: int = 1):
        self.cfg = cfg or RefineConfig()
        self.a = _SweepCache(sweep_a)
        self.b = _SweepCache(sweep_b)
        self.frames = list(range(0, len(sweep_a.frames), self.cfg.frame_stride))
        self.a_float = {i: np.ascontiguousarray(self.a.images_t[i], dtype=float) for i in self.frames}
        self.jobs = max(1, int(jobs))
        self.evaluations = 0
        self._n_valid = int(self.a.valid.sum())

    def frame_scores(self, C: RigidTransform) -> list:
        """(score or None, overlap fraction) per evaluated A frame, in frame order.

        Frames below the overlap threshold score None.
        """
        planes = _inverse_planes(self.b, C)

        def one(i):
            acc, wsum = _accumulate(self.a.tracking[i] @ C, self.a.geom, self.a.valid_t, self.b,
                                    planes, self.cfg.slab_halfwidth)
            score, _, n = masked_ncc(self.a_float[i], acc, wsum, self.a.valid_t)
            frac = n / max(self._n_valid, 1)
            return (score if frac >= self.cfg.min_overlap_fraction else None), frac

        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                return list(pool.map(one, self.frames))
        return [one(i) for i in self.frames]

    def __call__(self, C: RigidTransform) -> float:
        self.evaluations += 1
        scores = [s for s, _ in self.frame_scores(C) if s is not None]
        if not scores:
            return -np.inf
        # fixed-order reduction keeps serial and threaded runs identical
        return float(np.sum(scores) / len(scores))


def perturbation(param: int, amount: float, pivot=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Rigid step along one parameter: translation in mm or rotation in degrees.

    Rotations turn about axes parallel to the image axes through ``pivot``
    (image coordinates, mm).
    """
    p = np.zeros(6)
    p[param] = amount
    step = RigidTransform.from_params(p)
    if param < 3 or not np.any(pivot):
        return step
    c = np.asarray(pivot, float)
    return RigidTransform(step.rotation, c - step.rotation @ c)


def refine_calibration(sweep_a, sweep_b, C0: RigidTransform, cfg: RefineConfig | None = None,
                       jobs: int = 1, objective: Objective | None = None) -> RefineResult:
    """Coordinate hill climb on the mean NCC objective, starting at ``C0``.

    For each (translation, rotation) step pair, every parameter in the order
    tx, ty, tz, rx, ry, rz tries +step then -step as a right-multiplied
    perturbation of C; improvements are accepted at once.  A pass without
    improvement moves on to the next step pair.
    """
    cfg = cfg or RefineConfig()
    f = objective or Objective(sweep_a, sweep_b, cfg, jobs)
    if cfg.pivot is None:
        rows, _ = f.a.geom.shape
        pivot = (0.0, 0.5 * (rows - 1) * f.a.geom.spacing, 0.0)
    else:
        pivot = cfg.pivot
    C = C0
    best = f(C)
    result = RefineResult(C0, best, best, 0)
    if not np.isfinite(best):
        warnings.warn("calibration refinement skipped: sweeps do not overlap", NoOverlapWarning,
                      stacklevel=2)
        result.no_overlap = True
        result.evaluations = f.evaluations
        return result
    for level, (ts, rs) in enumerate(zip(cfg.translation_steps, cfg.rotation_steps)):
        for _ in range(cfg.max_passes):
            improved = False
            for param in range(6):
                step = ts if param < 3 else rs
                for sign in (1.0, -1.0):
                    cand = C @ perturbation(param, sign * step, pivot)
                    val = f(cand)
                    if val > best:
                        C, best = cand, val
                        improved = True
                        result.history.append((level, PARAM_NAMES[param], sign, val))
                        break
            if not improved:
                break
    result.C = C
    result.objective = best
    result.evaluations = f.evaluations
    return result
