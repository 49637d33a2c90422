"""Rigid calibration from matched cone tips.

For a match i with tracking poses T = [Phi | delta] in both sweeps and image
points (x, y), the world discrepancy under C = [u v w | t] is linear in
(u, v, t):

    (xA PhiA - xB PhiB) u + (yA PhiA - yB PhiB) v + (PhiA - PhiB) t - (deltaB - deltaA)

Stacking the 3x9 blocks gives a least-squares problem A [u; v; t] ~ d that is
solved unconstrained, projected onto orthonormal (u, v) and re-solved for t.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, InsufficientMatches, InvalidArgument, NoConsensus
from .geom import RigidTransform

RANK_TOL = 1e-8


@dataclass
class LinearSystem:
    A: np.ndarray  # (3n, 9), columns [u | v | t]
    d: np.ndarray  # (3n,)

    @property
    def n(self) -> int:
        return self.A.shape[0] // 3

    def subset(self, idx) -> LinearSystem:
        rows = (3 * np.asarray(idx)[:, None] + np.arange(3)).ravel()
        return LinearSystem(self.A[rows], self.d[rows])

    def residual_vectors(self, C: RigidTransform) -> np.ndarray:
        """(n, 3) world discrepancies T_A C p_A - T_B C p_B."""
        x = np.concatenate([C.rotation[:, 0], C.rotation[:, 1], C.translation])
        return (self.A @ x - self.d).reshape(-1, 3)

    def objective(self, C: RigidTransform) -> float:
        """Sum of squared discrepancies (mm^2)."""
        return float(np.sum(self.residual_vectors(C) ** 2))


@dataclass
class RansacConfig:
    sample_size: int = 4
    residual_gate: float = 100.0  # mm^2, summed over the sample
    inlier_threshold: float = 10.0  # mm
    iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise InvalidArgument("sample_size must be at least 3")
        if not (self.residual_gate > 0 and self.inlier_threshold > 0):
            raise InvalidArgument("thresholds must be positive")
        if self.iterations < 1:
            raise InvalidArgument("iterations must be positive")


@dataclass
class CalibrationResult:
    C: RigidTransform
    inliers: np.ndarray  # indices into the input matches
    inlier_matches: list
    per_match_residual: np.ndarray  # mm, every input match under C
    refit_residual: float  # objective over the inliers, mm^2
    hypothesis_count: int  # hypotheses that passed the residual gate
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"n_matches": len(self.per_match_residual),
                "n_inliers": len(self.inliers),
                "refit_residual": self.refit_residual,
                "hypothesis_count": self.hypothesis_count}


def build_system(matches) -> LinearSystem:
    """Stack the 3x9 blocks of ``matches`` = [(T_A, p_A, T_B, p_B), ...]."""
    matches = list(matches)
    if not matches:
        raise InsufficientMatches("no matches to build a calibration system from")
    n = len(matches)
    A = np.empty((3 * n, 9))
    d = np.empty(3 * n)
    for i, (TA, pA, TB, pB) in enumerate(matches):
        PA, PB = TA.rotation, TB.rotation
        xA, yA = pA[0], pA[1]
        xB, yB = pB[0], pB[1]
        r = slice(3 * i, 3 * i + 3)
        A[r, 0:3] = xA * PA - xB * PB
        A[r, 3:6] = yA * PA - yB * PB
        A[r, 6:9] = PA - PB
        d[r] = TB.translation - TA.translation
    return LinearSystem(A, d)


def project_orthonormal(u_raw, v_raw) -> tuple[np.ndarray, np.ndarray]:
    """Nearest orthonormal pair (Frobenius) to the columns [u_raw v_raw]."""
    M = np.column_stack([u_raw, v_raw]).astype(float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0 or s[1] < RANK_TOL * s[0]:
        raise DegenerateConfiguration("u and v are (nearly) parallel")
    Q = U @ Vt
    return Q[:, 0], Q[:, 1]


def _lstsq_scaled(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise DegenerateConfiguration(f"{what}: zero column in the system matrix")
    As = A / scale
    sol, _, rank, sv = np.linalg.lstsq(As, b, rcond=None)
    if rank < A.shape[1] or sv[-1] < RANK_TOL * sv[0]:
        raise DegenerateConfiguration(f"{what}: rank deficient system")
    return sol / scale


def solve_constrained(sys: LinearSystem) -> RigidTransform:
    if sys.n < 3:
        raise InsufficientMatches(f"need at least 3 matches, got {sys.n}")
    x = _lstsq_scaled(sys.A, sys.d, "calibration")
    u, v = project_orthonormal(x[0:3], x[3:6])
    rhs = sys.d - sys.A[:, 0:3] @ u - sys.A[:, 3:6] @ v
    t = _lstsq_scaled(sys.A[:, 6:9], rhs, "translation")
    R = np.column_stack([u, v, np.cross(u, v)])
    return RigidTransform(R, t)


def solve_matches(matches) -> RigidTransform:
    return solve_constrained(build_system(matches))


def _draw_sample(seed: int, iteration: int, n: int, k: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration,)))
    return rng.choice(n, size=k, replace=False)


def ransac_calibrate(matches, cfg: RansacConfig | None = None) -> CalibrationResult:
    """Robust calibration: best 4-match hypothesis by inlier count, refit on inliers."""
    cfg = cfg or RansacConfig()
    matches = list(matches)
    n = len(matches)
    if n < cfg.sample_size:
        raise InsufficientMatches(f"need at least {cfg.sample_size} matches, got {n}")
    full = build_system(matches)

    best = None  # (score, -summed residual, -iteration), C
    passed = 0
    for it in range(cfg.iterations):
        sample = _draw_sample(cfg.seed, it, n, cfg.sample_size)
        sub = full.subset(sample)
        try:
            C = solve_constrained(sub)
        except DegenerateConfiguration:
            continue
        if sub.objective(C) > cfg.residual_gate:
            continue
        passed += 1
        res = np.linalg.norm(full.residual_vectors(C), axis=1)
        inl = res <= cfg.inlier_threshold
        key = (int(inl.sum()), -float(res[inl].sum()), -it)
        if best is None or key > best[0]:
            best = (key, C)
    if best is None:
        raise NoConsensus(f"no hypothesis passed the residual gate in {cfg.iterations} iterations")

    C = best[1]
    inliers = np.flatnonzero(np.linalg.norm(full.residual_vectors(C), axis=1) <= cfg.inlier_threshold)
    try:
        C = solve_constrained(full.subset(inliers))
    except DegenerateConfiguration:
        pass
    res = np.linalg.norm(full.residual_vectors(C), axis=1)
    inliers = np.flatnonzero(res <= cfg.inlier_threshold)
    return CalibrationResult(
        C=C,
        inliers=inliers,
        inlier_matches=[matches[i] for i in inliers],
        per_match_residual=res,
        refit_residual=full.subset(inliers).objective(C) if len(inliers) else float("nan"),
        hypothesis_count=passed,
        iterations=cfg.iterations,
    )
