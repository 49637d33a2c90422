import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from protip.geom import RigidTransform
from protip.phantom import default_phantom
from protip.simulate import (ImagingGeometry, NoiseConfig, SweepKind, default_calibration,
                             make_trajectory, simulate_sweep)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_image_pose(rng, through=None, xy=None):
    """Random image-plane pose; if ``through`` is given, image point ``xy`` maps onto it."""
    R = RigidTransform.random(rng).rotation
    if through is None:
        return RigidTransform(R, rng.uniform(-100, 100, 3))
    p = np.array([xy[0], xy[1], 0.0])
    return RigidTransform(R, np.asarray(through) - R @ p)


def forward_matches(C, n, rng, shared_pose=False):
    """Noiseless (T_A, p_A, T_B, p_B) tuples consistent with calibration ``C``."""
    out = []
    Cinv = C.inverse()
    fixed = (random_image_pose(rng), random_image_pose(rng)) if shared_pose else None
    for _ in range(n):
        pA = rng.uniform([-60, 5], [60, 120])
        if shared_pose:
            PA = fixed[0]
            q = PA.apply([pA[0], pA[1], 0.0])
            PB0 = fixed[1]
            local = PB0.inverse().apply(q)
            # move B's plane so that it contains q, keep orientation
            PB = RigidTransform(PB0.rotation, PB0.translation + PB0.rotation @ [0, 0, local[2]])
            pB = PB.inverse().apply(q)[:2]
        else:
            PA = random_image_pose(rng)
            q = PA.apply([pA[0], pA[1], 0.0])
            pB = rng.uniform([-60, 5], [60, 120])
            PB = random_image_pose(rng, q, pB)
        out.append((PA @ Cinv, pA, PB @ Cinv, np.asarray(pB)))
    return out


def _simulate(noise_level, tracking_noise, seed=1, n_frames=200):
    ph = default_phantom()
    C = default_calibration()
    g = ImagingGeometry()
    noise = NoiseConfig.from_level(noise_level)
    out = {"phantom": ph, "C": C, "geom": g}
    for kind, sid in ((SweepKind.AxialSweep, "A"), (SweepKind.SagittalSweep, "B")):
        traj = make_trajectory(kind, n_frames, ph, C, g, seed=seed)
        sweep, gt = simulate_sweep(ph, traj, C, g, noise, tracking_noise, seed=seed, sweep_id=sid)
        out["sweep_" + sid.lower()] = sweep
        out["gt_" + sid.lower()] = gt
    return out


@pytest.fixture(scope="session")
def noiseless():
    return _simulate(0.0, (0.0, 0.0))


@pytest.fixture(scope="session")
def noisy():
    return _simulate(1.0, (0.2, 0.1))


@pytest.fixture(scope="session")
def noiseless_run(noiseless):
    from protip.pipeline import calibrate_sweeps
    return calibrate_sweeps(noiseless["sweep_a"], noiseless["sweep_b"], seg="true-labels")


@pytest.fixture(scope="session")
def small_pair():
    """Short sweeps (60 frames) for tests that only need plausible images."""
    return _simulate(0.0, (0.0, 0.0), seed=3, n_frames=60)
