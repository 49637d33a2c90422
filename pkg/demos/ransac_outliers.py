"""RANSAC against wrong tip pairings.

Builds noiseless matches from a random calibration, swaps a growing share of
them for wrong pairings, and reports whether the consensus set still holds
every correct match.
"""
import numpy as np

from protip.geom import RigidTransform, pose_delta
from protip.solve import RansacConfig, ransac_calibrate, solve_matches


def image_pose_through(rng, q, xy):
    R = RigidTransform.random(rng).rotation
    return RigidTransform(R, q - R @ np.array([xy[0], xy[1], 0.0]))


def correct_matches(C, n, rng):
    out = []
    for _ in range(n):
        q = rng.uniform(-60, 60, 3)
        pa, pb = rng.uniform([-50, 10], [50, 110], (2, 2))
        PA, PB = image_pose_through(rng, q, pa), image_pose_through(rng, q, pb)
        out.append((PA @ C.inverse(), pa, PB @ C.inverse(), pb))
    return out


def main():
    rng = np.random.default_rng(0)
    C_gt = RigidTransform.random(rng, translation_scale=40)
    good = correct_matches(C_gt, 9, rng)
    # a little detection noise so the errors are not all zero
    good = [(TA, pa + rng.normal(0, 0.3, 2), TB, pb + rng.normal(0, 0.3, 2))
            for TA, pa, TB, pb in good]
    print(f"direct solve on the 9 correct matches: "
          f"{pose_delta(solve_matches(good), C_gt)[0]:.3f} mm")
    print("false  inliers  correct kept  error mm  error deg")
    for n_bad in (0, 3, 6, 9, 12):
        bad = []
        for _ in range(n_bad):
            i, j = rng.choice(9, 2, replace=False)
            bad.append((good[i][0], good[i][1], good[j][2], good[j][3]))
        res = ransac_calibrate(good + bad, RansacConfig(seed=1))
        kept = np.isin(np.arange(9), res.inliers).sum()
        dt, dr = pose_delta(res.C, C_gt)
        print(f"{n_bad:5d}  {len(res.inliers):7d}  {kept:12d}  {dt:8.3f}  {dr:9.3f}")


if __name__ == "__main__":
    main()
