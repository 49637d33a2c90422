"""Synthetic tracked ultrasound sweeps over the phantom with a known calibration.

Frames are rendered at their true poses; the stored tracking matrices may be
perturbed to mimic tracker noise.  Intensities are label driven (no acoustic
physics) with a low resolution multiplicative speckle field and additive
Gaussian noise.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import zoom
from scipy.spatial.transform import Rotation

from .errors import CoverageError, InvalidArgument
from ._kernels import classify_points
from .geom import RigidTransform
from .phantom import Label, PhantomSpec

LABEL_LEVELS = np.array([20.0, 200.0, 120.0])  # indexed by Label code
SUPERSAMPLE = 3
PIVOT_DEPTH = 50.0  # mm below the transducer face; rotations of the sweep pivot here
TRANSDUCER_HEIGHT = 75.0  # mm above the base plane


class SweepKind(str, enum.Enum):
    AxialSweep = "axial"
    SagittalSweep = "sagittal"


@dataclass(frozen=True)
class ImagingGeometry:
    """Frame layout in mm.

    Image x runs along the width and is centred on the transducer; y is depth,
    zero at the transducer face.  Pixel (row, col) sits at
    ``x = (col - (cols - 1) / 2) * spacing``, ``y = row * spacing``.
    """
    kind: str = "linear"
    width: float = 128.0
    depth: float = 128.0
    spacing: float = 1.0
    apex_offset: float = 30.0  # convex only: distance of the virtual apex above the face
    aperture_deg: float = 90.0  # convex only: full fan angle

    def __post_init__(self):
        if self.kind not in ("linear", "convex"):
            raise InvalidArgument(f"unknown geometry kind {self.kind!r}")
        if not self.spacing > 0 or not self.width > 0 or not self.depth > 0:
            raise InvalidArgument("width, depth and spacing must be positive")

    @classmethod
    def convex(cls, **kw) -> ImagingGeometry:
        return cls(kind="convex", **kw)

    @property
    def shape(self) -> tuple[int, int]:
        return int(round(self.depth / self.spacing)), int(round(self.width / self.spacing))

    def pixel_xy(self) -> np.ndarray:
        """(rows, cols, 2) image coordinates of pixel centres in mm."""
        rows, cols = self.shape
        x = (np.arange(cols) - (cols - 1) / 2.0) * self.spacing
        y = np.arange(rows) * self.spacing
        gx, gy = np.meshgrid(x, y)
        return np.stack([gx, gy], axis=-1)

    def to_pixel(self, xy) -> np.ndarray:
        """mm -> fractional (row, col)."""
        xy = np.asarray(xy, float)
        cols = self.shape[1]
        return np.stack([xy[..., 1] / self.spacing,
                         xy[..., 0] / self.spacing + (cols - 1) / 2.0], axis=-1)

    def contains(self, xy) -> np.ndarray:
        """Whether image points (mm) fall inside the valid imaging region."""
        xy = np.asarray(xy, float)
        x, y = xy[..., 0], xy[..., 1]
        rows, cols = self.shape
        half = (cols - 1) / 2.0 * self.spacing
        inside = (np.abs(x) <= half + 1e-9) & (y >= -1e-9) & (y <= (rows - 1) * self.spacing + 1e-9)
        if self.kind == "convex":
            yy = y + self.apex_offset
            r = np.hypot(x, yy)
            ang = np.degrees(np.arctan2(np.abs(x), yy))
            inside &= (ang <= self.aperture_deg / 2.0) & (r >= self.apex_offset) \
                & (r <= self.apex_offset + self.depth)
        return inside

    def valid_mask(self) -> np.ndarray:
        return self.contains(self.pixel_xy())


@dataclass(frozen=True)
class NoiseConfig:
    speckle_sigma: float = 0.0
    gaussian_sigma: float = 0.0
    speckle_shape: tuple = (64, 32)

    @classmethod
    def from_level(cls, level: float) -> NoiseConfig:
        """Level 0 is noiseless; level 1 is the default noisy setting."""
        if level < 0:
            raise InvalidArgument("noise level must be non-negative")
        return cls(speckle_sigma=0.15 * level, gaussian_sigma=8.0 * level)

    @property
    def enabled(self) -> bool:
        return self.speckle_sigma > 0 or self.gaussian_sigma > 0


@dataclass
class Frame:
    intensity: np.ndarray  # uint8 (rows, cols)
    tracking: RigidTransform
    index: int
    true_labels: np.ndarray | None = None


@dataclass
class Sweep:
    frames: list
    geometry: ImagingGeometry
    sweep_id: str = "A"

    def __len__(self):
        return len(self.frames)

    @property
    def tracking(self) -> list:
        return [f.tracking for f in self.frames]


@dataclass
class SweepGroundTruth:
    calibration: RigidTransform
    tips: np.ndarray  # (n_cones, 3) analytic apex positions, world mm
    true_tracking: list = field(default_factory=list)
    # rows of (frame, cone, x, y, offplane): apex projected into frames where it is visible
    frame_tips: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    def tip_in_frame(self, cone: int) -> np.ndarray | None:
        """Row of ``frame_tips`` for ``cone`` with the smallest out-of-plane distance."""
        rows = self.frame_tips[self.frame_tips[:, 1] == cone]
        if len(rows) == 0:
            return None
        return rows[np.argmin(np.abs(rows[:, 4]))]


def default_calibration() -> RigidTransform:
    """Ground-truth image-to-marker transform used by the default simulations."""
    return RigidTransform.from_params([14.0, -38.0, 22.0, 84.0, -7.0, 168.0])


def _frame_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


# -- trajectories -------------------------------------------------------------

def _image_axes(kind: SweepKind) -> np.ndarray:
    """Columns: world directions of image x, image y (depth) and plane normal."""
    if kind == SweepKind.AxialSweep:
        ex, ey = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0])
    else:
        ex, ey = np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, -1.0])
    return np.column_stack([ex, ey, np.cross(ex, ey)])


def check_coverage(phantom: PhantomSpec, geom: ImagingGeometry) -> None:
    """Raise CoverageError if one frame cannot show a full row of cones with the base."""
    tips = phantom.tips()
    centers = np.array([c.base_center for c in phantom.cones], float)
    radii = np.array([c.base_radius for c in phantom.cones])
    lateral = max(np.abs(centers[:, 0]).max(), np.abs(centers[:, 1]).max()) + radii.max()
    rows, cols = geom.shape
    half_width = (cols - 1) / 2.0 * geom.spacing
    if half_width < lateral:
        raise CoverageError(f"image half width {half_width:g} mm < phantom half extent {lateral:g} mm")
    top = TRANSDUCER_HEIGHT - tips[:, 2].max()
    bottom = TRANSDUCER_HEIGHT + phantom.base_thickness / 2.0
    if top < 0 or (rows - 1) * geom.spacing < bottom:
        raise CoverageError("imaging depth does not reach the base plate")
    if geom.kind == "convex":
        # the outer cones must fit inside the fan at tip depth and at the base
        for depth in (top, TRANSDUCER_HEIGHT):
            xy = np.array([[lateral - radii.max(), depth], [-(lateral - radii.max()), depth]])
            if not geom.contains(xy).all():
                raise CoverageError("convex fan too narrow for the phantom")


def dwell_positions(n_frames: int, lo: float, hi: float, centers, width: float = 3.0,
                    dwell_fraction: float = 0.6) -> np.ndarray:
    """Sweep coordinates for ``n_frames`` frames that slow down near ``centers``.

    About ``dwell_fraction`` of the frames fall in Gaussian bumps of
    ``width`` mm around the centres; the rest spread uniformly over [lo, hi].
    """
    grid = np.linspace(lo, hi, 4001)
    bumps = np.zeros_like(grid)
    for c in np.atleast_1d(centers):
        bumps += np.exp(-0.5 * ((grid - c) / width) ** 2)
    if bumps.sum() == 0 or dwell_fraction <= 0:
        density = np.ones_like(grid)
    else:
        density = (1 - dwell_fraction) / (hi - lo) + dwell_fraction * bumps / trapezoid(bumps, grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    u = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.array([0.5])
    return np.interp(u, cdf, grid)


def make_trajectory(kind, n_frames: int, phantom: PhantomSpec, C_gt: RigidTransform,
                    geom: ImagingGeometry | None = None, jitter: tuple = (0.0, 0.0),
                    seed: int = 0, amplitudes: tuple = (30.0, 2.0, 3.0),
                    dwell_fraction: float = 0.6) -> list:
    """Tracking poses (marker -> world) of a sweep across the phantom.

    The image plane advances along the sweep normal, slowing down over each
    row of cone tips, while rocking smoothly: in-plane roll, yaw about the
    depth axis and a small elevational tilt with peak angles ``amplitudes``
    (degrees).  ``jitter`` = (mm, deg) adds i.i.d. per-frame perturbations
    to the true pose.
    """
    kind = SweepKind(kind)
    geom = geom or ImagingGeometry()
    if n_frames < 1:
        raise InvalidArgument("n_frames must be at least 1")
    check_coverage(phantom, geom)
    axes = _image_axes(kind)
    centers = np.array([c.base_center for c in phantom.cones], float)
    radii = np.array([c.base_radius for c in phantom.cones])
    sweep_axis = axes[:, 2]
    along = (centers - np.asarray(phantom.base_point)) @ sweep_axis
    roll_amp, yaw_amp, tilt_amp = amplitudes
    lateral = np.abs(centers @ axes[:, 0]).max()
    reach = np.abs(along).max() + radii.max() + lateral * np.tan(np.radians(yaw_amp)) + 4.0
    positions = dwell_positions(n_frames, -reach, reach, np.unique(np.round(along, 6)),
                                dwell_fraction=dwell_fraction)

    phase = 0.0 if kind == SweepKind.AxialSweep else 1.3
    pivot_img = np.array([0.0, PIVOT_DEPTH, 0.0])
    pivot_height = TRANSDUCER_HEIGHT - PIVOT_DEPTH
    base = np.asarray(phantom.base_point)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    C_inv = C_gt.inverse()
    poses = []
    for i, s in enumerate(positions):
        u = i / (n_frames - 1) if n_frames > 1 else 0.5
        angles = np.array([tilt_amp * np.sin(2 * np.pi * 0.5 * u + phase + 0.7),
                           yaw_amp * np.sin(2 * np.pi * u + phase),
                           roll_amp * np.sin(2 * np.pi * 0.75 * u + phase + 2.1)])
        local = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
        R = axes @ local
        pivot_world = base + s * sweep_axis + np.array([0.0, 0.0, pivot_height])
        t = pivot_world - R @ pivot_img
        pose = RigidTransform(R, t)
        if jitter[0] > 0 or jitter[1] > 0:
            pose = pose @ _random_perturbation(rng, *jitter)
        poses.append(pose @ C_inv)
    return poses


def _random_perturbation(rng: np.random.Generator, sigma_t: float, sigma_r_deg: float) -> RigidTransform:
    rotvec = rng.normal(0.0, np.radians(sigma_r_deg), 3) if sigma_r_deg > 0 else np.zeros(3)
    trans = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
    return RigidTransform(Rotation.from_rotvec(rotvec).as_matrix(), trans)


def image_pose(T: RigidTransform, C: RigidTransform) -> RigidTransform:
    return T @ C


def cone_visibility(phantom: PhantomSpec, poses, C: RigidTransform,
                    geom: ImagingGeometry) -> np.ndarray:
    """(n_frames, n_cones) bool: plane crosses the cone within half its base radius
    of the axis, and both the apex projection and the axis foot lie in the image."""
    tips = phantom.tips()
    feet = np.array([c.base_center for c in phantom.cones], float)
    radii = np.array([c.base_radius for c in phantom.cones])
    vis = np.zeros((len(poses), len(tips)), dtype=bool)
    for i, T in enumerate(poses):
        inv = (T @ C).inverse()
        lt, lf = inv.apply(tips), inv.apply(feet)
        vis[i] = (np.abs(lt[:, 2]) <= radii / 2) & geom.contains(lt[:, :2]) & geom.contains(lf[:, :2])
    return vis


def longest_run(flags) -> int:
    best = cur = 0
    for f in flags:
        cur = cur + 1 if f else 0
        best = max(best, cur)
    return best


# -- rendering ----------------------------------------------------------------

def render_labels(phantom: PhantomSpec, pose: RigidTransform, geom: ImagingGeometry,
                  supersample: int = 1) -> np.ndarray:
    """Labels at pixel centres, or (rows, cols, s*s) sub-pixel labels when supersampled."""
    xy = geom.pixel_xy()
    if supersample > 1:
        off = ((np.arange(supersample) + 0.5) / supersample - 0.5) * geom.spacing
        ox, oy = np.meshgrid(off, off)
        xy = xy[:, :, None, :] + np.stack([ox.ravel(), oy.ravel()], axis=-1)[None, None]
    pts = np.zeros(xy.shape[:-1] + (3,))
    pts[..., :2] = xy
    labels = _classify_near(phantom, pose.apply(pts))
    return labels


def _classify_near(phantom: PhantomSpec, q: np.ndarray) -> np.ndarray:
    """Compiled equivalent of classify_point for (..., 3) points."""
    flat = np.ascontiguousarray(q.reshape(-1, 3), dtype=float)
    e1, e2 = phantom._axes
    out = np.empty(flat.shape[0], dtype=np.uint8)
    classify_points(flat, np.asarray(phantom.base_point, float), phantom.normal, e1, e2,
                    float(phantom.base_thickness), float(phantom.plate_half_extent),
                    np.array([c.base_center for c in phantom.cones], float).reshape(-1, 3),
                    np.array([c.base_radius for c in phantom.cones], float),
                    np.array([c.height for c in phantom.cones], float), out)
    return out.reshape(q.shape[:-1])


def render_frame(phantom: PhantomSpec, T: RigidTransform, C_gt: RigidTransform,
                 geom: ImagingGeometry, noise: NoiseConfig | None = None,
                 rng: np.random.Generator | None = None, index: int = 0) -> Frame:
    """Render the frame seen at true tracking pose ``T``.

    ``true_labels`` samples pixel centres; intensity averages the label levels
    over a 3x3 sub-pixel grid (partial volume) before noise is applied.
    """
    noise = noise or NoiseConfig()
    pose = T @ C_gt
    valid = geom.valid_mask()
    labels = render_labels(phantom, pose, geom)
    labels[~valid] = Label.Background
    sub = render_labels(phantom, pose, geom, SUPERSAMPLE)
    level = LABEL_LEVELS[sub].mean(axis=-1)
    if noise.enabled:
        rng = rng if rng is not None else np.random.default_rng(0)
        rows, cols = geom.shape
        if noise.speckle_sigma > 0:
            coarse = rng.standard_normal(noise.speckle_shape)
            field_ = zoom(coarse, (rows / coarse.shape[0], cols / coarse.shape[1]), order=1)
            level = level * np.clip(1.0 + noise.speckle_sigma * field_[:rows, :cols], 0.0, None)
        if noise.gaussian_sigma > 0:
            level = level + rng.normal(0.0, noise.gaussian_sigma, level.shape)
    level[~valid] = 0.0
    intensity = np.clip(np.rint(level), 0, 255).astype(np.uint8)
    return Frame(intensity=intensity, tracking=T, index=index, true_labels=labels)


def simulate_sweep(phantom: PhantomSpec, trajectory, C_gt: RigidTransform,
                   geom: ImagingGeometry | None = None, noise: NoiseConfig | None = None,
                   tracking_noise: tuple = (0.0, 0.0), seed: int = 0, sweep_id: str = "A",
                   jobs: int = 1) -> tuple[Sweep, SweepGroundTruth]:
    """Render every pose of ``trajectory`` and store noisy tracking.

    Randomness is split per frame from ``seed`` so that the output does not
    depend on ``jobs``.
    """
    geom = geom or ImagingGeometry()
    noise = noise or NoiseConfig()
    stream = sum(ord(ch) for ch in sweep_id)

    def one(i):
        T = trajectory[i]
        frame = render_frame(phantom, T, C_gt, geom, noise, _frame_rng(seed, stream, i), index=i)
        if tracking_noise[0] > 0 or tracking_noise[1] > 0:
            prng = _frame_rng(seed, stream + 1000, i)
            frame.tracking = T @ _random_perturbation(prng, *tracking_noise)
        return frame

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            frames = list(pool.map(one, range(len(trajectory))))
    else:
        frames = [one(i) for i in range(len(trajectory))]

    tips = phantom.tips()
    rows = []
    radii = np.array([c.base_radius for c in phantom.cones])
    for i, T in enumerate(trajectory):
        local = (T @ C_gt).inverse().apply(tips)
        for k in np.flatnonzero((np.abs(local[:, 2]) <= radii / 2) & geom.contains(local[:, :2])):
            rows.append((i, k, local[k, 0], local[k, 1], local[k, 2]))
    gt = SweepGroundTruth(C_gt, tips, list(trajectory),
                          np.array(rows, float).reshape(-1, 5))
    return Sweep(frames, geom, sweep_id), gt
