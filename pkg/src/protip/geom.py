"""Rigid transforms and image/world point mappings.

Transforms act on column vectors, so ``compose(a, b)`` applies ``b`` first.
An image point ``(x, y)`` in mm lives on the plane z = 0 of the image frame
and is promoted to ``(x, y, 0, 1)`` before any mapping.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import FormatError, InvalidArgument

RIGID_TOL = 1e-9


class ImagePoint(NamedTuple):
    x: float  # mm along the image width
    y: float  # mm along the image depth

    def homogeneous(self) -> np.ndarray:
        return np.array([self.x, self.y, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, check: bool = True, tol: float = 1e-6) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise InvalidArgument(f"expected a 4x4 matrix, got {m.shape}")
        if check:
            if not np.allclose(m[3], [0, 0, 0, 1], atol=tol):
                raise InvalidArgument("last row of a rigid transform must be (0, 0, 0, 1)")
            if not is_rotation(m[:3, :3], tol):
                raise InvalidArgument("upper-left block is not a rotation")
            # snap text round-off back onto SO(3)
            u, _, vt = np.linalg.svd(m[:3, :3])
            return cls(u @ vt, m[:3, 3])
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> RigidTransform:
        return cls(np.eye(3), [x, y, z])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0), degrees: bool = False) -> RigidTransform:
        r = Rotation.from_rotvec(np.asarray(rotvec, dtype=float), degrees=degrees).as_matrix()
        return cls(r, translation)

    @classmethod
    def from_params(cls, params) -> RigidTransform:
        """Build from ``(tx, ty, tz, rx, ry, rz)``; angles in degrees, XYZ extrinsic."""
        p = np.asarray(params, dtype=float)
        r = Rotation.from_euler("xyz", p[3:], degrees=True).as_matrix()
        return cls(r, p[:3])

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 100.0) -> RigidTransform:
        r = Rotation.random(random_state=rng).as_matrix()
        return cls(r, rng.uniform(-translation_scale, translation_scale, 3))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map (..., 3) points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def is_rigid(self, tol: float = RIGID_TOL) -> bool:
        return is_rotation(self.rotation, tol)

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return np.allclose(self.matrix, other.matrix, atol=atol, rtol=0)

    def __repr__(self):
        rows = np.array2string(self.matrix, precision=6, suppress_small=True)
        return f"RigidTransform(\n{rows})"


def is_rotation(r, tol: float = RIGID_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    return (np.linalg.norm(r.T @ r - np.eye(3)) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return a @ b


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def rot_z(angle_deg: float) -> RigidTransform:
    return RigidTransform.from_rotvec([0.0, 0.0, angle_deg], degrees=True)


def image_to_homogeneous(points) -> np.ndarray:
    """(N, 2) image points in mm -> (N, 4) homogeneous ``(x, y, 0, 1)``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((p.shape[0], 4))
    out[:, :2] = p
    out[:, 3] = 1.0
    return out


def map_to_world(T: RigidTransform, C: RigidTransform, p) -> np.ndarray:
    """World position ``T @ C @ (x, y, 0, 1)``; ``p`` may be one point or (N, 2)."""
    p = np.asarray(p, dtype=float)
    pts = np.zeros(p.shape[:-1] + (3,))
    pts[..., :2] = p
    return (T @ C).apply(pts)


def rotation_angle_deg(r) -> float:
    """Angle of a rotation matrix, robust near 0 and 180 degrees."""
    return float(np.degrees(np.linalg.norm(Rotation.from_matrix(r).as_rotvec())))


def pose_delta(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation difference in mm, rotation difference in degrees)."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    return dt, rotation_angle_deg(a.rotation.T @ b.rotation)


# -- text format: 4 rows of 4 whitespace separated numbers -------------------

def format_transform(t: RigidTransform, digits: int = 9) -> str:
    """Rows of ``digits`` significant digits; 17 round-trips exactly."""
    m = t.matrix
    return "".join(" ".join(_fmt(v, digits) for v in row) + "\n" for row in m)


def _fmt(v: float, digits: int) -> str:
    s = f"{v:.{digits}g}"
    return "0" if s == "-0" else s


def parse_transform(text: str, check: bool = True) -> RigidTransform:
    return RigidTransform.from_matrix(parse_matrix_rows(text.split("\n"), 4), check=check)


def parse_matrix_rows(lines, n_rows: int = 4) -> np.ndarray:
    rows = [ln.split() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) != n_rows or any(len(r) != 4 for r in rows):
        raise FormatError(f"expected {n_rows} rows of 4 numbers")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"non-numeric matrix entry: {exc}") from None


def save_transform(path, t: RigidTransform, digits: int = 9) -> None:
    Path(path).write_text(format_transform(t, digits))


def load_transform(path) -> RigidTransform:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read transform {path}: {exc}") from None
    try:
        return parse_transform(text)
    except InvalidArgument as exc:
        raise FormatError(f"{path}: {exc}") from None
