"""Nine-cone calibration phantom: geometry, point labels and labelmap volumes."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import FormatError, InvalidArgument


class Label(enum.IntEnum):
    Background = 0
    Base = 1
    Cone = 2


GRID_PITCH = 40.0
BASE_RADIUS = 12.0
BASE_THICKNESS = 10.0
PLATE_HALF_EXTENT = 70.0
# Row-major heights on the 3x3 grid; 4-neighbours differ by at least 15 mm.
DEFAULT_HEIGHTS = (20.0, 35.0, 50.0,
                   40.0, 55.0, 25.0,
                   60.0, 30.0, 45.0)
MIN_ADJACENT_DIFF = 5.0


@dataclass(frozen=True)
class Cone:
    base_center: tuple
    base_radius: float
    height: float

    def tip(self, normal) -> np.ndarray:
        return np.asarray(self.base_center, float) + self.height * np.asarray(normal, float)


@dataclass(frozen=True)
class PhantomSpec:
    cones: tuple
    base_point: tuple = (0.0, 0.0, 0.0)
    base_normal: tuple = (0.0, 0.0, 1.0)
    base_thickness: float = BASE_THICKNESS
    plate_half_extent: float = PLATE_HALF_EXTENT
    _axes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = np.asarray(self.base_normal, float)
        if n.shape != (3,) or np.linalg.norm(n) == 0:
            raise InvalidArgument("base_normal must be a non-zero 3-vector")
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "base_normal", tuple(n))
        object.__setattr__(self, "base_point", tuple(float(v) for v in self.base_point))
        object.__setattr__(self, "cones", tuple(self.cones))
        # in-plane axes of the square plate: world x projected onto the plane
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = ref - ref.dot(n) * n
        e1 /= np.linalg.norm(e1)
        object.__setattr__(self, "_axes", (e1, np.cross(n, e1)))

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.base_normal)

    @property
    def heights(self) -> np.ndarray:
        return np.array([c.height for c in self.cones])

    def tips(self) -> np.ndarray:
        """(n_cones, 3) analytic apex positions."""
        return np.array([c.tip(self.normal) for c in self.cones])

    def scaled(self, s: float) -> PhantomSpec:
        cones = [Cone(tuple(s * np.asarray(c.base_center)), s * c.base_radius, s * c.height)
                 for c in self.cones]
        return PhantomSpec(cones, tuple(s * np.asarray(self.base_point)), self.base_normal,
                           s * self.base_thickness, s * self.plate_half_extent)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned world bounding box (lo, hi) of plate and cones."""
        n = self.normal
        e1, e2 = self._axes
        o = np.asarray(self.base_point)
        pts = []
        for a in (-1, 1):
            for b in (-1, 1):
                corner = o + self.plate_half_extent * (a * e1 + b * e2)
                pts += [corner, corner - self.base_thickness * n]
        for c in self.cones:
            pts.append(c.tip(n))
            ctr = np.asarray(c.base_center, float)
            pts += [ctr + c.base_radius * s * e for e in (e1, e2) for s in (-1, 1)]
        pts = np.array(pts)
        return pts.min(axis=0), pts.max(axis=0)

    def validate(self) -> None:
        """Raise InvalidArgument unless this is a usable nine-cone phantom."""
        if len(self.cones) != 9:
            raise InvalidArgument(f"phantom needs 9 cones, got {len(self.cones)}")
        h = self.heights
        if len(set(h.tolist())) != 9:
            raise InvalidArgument("cone heights must be pairwise distinct")
        if np.any(h <= 0) or any(c.base_radius <= 0 for c in self.cones):
            raise InvalidArgument("cone heights and radii must be positive")
        for i, j in combinations(range(9), 2):
            ci, cj = self.cones[i], self.cones[j]
            d = np.linalg.norm(np.subtract(ci.base_center, cj.base_center))
            if d <= ci.base_radius + cj.base_radius:
                raise InvalidArgument(f"cones {i} and {j} overlap")
        for i, j in grid_adjacency(self):
            if abs(h[i] - h[j]) < MIN_ADJACENT_DIFF:
                raise InvalidArgument(
                    f"adjacent cones {i} and {j} have similar heights {h[i]:g}, {h[j]:g}")


def grid_adjacency(spec: PhantomSpec) -> list[tuple[int, int]]:
    """4-neighbour pairs: cones whose centres sit one grid pitch apart."""
    centers = np.array([c.base_center for c in spec.cones], float)
    d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    pitch = d[d > 0].min()
    return [(i, j) for i, j in combinations(range(len(centers)), 2) if d[i, j] <= 1.05 * pitch]


def default_phantom() -> PhantomSpec:
    cones = []
    for k, h in enumerate(DEFAULT_HEIGHTS):
        r, c = divmod(k, 3)
        cones.append(Cone(((c - 1) * GRID_PITCH, (r - 1) * GRID_PITCH, 0.0), BASE_RADIUS, h))
    spec = PhantomSpec(tuple(cones))
    spec.validate()
    return spec


def classify_point(spec: PhantomSpec, q) -> np.ndarray:
    """Label of world point(s) ``q`` (shape (..., 3)); returns uint8 codes of Label."""
    q = np.asarray(q, dtype=float)
    n = spec.normal
    labels = np.zeros(q.shape[:-1], dtype=np.uint8)

    rel = q - np.asarray(spec.base_point)
    h = rel @ n
    e1, e2 = spec._axes
    in_slab = ((h <= 0.0) & (h >= -spec.base_thickness)
               & (np.abs(rel @ e1) <= spec.plate_half_extent)
               & (np.abs(rel @ e2) <= spec.plate_half_extent))
    labels[in_slab] = Label.Base

    in_cone = np.zeros(q.shape[:-1], dtype=bool)
    for cone in spec.cones:
        rc = q - np.asarray(cone.base_center, float)
        hc = rc @ n
        radial = np.linalg.norm(rc - hc[..., None] * n, axis=-1)
        in_cone |= ((hc >= 0.0) & (hc <= cone.height)
                    & (radial <= cone.base_radius * (1.0 - hc / cone.height)))
    labels[in_cone] = Label.Cone
    return labels


@dataclass
class LabelVolume:
    data: np.ndarray  # uint8, indexed [k, j, i] = [z, y, x]
    spacing: float
    origin: np.ndarray  # world position of voxel (0, 0, 0) centre

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    def voxel_centers(self, axis: str) -> np.ndarray:
        i = "xyz".index(axis)
        return self.origin[i] + self.spacing * np.arange(self.dims[i])


def rasterize_labelmap(spec: PhantomSpec, spacing: float, margin: float = 5.0) -> LabelVolume:
    if not spacing > 0:
        raise InvalidArgument(f"spacing must be positive, got {spacing}")
    lo, hi = spec.bounds()
    origin = lo - margin
    dims = np.floor((hi + margin - origin) / spacing).astype(int) + 1
    xs, ys = (origin[i] + spacing * np.arange(dims[i]) for i in range(2))
    gx, gy = np.meshgrid(xs, ys)
    data = np.empty((dims[2], dims[1], dims[0]), dtype=np.uint8)
    pts = np.empty(gx.shape + (3,))
    pts[..., 0], pts[..., 1] = gx, gy
    # one z slab at a time keeps memory flat
    for k in range(dims[2]):
        pts[..., 2] = origin[2] + spacing * k
        data[k] = classify_point(spec, pts)
    return LabelVolume(data, float(spacing), origin)


def intertip_distances(spec: PhantomSpec) -> np.ndarray:
    """Distances between all unordered tip pairs in (i < j) order."""
    return pdist(spec.tips())


def pair_indices(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


# -- file formats -------------------------------------------------------------

def format_phantom(spec: PhantomSpec) -> str:
    def vec(v):
        return " ".join(f"{x:.17g}" for x in v)

    lines = ["# nine-cone calibration phantom, lengths in mm",
             f"base_point = {vec(spec.base_point)}",
             f"base_normal = {vec(spec.base_normal)}",
             f"base_thickness = {spec.base_thickness:.17g}",
             f"plate_half_extent = {spec.plate_half_extent:.17g}"]
    for c in spec.cones:
        lines.append(f"cone = {vec(c.base_center)} {c.base_radius:.17g} {c.height:.17g}")
    return "\n".join(lines) + "\n"


def parse_phantom(text: str, strict: bool = True) -> PhantomSpec:
    kw = {}
    cones = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise FormatError(f"line {lineno}: expected key = value")
        try:
            nums = [float(v) for v in value.split()]
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric value {value!r}") from None
        if key == "cone":
            if len(nums) != 5:
                raise FormatError(f"line {lineno}: cone needs cx cy cz radius height")
            cones.append(Cone(tuple(nums[:3]), nums[3], nums[4]))
        elif key in ("base_point", "base_normal"):
            if len(nums) != 3:
                raise FormatError(f"line {lineno}: {key} needs 3 values")
            kw[key] = tuple(nums)
        elif key in ("base_thickness", "plate_half_extent"):
            if len(nums) != 1:
                raise FormatError(f"line {lineno}: {key} needs one value")
            kw[key] = nums[0]
        else:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
    try:
        spec = PhantomSpec(tuple(cones), **kw)
        if strict:
            spec.validate()
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from None
    return spec


def save_phantom(path, spec: PhantomSpec) -> None:
    Path(path).write_text(format_phantom(spec))


def load_phantom(path, strict: bool = True) -> PhantomSpec:
    """Read a phantom file; the literal path ``default`` gives the built-in phantom."""
    if str(path) == "default":
        return default_phantom()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read phantom spec {path}: {exc}") from None
    return parse_phantom(text, strict)


def save_labelmap(directory, vol: LabelVolume, stem: str = "labelmap") -> tuple[Path, Path]:
    """Write ``<stem>.raw`` (uint8, x fastest) and ``<stem>.txt`` header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raw = directory / f"{stem}.raw"
    hdr = directory / f"{stem}.txt"
    raw.write_bytes(np.ascontiguousarray(vol.data, dtype=np.uint8).tobytes())
    nx, ny, nz = vol.dims
    o = vol.origin
    hdr.write_text(f"dims = {nx} {ny} {nz}\n"
                   f"spacing = {vol.spacing:.17g}\n"
                   f"origin = {o[0]:.17g} {o[1]:.17g} {o[2]:.17g}\n"
                   f"type = uint8\n"
                   f"labels = 0:background 1:base 2:cone\n")
    return raw, hdr


def load_labelmap(directory, stem: str = "labelmap") -> LabelVolume:
    directory = Path(directory)
    meta = {}
    for line in (directory / f"{stem}.txt").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    try:
        nx, ny, nz = (int(v) for v in meta["dims"].split())
        spacing = float(meta["spacing"])
        origin = np.array([float(v) for v in meta["origin"].split()])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad labelmap header: {exc}") from None
    data = np.frombuffer((directory / f"{stem}.raw").read_bytes(), dtype=np.uint8)
    if data.size != nx * ny * nz:
        raise FormatError("labelmap raw size does not match header dims")
    return LabelVolume(data.reshape(nz, ny, nx).copy(), spacing, origin)
