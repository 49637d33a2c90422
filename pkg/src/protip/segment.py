"""Per-frame label masks and the base-plate line used as height datum."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError
from .io import read_pgm
from .phantom import Label

BASE_LEVEL = 160
CONE_LEVEL = 80
_SQUARE = np.ones((3, 3), dtype=bool)


@dataclass
class LabelMask:
    labels: np.ndarray  # uint8 Label codes
    spacing: float

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class BaseLineConfig:
    inlier_distance: float = 1.5  # mm
    iterations: int = 200
    min_base_pixels: int = 50
    min_inlier_ratio: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class BaseLine:
    point: np.ndarray  # image mm, on the plate surface
    direction: np.ndarray  # unit, x component >= 0
    inlier_count: int

    @property
    def normal(self) -> np.ndarray:
        """Unit normal pointing to the side nearer the transducer (smaller depth)."""
        n = np.array([self.direction[1], -self.direction[0]])
        return n if n[1] < 0 else -n

    def signed_distance(self, xy) -> np.ndarray:
        """Height above the line in mm; positive toward the transducer."""
        return (np.asarray(xy, float) - self.point) @ self.normal

    def angle_deg(self) -> float:
        return float(np.degrees(np.arctan2(self.direction[1], self.direction[0])))


def threshold_labels(intensity) -> np.ndarray:
    img = np.asarray(intensity)
    out = np.full(img.shape, Label.Background, dtype=np.uint8)
    out[(img >= CONE_LEVEL) & (img < BASE_LEVEL)] = Label.Cone
    out[img >= BASE_LEVEL] = Label.Base
    return out


def _open_by_reconstruction(mask: np.ndarray) -> np.ndarray:
    """Drop components that a 3x3 opening erases; keep survivors at full extent."""
    opened = ndimage.binary_opening(mask, structure=_SQUARE)
    if not opened.any():
        return opened
    lab, _ = ndimage.label(mask, structure=_SQUARE)
    keep = np.unique(lab[opened])
    return np.isin(lab, keep[keep > 0])


def reference_segment(intensity, spacing: float = 1.0) -> LabelMask:
    """Median filter, intensity bands, then per-class cleanup of small specks."""
    smooth = ndimage.median_filter(np.asarray(intensity), size=3, mode="nearest")
    raw = threshold_labels(smooth)
    out = np.full(raw.shape, Label.Background, dtype=np.uint8)
    for cls in (Label.Base, Label.Cone):
        out[_open_by_reconstruction(raw == cls)] = cls
    return LabelMask(out, spacing)


def segment_frame(frame, spacing: float = 1.0, use_true_labels: bool = False) -> LabelMask:
    if use_true_labels:
        if frame.true_labels is None:
            raise FormatError(f"frame {frame.index} has no ground-truth labels")
        return LabelMask(np.asarray(frame.true_labels, dtype=np.uint8).copy(), spacing)
    return reference_segment(frame.intensity, spacing)


def load_external_masks(directory, sweep) -> list:
    """Read ``mask_%05d.pgm`` for every frame of ``sweep``."""
    directory = Path(directory)
    masks = []
    shape = sweep.geometry.shape
    for frame in sweep.frames:
        path = directory / f"mask_{frame.index:05d}.pgm"
        if not path.exists():
            raise FormatError(f"missing mask for frame {frame.index}: {path}")
        labels = read_pgm(path)
        if labels.shape != shape:
            raise FormatError(f"mask {path.name} has shape {labels.shape}, expected {shape}")
        if labels.max(initial=0) > Label.Cone:
            raise FormatError(f"mask {path.name} contains label {int(labels.max())} outside {{0,1,2}}")
        masks.append(LabelMask(labels.astype(np.uint8), sweep.geometry.spacing))
    return masks


# -- base line ----------------------------------------------------------------

def surface_points(mask: LabelMask, x0: float | None = None) -> np.ndarray:
    """Top-edge points (mm) of Base pixels whose shallower neighbour is not Base.

    Isolated Base pixels (no Base pixel among their 8 neighbours) are specks,
    not plate surface, and are ignored.  ``x0`` is the x coordinate of
    column 0; by default columns are centred.
    """
    base = mask.labels == Label.Base
    nbrs = ndimage.convolve(base.astype(np.uint8), _SQUARE.astype(np.uint8), mode="constant")
    base &= nbrs > 1
    top = base.copy()
    top[1:] &= ~base[:-1]
    rows, cols = np.nonzero(top)
    sp = mask.spacing
    if x0 is None:
        x0 = -(mask.shape[1] - 1) / 2.0 * sp
    return np.column_stack([x0 + cols * sp, rows * sp - sp / 2.0])


def _tls_line(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    d = vt[0]
    return c, (d if d[0] >= 0 else -d)


def fit_base_line(mask: LabelMask, cfg: BaseLineConfig | None = None,
                  rng: np.random.Generator | None = None) -> BaseLine | None:
    """RANSAC line through the plate surface; None means the frame is skipped."""
    cfg = cfg or BaseLineConfig()
    if np.count_nonzero(mask.labels == Label.Base) < cfg.min_base_pixels:
        return None
    pts = surface_points(mask)
    n = len(pts)
    if n < 2:
        return None
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    best_count, best_inl = -1, None
    for _ in range(cfg.iterations):
        i, j = rng.choice(n, size=2, replace=False)
        d = pts[j] - pts[i]
        norm = np.hypot(*d)
        if norm == 0:
            continue
        nrm = np.array([-d[1], d[0]]) / norm
        inl = np.abs((pts - pts[i]) @ nrm) <= cfg.inlier_distance
        count = int(inl.sum())
        if count > best_count:
            best_count, best_inl = count, inl
    if best_inl is None or best_count < 2 or best_count / n < cfg.min_inlier_ratio:
        return None
    point, direction = _tls_line(pts[best_inl])
    return BaseLine(point, direction, best_count)
