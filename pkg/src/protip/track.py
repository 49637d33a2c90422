"""Cone detections per frame, tracks across frames, tips and cross-sweep matches."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geom import ImagePoint
from .phantom import Label

MIN_AREA = 25.0  # mm^2
MAX_GAP = 3  # frames
MIN_DETECTIONS = 10
SMOOTH_WINDOW = 5
MIN_TIP_HEIGHT = 15.0  # mm
MATCH_THRESHOLD = 3.0  # mm
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Detection:
    frame_index: int
    bbox: tuple  # (row0, col0, row1, col1), inclusive pixel indices
    highest_point: ImagePoint
    height: float
    area: float
    # subpixel apex from the cone flanks; equals highest_point when the fit is unusable
    apex: ImagePoint = None
    apex_height: float = None

    def __post_init__(self):
        if self.apex is None:
            object.__setattr__(self, "apex", self.highest_point)
            object.__setattr__(self, "apex_height", self.height)


class TrackState(enum.Enum):
    Active = "active"
    Terminated = "terminated"


@dataclass(eq=False)
class ConeTrack:
    detections: list = field(default_factory=list)
    state: TrackState = TrackState.Active
    track_id: int = 0

    @property
    def last_update(self) -> int:
        return self.detections[-1].frame_index

    @property
    def heights(self) -> np.ndarray:
        return np.array([d.height for d in self.detections])

    @property
    def apex_heights(self) -> np.ndarray:
        return np.array([d.apex_height for d in self.detections])

    def __len__(self):
        return len(self.detections)


@dataclass(frozen=True)
class Tip:
    sweep_id: str
    frame_index: int
    image_point: ImagePoint
    smoothed_height: float
    source_track: ConeTrack = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class TipMatch:
    tip_a: Tip
    tip_b: Tip

    @property
    def height_difference(self) -> float:
        return abs(self.tip_a.smoothed_height - self.tip_b.smoothed_height)


def _pixel_xy(mask, rows, cols, x0=None):
    sp = mask.spacing
    if x0 is None:
        x0 = -(mask.shape[1] - 1) / 2.0 * sp
    return np.column_stack([x0 + cols * sp, rows * sp])


def fit_apex(pixel_xy, base, top_height: float, sp: float):
    """Subpixel apex of a cone section from its pixel set.

    Where the image plane passes through the cone axis the section is a
    triangle, so the area lying above height h is k (H - h)^2 and its square
    root falls linearly to zero at the apex height H.  Counting pixels is an
    area integral, far less sensitive to the pixel grid than the outline,
    and extrapolating the line recovers the top that point sampling clips.
    The apex abscissa is the centroid of the upper part.  Returns
    (xy, height) or None when too few pixels or the estimate is implausible.
    """
    h = base.signed_distance(pixel_xy)
    lo = max(2.0 * sp, 0.3 * top_height)
    hi = top_height - 2.0 * sp
    if hi - lo < 4.0 * sp:
        return None
    levels = np.arange(lo, hi, 0.5 * sp)
    hs = np.sort(h)
    counts = len(hs) - np.searchsorted(hs, levels, side="left")
    root = np.sqrt(counts) * sp
    slope, icpt = np.polyfit(levels, root, 1)
    if slope >= 0:
        return None
    h0 = -icpt / slope
    if not (top_height - 1.5 * sp <= h0 <= top_height + 6.0 * sp):
        return None
    u = (pixel_xy - base.point) @ base.direction
    upper = h >= lo
    u0 = float(u[upper].mean())
    xy = base.point + u0 * base.direction + h0 * base.normal
    return xy, float(h0)


def detect_cones(mask, base, geom=None, frame_index: int = 0) -> list:
    """Connected Cone components above the base line, with their highest point.

    The highest point is taken on the pixel boundary: the pixel centre with
    the largest height, moved half a pixel along the base-line normal.  Each
    detection also carries a subpixel apex fitted to the component outline
    (see ``fit_apex``).
    """
    if base is None:
        return []
    labels = mask.labels
    rows, cols = np.nonzero(labels == Label.Cone)
    if len(rows) == 0:
        return []
    xy = _pixel_xy(mask, rows, cols)
    above = base.signed_distance(xy) > 0
    cone = np.zeros(labels.shape, dtype=bool)
    cone[rows[above], cols[above]] = True
    comp, n = ndimage.label(cone, structure=_FOUR)
    if n == 0:
        return []
    sp = mask.spacing
    out = []
    for k, sl in enumerate(ndimage.find_objects(comp), start=1):
        r, c = np.nonzero(comp[sl] == k)
        area = len(r) * sp * sp
        if area < MIN_AREA:
            continue
        r = r + sl[0].start
        c = c + sl[1].start
        pts = _pixel_xy(mask, r, c)
        h = base.signed_distance(pts)
        top = np.flatnonzero(h == h.max())
        best = top[np.argmin(pts[top, 0])]
        point = pts[best] + 0.5 * sp * base.normal
        height = float(base.signed_distance(point))
        fit = fit_apex(pts, base, height, sp)
        apex, apex_h = (None, None) if fit is None else (ImagePoint(*map(float, fit[0])), fit[1])
        out.append(Detection(frame_index=frame_index,
                             bbox=(int(r.min()), int(c.min()), int(r.max()), int(c.max())),
                             highest_point=ImagePoint(float(point[0]), float(point[1])),
                             height=height, area=float(area), apex=apex, apex_height=apex_h))
    return out


def bbox_intersection(a, b) -> int:
    h = min(a[2], b[2]) - max(a[0], b[0]) + 1
    w = min(a[3], b[3]) - max(a[1], b[1]) + 1
    return max(h, 0) * max(w, 0)


class Tracker:
    """Stateful frame-by-frame assembly of detections into tracks."""

    def __init__(self, max_gap: int = MAX_GAP):
        self.max_gap = max_gap
        self.tracks: list = []

    def update(self, detections, frame_index: int) -> list:
        self.tracks = update_tracks(self.tracks, detections, frame_index, self.max_gap)
        return self.tracks

    def finish(self) -> list:
        for t in self.tracks:
            t.state = TrackState.Terminated
        return self.tracks


def update_tracks(tracks: list, detections, frame_index: int, max_gap: int = MAX_GAP) -> list:
    """Assign one frame's detections to tracks by greedy bounding-box overlap.

    Tracks whose last detection is more than ``max_gap`` frames old are
    terminated first.  Pairs are taken largest intersection first (ties by
    the detection's bounding box, then track age); unmatched detections
    start new tracks.
    """
    tracks = list(tracks)
    for t in tracks:
        if t.state is TrackState.Active and frame_index - t.last_update > max_gap:
            t.state = TrackState.Terminated
    active = [t for t in tracks if t.state is TrackState.Active]
    dets = sorted(detections, key=lambda d: (d.bbox[1], d.bbox[0], d.bbox[3], d.bbox[2]))
    pairs = []
    for di, d in enumerate(dets):
        for t in active:
            area = bbox_intersection(t.detections[-1].bbox, d.bbox)
            if area > 0:
                pairs.append((-area, di, t.track_id, t))
    pairs.sort(key=lambda p: p[:3])
    used_d, used_t = set(), set()
    for _, di, tid, t in pairs:
        if di in used_d or tid in used_t:
            continue
        t.detections.append(dets[di])
        used_d.add(di)
        used_t.add(tid)
    next_id = max((t.track_id for t in tracks), default=-1) + 1
    for di, d in enumerate(dets):
        if di not in used_d:
            tracks.append(ConeTrack([d], TrackState.Active, next_id))
            next_id += 1
    return tracks


def smooth_heights(heights, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centred moving mean, window truncated at the ends."""
    h = np.asarray(heights, float)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(h)])
    idx = np.arange(len(h))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(h))
    return (csum[hi] - csum[lo]) / (hi - lo)


def extract_tips(tracks, geom=None, sweep_id: str = "A") -> list:
    """One tip per long enough track, at the maximum of the smoothed heights.

    Heights are the subpixel apex heights of the detections (see
    ``fit_apex``); they peak where the plane passes through the cone axis.
    """
    tips = []
    for t in tracks:
        if len(t) < MIN_DETECTIONS:
            continue
        sm = smooth_heights(t.apex_heights)
        k = int(np.argmax(sm))
        det = t.detections[k]
        if sm[k] < MIN_TIP_HEIGHT:
            continue
        if geom is not None and not geom.contains(np.array(det.apex)):
            continue
        tips.append(Tip(sweep_id, det.frame_index, det.apex, float(sm[k]), t))
    return tips


def match_tips(tips_a, tips_b, threshold: float = MATCH_THRESHOLD) -> list:
    """Every cross-sweep pair with height difference strictly below ``threshold``."""
    return [TipMatch(a, b) for a in tips_a for b in tips_b
            if abs(a.smoothed_height - b.smoothed_height) < threshold]
