"""Sweep directories, PGM images and key=value text files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .geom import RigidTransform, format_transform, parse_matrix_rows

TRACKING_DIGITS = 17


def read_pgm(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise FormatError(f"{path}: expected an 8-bit grey image, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None


def write_pgm(path, image) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")


def read_keyvalue(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key = value")
        out[key] = value
    return out


def write_keyvalue(path, items: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


def format_tracking(transforms) -> str:
    blocks = [format_transform(t, TRACKING_DIGITS) for t in transforms]
    return "\n".join(blocks)


def parse_tracking(text: str, n_frames: int | None = None) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if len(lines) % 4:
        raise FormatError(f"tracking file has {len(lines)} matrix rows, not a multiple of 4")
    n = len(lines) // 4
    if n_frames is not None and n != n_frames:
        raise FormatError(f"tracking file holds {n} poses but meta.txt declares {n_frames} frames")
    out = []
    for i in range(n):
        m = parse_matrix_rows(lines[4 * i:4 * i + 4])
        try:
            out.append(RigidTransform.from_matrix(m))
        except ValueError as exc:
            raise FormatError(f"tracking pose {i}: {exc}") from None
    return out


def _geometry_meta(geom) -> dict:
    rows, cols = geom.shape
    meta = {"width": cols, "height": rows, "spacing": f"{geom.spacing:.17g}",
            "geometry": geom.kind}
    if geom.kind == "convex":
        meta["apex_offset"] = f"{geom.apex_offset:.17g}"
        meta["aperture"] = f"{geom.aperture_deg:.17g}"
    return meta


def _geometry_from_meta(meta: dict):
    from .simulate import ImagingGeometry

    try:
        cols, rows = int(meta["width"]), int(meta["height"])
        spacing = float(meta["spacing"])
        kind = meta.get("geometry", "linear")
        kw = {}
        if kind == "convex":
            kw = {"apex_offset": float(meta["apex_offset"]),
                  "aperture_deg": float(meta["aperture"])}
        return ImagingGeometry(kind=kind, width=cols * spacing, depth=rows * spacing,
                               spacing=spacing, **kw)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"meta.txt: bad or missing field {exc}") from None


def save_sweep(directory, sweep, ground_truth=None, write_labels: bool = True) -> Path:
    """Write a sweep directory: meta.txt, tracking.txt, frame_%05d.pgm, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"n_frames": len(sweep.frames), **_geometry_meta(sweep.geometry),
            "sweep_id": sweep.sweep_id}
    write_keyvalue(directory / "meta.txt", meta)
    (directory / "tracking.txt").write_text(format_tracking(sweep.tracking))
    for k, frame in enumerate(sweep.frames):
        write_pgm(directory / f"frame_{k:05d}.pgm", frame.intensity)
        if write_labels and frame.true_labels is not None:
            write_pgm(directory / f"labels_{k:05d}.pgm", frame.true_labels)
    if ground_truth is not None:
        save_ground_truth(directory / "groundtruth.txt", ground_truth)
    return directory


def load_sweep(directory, sweep_id: str | None = None):
    from .simulate import Frame, Sweep

    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"sweep directory {directory} does not exist")
    meta = read_keyvalue(directory / "meta.txt")
    try:
        n = int(meta["n_frames"])
    except (KeyError, ValueError):
        raise FormatError("meta.txt: missing or bad n_frames") from None
    geom = _geometry_from_meta(meta)
    try:
        text = (directory / "tracking.txt").read_text()
    except OSError as exc:
        raise FormatError(f"cannot read tracking.txt: {exc}") from None
    tracking = parse_tracking(text, n)
    frames = []
    for k in range(n):
        path = directory / f"frame_{k:05d}.pgm"
        if not path.exists():
            raise FormatError(f"missing frame image {path.name}")
        img = read_pgm(path)
        if img.shape != geom.shape:
            raise FormatError(f"{path.name} has shape {img.shape}, expected {geom.shape}")
        lpath = directory / f"labels_{k:05d}.pgm"
        labels = read_pgm(lpath) if lpath.exists() else None
        frames.append(Frame(img, tracking[k], k, labels))
    return Sweep(frames, geom, sweep_id or meta.get("sweep_id", directory.name))


def save_ground_truth(path, gt) -> None:
    lines = ["# calibration: image -> marker"]
    lines += format_transform(gt.calibration, TRACKING_DIGITS).splitlines()
    for k, tip in enumerate(gt.tips):
        lines.append(f"tip = {k} " + " ".join(f"{v:.17g}" for v in tip))
    for row in gt.frame_tips:
        f, c, x, y, z = row
        lines.append(f"frame_tip = {int(f)} {int(c)} {x:.17g} {y:.17g} {z:.17g}")
    for T in gt.true_tracking:
        lines.append("true_pose = " + " ".join(f"{v:.17g}" for v in T.matrix[:3].ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_ground_truth(path):
    from .simulate import SweepGroundTruth

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read ground truth {path}: {exc}") from None
    mat_rows, tips, frame_tips, poses = [], [], [], []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        try:
            if not sep:
                mat_rows.append(line)
            elif key == "tip":
                vals = value.split()
                tips.append((int(vals[0]), [float(v) for v in vals[1:4]]))
            elif key == "frame_tip":
                frame_tips.append([float(v) for v in value.split()])
            elif key == "true_pose":
                m = np.eye(4)
                m[:3] = np.array([float(v) for v in value.split()]).reshape(3, 4)
                poses.append(RigidTransform.from_matrix(m))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: bad line {raw!r}: {exc}") from None
    C = RigidTransform.from_matrix(parse_matrix_rows(mat_rows))
    tips_arr = np.array([t for _, t in sorted(tips)], float).reshape(-1, 3)
    return SweepGroundTruth(C, tips_arr, poses, np.array(frame_tips, float).reshape(-1, 5))
