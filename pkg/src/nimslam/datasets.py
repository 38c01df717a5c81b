"""Sequence ingestion and trajectory files.

Sequences follow the TUM layout: an ``rgb.txt`` index ("timestamp path" per
line), optional ``groundtruth.txt`` ("timestamp tx ty tz qx qy qz qw"),
optional ``depth.txt`` pointing at .npy z-depth maps (synthetic sequences),
and optional ``calib.txt`` ("fx fy cx cy width height").
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingInputError, ParseError
from .geometry import CameraIntrinsics, Pose, quaternion_to_rotation, rotation_to_quaternion

GT_ASSOCIATION_TOLERANCE = 0.02  # seconds


@dataclass
class SequenceFrame:
    timestamp: float
    image_path: str | None = None
    image: np.ndarray | None = None  # (H,W,3) float64 in [0,1]
    gt_pose: Pose | None = None
    gt_depth: np.ndarray | None = None
    gt_depth_path: str | None = None


@dataclass
class Sequence:
    frames: list
    intrinsics: CameraIntrinsics | None = None
    directory: str | None = None

    def __len__(self):
        return len(self.frames)

    def __post_init__(self):
        stamps = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError("frame timestamps must be strictly increasing")

    def image(self, i: int) -> np.ndarray:
        frame = self.frames[i]
        if frame.image is None:
            from PIL import Image

            with Image.open(frame.image_path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            frame.image = np.ascontiguousarray(arr)
        return frame.image

    def gt_depth(self, i: int) -> np.ndarray | None:
        frame = self.frames[i]
        if frame.gt_depth is None and frame.gt_depth_path is not None:
            frame.gt_depth = np.load(frame.gt_depth_path)
        return frame.gt_depth


def _parse_index_file(path):
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 'timestamp filename', got {raw!r}")
            try:
                stamp = float(parts[0])
            except ValueError:
                raise ParseError(path, lineno, f"bad timestamp {parts[0]!r}")
            entries.append((stamp, parts[1]))
    return entries


def load_trajectory(path):
    """TUM trajectory file -> list of (timestamp, Pose); quaternions are
    normalized on load."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(path, lineno,
                                 "expected 'timestamp tx ty tz qx qy qz qw'")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {raw!r}")
            stamp, tx, ty, tz, qx, qy, qz, qw = vals
            rot = quaternion_to_rotation(np.array([qx, qy, qz, qw]))
            out.append((stamp, Pose(rot, np.array([tx, ty, tz]))))
    return out


def save_trajectory(path, trajectory):
    """Write (timestamp, Pose) pairs in the TUM convention."""
    with open(path, "w", encoding="utf-8") as fh:
        for stamp, pose in trajectory:
            q = rotation_to_quaternion(pose.rotation)
            t = pose.translation
            fh.write(
                f"{stamp:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )


def load_calibration(path) -> CameraIntrinsics:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(path, lineno, "expected 'fx fy cx cy width height'")
            fx, fy, cx, cy = (float(p) for p in parts[:4])
            w, h = int(parts[4]), int(parts[5])
            return CameraIntrinsics(fx, fy, cx, cy, w, h)
    raise ParseError(path, 0, "empty calibration file")


def save_calibration(path, K: CameraIntrinsics):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{K.fx} {K.fy} {K.cx} {K.cy} {K.width} {K.height}\n")


def _associate(stamps, targets, tolerance):
    """Index of the nearest target stamp within tolerance, else -1."""
    targets = np.asarray(targets)
    out = np.full(len(stamps), -1, dtype=np.int64)
    if targets.size == 0:
        return out
    for i, s in enumerate(stamps):
        j = int(np.argmin(np.abs(targets - s)))
        if abs(targets[j] - s) <= tolerance:
            out[i] = j
    return out


def load_tum_sequence(directory) -> Sequence:
    """Load a TUM-style RGB sequence (depth images are intentionally ignored;
    optional synthetic z-depth maps come from depth.txt)."""
    rgb_path = os.path.join(directory, "rgb.txt")
    if not os.path.isfile(rgb_path):
        raise MissingInputError(f"missing rgb.txt in {directory}")
    entries = sorted(_parse_index_file(rgb_path))

    gt_path = os.path.join(directory, "groundtruth.txt")
    gt = load_trajectory(gt_path) if os.path.isfile(gt_path) else []
    gt_stamps = [t for t, _ in gt]

    depth_path = os.path.join(directory, "depth.txt")
    depth_entries = sorted(_parse_index_file(depth_path)) if os.path.isfile(depth_path) else []
    depth_stamps = [t for t, _ in depth_entries]

    stamps = [t for t, _ in entries]
    gt_idx = _associate(stamps, gt_stamps, GT_ASSOCIATION_TOLERANCE)
    depth_idx = _associate(stamps, depth_stamps, GT_ASSOCIATION_TOLERANCE)

    frames = []
    for i, (stamp, rel) in enumerate(entries):
        frames.append(SequenceFrame(
            timestamp=stamp,
            image_path=os.path.join(directory, rel),
            gt_pose=gt[gt_idx[i]][1] if gt_idx[i] >= 0 else None,
            gt_depth_path=(os.path.join(directory, depth_entries[depth_idx[i]][1])
                           if depth_idx[i] >= 0 else None),
        ))

    calib_path = os.path.join(directory, "calib.txt")
    intrinsics = load_calibration(calib_path) if os.path.isfile(calib_path) else None
    return Sequence(frames, intrinsics, directory)
