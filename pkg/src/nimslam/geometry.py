"""Camera model, rigid poses, local pose updates, and cross-frame warping.

Conventions: poses are camera-to-world, i.e. ``x_world = R @ x_cam + t``.
Pixel coordinates are (u, v) with u indexing columns; depths are z-depths in
the camera frame (meters). All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidDepthError, UndefinedFlowError


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
            int(round(self.width * factor)), int(round(self.height * factor)),
        )


_POSE_TOL = 1e-9


@dataclass
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray  # (3,3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > _POSE_TOL or abs(np.linalg.det(self.rotation) - 1.0) > _POSE_TOL:
            raise ValueError(f"rotation is not a proper orthonormal matrix (err={err:.2e})")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other, acting on points as self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Camera-to-world on (...,3) points."""
        return points @ self.rotation.T + self.translation

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        """World-to-camera on (...,3) points."""
        return (points - self.translation) @ self.rotation

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())


@dataclass
class PoseDelta:
    """Local update: axis-angle rotation (radians·axis) plus translation."""

    axis_angle: np.ndarray
    d_translation: np.ndarray

    def __post_init__(self):
        self.axis_angle = np.asarray(self.axis_angle, dtype=np.float64)
        self.d_translation = np.asarray(self.d_translation, dtype=np.float64)
        if not (np.all(np.isfinite(self.axis_angle)) and np.all(np.isfinite(self.d_translation))):
            raise ValueError("pose delta must be finite")

    @classmethod
    def zero(cls) -> "PoseDelta":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "PoseDelta":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6])


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential; Taylor branch below 1e-8 rad."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def apply_delta(pose: Pose, delta: PoseDelta) -> Pose:
    """Compose a local delta onto a pose (right multiplication).

    R' = R·exp(ŵ), t' = R·dt + t. A zero delta returns the pose unchanged.
    """
    w, dt = delta.axis_angle, delta.d_translation
    if not np.any(w) and not np.any(dt):
        return pose
    return Pose(pose.rotation @ so3_exp(w), pose.rotation @ dt + pose.translation)


def project(K: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Perspective projection of a camera-frame point to pixel coordinates."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    if p_cam[2] <= 0:
        raise BehindCameraError(f"point has non-positive depth z={p_cam[2]}")
    return np.array(
        [K.fx * p_cam[0] / p_cam[2] + K.cx, K.fy * p_cam[1] / p_cam[2] + K.cy]
    )


def unproject(K: CameraIntrinsics, q: np.ndarray, depth: float) -> np.ndarray:
    """Lift a pixel to the camera frame at the given z-depth."""
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    q = np.asarray(q, dtype=np.float64)
    return np.array(
        [(q[0] - K.cx) / K.fx * depth, (q[1] - K.cy) / K.fy * depth, depth]
    )


def pixel_rays_cam(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Camera-frame direction vectors at unit z-depth for (N,2) pixels."""
    pixels = np.asarray(pixels, dtype=np.float64)
    d = np.empty((pixels.shape[0], 3))
    d[:, 0] = (pixels[:, 0] - K.cx) / K.fx
    d[:, 1] = (pixels[:, 1] - K.cy) / K.fy
    d[:, 2] = 1.0
    return d


def warp_points(pixels: np.ndarray, depths: np.ndarray, pose_k: Pose, pose_l: Pose,
                K_k: CameraIntrinsics, K_l: CameraIntrinsics):
    """Warp (N,2) pixels of frame k with per-pixel z-depths into frame l.

    Returns (warped (N,2), z_l (N,), in_front (N,)). Pixels landing behind
    camera l get in_front=False and an unspecified warped value.
    """
    depths = np.asarray(depths, dtype=np.float64)
    p_cam = pixel_rays_cam(K_k, pixels) * depths[:, None]
    p_world = pose_k.transform(p_cam)
    p_l = pose_l.inverse_transform(p_world)
    z = p_l[:, 2]
    in_front = z > 1e-12
    safe_z = np.where(in_front, z, 1.0)
    warped = np.empty_like(np.asarray(pixels, dtype=np.float64))
    warped[:, 0] = K_l.fx * p_l[:, 0] / safe_z + K_l.cx
    warped[:, 1] = K_l.fy * p_l[:, 1] / safe_z + K_l.cy
    return warped, z, in_front


def warp_pixel(q_k: np.ndarray, depth: float, pose_k: Pose, pose_l: Pose,
               K_k: CameraIntrinsics, K_l: CameraIntrinsics) -> np.ndarray:
    """Single-pixel warp; raises BehindCameraError if the point lands behind l."""
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    warped, _, in_front = warp_points(
        np.asarray(q_k, dtype=np.float64)[None, :], np.array([depth]),
        pose_k, pose_l, K_k, K_l,
    )
    if not in_front[0]:
        raise BehindCameraError("warped point lies behind the target camera")
    return warped[0]


def in_image(pixels: np.ndarray, K: CameraIntrinsics, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of (N,2) pixels inside the image boundary."""
    return (
        (pixels[:, 0] >= margin)
        & (pixels[:, 0] <= K.width - 1 - margin)
        & (pixels[:, 1] >= margin)
        & (pixels[:, 1] <= K.height - 1 - margin)
    )


def flow_score(pixels: np.ndarray, depths: np.ndarray, frame_a, frame_b) -> float:
    """Mean squared displacement (pixels²) of probe pixels warped a -> b.

    Pixels warping behind camera b are excluded; raises UndefinedFlowError
    when no valid sample remains.
    """
    warped, _, in_front = warp_points(
        pixels, depths, frame_a.pose, frame_b.pose, frame_a.intrinsics, frame_b.intrinsics
    )
    if not np.any(in_front):
        raise UndefinedFlowError("all probe pixels warp behind the target camera")
    diff = warped[in_front] - np.asarray(pixels, dtype=np.float64)[in_front]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def induced_flow_score(frame_a, frame_b, depths: np.ndarray, n_samples: int,
                       rng: np.random.Generator | None = None) -> float:
    """Flow score from a full (H,W) z-depth map of frame a.

    Samples n_samples pixel positions uniformly and delegates to flow_score.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    depths = np.asarray(depths, dtype=np.float64)
    h, w = depths.shape
    us = rng.integers(0, w, size=n_samples)
    vs = rng.integers(0, h, size=n_samples)
    pixels = np.stack([us, vs], axis=1).astype(np.float64)
    d = depths[vs, us]
    ok = d > 0
    if not np.any(ok):
        raise UndefinedFlowError("no probe pixel has a positive depth")
    return flow_score(pixels[ok], d[ok], frame_a, frame_b)


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) from a rotation matrix."""
    m = np.asarray(R, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (qx, qy, qz, qw); normalizes first."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    x, y, z, w = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
