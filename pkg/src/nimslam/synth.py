"""Synthetic ground-truth generator: a textured axis-aligned room.

Ray-casts noise-free Lambertian RGB images plus exact z-depth maps along a
smooth camera path. Serves as the desk-scale oracle for end-to-end tests:
poses, depths, and the scene mesh are all known analytically. World frame is
z-up; cameras look with +z forward and +y down (image rows).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .datasets import Sequence, SequenceFrame, save_calibration, save_trajectory
from .geometry import CameraIntrinsics, Pose
from .mesh import TriangleMesh

EPS = 1e-9


@dataclass
class Face:
    """Axis-aligned rectangle: plane {axis == offset}, spanning rect in the
    other two axes (u_axis, v_axis)."""

    axis: int
    offset: float
    u_axis: int
    v_axis: int
    u_range: tuple
    v_range: tuple
    face_id: int


@dataclass
class TextureParams:
    base: np.ndarray  # (3,)
    amp: np.ndarray  # (3,2) per-channel amplitudes for the two sine terms
    freq: np.ndarray  # (2,) radians per meter
    phase: np.ndarray  # (3,2)


@dataclass
class SynthScene:
    room_min: np.ndarray
    room_max: np.ndarray
    boxes: list  # (min (3,), max (3,)) pairs
    faces: list = field(default_factory=list)
    textures: dict = field(default_factory=dict)

    def __post_init__(self):
        self.room_min = np.asarray(self.room_min, dtype=np.float64)
        self.room_max = np.asarray(self.room_max, dtype=np.float64)
        if not self.faces:
            self._build_faces()

    def _aabb_faces(self, lo, hi, start_id):
        faces = []
        fid = start_id
        for axis in range(3):
            u_axis, v_axis = [a for a in range(3) if a != axis]
            for offset in (lo[axis], hi[axis]):
                faces.append(Face(axis, float(offset), u_axis, v_axis,
                                  (float(lo[u_axis]), float(hi[u_axis])),
                                  (float(lo[v_axis]), float(hi[v_axis])), fid))
                fid += 1
        return faces, fid

    def _build_faces(self):
        faces, fid = self._aabb_faces(self.room_min, self.room_max, 0)
        self.faces = faces
        for lo, hi in self.boxes:
            more, fid = self._aabb_faces(np.asarray(lo, float), np.asarray(hi, float), fid)
            self.faces.extend(more)

    def assign_textures(self, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 404)))
        for face in self.faces:
            base = rng.uniform(0.35, 0.65, size=3)
            # A dominant low-frequency layer keeps the photometric basin
            # wide for identity-initialized poses; a milder mid-frequency
            # layer (wavelength ~0.4-0.6 m) sharpens depth parallax once
            # alignment is rough. Both stay smooth under bilinear resampling.
            amp = np.concatenate([
                rng.uniform(0.10, 0.16, size=(3, 2)),
                rng.uniform(0.05, 0.09, size=(3, 2)),
            ], axis=1) * rng.choice([-1.0, 1.0], size=(3, 4))
            freq = np.concatenate([
                rng.uniform(2.5, 6.0, size=2),
                rng.uniform(10.0, 15.0, size=2),
            ])
            phase = rng.uniform(0.0, 2 * np.pi, size=(3, 4))
            self.textures[face.face_id] = TextureParams(base, amp, freq, phase)

    def color_at(self, points: np.ndarray, face_ids: np.ndarray) -> np.ndarray:
        """Albedo of surface points lying on the given faces."""
        out = np.zeros((points.shape[0], 3))
        for fid in np.unique(face_ids):
            face = self.faces[fid]
            tex = self.textures[fid]
            sel = face_ids == fid
            u = points[sel, face.u_axis]
            v = points[sel, face.v_axis]
            col = np.empty((sel.sum(), 3))
            for c in range(3):
                col[:, c] = tex.base[c]
                for j, coord in enumerate((u, v, u, v)):
                    col[:, c] += tex.amp[c, j] * np.sin(tex.freq[j] * coord + tex.phase[c, j])
            out[sel] = col
        return np.clip(out, 0.02, 0.98)

    def bounds(self, padding: float = 0.1):
        return self.room_min - padding, self.room_max + padding

    def to_mesh(self) -> TriangleMesh:
        """Exact triangle mesh of every face (two triangles per rectangle)."""
        verts = []
        tris = []
        for face in self.faces:
            corners = []
            for u in face.u_range:
                for v in face.v_range:
                    p = np.zeros(3)
                    p[face.axis] = face.offset
                    p[face.u_axis] = u
                    p[face.v_axis] = v
                    corners.append(p)
            base = len(verts)
            verts.extend(corners)  # order: (u0,v0),(u0,v1),(u1,v0),(u1,v1)
            tris.append([base, base + 1, base + 2])
            tris.append([base + 1, base + 3, base + 2])
        return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))

    def raycast(self, origins: np.ndarray, dirs: np.ndarray):
        """First hit of each ray: returns (t, points, face_ids); t = inf for
        misses (cannot happen for rays inside the closed room)."""
        n = origins.shape[0]
        best_t = np.full(n, np.inf)
        best_face = np.full(n, -1, dtype=np.int64)
        for face in self.faces:
            d_a = dirs[:, face.axis]
            safe = np.where(np.abs(d_a) > EPS, d_a, EPS)
            t = (face.offset - origins[:, face.axis]) / safe
            pu = origins[:, face.u_axis] + t * dirs[:, face.u_axis]
            pv = origins[:, face.v_axis] + t * dirs[:, face.v_axis]
            hit = (
                (np.abs(d_a) > EPS)
                & (t > 1e-6)
                & (pu >= face.u_range[0] - EPS) & (pu <= face.u_range[1] + EPS)
                & (pv >= face.v_range[0] - EPS) & (pv <= face.v_range[1] + EPS)
                & (t < best_t)
            )
            best_t[hit] = t[hit]
            best_face[hit] = face.face_id
        points = origins + dirs * best_t[:, None]
        return best_t, points, best_face


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +z toward target and +y (image down)
    opposing the world up vector."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f = f / np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    y0 = -up + np.dot(up, f) * f
    ny = np.linalg.norm(y0)
    if ny < 1e-9:  # looking straight up/down: pick an arbitrary image-down
        y0 = np.array([0.0, 1.0, 0.0]) - f * f[1]
        ny = np.linalg.norm(y0)
    y = y0 / ny
    x = np.cross(y, f)
    return Pose(np.stack([x, y, f], axis=1), eye)


def default_room_scene(seed: int = 0) -> SynthScene:
    """A 5x4x3 m room with two textured boxes."""
    scene = SynthScene(
        room_min=np.array([-2.5, -2.0, 0.0]),
        room_max=np.array([2.5, 2.0, 3.0]),
        boxes=[
            (np.array([-1.6, -1.3, 0.0]), np.array([-0.7, -0.4, 1.1])),
            (np.array([0.6, -1.0, 0.0]), np.array([1.5, 0.1, 0.7])),
        ],
    )
    scene.assign_textures(seed)
    return scene


def arc_path(scene: SynthScene, n_frames: int, radius: float = 1.5,
             span_deg: float = 50.0, height: float = 1.5, ramp: float = 1.5):
    """Smooth lateral arc in the back half of the room, looking at the boxes.

    The arc parameter follows tau**ramp, so the camera starts nearly at rest
    and accelerates smoothly; early frames (the initialization window) stay
    close together the way handheld sequences begin, while the full sweep
    still covers the whole span.
    """
    center = 0.5 * (scene.room_min + scene.room_max)
    target = np.array([0.0, -0.9, 0.8])
    pivot = np.array([center[0], 1.2, height])
    poses = []
    tau = np.linspace(0.0, 1.0, n_frames) ** ramp
    angles = np.deg2rad(-span_deg / 2 + span_deg * tau)
    for a in angles:
        eye = pivot + np.array([radius * np.sin(a), 0.15 * np.cos(2 * a) - 0.15, 0.08 * np.sin(3 * a)])
        poses.append(look_at(eye, target))
    return poses


def render_scene_frame(scene: SynthScene, K: CameraIntrinsics, pose: Pose):
    """Ray-cast one frame: returns (image (H,W,3), z_depth (H,W))."""
    h, w = K.height, K.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    pix = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    d_cam = np.empty((pix.shape[0], 3))
    d_cam[:, 0] = (pix[:, 0] - K.cx) / K.fx
    d_cam[:, 1] = (pix[:, 1] - K.cy) / K.fy
    d_cam[:, 2] = 1.0
    dirs = d_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    t, points, face_ids = scene.raycast(origins, dirs)
    if not np.all(np.isfinite(t)):
        raise ValueError("a camera ray escaped the scene; camera outside the room?")
    colors = scene.color_at(points, face_ids)
    # z-depth: ray parameter t is measured along d_cam with unit z, so t IS z.
    return (
        np.ascontiguousarray(colors.reshape(h, w, 3)),
        np.ascontiguousarray(t.reshape(h, w)),
    )


def render_synth_sequence(scene: SynthScene, n_frames: int, K: CameraIntrinsics,
                          seed: int = 0, poses=None, fps: float = 10.0) -> Sequence:
    """Ray-cast an in-memory sequence with ground-truth poses and depths."""
    if poses is None:
        poses = arc_path(scene, n_frames)
    if len(poses) != n_frames:
        raise ValueError("need one pose per frame")
    lo, hi = scene.room_min, scene.room_max
    for pose in poses:
        if np.any(pose.translation <= lo) or np.any(pose.translation >= hi):
            raise ValueError("camera path leaves the room")
    frames = []
    for i, pose in enumerate(poses):
        image, depth = render_scene_frame(scene, K, pose)
        frames.append(SequenceFrame(
            timestamp=i / fps, image=image, gt_pose=pose.copy(), gt_depth=depth,
        ))
    return Sequence(frames, K)


def write_sequence(seq: Sequence, directory, scene: SynthScene | None = None):
    """Write a sequence to disk in the TUM layout (8-bit PNG images)."""
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    os.makedirs(os.path.join(directory, "rgb"), exist_ok=True)
    has_depth = any(f.gt_depth is not None for f in seq.frames)
    if has_depth:
        os.makedirs(os.path.join(directory, "depth"), exist_ok=True)

    rgb_lines = []
    depth_lines = []
    gt = []
    for i, frame in enumerate(seq.frames):
        name = f"rgb/{i:06d}.png"
        img8 = np.clip(np.round(seq.image(i) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img8).save(os.path.join(directory, name))
        rgb_lines.append(f"{frame.timestamp:.6f} {name}")
        if frame.gt_depth is not None:
            dname = f"depth/{i:06d}.npy"
            np.save(os.path.join(directory, dname), frame.gt_depth)
            depth_lines.append(f"{frame.timestamp:.6f} {dname}")
        if frame.gt_pose is not None:
            gt.append((frame.timestamp, frame.gt_pose))

    with open(os.path.join(directory, "rgb.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rgb_lines) + "\n")
    if depth_lines:
        with open(os.path.join(directory, "depth.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(depth_lines) + "\n")
    if gt:
        save_trajectory(os.path.join(directory, "groundtruth.txt"), gt)
    if seq.intrinsics is not None:
        save_calibration(os.path.join(directory, "calib.txt"), seq.intrinsics)
    if scene is not None:
        from .mesh import save_mesh

        save_mesh(os.path.join(directory, "scene_mesh.ply"), scene.to_mesh())
