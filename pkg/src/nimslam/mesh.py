"""Isosurface extraction, frustum culling, and mesh file I/O.

Marching cubes runs on an occupancy grid sampled from the implicit map at a
configurable resolution (decoupled from the feature volumes); the fixed
level set 0.5 separates free from occupied space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .errors import EmptyMeshError
from .geometry import CameraIntrinsics


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V,3) float64
    triangles: np.ndarray  # (T,3) int64
    colors: np.ndarray | None = None  # (V,3) in [0,1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertices.size and not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices must be finite")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle indices out of range")

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def marching_cubes_volume(volume: np.ndarray, level: float, origin, spacing) -> TriangleMesh:
    """Isosurface of a sampled scalar volume; empty mesh if the level is
    never crossed."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.min() >= level or volume.max() <= level:
        return TriangleMesh.empty()
    verts, faces, _, _ = measure.marching_cubes(volume, level=level, spacing=tuple(spacing))
    return TriangleMesh(verts + np.asarray(origin, dtype=np.float64), faces.astype(np.int64))


def extract_mesh(pyramid, decoder, resolution: int = 256, level: float = 0.5,
                 with_colors: bool = False, chunk: int = 262144) -> TriangleMesh:
    """Marching cubes over the occupancy field on a regular grid.

    resolution counts sample points along the longest bounds axis; other
    axes scale proportionally to keep cubic cells.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    from . import renderer
    from .implicit_map import query_point

    bounds = pyramid.bounds
    extent = bounds.extent
    spacing = float(extent.max()) / (resolution - 1)
    counts = [max(8, int(np.floor(e / spacing)) + 1) for e in extent]
    axes = [bounds.min_corner[a] + spacing * np.arange(counts[a]) for a in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    occ, _ = renderer.query_field(pyramid, decoder, pts, with_color=False, chunk=chunk)
    volume = occ.reshape(counts)
    mesh = marching_cubes_volume(volume, level, bounds.min_corner, (spacing,) * 3)
    if with_colors and not mesh.is_empty:
        _, colors = query_point(pyramid, decoder, mesh.vertices)
        mesh.colors = colors
    return mesh


def frustum_cull(mesh: TriangleMesh, poses, K: CameraIntrinsics) -> TriangleMesh:
    """Drop triangles whose three vertices all fall outside every frustum.

    A vertex counts as seen when it projects inside the image bounds with
    positive depth for at least one pose.
    """
    if len(poses) == 0:
        raise ValueError("frustum_cull needs at least one pose")
    if mesh.is_empty:
        return TriangleMesh.empty()
    seen = np.zeros(len(mesh.vertices), dtype=bool)
    for pose in poses:
        todo = ~seen
        if not np.any(todo):
            break
        p_cam = (mesh.vertices[todo] - pose.translation) @ pose.rotation
        z = p_cam[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        u = K.fx * p_cam[:, 0] / zs + K.cx
        v = K.fy * p_cam[:, 1] / zs + K.cy
        visible = front & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
        seen[np.nonzero(todo)[0][visible]] = True
    keep = seen[mesh.triangles].any(axis=1)
    tris = mesh.triangles[keep]
    used = np.unique(tris)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return TriangleMesh(
        mesh.vertices[used], remap[tris],
        mesh.colors[used] if mesh.colors is not None else None,
    )


def edge_statistics(mesh: TriangleMesh):
    """Counts of boundary (1 face) and non-manifold (>2 faces) edges after
    merging coincident vertices."""
    if mesh.is_empty:
        return {"boundary": 0, "nonmanifold": 0, "edges": 0}
    # Merge duplicate vertex positions so shared edges are recognized.
    rounded = np.round(mesh.vertices / 1e-9).astype(np.int64)
    _, first, inverse = np.unique(rounded, axis=0, return_index=True, return_inverse=True)
    tris = inverse[mesh.triangles]
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return {
        "boundary": int((counts == 1).sum()),
        "nonmanifold": int((counts > 2).sum()),
        "edges": int(counts.size),
    }


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every edge shared by exactly two triangles."""
    stats = edge_statistics(mesh)
    return stats["edges"] > 0 and stats["boundary"] == 0 and stats["nonmanifold"] == 0


# ---------------------------------------------------------------------------
# File formats: binary little-endian PLY and text OBJ, chosen by extension.
# ---------------------------------------------------------------------------


def save_mesh(path, mesh: TriangleMesh):
    path = str(path)
    if path.endswith(".ply"):
        _save_ply(path, mesh)
    elif path.endswith(".obj"):
        _save_obj(path, mesh)
    else:
        raise ValueError(f"unsupported mesh extension: {path}")


def load_mesh(path) -> TriangleMesh:
    path = str(path)
    if path.endswith(".ply"):
        return _load_ply(path)
    if path.endswith(".obj"):
        return _load_obj(path)
    raise ValueError(f"unsupported mesh extension: {path}")


_PLY_TYPES = {"float": "<f4", "double": "<f8", "uchar": "u1", "int": "<i4", "uint": "<u4"}


def _save_ply(path, mesh: TriangleMesh):
    has_color = mesh.colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(mesh.vertices)}",
              "property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(mesh.triangles)}",
               "property list uchar int vertex_indices", "end_header"]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vrec = np.zeros(len(mesh.vertices), dtype=fields)
    vrec["x"], vrec["y"], vrec["z"] = mesh.vertices.T.astype("<f4")
    if has_color:
        rgb = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(np.uint8)
        vrec["red"], vrec["green"], vrec["blue"] = rgb.T
    frec = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    frec["n"] = 3
    frec["idx"] = mesh.triangles.astype("<i4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vrec.tobytes())
        fh.write(frec.tobytes())


def _load_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file")
        n_verts = n_faces = 0
        vertex_props = []
        in_vertex = False
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("unexpected end of PLY header")
            tokens = line.decode("ascii").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if tokens[1] == "vertex":
                    n_verts = int(tokens[2])
                elif tokens[1] == "face":
                    n_faces = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                vertex_props.append((tokens[-1], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise ValueError(f"unsupported PLY format {fmt}")
        vdtype = np.dtype([(name, _PLY_TYPES[typ]) for name, typ in vertex_props])
        vrec = np.frombuffer(fh.read(n_verts * vdtype.itemsize), dtype=vdtype)
        verts = np.stack([vrec["x"], vrec["y"], vrec["z"]], axis=1).astype(np.float64)
        colors = None
        if {"red", "green", "blue"}.issubset(vdtype.names):
            colors = np.stack(
                [vrec["red"], vrec["green"], vrec["blue"]], axis=1
            ).astype(np.float64) / 255.0
        fdtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        frec = np.frombuffer(fh.read(n_faces * fdtype.itemsize), dtype=fdtype)
        if n_faces and not np.all(frec["n"] == 3):
            raise ValueError("only triangle PLY faces are supported")
        tris = frec["idx"].astype(np.int64)
    return TriangleMesh(verts, tris, colors)


def _save_obj(path, mesh: TriangleMesh):
    with open(path, "w", encoding="ascii") as fh:
        for i, v in enumerate(mesh.vertices):
            if mesh.colors is not None:
                c = mesh.colors[i]
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}\n")
            else:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def _load_obj(path) -> TriangleMesh:
    verts, tris, colors = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.strip().split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                tris.append(idx)
    return TriangleMesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        np.array(colors) if colors else None,
    )
