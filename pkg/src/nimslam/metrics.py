"""Trajectory and mapping evaluation.

ATE follows the standard protocol: associate poses by timestamp, align the
estimated positions onto ground truth with a least-squares similarity
(rotation, translation, and scale: monocular reconstructions carry an
arbitrary global scale), then report the RMSE of the residual translations.
Mesh quality uses area-uniform surface samples and nearest-neighbor
distances in both directions.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateBatchError, EmptyMeshError, InsufficientDataError
from .mesh import TriangleMesh, frustum_cull


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares similarity fit: returns (s, R, t) with dst ≈ s·R·src + t."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt
    if with_scale:
        var_s = (xs * xs).sum() / n
        scale = float(np.trace(np.diag(d) @ s_fix) / var_s)
    else:
        scale = 1.0
    t = mu_d - scale * rot @ mu_s
    return scale, rot, t


def _positions_from_trajectory(traj):
    """Accept (N,3) arrays or lists of (timestamp, Pose)."""
    arr = np.asarray(traj, dtype=object)
    if isinstance(traj, np.ndarray) and traj.ndim == 2 and traj.shape[1] == 3:
        return None, np.asarray(traj, dtype=np.float64)
    stamps = np.array([t for t, _ in traj], dtype=np.float64)
    pos = np.stack([p.translation for _, p in traj])
    return stamps, pos


def ate_rmse(estimated, ground_truth, association_tolerance: float = 0.02) -> float:
    """Scale-corrected absolute trajectory error (RMSE, meters)."""
    est_stamps, est_pos = _positions_from_trajectory(estimated)
    gt_stamps, gt_pos = _positions_from_trajectory(ground_truth)
    if est_stamps is not None and gt_stamps is not None:
        pairs_e, pairs_g = [], []
        for i, s in enumerate(est_stamps):
            j = int(np.argmin(np.abs(gt_stamps - s)))
            if abs(gt_stamps[j] - s) <= association_tolerance:
                pairs_e.append(est_pos[i])
                pairs_g.append(gt_pos[j])
        est_pos = np.asarray(pairs_e, dtype=np.float64).reshape(-1, 3)
        gt_pos = np.asarray(pairs_g, dtype=np.float64).reshape(-1, 3)
    if est_pos.shape[0] != gt_pos.shape[0]:
        raise InsufficientDataError("trajectories have different lengths after association")
    if est_pos.shape[0] < 3:
        raise InsufficientDataError(f"need >= 3 associated poses, got {est_pos.shape[0]}")
    scale, rot, t = umeyama_alignment(est_pos, gt_pos, with_scale=True)
    aligned = scale * est_pos @ rot.T + t
    residual = aligned - gt_pos
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))


def closest_triangle_distances(points: np.ndarray, mesh: TriangleMesh,
                               chunk: int = 2048) -> np.ndarray:
    """Exact point-to-surface distances against every triangle.

    O(N·T); intended for meshes with few (large) triangles, where nearest
    sampled-point distances would carry a sampling floor.
    """
    tri = mesh.vertices[mesh.triangles]  # (T,3,3)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk][:, None, :]  # (n,1,3)
        ap = p - a
        # closest point on each triangle (Ericson, Real-Time Collision Detection)
        d1 = np.sum(ab * ap, axis=-1)
        d2 = np.sum(ac * ap, axis=-1)
        bp = p - b
        d3 = np.sum(ab * bp, axis=-1)
        d4 = np.sum(ac * bp, axis=-1)
        cp = p - c
        d5 = np.sum(ab * cp, axis=-1)
        d6 = np.sum(ac * cp, axis=-1)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        denom = va + vb + vc
        v = np.where(np.abs(denom) > 1e-300, vb / np.where(denom == 0, 1, denom), 0.0)
        w = np.where(np.abs(denom) > 1e-300, vc / np.where(denom == 0, 1, denom), 0.0)
        # interior case
        closest = a + v[..., None] * ab + w[..., None] * ac
        # vertex regions
        closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
        closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
        closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
        # edge regions
        ab_t = np.clip(np.where(np.abs(d1 - d3) > 1e-300, d1 / (d1 - d3 + 1e-300), 0), 0, 1)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        closest = np.where(on_ab[..., None], a + ab_t[..., None] * ab, closest)
        ac_t = np.clip(np.where(np.abs(d2 - d6) > 1e-300, d2 / (d2 - d6 + 1e-300), 0), 0, 1)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        closest = np.where(on_ac[..., None], a + ac_t[..., None] * ac, closest)
        bc_t = np.clip((d4 - d3) / (((d4 - d3) + (d5 - d6)) + 1e-300), 0, 1)
        on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        closest = np.where(on_bc[..., None], b + bc_t[..., None] * (c - b), closest)
        dist = np.linalg.norm(p - closest, axis=-1)
        out[lo:lo + chunk] = dist.min(axis=1)
    return out


# Meshes with at most this many triangles use exact point-to-surface
# distances; larger meshes (marching-cubes output, where triangles are a
# fraction of a voxel) fall back to nearest sampled point.
EXACT_SURFACE_TRIANGLES = 4096


def _nearest_surface_distances(points, target_mesh, target_samples):
    if len(target_mesh.triangles) <= EXACT_SURFACE_TRIANGLES:
        return closest_triangle_distances(points, target_mesh)
    dist, _ = cKDTree(target_samples).query(points, workers=-1)
    return dist


def sample_mesh_points(mesh: TriangleMesh, n_points: int, rng) -> np.ndarray:
    """Area-uniform random surface samples (N,3)."""
    if mesh.is_empty:
        raise EmptyMeshError("cannot sample an empty mesh")
    v = mesh.vertices
    tri = v[mesh.triangles]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0:
        raise EmptyMeshError("mesh has zero surface area")
    idx = rng.choice(len(areas), size=n_points, p=areas / total)
    r1 = np.sqrt(rng.random(n_points))
    r2 = rng.random(n_points)
    a, b, c = tri[idx, 0], tri[idx, 1], tri[idx, 2]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def mesh_metrics(reconstructed: TriangleMesh, gt: TriangleMesh, n_points: int = 200000,
                 threshold: float = 0.05, cull_trajectory=None, intrinsics=None,
                 seed: int = 0):
    """(accuracy cm, completion cm, completion_ratio %) between two meshes.

    accuracy: mean nearest distance recon -> GT; completion: GT -> recon;
    ratio: % of recon samples within `threshold` meters of GT. When a
    trajectory is given, both meshes are frustum-culled with it first (the
    unseen-region convention).
    """
    if reconstructed.is_empty or gt.is_empty:
        raise EmptyMeshError("mesh_metrics needs two non-empty meshes")
    if cull_trajectory is not None:
        poses = [p for _, p in cull_trajectory]
        reconstructed = frustum_cull(reconstructed, poses, intrinsics)
        gt = frustum_cull(gt, poses, intrinsics)
        if reconstructed.is_empty or gt.is_empty:
            raise EmptyMeshError("frustum culling removed an entire mesh")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 505)))
    p_rec = sample_mesh_points(reconstructed, n_points, rng)
    p_gt = sample_mesh_points(gt, n_points, rng)
    d_rec_to_gt = _nearest_surface_distances(p_rec, gt, p_gt)
    d_gt_to_rec = _nearest_surface_distances(p_gt, reconstructed, p_rec)
    accuracy_cm = float(d_rec_to_gt.mean() * 100.0)
    completion_cm = float(d_gt_to_rec.mean() * 100.0)
    ratio = float((d_rec_to_gt <= threshold).mean() * 100.0)
    return accuracy_cm, completion_cm, ratio


def depth_error(estimated: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute depth difference over masked pixels, in centimeters."""
    estimated = np.asarray(estimated, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if estimated.shape != gt.shape or mask.shape != gt.shape:
        raise ValueError("depth maps and mask must share one shape")
    if not np.any(mask):
        raise DegenerateBatchError("empty mask")
    return float(np.abs(estimated[mask] - gt[mask]).mean() * 100.0)


def median_scale_alignment(estimated: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Global scale factor median(gt)/median(est) over masked pixels.

    Monocular reconstructions have gauge freedom in scale; depth metrics on
    synthetic oracles are reported after this one-parameter correction.
    """
    est = np.asarray(estimated, dtype=np.float64)[mask]
    ref = np.asarray(gt, dtype=np.float64)[mask]
    med = np.median(est)
    if med <= 0:
        raise ValueError("estimated depths must be positive to align scale")
    return float(np.median(ref) / med)
