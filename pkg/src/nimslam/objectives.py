"""Loss terms, visibility masking, and the joint objective.

The per-iteration batch is a set of rendered 3x3 pixel patches spread over
the active frames: every rendered pixel feeds the color rendering loss, the
patch centers drive the multi-scale warping loss, and the 3x3 grids provide
the finite differences for the depth smoothness loss.

Losses are leaves of the computation graph, so each term computes its own
gradient contributions inline (scaled by its objective weight); a single
renderer backward pass then pulls everything to map cells, decoder weights,
and camera pose deltas. Pose gradients are taken with respect to a local
(axis-angle, translation) delta at the identity of each current pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import implicit_map as im
from . import kernels
from . import renderer
from .errors import DegenerateBatchError, ShapeError

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    alpha_warping: float = 0.5
    alpha_render: float = 0.1
    alpha_smooth: float = 0.01


@dataclass
class LossValues:
    render: float
    warping: float
    smooth: float
    total: float


@dataclass
class PixelBatch:
    """Rendered patches: |M| = 9 · len(frame_ids) pixels."""

    frame_ids: np.ndarray  # (P,) index into the window frame list
    pixels: np.ndarray  # (P,9,2) integer (u,v), row-major 3x3 around center 4
    depth: np.ndarray  # (P,9) rendered z-depth
    color: np.ndarray  # (P,9,3) rendered color
    observed: np.ndarray  # (P,9,3) observed color

    @property
    def size(self) -> int:
        return self.pixels.shape[0] * self.pixels.shape[1]


@dataclass
class SamplingPlan:
    """Frozen per-iteration randomness: pixel positions and sample depths."""

    frame_ids: np.ndarray  # (P,)
    pixels: np.ndarray  # (P,9,2)
    t_vals: np.ndarray  # (P*9, S) ray-distance samples


@dataclass
class ObjectiveGrads:
    grids: list | None  # per level, same shape as grid values
    decoder: dict | None  # name -> array
    poses: np.ndarray  # (F,6): [axis-angle, translation] per window frame


@dataclass
class Evaluation:
    losses: LossValues
    batch: PixelBatch
    grads: ObjectiveGrads | None
    mask_fraction: float


_PATCH_OFFSETS = np.array(
    [(du, dv) for dv in (-1, 0, 1) for du in (-1, 0, 1)], dtype=np.int64
)
CENTER = 4  # index of (0,0) in _PATCH_OFFSETS


def _square_offsets(s: int) -> np.ndarray:
    r = s // 2
    return np.array(
        [(du, dv) for dv in range(-r, r + 1) for du in range(-r, r + 1)], dtype=np.int64
    )


# ---------------------------------------------------------------------------
# Individual loss terms (public contracts)
# ---------------------------------------------------------------------------


def render_loss(batch: PixelBatch) -> float:
    """Mean over pixels of the channel-summed L1 color error."""
    if batch.size == 0:
        raise DegenerateBatchError("empty pixel batch")
    diff = batch.color - batch.observed
    return float(np.abs(diff).sum() / (batch.size))


def _ssim_channel(a: np.ndarray, b: np.ndarray, g_up=None):
    """Single-window SSIM over axis 1 of (P,n) patch pairs.

    Returns (ssim (P,), g_b (P,n) or None) where g_b is the VJP of ssim
    against upstream g_up (P,).
    """
    n = a.shape[1]
    mu_a = a.mean(axis=1)
    mu_b = b.mean(axis=1)
    va = (a * a).mean(axis=1) - mu_a ** 2
    vb = (b * b).mean(axis=1) - mu_b ** 2
    cab = (a * b).mean(axis=1) - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + SSIM_C1
    a2 = 2.0 * cab + SSIM_C2
    b1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    b2 = va + vb + SSIM_C2
    ssim = (a1 * a2) / (b1 * b2)
    if g_up is None:
        return ssim, None
    # d ssim / d b_i with means/variances over the window
    inv = 1.0 / (b1 * b2)
    da2 = 2.0 * (a - mu_a[:, None]) / n
    db2 = 2.0 * (b - mu_b[:, None]) / n
    term = (
        (a1[:, None] * da2 + (2.0 * mu_a / n)[:, None] * a2[:, None]) * inv[:, None]
        - (ssim * inv)[:, None] * (b1[:, None] * db2 + (2.0 * mu_b / n)[:, None] * b2[:, None])
    )
    return ssim, term * g_up[:, None]


def ssim_dissimilarity(patch_a: np.ndarray, patch_b: np.ndarray) -> float:
    """(1 - SSIM)/2 of two equal-shape patches, averaged over color channels.

    SSIM uses the standard constants C1=0.01², C2=0.03² and a single window
    spanning the whole patch.
    """
    a = np.asarray(patch_a, dtype=np.float64)
    b = np.asarray(patch_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    c = a.shape[-1]
    flat_a = a.reshape(-1, c).T  # (C, n)
    flat_b = b.reshape(-1, c).T
    ssim, _ = _ssim_channel(flat_a, flat_b)
    return float(np.mean((1.0 - ssim) / 2.0))


def visibility_mask(q_k: np.ndarray, depth: float, window, k_index: int,
                    min_valid: int = 5) -> int:
    """1 iff the pixel has strictly more than min_valid valid projections
    into the other window frames (inside the boundary and in front)."""
    if len(window) < 2:
        raise ValueError("visibility mask needs a window of at least 2 frames")
    from .geometry import in_image, warp_points

    q = np.asarray(q_k, dtype=np.float64)[None, :]
    d = np.array([depth], dtype=np.float64)
    count = 0
    src = window[k_index]
    for li, frame in enumerate(window):
        if li == k_index:
            continue
        warped, _, front = warp_points(q, d, src.pose, frame.pose,
                                       src.intrinsics, frame.intrinsics)
        if front[0] and in_image(warped, frame.intrinsics)[0]:
            count += 1
    return int(count > min_valid)


def smoothness_loss(depths: np.ndarray, colors: np.ndarray) -> float:
    """Edge-weighted depth total variation over rendered patches.

    depths: (h,w) or (P,h,w); colors: matching (...,3). Forward differences
    in x and y are combined at every pixel that has both neighbors; the
    color gradient magnitude downweights depth gradients across edges.
    """
    d = np.asarray(depths, dtype=np.float64)
    c = np.asarray(colors, dtype=np.float64)
    if d.ndim == 2:
        d = d[None]
        c = c[None]
    if d.ndim != 3 or c.shape != d.shape + (3,):
        raise ShapeError(f"bad patch shapes {d.shape} / {c.shape}")
    if d.shape[1] < 2 or d.shape[2] < 2:
        raise ShapeError("smoothness needs patches of at least 2x2 pixels")
    loss, _, _ = _smoothness_pass(d, c, g_scale=None)
    return loss


def total_objective(pyramid, decoder, frames, config, rng=None, plan=None) -> float:
    """One forward evaluation of the weighted joint objective."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 11)))
    if plan is None:
        plan = build_iteration_plan(pyramid, decoder, frames, config, rng)
    ev = evaluate_objective(pyramid, decoder, frames, plan, config, want_grads=False)
    return ev.losses.total


# ---------------------------------------------------------------------------
# Fused passes
# ---------------------------------------------------------------------------


def _frame_arrays(frames):
    imgs = np.stack([np.ascontiguousarray(f.image, dtype=np.float64) for f in frames])
    K = frames[0].intrinsics
    fx = np.array([f.intrinsics.fx for f in frames])
    fy = np.array([f.intrinsics.fy for f in frames])
    cx = np.array([f.intrinsics.cx for f in frames])
    cy = np.array([f.intrinsics.cy for f in frames])
    R = np.stack([f.pose.rotation for f in frames])
    t = np.stack([f.pose.translation for f in frames])
    return imgs, (fx, fy, cx, cy, K.width, K.height), R, t


def _center_validity(frame_ids, centers, depths, intr, R, t):
    """(P,F) validity of center projections into every window frame."""
    fx, fy, cx, cy, width, height = intr
    p = centers.shape[0]
    n_frames = R.shape[0]
    rc = np.empty((p, 3))
    rc[:, 0] = (centers[:, 0] - cx[frame_ids]) / fx[frame_ids]
    rc[:, 1] = (centers[:, 1] - cy[frame_ids]) / fy[frame_ids]
    rc[:, 2] = 1.0
    x_cam = rc * depths[:, None]
    x_w = np.einsum("pij,pj->pi", R[frame_ids], x_cam) + t[frame_ids]
    valid = np.zeros((p, n_frames), dtype=bool)
    for li in range(n_frames):
        y = (x_w - t[li]) @ R[li]
        front = y[:, 2] > 1e-9
        zs = np.where(front, y[:, 2], 1.0)
        u = fx[li] * y[:, 0] / zs + cx[li]
        v = fy[li] * y[:, 1] / zs + cy[li]
        inb = (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
        valid[:, li] = front & inb & (frame_ids != li)
    return valid


def _warping_pass(frames, frame_ids, centers, depths, patch_sizes, min_valid,
                  g_scale=None, pose_grads=None):
    """Multi-scale patch warping loss; optionally its fused backward.

    Returns (loss, g_depths (P,), mask (P,)). When g_scale (upstream scale
    alpha_warping / P) is given, gradients are accumulated into g_depths and
    pose_grads (F,6).
    """
    imgs, intr, R, t = _frame_arrays(frames)
    fx, fy, cx, cy, width, height = intr
    p = centers.shape[0]
    n_frames = len(frames)
    want_grads = g_scale is not None

    valid_centers = _center_validity(frame_ids, centers, depths, intr, R, t)
    mask = valid_centers.sum(axis=1) > min_valid
    g_depths = np.zeros(p)
    loss = 0.0
    if not np.any(mask):
        return 0.0, g_depths, mask

    rk = R[frame_ids]  # (P,3,3)
    tk = t[frame_ids]
    for s in patch_sizes:
        offs = _square_offsets(s)  # (s²,2)
        n_pix = offs.shape[0]
        src_u = centers[:, 0][:, None] + offs[:, 0][None, :]  # (P,s²)
        src_v = centers[:, 1][:, None] + offs[:, 1][None, :]
        a_patch = imgs[frame_ids[:, None], src_v, src_u, :]  # (P,s²,3)
        r_off = np.empty((p, n_pix, 3))
        r_off[..., 0] = (src_u - cx[frame_ids][:, None]) / fx[frame_ids][:, None]
        r_off[..., 1] = (src_v - cy[frame_ids][:, None]) / fy[frame_ids][:, None]
        r_off[..., 2] = 1.0
        x_cam = r_off * depths[:, None, None]  # (P,s²,3)
        x_w = np.einsum("pij,pnj->pni", rk, x_cam) + tk[:, None, :]

        for li in range(n_frames):
            pair_ok = mask & valid_centers[:, li]
            if not np.any(pair_ok):
                continue
            rows = np.nonzero(pair_ok)[0]
            y = np.einsum("ji,rnj->rni", R[li], x_w[rows] - t[li])  # Rᵀ(x−t)
            front = y[..., 2] > 1e-9
            zs = np.where(front, y[..., 2], 1.0)
            qx = fx[li] * y[..., 0] / zs + cx[li]
            qy = fy[li] * y[..., 1] / zs + cy[li]
            ok = front & (qx >= 0) & (qx <= width - 1) & (qy >= 0) & (qy <= height - 1)
            patch_ok = ok.all(axis=1)
            if not np.any(patch_ok):
                continue
            rows = rows[patch_ok]
            y = y[patch_ok]
            qx = np.ascontiguousarray(qx[patch_ok].reshape(-1))
            qy = np.ascontiguousarray(qy[patch_ok].reshape(-1))
            b_flat = kernels.bilinear_gather(imgs[li], qx, qy)  # (r·s²,3)
            nr = rows.shape[0]
            a = a_patch[rows]  # (nr,s²,3)
            b = b_flat.reshape(nr, n_pix, 3)

            if s == 1:
                diff = b[:, 0, :] - a[:, 0, :]
                terms = np.abs(diff).mean(axis=1)
                g_b = None
                if want_grads:
                    g_b = (np.sign(diff) * (g_scale / 3.0))[:, None, :]
            else:
                g_up = np.full(nr, -0.5 * g_scale / 3.0) if want_grads else None
                terms = np.zeros(nr)
                g_b = np.zeros_like(b) if want_grads else None
                for ch in range(3):
                    ssim, g_bc = _ssim_channel(a[..., ch], b[..., ch], g_up)
                    terms += (1.0 - ssim) / 2.0 / 3.0
                    if want_grads:
                        g_b[..., ch] = g_bc
            loss += float(terms.sum())

            if not want_grads:
                continue
            gqx, gqy = kernels.bilinear_posgrad(
                imgs[li], qx, qy, np.ascontiguousarray(g_b.reshape(-1, 3))
            )
            gqx = gqx.reshape(nr, n_pix)
            gqy = gqy.reshape(nr, n_pix)
            g_y = np.empty_like(y)
            g_y[..., 0] = gqx * fx[li] / y[..., 2]
            g_y[..., 1] = gqy * fy[li] / y[..., 2]
            g_y[..., 2] = -(gqx * fx[li] * y[..., 0] + gqy * fy[li] * y[..., 1]) / y[..., 2] ** 2
            # target pose l: Y = exp(-ŵ)(R_lᵀ(x_w - t_l) - v)
            if pose_grads is not None:
                g_omega_l = -np.cross(y.reshape(-1, 3), g_y.reshape(-1, 3)).sum(axis=0)
                g_v_l = -g_y.sum(axis=(0, 1))
                pose_grads[li, :3] += g_omega_l
                pose_grads[li, 3:] += g_v_l
            g_xw = np.einsum("ij,rnj->rni", R[li], g_y)
            g_xcam = np.einsum("rji,rnj->rni", rk[rows], g_xw)
            if pose_grads is not None:
                g_omega_k = np.cross(x_cam[rows], g_xcam).sum(axis=1)  # (nr,3)
                g_v_k = g_xcam.sum(axis=1)
                np.add.at(pose_grads, (frame_ids[rows], slice(0, 3)), g_omega_k)
                np.add.at(pose_grads, (frame_ids[rows], slice(3, 6)), g_v_k)
            np.add.at(
                g_depths, rows, np.einsum("rni,rni->r", r_off[rows], g_xcam)
            )

    return loss / p, g_depths, mask


def _smoothness_pass(z: np.ndarray, col: np.ndarray, g_scale=None):
    """Edge-weighted depth TV over (P,h,w) patches; fused backward.

    Returns (loss, g_z, g_col); gradients are None unless g_scale (upstream
    scale alpha_smooth) is given. The loss is the mean over all interior
    positions of all patches.
    """
    p, h, w = z.shape
    dxd = z[:, : h - 1, 1:] - z[:, : h - 1, : w - 1]  # (P,h-1,w-1)
    dyd = z[:, 1:, : w - 1] - z[:, : h - 1, : w - 1]
    dxi = col[:, : h - 1, 1:, :] - col[:, : h - 1, : w - 1, :]
    dyi = col[:, 1:, : w - 1, :] - col[:, : h - 1, : w - 1, :]
    gsq = (dxi ** 2).sum(axis=-1) + (dyi ** 2).sum(axis=-1)
    gn = np.sqrt(gsq)
    wgt = np.exp(-gn)
    m = np.abs(dxd) + np.abs(dyd)
    count = p * (h - 1) * (w - 1)
    loss = float((wgt * m).sum() / count)
    if g_scale is None:
        return loss, None, None

    g_term = g_scale / count
    g_m = wgt * g_term
    g_gn = -wgt * m * g_term
    g_dxd = g_m * np.sign(dxd)
    g_dyd = g_m * np.sign(dyd)
    g_z = np.zeros_like(z)
    g_z[:, : h - 1, 1:] += g_dxd
    g_z[:, : h - 1, : w - 1] -= g_dxd
    g_z[:, 1:, : w - 1] += g_dyd
    g_z[:, : h - 1, : w - 1] -= g_dyd
    # zero subgradient of the norm where the color gradient vanishes
    scale = (g_gn * np.where(gn > 1e-12, 1.0 / np.maximum(gn, 1e-12), 0.0))[..., None]
    g_dxi = scale * dxi
    g_dyi = scale * dyi
    g_col = np.zeros_like(col)
    g_col[:, : h - 1, 1:, :] += g_dxi
    g_col[:, : h - 1, : w - 1, :] -= g_dxi
    g_col[:, 1:, : w - 1, :] += g_dyi
    g_col[:, : h - 1, : w - 1, :] -= g_dyi
    return loss, g_z, g_col


def warping_loss(batch: PixelBatch, frames, patch_sizes, min_valid: int = 5) -> float:
    """Forward-only multi-scale warping loss of a rendered batch."""
    centers = batch.pixels[:, CENTER, :].astype(np.int64)
    loss, _, _ = _warping_pass(
        frames, batch.frame_ids, centers, batch.depth[:, CENTER],
        patch_sizes, min_valid,
    )
    return loss


# ---------------------------------------------------------------------------
# Plan construction and the full evaluation
# ---------------------------------------------------------------------------


def build_iteration_plan(pyramid, decoder, frames, config, rng) -> SamplingPlan:
    """Sample patch positions and freeze per-ray sample depths."""
    n_patches = max(1, config.pixel_budget // 9)
    K = frames[0].intrinsics
    margin = max(max(config.patch_sizes) // 2, 1)
    frame_ids = rng.integers(0, len(frames), size=n_patches)
    cu = rng.integers(margin, K.width - margin, size=n_patches)
    cv = rng.integers(margin, K.height - margin, size=n_patches)
    centers = np.stack([cu, cv], axis=1)
    pixels = centers[:, None, :] + _PATCH_OFFSETS[None, :, :]  # (P,9,2)

    flat_pix = pixels.reshape(-1, 2).astype(np.float64)
    flat_ids = np.repeat(frame_ids, 9)
    origins = np.empty((flat_pix.shape[0], 3))
    dirs = np.empty_like(origins)
    for fi in np.unique(flat_ids):
        sel = flat_ids == fi
        o, d, _ = renderer.make_rays(frames[fi].intrinsics, frames[fi].pose, flat_pix[sel])
        origins[sel] = o
        dirs[sel] = d
    near = config.near
    far = config.far_value(pyramid.bounds.diagonal())
    t_vals = renderer.hierarchical_depths(pyramid, decoder, origins, dirs, near, far,
                                          config, rng)
    return SamplingPlan(frame_ids, pixels, t_vals)


def evaluate_objective(pyramid, decoder, frames, plan: SamplingPlan, config,
                       want_grads: bool = True,
                       want_decoder_grads: bool = False) -> Evaluation:
    """Forward (and optionally fused backward) pass of the joint objective.

    Sample depths and pixel positions come frozen from the plan; rays are
    rebuilt from the current poses so pose perturbations stay inside the
    differentiated graph.
    """
    frame_ids = plan.frame_ids
    n_patches = frame_ids.shape[0]
    pixels = plan.pixels
    flat_pix = pixels.reshape(-1, 2).astype(np.float64)
    flat_ids = np.repeat(frame_ids, 9)
    n_rays = flat_pix.shape[0]

    origins = np.empty((n_rays, 3))
    dirs = np.empty_like(origins)
    cos = np.empty(n_rays)
    unit_cam = np.empty((n_rays, 3))
    for fi in np.unique(flat_ids):
        sel = flat_ids == fi
        K = frames[fi].intrinsics
        o, d, c = renderer.make_rays(K, frames[fi].pose, flat_pix[sel])
        origins[sel] = o
        dirs[sel] = d
        cos[sel] = c
        unit_cam[sel] = (d @ frames[fi].pose.rotation)  # Rᵀ d, camera frame

    rctx = renderer.render_forward(pyramid, decoder, origins, dirs, plan.t_vals)
    z = (rctx.depth * cos).reshape(n_patches, 3, 3)
    color = rctx.color.reshape(n_patches, 3, 3, 3)

    imgs = np.stack([np.ascontiguousarray(f.image, dtype=np.float64) for f in frames])
    ui = pixels[..., 0]
    vi = pixels[..., 1]
    observed = imgs[frame_ids[:, None], vi, ui, :]  # (P,9,3)

    batch = PixelBatch(frame_ids, pixels, z.reshape(n_patches, 9),
                       rctx.color.reshape(n_patches, 9, 3), observed)

    diff = batch.color - observed
    loss_render = float(np.abs(diff).sum() / batch.size)

    centers = pixels[:, CENTER, :].astype(np.int64)
    pose_grads = np.zeros((len(frames), 6)) if want_grads else None
    warp_scale = config.alpha_warping / n_patches if want_grads else None
    loss_warp, g_center_depth, mask = _warping_pass(
        frames, frame_ids, centers, batch.depth[:, CENTER],
        config.patch_sizes, config.visibility_min_valid,
        g_scale=warp_scale, pose_grads=pose_grads,
    )

    smooth_scale = config.alpha_smooth if want_grads else None
    loss_smooth, g_z_smooth, g_col_smooth = _smoothness_pass(z, color, g_scale=smooth_scale)

    total = (config.alpha_warping * loss_warp
             + config.alpha_render * loss_render
             + config.alpha_smooth * loss_smooth)
    losses = LossValues(loss_render, loss_warp, loss_smooth, total)
    mask_fraction = float(mask.mean()) if mask.size else 0.0

    if not want_grads:
        return Evaluation(losses, batch, None, mask_fraction)

    # Gather gradient w.r.t. rendered color and z-depth.
    g_color = (config.alpha_render / batch.size) * np.sign(diff).reshape(n_rays, 3)
    g_color += g_col_smooth.reshape(n_rays, 3)
    g_z = g_z_smooth.reshape(n_patches, 9)
    g_z[:, CENTER] += g_center_depth
    g_depth_t = g_z.reshape(n_rays) * cos

    grid_grads = [np.zeros_like(g.values) for g in pyramid.levels]
    decoder_grads = (
        {k: np.zeros_like(v) for k, v in decoder.arrays().items()}
        if want_decoder_grads else None
    )
    g_origins, g_dirs = renderer.render_backward(
        pyramid, decoder, rctx, g_depth_t, g_color,
        grid_grads=grid_grads, decoder_grads=decoder_grads,
    )
    for g in grid_grads:
        im.zero_padding(g)

    # Ray geometry -> pose deltas: origin = R v + t, direction = R exp(ŵ) u.
    for fi in np.unique(flat_ids):
        sel = flat_ids == fi
        rot = frames[fi].pose.rotation
        pose_grads[fi, 3:] += rot.T @ g_origins[sel].sum(axis=0)
        g_dir_cam = g_dirs[sel] @ rot  # Rᵀ g per ray
        pose_grads[fi, :3] += np.cross(unit_cam[sel], g_dir_cam).sum(axis=0)

    grads = ObjectiveGrads(grid_grads, decoder_grads, pose_grads)
    return Evaluation(losses, batch, grads, mask_fraction)
