"""Per-ray sampling and differentiable depth/color compositing.

Rays carry unit world-space directions; sample depths are distances along
the ray. A pixel's z-depth is the ray distance times the z-component of its
camera-frame unit direction (``cos``), which callers apply when a true depth
map is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import implicit_map as im
from .errors import ConfigError
from .geometry import CameraIntrinsics, Pose, pixel_rays_cam


@dataclass
class Ray:
    origin: np.ndarray  # (3,) camera center, world
    direction: np.ndarray  # (3,) unit, world

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d|={n}")


@dataclass
class RaySamples:
    depths: np.ndarray  # (S,) sorted ascending
    occupancies: np.ndarray  # (S,) in (0,1)
    colors: np.ndarray  # (S,3)
    weights: np.ndarray  # (S,) in [0,1], sum <= 1


def stratified_samples(near: float, far: float, n: int, rng) -> np.ndarray:
    """One uniform draw per equal-width bin of [near, far], sorted."""
    if not (0 < near < far):
        raise ConfigError(f"need 0 < near < far, got near={near}, far={far}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    u = np.asarray(rng.random(n), dtype=np.float64)
    return near + (np.arange(n) + u) * (far - near) / n


def stratified_samples_batch(near: float, far: float, n_rays: int, n: int, rng) -> np.ndarray:
    if not (0 < near < far):
        raise ConfigError(f"need 0 < near < far, got near={near}, far={far}")
    u = rng.random((n_rays, n))
    return near + (np.arange(n)[None, :] + u) * (far - near) / n


def termination_weights(occ: np.ndarray) -> np.ndarray:
    """w_i = o_i · Π_{j<i}(1 − o_j) along the last axis."""
    occ = np.asarray(occ, dtype=np.float64)
    if occ.size and (occ.min() < 0.0 or occ.max() > 1.0):
        raise ValueError("occupancies must lie in [0, 1]")
    trans = np.cumprod(1.0 - occ, axis=-1)
    t_excl = np.concatenate(
        [np.ones(occ.shape[:-1] + (1,)), trans[..., :-1]], axis=-1
    )
    return occ * t_excl


def termination_weights_backward(occ: np.ndarray, g_w: np.ndarray) -> np.ndarray:
    """VJP of termination_weights w.r.t. the occupancies."""
    trans = np.cumprod(1.0 - occ, axis=-1)
    t_excl = np.concatenate(
        [np.ones(occ.shape[:-1] + (1,)), trans[..., :-1]], axis=-1
    )
    w = occ * t_excl
    gw_w = g_w * w
    # suffix_i = sum_{m>i} g_w_m * w_m
    suffix = np.flip(np.cumsum(np.flip(gw_w, axis=-1), axis=-1), axis=-1) - gw_w
    return g_w * t_excl - suffix / np.maximum(1.0 - occ, 1e-12)


def sample_pdf_batch(edges: np.ndarray, mass: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from per-ray piecewise-constant densities.

    edges: (N, S+1) ascending bin edges; mass: (N, S) nonnegative bin masses
    (rows summing to ~0 fall back to uniform-by-width); u: (N, M) in [0, 1).
    """
    n, s = mass.shape
    widths = edges[:, 1:] - edges[:, :-1]
    total = mass.sum(axis=1, keepdims=True)
    degenerate = total[:, 0] < 1e-12
    if np.any(degenerate):
        mass = np.where(degenerate[:, None], widths, mass)
        total = mass.sum(axis=1, keepdims=True)
    pdf = mass / total
    cdf = np.concatenate([np.zeros((n, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    offset = 2.0 * np.arange(n)[:, None]
    idx = np.searchsorted((cdf + offset).ravel(), (u + offset).ravel(), side="right")
    idx = idx.reshape(n, -1) - np.arange(n)[:, None] * (s + 1) - 1
    idx = np.clip(idx, 0, s - 1)
    c0 = np.take_along_axis(cdf, idx, axis=1)
    c1 = np.take_along_axis(cdf, idx + 1, axis=1)
    e0 = np.take_along_axis(edges, idx, axis=1)
    e1 = np.take_along_axis(edges, idx + 1, axis=1)
    frac = (u - c0) / np.maximum(c1 - c0, 1e-12)
    return e0 + frac * (e1 - e0)


def _bin_edges(t: np.ndarray, near: float, far: float) -> np.ndarray:
    """Edges [near, midpoints, far] for samples t (N,S)."""
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    n = t.shape[0]
    return np.concatenate(
        [np.full((n, 1), near), mids, np.full((n, 1), far)], axis=1
    )


def query_field(pyramid, decoder, pts: np.ndarray, with_color: bool = True,
                chunk: int = 262144):
    """Non-differentiable occupancy (and color) query at (N,3) points."""
    n = pts.shape[0]
    occ = np.empty(n)
    col = np.empty((n, 3)) if with_color else None
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        feats, _ = im.features_forward(pyramid, pts[lo:hi])
        o, c, _ = im.decoder_forward(decoder, feats, with_color=with_color)
        occ[lo:hi] = o
        if with_color:
            col[lo:hi] = c
    return occ, col


def hierarchical_depths(pyramid, decoder, origins: np.ndarray, dirs: np.ndarray,
                        near: float, far: float, config, rng) -> np.ndarray:
    """Stratified coarse samples refined by importance rounds; (N, total) depths.

    Each round draws ``importance_samples`` new depths from the current
    weight histogram, merges, and re-sorts. The merged set's occupancies
    equal fresh re-queries (the map is fixed within an iteration), so old
    samples keep their cached values and only new depths hit the decoder.
    Sample positions are treated as data by the optimizer (no gradients
    flow through this procedure).
    """
    n = origins.shape[0]
    t = stratified_samples_batch(near, far, n, config.coarse_samples, rng)
    occ, _ = query_field(
        pyramid, decoder, (origins[:, None, :] + dirs[:, None, :] * t[..., None]).reshape(-1, 3),
        with_color=False,
    )
    occ = occ.reshape(n, -1)
    w = termination_weights(occ)
    for _ in range(config.importance_rounds):
        u = rng.random((n, config.importance_samples))
        t_new = sample_pdf_batch(_bin_edges(t, near, far), w, u)
        occ_new, _ = query_field(
            pyramid, decoder,
            (origins[:, None, :] + dirs[:, None, :] * t_new[..., None]).reshape(-1, 3),
            with_color=False,
        )
        t_cat = np.concatenate([t, t_new], axis=1)
        occ_cat = np.concatenate([occ, occ_new.reshape(n, -1)], axis=1)
        order = np.argsort(t_cat, axis=1, kind="stable")
        t = np.take_along_axis(t_cat, order, axis=1)
        occ = np.take_along_axis(occ_cat, order, axis=1)
        w = termination_weights(occ)
    return t


def importance_rounds(ray: Ray, initial: RaySamples, per_round: int, rounds: int,
                      pyramid, decoder, rng, near: float, far: float) -> RaySamples:
    """Refine a single ray's samples by repeated inverse-CDF rounds."""
    t = initial.depths[None, :]
    w = initial.weights[None, :]
    for _ in range(rounds):
        u = rng.random((1, per_round))
        t_new = sample_pdf_batch(_bin_edges(t, near, far), w, u)
        t = np.sort(np.concatenate([t, t_new], axis=1), axis=1)
        pts = ray.origin[None, :] + ray.direction[None, :] * t[0][:, None]
        occ, col = query_field(pyramid, decoder, pts)
        w = termination_weights(occ[None, :])
    return RaySamples(t[0], occ, col, w[0])


# ---------------------------------------------------------------------------
# Differentiable render over a batch of rays with fixed sample depths
# ---------------------------------------------------------------------------


@dataclass
class RenderCtx:
    origins: np.ndarray  # (N,3)
    dirs: np.ndarray  # (N,3)
    t: np.ndarray  # (N,S)
    feat_ctx: im.FeatureCtx
    dec_ctx: im.DecoderCtx
    occ: np.ndarray  # (N,S)
    col: np.ndarray  # (N,S,3)
    weights: np.ndarray  # (N,S)
    depth: np.ndarray  # (N,) ray-distance expectation
    color: np.ndarray  # (N,3)


def render_forward(pyramid, decoder, origins: np.ndarray, dirs: np.ndarray,
                   t: np.ndarray) -> RenderCtx:
    """Composite depth/color for rays at fixed sample depths t (N,S)."""
    n, s = t.shape
    pts = (origins[:, None, :] + dirs[:, None, :] * t[..., None]).reshape(-1, 3)
    feats, feat_ctx = im.features_forward(pyramid, pts)
    occ_flat, col_flat, dec_ctx = im.decoder_forward(decoder, feats)
    occ = occ_flat.reshape(n, s)
    col = col_flat.reshape(n, s, 3)
    w = termination_weights(occ)
    depth = np.sum(w * t, axis=1)
    color = np.sum(w[..., None] * col, axis=1)
    return RenderCtx(origins, dirs, t, feat_ctx, dec_ctx, occ, col, w, depth, color)


def render_backward(pyramid, decoder, ctx: RenderCtx, g_depth: np.ndarray,
                    g_color: np.ndarray, grid_grads=None, decoder_grads=None,
                    want_ray_grads: bool = True):
    """VJP of render_forward.

    g_depth (N,), g_color (N,3) pull back to grid cells (into grid_grads),
    decoder weights (into decoder_grads dict), and the ray geometry; returns
    (g_origins (N,3), g_dirs (N,3)).
    """
    n, s = ctx.t.shape
    g_w = g_depth[:, None] * ctx.t + np.einsum("nc,nsc->ns", g_color, ctx.col)
    g_col = ctx.weights[..., None] * g_color[:, None, :]
    g_occ = termination_weights_backward(ctx.occ, g_w)

    dec_grads, g_feats = im.decoder_backward(
        decoder, ctx.dec_ctx, g_occ.reshape(-1), g_col.reshape(-1, 3),
        want_weight_grads=decoder_grads is not None,
    )
    if decoder_grads is not None:
        for name, g in dec_grads.items():
            decoder_grads[name] += g

    g_pts = im.features_backward(
        pyramid, ctx.feat_ctx, g_feats, grid_grads=grid_grads,
        want_pos_grad=want_ray_grads,
    )
    if not want_ray_grads:
        return None, None
    g_pts = g_pts.reshape(n, s, 3)
    g_origins = g_pts.sum(axis=1)
    g_dirs = np.sum(g_pts * ctx.t[..., None], axis=1)
    return g_origins, g_dirs


def render_pixel(ray: Ray, pyramid, decoder, config, rng=None):
    """Render one pixel: returns (expected ray distance, color).

    Multiply the distance by the ray's camera-frame cos factor to obtain a
    z-depth.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 7)))
    near = config.near
    far = config.far_value(pyramid.bounds.diagonal())
    t = hierarchical_depths(
        pyramid, decoder, ray.origin[None, :], ray.direction[None, :], near, far, config, rng
    )
    ctx = render_forward(pyramid, decoder, ray.origin[None, :], ray.direction[None, :], t)
    return float(ctx.depth[0]), ctx.color[0]


def make_rays(K: CameraIntrinsics, pose: Pose, pixels: np.ndarray):
    """World rays through (N,2) pixels: (origins, unit dirs, cos factors).

    cos is the z-component of the camera-frame unit direction; z-depth =
    ray distance · cos.
    """
    d_cam = pixel_rays_cam(K, pixels)
    norms = np.linalg.norm(d_cam, axis=1)
    unit_cam = d_cam / norms[:, None]
    dirs = unit_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs, 1.0 / norms


def render_rays(pyramid, decoder, K: CameraIntrinsics, pose: Pose, pixels: np.ndarray,
                config, rng):
    """Quick non-differentiable render of arbitrary pixels.

    Returns (z_depths (N,), colors (N,3), sum_weights (N,)).
    """
    origins, dirs, cos = make_rays(K, pose, pixels)
    near = config.near
    far = config.far_value(pyramid.bounds.diagonal())
    t = hierarchical_depths(pyramid, decoder, origins, dirs, near, far, config, rng)
    pts = (origins[:, None, :] + dirs[:, None, :] * t[..., None]).reshape(-1, 3)
    occ, col = query_field(pyramid, decoder, pts)
    n, s = t.shape
    w = termination_weights(occ.reshape(n, s))
    depth_t = np.sum(w * t, axis=1)
    color = np.sum(w[..., None] * col.reshape(n, s, 3), axis=1)
    return depth_t * cos, color, w.sum(axis=1)
