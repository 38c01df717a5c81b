"""Finite-difference verification of the reverse-mode gradients.

Builds a deliberately tiny scene (finest grid well under 16 cells per axis,
two rendered patches, the full joint objective) and compares the analytic
gradients against central finite differences parameter by parameter. Sample
positions and pixel choices are frozen in the plan, so the checked function
is exactly the one the backward pass differentiates.

The objective is differentiable almost everywhere but not C¹: trilinear
fields kink at cell faces, ReLU units at zero pre-activation, L1 terms at
zero residual. A difference quotient only estimates the derivative when no
kink falls inside its interval, so every quotient is certified first by
agreement between steps h and h/2 (computed purely from function values,
never from the analytic gradients); contaminated parameters are rejected
and redrawn. A wrong analytic gradient would still be caught against every
certified quotient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import renderer
from .config import SlamConfig
from .geometry import CameraIntrinsics, Pose, PoseDelta, apply_delta, so3_exp
from .implicit_map import DECODER_FIELDS, SceneBounds, init_decoder, init_map
from .objectives import _PATCH_OFFSETS, SamplingPlan, evaluate_objective

H_MAP = 1e-4  # step for map cells and decoder weights
H_POSE = 1e-6  # pose deltas sweep sample points through space: smaller step
# Checked parameters must carry enough gradient that the quotient's
# round-off noise (~1e-9 absolute on this loss at h=1e-4) stays well below
# the 1e-4 relative tolerance.
MAP_FLOOR = 1e-4
DECODER_FLOOR = 5e-4
POSE_FLOOR = 1e-2
CERT_REL = 4e-5  # h vs h/2 agreement required to certify a quotient
CERT_ABS = 2e-9


@dataclass
class _Frame:
    index: int
    image: np.ndarray
    intrinsics: CameraIntrinsics
    pose: Pose


@dataclass
class CheckReport:
    max_rel_err: float
    n_checked: int
    n_rejected: int
    per_group: dict
    runtime_s: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-4 and self.n_checked >= 50


def _smooth_image(rng, h, w):
    # Low-frequency texture: bilinear sampling of a stored image has
    # gradient jumps at pixel boundaries proportional to the texture's
    # second differences, which smooth textures keep tiny.
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    img = np.zeros((h, w, 3))
    for c in range(3):
        phase = rng.uniform(0, 2 * np.pi, size=3)
        freq = rng.uniform(0.02, 0.07, size=3)
        img[:, :, c] = (
            0.5
            + 0.2 * np.sin(freq[0] * xx + phase[0])
            + 0.2 * np.cos(freq[1] * yy + phase[1])
            + 0.1 * np.sin(freq[2] * (xx + yy) + phase[2])
        )
    return np.clip(img, 0.02, 0.98)


def build_tiny_instance(seed: int = 0):
    """A tiny-but-complete instance: 8 frames, 2 patches, 3 map levels.

    The bounds enclose the full sampled frustum so no ray sample degenerates
    to the zero-feature constant region.
    """
    config = SlamConfig(
        num_levels=3,
        voxel_sizes=(0.5, 0.3, 0.18),
        bounds_min=(-1.1, -1.1, -0.75),
        bounds_max=(1.1, 1.1, 1.15),
        near=0.15,
        far=1.6,
        coarse_samples=12,
        importance_samples=4,
        importance_rounds=2,
        pixel_budget=18,
        seed=seed,
    )
    bounds = SceneBounds(np.array(config.bounds_min), np.array(config.bounds_max))
    pyramid = init_map(bounds, config.voxel_sizes, config.channels, seed)
    # Boost cell magnitudes so occupancy varies visibly along rays.
    rng = np.random.default_rng(np.random.SeedSequence((seed, 303)))
    for grid in pyramid.levels:
        grid.interior()[...] = rng.normal(0.0, 0.6, size=grid.interior().shape)
    decoder = init_decoder(pyramid.feature_dim, config.hidden_width, seed)

    K = CameraIntrinsics(26.0, 26.0, 16.0, 12.0, 32, 24)
    frames = []
    for i in range(8):
        w = rng.normal(0.0, 0.004, size=3)
        v = rng.normal(0.0, 0.008, size=3)
        v[2] = -0.55 + 0.006 * i
        pose = Pose(so3_exp(w), np.array([v[0], v[1], v[2]]))
        frames.append(_Frame(i, _smooth_image(rng, 24, 32), K, pose))
    plan_rng = np.random.default_rng(np.random.SeedSequence((seed, 304)))
    plan = _tiny_plan(pyramid, decoder, frames, config, plan_rng)
    return pyramid, decoder, frames, config, plan


def _tiny_plan(pyramid, decoder, frames, config, rng) -> SamplingPlan:
    """Two patches placed with generous interior margin.

    Central differences evaluate the objective at perturbed parameters; the
    margin keeps every warped patch pixel away from image borders so no
    validity bit flips inside the difference interval.
    """
    K = frames[0].intrinsics
    margin = max(config.patch_sizes) // 2 + 4
    n_patches = max(1, config.pixel_budget // 9)
    frame_ids = rng.integers(0, len(frames), size=n_patches)
    cu = rng.integers(margin, K.width - margin, size=n_patches)
    cv = rng.integers(margin, K.height - margin, size=n_patches)
    centers = np.stack([cu, cv], axis=1)
    pixels = centers[:, None, :] + _PATCH_OFFSETS[None, :, :]
    flat_pix = pixels.reshape(-1, 2).astype(np.float64)
    flat_ids = np.repeat(frame_ids, 9)
    origins = np.empty((flat_pix.shape[0], 3))
    dirs = np.empty_like(origins)
    for fi in np.unique(flat_ids):
        sel = flat_ids == fi
        o, d, _ = renderer.make_rays(frames[fi].intrinsics, frames[fi].pose, flat_pix[sel])
        origins[sel] = o
        dirs[sel] = d
    t_vals = renderer.hierarchical_depths(
        pyramid, decoder, origins, dirs, config.near,
        config.far_value(pyramid.bounds.diagonal()), config, rng,
    )
    return SamplingPlan(frame_ids, pixels, t_vals)


def _certified_quotient(value, setter, base, h):
    """Central difference at h, certified against h/2.

    Returns (quotient, certified). setter(x) writes the parameter; value()
    re-evaluates the frozen-plan objective.
    """
    quotients = []
    for step in (h, 0.5 * h):
        setter(base + step)
        f_plus = value()
        setter(base - step)
        f_minus = value()
        setter(base)
        quotients.append((f_plus - f_minus) / (2 * step))
    q_h, q_h2 = quotients
    scale = max(abs(q_h), abs(q_h2))
    certified = abs(q_h - q_h2) <= max(CERT_REL * scale, CERT_ABS)
    return q_h2, certified


def finite_difference_check(seed: int = 0, n_map: int = 24, n_decoder: int = 20,
                            h_map: float = H_MAP, h_pose: float = H_POSE) -> CheckReport:
    """Compare analytic gradients to certified central finite differences.

    Checks n_map map cells, n_decoder decoder weights, and every pose-delta
    component of three frames (>= 50 parameters total), drawn among
    parameters whose gradient magnitude exceeds the per-group floor so the
    finite difference carries signal.
    """
    start = time.time()
    pyramid, decoder, frames, config, plan = build_tiny_instance(seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 305)))

    ev = evaluate_objective(pyramid, decoder, frames, plan, config,
                            want_grads=True, want_decoder_grads=True)
    grads = ev.grads

    def value():
        e = evaluate_objective(pyramid, decoder, frames, plan, config, want_grads=False)
        return e.losses.total

    def rel_err(analytic, numeric):
        denom = max(abs(analytic), abs(numeric))
        if denom < 1e-12:
            return 0.0
        return abs(analytic - numeric) / denom

    per_group = {"map": [], "decoder": [], "pose": []}
    n_rejected = 0

    def run_group(name, candidates, quota, make_setter, analytic_of, h):
        nonlocal n_rejected
        order = rng.permutation(len(candidates))
        taken = 0
        for j in order:
            if taken >= quota:
                break
            setter, base = make_setter(candidates[j])
            quotient, certified = _certified_quotient(value, setter, base, h)
            if not certified:
                n_rejected += 1
                continue
            per_group[name].append(rel_err(analytic_of(candidates[j]), quotient))
            taken += 1

    # Map cells.
    map_cand = [(li, idx) for li, g in enumerate(grads.grids)
                for idx in zip(*np.nonzero(np.abs(g) > MAP_FLOOR))]

    def map_setter(cand):
        li, idx = cand
        arr = pyramid.levels[li].values
        return (lambda x: arr.__setitem__(idx, x)), arr[idx]

    run_group("map", map_cand, n_map, map_setter,
              lambda c: grads.grids[c[0]][c[1]], h_map)

    # Decoder weights.
    dec_cand = [(name, idx) for name in DECODER_FIELDS
                for idx in zip(*np.nonzero(np.abs(grads.decoder[name]) > DECODER_FLOOR))]

    def dec_setter(cand):
        name, idx = cand
        arr = getattr(decoder, name)
        return (lambda x: arr.__setitem__(idx, x)), arr[idx]

    run_group("decoder", dec_cand, n_decoder, dec_setter,
              lambda c: grads.decoder[c[0]][c[1]], h_map)

    # Pose deltas: all sufficiently-coupled components of three frames.
    frame_ids = sorted(set(plan.frame_ids.tolist()))[:2] + [len(frames) - 1]
    pose_cand = [(fi, comp) for fi in frame_ids for comp in range(6)
                 if abs(grads.poses[fi, comp]) > POSE_FLOOR]

    def pose_setter(cand):
        fi, comp = cand
        base_pose = frames[fi].pose

        def setter(x):
            e = np.zeros(6)
            e[comp] = x
            frames[fi].pose = apply_delta(base_pose, PoseDelta.from_vector(e))

        return setter, 0.0

    run_group("pose", pose_cand, len(pose_cand), pose_setter,
              lambda c: grads.poses[c[0], c[1]], h_pose)

    all_errs = per_group["map"] + per_group["decoder"] + per_group["pose"]
    return CheckReport(
        max_rel_err=float(np.max(all_errs)),
        n_checked=len(all_errs),
        n_rejected=n_rejected,
        per_group={k: float(np.max(v)) if v else 0.0 for k, v in per_group.items()},
        runtime_s=time.time() - start,
    )
