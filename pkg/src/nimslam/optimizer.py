"""Adam updates over the map, decoder, and window pose deltas.

Parameters are addressed as named leaves; frozen groups report exactly zero
gradients and are never touched. Pose parameters are local 6-vector deltas
evaluated at the identity of the current pose: each step composes the
freshly updated delta onto the pose and implicitly resets it to zero
(chained local charts), while the Adam moments persist on the slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GradientError
from .geometry import PoseDelta, apply_delta
from .implicit_map import DECODER_FIELDS
from .objectives import Evaluation, ObjectiveGrads


@dataclass
class ParamSet:
    """References to all optimizable state plus per-group trainable flags."""

    pyramid: object
    decoder: object
    frames: list  # window frames whose poses row-align with gradients
    train_map: bool = True
    train_decoder: bool = False
    trainable_frames: np.ndarray = None  # bool (F,)

    def __post_init__(self):
        if self.trainable_frames is None:
            self.trainable_frames = np.zeros(len(self.frames), dtype=bool)
        self.trainable_frames = np.asarray(self.trainable_frames, dtype=bool)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def slot(self, key, shape):
        if key not in self.m:
            self.m[key] = np.zeros(shape)
            self.v[key] = np.zeros(shape)
        return self.m[key], self.v[key]


def backward(evaluation: Evaluation, params: ParamSet) -> ObjectiveGrads:
    """Gradients of the evaluated objective, with freeze contracts applied.

    Frozen groups come back as exact zeros; non-finite gradients raise
    GradientError naming the offending group.
    """
    grads = evaluation.grads
    if grads is None:
        raise ValueError("evaluation was run without gradients")

    if params.train_map:
        grids = grads.grids
        for li, g in enumerate(grids):
            if not np.all(np.isfinite(g)):
                raise GradientError(f"map level {li}")
    else:
        grids = [np.zeros_like(g.values) for g in params.pyramid.levels]

    if params.train_decoder:
        dec = grads.decoder
        if dec is None:
            raise ValueError("decoder gradients were not requested in the forward pass")
        for name, g in dec.items():
            if not np.all(np.isfinite(g)):
                raise GradientError(f"decoder.{name}")
    else:
        dec = {name: np.zeros_like(getattr(params.decoder, name))
               for name in DECODER_FIELDS}

    poses = grads.poses.copy()
    poses[~params.trainable_frames] = 0.0
    if not np.all(np.isfinite(poses)):
        bad = np.nonzero(~np.isfinite(poses).all(axis=1))[0]
        raise GradientError(f"pose[{bad[0]}]")

    return ObjectiveGrads(grids, dec, poses)


def _clip_by_global_norm(leaves, max_norm: float):
    total = 0.0
    for g in leaves:
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in leaves:
            g *= scale


def adam_step(params: ParamSet, grads: ObjectiveGrads, state: AdamState, config) -> None:
    """One bias-corrected Adam step with per-group learning rates.

    Map and decoder leaves are updated in place; pose deltas are composed
    onto the frame poses.
    """
    if config.grad_clip > 0:
        leaves = list(grads.grids) + list(grads.decoder.values()) + [grads.poses]
        _clip_by_global_norm(leaves, config.grad_clip)

    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    def update(key, param, grad, lr):
        m, v = state.slot(key, param.shape)
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    if params.train_map:
        for li, grid in enumerate(params.pyramid.levels):
            update(("map", li), grid.values, grads.grids[li], config.lr_map)
    if params.train_decoder:
        for name in DECODER_FIELDS:
            update(("decoder", name), getattr(params.decoder, name),
                   grads.decoder[name], config.lr_map)

    for fi in np.nonzero(params.trainable_frames)[0]:
        delta = np.zeros(6)
        update(("pose", int(fi)), delta, grads.poses[fi], config.lr_pose)
        frame = params.frames[fi]
        frame.pose = apply_delta(frame.pose, PoseDelta.from_vector(delta))
