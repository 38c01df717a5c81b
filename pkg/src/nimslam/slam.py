"""System orchestration: initialization, sliding-window tracking, keyframe
management, and final map refinement.

The engine keeps a window of 21 active frames: 11 local frames around the
current index plus 10 keyframes drawn from the global registry by view
overlap. Map and local poses are optimized jointly; keyframe poses freeze at
admission and the decoder freezes after initialization. A frame's reported
trajectory pose is its value when it leaves the local window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objectives, optimizer, renderer
from .config import SlamConfig
from .errors import InitializationFailure, InsufficientDataError, TrackingFailure, UndefinedFlowError
from .geometry import CameraIntrinsics, Pose, flow_score, in_image, warp_points
from .implicit_map import SceneBounds, init_decoder, init_map
from .optimizer import AdamState, ParamSet


@dataclass
class Frame:
    index: int
    image: np.ndarray  # (H,W,3) float64 in [0,1]
    intrinsics: CameraIntrinsics
    pose: Pose
    is_keyframe: bool = False
    timestamp: float = 0.0

    def __post_init__(self):
        h, w, _ = self.image.shape
        if w != self.intrinsics.width or h != self.intrinsics.height:
            raise ValueError(
                f"image {w}x{h} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )


@dataclass
class WindowState:
    local: list  # 11 consecutive frames around the current index
    keyframes: list  # up to 10 global keyframes (disjoint from local)

    def frames(self):
        return self.local + self.keyframes

    @property
    def size(self) -> int:
        return len(self.local) + len(self.keyframes)


@dataclass
class WindowLog:
    window_index: int
    loss_total: float
    loss_render: float
    loss_warp: float
    loss_smooth: float
    f_flow: float


@dataclass
class SlamResult:
    trajectory: list  # (timestamp, Pose) per frame, in order
    keyframe_indices: list
    logs: list  # WindowLog
    pyramid: object
    decoder: object
    failed_at: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed_at is None


def write_log_csv(path, logs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("window_index,loss_total,loss_render,loss_warp,loss_smooth,f_flow\n")
        for row in logs:
            fh.write(
                f"{row.window_index},{row.loss_total:.9g},{row.loss_render:.9g},"
                f"{row.loss_warp:.9g},{row.loss_smooth:.9g},{row.f_flow:.9g}\n"
            )


class SlamEngine:
    """Single-thread joint tracking and mapping."""

    def __init__(self, config: SlamConfig):
        self.config = config
        self.bounds = SceneBounds(np.array(config.bounds_min), np.array(config.bounds_max))
        self.pyramid = None
        self.decoder = None
        self.decoder_frozen = False
        self.frames = {}  # index -> Frame
        self.registry = []  # keyframe indices, monotone
        self.reported = {}  # index -> Pose (value when the frame left the window)
        self.logs = []
        self._iteration = 0
        self._high_flow_streak = 0

    # -- rng streams -----------------------------------------------------
    def _rng(self, domain: int, counter: int = 0) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence((self.config.seed, domain, counter))
        )

    # -- shared optimization loop ----------------------------------------
    def _optimize(self, frames, trainable_idx, n_iters, train_map=True,
                  train_decoder=False, failure_frame=None):
        """Run n_iters Adam steps of the joint objective over `frames`.

        trainable_idx: positions (into `frames`) whose poses move. Returns
        the last evaluation's losses.
        """
        trainable = np.zeros(len(frames), dtype=bool)
        trainable[list(trainable_idx)] = True
        params = ParamSet(self.pyramid, self.decoder, frames,
                          train_map=train_map, train_decoder=train_decoder,
                          trainable_frames=trainable)
        adam = AdamState(self.config.adam_beta1, self.config.adam_beta2,
                         self.config.adam_eps)
        losses = None
        for _ in range(n_iters):
            rng = self._rng(2, self._iteration)
            self._iteration += 1
            plan = objectives.build_iteration_plan(
                self.pyramid, self.decoder, frames, self.config, rng)
            ev = objectives.evaluate_objective(
                self.pyramid, self.decoder, frames, plan, self.config,
                want_grads=True, want_decoder_grads=train_decoder)
            if not np.isfinite(ev.losses.total):
                if failure_frame is None:
                    raise InitializationFailure(
                        f"non-finite loss {ev.losses.total} during initialization")
                raise TrackingFailure(failure_frame)
            grads = optimizer.backward(ev, params)
            optimizer.adam_step(params, grads, adam, self.config)
            losses = ev.losses
        return losses

    # -- probes -----------------------------------------------------------
    def _probe(self, frame: Frame, n_pixels: int, counter: int):
        """Random probe pixels on `frame` with freshly rendered z-depths."""
        rng = self._rng(4, counter)
        k = frame.intrinsics
        pix = np.stack([
            rng.integers(0, k.width, size=n_pixels),
            rng.integers(0, k.height, size=n_pixels),
        ], axis=1).astype(np.float64)
        depths, _, _ = renderer.render_rays(
            self.pyramid, self.decoder, k, frame.pose, pix, self.config, rng)
        ok = depths > 1e-6
        return pix[ok], depths[ok]

    def _overlap_ratio(self, pixels, depths, src: Frame, dst: Frame) -> float:
        if pixels.shape[0] == 0:
            return 0.0
        warped, _, front = warp_points(pixels, depths, src.pose, dst.pose,
                                       src.intrinsics, dst.intrinsics)
        valid = front & in_image(warped, dst.intrinsics)
        return float(valid.mean())

    # -- spec operations ---------------------------------------------------
    def initialize(self, frames):
        """Joint map/decoder/pose optimization over the first init frames.

        Frame 0 stays at the identity and becomes the first keyframe; the
        decoder freezes afterwards.
        """
        cfg = self.config
        if len(frames) < cfg.init_frames:
            raise InsufficientDataError(
                f"initialization needs {cfg.init_frames} frames, got {len(frames)}")
        frames = frames[:cfg.init_frames]
        self.pyramid = init_map(self.bounds, cfg.voxel_sizes, cfg.channels, cfg.seed)
        self.decoder = init_decoder(self.pyramid.feature_dim, cfg.hidden_width, cfg.seed)
        for f in frames:
            self.frames[f.index] = f
        self._optimize(frames, trainable_idx=range(1, len(frames)),
                       n_iters=cfg.iters_init, train_map=True, train_decoder=True)
        frames[0].is_keyframe = True
        self.registry = [frames[0].index]
        self.decoder_frozen = True

    def select_global_keyframes(self, current: Frame, exclude=(), counter: int = 0):
        """Sample up to `global_keyframes` registry frames by view overlap.

        Overlap = fraction of probe pixels of `current` that land inside a
        keyframe. Strictly-above-threshold keyframes are sampled uniformly;
        a shortfall is padded with the most-overlapping remainder.
        """
        cfg = self.config
        candidates = [i for i in self.registry if i not in exclude]
        if not candidates:
            return []
        pixels, depths = self._probe(current, cfg.overlap_probe_pixels, counter)
        ratios = np.array([
            self._overlap_ratio(pixels, depths, current, self.frames[i])
            for i in candidates
        ])
        order = np.argsort(-ratios, kind="stable")
        qualifying = [j for j in order if ratios[j] > cfg.overlap_threshold]
        rest = [j for j in order if ratios[j] <= cfg.overlap_threshold]
        rng = self._rng(5, counter)
        n = cfg.global_keyframes
        if len(qualifying) > n:
            chosen = list(rng.choice(len(qualifying), size=n, replace=False))
            picked = [qualifying[int(c)] for c in chosen]
        else:
            picked = qualifying + rest[: n - len(qualifying)]
        return [self.frames[candidates[int(j)]] for j in picked]

    def window_optimize(self, window: WindowState, failure_frame: int):
        """N_w Adam iterations over the active set; keyframe poses frozen."""
        frames = window.frames()
        trainable = [i for i, f in enumerate(frames)
                     if f in window.local and not f.is_keyframe]
        return self._optimize(frames, trainable, self.config.iters_window,
                              train_map=True, train_decoder=False,
                              failure_frame=failure_frame)

    def advance_window(self, local, next_frame: Frame):
        """Drop the oldest local frame, extrapolate the newcomer's pose with
        the constant-velocity model, and append it."""
        last = local[-1].pose
        prev = local[-2].pose if len(local) > 1 else last
        velocity = prev.inverse().compose(last)
        next_frame.pose = last.compose(velocity)
        exiting = local[0]
        self.reported[exiting.index] = exiting.pose.copy()
        self.frames[next_frame.index] = next_frame
        return local[1:] + [next_frame]

    def maybe_add_keyframe(self, current: Frame, last_keyframe: Frame, counter: int = 0):
        """Admit `current` as a keyframe when the induced flow against the
        last keyframe exceeds the threshold (undefined flow admits too)."""
        cfg = self.config
        rng = self._rng(6, counter)
        k = current.intrinsics
        pix = np.stack([
            rng.integers(0, k.width, size=cfg.flow_samples),
            rng.integers(0, k.height, size=cfg.flow_samples),
        ], axis=1).astype(np.float64)
        depths, _, _ = renderer.render_rays(
            self.pyramid, self.decoder, k, current.pose, pix, self.config, rng)
        ok = depths > 1e-6
        try:
            if not np.any(ok):
                raise UndefinedFlowError("no probe depths")
            f = flow_score(pix[ok], depths[ok], current, last_keyframe)
        except UndefinedFlowError:
            self._admit(current)
            return True, float("inf")
        t = cfg.keyframe_flow_threshold
        add = (f > t * t) if cfg.flow_metric == "mean_square" else (np.sqrt(f) > t)
        if add:
            self._admit(current)
        return add, f

    def _admit(self, frame: Frame):
        frame.is_keyframe = True
        self.registry.append(frame.index)

    def post_optimize(self, n_iters=None):
        """Map-only refinement over keyframe subsets with poses fixed.

        Each iteration draws a random keyframe plus up to
        `post_opt_keyframes` others with overlap at least the threshold
        (inclusive, unlike tracking selection). Poses are fixed, so the
        pairwise overlap table is computed once up front.
        """
        cfg = self.config
        n_iters = cfg.post_opt_iterations if n_iters is None else n_iters
        kf = [self.frames[i] for i in self.registry]
        if len(kf) == 0:
            return
        if len(kf) == 1:
            overlap = np.ones((1, 1))
        else:
            overlap = np.eye(len(kf))
            probes = [self._probe(f, cfg.overlap_probe_pixels, 90000 + j)
                      for j, f in enumerate(kf)]
            for a in range(len(kf)):
                pix, dep = probes[a]
                for b in range(len(kf)):
                    if a != b:
                        overlap[a, b] = self._overlap_ratio(pix, dep, kf[a], kf[b])
        for it in range(n_iters):
            rng = self._rng(7, it)
            a = int(rng.integers(0, len(kf)))
            others = [b for b in range(len(kf)) if b != a]
            qual = [b for b in others if overlap[a, b] >= cfg.overlap_threshold]
            rest = sorted((b for b in others if overlap[a, b] < cfg.overlap_threshold),
                          key=lambda b: -overlap[a, b])
            n = cfg.post_opt_keyframes
            if len(qual) > n:
                picked = [qual[int(c)] for c in rng.choice(len(qual), size=n, replace=False)]
            else:
                picked = qual + rest[: n - len(qual)]
            frames = [kf[a]] + [kf[b] for b in picked]
            self._optimize(frames, trainable_idx=(), n_iters=1,
                           train_map=True, train_decoder=False,
                           failure_frame=kf[a].index)

    def run(self, sequence) -> SlamResult:
        """Full pipeline: initialize, track the sequence, post-optimize."""
        cfg = self.config
        n = len(sequence)
        if n < cfg.init_frames:
            raise InsufficientDataError(
                f"sequence has {n} frames; initialization needs {cfg.init_frames}")

        def make_frame(i):
            return Frame(
                index=i,
                image=np.ascontiguousarray(sequence.image(i), dtype=np.float64),
                intrinsics=sequence.intrinsics,
                pose=Pose.identity(),
                timestamp=sequence.frames[i].timestamp,
            )

        init_frames = [make_frame(i) for i in range(cfg.init_frames)]
        self.initialize(init_frames)

        half = cfg.local_span // 2
        k = cfg.init_frames - 1 - half  # local window ends at the newest frame
        local = [self.frames[i] for i in range(k - half, k + half + 1)]
        failed_at = None
        window_index = 0
        try:
            while True:
                exclude = {f.index for f in local}
                keyframes = self.select_global_keyframes(
                    self.frames[k], exclude=exclude, counter=window_index)
                window = WindowState(local, keyframes)
                losses = self.window_optimize(window, failure_frame=k)
                added, f_flow = self.maybe_add_keyframe(
                    self.frames[k], self.frames[self.registry[-1]], counter=window_index)
                self.logs.append(WindowLog(window_index, losses.total, losses.render,
                                           losses.warping, losses.smooth, f_flow))
                self._check_flow_health(f_flow, k)
                window_index += 1
                if k + half + 1 < n:
                    local = self.advance_window(local, make_frame(k + half + 1))
                    k += 1
                else:
                    break
        except TrackingFailure as failure:
            failed_at = failure.frame_index

        for i, frame in self.frames.items():
            if i not in self.reported:
                self.reported[i] = frame.pose.copy()
        if failed_at is None:
            self.post_optimize()

        trajectory = [
            (self.frames[i].timestamp, self.reported[i])
            for i in sorted(self.reported)
        ]
        return SlamResult(trajectory, list(self.registry), self.logs,
                          self.pyramid, self.decoder, failed_at)

    def _check_flow_health(self, f_flow: float, frame_index: int):
        """Flag tracking loss after sustained implausible flow magnitudes."""
        t = self.config.keyframe_flow_threshold
        limit = (10.0 * t) ** 2 if self.config.flow_metric == "mean_square" else 10.0 * t
        metric = f_flow if self.config.flow_metric == "mean_square" else np.sqrt(f_flow)
        if metric > limit:
            self._high_flow_streak += 1
        else:
            self._high_flow_streak = 0
        if self._high_flow_streak >= 5:
            raise TrackingFailure(frame_index, "sustained implausible flow")

    def render_depth_map(self, frame: Frame, stride: int = 4, counter: int = 0):
        """Rendered z-depth on a strided pixel grid: (rows, cols, depths)."""
        k = frame.intrinsics
        us = np.arange(0, k.width, stride)
        vs = np.arange(0, k.height, stride)
        uu, vv = np.meshgrid(us, vs)
        pix = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64)
        rng = self._rng(8, counter)
        depths, _, _ = renderer.render_rays(
            self.pyramid, self.decoder, k, frame.pose, pix, self.config, rng)
        return vs, us, depths.reshape(len(vs), len(us))


def run(sequence, config: SlamConfig) -> SlamResult:
    """Convenience wrapper: build an engine and process the sequence."""
    return SlamEngine(config).run(sequence)
