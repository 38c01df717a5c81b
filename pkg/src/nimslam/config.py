"""System configuration: every tunable constant in one validated record.

Configs round-trip through a flat ``key = value`` text format (SI units,
``#`` comments). Unknown keys are rejected so that experiment files stay
exactly reproducible.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

# Default voxel edge lengths of the feature pyramid, coarse to fine (meters).
DEFAULT_VOXEL_SIZES = (0.64, 0.48, 0.32, 0.24, 0.16, 0.08)


@dataclass
class SlamConfig:
    # Feature pyramid / decoder
    num_levels: int = 6
    channels: int = 1
    voxel_sizes: tuple = DEFAULT_VOXEL_SIZES
    hidden_width: int = 32
    bounds_min: tuple = (-3.0, -3.0, -3.0)
    bounds_max: tuple = (3.0, 3.0, 3.0)

    # Rendering
    near: float = 0.1
    far: float = 0.0  # 0 means "diagonal of the scene bounds"
    coarse_samples: int = 32
    importance_samples: int = 16
    importance_rounds: int = 4

    # Losses
    alpha_warping: float = 0.5
    alpha_render: float = 0.1
    alpha_smooth: float = 0.01
    patch_sizes: tuple = (1, 5, 11)
    pixel_budget: int = 3000  # |M|, rendered pixels per iteration
    visibility_min_valid: int = 5  # mask requires strictly more valid projections

    # Optimization
    iters_init: int = 1500  # N_i
    iters_window: int = 100  # N_w
    lr_map: float = 0.001
    lr_pose: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping

    # System / keyframes
    init_frames: int = 13
    window_size: int = 21
    local_span: int = 11  # frames k-5 .. k+5
    global_keyframes: int = 10
    keyframe_flow_threshold: float = 10.0  # T_kf, pixels
    flow_metric: str = "mean_square"  # or "rms"
    flow_samples: int = 100
    overlap_threshold: float = 0.70
    overlap_probe_pixels: int = 100
    post_opt_iterations: int = 1000
    post_opt_keyframes: int = 20

    # Mesh extraction
    mesh_resolution: int = 256  # voxels along the longest bounds axis
    mesh_level: float = 0.5

    seed: int = 0

    def __post_init__(self):
        self.voxel_sizes = tuple(float(v) for v in self.voxel_sizes)
        self.patch_sizes = tuple(int(s) for s in self.patch_sizes)
        self.bounds_min = tuple(float(v) for v in self.bounds_min)
        self.bounds_max = tuple(float(v) for v in self.bounds_max)
        self.validate()

    def validate(self):
        if self.num_levels != len(self.voxel_sizes):
            raise ConfigError(
                f"num_levels={self.num_levels} but {len(self.voxel_sizes)} voxel sizes given"
            )
        if any(v <= 0 for v in self.voxel_sizes):
            raise ConfigError("voxel sizes must be positive")
        if any(a <= b for a, b in zip(self.voxel_sizes, self.voxel_sizes[1:])):
            raise ConfigError("voxel sizes must be strictly decreasing (coarse to fine)")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if list(self.patch_sizes) != sorted(self.patch_sizes) or any(
            s < 1 or s % 2 == 0 for s in self.patch_sizes
        ):
            raise ConfigError("patch_sizes must be ascending odd integers")
        if not all(hi > lo for lo, hi in zip(self.bounds_min, self.bounds_max)):
            raise ConfigError("bounds_max must exceed bounds_min componentwise")
        if self.near <= 0:
            raise ConfigError("near must be positive")
        if self.far != 0.0 and self.far <= self.near:
            raise ConfigError("far must exceed near (or be 0 for auto)")
        positive = [
            "hidden_width", "coarse_samples", "importance_samples", "importance_rounds",
            "pixel_budget", "iters_init", "iters_window", "lr_map", "lr_pose",
            "init_frames", "window_size", "local_span", "global_keyframes",
            "keyframe_flow_threshold", "flow_samples", "overlap_probe_pixels",
            "post_opt_iterations", "post_opt_keyframes", "mesh_resolution",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.overlap_threshold <= 1.0):
            raise ConfigError("overlap_threshold must be in (0, 1]")
        if self.flow_metric not in ("mean_square", "rms"):
            raise ConfigError(f"unknown flow_metric '{self.flow_metric}'")
        if self.local_span % 2 != 1:
            raise ConfigError("local_span must be odd (centered window)")
        if self.window_size != self.local_span + self.global_keyframes:
            raise ConfigError("window_size must equal local_span + global_keyframes")
        if self.alpha_warping < 0 or self.alpha_render < 0 or self.alpha_smooth < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.visibility_min_valid < 0:
            raise ConfigError("visibility_min_valid must be >= 0")

    def far_value(self, bounds_diagonal: float) -> float:
        return self.far if self.far > 0 else bounds_diagonal

    def replace(self, **kwargs) -> "SlamConfig":
        return dataclasses.replace(self, **kwargs)


_TUPLE_FIELDS = {"voxel_sizes", "patch_sizes", "bounds_min", "bounds_max"}
_INT_TUPLE_FIELDS = {"patch_sizes"}


def _parse_value(name: str, text: str, kind):
    text = text.strip()
    try:
        if name in _TUPLE_FIELDS:
            parts = [p for p in text.replace(",", " ").split() if p]
            cast = int if name in _INT_TUPLE_FIELDS else float
            return tuple(cast(p) for p in parts)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
    except ValueError as exc:
        raise ConfigError(f"bad value for '{name}': {text!r}") from exc
    raise ConfigError(f"unsupported config field type for '{name}'")


def parse_config(text: str, base: SlamConfig | None = None) -> SlamConfig:
    """Parse the flat ``key = value`` format into a validated config."""
    fields = {f.name: f.type for f in dataclasses.fields(SlamConfig)}
    kinds = {f.name: type(getattr(SlamConfig(), f.name)) for f in dataclasses.fields(SlamConfig)}
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        values[key] = _parse_value(key, value, kinds[key])
    return SlamConfig(**values)


def load_config(path, base: SlamConfig | None = None) -> SlamConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)


def format_config(config: SlamConfig) -> str:
    lines = []
    for f in dataclasses.fields(SlamConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(config: SlamConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(config))
