"""The learnable scene representation.

A stack of dense scalar feature grids at decreasing voxel sizes is sampled
trilinearly at a 3D point; the concatenated per-level features feed a small
MLP with occupancy and color heads. Grids are cell-centered with one padding
cell on every face; padding cells are pinned to zero and excluded from
optimization, so space outside the scene bounds decodes to a constant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ConfigError, ShapeError

GRID_STD = 0.001  # std of the normal initializer for grid cells


@dataclass
class SceneBounds:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64)
        self.max_corner = np.asarray(self.max_corner, dtype=np.float64)
        if not np.all(self.max_corner > self.min_corner):
            raise ConfigError("max_corner must exceed min_corner componentwise")

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=-1)


@dataclass
class FeatureGrid:
    """One dense level. Cell (i,j,k) is centered at min + (idx - 0.5)·voxel."""

    voxel_size: float
    dims: tuple
    values: np.ndarray  # (X, Y, Z, C) float64, C-contiguous

    @property
    def channels(self) -> int:
        return self.values.shape[3]

    def interior(self) -> np.ndarray:
        """View of the optimizable (non-padding) cells."""
        return self.values[1:-1, 1:-1, 1:-1, :]


def zero_padding(values: np.ndarray):
    """Zero the one-cell padding shell of (X,Y,Z,C) in place."""
    values[0, :, :, :] = 0.0
    values[-1, :, :, :] = 0.0
    values[:, 0, :, :] = 0.0
    values[:, -1, :, :] = 0.0
    values[:, :, 0, :] = 0.0
    values[:, :, -1, :] = 0.0


@dataclass
class FeaturePyramid:
    levels: list  # FeatureGrid, coarse -> fine
    bounds: SceneBounds

    def __post_init__(self):
        sizes = [g.voxel_size for g in self.levels]
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("level voxel sizes must be strictly decreasing")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    @property
    def feature_dim(self) -> int:
        return sum(g.channels for g in self.levels)

    def copy(self) -> "FeaturePyramid":
        return FeaturePyramid(
            [FeatureGrid(g.voxel_size, g.dims, g.values.copy()) for g in self.levels],
            SceneBounds(self.bounds.min_corner.copy(), self.bounds.max_corner.copy()),
        )


def grid_dims(bounds: SceneBounds, voxel_size: float) -> tuple:
    """ceil(extent/voxel) interior cells plus one padding cell per face."""
    return tuple(int(np.ceil(e / voxel_size)) + 2 for e in bounds.extent)


def init_map(bounds: SceneBounds, voxel_sizes, channels: int, seed: int) -> FeaturePyramid:
    """Fresh pyramid with N(0, 0.001) interior cells, zero padding."""
    if any(a <= b for a, b in zip(voxel_sizes, list(voxel_sizes)[1:])):
        raise ConfigError("voxel_sizes must be strictly decreasing")
    if channels < 1:
        raise ConfigError("channels must be >= 1")
    levels = []
    for li, voxel in enumerate(voxel_sizes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 101, li)))
        dims = grid_dims(bounds, voxel)
        values = rng.normal(0.0, GRID_STD, size=dims + (channels,)).astype(np.float64)
        zero_padding(values)
        levels.append(FeatureGrid(float(voxel), dims, np.ascontiguousarray(values)))
    return FeaturePyramid(levels, bounds)


def _grid_coords(grid: FeatureGrid, bounds: SceneBounds, pts: np.ndarray):
    """Continuous cell-index coordinates, base indices, and fractions."""
    coord = (pts - bounds.min_corner) * (1.0 / grid.voxel_size)
    coord += 0.5
    # In-bounds coords are >= 0.5, so integer truncation equals floor; the
    # clamp only guards the exact upper boundary where coord is integral.
    base = coord.astype(np.int64)
    np.minimum(base, np.asarray(grid.dims, dtype=np.int64) - 2, out=base)
    frac = coord
    frac -= base
    return base, np.ascontiguousarray(frac)


@dataclass
class FeatureCtx:
    """Saved state for the backward pass of a feature sampling call."""

    n_points: int
    inside_idx: np.ndarray  # indices of in-bounds points
    bases: list  # per level (Ni,3) int64
    fracs: list  # per level (Ni,3) float64
    voxel_sizes: list


def features_forward(pyramid: FeaturePyramid, pts: np.ndarray):
    """Sample all levels at (N,3) points -> ((N, L*C) features, ctx).

    Out-of-bounds points yield zero features (and zero gradients).
    """
    pts = np.asarray(pts, dtype=np.float64)
    n = pts.shape[0]
    cdim = pyramid.channels
    feats = np.zeros((n, pyramid.feature_dim), dtype=np.float64)
    inside = pyramid.bounds.contains(pts)
    idx = np.nonzero(inside)[0]
    p_in = np.ascontiguousarray(pts[idx])
    bases, fracs = [], []
    col = 0
    for grid in pyramid.levels:
        base, frac = _grid_coords(grid, pyramid.bounds, p_in)
        feats[idx, col:col + cdim] = kernels.tri_gather(grid.values, base, frac)
        bases.append(base)
        fracs.append(frac)
        col += cdim
    ctx = FeatureCtx(n, idx, bases, fracs, [g.voxel_size for g in pyramid.levels])
    return feats, ctx


def features_backward(pyramid: FeaturePyramid, ctx: FeatureCtx, g_feats: np.ndarray,
                      grid_grads=None, want_pos_grad: bool = True):
    """Backward of features_forward.

    Accumulates cell gradients into grid_grads (list of arrays shaped like
    each level, or None to skip) and returns the (N,3) gradient w.r.t. the
    query points (zeros when want_pos_grad is False).
    """
    cdim = pyramid.channels
    g_pts = np.zeros((ctx.n_points, 3), dtype=np.float64)
    col = 0
    for li, grid in enumerate(pyramid.levels):
        g_out = np.ascontiguousarray(g_feats[ctx.inside_idx, col:col + cdim])
        if grid_grads is not None:
            kernels.tri_scatter_add(grid_grads[li], ctx.bases[li], ctx.fracs[li], g_out)
        if want_pos_grad:
            gfrac = kernels.tri_gather_posgrad(grid.values, ctx.bases[li], ctx.fracs[li], g_out)
            g_pts[ctx.inside_idx] += gfrac / ctx.voxel_sizes[li]
        col += cdim
    return g_pts


def sample_feature(pyramid: FeaturePyramid, p: np.ndarray) -> np.ndarray:
    """Concatenated multi-level feature at point(s) p: (...,3) -> (...,L*C)."""
    p = np.asarray(p, dtype=np.float64)
    flat = p.reshape(-1, 3)
    feats, _ = features_forward(pyramid, flat)
    return feats.reshape(p.shape[:-1] + (pyramid.feature_dim,))


# ---------------------------------------------------------------------------
# MLP decoder
# ---------------------------------------------------------------------------

DECODER_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3", "w_occ", "b_occ", "w_col", "b_col")


@dataclass
class MlpDecoder:
    """Three ReLU hidden layers; sigmoid occupancy and color heads."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w_occ: np.ndarray
    b_occ: np.ndarray
    w_col: np.ndarray
    b_col: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in DECODER_FIELDS}

    def copy(self) -> "MlpDecoder":
        return MlpDecoder(**{k: v.copy() for k, v in self.arrays().items()})


OCC_BIAS_INIT = -2.5  # initial occupancy ~0.08: rays stay translucent deep
# into the scene at the start, so every depth receives gradient instead of
# all ray weight collapsing onto the first few samples.


def init_decoder(input_dim: int, hidden_width: int, seed: int,
                 occ_bias: float = OCC_BIAS_INIT) -> MlpDecoder:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 202)))

    def dense(fan_in, fan_out, gain):
        return rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out))

    def bias(n):
        # Small random biases keep zero-feature inputs (out-of-bounds
        # queries) away from the exact ReLU kink.
        return rng.normal(0.0, 0.01, size=n)

    h = hidden_width
    return MlpDecoder(
        w1=dense(input_dim, h, np.sqrt(2.0)), b1=bias(h),
        w2=dense(h, h, np.sqrt(2.0)), b2=bias(h),
        w3=dense(h, h, np.sqrt(2.0)), b3=bias(h),
        w_occ=dense(h, 1, 1.0), b_occ=bias(1) + occ_bias,
        w_col=dense(h, 3, 1.0), b_col=bias(3),
    )


def _sigmoid(x):
    return expit(x)


@dataclass
class DecoderCtx:
    feats: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    occ: np.ndarray
    col: np.ndarray


def _dense_relu(x, w, b):
    h = x @ w
    h += b
    np.maximum(h, 0.0, out=h)
    return h


def decoder_forward(decoder: MlpDecoder, feats: np.ndarray, with_color: bool = True):
    """(N,D) features -> occupancy (N,), color (N,3), ctx for backward."""
    if feats.shape[1] != decoder.input_dim:
        raise ShapeError(
            f"feature width {feats.shape[1]} != decoder input {decoder.input_dim}"
        )
    h1 = _dense_relu(feats, decoder.w1, decoder.b1)
    h2 = _dense_relu(h1, decoder.w2, decoder.b2)
    h3 = _dense_relu(h2, decoder.w3, decoder.b3)
    s_occ = h3 @ decoder.w_occ
    s_occ += decoder.b_occ
    occ = expit(s_occ[:, 0])
    col = None
    if with_color:
        s_col = h3 @ decoder.w_col
        s_col += decoder.b_col
        col = expit(s_col)
    return occ, col, DecoderCtx(feats, h1, h2, h3, occ, col)


def decoder_backward(decoder: MlpDecoder, ctx: DecoderCtx, g_occ, g_col,
                     want_weight_grads: bool = True):
    """Backward of decoder_forward; returns (weight_grads | None, g_feats)."""
    ds_occ = (g_occ * ctx.occ * (1.0 - ctx.occ))[:, None]  # (N,1)
    g_h3 = ds_occ @ decoder.w_occ.T
    if g_col is not None:
        ds_col = g_col * ctx.col * (1.0 - ctx.col)  # (N,3)
        g_h3 += ds_col @ decoder.w_col.T
    else:
        ds_col = None

    g_pre3 = g_h3
    g_pre3 *= ctx.h3 > 0
    g_pre2 = g_pre3 @ decoder.w3.T
    g_pre2 *= ctx.h2 > 0
    g_pre1 = g_pre2 @ decoder.w2.T
    g_pre1 *= ctx.h1 > 0
    g_feats = g_pre1 @ decoder.w1.T

    grads = None
    if want_weight_grads:
        grads = {
            "w1": ctx.feats.T @ g_pre1, "b1": g_pre1.sum(axis=0),
            "w2": ctx.h1.T @ g_pre2, "b2": g_pre2.sum(axis=0),
            "w3": ctx.h2.T @ g_pre3, "b3": g_pre3.sum(axis=0),
            "w_occ": ctx.h3.T @ ds_occ, "b_occ": ds_occ.sum(axis=0),
            "w_col": (ctx.h3.T @ ds_col if ds_col is not None
                      else np.zeros_like(decoder.w_col)),
            "b_col": (ds_col.sum(axis=0) if ds_col is not None
                      else np.zeros_like(decoder.b_col)),
        }
    return grads, g_feats


def decode(decoder: MlpDecoder, feats: np.ndarray):
    """Occupancy in (0,1) and color in (0,1)³ for (...,D) features."""
    feats = np.asarray(feats, dtype=np.float64)
    flat = feats.reshape(-1, feats.shape[-1])
    occ, col, _ = decoder_forward(decoder, flat)
    return occ.reshape(feats.shape[:-1]), col.reshape(feats.shape[:-1] + (3,))


def query_point(pyramid: FeaturePyramid, decoder: MlpDecoder, p: np.ndarray):
    """Occupancy/color of the scene at world point(s) p."""
    return decode(decoder, sample_feature(pyramid, p))


# ---------------------------------------------------------------------------
# Checkpoint file (binary little-endian; layout documented in README)
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"NIMMAP01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, pyramid: FeaturePyramid, decoder: MlpDecoder):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, pyramid.num_levels,
                             pyramid.channels, decoder.hidden_width))
        fh.write(struct.pack("<6d", *pyramid.bounds.min_corner, *pyramid.bounds.max_corner))
        for grid in pyramid.levels:
            fh.write(struct.pack("<d3I", grid.voxel_size, *grid.dims))
            fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", decoder.input_dim))
        for name in DECODER_FIELDS:
            fh.write(np.ascontiguousarray(getattr(decoder, name), dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a map checkpoint: bad magic {magic!r}")
        version, n_levels, channels, hidden = struct.unpack("<IIII", fh.read(16))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        b = struct.unpack("<6d", fh.read(48))
        bounds = SceneBounds(np.array(b[:3]), np.array(b[3:]))
        levels = []
        for _ in range(n_levels):
            voxel, dx, dy, dz = struct.unpack("<d3I", fh.read(20))
            count = dx * dy * dz * channels
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
            values = raw.astype(np.float64).reshape(dx, dy, dz, channels)
            levels.append(FeatureGrid(voxel, (dx, dy, dz), np.ascontiguousarray(values)))
        (input_dim,) = struct.unpack("<I", fh.read(4))
        shapes = {
            "w1": (input_dim, hidden), "b1": (hidden,),
            "w2": (hidden, hidden), "b2": (hidden,),
            "w3": (hidden, hidden), "b3": (hidden,),
            "w_occ": (hidden, 1), "b_occ": (1,),
            "w_col": (hidden, 3), "b_col": (3,),
        }
        arrays = {}
        for name in DECODER_FIELDS:
            count = int(np.prod(shapes[name]))
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
            arrays[name] = raw.astype(np.float64).reshape(shapes[name])
    return FeaturePyramid(levels, bounds), MlpDecoder(**arrays)
