"""Pure-numpy reference implementations of the hot sampling kernels.

Semantics are identical to the compiled versions in ``_native.pyx``; these
are the import-time fallback and the ground truth the compiled kernels are
tested against. All arrays are float64; ``base`` indices must satisfy
``0 <= base`` and ``base + 1 < dims`` on every axis (callers enforce this).
"""

import numpy as np

BACKEND = "python"


def _corner_weights(frac):
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    # Order: (dx, dy, dz) bits 000,001,010,011,100,101,110,111
    return [
        gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
        fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz,
    ]


_CORNERS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def tri_gather(values, base, frac):
    """Trilinear gather: values (X,Y,Z,C), base (N,3) int64, frac (N,3) -> (N,C)."""
    weights = _corner_weights(frac)
    out = np.zeros((base.shape[0], values.shape[3]), dtype=np.float64)
    for w, (dx, dy, dz) in zip(weights, _CORNERS):
        out += w[:, None] * values[base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
    return out


def tri_gather_posgrad(values, base, frac, gout):
    """VJP of tri_gather w.r.t. frac: returns (N,3)."""
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    v = {
        (dx, dy, dz): values[base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
        for dx, dy, dz in _CORNERS
    }
    dx_w = (
        (gy * gz)[:, None] * (v[1, 0, 0] - v[0, 0, 0])
        + (gy * fz)[:, None] * (v[1, 0, 1] - v[0, 0, 1])
        + (fy * gz)[:, None] * (v[1, 1, 0] - v[0, 1, 0])
        + (fy * fz)[:, None] * (v[1, 1, 1] - v[0, 1, 1])
    )
    dy_w = (
        (gx * gz)[:, None] * (v[0, 1, 0] - v[0, 0, 0])
        + (gx * fz)[:, None] * (v[0, 1, 1] - v[0, 0, 1])
        + (fx * gz)[:, None] * (v[1, 1, 0] - v[1, 0, 0])
        + (fx * fz)[:, None] * (v[1, 1, 1] - v[1, 0, 1])
    )
    dz_w = (
        (gx * gy)[:, None] * (v[0, 0, 1] - v[0, 0, 0])
        + (gx * fy)[:, None] * (v[0, 1, 1] - v[0, 1, 0])
        + (fx * gy)[:, None] * (v[1, 0, 1] - v[1, 0, 0])
        + (fx * fy)[:, None] * (v[1, 1, 1] - v[1, 1, 0])
    )
    gfrac = np.empty((base.shape[0], 3), dtype=np.float64)
    gfrac[:, 0] = np.sum(dx_w * gout, axis=1)
    gfrac[:, 1] = np.sum(dy_w * gout, axis=1)
    gfrac[:, 2] = np.sum(dz_w * gout, axis=1)
    return gfrac


def tri_scatter_add(grad_values, base, frac, gout):
    """Accumulate gout (N,C) into grad_values (X,Y,Z,C) with trilinear weights."""
    X, Y, Z, C = grad_values.shape
    flat = grad_values.reshape(-1, C)
    weights = _corner_weights(frac)
    for w, (dx, dy, dz) in zip(weights, _CORNERS):
        idx = ((base[:, 0] + dx) * Y + (base[:, 1] + dy)) * Z + (base[:, 2] + dz)
        np.add.at(flat, idx, w[:, None] * gout)


def bilinear_gather(img, x, y):
    """Bilinear image sample: img (H,W,C), x,y (N,) -> (N,C).

    x indexes columns in [0, W-1], y rows in [0, H-1]; the base cell is
    clamped so x == W-1 (resp. y == H-1) still reads valid memory.
    """
    H, W, _ = img.shape
    bx = np.minimum(np.floor(x).astype(np.int64), W - 2)
    by = np.minimum(np.floor(y).astype(np.int64), H - 2)
    bx = np.maximum(bx, 0)
    by = np.maximum(by, 0)
    fx = x - bx
    fy = y - by
    v00 = img[by, bx]
    v01 = img[by, bx + 1]
    v10 = img[by + 1, bx]
    v11 = img[by + 1, bx + 1]
    gx, gy = 1.0 - fx, 1.0 - fy
    return (
        (gy * gx)[:, None] * v00
        + (gy * fx)[:, None] * v01
        + (fy * gx)[:, None] * v10
        + (fy * fx)[:, None] * v11
    )


def bilinear_posgrad(img, x, y, gout):
    """VJP of bilinear_gather w.r.t. x and y: returns (gx, gy), each (N,)."""
    H, W, _ = img.shape
    bx = np.minimum(np.floor(x).astype(np.int64), W - 2)
    by = np.minimum(np.floor(y).astype(np.int64), H - 2)
    bx = np.maximum(bx, 0)
    by = np.maximum(by, 0)
    fx = x - bx
    fy = y - by
    v00 = img[by, bx]
    v01 = img[by, bx + 1]
    v10 = img[by + 1, bx]
    v11 = img[by + 1, bx + 1]
    dx = (1.0 - fy)[:, None] * (v01 - v00) + fy[:, None] * (v11 - v10)
    dy = (1.0 - fx)[:, None] * (v10 - v00) + fx[:, None] * (v11 - v01)
    return np.sum(dx * gout, axis=1), np.sum(dy * gout, axis=1)
