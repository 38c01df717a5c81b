"""Backend agreement and correctness of the sampling kernels."""

import numpy as np
import pytest

from nimslam import kernels
from nimslam.kernels import _numpy as knp


def _tri_setup(rng, n=200, dims=(6, 7, 5), c=2):
    values = np.ascontiguousarray(rng.normal(size=dims + (c,)))
    base = np.stack([rng.integers(0, d - 1, n) for d in dims], axis=1).astype(np.int64)
    frac = rng.random((n, 3))
    return values, np.ascontiguousarray(base), np.ascontiguousarray(frac)


def _bilinear_setup(rng, n=300, h=12, w=15, c=3):
    img = np.ascontiguousarray(rng.random((h, w, c)))
    x = np.ascontiguousarray(rng.uniform(0, w - 1, n))
    y = np.ascontiguousarray(rng.uniform(0, h - 1, n))
    return img, x, y


def all_backends():
    return sorted(kernels.available_backends().items())


@pytest.mark.parametrize("name,impl", all_backends())
def test_tri_gather_matches_reference(name, impl, rng):
    values, base, frac = _tri_setup(rng)
    out = impl.tri_gather(values, base, frac)
    # Reference: explicit 8-corner sum.
    ref = np.zeros_like(out)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wx = frac[:, 0] if dx else 1 - frac[:, 0]
                wy = frac[:, 1] if dy else 1 - frac[:, 1]
                wz = frac[:, 2] if dz else 1 - frac[:, 2]
                ref += (wx * wy * wz)[:, None] * values[
                    base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
    np.testing.assert_allclose(out, ref, atol=1e-13)


@pytest.mark.parametrize("name,impl", all_backends())
def test_tri_scatter_is_adjoint_of_gather(name, impl, rng):
    values, base, frac = _tri_setup(rng)
    gout = rng.normal(size=(base.shape[0], values.shape[3]))
    grad = np.zeros_like(values)
    impl.tri_scatter_add(grad, base, frac, np.ascontiguousarray(gout))
    # <gather(v), gout> == <v, scatter(gout)> for linear maps.
    lhs = float(np.sum(impl.tri_gather(values, base, frac) * gout))
    rhs = float(np.sum(values * grad))
    assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("name,impl", all_backends())
def test_tri_posgrad_matches_fd(name, impl, rng):
    values, base, frac = _tri_setup(rng, n=50)
    gout = np.ascontiguousarray(rng.normal(size=(50, values.shape[3])))
    gfrac = impl.tri_gather_posgrad(values, base, frac, gout)
    h = 1e-6
    for axis in range(3):
        fp = frac.copy()
        fp[:, axis] += h
        fm = frac.copy()
        fm[:, axis] -= h
        vp = (impl.tri_gather(values, base, np.ascontiguousarray(fp)) * gout).sum(axis=1)
        vm = (impl.tri_gather(values, base, np.ascontiguousarray(fm)) * gout).sum(axis=1)
        np.testing.assert_allclose(gfrac[:, axis], (vp - vm) / (2 * h), atol=1e-7)


@pytest.mark.parametrize("name,impl", all_backends())
def test_bilinear_gather_and_posgrad(name, impl, rng):
    img, x, y = _bilinear_setup(rng)
    out = impl.bilinear_gather(img, x, y)
    # exact at integer positions
    xi = np.ascontiguousarray(np.floor(x))
    yi = np.ascontiguousarray(np.floor(y))
    exact = impl.bilinear_gather(img, xi, yi)
    np.testing.assert_allclose(exact, img[yi.astype(int), xi.astype(int)], atol=1e-14)

    gout = np.ascontiguousarray(rng.normal(size=out.shape))
    gx, gy = impl.bilinear_posgrad(img, x, y, gout)
    h = 1e-6
    interior = (x > h) & (x < img.shape[1] - 1 - h) & (np.abs(x - np.round(x)) > 2 * h)
    vp = (impl.bilinear_gather(img, np.ascontiguousarray(x + h), y) * gout).sum(axis=1)
    vm = (impl.bilinear_gather(img, np.ascontiguousarray(x - h), y) * gout).sum(axis=1)
    np.testing.assert_allclose(gx[interior], ((vp - vm) / (2 * h))[interior], atol=1e-6)


@pytest.mark.skipif("native" not in kernels.available_backends(),
                    reason="compiled kernels not built")
def test_native_matches_python(rng):
    native = kernels.available_backends()["native"]
    values, base, frac = _tri_setup(rng, n=500)
    gout = np.ascontiguousarray(rng.normal(size=(500, values.shape[3])))
    np.testing.assert_allclose(
        native.tri_gather(values, base, frac), knp.tri_gather(values, base, frac),
        rtol=0, atol=1e-14)
    np.testing.assert_allclose(
        native.tri_gather_posgrad(values, base, frac, gout),
        knp.tri_gather_posgrad(values, base, frac, gout), rtol=0, atol=1e-13)
    ga = np.zeros_like(values)
    gb = np.zeros_like(values)
    native.tri_scatter_add(ga, base, frac, gout)
    knp.tri_scatter_add(gb, base, frac, gout)
    np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-13)

    img, x, y = _bilinear_setup(rng)
    gout2 = np.ascontiguousarray(rng.normal(size=(x.size, img.shape[2])))
    np.testing.assert_allclose(
        native.bilinear_gather(img, x, y), knp.bilinear_gather(img, x, y),
        rtol=0, atol=1e-14)
    for a, b in zip(native.bilinear_posgrad(img, x, y, gout2),
                    knp.bilinear_posgrad(img, x, y, gout2)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_backend_name_reports_active():
    assert kernels.backend_name() in ("native", "python")
