"""Feature pyramid, decoder, and checkpoint round-trips."""

import numpy as np
import pytest

from nimslam.errors import ConfigError, ShapeError
from nimslam import implicit_map as im


class TestInitMap:
    def test_deterministic_per_seed(self, small_bounds):
        a = im.init_map(small_bounds, (0.8, 0.5), 1, seed=3)
        b = im.init_map(small_bounds, (0.8, 0.5), 1, seed=3)
        for ga, gb in zip(a.levels, b.levels):
            assert np.array_equal(ga.values, gb.values)
        c = im.init_map(small_bounds, (0.8, 0.5), 1, seed=4)
        assert not np.array_equal(a.levels[0].values, c.levels[0].values)

    def test_interior_std_near_nominal(self):
        # >= 1e6 interior cells; padding cells are pinned to zero and the
        # sampled std of the optimizable cells must match the initializer.
        bounds = im.SceneBounds(np.array([0.0, 0, 0]), np.array([4.0, 4, 4]))
        pyr = im.init_map(bounds, (0.039,), 1, seed=0)
        interior = pyr.levels[0].interior()
        assert interior.size >= 10 ** 6
        std = interior.std()
        assert 0.00095 <= std <= 0.00105
        values = pyr.levels[0].values
        assert np.all(values[0] == 0) and np.all(values[-1] == 0)
        assert np.all(values[:, 0] == 0) and np.all(values[:, :, -1] == 0)

    def test_dims_formula(self):
        # 4 m cube at 8 cm: ceil(4/0.08) + 2 padding = 52 per axis.
        bounds = im.SceneBounds(np.array([0.0, 0, 0]), np.array([4.0, 4, 4]))
        pyr = im.init_map(bounds, (0.64, 0.08), 1, seed=0)
        assert pyr.levels[1].dims == (52, 52, 52)
        assert pyr.levels[0].dims == (np.ceil(4 / 0.64) + 2,) * 3

    def test_rejects_non_decreasing_sizes(self, small_bounds):
        with pytest.raises(ConfigError):
            im.init_map(small_bounds, (0.5, 0.5), 1, seed=0)
        with pytest.raises(ConfigError):
            im.init_map(small_bounds, (0.3, 0.5), 1, seed=0)


class TestSampleFeature:
    def test_constant_level_everywhere(self, small_bounds, rng):
        pyr = im.init_map(small_bounds, (0.8, 0.5), 1, seed=0)
        pyr.levels[0].values[...] = 4.25
        pyr.levels[1].values[...] = -1.5
        pts = rng.uniform(-0.99, 0.99, (100, 3))
        feats = im.sample_feature(pyr, pts)
        np.testing.assert_allclose(feats[:, 0], 4.25, atol=1e-12)
        np.testing.assert_allclose(feats[:, 1], -1.5, atol=1e-12)

    def test_cell_center_returns_stored_value(self, small_bounds):
        pyr = im.init_map(small_bounds, (0.5,), 1, seed=1)
        grid = pyr.levels[0]
        idx = (2, 3, 2)
        center = small_bounds.min_corner + (np.array(idx) - 0.5) * grid.voxel_size
        feats = im.sample_feature(pyr, center)
        np.testing.assert_allclose(feats[0], grid.values[idx + (0,)], atol=1e-12)

    def test_midpoint_of_adjacent_cells(self, small_bounds):
        pyr = im.init_map(small_bounds, (0.5,), 1, seed=1)
        grid = pyr.levels[0]
        grid.values[...] = 0.0
        grid.values[2, 3, 2, 0] = 0.0
        grid.values[3, 3, 2, 0] = 1.0
        a = small_bounds.min_corner + (np.array([2, 3, 2]) - 0.5) * grid.voxel_size
        b = small_bounds.min_corner + (np.array([3, 3, 2]) - 0.5) * grid.voxel_size
        feats = im.sample_feature(pyr, 0.5 * (a + b))
        np.testing.assert_allclose(feats[0], 0.5, atol=1e-12)

    def test_out_of_bounds_is_zero(self, small_pyramid):
        pts = np.array([[2.0, 0, 0], [0, -1.5, 0], [0, 0, 1.01]])
        feats = im.sample_feature(small_pyramid, pts)
        assert np.all(feats == 0)

    def test_affine_field_reproduced_exactly(self, small_bounds, rng):
        # Trilinear interpolation is exact on per-level affine fields.
        pyr = im.init_map(small_bounds, (0.5,), 1, seed=1)
        grid = pyr.levels[0]
        coef = rng.normal(0, 1, 4)
        for i in range(grid.dims[0]):
            for j in range(grid.dims[1]):
                for k in range(grid.dims[2]):
                    c = small_bounds.min_corner + (np.array([i, j, k]) - 0.5) * 0.5
                    grid.values[i, j, k, 0] = coef @ np.array([c[0], c[1], c[2], 1.0])
        pts = rng.uniform(-0.95, 0.95, (200, 3))
        feats = im.sample_feature(pyr, pts)
        expected = pts @ coef[:3] + coef[3]
        np.testing.assert_allclose(feats[:, 0], expected, atol=1e-9)

    def test_gradient_locality_eight_cells_per_level(self, small_pyramid):
        pts = np.array([[0.123, -0.271, 0.512]])
        feats, ctx = im.features_forward(small_pyramid, pts)
        grads = [np.zeros_like(g.values) for g in small_pyramid.levels]
        im.features_backward(small_pyramid, ctx, np.ones_like(feats), grads)
        for g in grads:
            assert int((g != 0).sum()) == 8


class TestDecoder:
    def test_zero_decoder_outputs_half(self):
        hidden = 8
        zeros = {name: np.zeros_like(arr) for name, arr in
                 im.init_decoder(4, hidden, 0).arrays().items()}
        dec = im.MlpDecoder(**zeros)
        occ, col = im.decode(dec, np.zeros((5, 4)))
        np.testing.assert_allclose(occ, 0.5)
        np.testing.assert_allclose(col, 0.5)

    def test_outputs_in_open_unit_interval(self, rng):
        dec = im.init_decoder(6, 16, seed=2)
        feats = rng.normal(0, 2, (200, 6))
        occ, col = im.decode(dec, feats)
        assert np.all((occ > 0) & (occ < 1))
        assert np.all((col > 0) & (col < 1))

    def test_deterministic(self, rng):
        dec = im.init_decoder(6, 16, seed=2)
        feats = rng.normal(0, 1, (50, 6))
        o1, c1 = im.decode(dec, feats)
        o2, c2 = im.decode(dec, feats)
        assert np.array_equal(o1, o2) and np.array_equal(c1, c2)

    def test_width_mismatch_raises(self):
        dec = im.init_decoder(6, 16, seed=0)
        with pytest.raises(ShapeError):
            im.decoder_forward(dec, np.zeros((3, 5)))

    def test_query_point_constant_field(self, small_bounds, rng):
        pyr = im.init_map(small_bounds, (0.8, 0.5), 1, seed=0)
        for g in pyr.levels:
            g.values[...] = 0.7
        dec = im.init_decoder(pyr.feature_dim, 16, seed=0)
        pts = rng.uniform(-0.9, 0.9, (20, 3))
        occ, col = im.query_point(pyr, dec, pts)
        assert np.allclose(occ, occ[0]) and np.allclose(col, col[0])

    def test_query_point_gradient_matches_fd(self, small_pyramid, small_decoder):
        # Gradient of occupancy w.r.t. a touched cell vs central differences.
        pts = np.array([[0.21, -0.33, 0.17]])
        feats, fctx = im.features_forward(small_pyramid, pts)
        occ, col, dctx = im.decoder_forward(small_decoder, feats)
        grads = [np.zeros_like(g.values) for g in small_pyramid.levels]
        _, g_feats = im.decoder_backward(small_decoder, dctx, np.ones(1),
                                         np.zeros((1, 3)), want_weight_grads=False)
        im.features_backward(small_pyramid, fctx, g_feats, grads, want_pos_grad=False)
        li = 2
        idx = tuple(np.argwhere(grads[li] != 0)[0])
        h = 1e-5
        vals = small_pyramid.levels[li].values
        orig = vals[idx]
        vals[idx] = orig + h
        op, _ = im.query_point(small_pyramid, small_decoder, pts)
        vals[idx] = orig - h
        om, _ = im.query_point(small_pyramid, small_decoder, pts)
        vals[idx] = orig
        fd = (op[0] - om[0]) / (2 * h)
        assert abs(grads[li][idx] - fd) / max(abs(fd), 1e-12) < 1e-4


class TestFreezeContract:
    def test_frozen_decoder_reports_zero_gradients(self, small_pyramid, small_decoder):
        from nimslam.config import SlamConfig
        from nimslam.gradcheck import build_tiny_instance
        from nimslam.objectives import evaluate_objective
        from nimslam.optimizer import ParamSet, backward

        pyramid, decoder, frames, config, plan = build_tiny_instance(0)
        ev = evaluate_objective(pyramid, decoder, frames, plan, config,
                                want_grads=True, want_decoder_grads=False)
        params = ParamSet(pyramid, decoder, frames, train_map=True,
                          train_decoder=False,
                          trainable_frames=np.ones(len(frames), dtype=bool))
        grads = backward(ev, params)
        assert all(np.all(g == 0) for g in grads.decoder.values())
        assert any(np.any(g != 0) for g in grads.grids)
        assert np.any(grads.poses != 0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, small_pyramid, small_decoder):
        path = tmp_path / "map.ckpt"
        im.save_checkpoint(path, small_pyramid, small_decoder)
        pyr, dec = im.load_checkpoint(path)
        assert pyr.num_levels == small_pyramid.num_levels
        assert pyr.channels == small_pyramid.channels
        np.testing.assert_allclose(pyr.bounds.min_corner,
                                   small_pyramid.bounds.min_corner)
        for a, b in zip(pyr.levels, small_pyramid.levels):
            assert a.dims == tuple(b.dims)
            # stored as float32
            np.testing.assert_allclose(a.values, b.values, atol=1e-6)
        for name in im.DECODER_FIELDS:
            np.testing.assert_allclose(getattr(dec, name),
                                       getattr(small_decoder, name), atol=1e-6)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTAMAP!" + b"\x00" * 64)
        with pytest.raises(ValueError):
            im.load_checkpoint(path)
