"""Sequence/trajectory/config file parsing."""

import numpy as np
import pytest

from nimslam.config import SlamConfig, format_config, load_config, parse_config, save_config
from nimslam.datasets import (
    load_calibration, load_trajectory, load_tum_sequence, save_trajectory,
)
from nimslam.errors import ConfigError, MissingInputError, ParseError
from nimslam.geometry import Pose, so3_exp

from conftest import random_pose


def _write_sequence(tmp_path, n=3, with_gt=True, gt_offset=0.0):
    from PIL import Image

    (tmp_path / "rgb").mkdir()
    lines = []
    for i in range(n):
        img = Image.fromarray((np.full((8, 10, 3), i * 20)).astype(np.uint8))
        img.save(tmp_path / "rgb" / f"{i}.png")
        lines.append(f"{i * 0.1:.6f} rgb/{i}.png")
    (tmp_path / "rgb.txt").write_text("\n".join(lines) + "\n")
    if with_gt:
        gt = [f"{i * 0.1 + gt_offset:.6f} {0.1 * i} 0 0 0 0 0 1" for i in range(n)]
        (tmp_path / "groundtruth.txt").write_text("\n".join(gt) + "\n")
    (tmp_path / "calib.txt").write_text("9 9 4.5 3.5 10 8\n")
    return tmp_path


class TestTumSequence:
    def test_three_frames_in_order(self, tmp_path):
        seq = load_tum_sequence(_write_sequence(tmp_path))
        assert len(seq) == 3
        stamps = [f.timestamp for f in seq.frames]
        assert stamps == sorted(stamps)
        img = seq.image(1)
        assert img.shape == (8, 10, 3)
        assert abs(img[0, 0, 0] - 20 / 255.0) < 1e-9

    def test_gt_association_within_tolerance(self, tmp_path):
        seq = load_tum_sequence(_write_sequence(tmp_path, gt_offset=0.015))
        assert all(f.gt_pose is not None for f in seq.frames)

    def test_gt_association_beyond_tolerance(self, tmp_path):
        seq = load_tum_sequence(_write_sequence(tmp_path, gt_offset=0.03))
        assert all(f.gt_pose is None for f in seq.frames)

    def test_missing_rgb_txt(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_tum_sequence(tmp_path)

    def test_malformed_line_reports_number(self, tmp_path):
        _write_sequence(tmp_path)
        (tmp_path / "rgb.txt").write_text("0.0 rgb/0.png\nbroken line here\n")
        with pytest.raises(ParseError) as exc:
            load_tum_sequence(tmp_path)
        assert exc.value.line_number == 2

    def test_calibration(self, tmp_path):
        K = load_calibration(_write_sequence(tmp_path) / "calib.txt")
        assert K.fx == 9 and K.width == 10


class TestTrajectoryIO:
    def test_roundtrip(self, tmp_path, rng):
        traj = [(0.1 * i, random_pose(rng, 0.4, 1.0)) for i in range(7)]
        path = tmp_path / "traj.txt"
        save_trajectory(path, traj)
        back = load_trajectory(path)
        assert len(back) == 7
        for (t0, p0), (t1, p1) in zip(traj, back):
            assert abs(t0 - t1) < 1e-6
            np.testing.assert_allclose(p1.rotation, p0.rotation, atol=1e-7)
            np.testing.assert_allclose(p1.translation, p0.translation, atol=1e-8)

    def test_quaternion_normalized_on_load(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("0.0 1 2 3 0.0 0.0 0.0 2.0\n" * 3)
        traj = load_trajectory(path)
        R = traj[0][1].rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-6

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("0.0 1 2 3\n")
        with pytest.raises(ParseError):
            load_trajectory(path)


class TestConfigFile:
    def test_roundtrip_all_fields(self, tmp_path):
        cfg = SlamConfig(pixel_budget=1234, voxel_sizes=(0.4, 0.2),
                         num_levels=2, seed=77, flow_metric="rms")
        path = tmp_path / "config.txt"
        save_config(cfg, path)
        back = load_config(path)
        assert back == cfg

    def test_comments_and_spacing(self):
        cfg = parse_config("""
# comment line
seed = 5   # trailing comment
pixel_budget = 900
patch_sizes = 1, 5, 11
""")
        assert cfg.seed == 5 and cfg.pixel_budget == 900

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("no_such_key = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("pixel_budget = many\n")

    def test_invalid_combination_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("voxel_sizes = 0.2, 0.4\nnum_levels = 2\n")

    def test_defaults_match_reference_constants(self):
        cfg = SlamConfig()
        assert cfg.iters_init == 1500
        assert cfg.iters_window == 100
        assert cfg.pixel_budget == 3000
        assert cfg.window_size == 21
        assert cfg.keyframe_flow_threshold == 10.0
        assert cfg.patch_sizes == (1, 5, 11)
        assert (cfg.alpha_warping, cfg.alpha_render, cfg.alpha_smooth) == (0.5, 0.1, 0.01)
        assert cfg.num_levels == 6 and cfg.channels == 1
        assert cfg.voxel_sizes == (0.64, 0.48, 0.32, 0.24, 0.16, 0.08)
        assert (cfg.lr_map, cfg.lr_pose) == (0.001, 0.01)
        assert cfg.overlap_threshold == 0.70
        assert cfg.overlap_probe_pixels == 100
        assert cfg.init_frames == 13
        assert cfg.post_opt_iterations == 1000
        assert cfg.post_opt_keyframes == 20
