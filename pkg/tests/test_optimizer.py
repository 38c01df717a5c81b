"""Adam updates, freeze contracts, and the gradient check harness."""

import numpy as np
import pytest

from nimslam.config import SlamConfig
from nimslam.errors import GradientError
from nimslam.gradcheck import build_tiny_instance, finite_difference_check
from nimslam.geometry import Pose
from nimslam.objectives import ObjectiveGrads, evaluate_objective
from nimslam.optimizer import AdamState, ParamSet, adam_step, backward


def _tiny_params(seed=0):
    pyramid, decoder, frames, config, plan = build_tiny_instance(seed)
    ev = evaluate_objective(pyramid, decoder, frames, plan, config,
                            want_grads=True, want_decoder_grads=True)
    trainable = np.zeros(len(frames), dtype=bool)
    trainable[1:] = True
    params = ParamSet(pyramid, decoder, frames, train_map=True,
                      train_decoder=True, trainable_frames=trainable)
    return params, ev, config


class TestAdamStep:
    def test_zero_gradient_leaves_parameters(self):
        params, ev, config = _tiny_params()
        zeros = ObjectiveGrads(
            [np.zeros_like(g.values) for g in params.pyramid.levels],
            {k: np.zeros_like(v) for k, v in params.decoder.arrays().items()},
            np.zeros((len(params.frames), 6)),
        )
        state = AdamState()
        before = [g.values.copy() for g in params.pyramid.levels]
        pose_before = [f.pose.copy() for f in params.frames]
        adam_step(params, zeros, state, config)
        assert state.step == 1
        for b, g in zip(before, params.pyramid.levels):
            assert np.array_equal(b, g.values)
        for b, f in zip(pose_before, params.frames):
            assert np.array_equal(b.rotation, f.pose.rotation)
            assert np.array_equal(b.translation, f.pose.translation)

    def test_first_step_closed_form(self):
        # scalar parameter, g=1, lr=0.01: first Adam step is
        # -lr * m_hat / (sqrt(v_hat) + eps) = -0.01 / (1 + 1e-8)
        state = AdamState()
        state.step = 1
        m, v = state.slot("x", (1,))
        g = np.ones(1)
        m += (1 - state.beta1) * g
        v += (1 - state.beta2) * g * g
        mh = m / (1 - state.beta1)
        vh = v / (1 - state.beta2)
        delta = -0.01 * mh / (np.sqrt(vh) + state.eps)
        assert abs(delta[0] + 0.01) < 1e-6

    def test_two_runs_bit_identical(self):
        outs = []
        for _ in range(2):
            params, ev, config = _tiny_params()
            state = AdamState()
            for _ in range(3):
                grads = backward(ev, params)
                adam_step(params, grads, state, config)
            outs.append(params.pyramid.levels[0].values.copy())
        assert np.array_equal(outs[0], outs[1])

    def test_quadratic_convergence(self):
        # 1-D quadratic: Adam reaches the minimizer within 1e-6 in <= 5000 steps
        x = np.array([3.0])
        state = AdamState()
        m, v = state.slot("x", (1,))
        lr, target = 0.01, 1.2
        for step in range(1, 5001):
            g = 2.0 * (x - target)
            m[:] = state.beta1 * m + (1 - state.beta1) * g
            v[:] = state.beta2 * v + (1 - state.beta2) * g * g
            mh = m / (1 - state.beta1 ** step)
            vh = v / (1 - state.beta2 ** step)
            x -= lr * mh / (np.sqrt(vh) + state.eps)
            if abs(x[0] - target) < 1e-6:
                break
        assert abs(x[0] - target) < 1e-6


class TestBackwardContract:
    def test_zero_loss_configuration_zero_gradients(self):
        # identical pose+image window and perfectly fit colors is hard to
        # construct; instead check that explicitly frozen groups are exact
        # zeros and trainable ones are populated.
        params, ev, config = _tiny_params()
        grads = backward(ev, params)
        assert any(np.any(g != 0) for g in grads.grids)
        assert any(np.any(v != 0) for v in grads.decoder.values())
        assert np.all(grads.poses[0] == 0)  # frame 0 not trainable
        assert np.any(grads.poses[1:] != 0)

    def test_frozen_decoder_zero_block(self):
        params, ev, config = _tiny_params()
        params.train_decoder = False
        grads = backward(ev, params)
        assert all(np.all(v == 0) for v in grads.decoder.values())

    def test_nonfinite_gradient_names_group(self):
        params, ev, config = _tiny_params()
        ev.grads.grids[1][2, 2, 2, 0] = np.nan
        with pytest.raises(GradientError) as exc:
            backward(ev, params)
        assert "map level 1" in str(exc.value)

    def test_map_gradients_touch_only_sampled_cells(self):
        params, ev, config = _tiny_params()
        grads = backward(ev, params)
        total_cells = sum(g.size for g in grads.grids)
        touched = sum(int((g != 0).sum()) for g in grads.grids)
        assert 0 < touched < 0.5 * total_cells

    def test_padding_cells_never_receive_gradient(self):
        params, ev, config = _tiny_params()
        grads = backward(ev, params)
        for g in grads.grids:
            assert np.all(g[0] == 0) and np.all(g[-1] == 0)
            assert np.all(g[:, 0] == 0) and np.all(g[:, -1] == 0)
            assert np.all(g[:, :, 0] == 0) and np.all(g[:, :, -1] == 0)


class TestGradcheckHarness:
    def test_passes_at_default_seed(self):
        report = finite_difference_check(seed=0)
        assert report.passed
        assert report.n_checked >= 50
        assert report.max_rel_err < 1e-4

    def test_runtime_bound(self):
        report = finite_difference_check(seed=0)
        assert report.runtime_s < 60.0
