import numpy as np
import pytest

from timecnn.crosscnn import CrossCnn, NoMixer
from timecnn.errors import ConfigError, FormatError, ShapeError
from timecnn.model import (
    FfnBlockParams,
    InstanceStats,
    ModelConfig,
    backward,
    checkpoint_bytes,
    ffn_block_backward,
    ffn_block_forward,
    forward,
    init_params,
    instance_denorm,
    instance_norm,
    load_checkpoint,
    metric_mae,
    metric_mse,
    params_from_bytes,
    predict,
    save_checkpoint,
    training_loss,
    training_loss_grad,
)
from timecnn.numeric import check_gradients, layer_norm_forward, make_rng

from oracles import model_gradient_error

TOY = ModelConfig(lookback=8, horizon=4, n_vars=3, d_model=6, d_ff=8, n_blocks=2, dropout=0.1)


class TestConfig:
    @pytest.mark.parametrize(
        "bad", [dict(lookback=0), dict(n_blocks=-1), dict(dropout=1.0), dict(ln_eps=0.0), dict(mixer="lstm")]
    )
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            TOY.replace(**bad)

    def test_zero_blocks_allowed(self):
        assert TOY.replace(n_blocks=0).n_blocks == 0


class TestInstanceNorm:
    def test_constant_column(self):
        x = np.column_stack([np.full(6, 3.5), np.arange(6.0)])
        out, stats = instance_norm(x, eps=1e-5)
        assert not out[:, 0].any()
        assert stats.std[0] == pytest.approx(np.sqrt(1e-5))

    def test_already_standard(self):
        col = np.array([-1.0, 1.0, -1.0, 1.0])
        out, _ = instance_norm(np.column_stack([col, -col]))
        np.testing.assert_allclose(out, np.column_stack([col, -col]), atol=1e-9)

    def test_round_trip(self):
        x = make_rng(0).standard_normal((5, 12, 4)) * 10 + 3
        out, stats = instance_norm(x)
        np.testing.assert_allclose(instance_denorm(out, stats), x, atol=1e-9, rtol=0)

    def test_denorm_identity_stats(self):
        y = make_rng(1).standard_normal((4, 3))
        assert np.array_equal(instance_denorm(y, InstanceStats(np.zeros(3), np.ones(3))), y)

    def test_denorm_zero_prediction(self):
        mu = np.array([1.0, -2.0])
        out = instance_denorm(np.zeros((3, 2)), InstanceStats(mu, np.array([5.0, 7.0])))
        assert np.array_equal(out, np.tile(mu, (3, 1)))

    def test_denorm_mismatch(self):
        with pytest.raises(ShapeError):
            instance_denorm(np.zeros((3, 2)), InstanceStats(np.zeros(3), np.ones(3)))


class TestFfnBlock:
    def _block(self, rng, D=6, H=8, zero=False):
        f = np.zeros if zero else (lambda s: rng.standard_normal(s))
        return FfnBlockParams(np.ones(D), rng.standard_normal(D), f((D, H)), f(H), f((H, D)), f(D))

    def test_zero_weights_identity(self):
        rng = make_rng(0)
        x = rng.standard_normal((3, 6))
        out, _ = ffn_block_forward(x, self._block(rng, zero=True), 0.3, 1e-5, True, make_rng(1))
        assert np.array_equal(out, x)

    def test_residual_path(self):
        rng = make_rng(2)
        blk = self._block(rng)
        x = rng.standard_normal((3, 6))
        delta = 1e-6 * rng.standard_normal((3, 6))
        a, _ = ffn_block_forward(x, blk, 0.0, 1e-5, False)
        b, _ = ffn_block_forward(x + delta, blk, 0.0, 1e-5, False)
        # Jacobian is identity plus the dense path, so the change is delta plus a bounded term
        assert np.max(np.abs((b - a) - delta)) < 1e-4

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            ffn_block_forward(np.ones((2, 5)), self._block(make_rng(0)), 0.0, 1e-5, False)

    def test_finite_differences(self):
        rng = make_rng(3)
        blk0 = self._block(rng)
        x0 = rng.standard_normal((2, 3, 6))
        up = rng.standard_normal((2, 3, 6))
        names = ["ln_gamma", "ln_beta", "w1", "b1", "w2", "b2"]
        shapes = [getattr(blk0, n).shape for n in names]
        start = np.concatenate([x0.ravel()] + [getattr(blk0, n).ravel() for n in names])

        def fun(p):
            x = p[: x0.size].reshape(x0.shape)
            offset, parts = x0.size, {}
            for n, s in zip(names, shapes):
                size = int(np.prod(s))
                parts[n] = p[offset : offset + size].reshape(s)
                offset += size
            out, cache = ffn_block_forward(x, FfnBlockParams(**parts), 0.2, 1e-5, True, make_rng(9))
            dx, g = ffn_block_backward(cache, up)
            return float(np.sum(out * up)), np.concatenate([dx.ravel()] + [getattr(g, n).ravel() for n in names])

        assert check_gradients(fun, start) < 1e-4


class TestLosses:
    def test_zero(self):
        y = make_rng(0).standard_normal((4, 3))
        assert training_loss(y, y) == 0.0 and metric_mse(y, y) == 0.0 and metric_mae(y, y) == 0.0

    def test_hand_value(self):
        assert training_loss(np.array([[3.0, 4.0]]), np.zeros((1, 2))) == 25.0

    @pytest.mark.parametrize("shape", [(1, 1), (4, 3), (2, 5, 7), (3, 2, 6, 2)])
    def test_loss_is_metric_times_n(self, shape):
        rng = make_rng(len(shape))
        a, b = rng.standard_normal(shape), rng.standard_normal(shape)
        assert training_loss(a, b) == pytest.approx(metric_mse(a, b) * shape[-1], rel=1e-12)

    def test_gradient(self):
        rng = make_rng(1)
        y = rng.standard_normal((2, 4, 3))
        yhat0 = rng.standard_normal((2, 4, 3))
        np.testing.assert_allclose(training_loss_grad(yhat0, y), 2 * (yhat0 - y) / (4 * 2))
        err = check_gradients(
            lambda v: (training_loss(v.reshape(y.shape), y), training_loss_grad(v.reshape(y.shape), y).ravel()),
            yhat0.ravel(),
        )
        assert err < 1e-7

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            training_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestForward:
    def test_shapes_random_configs(self):
        rng = make_rng(0)
        kinds = ["crosscnn", "onecnn", "crosslinear", "cnn2d_3", "cnn2d_7", "none"]
        for i in range(50):
            cfg = ModelConfig(
                lookback=int(rng.integers(1, 12)),
                horizon=int(rng.integers(1, 8)),
                n_vars=int(rng.integers(1, 6)),
                d_model=int(rng.integers(1, 9)),
                d_ff=int(rng.integers(1, 9)),
                n_blocks=int(rng.integers(0, 3)),
                mixer=kinds[i % len(kinds)],
                use_instance_norm=bool(i % 2),
            )
            params = init_params(cfg, rng)
            x = rng.standard_normal((cfg.lookback, cfg.n_vars))
            assert forward(x, params, cfg)[0].shape == (cfg.horizon, cfg.n_vars)

    def test_eval_deterministic(self):
        params = init_params(TOY, make_rng(0))
        x = make_rng(1).standard_normal((3, 8, 3))
        assert np.array_equal(forward(x, params, TOY)[0], forward(x, params, TOY)[0])

    def test_degenerate_path_by_composition(self):
        cfg = ModelConfig(lookback=4, horizon=4, n_vars=2, d_model=4, d_ff=3, n_blocks=0, mixer="none", use_instance_norm=False)
        params = init_params(cfg, make_rng(0))
        params.embed_w, params.embed_b = np.eye(4), np.zeros(4)
        params.proj_w, params.proj_b = np.eye(4), np.zeros(4)
        x = make_rng(1).standard_normal((4, 2))
        normed, _ = layer_norm_forward(x.T, np.ones(4), np.zeros(4), cfg.ln_eps)
        np.testing.assert_allclose(forward(x, params, cfg)[0], normed.T, rtol=1e-14, atol=1e-14)

    def test_zero_kernels_match_no_mixer_bitwise(self):
        rng = make_rng(4)
        params = init_params(TOY, rng)
        params.mixer = CrossCnn(np.zeros((8, 3)))
        bare = params.copy()
        bare.mixer = NoMixer()
        x = rng.standard_normal((5, 8, 3))
        assert np.array_equal(forward(x, params, TOY)[0], forward(x, bare, TOY.replace(mixer="none"))[0])

    def test_no_mixer_permutation_equivariance(self):
        cfg = TOY.replace(mixer="none")
        params = init_params(cfg, make_rng(5))
        x = make_rng(6).standard_normal((8, 3))
        perm = np.array([2, 0, 1])
        np.testing.assert_allclose(forward(x[:, perm], params, cfg)[0], forward(x, params, cfg)[0][:, perm], rtol=1e-13, atol=1e-13)

    def test_stage_named_on_bad_input(self):
        with pytest.raises(ShapeError, match="input stage"):
            forward(np.zeros((7, 3)), init_params(TOY, make_rng(0)), TOY)

    def test_predict_chunking(self):
        params = init_params(TOY, make_rng(0))
        x = make_rng(1).standard_normal((7, 8, 3))
        np.testing.assert_array_equal(predict(x, params, TOY, batch_size=3), predict(x, params, TOY, batch_size=100))


class TestBackward:
    @pytest.mark.parametrize("mixer", ["crosscnn", "onecnn", "crosslinear", "cnn2d_3", "none"])
    def test_full_model_gradient_check(self, mixer):
        assert model_gradient_error(TOY.replace(mixer=mixer)) < 1e-4

    def test_without_instance_norm(self):
        assert model_gradient_error(TOY.replace(use_instance_norm=False, n_blocks=1)) < 1e-4

    def test_zero_upstream(self):
        params = init_params(TOY, make_rng(0))
        yhat, tape = forward(make_rng(1).standard_normal((2, 8, 3)), params, TOY, True, make_rng(2))
        grads = backward(tape, np.zeros_like(yhat), TOY)
        assert not grads.to_vector().any()

    def test_frozen_masks_repeatable(self):
        params = init_params(TOY, make_rng(0))
        x = make_rng(1).standard_normal((2, 8, 3))
        up = make_rng(3).standard_normal((2, 4, 3))
        yhat, tape = forward(x, params, TOY, True, make_rng(2))
        a = backward(tape, up, TOY).to_vector()
        b = backward(tape, up, TOY).to_vector()
        assert np.array_equal(a, b)

    def test_tape_mismatch(self):
        params = init_params(TOY, make_rng(0))
        yhat, tape = forward(make_rng(1).standard_normal((8, 3)), params, TOY)
        with pytest.raises(ShapeError):
            backward(tape, yhat, TOY.replace(n_blocks=3))


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path):
        params = init_params(TOY, make_rng(0))
        save_checkpoint(params, TOY, tmp_path / "a.bin")
        loaded, cfg = load_checkpoint(tmp_path / "a.bin")
        assert cfg == TOY
        save_checkpoint(loaded, cfg, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    @pytest.mark.parametrize("mixer", ["crosscnn", "crosslinear", "cnn2d_7", "none"])
    def test_forward_bit_exact_after_load(self, mixer):
        cfg = TOY.replace(mixer=mixer)
        params = init_params(cfg, make_rng(1))
        loaded, _ = params_from_bytes(checkpoint_bytes(params, cfg))
        x = make_rng(2).standard_normal((3, 8, 3))
        assert np.array_equal(forward(x, loaded, cfg)[0], forward(x, params, cfg)[0])

    def test_bad_magic(self):
        blob = checkpoint_bytes(init_params(TOY, make_rng(0)), TOY)
        with pytest.raises(FormatError, match="magic"):
            params_from_bytes(b"XXXX" + blob[4:])

    def test_bad_version(self):
        blob = bytearray(checkpoint_bytes(init_params(TOY, make_rng(0)), TOY))
        blob[4] = 99
        with pytest.raises(FormatError, match="version"):
            params_from_bytes(bytes(blob))

    def test_truncated(self):
        blob = checkpoint_bytes(init_params(TOY, make_rng(0)), TOY)
        with pytest.raises(FormatError):
            params_from_bytes(blob[:-5])

    def test_trailing_bytes(self):
        blob = checkpoint_bytes(init_params(TOY, make_rng(0)), TOY)
        with pytest.raises(FormatError):
            params_from_bytes(blob + b"\0")
