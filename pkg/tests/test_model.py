"""Scorer forward passes, gradients, optimizer and checkpoints."""
import numpy as np
import pytest

from mitodet.checkpoint import checkpoint_load, checkpoint_save
from mitodet.errors import ConfigError, DataError
from mitodet.model import (ScorerConfig, forward_dense, forward_patch,
                           init_params, loss_and_grad, normalize_patches,
                           trainable_names)
from mitodet.nn import softmax_cross_entropy
from mitodet.optim import AdamState, adam_step, init_adam

TINY = ScorerConfig(patch_size=16, block_channels=(3, 4), block_strides=(2, 2))


def _tiny_params(seed=1, dtype=np.float32):
    return init_params(TINY, seed=seed, dtype=dtype)


class TestScorerConfig:
    def test_reference_plan(self):
        cfg = ScorerConfig.reference()
        assert cfg.output_stride == 16
        assert cfg.pool_size == 8
        assert cfg.receptive_field >= cfg.patch_size

    def test_desk_plan(self):
        cfg = ScorerConfig.desk_scale()
        assert cfg.patch_size == 64
        assert cfg.output_stride == 8
        assert cfg.block_channels == (8, 16, 16, 32, 32)
        assert cfg.receptive_field >= cfg.patch_size

    def test_stride_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            ScorerConfig(patch_size=18, block_channels=(4, 4),
                         block_strides=(2, 2))


class TestInitParams:
    def test_deterministic(self):
        a = init_params(ScorerConfig.reference(), seed=5)
        b = init_params(ScorerConfig.reference(), seed=5)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_seeds_differ(self):
        a = init_params(TINY, seed=1)
        b = init_params(TINY, seed=2)
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_reference_stem_shape(self):
        params = init_params(ScorerConfig.reference(), seed=0)
        assert params["stem.w"].shape == (16, 3, 3, 3)

    def test_bn_identity_init(self):
        params = _tiny_params()
        assert np.all(params["stem.bn.gamma"] == 1)
        assert np.all(params["stem.bn.beta"] == 0)
        assert np.all(params["stem.bn.rvar"] == 1)


class TestForward:
    def test_softmax_rows_sum_to_one(self):
        params = _tiny_params()
        x = np.random.default_rng(0).standard_normal((6, 16, 16, 3)).astype(np.float32)
        _, probs = forward_patch(params, x, TINY)
        assert np.abs(probs.sum(axis=1) - 1).max() < 1e-6

    def test_identical_patches_identical_logits(self):
        params = _tiny_params()
        one = np.random.default_rng(1).standard_normal((1, 16, 16, 3)).astype(np.float32)
        batch = np.concatenate([one, one])
        logits, _ = forward_patch(params, batch, TINY)
        assert np.array_equal(logits[0], logits[1])

    def test_dense_map_sizes(self):
        params = _tiny_params()
        rng = np.random.default_rng(2)
        img = rng.standard_normal((16, 16, 3)).astype(np.float32)
        assert forward_dense(params, img, TINY).values.shape == (1, 1)
        img = rng.standard_normal((16 + 4, 16, 3)).astype(np.float32)
        assert forward_dense(params, img, TINY).values.shape == (2, 1)

    def test_dense_equals_patch(self):
        params = _tiny_params()
        rng = np.random.default_rng(3)
        batch = normalize_patches(rng.integers(0, 256, (10, 16, 16, 3), dtype=np.uint8))
        _, probs = forward_patch(params, batch, TINY)
        for i in range(10):
            pm = forward_dense(params, batch[i], TINY)
            assert abs(pm.values[0, 0] - probs[i, 1]) < 1e-5

    def test_translation_equivariance(self):
        params = _tiny_params(seed=7)
        rng = np.random.default_rng(4)
        img = normalize_patches(rng.integers(0, 256, (48, 48, 3), dtype=np.uint8))
        base = forward_dense(params, img, TINY).values
        shifted = forward_dense(params, img[TINY.output_stride:, :, :], TINY).values
        # cell p of the shifted map reads rows [4p - 10, 4p + 22]; p >= 3 stays
        # off the new top border, and bottom-border context is unchanged
        assert shifted.shape[0] == base.shape[0] - 1
        assert np.abs(shifted[3:] - base[4:]).max() < 1e-5

    def test_image_too_small(self):
        with pytest.raises(DataError):
            forward_dense(_tiny_params(), np.zeros((8, 8, 3), np.float32), TINY)


class TestLossAndGradients:
    def test_perfect_logits_low_loss(self):
        logits = np.array([[10.0, -10.0], [-10.0, 10.0]])
        loss, _, _ = softmax_cross_entropy(logits, np.array([0, 1]))
        assert loss < 1e-3

    def test_uniform_logits_ln2(self):
        loss, _, _ = softmax_cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert abs(loss - np.log(2)) < 1e-6

    def test_gradients_match_finite_differences(self):
        params = init_params(TINY, seed=3, dtype=np.float64)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 16, 16, 3)) * 0.3
        y = np.array([0, 1, 1, 0])
        _, grads, _ = loss_and_grad(params, x, y, TINY)
        h = 1e-6
        for name in trainable_names(params):
            flat_idx = rng.choice(params[name].size,
                                  size=min(6, params[name].size), replace=False)
            for i in flat_idx:
                probe = {k: v.copy() for k, v in params.items()}
                probe[name].ravel()[i] += h
                up, _, _ = loss_and_grad(probe, x, y, TINY)
                probe[name].ravel()[i] -= 2 * h
                down, _, _ = loss_and_grad(probe, x, y, TINY)
                fd = (up - down) / (2 * h)
                an = grads[name].ravel()[i]
                assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd), abs(an)), \
                    f"{name}[{i}]: analytic {an} vs fd {fd}"

    def test_running_stats_update(self):
        params = _tiny_params()
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 16, 16, 3)).astype(np.float32)
        y = np.zeros(8, dtype=np.int64)
        _, _, buffers = loss_and_grad(params, x, y, TINY)
        assert any(not np.array_equal(buffers[k], params[k]) for k in buffers)


class TestAdam:
    def test_zero_gradients_fixed_point(self):
        params = {"p": np.array([1.0, 2.0], np.float32)}
        state = AdamState(m={"p": np.zeros(2, np.float32)},
                          v={"p": np.zeros(2, np.float32)})
        new_params, new_state = adam_step(params, {"p": np.zeros(2, np.float32)},
                                          state, 1e-3)
        assert np.array_equal(new_params["p"], params["p"])
        assert np.all(new_state.m["p"] == 0) and np.all(new_state.v["p"] == 0)

    def test_first_step_closed_form(self):
        params = {"p": np.array([1.0])}
        state = AdamState(m={"p": np.zeros(1)}, v={"p": np.zeros(1)})
        new_params, _ = adam_step(params, {"p": np.array([2.0])}, state, 1e-4)
        expected = 1.0 - 1e-4 * (2.0 / (2.0 + 1e-8))
        assert abs(new_params["p"][0] - expected) < 1e-12

    def test_state_threading(self):
        rng = np.random.default_rng(7)
        params = {"p": rng.standard_normal(5)}
        g1, g2 = rng.standard_normal(5), rng.standard_normal(5)
        state = AdamState(m={"p": np.zeros(5)}, v={"p": np.zeros(5)})
        p1, s1 = adam_step(params, {"p": g1}, state, 1e-3)
        p2, s2 = adam_step(p1, {"p": g2}, s1, 1e-3)
        assert s2.step == 2
        # replay from scratch gives the identical trajectory
        q1, t1 = adam_step(params, {"p": g1},
                           AdamState(m={"p": np.zeros(5)}, v={"p": np.zeros(5)}), 1e-3)
        q2, _ = adam_step(q1, {"p": g2}, t1, 1e-3)
        assert np.array_equal(p2["p"], q2["p"])

    def test_shape_mismatch(self):
        params = {"p": np.zeros(3)}
        state = AdamState(m={"p": np.zeros(3)}, v={"p": np.zeros(3)})
        with pytest.raises(DataError):
            adam_step(params, {"p": np.zeros(4)}, state, 1e-3)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        params = _tiny_params(seed=9)
        opt = init_adam(params)
        path = tmp_path / "m.ckpt"
        checkpoint_save(path, params, TINY, step=123, adam=opt)
        ck = checkpoint_load(path)
        assert ck.step == 123
        assert ck.scorer == TINY
        assert set(ck.params) == set(params)
        for k in params:
            assert np.array_equal(ck.params[k], params[k])
        assert ck.adam is not None and ck.adam.step == 0

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        checkpoint_save(path, _tiny_params(), TINY, step=0)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="magic"):
            checkpoint_load(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        checkpoint_save(path, _tiny_params(), TINY, step=0)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError):
            checkpoint_load(path)

    def test_behavioral_roundtrip(self, tmp_path):
        params = _tiny_params(seed=11)
        rng = np.random.default_rng(8)
        batch = normalize_patches(rng.integers(0, 256, (3, 16, 16, 3), dtype=np.uint8))
        before, _ = forward_patch(params, batch, TINY)
        path = tmp_path / "m.ckpt"
        checkpoint_save(path, params, TINY, step=1)
        after, _ = forward_patch(checkpoint_load(path).params, batch, TINY)
        assert np.array_equal(before, after)
