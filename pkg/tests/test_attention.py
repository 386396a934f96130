import math

import numpy as np
import pytest

from han import autodiff as ad
from han.attention import (
    AttentionConfig,
    AttentionParams,
    PositionEmbeddingTable,
    attend,
    attention_weights,
    init_attention_params,
    positional_embedding,
)
from han.errors import ConfigError, ShapeError, UsageError
from han.rng import Rng

from oracles import scalar_attention_matrix, scalar_attention_reference

RS = np.random.RandomState(77)


def small_config(**kw):
    defaults = dict(d_model=6, n_heads=2, d_head=3, dropout_rate=0.0)
    defaults.update(kw)
    return AttentionConfig(**defaults)


def make_params(config, seed=0, dtype=np.float64):
    return init_attention_params(config, Rng(seed, "params"), dtype=dtype)


class TestPositionalEmbedding:
    def test_position_zero_alternates_zero_one(self):
        for d in (2, 4, 7, 128):
            row = positional_embedding(0, d)
            want = [0.0 if c % 2 == 0 else 1.0 for c in range(d)]
            assert np.allclose(row, want)

    def test_position_one_channel_zero_is_sin_one(self):
        assert positional_embedding(1, 4)[0] == pytest.approx(math.sin(1.0), abs=1e-12)
        assert positional_embedding(1, 4)[0] == pytest.approx(0.84147, abs=1e-5)

    def test_formula_per_channel(self):
        d = 10
        for pos in (1, 3, 9):
            row = positional_embedding(pos, d)
            for c in range(d):
                angle = pos / (10000.0 ** (2 * (c // 2) / d))
                want = math.sin(angle) if c % 2 == 0 else math.cos(angle)
                assert row[c] == pytest.approx(want, abs=1e-12)

    def test_rows_bounded(self):
        table = PositionEmbeddingTable(8, 16)
        assert np.all(table.rows >= -1.0) and np.all(table.rows <= 1.0)

    def test_negative_position_rejected(self):
        with pytest.raises(UsageError):
            positional_embedding(-1, 4)


class TestConfigAndParams:
    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            AttentionConfig(d_model=0)
        with pytest.raises(ConfigError):
            AttentionConfig(dropout_rate=1.0)

    def test_default_block_parameter_count(self):
        config = AttentionConfig()
        assert config.param_count() == 131_200
        params = make_params(config)
        total = sum(t.size for _, t in params.named("blk"))
        assert total == 131_200

    def test_init_bounds_follow_fan_in(self):
        config = small_config()
        params = make_params(config, seed=3)
        assert np.all(np.abs(params.wk.data) <= 1 / math.sqrt(config.d_model))
        assert np.all(np.abs(params.wa.data) <= 1 / math.sqrt(config.heads_width))
        assert np.all(params.ba.data == 0)


class TestAttend:
    def test_single_token_weights_and_output(self):
        config = small_config()
        params = make_params(config)
        x = RS.uniform(-1, 1, (1, config.d_model))
        per_head, avg = attention_weights(x, params, config)
        assert per_head.shape == (2, 1, 1)
        assert np.allclose(per_head, 1.0)
        assert np.allclose(avg, [[1.0]])
        # output equals the token plus its feed-forward branch
        out = attend(x, params, config).data
        ref = scalar_attention_reference(
            x.tolist(), params.wk.data.tolist(), params.wq.data.tolist(), params.wv.data.tolist(),
            params.wa.data.tolist(), params.ba.data.tolist(), config.n_heads, config.d_head,
        )
        assert np.allclose(out, ref, atol=1e-12)

    def test_identical_inputs_give_uniform_weights(self):
        config = small_config()
        params = make_params(config, seed=5)
        n = 5
        x = np.tile(RS.uniform(-1, 1, (1, config.d_model)), (n, 1))
        per_head, avg = attention_weights(x, params, config)
        assert np.max(np.abs(per_head - 1.0 / n)) < 1e-6

    def test_matches_scalar_oracle_hand_set_params(self):
        # d_model=2, one head of width 2, two tokens, hand-set weights
        config = AttentionConfig(d_model=2, n_heads=1, d_head=2, dropout_rate=0.0)
        params = AttentionParams(
            wk=ad.parameter([[0.3, -0.2], [0.1, 0.4]], dtype=np.float64),
            wq=ad.parameter([[-0.5, 0.7], [0.2, 0.1]], dtype=np.float64),
            wv=ad.parameter([[0.9, 0.3], [-0.4, 0.6]], dtype=np.float64),
            wa=ad.parameter([[0.2, -0.3], [0.5, 0.8]], dtype=np.float64),
            ba=ad.parameter([0.05, -0.1], dtype=np.float64),
        )
        inputs = [[0.6, -0.2], [-0.3, 0.9]]
        got = attend(np.asarray(inputs), params, config).data
        want = scalar_attention_reference(
            inputs, [[0.3, -0.2], [0.1, 0.4]], [[-0.5, 0.7], [0.2, 0.1]],
            [[0.9, 0.3], [-0.4, 0.6]], [[0.2, -0.3], [0.5, 0.8]], [0.05, -0.1], 1, 2,
        )
        assert np.max(np.abs(got - np.asarray(want))) < 1e-10

    def test_matches_scalar_oracle_random_params(self):
        config = small_config(n_heads=3, d_head=2)
        params = make_params(config, seed=11)
        x = RS.uniform(-1, 1, (4, config.d_model))
        got = attend(x, params, config).data
        want = scalar_attention_reference(
            x.tolist(), params.wk.data.tolist(), params.wq.data.tolist(), params.wv.data.tolist(),
            params.wa.data.tolist(), params.ba.data.tolist(), config.n_heads, config.d_head,
        )
        assert np.max(np.abs(got - np.asarray(want))) < 1e-10

    def test_width_mismatch_errors(self):
        config = small_config()
        params = make_params(config)
        with pytest.raises(ShapeError):
            attend(RS.uniform(-1, 1, (3, config.d_model + 1)), params, config)

    def test_empty_input_errors(self):
        config = small_config()
        params = make_params(config)
        with pytest.raises(UsageError):
            attend(np.empty((0, config.d_model)), params, config)

    def test_eval_determinism(self):
        config = small_config(dropout_rate=0.2)
        params = make_params(config, seed=2)
        x = RS.uniform(-1, 1, (5, config.d_model))
        a = attend(x, params, config, training=False).data
        b = attend(x, params, config, training=False).data
        assert np.array_equal(a, b)

    def test_permutation_invariance_of_pooled_output(self):
        # no position information: attention plus pooling cannot see token order
        config = small_config()
        params = make_params(config, seed=9)
        x = RS.uniform(-1, 1, (6, config.d_model))
        perm = RS.permutation(6)
        base = attend(x, params, config).data
        shuffled = attend(x[perm], params, config).data
        assert np.max(np.abs(base - shuffled)) < 1e-5

    def test_position_embedding_breaks_permutation_invariance(self):
        config = small_config()
        params = make_params(config, seed=9)
        table = PositionEmbeddingTable(10, config.d_model)
        x = RS.uniform(-1, 1, (6, config.d_model))
        pe = table.block(range(1, 7), dtype=np.float64)
        perm = np.roll(np.arange(6), 1)
        base = attend(x + pe, params, config).data
        moved = attend(x[perm] + pe, params, config).data
        assert np.max(np.abs(base - moved)) > 1e-4


class TestAttentionWeights:
    def test_rows_sum_to_one(self):
        config = small_config(n_heads=4, d_head=2)
        params = make_params(config, seed=21)
        x = RS.uniform(-1, 1, (7, config.d_model))
        per_head, avg = attention_weights(x, params, config)
        assert np.allclose(per_head.sum(axis=-1), 1.0, atol=1e-6)
        assert np.allclose(avg.sum(axis=-1), 1.0, atol=1e-6)

    def test_head_average_is_mean_of_heads(self):
        config = small_config(n_heads=4, d_head=2)
        params = make_params(config, seed=22)
        x = RS.uniform(-1, 1, (5, config.d_model))
        per_head, avg = attention_weights(x, params, config)
        assert np.max(np.abs(avg - per_head.mean(axis=0))) < 1e-7

    def test_matches_scalar_matrix_oracle(self):
        config = small_config(n_heads=2, d_head=3)
        params = make_params(config, seed=23)
        x = RS.uniform(-1, 1, (4, config.d_model))
        per_head, _ = attention_weights(x, params, config)
        want = scalar_attention_matrix(
            x.tolist(), params.wk.data.tolist(), params.wq.data.tolist(), config.n_heads, config.d_head
        )
        assert np.max(np.abs(per_head - np.asarray(want))) < 1e-10

    def test_single_token_matrix(self):
        config = small_config()
        params = make_params(config)
        _, avg = attention_weights(RS.uniform(-1, 1, (1, config.d_model)), params, config)
        assert np.allclose(avg, [[1.0]])
