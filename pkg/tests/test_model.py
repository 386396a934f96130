import numpy as np
import pytest

from han.attention import AttentionConfig
from han.autodiff import GradientTape, backward
from han.data import HandPartition
from han.errors import CheckpointError, ConfigError, UsageError
from han.model import (
    HANConfig,
    HANModel,
    extract_attention,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from han.train import cross_entropy

from conftest import MIXED_PARTITION, TOY_PARTITION, tiny_config
from oracles import central_difference, max_relative_error, scalar_tiny_model_reference

RS = np.random.RandomState(31)


def rand_frames(config):
    return RS.uniform(-1.0, 1.0, (config.frames, config.joint_count, 3))


class TestForwardBasics:
    def test_logit_shape_and_finiteness(self):
        config = HANConfig()
        model = HANModel(config, seed=3)
        logits = forward(rand_frames(config), model)
        assert logits.shape == (14,)
        assert np.all(np.isfinite(logits.data))

    def test_eval_determinism(self):
        config = tiny_config(dropout=0.3)
        model = HANModel(config, seed=4, dtype=np.float64)
        x = rand_frames(config)
        assert np.array_equal(forward(x, model).data, forward(x, model).data)

    def test_frame_count_checked(self):
        config = tiny_config()
        model = HANModel(config, seed=1)
        with pytest.raises(UsageError, match="frames"):
            forward(RS.uniform(-1, 1, (5, 6, 3)), model)

    def test_joint_count_checked(self):
        config = tiny_config()
        model = HANModel(config, seed=1)
        with pytest.raises(ConfigError, match="joints"):
            forward(RS.uniform(-1, 1, (2, 7, 3)), model)

    def test_registry_count_at_defaults(self):
        model = HANModel(HANConfig(), seed=0)
        assert model.param_count() == 527_118

    def test_shared_blocks_are_identical_objects(self):
        model = HANModel(tiny_config(), seed=2)
        for p in range(6):
            assert model.j_att_for_part(p) is model.j_att_for_part(0)
        for s in range(7):
            assert model.t_att_for_stream(s) is model.t_att_for_stream(0)

    def test_unshared_blocks_are_distinct(self):
        model = HANModel(tiny_config(share_j_att=False, share_t_att=False), seed=2)
        assert len({id(model.j_att_for_part(p)) for p in range(6)}) == 6
        assert len({id(model.t_att_for_stream(s)) for s in range(7)}) == 7
        names = [n for n, _ in model.parameters()]
        assert len(names) == len(set(names))


class TestTinyOracle:
    def test_logits_match_straight_line_reference(self):
        # d_model=4, one head, T=2, six single-joint parts, all PEs on
        config = HANConfig(
            attention=AttentionConfig(d_model=4, n_heads=1, d_head=4, dropout_rate=0.0),
            frames=2,
            class_count=3,
            partition=TOY_PARTITION,
        )
        model = HANModel(config, seed=13, dtype=np.float64)
        frames = RS.uniform(-1.0, 1.0, (2, 6, 3))

        def block_dict(params):
            return {
                "wk": params.wk.data.tolist(),
                "wq": params.wq.data.tolist(),
                "wv": params.wv.data.tolist(),
                "wa": params.wa.data.tolist(),
                "ba": params.ba.data.tolist(),
            }

        weights = {
            "joint_w": model.joint_w.data.tolist(),
            "joint_b": model.joint_b.data.tolist(),
            "j_att": block_dict(model.j_att[0]),
            "f_att": block_dict(model.f_att),
            "t_att": block_dict(model.t_att[0]),
            "fusion_att": block_dict(model.fusion_att),
            "cls_w": model.cls_w.data.tolist(),
            "cls_b": model.cls_b.data.tolist(),
        }
        got = forward(frames, model).data
        want = scalar_tiny_model_reference(
            frames.tolist(), weights, [list(p) for p in TOY_PARTITION.parts],
            n_heads=1, d_head=4, pe_flags={"j": True, "f": True, "t": True, "fusion": True},
        )
        assert np.max(np.abs(got - np.asarray(want))) < 1e-9

    def test_multihead_multi_joint_parts_match_reference(self):
        config = HANConfig(
            attention=AttentionConfig(d_model=6, n_heads=2, d_head=3, dropout_rate=0.0),
            frames=3,
            class_count=4,
            partition=MIXED_PARTITION,
        )
        model = HANModel(config, seed=29, dtype=np.float64)
        frames = RS.uniform(-1.0, 1.0, (3, 8, 3))
        weights = {
            "joint_w": model.joint_w.data.tolist(),
            "joint_b": model.joint_b.data.tolist(),
            "j_att": {k: getattr(model.j_att[0], k).data.tolist() for k in ("wk", "wq", "wv", "wa", "ba")},
            "f_att": {k: getattr(model.f_att, k).data.tolist() for k in ("wk", "wq", "wv", "wa", "ba")},
            "t_att": {k: getattr(model.t_att[0], k).data.tolist() for k in ("wk", "wq", "wv", "wa", "ba")},
            "fusion_att": {k: getattr(model.fusion_att, k).data.tolist() for k in ("wk", "wq", "wv", "wa", "ba")},
            "cls_w": model.cls_w.data.tolist(),
            "cls_b": model.cls_b.data.tolist(),
        }
        got = forward(frames, model).data
        want = scalar_tiny_model_reference(
            frames.tolist(), weights, [list(p) for p in MIXED_PARTITION.parts],
            n_heads=2, d_head=3, pe_flags={"j": True, "f": True, "t": True, "fusion": True},
        )
        assert np.max(np.abs(got - np.asarray(want))) < 1e-9


class TestPredict:
    def test_probabilities_sum_to_one(self):
        config = tiny_config()
        model = HANModel(config, seed=6)
        cls, probs = predict(rand_frames(config), model)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        assert 0 <= cls < config.class_count

    def test_equal_logits_tie_break_lowest_index(self):
        config = tiny_config()
        model = HANModel(config, seed=6)
        model.cls_w.data[:] = 0
        model.cls_b.data[:] = 0
        cls, probs = predict(rand_frames(config), model)
        assert cls == 0
        assert np.allclose(probs, 1.0 / config.class_count)


class TestGradients:
    def test_full_model_gradcheck_tiny_config(self):
        config = tiny_config(dropout=0.0)
        model = HANModel(config, seed=17, dtype=np.float64)
        frames = rand_frames(config)
        label = 2

        def loss_value():
            return cross_entropy(forward(frames, model), label).item()

        with GradientTape() as tape:
            loss = cross_entropy(forward(frames, model), label)
        backward(loss, tape)
        for name, p in model.parameters():
            got = p.grad if p.grad is not None else np.zeros_like(p.data)
            want = central_difference(loss_value, p.data)
            assert max_relative_error(got, want) < 1e-4, f"gradient mismatch for {name}"


class TestPermutationSymmetries:
    def no_pe_model(self, partition=MIXED_PARTITION, frames=3):
        config = HANConfig(
            attention=AttentionConfig(d_model=6, n_heads=2, d_head=3, dropout_rate=0.0),
            frames=frames,
            class_count=4,
            partition=partition,
            pe_j=False, pe_f=False, pe_t=False, pe_fusion=False,
        )
        return HANModel(config, seed=23, dtype=np.float64)

    def test_joint_permutation_within_part(self):
        model = self.no_pe_model()
        frames = RS.uniform(-1, 1, (3, 8, 3))
        swapped = frames.copy()
        swapped[:, [0, 1]] = swapped[:, [1, 0]]  # part 0 holds joints (0, 1)
        a = forward(frames, model).data
        b = forward(swapped, model).data
        assert np.max(np.abs(a - b)) < 1e-5

    def test_part_permutation(self):
        # relabel the two 2-joint parts; inputs move with the partition
        model = self.no_pe_model()
        frames = RS.uniform(-1, 1, (3, 8, 3))
        permuted_partition = HandPartition(parts=((2, 3), (0, 1), (4,), (5,), (6,), (7,)), name="toy8p")
        permuted_model = self.no_pe_model(partition=permuted_partition)
        for (_, a), (_, b) in zip(model.parameters(), permuted_model.parameters()):
            b.data = a.data.copy()
        a = forward(frames, model).data
        b = forward(frames, permuted_model).data
        assert np.max(np.abs(a - b)) < 1e-5

    def test_frame_permutation_without_pe(self):
        model = self.no_pe_model()
        frames = RS.uniform(-1, 1, (3, 8, 3))
        perm = np.array([2, 0, 1])
        a = forward(frames, model).data
        b = forward(frames[perm], model).data
        assert np.max(np.abs(a - b)) < 1e-5

    def test_stream_permutation_without_pe(self):
        # permuting the fusion inputs directly exercises the 7-stream level
        from han.model import _fusion_stage
        from han import autodiff as ad

        model = self.no_pe_model()
        streams = ad.constant(RS.uniform(-1, 1, (7, 6)), dtype=np.float64)
        base = _fusion_stage(model, streams, False, None, None).data
        perm = RS.permutation(7)
        moved = _fusion_stage(model, ad.constant(streams.data[perm]), False, None, None).data
        assert np.max(np.abs(base - moved)) < 1e-5

    def test_frame_permutation_with_pe_changes_logits(self):
        config = tiny_config(frames=4)
        model = HANModel(config, seed=3, dtype=np.float64)
        frames = RS.uniform(-1, 1, (4, 6, 3))
        perm = np.array([3, 2, 1, 0])
        a = forward(frames, model).data
        b = forward(frames[perm], model).data
        assert np.max(np.abs(a - b)) > 1e-6


class TestExtractAttention:
    def make(self):
        config = tiny_config(frames=3)
        return config, HANModel(config, seed=19, dtype=np.float64)

    def test_f_site_is_row_stochastic_6x6(self):
        config, model = self.make()
        maps = extract_attention(rand_frames(config), model, "F", frame=1)
        assert maps.head_avg.shape == (6, 6)
        assert np.allclose(maps.head_avg.sum(axis=1), 1.0, atol=1e-6)
        assert maps.per_head.shape == (2, 6, 6)

    def test_t_site_frame_sums(self):
        config, model = self.make()
        maps = extract_attention(rand_frames(config), model, "T", stream=6)
        assert maps.frame_sums.shape == (3,)
        assert maps.frame_sums.sum() == pytest.approx(3.0, abs=1e-5)

    def test_identical_frames_give_equal_frame_sums(self):
        # the symmetry needs the temporal position embedding off; with it on,
        # tokens of identical frames still differ by their frame index
        config = tiny_config(frames=3, pe_t=False)
        model = HANModel(config, seed=19, dtype=np.float64)
        one = RS.uniform(-1, 1, (1, 6, 3))
        frames = np.repeat(one, 3, axis=0)
        maps = extract_attention(frames, model, "T", stream=2)
        assert np.max(np.abs(maps.frame_sums - maps.frame_sums[0])) < 1e-5

    def test_j_and_fusion_sites(self):
        config, model = self.make()
        x = rand_frames(config)
        j_maps = extract_attention(x, model, "J", frame=0, part=3)
        assert j_maps.head_avg.shape == (1, 1)
        fusion = extract_attention(x, model, "Fusion")
        assert fusion.head_avg.shape == (7, 7)
        assert np.allclose(fusion.head_avg.sum(axis=1), 1.0, atol=1e-6)

    def test_selector_validation(self):
        config, model = self.make()
        x = rand_frames(config)
        with pytest.raises(UsageError):
            extract_attention(x, model, "Q")
        with pytest.raises(UsageError):
            extract_attention(x, model, "F")  # missing frame
        with pytest.raises(UsageError):
            extract_attention(x, model, "T", stream=9)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        config = tiny_config(share_t_att=False)
        model = HANModel(config, seed=8)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for (name_a, a), (name_b, b) in zip(model.parameters(), loaded.parameters()):
            assert name_a == name_b
            assert a.data.dtype == b.data.dtype
            assert np.array_equal(a.data, b.data)
        assert loaded.config.to_dict() == config.to_dict()
        # saving the loaded model reproduces the bytes exactly
        path2 = str(tmp_path / "m2.ckpt")
        save_checkpoint(loaded, path2)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"HAN-CKPT v9\n" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="HAN-CKPT"):
            load_checkpoint(str(path))

    def test_truncated_file_rejected(self, tmp_path):
        config = tiny_config()
        model = HANModel(config, seed=8)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path)
        blob = open(path, "rb").read()
        path_t = str(tmp_path / "t.ckpt")
        open(path_t, "wb").write(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path_t)
