import numpy as np
import pytest

from han.data import load_manifest, uniform_sample
from han.errors import ConfigError
from han.rng import Rng
from han.synth import SynthConfig, generate_dataset, generate_sequence, rest_pose


def test_rest_pose_shapes():
    assert rest_pose(22).shape == (22, 3)
    assert rest_pose(21).shape == (21, 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(classes=1)
    with pytest.raises(ConfigError):
        SynthConfig(test_fraction=1.0)


def test_sequence_counts_and_manifest(tmp_path):
    config = SynthConfig(classes=4, per_class=16, seed=3)
    manifest = generate_dataset(config, str(tmp_path))
    ds = load_manifest(manifest)
    assert ds.class_count == 4
    assert len(ds.entries) == 64
    assert len(ds.split_entries("train")) == 48
    assert len(ds.split_entries("test")) == 16
    labels = {e.label for e in ds.entries}
    assert labels == {0, 1, 2, 3}


def test_same_seed_identical_bytes(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    generate_dataset(SynthConfig(seed=11), str(a_dir))
    generate_dataset(SynthConfig(seed=11), str(b_dir))
    for name in sorted(p.name for p in (a_dir / "seq").iterdir()):
        assert (a_dir / "seq" / name).read_bytes() == (b_dir / "seq" / name).read_bytes()
    assert (a_dir / "manifest.tsv").read_bytes() == (b_dir / "manifest.tsv").read_bytes()


def test_frame_counts_within_bounds():
    config = SynthConfig(min_frames=12, max_frames=19)
    for i in range(10):
        seq = generate_sequence(i % config.classes, config, Rng(1, f"t/{i}"))
        assert 12 <= seq.frame_count <= 19


def test_nearest_template_classifier_separates(tmp_path):
    # template oracle: per-class mean of train sequences, nearest-L2 on test
    config = SynthConfig(classes=4, per_class=16, seed=7)
    ds = load_manifest(generate_dataset(config, str(tmp_path)))
    train = ds.load_split("train")
    test = ds.load_split("test")

    def flat8(seq):
        return uniform_sample(seq, 8).frames.reshape(-1)

    templates = {}
    for c in range(4):
        members = [flat8(s) for s in train if s.label == c]
        templates[c] = np.mean(members, axis=0)
    correct = 0
    for seq in test:
        v = flat8(seq)
        pred = min(templates, key=lambda c: np.linalg.norm(v - templates[c]))
        correct += pred == seq.label
    assert correct / len(test) > 0.95
