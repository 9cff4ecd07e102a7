import numpy as np
import pytest

from miolab.data_augment import VectorDatasetSpec, make_vector_dataset
from miolab.evaluation import (
    ProbeConfig,
    extract_features,
    is_collapsed,
    linear_probe,
    pairwise_similarity_stats,
)
from miolab.model import Layer, MlpSpec, ModelSpec, ModelState, default_model_spec, init_params
from miolab.numerics import DimensionError, DomainError, Rng
from miolab.pairing import build_pairs


@pytest.fixture(scope="module")
def blobs():
    spec = VectorDatasetSpec(samples_per_class=128, seed=4)
    x, y = make_vector_dataset(spec)
    xt, yt = make_vector_dataset(spec, split="test")
    return x, y, xt, yt


def test_identity_encoder_features():
    spec = ModelSpec(MlpSpec((3, 3), ("identity",), ("none",), bias=False), MlpSpec((3, 2), ("identity",)))
    state = ModelState([Layer(np.eye(3), np.zeros(3))], [Layer(np.ones((3, 2)), np.zeros(2))])
    x = Rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(extract_features(state, spec, x), x)
    with pytest.raises(DimensionError):
        extract_features(state, spec, np.ones((5, 4)))


def test_features_deterministic():
    spec = default_model_spec()
    state = init_params(spec, Rng(0))
    x = Rng(1).normal(size=(40, 32))
    np.testing.assert_array_equal(extract_features(state, spec, x), extract_features(state, spec, x))


def test_one_hot_features_are_perfect():
    y = np.tile(np.arange(4), 50)
    yt = np.tile(np.arange(4), 10)
    rep = linear_probe(np.eye(4)[y], y, np.eye(4)[yt], yt)
    assert rep.test_accuracy == 1.0
    assert rep.train_accuracy == 1.0


def test_shuffled_labels_are_chance(blobs):
    x, y, xt, yt = blobs
    rng = Rng(9)
    rep = linear_probe(x, rng.permutation(y), xt, Rng(10).permutation(yt))
    assert abs(rep.test_accuracy - 0.25) <= 0.05


def test_rotation_invariance(blobs):
    x, y, xt, yt = blobs
    q, _ = np.linalg.qr(Rng(11).normal(size=(32, 32)))
    a = linear_probe(x, y, xt, yt, ProbeConfig(standardize=False))
    b = linear_probe(x @ q, y, xt @ q, yt, ProbeConfig(standardize=False))
    assert abs(a.test_accuracy - b.test_accuracy) <= 0.02


def test_single_class_rejected():
    with pytest.raises(DomainError):
        linear_probe(np.ones((10, 2)), np.zeros(10, int), np.ones((3, 2)), np.zeros(3, int))
    with pytest.raises(DimensionError):
        linear_probe(np.ones((10, 2)), np.arange(10) % 2, np.ones((3, 3)), np.zeros(3, int))


def test_probe_config_validation():
    with pytest.raises(DomainError):
        ProbeConfig(decay=0.0)
    with pytest.raises(DomainError):
        ProbeConfig(epochs=0)
    with pytest.raises(DomainError):
        ProbeConfig(val_fraction=1.0)


def test_early_stopping_not_worse_than_completion(blobs):
    x, y, xt, yt = blobs
    stopped = linear_probe(x, y, xt, yt, ProbeConfig(patience=3))
    full = linear_probe(x, y, xt, yt, ProbeConfig(patience=1000))
    assert full.epochs_run == 100
    assert stopped.val_accuracy >= full.trace[-1]
    assert stopped.val_accuracy == max(stopped.trace)
    assert all(0 <= a <= 1 for a in stopped.trace)


def test_probe_reproducible(blobs):
    x, y, xt, yt = blobs
    a = linear_probe(x, y, xt, yt, ProbeConfig(seed=3))
    b = linear_probe(x, y, xt, yt, ProbeConfig(seed=3))
    assert a == b


def test_similarity_stats_identical_vectors():
    stats = pairwise_similarity_stats(np.ones((8, 3)), build_pairs(4))
    assert stats["mean_pos"] == pytest.approx(1.0, abs=1e-15)
    assert stats["mean_neg"] == pytest.approx(1.0, abs=1e-15)
    assert is_collapsed(stats)


def test_similarity_stats_orthogonal_duplicates():
    # two samples per class, each view an exact copy; the classes are orthogonal
    z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
    stats = pairwise_similarity_stats(z, build_pairs(2))
    assert stats["mean_pos"] == 1.0
    assert stats["mean_neg"] == 0.0
    assert not is_collapsed(stats)
    with pytest.raises(DimensionError):
        pairwise_similarity_stats(z[:3], build_pairs(2))
