import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import miolab.data_augment as da
from miolab.data_augment import (
    AugmentPolicy,
    CifarFormatError,
    ImageSample,
    VectorAugment,
    VectorDatasetSpec,
    augment_image,
    augment_vector,
    blur_kernel_size,
    load_cifar10_binary,
    make_vector_dataset,
    simplex_means,
    two_views,
    write_cifar10_binary,
)
from miolab.numerics import DomainError, Rng


def image(l=8, seed=0):
    return ImageSample(Rng(seed).random((l, l, 3)), label=3)


# ---------------------------------------------------------------------------
# vectors


def test_simplex_equidistant():
    m = simplex_means(5, 7, 3.0, Rng(1))
    d = np.linalg.norm(m[:, None] - m[None], axis=-1)
    off = d[~np.eye(5, dtype=bool)]
    np.testing.assert_allclose(off, 3.0, rtol=1e-12)
    np.testing.assert_allclose(m.mean(axis=0), 0.0, atol=1e-12)


def test_dataset_sigma_zero_is_means():
    spec = VectorDatasetSpec(num_classes=3, samples_per_class=4, ambient_dim=5, within_class_sigma=0.0)
    x, y = make_vector_dataset(spec)
    for c in range(3):
        rows = x[y == c]
        assert np.all(rows == rows[0])


def test_dataset_mean_distance():
    spec = VectorDatasetSpec(num_classes=2, samples_per_class=500, ambient_dim=8, class_separation=10.0, seed=3)
    x, y = make_vector_dataset(spec)
    d = np.linalg.norm(x[y == 0].mean(axis=0) - x[y == 1].mean(axis=0))
    assert abs(d - 10.0) < 0.2


def test_dataset_deterministic_and_splits():
    spec = VectorDatasetSpec(samples_per_class=10)
    a, ya = make_vector_dataset(spec)
    b, yb = make_vector_dataset(spec)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ya, yb)
    t, yt = make_vector_dataset(spec, "test", 7)
    assert t.shape == (28, 32) and not np.array_equal(t[:10], a[:10])
    with pytest.raises(DomainError):
        make_vector_dataset(spec, "val")


def test_dataset_dimension_too_small():
    with pytest.raises(DomainError):
        VectorDatasetSpec(num_classes=5, ambient_dim=3)


def test_augment_vector_examples():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(augment_vector(x, Rng(0)), x)
    assert not augment_vector(x, Rng(0), 0.3, (0.5, 2.0), 1.0).any()
    out = augment_vector(np.array([1.0, 2.0, 3.0]), Rng(5), 0.5, (0.8, 1.2), 0.1)
    np.testing.assert_array_equal(out, [1.6799455497564697, 2.3632733916552917, 3.5095839509543945])


def test_augment_vector_errors():
    with pytest.raises(DomainError):
        augment_vector([1.0], Rng(0), -1.0)
    with pytest.raises(DomainError):
        augment_vector([1.0], Rng(0), 0.0, (2.0, 1.0))


def test_two_views_vectors_independent():
    x = np.zeros(10_000)
    aug = VectorAugment(noise_sigma=1.0, scale_range=(1.0, 1.0), dropout_p=0.0)
    root = Rng(1)
    a, _ = two_views(x, aug, root.substream(0))
    b, _ = two_views(x, aug, root.substream(1))
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.04


def test_two_views_identity_policy():
    img = image()
    a, b = two_views(img, AugmentPolicy.identity(), Rng(2))
    np.testing.assert_array_equal(a.pixels, img.pixels)
    np.testing.assert_array_equal(b.pixels, img.pixels)
    v = np.arange(4.0)
    va, vb = two_views(v, VectorAugment(0.0, (1.0, 1.0), 0.0), Rng(2))
    np.testing.assert_array_equal(va, v)
    np.testing.assert_array_equal(vb, v)


def test_two_views_reproducible():
    img = image(16)
    a1, b1 = two_views(img, AugmentPolicy(), Rng(4))
    a2, b2 = two_views(img, AugmentPolicy(), Rng(4))
    np.testing.assert_array_equal(a1.pixels, a2.pixels)
    np.testing.assert_array_equal(b1.pixels, b2.pixels)
    assert not np.array_equal(a1.pixels, b1.pixels)


# ---------------------------------------------------------------------------
# images


def test_blur_kernel_size_always_odd():
    assert blur_kernel_size(96) == 9
    assert blur_kernel_size(64) == 7
    assert blur_kernel_size(33) == 5
    assert all(blur_kernel_size(l) % 2 == 1 for l in range(1, 300))


def test_blur_never_applied_at_32(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("blur called")

    monkeypatch.setattr(da, "_gaussian_blur", boom)
    img = image(32)
    for seed in range(50):
        trace = []
        augment_image(img, AugmentPolicy(), Rng(seed), trace)
        assert "blur" not in trace


def test_blur_applied_above_32():
    trace = []
    augment_image(image(40), AugmentPolicy(), Rng(0), trace)
    assert "blur" in trace


def test_zero_strength_jitter_identity():
    policy = AugmentPolicy(flip_p=0, crop_p=0, jitter_strength=0.0, grayscale_p=0, solarize_p=0)
    img = image(8)
    trace = []
    out = augment_image(img, policy, Rng(3), trace)
    assert trace == ["jitter"]
    np.testing.assert_array_equal(out.pixels, img.pixels)


def test_solarize_forced():
    policy = AugmentPolicy(flip_p=0, crop_p=0, jitter_strength=0.0, grayscale_p=0, solarize_p=1.0)
    out = augment_image(ImageSample(np.full((8, 8, 3), 0.75)), policy, Rng(0))
    np.testing.assert_allclose(out.pixels, 0.25, rtol=0, atol=1e-15)


def test_grayscale_equal_channels():
    policy = AugmentPolicy(flip_p=0, crop_p=0, jitter_strength=0.0, grayscale_p=1.0, solarize_p=0)
    out = augment_image(image(8, 1), policy, Rng(0)).pixels
    assert np.allclose(out[..., 0], out[..., 1], atol=1e-15) and np.allclose(out[..., 1], out[..., 2], atol=1e-15)


def test_flip_forced():
    policy = AugmentPolicy(flip_p=1.0, crop_p=0, jitter_strength=0.0, grayscale_p=0, solarize_p=0)
    img = image(6)
    np.testing.assert_array_equal(augment_image(img, policy, Rng(0)).pixels, img.pixels[:, ::-1])


@given(st.integers(0, 10_000), st.sampled_from([8, 16, 32, 40]))
def test_augment_image_range_and_shape(seed, l):
    img = image(l, seed)
    out = augment_image(img, AugmentPolicy(jitter_strength=1.0, crop_p=1.0), Rng(seed))
    assert out.pixels.shape == img.pixels.shape
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    assert out.label == img.label


def test_policy_validation():
    with pytest.raises(DomainError):
        AugmentPolicy(flip_p=1.5)
    with pytest.raises(DomainError):
        ImageSample(np.zeros((4, 5, 3)))


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def test_cifar_empty(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    assert load_cifar10_binary(p) == []


def test_cifar_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(bytes([7]) + bytes([255]) * 3072)
    (s,) = load_cifar10_binary(p)
    assert s.label == 7
    assert s.pixels.shape == (32, 32, 3) and np.all(s.pixels == 1.0)


def test_cifar_truncated(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(bytes(3072))
    with pytest.raises(CifarFormatError, match="offset 0"):
        load_cifar10_binary(p)
    p.write_bytes(bytes(3073 + 10))
    with pytest.raises(CifarFormatError, match="offset 3073"):
        load_cifar10_binary(p)


def test_cifar_bad_label(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes([0]) + bytes(3072) + bytes([10]) + bytes(3072))
    with pytest.raises(CifarFormatError, match="label 10"):
        load_cifar10_binary(p)


def test_cifar_channel_layout(tmp_path):
    rec = bytearray(3073)
    rec[0] = 2
    rec[1 + 0 * 1024 + 5 * 32 + 7] = 10  # R at row 5, col 7
    rec[1 + 2 * 1024 + 0] = 20  # B at row 0, col 0
    p = tmp_path / "layout.bin"
    p.write_bytes(bytes(rec))
    (s,) = load_cifar10_binary(p)
    assert s.pixels[5, 7, 0] == 10 / 255 and s.pixels[0, 0, 2] == 20 / 255


def test_cifar_round_trip_bit_exact(tmp_path):
    r = Rng(5)
    raw = r.integers(0, 256, size=(6, 3072)).astype(np.uint8)
    labels = r.integers(0, 10, size=6)
    blob = b"".join(bytes([int(l)]) + row.tobytes() for l, row in zip(labels, raw))
    p = tmp_path / "data.bin"
    p.write_bytes(blob)
    samples = load_cifar10_binary(p)
    assert [s.label for s in samples] == labels.tolist()
    q = tmp_path / "again.bin"
    write_cifar10_binary(q, samples)
    assert q.read_bytes() == blob
    again = load_cifar10_binary(q)
    for a, b in itertools.zip_longest(samples, again):
        np.testing.assert_array_equal(a.pixels, b.pixels)
    assert len(load_cifar10_binary(p, max_records=2)) == 2
