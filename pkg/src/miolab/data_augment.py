"""Synthetic data, two-view augmentation and CIFAR-10 binary ingestion."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError, Rng

__all__ = [
    "VectorDatasetSpec",
    "VectorAugment",
    "ImageSample",
    "AugmentPolicy",
    "CifarFormatError",
    "simplex_means",
    "make_vector_dataset",
    "augment_vector",
    "augment_image",
    "two_views",
    "blur_kernel_size",
    "load_cifar10_binary",
    "write_cifar10_binary",
]


# ---------------------------------------------------------------------------
# vectors


@dataclass(frozen=True)
class VectorDatasetSpec:
    num_classes: int = 4
    samples_per_class: int = 256
    ambient_dim: int = 32
    class_separation: float = 5.0
    within_class_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.ambient_dim < 1:
            raise DomainError("class count, class size and dimension must be positive")
        if self.class_separation <= 0 or self.within_class_sigma < 0:
            raise DomainError("separation must be > 0 and sigma >= 0")
        if self.ambient_dim < self.num_classes - 1:
            raise DomainError(
                f"{self.num_classes} equidistant means need ambient_dim >= {self.num_classes - 1}"
            )


def simplex_means(num_classes: int, dim: int, separation: float, rng: Rng | None = None) -> np.ndarray:
    """``num_classes`` points in ``R^dim`` with every pairwise distance equal
    to ``separation`` and centroid at the origin.

    Built from centred basis vectors, then optionally rotated by a random
    orthogonal matrix so the structure is not axis aligned.
    """
    c = num_classes
    e = np.eye(c) - 1.0 / c  # rows pairwise at distance sqrt(2)
    # orthonormal basis of the (c-1)-dim span, so the points fit in dim >= c-1
    u, _, _ = np.linalg.svd(e.T, full_matrices=False)
    coords = e @ u[:, : max(c - 1, 1)]
    pts = np.zeros((c, dim))
    pts[:, : coords.shape[1]] = coords * (separation / math.sqrt(2.0))
    if rng is not None and dim > 1:
        q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
        q = q * np.sign(np.diag(r))
        pts = pts @ q.T
    return pts


def make_vector_dataset(spec: VectorDatasetSpec, split: str = "train", samples_per_class: int | None = None):
    """Isotropic Gaussian classes around simplex means.

    Returns ``(x, labels)`` with ``x`` of shape
    ``(num_classes * samples_per_class, ambient_dim)``, class-major order.
    ``split="test"`` draws fresh noise around the same class means.
    """
    if split not in ("train", "test"):
        raise DomainError(f"split must be 'train' or 'test', got {split!r}")
    n = spec.samples_per_class if samples_per_class is None else int(samples_per_class)
    root = Rng(spec.seed)
    means = simplex_means(spec.num_classes, spec.ambient_dim, spec.class_separation, root.substream(0))
    noise_rng = root.substream(1 if split == "train" else 2)
    noise = noise_rng.normal(0.0, 1.0, (spec.num_classes, n, spec.ambient_dim))
    x = means[:, None, :] + spec.within_class_sigma * noise
    labels = np.repeat(np.arange(spec.num_classes), n)
    return x.reshape(-1, spec.ambient_dim), labels


@dataclass(frozen=True)
class VectorAugment:
    noise_sigma: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.2)
    dropout_p: float = 0.1


def augment_vector(x, rng: Rng, noise_sigma: float = 0.0, scale_range=(1.0, 1.0), dropout_p: float = 0.0) -> np.ndarray:
    """Gaussian jitter, then a random global scale, then coordinate dropout.

    The three draws always happen, so the stream position after a call does
    not depend on the knob values.
    """
    if noise_sigma < 0 or not 0 <= dropout_p <= 1:
        raise DomainError("noise_sigma must be >= 0 and dropout_p in [0, 1]")
    lo, hi = scale_range
    if lo > hi:
        raise DomainError("scale_range must be (low, high) with low <= high")
    x = np.asarray(x, dtype=np.float64)
    noise = rng.normal(0.0, 1.0, x.shape)
    scale = rng.uniform(0.0, 1.0)
    keep = rng.random(x.shape) >= dropout_p
    out = (x + noise_sigma * noise) * (lo + (hi - lo) * scale)
    return np.where(keep, out, 0.0)


# ---------------------------------------------------------------------------
# images


@dataclass
class ImageSample:
    pixels: np.ndarray  # (l, l, 3) float64 in [0, 1]
    label: int = -1

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
            raise DomainError(f"image must be (l, l, 3), got {p.shape}")
        self.pixels = np.clip(p, 0.0, 1.0)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


def blur_kernel_size(side: int) -> int:
    """Blur width ``int(l / 10)`` (+1 for odd ``l``), bumped to the next odd
    number when even so the kernel has a centre tap."""
    k = int(side / 10)
    if side % 2:
        k += 1
    if k % 2 == 0:
        k += 1
    return max(k, 1)


@dataclass(frozen=True)
class AugmentPolicy:
    flip_p: float = 0.5
    crop_p: float = 0.5
    crop_area: tuple[float, float] = (0.08, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    jitter_strength: float = 0.5
    grayscale_p: float = 0.2
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    solarize_p: float = 0.2
    solarize_threshold: float = 0.5

    def __post_init__(self):
        for name in ("flip_p", "crop_p", "grayscale_p", "solarize_p"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DomainError(f"{name} must be a probability, got {v}")
        if self.jitter_strength < 0:
            raise DomainError("jitter_strength must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(flip_p=0.0, crop_p=0.0, jitter_strength=0.0, grayscale_p=0.0, solarize_p=0.0)


LUMA = np.array([0.299, 0.587, 0.114])


def _resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres."""
    h, w, _ = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy, wx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _random_resized_crop(img: np.ndarray, rng: Rng, area, ratio) -> np.ndarray:
    l = img.shape[0]
    frac = rng.uniform(*area)
    r = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
    cw = min(max(int(round(math.sqrt(frac * l * l * r))), 1), l)
    ch = min(max(int(round(math.sqrt(frac * l * l / r))), 1), l)
    top = int(rng.integers(0, l - ch + 1))
    left = int(rng.integers(0, l - cw + 1))
    return _resize(img[top : top + ch, left : left + cw], l, l)


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(-1)
    mn = rgb.min(-1)
    d = mx - mn
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1), 0.0)
    dd = np.where(d > 0, d, 1)
    h = np.where(mx == r, (g - b) / dd, np.where(mx == g, 2 + (b - r) / dd, 4 + (r - g) / dd))
    h = np.where(d > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, mx], -1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [
        np.stack([v, t, p], -1),
        np.stack([q, v, p], -1),
        np.stack([p, v, t], -1),
        np.stack([p, q, v], -1),
        np.stack([t, p, v], -1),
        np.stack([v, p, q], -1),
    ]
    out = np.zeros_like(hsv)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def _color_jitter(img: np.ndarray, rng: Rng, s: float) -> np.ndarray:
    db, dc, ds = rng.uniform(-0.8, 0.8, 3) * s
    dh = rng.uniform(-0.2, 0.2) * s
    if s == 0:
        return img
    out = np.clip(img * (1 + db), 0, 1)
    gray_mean = float(np.mean(out @ LUMA))
    out = np.clip((out - gray_mean) * (1 + dc) + gray_mean, 0, 1)
    gray = (out @ LUMA)[..., None]
    out = np.clip((out - gray) * (1 + ds) + gray, 0, 1)
    if dh != 0:
        hsv = _rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        out = _hsv_to_rgb(hsv)
    return out


def _gaussian_blur(img: np.ndarray, k: int, sigma: float) -> np.ndarray:
    r = k // 2
    t = np.arange(-r, r + 1)
    w = np.exp(-0.5 * (t / sigma) ** 2)
    w /= w.sum()
    pad = np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")
    rows = sum(w[i] * pad[i : i + img.shape[0], :, :] for i in range(k))
    return sum(w[i] * rows[:, i : i + img.shape[1], :] for i in range(k))


def augment_image(img: ImageSample, policy: AugmentPolicy, rng: Rng, trace: list | None = None) -> ImageSample:
    """Flip, resized crop, colour jitter, grayscale, blur (only for sides
    above 32) and solarize, in that order.

    Each stage draws its coin from its own substream of ``rng``, so turning a
    stage on or off never shifts the randomness of the others. Names of the
    stages that fired are appended to ``trace`` when given.
    """
    x = img.pixels.copy()
    l = img.side
    fired = trace if trace is not None else []

    r = rng.substream(0)
    if r.random() < policy.flip_p:
        x = x[:, ::-1]
        fired.append("flip")
    r = rng.substream(1)
    if r.random() < policy.crop_p:
        x = _random_resized_crop(x, r, policy.crop_area, policy.crop_ratio)
        fired.append("crop")
    x = _color_jitter(x, rng.substream(2), policy.jitter_strength)
    fired.append("jitter")
    r = rng.substream(3)
    if r.random() < policy.grayscale_p:
        g = x @ LUMA
        x = np.repeat(g[..., None], 3, axis=-1)
        fired.append("grayscale")
    if l > 32:
        r = rng.substream(4)
        x = _gaussian_blur(x, blur_kernel_size(l), r.uniform(*policy.blur_sigma))
        fired.append("blur")
    r = rng.substream(5)
    if r.random() < policy.solarize_p:
        x = np.where(x >= policy.solarize_threshold, 1.0 - x, x)
        fired.append("solarize")
    return ImageSample(np.clip(x, 0.0, 1.0), img.label)


def two_views(sample, policy, rng: Rng):
    """Two independent augmentations of ``sample`` from substreams 0 and 1.

    ``sample`` is an :class:`ImageSample` (``policy`` an
    :class:`AugmentPolicy`) or a 1-D vector (``policy`` a
    :class:`VectorAugment`).
    """
    if isinstance(sample, ImageSample):
        return augment_image(sample, policy, rng.substream(0)), augment_image(sample, policy, rng.substream(1))
    return tuple(
        augment_vector(sample, rng.substream(i), policy.noise_sigma, policy.scale_range, policy.dropout_p)
        for i in (0, 1)
    )


# ---------------------------------------------------------------------------
# CIFAR-10 binary

RECORD = 3073


class CifarFormatError(ValueError):
    pass


def load_cifar10_binary(path, max_records: int | None = None) -> list[ImageSample]:
    """Read ``label byte + 3072 channel-major pixel bytes`` records, at most
    ``max_records`` of them."""
    size = os.path.getsize(path)
    want = size if max_records is None else min(size, int(max_records) * RECORD)
    with open(path, "rb") as fh:
        raw = fh.read(want)
    n, tail = divmod(len(raw), RECORD)
    if tail:
        raise CifarFormatError(f"truncated record at byte offset {n * RECORD} ({tail} of {RECORD} bytes)")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(n, RECORD)
    out = []
    for i, rec in enumerate(arr):
        label = int(rec[0])
        if label > 9:
            raise CifarFormatError(f"label {label} > 9 in record at byte offset {i * RECORD}")
        px = rec[1:].reshape(3, 32, 32).transpose(1, 2, 0) / 255.0
        out.append(ImageSample(px, label))
    return out


def write_cifar10_binary(path, samples) -> None:
    """Inverse of :func:`load_cifar10_binary`; pixels are rounded to bytes."""
    with open(path, "wb") as fh:
        for s in samples:
            if s.side != 32:
                raise DomainError("CIFAR-10 records are 32x32")
            px = np.rint(s.pixels * 255.0).astype(np.uint8).transpose(2, 0, 1)
            fh.write(bytes([s.label]) + px.tobytes())
