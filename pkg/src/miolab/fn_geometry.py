"""Planar model of the false negatives that share a class with an anchor.

False negatives sit around the class centroid ``c = (x_o, y_o)`` at
``c + r_i (cos t_i, sin t_i)`` with ``r_i ~ N(0, sigma)`` truncated to
``|r_i| <= 3 sigma``. Their weighted resultant, normalized by ``T_P - 2``,
splits into a centroid-parallel part ``A`` and a scatter part
``B (cos Theta, sin Theta)``. ``phi`` is the angle between the resultant and
the centroid direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .numerics import DomainError, Rng, tree_sum

__all__ = [
    "GeometryConfig",
    "GeometryTrial",
    "PhiStats",
    "PhiCase",
    "symmetric_fn_probability",
    "wrap_angle",
    "resultant",
    "run_trial",
    "trial_from_samples",
    "monte_carlo_phi",
    "classify_phi_case",
]


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=np.float64) + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def symmetric_fn_probability(batch_size: int, num_classes: int, samples_per_class: int) -> float:
    """``(B / (N_c |C|)) ** (B / |C|)``: chance of drawing one false negative
    from each of the ``B / |C|`` equal divisions of a class region.
    """
    b, c, n = int(batch_size), int(num_classes), int(samples_per_class)
    if min(b, c, n) < 1:
        raise DomainError("batch size, class count and class size must be positive")
    if b % c:
        raise DomainError(f"class count {c} must divide batch size {b}")
    per_class = b // c
    if per_class > n:
        raise DomainError(f"cannot draw {per_class} per class from {n} samples")
    base = b / (n * c)
    return math.exp(per_class * math.log(base))


@dataclass(frozen=True)
class GeometryConfig:
    centroid: tuple[float, float] = (10.0, 0.0)
    sigma: float = 1.0
    eta: int = 8
    t_p: int = 256
    weight_mode: Literal["uniform_p", "random_p"] = "uniform_p"
    p: float = 1.0

    def __post_init__(self):
        if math.hypot(*self.centroid) <= 0:
            raise DomainError("centroid must be non-zero")
        if not self.sigma >= 0:
            raise DomainError("sigma must be >= 0")
        if self.eta < 1:
            raise DomainError("eta must be >= 1")
        if self.t_p < 3:
            raise DomainError("t_p must be >= 3")
        if self.eta > self.t_p - 2:
            raise DomainError(f"eta={self.eta} exceeds t_p - 2 = {self.t_p - 2}")
        if self.weight_mode not in ("uniform_p", "random_p"):
            raise DomainError(f"unknown weight mode {self.weight_mode!r}")
        if not 0 <= self.p <= 1:
            raise DomainError("p must lie in [0, 1]")


@dataclass(frozen=True)
class GeometryTrial:
    radii: np.ndarray
    angles: np.ndarray
    weights: np.ndarray
    resultant: tuple[float, float]
    a_vec: tuple[float, float]
    b_mag: float
    theta: float
    phi: float

    @property
    def cos_phi(self) -> float:
        return math.cos(self.phi)


@dataclass(frozen=True)
class PhiStats:
    trials: int
    mean_abs_phi: float
    max_abs_phi: float
    frac_cos_positive: float


def _truncated_normal(rng: Rng, sigma: float, n: int) -> np.ndarray:
    out = rng.normal(0.0, sigma, n) if sigma > 0 else np.zeros(n)
    bad = np.abs(out) > 3 * sigma
    while np.any(bad):
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > 3 * sigma
    return out


def resultant(centroid, radii, angles, weights, t_p: int) -> tuple[float, float]:
    """Weighted resultant ``(1/(T_P - 2)) sum p_i (x_i, y_i)`` of the samples."""
    xo, yo = centroid
    xs = xo + radii * np.cos(angles)
    ys = yo + radii * np.sin(angles)
    return float(tree_sum(weights * xs) / (t_p - 2)), float(tree_sum(weights * ys) / (t_p - 2))


def trial_from_samples(cfg: GeometryConfig, radii, angles, weights) -> GeometryTrial:
    """Decompose a given set of false-negative offsets (no randomness)."""
    radii = np.asarray(radii, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    xo, yo = cfg.centroid
    scale = tree_sum(weights) / (cfg.t_p - 2)
    bx = float(tree_sum(weights * radii * np.cos(angles)) / (cfg.t_p - 2))
    by = float(tree_sum(weights * radii * np.sin(angles)) / (cfg.t_p - 2))
    ax, ay = float(scale * xo), float(scale * yo)
    rx, ry = ax + bx, ay + by
    phi = wrap_angle(math.atan2(ry, rx) - math.atan2(yo, xo))
    return GeometryTrial(
        radii=radii,
        angles=angles,
        weights=weights,
        resultant=(rx, ry),
        a_vec=(ax, ay),
        b_mag=math.hypot(bx, by),
        theta=math.atan2(by, bx),
        phi=phi,
    )


def run_trial(cfg: GeometryConfig, rng: Rng) -> GeometryTrial:
    radii = _truncated_normal(rng, cfg.sigma, cfg.eta)
    angles = rng.uniform(0.0, 2 * math.pi, cfg.eta)
    if cfg.weight_mode == "uniform_p":
        weights = np.full(cfg.eta, cfg.p)
    else:
        weights = rng.uniform(0.0, 1.0, cfg.eta)
    return trial_from_samples(cfg, radii, angles, weights)


def _batched_phi(cfg: GeometryConfig, rng: Rng, n: int) -> np.ndarray:
    """``n`` trials at once; same distribution as :func:`run_trial`."""
    radii = _truncated_normal(rng, cfg.sigma, n * cfg.eta).reshape(n, cfg.eta)
    angles = rng.uniform(0.0, 2 * math.pi, n * cfg.eta).reshape(n, cfg.eta)
    if cfg.weight_mode == "uniform_p":
        w = np.full((n, cfg.eta), cfg.p)
    else:
        w = rng.uniform(0.0, 1.0, n * cfg.eta).reshape(n, cfg.eta)
    xo, yo = cfg.centroid
    rx = tree_sum(w * (xo + radii * np.cos(angles)), axis=1)
    ry = tree_sum(w * (yo + radii * np.sin(angles)), axis=1)
    return wrap_angle(np.arctan2(ry, rx) - math.atan2(yo, xo))


def monte_carlo_phi(cfg: GeometryConfig, trials: int, rng: Rng, chunk: int = 10_000) -> PhiStats:
    """Aggregate ``trials`` deviations drawn in fixed-size chunks, chunk ``i``
    using substream ``i`` of ``rng`` so results do not depend on scheduling.

    ``trials == 1`` runs exactly :func:`run_trial` on substream 0.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if trials == 1:
        phis = np.array([run_trial(cfg, rng.substream(0)).phi])
    else:
        parts = []
        for i, start in enumerate(range(0, trials, chunk)):
            parts.append(_batched_phi(cfg, rng.substream(i), min(chunk, trials - start)))
        phis = np.concatenate(parts)
    a = np.abs(phis)
    return PhiStats(
        trials=int(trials),
        mean_abs_phi=float(tree_sum(a) / a.size),
        max_abs_phi=float(np.max(a)),
        frac_cos_positive=float(np.count_nonzero(np.cos(phis) > 0) / a.size),
    )


@dataclass(frozen=True)
class PhiCase:
    q: float
    q_sign: int
    xi: int
    predicted_phi: float

    @property
    def degenerate(self) -> bool:
        return self.q_sign == 0


def classify_phi_case(x_o: float, y_o: float, theta: float) -> PhiCase:
    """Closed-form deviation once the centroid-parallel term is neglected.

    For ``Theta`` in ``[0, pi]`` (upward scatter) the deviation is
    ``Theta + atan(y_o / x_o)`` when ``Theta < pi/2 - atan(y_o / x_o)``
    (``xi = 0``) and ``-pi + Theta + atan(y_o / x_o)`` otherwise (``xi = 1``).
    Downward scatter is handled by reflecting through the x-axis.
    ``Q = (x_o^2 - y_o^2) / x_o``; ``q_sign == 0`` marks the degenerate
    diagonal ``|x_o| == |y_o|``.
    """
    if x_o == 0:
        raise DomainError("x_o = 0 leaves Q undefined")
    theta = wrap_angle(theta)
    q = (x_o * x_o - y_o * y_o) / x_o
    q_sign = int(np.sign(q))
    if theta < 0:
        mirrored = classify_phi_case(x_o, -y_o, -theta)
        return PhiCase(q=q, q_sign=q_sign, xi=mirrored.xi, predicted_phi=-mirrored.predicted_phi)
    a = math.atan(y_o / x_o)
    xi = 0 if theta < math.pi / 2 - a else 1
    phi = theta + a - (math.pi if xi else 0.0)
    return PhiCase(q=q, q_sign=q_sign, xi=xi, predicted_phi=phi)
