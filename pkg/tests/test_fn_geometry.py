import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from miolab.fn_geometry import (
    GeometryConfig,
    classify_phi_case,
    monte_carlo_phi,
    resultant,
    run_trial,
    symmetric_fn_probability,
    trial_from_samples,
    wrap_angle,
)
from miolab.numerics import DomainError, Rng


def test_symmetric_probability_examples():
    assert symmetric_fn_probability(4, 2, 4) == 0.25
    assert symmetric_fn_probability(20, 4, 5) == 1.0
    p = symmetric_fn_probability(130, 10, 20)
    assert 0 < p < 1
    assert p == pytest.approx(0.0036972058910187135, rel=1e-13)
    assert 0 < symmetric_fn_probability(1000, 10, 5000) < 1e-60


@pytest.mark.parametrize("args", [(5, 2, 4), (4, 2, 1), (0, 2, 4), (4, 0, 4)])
def test_symmetric_probability_errors(args):
    with pytest.raises(DomainError):
        symmetric_fn_probability(*args)


def test_config_validation():
    for kw in ({"centroid": (0.0, 0.0)}, {"t_p": 2}, {"eta": 255}, {"sigma": -1.0}, {"p": 2.0}):
        with pytest.raises(DomainError):
            GeometryConfig(**kw)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_tiny_sigma_zero_phi():
    t = run_trial(GeometryConfig(sigma=1e-12), Rng(1))
    assert abs(t.phi) < 1e-12


def test_antipodal_cancellation():
    cfg = GeometryConfig(centroid=(3.0, 4.0), eta=2)
    t = trial_from_samples(cfg, [1.5, 1.5], [0.3, 0.3 + math.pi], [0.7, 0.7])
    assert t.b_mag < 1e-15
    assert abs(t.phi) < 1e-15


def test_golden_trial():
    cfg = GeometryConfig(centroid=(10.0, 0.0), sigma=1.0, eta=8)
    t = run_trial(cfg, Rng(3))
    assert t.phi == pytest.approx(-0.012105213300683815, rel=1e-12)
    # literal re-summation of the weighted resultant
    xs = [10.0 + r * math.cos(a) for r, a in zip(t.radii, t.angles)]
    ys = [r * math.sin(a) for r, a in zip(t.radii, t.angles)]
    xr = sum(p * x for p, x in zip(t.weights, xs)) / (cfg.t_p - 2)
    yr = sum(p * y for p, y in zip(t.weights, ys)) / (cfg.t_p - 2)
    assert t.resultant == pytest.approx((xr, yr), rel=1e-13)
    assert resultant(cfg.centroid, t.radii, t.angles, t.weights, cfg.t_p) == pytest.approx((xr, yr), rel=1e-13)
    assert t.phi == pytest.approx(math.atan2(yr, xr), abs=1e-15)
    assert np.all(np.abs(t.radii) <= 3 * cfg.sigma)


def test_decomposition_consistent():
    cfg = GeometryConfig(centroid=(4.0, -2.0), sigma=2.0, eta=5, weight_mode="random_p")
    t = run_trial(cfg, Rng(8))
    rx = t.a_vec[0] + t.b_mag * math.cos(t.theta)
    ry = t.a_vec[1] + t.b_mag * math.sin(t.theta)
    assert (rx, ry) == pytest.approx(t.resultant, rel=1e-13)


@given(st.integers(0, 10_000), st.integers(1, 30), st.sampled_from(["uniform_p", "random_p"]), st.floats(0.1, 5))
def test_b_bound(seed, eta, mode, sigma):
    cfg = GeometryConfig(centroid=(1.0, 2.0), sigma=sigma, eta=eta, t_p=32, weight_mode=mode, p=0.9)
    t = run_trial(cfg, Rng(seed))
    assert t.b_mag <= 3 * sigma * t.weights.sum() / (cfg.t_p - 2) + 1e-12
    assert t.b_mag <= 3 * sigma


@given(st.integers(0, 10_000), st.integers(1, 20))
def test_reflection_symmetry(seed, eta):
    cfg = GeometryConfig(centroid=(5.0, 0.0), sigma=1.0, eta=eta)
    t = run_trial(cfg, Rng(seed))
    m = trial_from_samples(cfg, t.radii, -t.angles, t.weights)
    assert m.phi == pytest.approx(-t.phi, abs=1e-15)


def test_single_trial_aggregation():
    cfg = GeometryConfig()
    r = Rng(4)
    s = monte_carlo_phi(cfg, 1, r)
    t = run_trial(cfg, r.substream(0))
    assert s.mean_abs_phi == abs(t.phi) == s.max_abs_phi
    assert s.frac_cos_positive == (1.0 if t.cos_phi > 0 else 0.0)


def test_monte_carlo_regime_and_trend():
    prev = math.inf
    for eta in (4, 8, 16, 32):
        s = monte_carlo_phi(GeometryConfig(centroid=(10.0, 0.0), sigma=1.0, eta=eta), 20_000, Rng(eta))
        assert s.frac_cos_positive == 1.0
        assert s.max_abs_phi < math.pi / 2
        assert s.mean_abs_phi < prev
        prev = s.mean_abs_phi


def test_monte_carlo_chunking_independent_of_order():
    cfg = GeometryConfig(eta=6)
    a = monte_carlo_phi(cfg, 2500, Rng(9), chunk=1000)
    b = monte_carlo_phi(cfg, 2500, Rng(9), chunk=1000)
    assert a == b


def test_classify_examples():
    c = classify_phi_case(3.0, 0.0, 0.0)
    assert c.predicted_phi == 0.0
    assert classify_phi_case(1.0, 1.0, 0.3).degenerate
    c = classify_phi_case(2.0, 1.0, math.pi / 4)
    assert (c.q, c.q_sign, c.xi) == (1.5, 1, 0)
    assert c.predicted_phi == pytest.approx(math.pi / 4 + math.atan(0.5), rel=1e-15)
    assert c.predicted_phi == pytest.approx(1.2490457723982544, rel=1e-15)
    assert abs(c.predicted_phi) <= math.pi / 2
    with pytest.raises(DomainError):
        classify_phi_case(0.0, 1.0, 0.2)


@given(
    st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3),
    st.floats(-10, 10),
    st.floats(-math.pi, math.pi),
)
def test_classify_phi_bounded(x, y, theta):
    c = classify_phi_case(x, y, theta)
    if not c.degenerate:
        assert -math.pi / 2 - 1e-12 <= c.predicted_phi <= math.pi / 2 + 1e-12
