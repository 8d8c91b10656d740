"""Leakage-bound tests: worked examples, ordering, convexity-type properties."""

import math

import numpy as np
import pytest

from reconleak.accountant import MechanismParams, RdpCurve, compose, default_order_grid, sgm_rdp_curve
from reconleak.bounds import (
    SecretPrior,
    h_bound,
    l_bound,
    leakage_bits,
    min_h_bits,
    min_leakage,
    posterior_bound,
    secrecy_bits,
)

_LN2 = math.log(2.0)


def _curve(orders, values, **kw):
    params = MechanismParams(
        q=kw.get("q", 1.0), sigma=kw.get("sigma", 1.0), steps=kw.get("steps", 1), clip=1.0
    )
    return RdpCurve(
        orders=np.asarray(orders, dtype=float),
        d_alpha=np.asarray(values, dtype=float),
        params=params,
    )


def _random_mechanism_curves(n, seed=0):
    rng = np.random.default_rng(seed)
    curves = []
    for _ in range(n):
        q = float(np.exp(rng.uniform(np.log(1e-4), 0.0)))
        sigma = float(np.exp(rng.uniform(np.log(0.3), np.log(10.0))))
        steps = int(rng.integers(1, 10000))
        curves.append(compose(sgm_rdp_curve(q, sigma), steps))
    return curves


# ------------------------------------------------------------- worked examples


def test_l_bound_examples():
    assert l_bound(0.0, 2.0, -math.log(1024.0)) == pytest.approx(math.log(1024.0) / 2.0)
    assert l_bound(1.0, 2.0, 0.0) == pytest.approx(0.5)
    assert l_bound(0.5, 4.0, -10.0 * _LN2) == pytest.approx(0.375 + 10.0 * _LN2 / 4.0)
    assert l_bound(0.5, 4.0, -10.0 * _LN2) == pytest.approx(2.108, abs=5e-4)


def test_h_bound_examples():
    assert h_bound(0.0, 2.0, -10.0 * _LN2) == pytest.approx(math.log(1024.0))
    assert h_bound(1.0, 2.0, 0.0) == pytest.approx(1.0)


def test_bounds_propagate_infinite_divergence():
    assert l_bound(math.inf, 2.0, -1.0) == math.inf
    assert h_bound(math.inf, 2.0, -1.0) == math.inf


def test_bound_domain_errors():
    with pytest.raises(ValueError):
        l_bound(0.5, 1.0, -1.0)
    with pytest.raises(ValueError):
        l_bound(-0.5, 2.0, -1.0)
    with pytest.raises(ValueError):
        l_bound(0.5, 2.0, 0.1)
    with pytest.raises(ValueError):
        h_bound(0.5, 1.0, -1.0)


def test_min_leakage_two_point_example():
    report = min_leakage(_curve([2.0, 4.0], [1.0, 0.5]), -10.0 * _LN2)
    assert report.L_nats == pytest.approx(0.375 + 10.0 * _LN2 / 4.0)
    assert report.best_alpha_l == 4.0
    assert report.L2_bits == pytest.approx(report.L_nats / _LN2)
    assert not report.all_infinite


def test_min_leakage_zero_curve_minimizes_at_largest_order():
    curve = compose(sgm_rdp_curve(1.0, 1.0), 0)  # all-zero divergences
    report = min_leakage(curve, -10.0 * _LN2)
    assert report.L_nats == pytest.approx(math.log(1024.0) / 63.0)
    assert report.best_alpha_l == 63.0


def test_min_leakage_all_infinite_flagged():
    report = min_leakage(sgm_rdp_curve(0.5, 0.0), -1.0)
    assert report.all_infinite
    assert report.L_nats == math.inf
    assert report.h_min_nats == math.inf
    assert report.best_alpha_l is None


def test_min_leakage_matches_exhaustive_scan():
    log_p0 = -23.0
    for curve in _random_mechanism_curves(5, seed=3):
        report = min_leakage(curve, log_p0)
        l_values = [l_bound(d, a, log_p0) for a, d in zip(curve.orders, curve.d_alpha)]
        h_values = [h_bound(d, a, log_p0) for a, d in zip(curve.orders, curve.d_alpha)]
        assert report.L_nats == min(l_values)
        assert report.h_min_nats == min(h_values)
        assert report.best_alpha_l == curve.orders[int(np.argmin(l_values))]
        assert report.best_alpha_h == curve.orders[int(np.argmin(h_values))]


def test_min_leakage_report_serializes_infinities():
    doc = min_leakage(sgm_rdp_curve(0.5, 0.0), -1.0).to_json_dict()
    assert doc["L_nats"] == "inf"
    assert doc["all_infinite"] is True


# ------------------------------------------------------------ bit-domain forms


def test_leakage_bits_zero_curve_at_zero_bits():
    zero = compose(sgm_rdp_curve(1.0, 1.0), 0)
    assert leakage_bits(zero, 0.0) == 0.0


def test_leakage_bits_matches_nat_form():
    curve = sgm_rdp_curve(1.0, 2.875)
    b = 33.219
    report = min_leakage(curve, -b * _LN2)
    assert leakage_bits(curve, b) == pytest.approx(report.L_nats / _LN2, rel=1e-12)


def test_posterior_bound_zero_curve():
    zero = compose(sgm_rdp_curve(1.0, 1.0), 0)
    # On the finite grid the minimum sits at the largest order, alpha = 63.
    assert posterior_bound(zero, 10.0) == pytest.approx(-10.0 + 10.0 / 63.0, rel=1e-12)
    assert posterior_bound(zero, 10.0) == pytest.approx(-10.0, abs=0.2)


def test_posterior_bound_negative_for_sixteen_digit_secret():
    b = secrecy_bits(1e-16)
    curve = sgm_rdp_curve(1.0, 2.875)
    assert posterior_bound(curve, b) < 0.0


def test_min_h_bits_consistency():
    curve = compose(sgm_rdp_curve(1.0, 0.5), 100)
    b = 40.0
    assert min_h_bits(curve, b) == pytest.approx(
        min_leakage(curve, -b * _LN2).h_min_nats / _LN2, rel=1e-12
    )


def test_secrecy_bits_examples():
    assert secrecy_bits(1.0) == 0.0
    assert secrecy_bits(2.0**-40) == pytest.approx(40.0)
    assert secrecy_bits(1e-16) == pytest.approx(16.0 * math.log2(10.0))
    assert secrecy_bits(1e-16) == pytest.approx(53.15, abs=0.01)


def test_secrecy_bits_domain():
    with pytest.raises(ValueError):
        secrecy_bits(0.0)
    with pytest.raises(ValueError):
        secrecy_bits(1.5)


def test_secret_prior_round_trip():
    prior = SecretPrior(log_p0=-10.0 * _LN2)
    assert prior.bits == pytest.approx(10.0)
    again = SecretPrior.from_bits(prior.bits)
    assert again.log_p0 == pytest.approx(prior.log_p0, rel=1e-15)
    with pytest.raises(ValueError):
        SecretPrior(log_p0=0.1)


# ------------------------------------------------------- inequality properties


def test_l_strictly_below_h_on_finite_grid_points():
    log_p0 = -23.02585
    for curve in _random_mechanism_curves(20, seed=11):
        for alpha, d in zip(curve.orders, curve.d_alpha):
            if math.isinf(d):
                continue
            assert l_bound(d, alpha, log_p0) < h_bound(d, alpha, log_p0)
        report = min_leakage(curve, log_p0)
        assert report.L_nats < report.h_min_nats


def test_exponentiated_bounds_agree_with_direct_forms():
    # The two rearrangements of the sandwich inequality must agree in
    # log-space: log p0 + l == (1 - 1/alpha)(d + log p0) and
    # log p0 - h == alpha/(alpha-1) * log p0 - d.
    rng = np.random.default_rng(5)
    for _ in range(200):
        d = float(rng.uniform(0.0, 50.0))
        alpha = float(rng.uniform(1.01, 63.0))
        log_p0 = float(-rng.uniform(0.0, 60.0))
        left = log_p0 + l_bound(d, alpha, log_p0)
        right = (alpha - 1.0) / alpha * (d + log_p0)
        assert left == pytest.approx(right, abs=1e-12, rel=1e-12)
        left = log_p0 - h_bound(d, alpha, log_p0)
        right = alpha / (alpha - 1.0) * log_p0 - d
        assert left == pytest.approx(right, abs=1e-10, rel=1e-10)


def test_leakage_bits_monotone_and_concave_posterior_nonincreasing():
    b_grid = np.arange(0.0, 61.0)
    for curve in _random_mechanism_curves(20, seed=7):
        values = np.array([leakage_bits(curve, b) for b in b_grid])
        assert np.all(np.diff(values) >= -1e-12)
        mid = np.array([leakage_bits(curve, b) for b in (b_grid[:-2] + b_grid[2:]) / 2.0])
        assert np.all(mid >= (values[:-2] + values[2:]) / 2.0 - 1e-12)
        posterior = np.array([posterior_bound(curve, b) for b in b_grid])
        assert np.all(np.diff(posterior) <= 1e-12)


def test_posterior_bound_nonpositive_when_leakage_below_bits():
    curve = compose(sgm_rdp_curve(1.0, 2.875), 1)
    for b in [10.0, 33.2, 53.15]:
        if leakage_bits(curve, b) <= b:
            assert posterior_bound(curve, b) <= 0.0
