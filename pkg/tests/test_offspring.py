import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbm_absorb.errors import DivergenceError, ModelDomainError
from bbm_absorb.offspring import (
    CustomLaw,
    ExplicitLaw,
    GeometricTailLaw,
    IntegralClass,
    ModelConfig,
    PolylogTailLaw,
    constants,
    extinction_prob,
    g_eval,
    integral_G_finite,
    law_from_json,
    power_tail_sum,
    span,
    tilde_transform,
)


def test_binary_values(binary):
    assert g_eval(binary, 0.5) == pytest.approx(0.25, abs=1e-15)
    assert g_eval(binary, 1.0, 1) == pytest.approx(2.0, abs=1e-15)
    assert binary.mean == pytest.approx(2.0)
    assert extinction_prob(binary) == 0.0
    assert math.isinf(binary.radius)


def test_polylog_at_radius_matches_long_partial_sum(polylog):
    # sum_{k=2}^{1e6} c k^-3 plus an integral bound on the rest
    c = polylog.tail_constant
    k = np.arange(2, 10**6 + 1, dtype=float)
    partial = c * np.sum(k[::-1] ** -3.0)
    rest = c / (2 * 1e12)
    assert abs(g_eval(polylog, 2.0) - partial) <= rest + 1e-13
    assert abs(g_eval(polylog, 2.0, 1) - c * (math.pi**2 / 6 - 1) / 2) < 1e-12


def test_domain_errors(polylog):
    with pytest.raises(ModelDomainError):
        g_eval(polylog, 2.1)
    with pytest.raises(DivergenceError):
        g_eval(polylog, 2.0, 2)
    with pytest.raises(ModelDomainError):
        ExplicitLaw([0.5, 0.5])
    with pytest.raises(ModelDomainError):
        ExplicitLaw([0.2, 0.0, 0.7])


def test_extinction_probability_quadratic():
    law = ExplicitLaw([0.2, 0.0, 0.8])
    assert extinction_prob(law) == pytest.approx((1 - 0.6) / 1.6, abs=1e-12)
    assert abs(law.g(law.extinction_prob) - law.extinction_prob) < 1e-12


@pytest.mark.parametrize("p,delta", [([0, 0, 1], 1), ([0, 0, 0, 1], 2), ([0.2, 0, 0.8], 1), ([0, 0, 0.5, 0, 0.5], 1),
                                     ([0, 0, 0, 0.5, 0, 0.5], 2)])
def test_span(p, delta):
    assert span(ExplicitLaw(p)) == delta


def test_constants_binary(binary):
    c = constants(binary, 0.5, 0.0)
    assert (c.alpha, c.lam, c.mu0, c.lam_tilde) == pytest.approx((1.0, 1.0, 1.0, 1.0))
    assert c.lam1 is None and c.lam2 is None
    c = constants(binary, 0.5, -2.0)
    assert c.lam1 == pytest.approx(2 + math.sqrt(3))
    assert c.lam2 == pytest.approx(2 - math.sqrt(3))
    assert c.d == pytest.approx(c.lam1 / c.lam2)


def test_integral_classes(binary, geometric, polylog):
    assert integral_G_finite(binary) is IntegralClass.INFINITE
    assert integral_G_finite(geometric) is IntegralClass.INFINITE
    assert integral_G_finite(polylog) is IntegralClass.FINITE
    assert integral_G_finite(PolylogTailLaw(0.5, 1.5)) is IntegralClass.FINITE
    assert integral_G_finite(PolylogTailLaw(0.5, 0.5)) is IntegralClass.FINITE
    assert integral_G_finite(PolylogTailLaw(0.5, 0.0)) is IntegralClass.INFINITE
    custom = CustomLaw(lambda k: 0.0 if k < 2 else 2 * 0.5**k, kmax=60, radius=2.0, ratio_bound=0.5)
    assert integral_G_finite(custom) is IntegralClass.UNDECIDABLE


def test_p1_reduction():
    law = ExplicitLaw([0.0, 0.5, 0.5])
    assert law.p[1] == 0.0
    assert law.beta_scale == pytest.approx(0.5)
    assert law.g(0.7) == pytest.approx(0.49)
    cfg = ModelConfig(law, 1.0, 0.0)
    assert cfg.beta_eff == pytest.approx(0.5)


def test_tilde_transform_quadratic():
    law = ExplicitLaw([0.2, 0.0, 0.8])
    red, scale = tilde_transform(law)
    # G~(s) = (G(0.75 s + 0.25) - 0.25)/0.75 = 0.4 s + 0.6 s^2, then p~_1 = 0.4 is removed
    assert scale == pytest.approx(0.6, abs=1e-12)
    assert red.g(0.0) == pytest.approx(0.0, abs=1e-14)
    assert red.g(0.0, 1) == pytest.approx(0.0, abs=1e-14)
    assert red.pmf(2)[2] == pytest.approx(1.0, abs=1e-12)
    assert red.extinction_prob == 0.0


def test_tilde_transform_identity(binary):
    red, scale = tilde_transform(binary)
    assert scale == 1.0
    np.testing.assert_allclose(red.pmf(3), binary.pmf(3))


def test_power_tail_sum_matches_direct():
    z = np.array([0.1, 0.5, 0.85])
    k = np.arange(2, 4000, dtype=float)
    for order in (0, 1, 2):
        fall = np.ones_like(k)
        for j in range(order):
            fall *= k - j
        direct = [np.sum(fall * k**-2.5 * zz ** (k - order)) for zz in z]
        np.testing.assert_allclose(power_tail_sum(z, 2.5, order), direct, rtol=1e-13)
    closed = power_tail_sum(0.97, 2.5)
    assert closed == pytest.approx(np.sum(k**-2.5 * 0.97**k), rel=1e-12)


def test_law_from_json_round_trip(geometric, polylog):
    for law in (ExplicitLaw([0.1, 0.0, 0.6, 0.3]), geometric, polylog):
        again = law_from_json(law.to_dict())
        np.testing.assert_allclose(again.pmf(20), law.pmf(20), rtol=1e-15)


@pytest.mark.parametrize("bad", [
    {"family": "explicit", "p": [0, 0, 1], "extra": 1},
    {"family": "geometric-tail", "params": {"r": 0.5, "q": 1}},
    {"family": "explicit", "params": {"r": 0.5}},
    {"family": "custom-coefficient-rule", "params": {}},
    {"family": "nope"},
    {"p": [0, 0, 1]},
])
def test_law_from_json_rejects(bad):
    with pytest.raises(ModelDomainError):
        law_from_json(bad)


def test_tail_masses_certify(geometric, polylog):
    for law in (geometric, polylog):
        K = law.support_size
        assert law.tail_mass(K) < 1e-15
        assert abs(law.probabilities.sum() + law.tail_mass(K) - 1) < 1e-12


_weights = st.lists(st.floats(0.0, 1.0), min_size=5, max_size=9)


def _law_from(weights):
    w = np.array(weights)
    w[1] = 0.0
    if w[2:].sum() == 0 or w[0] >= w[2:].sum() * 0.99 or w[0] / w.sum() > 0.9:
        return None
    p = w / w.sum()
    mean = np.dot(np.arange(p.size), p)
    if mean <= 1.05:
        return None
    return ExplicitLaw(p)


@settings(max_examples=60, deadline=None)
@given(_weights)
def test_fixed_point_and_convexity(weights):
    law = _law_from(weights)
    if law is None:
        return
    q = law.extinction_prob
    assert 0 <= q < 1 and abs(law.g(q) - q) < 1e-12
    s = np.linspace(0, 1, 102)[1:-1]
    gs = law.g(s)
    inside = (s > q + 1e-6) & (s < 1 - 1e-6)
    assert np.all(gs[inside] < s[inside])
    below = s < q - 1e-6
    assert np.all(gs[below] > s[below])
    assert np.all(np.diff(law.g(s, 1)) >= -1e-12)
    assert np.all(law.g(s, 1) >= 0)


@settings(max_examples=60, deadline=None)
@given(_weights)
def test_span_divides_support(weights):
    law = _law_from(weights)
    if law is None:
        return
    d = law.span
    for i, pi in enumerate(law.probabilities):
        if pi > 0:
            assert abs(i - 1) % d == 0


@settings(max_examples=40, deadline=None)
@given(_weights, st.floats(0.1, 2.0), st.floats(-0.8, 2.0))
def test_lambda_tilde_at_most_lambda(weights, beta, mu):
    law = _law_from(weights)
    if law is None:
        return
    c = constants(law, beta, mu)
    assert c.lam_tilde <= c.lam + 1e-12
    if law.g_prime_q == 0:
        assert c.lam_tilde == pytest.approx(c.lam)


@settings(max_examples=40, deadline=None)
@given(_weights)
def test_tilde_transform_idempotent(weights):
    law = _law_from(weights)
    if law is None:
        return
    once, s1 = tilde_transform(law)
    twice, s2 = tilde_transform(once)
    assert s2 == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(twice.pmf(12), once.pmf(12), atol=1e-12)
    assert once.extinction_prob == 0.0
