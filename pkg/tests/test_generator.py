import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbm_absorb.errors import NoTravelingWaveError
from bbm_absorb.generator import (
    A_HIT_ZERO,
    ABOVE,
    AT,
    BELOW,
    S_HIT_RG,
    classify,
    integrate_a,
    mu_c_locate,
    radius,
    regime_classify,
)
from bbm_absorb.offspring import ExplicitLaw, GeometricTailLaw, ModelConfig, Numerics
from bbm_absorb.wave import solve_profile

from conftest import POLYLOG_MU_C


def test_binary_curve_closed_form(binary_curve):
    # mu = 0: a(s)^2 = 4 beta int_0^s (u - u^2) du, so a(s) = -s sqrt(1 - 2s/3)
    c = binary_curve
    s = np.array([1e-3, 0.1, 0.5, 1.0, 1.3, 1.49, 1.4999])
    np.testing.assert_allclose(c.a(s), -s * np.sqrt(1 - 2 * s / 3), atol=1e-9)
    assert c.termination == A_HIT_ZERO and c.regime == BELOW
    assert c.R == pytest.approx(1.5, abs=1e-10)
    assert np.all(c.a_values[1:-1] < 0)


def test_quadratic_law_radius():
    # G(s) = 0.2 + 0.8 s^2: R solves int_{0.25}^R (u - G(u)) du = 0
    law = ExplicitLaw([0.2, 0.0, 0.8])
    poly = np.polynomial.Polynomial([-0.2, 1.0, -0.8]).integ()
    roots = (poly - poly(0.25)).roots()
    R_exact = max(r.real for r in roots if abs(r.imag) < 1e-12)
    assert R_exact == pytest.approx(1.375, abs=1e-12)
    assert radius(ModelConfig(law, 0.5, 0.0)) == pytest.approx(R_exact, abs=1e-9)


def test_a_at_one_is_wave_slope(binary, geometric):
    for law in (binary, geometric, ExplicitLaw([0.2, 0.0, 0.8])):
        for mu in (-0.3, 0.0, 0.7):
            cfg = ModelConfig(law, 0.5, mu)
            assert abs(integrate_a(cfg).a(1.0) - solve_profile(cfg).Qp0) < 1e-6


def test_radius_below_minus_mu0(binary):
    assert radius(ModelConfig(binary, 0.5, -1.5)) == 1.0
    with pytest.raises(NoTravelingWaveError):
        integrate_a(ModelConfig(binary, 0.5, -1.5))


def test_mu_c_sentinels(binary, geometric):
    assert math.isinf(mu_c_locate(binary, 0.5))
    assert math.isinf(mu_c_locate(geometric, 0.5))


def test_polylog_regimes(polylog, polylog_at_muc):
    prof, curve = polylog_at_muc
    assert curve.regime == AT and curve.termination == S_HIT_RG
    assert abs(curve.a_end) < 1e-6
    assert prof.Q_x0 == pytest.approx(2.0, abs=1e-6)
    above = integrate_a(ModelConfig(polylog, 0.5, POLYLOG_MU_C + 0.5))
    assert above.regime == ABOVE and above.a_end < -1e-6
    assert regime_classify(ModelConfig(polylog, 0.5, POLYLOG_MU_C - 0.5)) == BELOW


def test_a_end_square_root_scaling(polylog):
    # past mu_c, |a_end| opens like sqrt(mu - mu_c)
    d = np.array([0.01, 0.04])
    a = np.array([integrate_a(ModelConfig(polylog, 0.5, POLYLOG_MU_C + e)).a_end for e in d])
    slope = np.log(a[1] / a[0]) / np.log(d[1] / d[0])
    assert slope == pytest.approx(0.5, abs=0.1)


def test_classify_table():
    assert classify(A_HIT_ZERO, 0.0, 1e-6) == BELOW
    assert classify(S_HIT_RG, -1e-7, 1e-6) == AT
    assert classify(S_HIT_RG, -1e-3, 1e-6) == ABOVE


def test_seed_sensitivity(binary):
    base = ModelConfig(binary, 0.5, 0.3)
    half = ModelConfig(binary, 0.5, 0.3, Numerics().replace(seed_eps=5e-7))
    assert abs(integrate_a(base).R - integrate_a(half).R) < 1e-8


def test_generator_ordering(binary):
    s = np.linspace(0.05, 1.05, 21)
    mus = [-0.5, 0.0, 0.5, 1.0]
    curves = [integrate_a(ModelConfig(binary, 0.5, m)) for m in mus]
    for lo, hi in zip(curves, curves[1:]):
        assert np.all(lo.a(s) > hi.a(s))


def test_continuity_dyadic(binary):
    R0 = radius(ModelConfig(binary, 0.5, 0.2), cross_check=False)
    gaps = [abs(radius(ModelConfig(binary, 0.5, 0.2 + 2.0**-k), cross_check=False) - R0) for k in (2, 4, 6, 8)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-2


def test_exports(binary_curve):
    text = binary_curve.to_csv()
    assert text.startswith("s,a\r\n")
    assert set(binary_curve.summary()) == {"mu", "R", "regime", "termination", "a_end"}


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.9, 2.0))
def test_radius_bounds(mu):
    law = GeometricTailLaw(0.5)
    cfg = ModelConfig(law, 0.5, mu)
    if mu <= -cfg.consts.mu0 + 1e-3:
        return
    R = radius(cfg)
    assert 1.0 <= R <= law.radius
