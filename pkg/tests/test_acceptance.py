"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import math

import numpy as np
import pytest

from bbm_absorb.asymptotics import tail_exponent, theorem5_equiv
from bbm_absorb.coeffs import f_from_table, fprime_from_table, picard_coefficients, picard_iterates
from bbm_absorb.generator import A_HIT_ZERO, ABOVE, AT, BELOW, S_HIT_RG, integrate_a, mu_c_locate, radius
from bbm_absorb.offspring import ExplicitLaw, GeometricTailLaw, ModelConfig, PolylogTailLaw, constants
from bbm_absorb.sim import EXTINCT, SimConfig, estimate
from bbm_absorb.wave import f_eval, solve_profile

LN2 = math.log(2.0)


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def kill_runs(binary):
    return estimate(SimConfig(binary, 0.5, 0.0, LN2, replicates=100_000, n_max=50, seed=101))


def test_criterion_01_single_particle_kill(kill_runs, verdict):
    s = kill_runs
    p, sd = s.frequency(s.extinct & (s.D == 0))
    verdict(1, abs(p - 0.5) < 3 * sd, f"P(D=0, extinct) = {p:.5f}, target 0.5, 3 sigma = {3 * sd:.5f}")


def test_criterion_02_one_branch(kill_runs, verdict):
    s = kill_runs
    p, sd = s.frequency(s.extinct & (s.D == 1) & (s.Z == 2))
    verdict(2, abs(p - 1 / 12) < 3 * sd, f"P(D=1, Z=2, extinct) = {p:.5f}, target {1 / 12:.5f}, 3 sigma = {3 * sd:.5f}")


def test_criterion_03_wave_tail_rate(binary, verdict):
    errs = []
    for mu in (-0.5, 0.0, 0.5):
        cfg = ModelConfig(binary, 0.5, mu)
        fitted = solve_profile(cfg).diagnostics["fitted_tail_rate"]
        errs.append(abs(fitted / cfg.consts.lam_tilde - 1))
    verdict(3, max(errs) < 1e-3, f"max relative error of fitted tail rate {max(errs):.2e} (< 1e-3)")


def test_criterion_04_radius_two_routes(binary, geometric, verdict):
    worst = 0.0
    for law in (binary, geometric):
        mu0 = constants(law, 0.5, 0.0).mu0
        for mu in np.linspace(-mu0 + 0.1, 2.0, 10):
            cfg = ModelConfig(law, 0.5, float(mu))
            worst = max(worst, abs(integrate_a(cfg).R - solve_profile(cfg).Q_x0))
    verdict(4, worst < 1e-6, f"max |R(generator) - Q(x0)| = {worst:.2e} over 20 models (< 1e-6)")


def test_criterion_05_radius_monotone_and_limit(binary, verdict):
    mu0 = constants(binary, 0.5, 0.0).mu0
    grid = np.linspace(-mu0 + 0.05, 2.5, 20)
    R = np.array([radius(ModelConfig(binary, 0.5, float(m)), cross_check=False) for m in grid])
    drop = max(0.0, -float(np.diff(R).min()))
    eps = 0.32 / 2.0 ** np.arange(6)
    near = np.array([radius(ModelConfig(binary, 0.5, -mu0 + e), cross_check=False) for e in eps])
    ok = drop < 1e-8 and np.all(np.diff(near) < 0) and near[-1] < 1.02
    verdict(5, ok, f"largest decrease on grid {drop:.1e}; R(-mu0+eps) = {np.round(near, 5).tolist()}")


def test_criterion_06_critical_drift_trichotomy(binary, geometric, polylog, verdict):
    inf_ok = math.isinf(mu_c_locate(binary, 0.5)) and math.isinf(mu_c_locate(geometric, 0.5))
    mu_c = mu_c_locate(polylog, 0.5)
    lo = integrate_a(ModelConfig(polylog, 0.5, mu_c - 0.05))
    at = integrate_a(ModelConfig(polylog, 0.5, mu_c))
    hi = integrate_a(ModelConfig(polylog, 0.5, mu_c + 0.05))
    prof = solve_profile(ModelConfig(polylog, 0.5, mu_c))
    ok = (
        inf_ok and math.isfinite(mu_c)
        and lo.regime == BELOW and lo.termination == A_HIT_ZERO and lo.a_end == 0.0
        and at.regime == AT and abs(at.a_end) < 1e-6
        and hi.regime == ABOVE and hi.termination == S_HIT_RG and hi.a_end < 0
        and abs(prof.Qp_x0) < 1e-5 and abs(prof.Q_x0 - polylog.radius) < 1e-6
    )
    verdict(6, ok, f"mu_c = inf, inf, {mu_c:.10f}; a_end below/at/above = "
                   f"{lo.a_end:.1e}/{at.a_end:.1e}/{hi.a_end:.3e}; Q'(x0) at mu_c = {prof.Qp_x0:.1e}")


def test_criterion_07_coefficients(binary, binary_profile, verdict):
    xs = (0.5, 1.0, 2.0)
    table = picard_coefficients(binary_profile, N=64, x_grid=xs)
    mass_gap = max(abs(table.values[j].sum() - float(binary_profile.Q(x))) - table.tail_mass_bound[j]
                   for j, x in enumerate(xs))
    f_err = max(abs(f_from_table(table, x, s) - float(f_eval(binary_profile, x, s)))
                for x in xs for s in (0.3, 0.6, 0.9))
    outside = []
    for j, x in enumerate(xs):
        s = estimate(SimConfig(binary, 0.5, 0.0, x, replicates=100_000, n_max=50, seed=31 + j))
        _, lo, hi = s.histogram(10)
        q = table.values[j, :11]
        outside += [(x, i) for i in range(11) if not lo[i] <= q[i] <= hi[i]]
    ok = mass_gap < 1e-6 and f_err < 1e-4 and not outside
    verdict(7, ok, f"mass excess over bound {mass_gap:.1e}; f_from_table vs f_eval {f_err:.1e}; "
                   f"q_i outside 99% CI: {outside}")


def test_criterion_08_semigroup_and_kolmogorov(binary_profile, binary_curve, verdict):
    p, a = binary_profile, binary_curve.a
    pts = np.array([0.25, 0.5, 1.0, 1.5, 2.0])
    semi = max(abs(f_eval(p, x + y, s) - f_eval(p, y, f_eval(p, x, s)))
               for x in pts for y in pts for s in (0.1, 0.3, 0.6, 0.9, 1.3))
    xs = (0.5, 1.0, 2.0)
    table = picard_coefficients(p, N=64, x_grid=xs)
    h = 1e-3
    fwd = bwd = 0.0
    for x in xs:
        for s in (0.3, 0.6, 0.9):
            dx = (f_eval(p, x + h, s) - f_eval(p, x - h, s)) / (2 * h)
            fp = fprime_from_table(table, x, s)
            fwd = max(fwd, abs(dx - float(a(s)) * fp))
            bwd = max(bwd, abs(float(a(s)) * fp - float(a(f_eval(p, x, s)))))
    ok = semi < 1e-6 and fwd < 1e-5 and bwd < 1e-5
    verdict(8, ok, f"semigroup {semi:.1e}; |d_x f - a f'| {fwd:.1e}; |a f' - a(f)| {bwd:.1e}")


def test_criterion_09_coefficient_ratio_trend(binary_table, binary_profile, binary_curve, verdict):
    i = np.arange(20, 41)
    q = binary_table.values[binary_table.index_of(1.0), i + 1]
    ref = np.array([theorem5_equiv(int(k), 1.0, binary_profile, binary_curve) for k in i])
    err = np.abs(q / ref - 1)
    slope = tail_exponent(i, q * 1.5**i)
    ok = err[-1] < 0.25 and np.all(np.diff(err) < 0) and abs(slope + 1.5) < 0.05
    verdict(9, ok, f"relative error at i=40 {err[-1]:.4f}, decreasing: {bool(np.all(np.diff(err) < 0))}, "
                   f"slope {slope:.4f}")


def test_criterion_10_span(verdict):
    law = ExplicitLaw([0.0, 0.0, 0.0, 1.0])
    prof = solve_profile(ModelConfig(law, 0.5, 0.0))
    table = picard_coefficients(prof, N=30, x_grid=(0.5, 1.0, 2.0))
    even = float(table.values[:, 0::2].max())
    s = estimate(SimConfig(law, 0.5, 0.0, 0.7, replicates=20_000, n_max=200, seed=10))
    z = s.Z[s.status == EXTINCT]
    ok = even < 1e-10 and z.size > 0 and bool(np.all(z % 2 == 1))
    verdict(10, ok, f"largest even coefficient {even:.1e}; {z.size} extinct runs, all Z odd: {bool(np.all(z % 2 == 1))}")


def test_criterion_11_seed_asymptote(binary, geometric, verdict):
    worst = 0.0
    for law in (binary, geometric, ExplicitLaw([0.2, 0.0, 0.8])):
        cfg = ModelConfig(law, 0.5, 0.3)
        curve = integrate_a(cfg)
        q = law.extinction_prob
        d = np.geomspace(1e-6, 9e-4, 12)
        worst = max(worst, float(np.abs(curve.a(q + d) / d + cfg.consts.lam_tilde).max()))
    verdict(11, worst < 1e-2, f"max |a(s)/(s-q) + lambda~| = {worst:.1e} for s-q < 1e-3 on three laws")


def test_criterion_12_derivation_gate(verdict):
    law = ExplicitLaw([0.5, 0.0, 0.5], allow_noncritical=True)
    q3 = picard_iterates(law, 0.5, 0.0, 4, (1.0,), n_sweeps=3)[3][0]
    # trees of at most three generations: deeper runs are stopped and never counted
    s = estimate(SimConfig(law, 0.5, 0.0, 1.0, replicates=1_000_000, n_max=1000, seed=12_000, max_generation=3))
    z = [s.frequency(s.extinct & (s.Z == i)) for i in range(5)]
    dev = [abs(q3[i] - p) / sd for i, (p, sd) in enumerate(z)]
    verdict(12, max(dev) < 3, f"|q^(3)_i - MC| / sigma for i = 0..4: {np.round(dev, 2).tolist()}")
