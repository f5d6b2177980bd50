"""Closed-form large-i behaviour of q_i(x) in each drift regime.

Below the critical drift the coefficients decay like R^{-i} i^{-3/2}; at the
critical drift the weighted tail sums sum_{i>=n} q_i R_G^i decay like a power
of n fixed by the singularity of G at R_G; above it they follow the offspring
tail.  For mu <= -mu0 the reference tails are those of the absorbed count in
the critical and subcritical cases, whose constant is fitted.

``rho_tail`` is the exponent in G(s) - s ~ C (R_G - s)^{-rho_tail} (or, in the
supercritical link, in G^{(m)}(s) ~ C (R_G - s)^{-rho_tail}).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

from .errors import IntegrationError, ModelDomainError, ModelMismatchError, RegimeError
from .generator import ABOVE, AT, BELOW, GeneratorCurve
from .offspring import ExplicitLaw, GeometricTailLaw, OffspringLaw, PolylogTailLaw, constants


def _regime(profile, curve: GeneratorCurve | None) -> str:
    if curve is not None:
        return curve.regime
    tol = profile.config.numerics.event_tol
    if profile.regime_hint == "qprime_zero" and profile.Q_x0 < profile.law.radius:
        return BELOW
    return AT if abs(profile.Qp_x0) < tol else ABOVE


def _require(profile, curve, wanted: str):
    got = _regime(profile, curve)
    if got != wanted:
        raise RegimeError(f"formula needs regime {wanted}, model is {got}")


def theorem5_equiv(i: int, x: float, profile, curve: GeneratorCurve | None = None) -> float:
    """Leading-order value of q_{delta i + 1}(x) below the critical drift."""
    _require(profile, curve, BELOW)
    if i < 1:
        raise ModelDomainError("i must be at least 1")
    law = profile.law
    d = law.span
    R = curve.R if curve is not None else profile.Q_x0
    b = profile.config.beta_eff
    gap = law.g(R) - R
    qp = profile.Qp(profile.x0 + x)
    return -qp / (2 * R ** (d * i + 0.5) * math.sqrt(d * b * gap * i**3 * math.pi))


def maillard_formulas(n, x: float, which: str, law: OffspringLaw, beta: float, mu: float, tol: float = 1e-9):
    """Reference tails at and below -mu0.

    ``which`` is one of ``critical_tail`` (P(Z_x > n)), ``critical_point``
    (P(Z_x = n)) or ``subcritical_shape`` (the n-dependence up to a constant K).
    """
    n = np.asarray(n, dtype=float)
    if np.any(n < 2):
        raise ModelDomainError("n must be at least 2")
    c = constants(law, beta, mu)
    if which in ("critical_tail", "critical_point"):
        if abs(mu + c.mu0) > tol:
            raise RegimeError(f"critical formulas need mu = -mu0 = {-c.mu0:.6g}")
        base = c.mu0 * x * math.exp(c.mu0 * x) / (np.log(n) ** 2)
        out = base / n if which == "critical_tail" else base / (law.span * n**2)
    elif which == "subcritical_shape":
        if not mu < -c.mu0 or c.lam1 is None:
            raise RegimeError("subcritical shape needs mu < -mu0 and mu^2 >= 2 beta")
        out = (math.exp(c.lam1 * x) - math.exp(c.lam2 * x)) / n ** (c.d + 1)
    else:
        raise ModelDomainError(f"unknown formula {which!r}")
    return float(out) if out.ndim == 0 else out


def fit_K(n, empirical, shape) -> float:
    """Constant K minimising the log-space misfit of K * shape to empirical values."""
    empirical = np.asarray(empirical, dtype=float)
    shape = np.asarray(shape, dtype=float)
    ok = (empirical > 0) & (shape > 0)
    if not ok.any():
        raise ModelDomainError("no positive data to fit")
    return float(np.exp(np.mean(np.log(empirical[ok]) - np.log(shape[ok]))))


def muc_A(C: float, rho: float, beta: float, R_G: float) -> float:
    return math.sqrt((1 - rho) * R_G ** (1 + rho)) / ((1 + rho) * math.sqrt(beta * C) * gamma_fn((1 - rho) / 2))


def check_singularity(law: OffspringLaw, C: float, rho: float, order: int = 0, tol: float = 1e-2) -> float:
    """Verify G^{(order)}(s) [- s] ~ C (R_G - s)^{-rho} as s -> R_G.

    Returns the last ratio; raises if the ratios do not approach 1.
    """
    R = law.radius
    if not math.isfinite(R):
        raise ModelMismatchError("law has no finite singularity")
    ratios = []
    for k in range(3, 8):
        s = R * (1 - 10.0**-k)
        v = law.g(s, order) - (s if order == 0 else (1.0 if order == 1 else 0.0))
        ratios.append(v * (R - s) ** rho / C)
    err = np.abs(np.array(ratios) - 1)
    if not (err[-1] < tol and err[-1] <= err[0] + 1e-12):
        raise ModelMismatchError(
            f"singular behaviour C(R_G - s)^(-{rho}) not confirmed, ratios {np.round(ratios, 6).tolist()}"
        )
    return float(ratios[-1])


def muc_tail_sum(n, x: float, C: float, rho: float, profile, curve: GeneratorCurve | None = None,
                 check: bool = True):
    """Leading-order value of sum_{i>=n} q_i(x) R_G^i at the critical drift."""
    _require(profile, curve, AT)
    if not 0 <= rho < 1:
        raise ModelDomainError("rho_tail must lie in [0, 1) at the critical drift")
    law = profile.law
    if check:
        check_singularity(law, C, rho)
    A = muc_A(C, rho, profile.config.beta_eff, law.radius)
    n = np.asarray(n, dtype=float)
    out = -A * profile.Qp(profile.x0 + x) / n ** ((1 + rho) / 2)
    return float(out) if out.ndim == 0 else out


def offspring_weighted_tail(law: OffspringLaw, n: int, power: float) -> float:
    """sum_{i>=n} p_i R_G^i i^power."""
    if isinstance(law, PolylogTailLaw):
        e = law.gamma - power
        if e <= 1:
            return math.inf
        return float(law.tail_constant * zeta(e, n))
    if isinstance(law, GeometricTailLaw):
        e = -power
        if e <= 1:
            return math.inf
        c = (1 - law.p0) * (1 - law.r) / law.r**2
        return float(c * zeta(e, max(n, 2)))
    if isinstance(law, ExplicitLaw):
        raise ModelDomainError("explicit laws have no singularity at a finite radius")
    raise ModelDomainError(f"no closed-form tail for family {law.family}")


def supercritical_link(n, x: float, t: float, m_order: int, C: float, rho: float, profile,
                       curve: GeneratorCurve | None = None):
    """Two leading-order expressions for sum_{i>=n} q_i(x) R_G^i i^t above the critical drift."""
    _require(profile, curve, ABOVE)
    if not 0 < rho < m_order + 1:
        raise ModelDomainError("rho_tail must lie in (0, m + 1)")
    if not t < m_order + 2 - rho:
        raise ModelDomainError("t must be below m + 2 - rho_tail")
    law = profile.law
    R = law.radius
    b = profile.config.beta_eff
    qp0 = profile.Qp_x0
    qpx = profile.Qp(profile.x0 + x)
    e = m_order + 2 - t - rho
    K1, K2 = link_constants(t, m_order, C, rho, b, R, qp0)
    n_arr = np.atleast_1d(np.asarray(n, dtype=int))
    lhs = K1 * qpx / n_arr.astype(float) ** e
    rhs = np.array([K2 * qpx * offspring_weighted_tail(law, int(k), t - 2) for k in n_arr])
    if np.ndim(n) == 0:
        return float(lhs[0]), float(rhs[0])
    return lhs, rhs


def link_constants(t: float, m_order: int, C: float, rho: float, beta: float, R: float, qp0: float):
    e = m_order + 2 - t - rho
    K1 = 2 * beta * C * R ** (m_order + 2 - rho) / (gamma_fn(rho) * e * qp0**3)
    K2 = 2 * beta * R**2 / qp0**3
    return K1, K2


def fprime_equiv_at_muc(s: float, x: float, profile, curve: GeneratorCurve | None = None) -> float:
    """Leading-order value of f_x'(s) as s -> R_G at the critical drift."""
    _require(profile, curve, AT)
    law = profile.law
    R = law.radius
    if not profile.q < s < R:
        raise ModelDomainError("s must lie in (q, R_G)")
    val, err = quad(lambda u: law.g_clamped(u) - u, s, R, limit=200, epsabs=0.0, epsrel=1e-10)
    if not np.isfinite(val) or val <= 0:
        raise IntegrationError("integral of G(u) - u over (s, R_G) failed")
    b = profile.config.beta_eff
    return -profile.Qp(profile.x0 + x) / (2 * math.sqrt(b * val))


def weighted_totals(profile, curve: GeneratorCurve, x: float):
    """sum_i q_i R^i, sum_i i q_i R^{i-1}, sum_i i(i-1) q_i R^{i-2} from the wave and generator.

    Uses f_x(R) = Q(x0 + x), f_x'(R) = Q'(x0 + x)/Q'(x0) and
    f_x''(R) = (Q''(x0 + x) - a'(R) Q'(x0 + x)) / a(R)^2; meaningful when Q'(x0) != 0.
    """
    y = profile.x0 + x
    f0 = profile.Q(y)
    a_R = profile.Qp_x0
    f1 = profile.Qp(y) / a_R
    ap_R = float(profile.Qpp(profile.x0)) / a_R
    f2 = (float(profile.Qpp(y)) - ap_R * profile.Qp(y)) / a_R**2
    return f0, f1, f2


def tail_exponent(i, terms) -> float:
    """Log-log slope of positive series terms over the supplied index window."""
    i = np.asarray(i, dtype=float)
    terms = np.asarray(terms, dtype=float)
    ok = terms > 0
    slope, _ = np.polyfit(np.log(i[ok]), np.log(terms[ok]), 1)
    return float(slope)


def series_is_finite(i, terms, margin: float = 0.1) -> bool:
    """Classify sum of power-law terms as finite (slope < -1 - margin) or divergent."""
    slope = tail_exponent(i, terms)
    if slope < -1 - margin:
        return True
    if slope > -1 + margin:
        return False
    raise ModelMismatchError(f"tail slope {slope:.3f} too close to -1 to classify")
