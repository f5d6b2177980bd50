"""Generator curve a(s) = Q'(Q^{-1}(s)), the radius R(mu) and the critical drift.

a solves a a' = -2 mu a - 2 beta (G(s) - s) on (q, R(mu)), leaving q along the
line a = -lam_tilde (s - q).  Either a returns to 0 at some s* < R_G (then
R = s*), or s reaches R_G first (then R = R_G).  Close to a = 0 the curve has
a square-root profile in s, so the last stretch is integrated with a as the
independent variable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import fixed_quad, solve_ivp
from scipy.optimize import brentq

from .errors import BracketError, InconsistencyError, IntegrationError, NoTravelingWaveError
from .offspring import IntegralClass, ModelConfig, Numerics, OffspringLaw

BELOW, AT, ABOVE = "below_muc", "at_muc", "above_muc"
A_HIT_ZERO, S_HIT_RG = "a_hit_zero", "s_hit_RG"
# relative gap below a divergent R_G bridged in closed form instead of by the stepper
CLOSE_GAP = 1e-6


@dataclass(frozen=True)
class GeneratorCurve:
    mu: float
    beta: float
    q: float
    s_grid: np.ndarray
    a_values: np.ndarray
    R: float
    a_end: float
    regime: str
    termination: str
    s_switch: float
    _phase1: object = field(repr=False, default=None)
    _phase2: object = field(repr=False, default=None)

    def a(self, s):
        """a at arbitrary s in [q, R] from the dense ODE output."""
        if np.ndim(s) == 0:
            return self._a_scalar(float(s))
        return np.array([self._a_scalar(float(v)) for v in np.ravel(s)]).reshape(np.shape(s))

    def _a_scalar(self, s: float) -> float:
        if s <= self.q:
            return 0.0
        if s > self.R * (1 + 1e-14):
            raise ValueError(f"s={s} beyond the end of the curve R={self.R}")
        s1 = self.s_grid[0]
        if s < s1:
            # inside the seed interval a is linear to first order
            return float(self.a_values[0] * (s - self.q) / (s1 - self.q))
        if self._phase2 is None or s <= self.s_switch:
            return float(self._phase1(s)[0])
        sol2, a_lo, a_hi = self._phase2
        lo, hi = a_lo, a_hi
        s_lo, s_hi = sol2(lo)[0] - s, sol2(hi)[0] - s
        if s_hi <= 0:
            return float(hi)
        if s_lo >= 0:
            return float(lo)
        return float(brentq(lambda t: sol2(t)[0] - s, lo, hi, xtol=1e-15, rtol=1e-15))

    def summary(self) -> dict:
        return {
            "mu": self.mu,
            "R": self.R,
            "regime": self.regime,
            "termination": self.termination,
            "a_end": self.a_end,
        }

    def to_csv(self) -> str:
        lines = ["s,a"]
        for s, a in zip(self.s_grid, self.a_values):
            lines.append(f"{s:.17g},{a:.17g}")
        return "\r\n".join(lines) + "\r\n"

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _stop_point(law: OffspringLaw) -> float:
    R = law.radius
    if not math.isfinite(R):
        return math.inf
    return R if law.converges_at_radius(0) else R * (1 - CLOSE_GAP)


def _close_gap(law: OffspringLaw, beta: float, mu: float, s1: float, a1: float) -> tuple[float, float]:
    """(end point, a there) from a(s1) when G diverges at R_G.

    Over [s1, R_G] a barely moves, so d(a^2)/ds = -4 mu a - 4 beta (G - s) is
    integrated with a frozen at a1; G - s has an integrable singularity at R_G.
    If a^2 reaches 0 first, the curve closes there.
    """
    R = law.radius
    if s1 >= R:
        return R, a1
    t1 = math.sqrt(R - s1)

    def rad(t):
        # u = R - t^2 softens the endpoint singularity
        val, _ = fixed_quad(lambda w: 2 * w * (law.g_clamped(R - w * w) - (R - w * w)), t, t1, n=32)
        return a1 * a1 - 4 * mu * a1 * (t1 * t1 - t * t) - 4 * beta * val

    end = rad(0.0)
    if end > 0:
        return R, -math.sqrt(end)
    if rad(t1 * (1 - 1e-12)) <= 0:
        return s1, 0.0
    t_star = brentq(rad, 0.0, t1 * (1 - 1e-12), xtol=1e-15)
    return R - t_star * t_star, 0.0


def classify(termination: str, a_end: float, event_tol: float) -> str:
    if termination == A_HIT_ZERO:
        return BELOW
    return AT if abs(a_end) < event_tol else ABOVE


def integrate_a(config: ModelConfig) -> GeneratorCurve:
    law, num, mu = config.law, config.numerics, config.mu
    beta = config.beta_eff
    c = config.consts
    if mu <= -c.mu0:
        raise NoTravelingWaveError(f"mu={mu} <= -mu0={-c.mu0:.6g}: the generator curve does not exist")
    q, lt = law.extinction_prob, c.lam_tilde
    eps = num.seed_eps * (1 - q)
    s0, a0 = q + eps, -lt * eps
    s_stop = _stop_point(law)
    s_end = s_stop if math.isfinite(s_stop) else num.s_guard
    thr = -num.switch_frac * lt

    def g(s):
        return law.g_clamped(s)

    def da_ds(s, y):
        return [-2 * mu - 2 * beta * (g(s) - s) / y[0]]

    def ev_switch(s, y):
        return y[0] - thr if s > 1.0 else -1.0

    ev_switch.terminal = True
    ev_switch.direction = 1

    def ev_pos(s, y):
        return y[0]

    ev_pos.terminal = True
    ev_pos.direction = 1

    sol1 = solve_ivp(
        da_ds, (s0, s_end), [a0], method="DOP853", rtol=num.ode_rtol, atol=num.ode_atol,
        events=[ev_switch, ev_pos], dense_output=True,
    )
    if sol1.status < 0:
        raise IntegrationError(f"generator integration failed: {sol1.message}")
    s_pts = list(sol1.t)
    a_pts = list(sol1.y[0])

    phase2 = None
    if sol1.status == 1 and len(sol1.t_events[0]):
        s1 = float(sol1.t_events[0][0])
        a1 = float(sol1.y_events[0][0][0])

        def ds_da(a, y):
            s = y[0]
            return [a / (-2 * mu * a - 2 * beta * (g(s) - s))]

        def ev_rg(a, y):
            return y[0] - s_end

        ev_rg.terminal = True
        ev_rg.direction = 1
        sol2 = solve_ivp(
            ds_da, (a1, 0.0), [s1], method="DOP853", rtol=num.ode_rtol, atol=num.ode_atol,
            events=[ev_rg], dense_output=True,
        )
        if sol2.status < 0:
            raise IntegrationError(f"generator integration failed near a=0: {sol2.message}")
        s_pts += list(sol2.y[0][1:])
        a_pts += list(sol2.t[1:])
        if sol2.status == 1:
            a_hit = float(sol2.t_events[0][0])
            R, a_end = _close_gap(law, beta, mu, s_end, a_hit)
            termination = S_HIT_RG if a_end < 0 else A_HIT_ZERO
            a_last = a_hit
        else:
            termination, R, a_end = A_HIT_ZERO, float(sol2.y[0][-1]), 0.0
            a_last = 0.0
        s_pts[-1], a_pts[-1] = R, a_end
        phase2 = (sol2.sol, a1, a_last)
        s_switch = s1
    elif sol1.status == 1:
        # a reached 0 without passing the switch threshold, which can only
        # happen at s <= 1.  Near -mu0, R - 1 falls below roundoff and the curve
        # closes at 1 to working precision.
        s_hit = float(sol1.t_events[1][0])
        if s_hit < 1 - 1e-8:
            raise IntegrationError(f"generator curve returned to 0 at s={s_hit:.12g} < 1")
        termination, R, a_end = A_HIT_ZERO, 1.0, 0.0
        s_pts[-1], a_pts[-1] = s_hit, 0.0
        s_switch = s_hit
    else:
        if not math.isfinite(s_stop):
            raise IntegrationError(f"generator curve did not close before s={num.s_guard:.3g}")
        R, a_end = _close_gap(law, beta, mu, s_end, float(sol1.y[0][-1]))
        termination = S_HIT_RG if a_end < 0 else A_HIT_ZERO
        s_switch = R
    regime = classify(termination, a_end, num.event_tol)
    return GeneratorCurve(
        mu=mu, beta=config.beta, q=q,
        s_grid=np.array(s_pts), a_values=np.array(a_pts), R=R, a_end=a_end,
        regime=regime, termination=termination, s_switch=s_switch,
        _phase1=sol1.sol, _phase2=phase2,
    )


def radius(config: ModelConfig, cross_check: bool = True) -> float:
    """R(mu): 1 for mu <= -mu0, otherwise the end of the generator curve.

    With ``cross_check`` the value is compared with Q(x0) from the wave solver.
    """
    if config.mu <= -config.consts.mu0:
        return 1.0
    R = integrate_a(config).R
    if cross_check:
        from .wave import solve_profile

        prof = solve_profile(config)
        tol = config.numerics.cross_tol
        if abs(prof.Q_x0 - R) > 100 * tol:
            raise InconsistencyError(
                f"generator radius {R:.12g} and wave Q(x0) {prof.Q_x0:.12g} disagree"
            )
    return R


def regime_classify(config_or_curve) -> str:
    if isinstance(config_or_curve, GeneratorCurve):
        return config_or_curve.regime
    return integrate_a(config_or_curve).regime


def mu_c_locate(law: OffspringLaw, beta: float, tol: float = 1e-14, numerics: Numerics | None = None,
                mu_max: float = 64.0) -> float:
    """Critical drift; ``math.inf`` when the integral of G over [0, R_G] diverges."""
    if law.integral_class() is IntegralClass.INFINITE:
        return math.inf
    numerics = numerics or Numerics()
    cfg = ModelConfig(law, beta, 0.0, numerics)
    mu0 = cfg.consts.mu0

    def hits_rg(mu):
        return integrate_a(cfg.with_mu(mu)).termination == S_HIT_RG

    lo = max(-mu0 + 1e-3, -5.0)
    hi = 5.0
    if hits_rg(lo):
        raise BracketError(f"curve already reaches R_G at the lower bracket end mu={lo}")
    while not hits_rg(hi):
        lo = hi
        hi *= 2
        if hi > mu_max:
            raise BracketError(f"no drift up to mu_max={mu_max} reaches R_G")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if hits_rg(mid):
            hi = mid
        else:
            lo = mid
    return hi
