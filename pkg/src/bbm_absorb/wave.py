"""Extinction probability Q(., mu) as a traveling wave, and the generating
function f_x(s) = Q(Q^{-1}(s) + x) of the absorbed count restricted to extinction.

Q is the minimal solution of the renewal equation

    Q(x) = e^{-lam x} + T[G(Q)](x),   x >= 0,

obtained by Picard iteration from Q = 0: the n-th iterate is the probability
of extinction within n branching generations, so iterates increase
monotonically to Q.  Left of 0 the profile is continued by integrating
1/2 Q'' + mu Q' + beta (G(Q) - Q) = 0 backwards until either Q' = 0 or Q
reaches the radius of convergence of G.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from ._renewal import RenewalOperator
from .errors import ConvergenceError, ExtensionError, ModelDomainError, NoTravelingWaveError
from .offspring import ModelConfig, OffspringLaw
from .generator import CLOSE_GAP, _close_gap


@dataclass(frozen=True)
class WaveProfile:
    config: ModelConfig
    grid: np.ndarray
    Q_values: np.ndarray
    Qp_values: np.ndarray
    x0: float
    q: float
    lam_tilde: float
    k_tail: float
    Qp0: float
    regime_hint: str  # "qprime_zero" or "hit_RG"
    ymax: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def mu(self) -> float:
        return self.config.mu

    @property
    def beta(self) -> float:
        return self.config.beta

    @property
    def law(self) -> OffspringLaw:
        return self.config.law

    @property
    def Q_x0(self) -> float:
        return float(self.Q_values[0])

    @property
    def Qp_x0(self) -> float:
        return float(self.Qp_values[0])

    @property
    def _Q_last(self) -> float:
        return float(self.Q_values[-1])

    def _qpp_nodes(self, Q, Qp):
        b = self.config.beta_eff
        return -2 * self.mu * Qp - 2 * b * (self.law.g_clamped(Q) - Q)

    def __post_init__(self):
        qpp = self._qpp_nodes(self.Q_values, self.Qp_values)
        object.__setattr__(self, "_spline_Q", CubicHermiteSpline(self.grid, self.Q_values, self.Qp_values))
        object.__setattr__(self, "_spline_Qp", CubicHermiteSpline(self.grid, self.Qp_values, qpp))

    def Q(self, x):
        """Q at arbitrary x >= x0; analytic exponential tail past the grid."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x0 - 1e-12):
            raise ModelDomainError("Q is only defined to the right of x0")
        inside = self._spline_Q(np.clip(x, self.x0, self.ymax))
        tail = self.q + (self._Q_last - self.q) * np.exp(-self.lam_tilde * (x - self.ymax))
        out = np.where(x > self.ymax, tail, inside)
        return float(out) if out.ndim == 0 else out

    def Qp(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x0 - 1e-12):
            raise ModelDomainError("Q is only defined to the right of x0")
        inside = self._spline_Qp(np.clip(x, self.x0, self.ymax))
        tail = -self.lam_tilde * (self._Q_last - self.q) * np.exp(-self.lam_tilde * (x - self.ymax))
        out = np.where(x > self.ymax, tail, inside)
        return float(out) if out.ndim == 0 else out

    def Qpp(self, x):
        """Second derivative from the wave equation itself."""
        return self._qpp_nodes(np.asarray(self.Q(x)), np.asarray(self.Qp(x)))

    def summary(self) -> dict:
        return {
            "mu": self.mu,
            "beta": self.beta,
            "x0": self.x0,
            "q": self.q,
            "lambda_tilde": self.lam_tilde,
            "k_tail": self.k_tail,
            "Qprime0": self.Qp0,
            "residual": self.diagnostics.get("residual"),
            "Q_x0": self.Q_x0,
            "Qprime_x0": self.Qp_x0,
            "regime_hint": self.regime_hint,
        }

    def to_csv(self) -> str:
        lines = ["x,Q,Qprime"]
        for x, y, yp in zip(self.grid, self.Q_values, self.Qp_values):
            lines.append(f"{x:.17g},{y:.17g},{yp:.17g}")
        return "\r\n".join(lines) + "\r\n"

    def sidecar_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _picard(op: RenewalOperator, law: OffspringLaw, q: float, tol: float, max_iter: int):
    Q = np.zeros(op.M + 1)
    inc_prev = math.inf
    min_step = 0.0
    for it in range(1, max_iter + 1):
        Qn = op.exp_lam_x + op.apply(law.g(Q), q)
        diff = Qn - Q
        min_step = min(min_step, float(diff.min()))
        inc = float(np.abs(diff).max())
        Q = Qn
        rho = inc / inc_prev if inc_prev > 0 else 0.0
        inc_prev = inc
        if inc < tol and (rho < 1 and rho / (1 - rho) * inc < tol or inc == 0.0):
            return Q, it, inc, min_step
    raise ConvergenceError(f"Picard iteration did not converge in {max_iter} sweeps (last increment {inc:.3g})")


def _fit_tail(x, Q, q, lo=1e-9, hi=1e-8):
    d = Q - q
    sel = (d > lo) & (d < hi)
    if sel.sum() < 10:
        sel = d > 0
        sel &= np.arange(d.size) > d.size // 2
    slope, icpt = np.polyfit(x[sel], np.log(d[sel]), 1)
    return -slope, math.exp(icpt)


def _extend_left(law: OffspringLaw, beta: float, mu: float, Qp0: float, num):
    R = law.radius
    finite_R = math.isfinite(R)
    # where G blows up at R_G the last stretch is closed in the integrated form
    R_stop = R if not finite_R or law.converges_at_radius(0) else R * (1 - CLOSE_GAP)

    def rhs(x, y):
        Q, P = y
        return [P, -2 * mu * P - 2 * beta * (law.g_clamped(Q) - Q)]

    def ev_flat(x, y):
        return y[1]

    ev_flat.terminal = True
    ev_flat.direction = 1

    events = [ev_flat]
    if finite_R:
        def ev_radius(x, y):
            return y[0] - R_stop

        ev_radius.terminal = True
        ev_radius.direction = 1
        events.append(ev_radius)

    def ev_guard(x, y):
        over = abs(y[1]) - num.qprime_guard
        if finite_R:
            over = max(over, y[0] - (R + 1))
        return over

    ev_guard.terminal = True
    ev_guard.direction = 1
    events.append(ev_guard)

    sol = solve_ivp(
        rhs,
        (0.0, -num.x_guard),
        [1.0, Qp0],
        method="RK45",
        rtol=num.ode_rtol,
        atol=num.ode_atol,
        events=events,
        dense_output=True,
    )
    if sol.status != 1:
        x_last = float(sol.t[-1])
        raise ExtensionError(f"left extension reached x={x_last:.6g} without an event", x_last)
    hits = [(float(t[0]), i) for i, t in enumerate(sol.t_events) if len(t)]
    x0, which = max(hits)  # the first event met going left
    if which == len(events) - 1:
        raise ExtensionError(f"left extension hit a guard at x={x0:.6g}", x0)
    y0 = sol.y_events[which][0]
    kind = "qprime_zero" if which == 0 else "hit_RG"
    if kind == "hit_RG" and R_stop < R:
        Q1, P1 = float(y0[0]), float(y0[1])
        Q_end, P_end = _close_gap(law, beta, mu, Q1, P1)
        # exact when P is linear or a square root in Q over the gap
        x0 += 2 * (Q_end - Q1) / (P1 + P_end)
        y0 = np.array([Q_end, P_end])
        if P_end == 0.0:
            kind = "qprime_zero"
    return sol, x0, y0, kind


def solve_profile(config: ModelConfig) -> WaveProfile:
    law, num, mu = config.law, config.numerics, config.mu
    beta = config.beta_eff
    c = config.consts
    if mu <= -c.mu0:
        raise NoTravelingWaveError(f"mu={mu} <= -mu0={-c.mu0:.6g}: no traveling wave exists")
    q = law.extinction_prob
    h = num.h
    ymax = (math.log(1.0 / num.tail_eps) + 4.0) / c.lam_tilde
    for _ in range(8):
        M = int(math.ceil(ymax / h))
        op = RenewalOperator(beta, mu, h, M, c.lam_tilde)
        Q, iters, inc, min_step = _picard(op, law, q, num.picard_tol, num.picard_max_iter)
        if Q[-1] - q < num.tail_eps:
            break
        ymax *= 1.25
    else:
        raise ConvergenceError("could not place the truncation point past the 1e-12 tail")
    ymax = op.x[-1]
    T, Tp, C = op.apply(law.g(Q), q, derivative=True)
    Q = op.exp_lam_x + T
    Qp = -op.lam * op.exp_lam_x + Tp
    Qp0 = 2 * beta * float(C) - op.lam

    # ODE residual by fourth-order centred differences
    gq = law.g(Q)
    Qm2, Qm1, Q0, Qp1, Qp2 = Q[:-4], Q[1:-3], Q[2:-2], Q[3:-1], Q[4:]
    d2 = (-Qp2 + 16 * Qp1 - 30 * Q0 + 16 * Qm1 - Qm2) / (12 * h * h)
    d1 = (-Qp2 + 8 * Qp1 - 8 * Qm1 + Qm2) / (12 * h)
    residual = float(np.abs(0.5 * d2 + mu * d1 + beta * (gq[2:-2] - Q0)).max())
    if residual > num.residual_tol:
        raise ConvergenceError(f"wave equation residual {residual:.3g} exceeds {num.residual_tol:.3g}")

    fitted_rate, k_tail = _fit_tail(op.x, Q, q)

    sol, x0, y0, kind = _extend_left(law, beta, mu, Qp0, num)
    n_left = int(math.floor(-x0 / h - 1e-9))
    xs = -h * np.arange(n_left, 0, -1)
    if xs.size and xs[0] - x0 < 1e-3 * h:
        xs = xs[1:]
    left = sol.sol(xs) if xs.size else np.empty((2, 0))
    grid = np.concatenate([[x0], xs, op.x])
    Qv = np.concatenate([[y0[0]], left[0], Q])
    Qpv = np.concatenate([[y0[1] if kind != "qprime_zero" else 0.0], left[1], Qp])
    if kind == "hit_RG":
        Qv[0] = law.radius

    diag = {
        "iterations": iters,
        "last_increment": inc,
        "min_iterate_step": min_step,
        "residual": residual,
        "ymax": ymax,
        "fitted_tail_rate": fitted_rate,
        "M": M,
    }
    return WaveProfile(
        config=config,
        grid=grid,
        Q_values=Qv,
        Qp_values=Qpv,
        x0=float(x0),
        q=q,
        lam_tilde=c.lam_tilde,
        k_tail=k_tail,
        Qp0=Qp0,
        regime_hint=kind,
        ymax=float(ymax),
        diagnostics=diag,
    )


def _q_inverse_scalar(profile: WaveProfile, s: float) -> float:
    if s == 1.0:
        return 0.0
    if s == profile.Q_x0:
        return profile.x0
    if not (profile.q < s <= profile.Q_x0):
        raise ModelDomainError(f"s={s} outside (q, Q(x0)] = ({profile.q}, {profile.Q_x0}]")
    Qv = profile.Q_values
    if s < Qv[-1]:
        return profile.ymax + math.log((Qv[-1] - profile.q) / (s - profile.q)) / profile.lam_tilde
    # Q decreasing: find cell with Q[j] >= s >= Q[j+1]
    j = int(np.searchsorted(-Qv, -s, side="left"))
    j = min(max(j, 1), Qv.size - 1)
    a, b = profile.grid[j - 1], profile.grid[j]
    fa, fb = Qv[j - 1] - s, Qv[j] - s
    if fa == 0.0:
        return float(a)
    if fb == 0.0:
        return float(b)
    return float(brentq(lambda t: profile._spline_Q(t) - s, a, b, xtol=1e-15, rtol=1e-15))


def q_inverse(profile: WaveProfile, s):
    """Inverse of the decreasing branch of Q on (x0, inf)."""
    if np.ndim(s) == 0:
        return _q_inverse_scalar(profile, float(s))
    return np.array([_q_inverse_scalar(profile, float(v)) for v in np.ravel(s)]).reshape(np.shape(s))


def f_eval(profile: WaveProfile, x, s):
    """f_x(s) = Q(Q^{-1}(s) + x) for x >= 0."""
    if np.any(np.asarray(x) < 0):
        raise ModelDomainError("f_x is defined for x >= 0")
    return profile.Q(q_inverse(profile, s) + np.asarray(x, dtype=float))


def qprime_identity_sup(x, Qp, source, Qp0, beta, mu) -> float:
    """Sup-norm defect of Q'(x) = (Q'(0) - 2 beta int_0^x e^{2 mu y} source(y) dy) e^{-2 mu x}.

    ``source`` stands for G(Q) - Q at the grid points, which must contain 0.
    Where e^{2 mu x} < 1 the defect is measured after multiplying both sides
    by e^{2 mu x}, otherwise the exponential factor turns quadrature roundoff
    into a spurious residual.
    """
    x = np.asarray(x, dtype=float)
    i0 = int(np.flatnonzero(x == 0.0)[0])
    w = np.exp(2 * mu * x) * source
    right = cumulative_simpson(w[i0:], x=x[i0:], initial=0.0)
    if i0 >= 2:
        cum = cumulative_simpson(w[: i0 + 1], x=x[: i0 + 1], initial=0.0)
        left = cum - cum[-1]
    else:
        left = np.zeros(i0 + 1)
        if i0 == 1:
            left[0] = -0.5 * (w[0] + w[1]) * (x[1] - x[0])
    integral = np.concatenate([left[:-1], right])
    # compare in the integrated form where e^{-2 mu x} would amplify roundoff
    scale = np.exp(2 * mu * x)
    diff = Qp * scale - (Qp0 - 2 * beta * integral)
    return float(np.abs(diff / np.maximum(scale, 1.0)).max())


def qprime_identity_residual(profile: WaveProfile) -> float:
    src = profile.law.g_clamped(profile.Q_values) - profile.Q_values
    g = profile.grid
    # the left endpoint may sit closer than h to its neighbour; Simpson handles uneven spacing
    return qprime_identity_sup(g, profile.Qp_values, src, profile.Qp0, profile.config.beta_eff, profile.mu)


def tail_bound_check(profile: WaveProfile, ys=(0.5, 1.0)) -> bool:
    """Exponential domination Q(x) <= Q(y) e^{rho (y - x)} for x >= y, valid when G(0) = 0."""
    if profile.q != 0.0:
        raise ModelDomainError("tail bound requires q = 0; apply tilde_transform first")
    beta, mu = profile.config.beta_eff, profile.mu
    x = profile.grid[profile.grid >= 0]
    Qx = profile.Q_values[profile.grid >= 0]
    for y in ys:
        Qy = profile.Q(y)
        rho = math.sqrt(mu * mu + 2 * beta * (1 - Qy)) + mu
        sel = x >= y
        bound = Qy * np.exp(rho * (y - x[sel]))
        if np.any(Qx[sel] > bound * (1 + 1e-9) + 1e-14):
            return False
    return True
