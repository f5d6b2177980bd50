"""Coefficients q_i(x) = P(Z_x = i, extinction) of the absorbed-count generating function.

Weighting the particle that is absorbed before branching by s turns the
renewal equation for Q into one for f_x(s):

    f_x(s) = s e^{-lam x} + T[G(f_.(s))](x).

Read coefficient-wise this is a fixed point for the vector (q_0, ..., q_N)
with G(f) expanded by truncated power-series composition.  Starting from
q_i = [i = 1] e^{-lam x} (no branching at all), the n-th iterate counts
extinct trees of depth at most n.  With p_0 = 0 the system is triangular:
column i only sees columns below i, so the iteration terminates exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ._renewal import RenewalOperator
from .errors import ConvergenceError, ModelDomainError, ResourceError
from .offspring import ModelConfig, OffspringLaw

WORK_BUDGET = 2e11


@numba.njit(cache=True)
def _compose(p, f):
    """Rows of sum_k p_k f^k truncated at the row length (non-negative series)."""
    M1, n1 = f.shape
    K = p.size - 1
    out = np.zeros((M1, n1))
    pw = np.empty(n1)
    nxt = np.empty(n1)
    for r in range(M1):
        row = f[r]
        lo_row = n1
        for i in range(n1):
            if row[i] != 0.0:
                lo_row = i
                break
        for i in range(n1):
            pw[i] = 0.0
        pw[0] = 1.0
        lo = 0
        out[r, 0] = p[0]
        if lo_row == n1:
            continue
        for k in range(1, K + 1):
            lo_new = lo + lo_row
            if lo_new >= n1:
                break
            for i in range(n1):
                nxt[i] = 0.0
            for i in range(lo_new, n1):
                acc = 0.0
                for j in range(lo, i - lo_row + 1):
                    acc += pw[j] * row[i - j]
                nxt[i] = acc
            for i in range(n1):
                pw[i] = nxt[i]
            lo = lo_new
            pk = p[k]
            if pk != 0.0:
                for i in range(lo, n1):
                    out[r, i] += pk * pw[i]
    return out


def compose(p: np.ndarray, f: np.ndarray) -> np.ndarray:
    """[G(f)]_i for i < f.shape[1], with G given by its coefficients ``p``."""
    f2 = np.ascontiguousarray(np.atleast_2d(f), dtype=float)
    out = _compose(np.ascontiguousarray(p, dtype=float), f2)
    return out if np.ndim(f) == 2 else out[0]


@dataclass(frozen=True)
class CoefficientTable:
    x_grid: np.ndarray
    N: int
    values: np.ndarray  # shape (len(x_grid), N + 1)
    dvalues: np.ndarray  # d/dx of the coefficients
    K: int
    composition_tail: float
    tail_mass_bound: np.ndarray
    iterations: int
    increment_norm: float
    h: float
    history: list = field(default_factory=list, repr=False)

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def index_of(self, x: float) -> int:
        hit = np.flatnonzero(np.abs(self.x_grid - x) <= 1e-12 * max(1.0, abs(x)))
        if hit.size == 0:
            raise ModelDomainError(f"x={x} is not on the table grid")
        return int(hit[0])

    def to_csv(self) -> str:
        lines = ["x,i,q_i,tail_bound"]
        for j, x in enumerate(self.x_grid):
            for i in range(self.N + 1):
                lines.append(f"{x:.17g},{i},{self.values[j, i]:.17g},{self.tail_mass_bound[j]:.17g}")
        return "\r\n".join(lines) + "\r\n"

    def manifest(self) -> dict:
        return {
            "N": self.N,
            "K": self.K,
            "composition_tail": self.composition_tail,
            "iterations": self.iterations,
            "increment_norm": self.increment_norm,
            "h": self.h,
            "x_grid": [float(v) for v in self.x_grid],
            "tail_mass_bound": [float(v) for v in self.tail_mass_bound],
        }


def _iterate(law, beta, mu, N, h, ymax, tail_rate, g_inf0, tol, max_iter, n_sweeps=None, record=None):
    """Coefficient-wise Picard sweeps on the uniform grid; returns grid values and derivatives."""
    M = int(math.ceil(ymax / h))
    # q_i only sees p_k with k <= i when p_0 = 0, so never cut G below N
    K = max(law.support_size, N, 2)
    p = law.pmf(K)
    K = max(int(np.flatnonzero(p)[-1]), 2)
    p = p[: K + 1]
    work = float(M + 1) * K * (N + 1) ** 2
    if work > WORK_BUDGET:
        raise ResourceError(f"coefficient budget exceeded: grid {M + 1} x K={K} x N={N}")
    op = RenewalOperator(beta, mu, h, M, tail_rate)
    g_inf = np.zeros(N + 1)
    g_inf[0] = g_inf0
    F = np.zeros((M + 1, N + 1))
    F[:, 1] = op.exp_lam_x
    if record is not None:
        record.append(F.copy())
    sweeps = max_iter if n_sweeps is None else n_sweeps
    inc = math.inf
    it = 0
    for it in range(1, sweeps + 1):
        Fn = op.apply(compose(p, F), g_inf)
        Fn[:, 1] += op.exp_lam_x
        d = np.abs(Fn - F).max(axis=0)
        scale = np.abs(Fn).max(axis=0)
        rel = np.where(scale > 0, d / np.where(scale > 0, scale, 1.0), 0.0)
        inc = float(rel.max())
        F = Fn
        if record is not None:
            record.append(F.copy())
        if n_sweeps is None and inc < tol:
            break
    else:
        if n_sweeps is None:
            raise ConvergenceError(f"coefficient iteration did not converge in {max_iter} sweeps")
    T, Tp, _ = op.apply(compose(p, F), g_inf, derivative=True)
    F = T
    F[:, 1] += op.exp_lam_x
    dF = Tp
    dF[:, 1] -= op.lam * op.exp_lam_x
    return op.x, F, dF, K, float(law.tail_mass(K)), it, inc


def _at(xg, F, dF, x_eval):
    x_eval = np.asarray(x_eval, dtype=float)
    spl = CubicHermiteSpline(xg, F, dF, axis=0)
    dspl = spl.derivative()
    vals, dvals = spl(x_eval), dspl(x_eval)
    # nodes reproduce exactly
    idx = np.rint(x_eval / (xg[1] - xg[0])).astype(int)
    on = np.abs(xg[np.clip(idx, 0, xg.size - 1)] - x_eval) < 1e-14
    vals[on] = F[idx[on]]
    dvals[on] = dF[idx[on]]
    return np.maximum(vals, 0.0), dvals


def _cauchy_bound(profile, x, coeffs, n_s=40, err=1e-9):
    """sup bound on sum_{i>N} q_i(x) from the wave values of f_x on (1, R]."""
    from .wave import f_eval

    R = profile.Q_x0
    N = coeffs.size - 1
    # f_x(s) - partial >= s^{N+1} sum_{i>N} q_i for s >= 1; err covers the
    # discretisation error of the table itself
    best = max(float(profile.Q(x) - coeffs.sum()), 0.0)
    if R > 1.0:
        for s in np.linspace(1.0, R, n_s + 1)[1:]:
            fx = f_eval(profile, x, s)
            partial = np.polynomial.polynomial.polyval(s, coeffs)
            best = min(best, max(fx - partial, 0.0) / s ** (N + 1))
    return best + err


def picard_coefficients(profile, N: int = 64, x_grid=(0.5, 1.0, 2.0), tol: float = 1e-10,
                        max_iter: int = 200, h: float | None = None) -> CoefficientTable:
    """Table of q_i(x), i <= N, for the model of a solved wave profile."""
    if N < 1:
        raise ModelDomainError("N must be at least 1")
    cfg: ModelConfig = profile.config
    law = cfg.law
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if np.any(x_grid < 0):
        raise ModelDomainError("x must be non-negative")
    h = h or cfg.numerics.coeff_h
    ymax = max(profile.ymax, float(x_grid.max()) + 4 * h)
    xg, F, dF, K, ktail, it, inc = _iterate(
        law, cfg.beta_eff, cfg.mu, N, h, ymax, profile.lam_tilde, profile.q, tol, max_iter
    )
    vals, dvals = _at(xg, F, dF, x_grid)
    bounds = np.array([_cauchy_bound(profile, x, vals[j]) if x > 0 else 0.0
                       for j, x in enumerate(x_grid)])
    return CoefficientTable(
        x_grid=x_grid, N=N, values=vals, dvalues=dvals, K=K, composition_tail=ktail,
        tail_mass_bound=bounds, iterations=it, increment_norm=inc, h=h,
    )


def picard_iterates(law: OffspringLaw, beta: float, mu: float, N: int, x_grid, n_sweeps: int,
                    h: float = 1e-2, ymax: float | None = None) -> list[np.ndarray]:
    """The first Picard iterates q^{(0)}, ..., q^{(n_sweeps)} at ``x_grid``.

    No traveling wave is needed, so this also works for critical and
    subcritical laws.  ``beta`` is paired with the law as given.
    """
    b = beta * law.beta_scale
    alpha = math.sqrt(2 * b + mu * mu)
    lam = alpha + mu
    ymax = ymax or (60.0 + 10 * n_sweeps) / min(lam, alpha - mu)
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    record: list = []
    q0 = law.pmf(0)[0]
    # column 0 of the n-th iterate tends to G_n(0); for the short closing tail the
    # difference is immaterial because the grid runs far past every decay scale
    xg, F, dF, *_ = _iterate(law, b, mu, N, h, ymax, lam, q0, 0.0, n_sweeps, n_sweeps=n_sweeps,
                             record=record)
    return [_at(xg, Fi, np.gradient(Fi, xg, axis=0, edge_order=2), x_grid)[0] for Fi in record]


def single_branch_exact(law: OffspringLaw, beta: float, mu: float, x: float, k: int) -> float:
    """P(one branching event, k children, all absorbed without branching)."""
    if x <= 0:
        raise ModelDomainError("x must be positive")
    if k == 1 or k < 0:
        raise ModelDomainError("k must be 0 or at least 2")
    b = beta * law.beta_scale
    alpha = math.sqrt(2 * b + mu * mu)
    lam = alpha + mu
    pk = float(law.pmf(k)[k])
    if k == 0:
        return pk * (1 - math.exp(-lam * x))
    return 2 * b * pk * (math.exp(-lam * x) - math.exp(-k * lam * x)) / (
        lam * (k - 1) * (alpha - mu + lam * k)
    )


def f_from_table(table: CoefficientTable, x: float, s: float, with_bound: bool = False):
    c = table.values[table.index_of(x)]
    val = float(np.polynomial.polynomial.polyval(s, c))
    if with_bound:
        return val, float(table.tail_mass_bound[table.index_of(x)] * max(1.0, abs(s)) ** table.N)
    return val


def fprime_from_table(table: CoefficientTable, x: float, s: float) -> float:
    c = table.values[table.index_of(x)]
    return float(np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(c)))
