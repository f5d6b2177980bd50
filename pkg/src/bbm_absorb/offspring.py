"""Reproduction laws, their generating functions and the derived model constants.

A law is stored with ``p_1 = 0``.  Laws given with ``p_1 > 0`` are reduced at
construction: the mass at one is removed, the rest renormalised, and the
branching rate is scaled by ``1 - p_1`` (``beta_scale``).  A particle that
"splits" into a single child is indistinguishable from one that did not
split, so every observable of the killed process is preserved.

Four families are supported:

``explicit``
    finite support, ``G`` is a polynomial and ``R_G = inf``.
``geometric-tail``
    ``p_k = (1 - p0) (1 - r) r^(k-2)`` for ``k >= 2``; ``G`` is rational with a
    pole at ``R_G = 1/r``.
``polylog-tail``
    ``p_k = c r^k k^(-gamma)`` for ``k >= 2``; ``G`` is expressed through
    polylogarithms, ``R_G = 1/r`` and ``G(R_G) < inf`` iff ``gamma > 1``.
``custom-coefficient-rule``
    user callable ``k -> p_k`` with a declared radius and a tail-ratio bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, reduce
from typing import Callable, Optional

import numpy as np
from mpmath import fp
from scipy.stats import binom

from .errors import DivergenceError, ModelDomainError

MASS_TOL = 1e-12
MATERIALIZE_TAIL = 1e-15
SERIES_REL_TOL = 1e-15
_DIRECT_Z = 0.9


class IntegralClass(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    UNDECIDABLE = "undecidable"


def _stirling1(n: int) -> list[int]:
    """Signed Stirling numbers of the first kind s(n, j), j = 0..n."""
    row = [1]
    for m in range(n):
        nxt = [0] * (len(row) + 1)
        for j, c in enumerate(row):
            nxt[j + 1] += c
            nxt[j] -= m * c
        row = nxt
    return row


def _falling(k: np.ndarray, n: int) -> np.ndarray:
    out = np.ones_like(k, dtype=float)
    for j in range(n):
        out = out * (k - j)
    return out


def _power_tail_direct(z: np.ndarray, gamma: float, order: int, kmin: int) -> np.ndarray:
    """sum_{k>=kmin} k^-gamma (k)_order z^(k-order) by partial sums, |z| <= 0.9."""
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    k0 = max(kmin, order)
    if zmax == 0.0:
        val = 1.0 * math.factorial(order) * k0 ** -gamma if k0 == order else 0.0
        return np.full(z.shape, val)
    # enough terms for z^K K^(order-gamma) < 1e-17
    lz = math.log(zmax)
    K = k0 + 8
    while (K - order) * lz + (order + abs(gamma)) * math.log(K) > math.log(1e-18):
        K += 16
    k = np.arange(k0, K + 1, dtype=float)
    coef = k ** -gamma * _falling(k, order)
    if z.size < 64:
        total = np.power.outer(z, k - order) @ coef
    else:
        # Horner in z on the shifted exponents k - order >= k0 - order
        total = np.polynomial.polynomial.polyval(z, np.concatenate([np.zeros(k0 - order), coef]))
    # geometric bound of the remainder past K, per argument
    az = np.abs(z)
    ratio = az * (1.0 + 1.0 / K) ** max(-gamma, 0.0) * (K + 1) / (K + 1 - order)
    bound = np.abs(coef[-1]) * az ** (K - order) * ratio / (1.0 - ratio)
    if np.any(bound > SERIES_REL_TOL * np.abs(total)):
        raise ArithmeticError("partial sum tail bound not certified")
    return total


def _power_tail_closed(z: float, gamma: float, order: int, kmin: int) -> float:
    """Same sum via polylogarithms; valid for 0 < z <= 1."""
    if z == 1.0 and gamma - order <= 1.0:
        raise DivergenceError(
            f"sum_k k^(-{gamma}) (k)_{order} diverges on the circle of convergence"
        )
    st = _stirling1(order)
    total = 0.0
    for j, c in enumerate(st):
        if c:
            total += c * float(fp.polylog(gamma - j, z))
    total /= z ** order
    for k in range(max(order, 1), kmin):
        total -= k ** -gamma * math.factorial(k) / math.factorial(k - order) * z ** (k - order)
    return total


def power_tail_sum(z, gamma: float, order: int = 0, kmin: int = 2):
    """sum_{k >= kmin} k^-gamma * k(k-1)...(k-order+1) * z^(k-order) for 0 <= z <= 1."""
    zz = np.asarray(z, dtype=float)
    flat = np.atleast_1d(zz).ravel()
    out = np.empty_like(flat)
    small = np.abs(flat) <= _DIRECT_Z
    if np.any(small):
        out[small] = _power_tail_direct(flat[small], gamma, order, kmin)
    for idx in np.flatnonzero(~small):
        out[idx] = _power_tail_closed(float(flat[idx]), gamma, order, kmin)
    if zz.ndim == 0:
        return float(out[0])
    return out.reshape(zz.shape)


class OffspringLaw:
    """Base class; subclasses define the coefficients and ``_g``."""

    family: str = ""
    radius: float = math.inf
    beta_scale: float = 1.0
    p0: float = 0.0

    # -- to be provided by subclasses ---------------------------------------------
    def pmf(self, kmax: int) -> np.ndarray:
        raise NotImplementedError

    def _g(self, s: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def converges_at_radius(self, order: int = 0) -> bool:
        raise NotImplementedError

    def integral_class(self) -> IntegralClass:
        raise NotImplementedError

    def tail_mass(self, K: int) -> float:
        """Upper bound on sum_{k>K} p_k."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # -- shared machinery -----------------------------------------------------------
    def g(self, s, order: int = 0):
        """``order``-th derivative of the generating function at ``s``."""
        if order < 0:
            raise ModelDomainError("derivative order must be non-negative")
        arr = np.asarray(s, dtype=float)
        amax = float(np.max(np.abs(arr))) if arr.size else 0.0
        if amax > self.radius:
            raise ModelDomainError(f"|s|={amax} exceeds the radius of convergence {self.radius}")
        if amax == self.radius and not self.converges_at_radius(order):
            raise DivergenceError(f"G^({order}) diverges at R_G={self.radius}")
        out = self._g(arr, order)
        if arr.ndim == 0:
            return float(out)
        return out

    def g_clamped(self, s, order: int = 0):
        """``g`` with arguments clipped into the closed domain of convergence."""
        top = self.radius if self.converges_at_radius(order) else self.radius * (1 - 1e-15)
        return self.g(np.minimum(np.asarray(s, dtype=float), top), order)

    @cached_property
    def support_size(self) -> int:
        """Index K with sum_{k>K} p_k < 1e-15 (materialisation cut)."""
        K = 2
        while self.tail_mass(K) >= MATERIALIZE_TAIL:
            K = int(K * 1.5) + 1
        lo, hi = 1, K
        while lo < hi:
            mid = (lo + hi) // 2
            if self.tail_mass(mid) < MATERIALIZE_TAIL:
                hi = mid
            else:
                lo = mid + 1
        return lo

    @cached_property
    def probabilities(self) -> np.ndarray:
        return self.pmf(self.support_size)

    @cached_property
    def mean(self) -> float:
        return float(self.g(1.0, 1))

    @cached_property
    def extinction_prob(self) -> float:
        return _smallest_fixed_point(self)

    @cached_property
    def span(self) -> int:
        idx = np.flatnonzero(self.probabilities > 0)
        return int(reduce(math.gcd, (abs(int(i) - 1) for i in idx), 0)) or 1

    @cached_property
    def g_prime_q(self) -> float:
        return float(self.g(self.extinction_prob, 1))

    def sample_cdf(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        c[-1] = 1.0
        return c

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_dict()})"


class ExplicitLaw(OffspringLaw):
    family = "explicit"

    def __init__(self, p, *, allow_noncritical: bool = False):
        p = np.asarray(p, dtype=float).copy()
        if p.ndim != 1 or p.size == 0:
            raise ModelDomainError("explicit law needs a non-empty probability vector")
        if np.any(p < 0):
            raise ModelDomainError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise ModelDomainError(f"probabilities sum to {p.sum():.15g}, not 1")
        self.given = p.copy()
        if p.size > 1 and p[1] > 0:
            if p[1] >= 1.0:
                raise ModelDomainError("L = 1 almost surely is not a branching law")
            self.beta_scale = 1.0 - p[1]
            p[1] = 0.0
            p /= p.sum()
        last = np.flatnonzero(p > 0)[-1]
        self.p = p[: last + 1]
        self.p0 = float(self.p[0])
        _check_supercritical(self, allow_noncritical)

    def pmf(self, kmax: int) -> np.ndarray:
        out = np.zeros(kmax + 1)
        n = min(kmax + 1, self.p.size)
        out[:n] = self.p[:n]
        return out

    def tail_mass(self, K: int) -> float:
        return float(self.p[K + 1 :].sum()) if K + 1 < self.p.size else 0.0

    def _g(self, s, order):
        c = np.polynomial.polynomial.polyder(self.p, order) if order else self.p
        return np.polynomial.polynomial.polyval(s, c)

    def converges_at_radius(self, order=0):
        return True

    def integral_class(self):
        return IntegralClass.INFINITE

    def to_dict(self):
        return {"family": self.family, "p": [float(v) for v in self.given]}


class GeometricTailLaw(OffspringLaw):
    family = "geometric-tail"

    def __init__(self, r: float, p0: float = 0.0, *, allow_noncritical: bool = False):
        if not 0.0 < r < 1.0:
            raise ModelDomainError("geometric-tail needs 0 < r < 1")
        if not 0.0 <= p0 < 1.0:
            raise ModelDomainError("p0 must lie in [0, 1)")
        self.r = float(r)
        self.p0 = float(p0)
        self.radius = 1.0 / self.r
        self._c = (1.0 - self.p0) * (1.0 - self.r)
        _check_supercritical(self, allow_noncritical)

    def pmf(self, kmax):
        k = np.arange(kmax + 1)
        out = np.where(k >= 2, self._c * self.r ** np.maximum(k - 2, 0).astype(float), 0.0)
        out[0] = self.p0
        return out

    def tail_mass(self, K):
        if K < 1:
            return 1.0 - self.p0 if K == 0 else 1.0
        return (1.0 - self.p0) * self.r ** (K - 1)

    def _g(self, s, order):
        r, c = self.r, self._c
        u = 1.0 - r * s
        if order == 0:
            return self.p0 + c * s * s / u
        if order == 1:
            return c * s * (2.0 - r * s) / (u * u)
        return c * math.factorial(order) * r ** (order - 2) / u ** (order + 1)

    def converges_at_radius(self, order=0):
        return False

    def integral_class(self):
        # p_k R_G^(k+1)/(k+1) ~ const/k: harmonic divergence
        return IntegralClass.INFINITE

    def to_dict(self):
        return {"family": self.family, "params": {"r": self.r, "p0": self.p0}}


class PolylogTailLaw(OffspringLaw):
    family = "polylog-tail"

    def __init__(self, r: float, gamma: float, p0: float = 0.0, *, allow_noncritical: bool = False):
        if not 0.0 < r < 1.0:
            raise ModelDomainError("polylog-tail needs 0 < r < 1")
        if not 0.0 <= p0 < 1.0:
            raise ModelDomainError("p0 must lie in [0, 1)")
        self.r = float(r)
        self.gamma = float(gamma)
        self.p0 = float(p0)
        self.radius = 1.0 / self.r
        self._norm = power_tail_sum(self.r, self.gamma, 0)
        self._c = (1.0 - self.p0) / self._norm
        _check_supercritical(self, allow_noncritical)

    @property
    def tail_constant(self) -> float:
        """c0 with p_k R_G^k = c0 k^-gamma."""
        return self._c

    def pmf(self, kmax):
        k = np.arange(kmax + 1, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(k >= 2, self._c * self.r ** k * np.maximum(k, 1.0) ** -self.gamma, 0.0)
        out[0] = self.p0
        return out

    def tail_mass(self, K):
        K = max(K, 1)
        k1 = K + 1
        t = self._c * self.r ** k1 * k1 ** -self.gamma
        ratio = self.r * (1.0 + 1.0 / k1) ** max(-self.gamma, 0.0)
        return t / (1.0 - ratio)

    def _g(self, s, order):
        body = self._c * self.r ** order * power_tail_sum(self.r * s, self.gamma, order)
        return body + (self.p0 if order == 0 else 0.0)

    def converges_at_radius(self, order=0):
        return self.gamma - order > 1.0

    def integral_class(self):
        # sum_k c0 k^-gamma R_G/(k+1) converges iff gamma > 0
        return IntegralClass.FINITE if self.gamma > 0 else IntegralClass.INFINITE

    def to_dict(self):
        return {
            "family": self.family,
            "params": {"r": self.r, "gamma": self.gamma, "p0": self.p0},
        }


class CustomLaw(OffspringLaw):
    """Coefficients from a callable; ``ratio_bound`` bounds p_{k+1}/p_k for k >= kmax.

    The generating function is a partial sum over ``k <= kmax`` with a
    geometric remainder bound, so it is only available for
    ``|s| < 1/ratio_bound``.
    """

    family = "custom-coefficient-rule"

    def __init__(
        self,
        rule: Callable[[int], float],
        kmax: int,
        radius: float,
        ratio_bound: float,
        *,
        allow_noncritical: bool = False,
    ):
        p = np.array([float(rule(k)) for k in range(kmax + 1)])
        if np.any(p < 0):
            raise ModelDomainError("probabilities must be non-negative")
        if not 0 <= ratio_bound < 1:
            raise ModelDomainError("ratio_bound must lie in [0, 1)")
        self._rule = rule
        self.kmax = int(kmax)
        self.ratio_bound = float(ratio_bound)
        self.radius = float(radius)
        tail = p[-1] * ratio_bound / (1 - ratio_bound)
        if abs(p.sum() - 1.0) > MASS_TOL + tail:
            raise ModelDomainError(f"probabilities sum to {p.sum():.15g}, not 1")
        if p.size > 1 and p[1] > 0:
            self.beta_scale = 1.0 - p[1]
            p[1] = 0.0
        self.p = p / p.sum()
        self.p0 = float(self.p[0])
        _check_supercritical(self, allow_noncritical)

    def pmf(self, kmax):
        out = np.zeros(kmax + 1)
        n = min(kmax + 1, self.p.size)
        out[:n] = self.p[:n]
        return out

    def tail_mass(self, K):
        if K < self.kmax:
            return float(self.p[K + 1 :].sum()) + self._remainder(1.0)
        return self._remainder(1.0)

    def _remainder(self, s: float) -> float:
        rs = self.ratio_bound * s
        if rs >= 1:
            return math.inf
        return self.p[-1] * s ** self.kmax * rs / (1 - rs)

    def _g(self, s, order):
        amax = float(np.max(np.abs(s))) if np.size(s) else 0.0
        if self.ratio_bound * amax >= 1:
            raise ModelDomainError("custom law: no certified tail bound at this argument")
        c = np.polynomial.polynomial.polyder(self.p, order) if order else self.p
        return np.polynomial.polynomial.polyval(s, c)

    def converges_at_radius(self, order=0):
        return False

    def integral_class(self):
        return IntegralClass.UNDECIDABLE

    def to_dict(self):
        return {"family": self.family, "params": {"kmax": self.kmax, "radius": self.radius}}


def _check_supercritical(law: OffspringLaw, allow: bool) -> None:
    m = law.mean
    if not math.isfinite(m):
        raise ModelDomainError("infinite-mean laws are not supported")
    if not allow and m <= 1.0:
        raise ModelDomainError(f"law is not supercritical (m = {m:.6g})")


def _smallest_fixed_point(law: OffspringLaw) -> float:
    if law.p0 == 0.0:
        return 0.0
    if law.mean <= 1.0:
        return 1.0
    lo, hi = 0.0, 1.0 - 1e-9
    if law.g(hi) - hi >= 0:
        raise ModelDomainError("extinction probability is within 1e-9 of 1")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if law.g(mid) - mid > 0:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    if abs(law.g(q) - q) >= 1e-12:
        raise ArithmeticError("fixed-point bisection failed to reach 1e-12")
    return q


# ---- operations ------------------------------------------------------------------


def g_eval(law: OffspringLaw, s, order: int = 0):
    return law.g(s, order)


def extinction_prob(law: OffspringLaw) -> float:
    return law.extinction_prob


def span(law: OffspringLaw) -> int:
    return law.span


def integral_G_finite(law: OffspringLaw) -> IntegralClass:
    """Whether the generating function is integrable on [0, R_G], decided per family."""
    return law.integral_class()


@dataclass(frozen=True)
class Constants:
    mu0: float
    alpha: float
    lam: float
    lam_tilde: float
    lam1: Optional[float]
    lam2: Optional[float]
    d: Optional[float]


def constants(law: OffspringLaw, beta: float, mu: float) -> Constants:
    """Scalar constants of the model.  ``beta`` is the rate paired with the law as given."""
    if beta <= 0:
        raise ModelDomainError("branching rate must be positive")
    b = beta * law.beta_scale
    mu0 = math.sqrt(2 * b * (law.mean - 1)) if law.mean > 1 else 0.0
    alpha = math.sqrt(2 * b + mu * mu)
    lam_t = math.sqrt(2 * b * (1 - law.g_prime_q) + mu * mu) + mu
    lam1 = lam2 = d = None
    disc = mu * mu - 2 * b
    if disc >= 0:
        lam1 = -mu + math.sqrt(disc)
        lam2 = -mu - math.sqrt(disc)
        d = lam1 / lam2 if lam2 != 0 else None
    return Constants(mu0, alpha, alpha + mu, lam_t, lam1, lam2, d)


def tilde_transform(law: OffspringLaw) -> tuple[OffspringLaw, float]:
    """Prolific-individual reduction followed by removal of the single-child mass.

    Returns the reduced law (``p0 = p1 = 0``) and the factor multiplying the
    branching rate.  Tail families are materialised to an explicit law.
    """
    q = law.extinction_prob
    if q == 0.0:
        return law, 1.0
    p = law.probabilities
    K = p.size - 1
    k = np.arange(K + 1)
    # pt_j = sum_k p_k C(k,j) (1-q)^(j-1) q^(k-j)
    mat = binom.pmf(k[None, :], k[:, None], 1.0 - q)  # [k, j]
    pt = p @ mat / (1.0 - q)
    pt[0] = 0.0
    p1 = pt[1]
    pt[1] = 0.0
    pt = pt / pt.sum()
    return ExplicitLaw(pt), 1.0 - p1


def law_from_json(obj) -> OffspringLaw:
    if not isinstance(obj, dict) or "family" not in obj:
        raise ModelDomainError('law must be a JSON object with a "family" key')
    fam = obj["family"]
    extra = set(obj) - {"family", "p", "params"}
    if extra:
        raise ModelDomainError(f"unknown law keys: {sorted(extra)}")
    if fam == "explicit":
        if "p" not in obj or "params" in obj:
            raise ModelDomainError('explicit law needs "p": [p0, p1, ...] and no "params"')
        return ExplicitLaw(obj["p"])
    params = dict(obj.get("params") or {})
    if "p" in obj:
        raise ModelDomainError(f'family {fam!r} takes "params", not "p"')
    allowed = {"geometric-tail": {"r", "p0"}, "polylog-tail": {"r", "gamma", "p0"}}
    if fam not in allowed:
        if fam == CustomLaw.family:
            raise ModelDomainError("custom-coefficient-rule laws are only available from Python")
        raise ModelDomainError(f"unknown law family {fam!r}")
    bad = set(params) - allowed[fam]
    if bad:
        raise ModelDomainError(f"unknown parameters for {fam}: {sorted(bad)}")
    try:
        if fam == "geometric-tail":
            return GeometricTailLaw(float(params["r"]), float(params.get("p0", 0.0)))
        return PolylogTailLaw(
            float(params["r"]), float(params["gamma"]), float(params.get("p0", 0.0))
        )
    except KeyError as exc:
        raise ModelDomainError(f"missing parameter {exc.args[0]!r} for {fam}") from None


@dataclass(frozen=True)
class Numerics:
    """Tolerances and grid parameters shared by the solvers."""

    h: float = 1e-3
    picard_tol: float = 1e-10
    picard_max_iter: int = 20000
    residual_tol: float = 1e-6
    tail_eps: float = 1e-12
    ode_rtol: float = 1e-12
    ode_atol: float = 1e-14
    event_tol: float = 1e-6
    cross_tol: float = 1e-6
    interp_tol: float = 1e-10
    x_guard: float = 500.0
    qprime_guard: float = 1e6
    seed_eps: float = 1e-6
    switch_frac: float = 1e-4
    s_guard: float = 1e8
    coeff_h: float = 1e-2

    def replace(self, **kw) -> "Numerics":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class ModelConfig:
    law: OffspringLaw
    beta: float
    mu: float
    numerics: Numerics = field(default_factory=Numerics)

    def __post_init__(self):
        if not self.beta > 0:
            raise ModelDomainError("branching rate must be positive")

    @property
    def beta_eff(self) -> float:
        """Branching rate paired with the stored (p_1-free) law."""
        return self.beta * self.law.beta_scale

    @cached_property
    def consts(self) -> Constants:
        return constants(self.law, self.beta, self.mu)

    def with_mu(self, mu: float) -> "ModelConfig":
        return ModelConfig(self.law, self.beta, mu, self.numerics)
