"""Exact Monte Carlo of the absorbed count through the embedded jump chain.

A particle at distance z from the barrier is absorbed before it branches with
probability e^{-lam z}.  Otherwise it branches at a distance y drawn from

    (beta/alpha) e^{mu (y-z)} (e^{-alpha|y-z|} - e^{-alpha(y+z)}) dy,

whose total mass is 1 - e^{-lam z}, and is replaced by L particles at y.
No time discretisation is involved.  Every replicate draws from its own
Philox stream keyed by (seed, replicate index), so results do not depend on
how replicates are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.stats import beta as beta_dist

from .errors import ModelDomainError
from .offspring import OffspringLaw

EXTINCT, CENSORED, TOO_DEEP = 0, 1, 2
_STATUS_NAMES = {EXTINCT: "extinct", CENSORED: "censored", TOO_DEEP: "too_deep"}


@numba.njit(cache=True)
def _cdf_lower(w, z, lam, nu, c):
    # mass of (0, w) for w <= z
    return c * math.exp(-lam * z) * (math.expm1(lam * w) / lam + math.expm1(-nu * w) / nu)


@numba.njit(cache=True)
def _sample_position(z, target, lam, nu, alpha, beta):
    """Branch distance with unnormalised CDF value ``target`` in (0, 1 - e^{-lam z})."""
    c = beta / alpha
    mass1 = _cdf_lower(z, z, lam, nu, c)
    if target > mass1:
        mass2 = c / nu * (-math.expm1(-2.0 * alpha * z))
        frac = (target - mass1) / mass2
        if frac >= 1.0:
            return math.inf
        return z - math.log1p(-frac) / nu
    lo, hi = 0.0, z
    w = 0.5 * z
    tol = 1e-13 * (-math.expm1(-lam * z))
    for _ in range(200):
        F = _cdf_lower(w, z, lam, nu, c) - target
        if abs(F) < tol:
            return w
        if F > 0:
            hi = w
        else:
            lo = w
        dens = c * math.exp(-lam * z) * (math.exp(lam * w) - math.exp(-nu * w))
        step = w - F / dens if dens > 0 else -1.0
        if step <= lo or step >= hi:
            step = 0.5 * (lo + hi)
        w = step
        if hi - lo < 1e-16 * z:
            return w
    return w


@numba.njit(cache=True)
def _run(gen, x, lam, nu, alpha, beta, cdf, n_max, max_gen):
    cap = 256
    pos = np.empty(cap)
    gens = np.empty(cap, dtype=np.int64)
    pos[0] = x
    gens[0] = 0
    top = 1
    Z = 0
    D = 0
    maxpop = 1
    K = cdf.size
    while top > 0:
        top -= 1
        z = pos[top]
        g = gens[top]
        u_abs = gen.random()
        u_pos = gen.random()
        u_off = gen.random()
        if u_abs < math.exp(-lam * z):
            Z += 1
            continue
        if max_gen >= 0 and g >= max_gen:
            return TOO_DEEP, Z, D, maxpop
        D += 1
        if D > n_max:
            return CENSORED, Z, D, maxpop
        # u_pos in [0,1); map into (0, mass) away from the endpoints
        mass = -math.expm1(-lam * z)
        y = _sample_position(z, (u_pos + 0.5 / 9007199254740992.0) * mass, lam, nu, alpha, beta)
        L = 0
        while L < K - 1 and u_off >= cdf[L]:
            L += 1
        if top + L > cap:
            while top + L > cap:
                cap *= 2
            npos = np.empty(cap)
            ngen = np.empty(cap, dtype=np.int64)
            npos[:top] = pos[:top]
            ngen[:top] = gens[:top]
            pos = npos
            gens = ngen
        for _ in range(L):
            pos[top] = y
            gens[top] = g + 1
            top += 1
        if top > maxpop:
            maxpop = top
    return EXTINCT, Z, D, maxpop


@dataclass(frozen=True)
class SimConfig:
    law: OffspringLaw
    beta: float
    mu: float
    x: float
    replicates: int = 100_000
    n_max: int = 100_000
    seed: int = 0
    max_generation: Optional[int] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ModelDomainError("replicates must be at least 1")
        if self.n_max < 1:
            raise ModelDomainError("event budget must be at least 1")
        if not self.x > 0:
            raise ModelDomainError("initial distance must be positive")
        if self.beta <= 0:
            raise ModelDomainError("branching rate must be positive")
        if not 0 <= self.seed < 2**64:
            raise ModelDomainError("seed must be an unsigned 64-bit integer")

    @property
    def rates(self):
        b = self.beta * self.law.beta_scale
        alpha = math.sqrt(2 * b + self.mu**2)
        return alpha + self.mu, alpha - self.mu, alpha, b


@dataclass(frozen=True)
class RunOutcome:
    status: str
    Z: int
    D: int
    max_population: int


def substream(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, replicate]))


def run_once(config: SimConfig, replicate: int) -> RunOutcome:
    lam, nu, alpha, b = config.rates
    mg = -1 if config.max_generation is None else config.max_generation
    st, Z, D, mp = _run(substream(config.seed, replicate), config.x, lam, nu, alpha, b,
                        config.law.sample_cdf(), config.n_max, mg)
    return RunOutcome(_STATUS_NAMES[st], int(Z), int(D), int(mp))


def position_sampler(z: float, mu: float, beta: float, u: float) -> float:
    """Inverse CDF of the (normalised) branch-position law for a particle at distance z."""
    if not 0.0 < u < 1.0:
        raise ModelDomainError("u must lie in (0, 1)")
    if not z > 0:
        raise ModelDomainError("z must be positive")
    alpha = math.sqrt(2 * beta + mu * mu)
    lam, nu = alpha + mu, alpha - mu
    return float(_sample_position(z, u * -math.expm1(-lam * z), lam, nu, alpha, beta))


def position_density(y, z: float, mu: float, beta: float):
    """Unnormalised branch-position density (total mass 1 - e^{-lam z})."""
    y = np.asarray(y, dtype=float)
    alpha = math.sqrt(2 * beta + mu * mu)
    lam, nu = alpha + mu, alpha - mu
    image = np.exp(-lam * z - nu * y)
    direct = np.where(y < z, np.exp(-lam * (z - np.minimum(y, z))), np.exp(-nu * (np.maximum(y, z) - z)))
    return (beta / alpha) * (direct - image)


def position_cdf(y, z: float, mu: float, beta: float):
    """Unnormalised CDF of the branch-position law."""
    alpha = math.sqrt(2 * beta + mu * mu)
    lam, nu = alpha + mu, alpha - mu
    c = beta / alpha
    y = np.asarray(y, dtype=float)
    lower = c * np.exp(-lam * z) * (np.expm1(lam * np.minimum(y, z)) / lam + np.expm1(-nu * np.minimum(y, z)) / nu)
    upper = c / nu * (-np.expm1(-2 * alpha * z)) * (-np.expm1(-nu * np.maximum(y - z, 0.0)))
    return lower + upper


def _run_range(args):
    config, start, stop = args
    lam, nu, alpha, b = config.rates
    cdf = config.law.sample_cdf()
    mg = -1 if config.max_generation is None else config.max_generation
    n = stop - start
    status = np.empty(n, dtype=np.int8)
    Z = np.empty(n, dtype=np.int64)
    D = np.empty(n, dtype=np.int64)
    mp = np.empty(n, dtype=np.int64)
    for j, r in enumerate(range(start, stop)):
        status[j], Z[j], D[j], mp[j] = _run(substream(config.seed, r), config.x, lam, nu, alpha, b,
                                            cdf, config.n_max, mg)
    return status, Z, D, mp


def clopper_pearson(k, n, level: float = 0.99):
    k = np.asarray(k)
    a = 1 - level
    lo = np.where(k > 0, beta_dist.ppf(a / 2, k, n - k + 1), 0.0)
    hi = np.where(k < n, beta_dist.ppf(1 - a / 2, k + 1, n - k), 1.0)
    return lo, hi


@dataclass(frozen=True)
class SimSummary:
    config: SimConfig
    status: np.ndarray
    Z: np.ndarray
    D: np.ndarray
    max_population: np.ndarray

    @property
    def n(self) -> int:
        return int(self.status.size)

    @property
    def extinct(self) -> np.ndarray:
        return self.status == EXTINCT

    @property
    def extinct_fraction(self) -> float:
        return float(self.extinct.mean())

    @property
    def censored_fraction(self) -> float:
        return float((self.status == CENSORED).mean())

    @property
    def too_deep_fraction(self) -> float:
        return float((self.status == TOO_DEEP).mean())

    @property
    def Q_bracket(self) -> tuple[float, float]:
        return self.extinct_fraction, self.extinct_fraction + self.censored_fraction

    def counts(self, imax: int) -> np.ndarray:
        z = self.Z[self.extinct]
        return np.bincount(np.minimum(z, imax + 1), minlength=imax + 2)[: imax + 1]

    def histogram(self, imax: int, level: float = 0.99):
        """q_hat_i for i <= imax with Clopper-Pearson intervals."""
        k = self.counts(imax)
        lo, hi = clopper_pearson(k, self.n, level)
        return k / self.n, lo, hi

    def frequency(self, mask: np.ndarray) -> tuple[float, float]:
        """Empirical frequency of an event over all runs and its binomial sigma."""
        p = float(np.count_nonzero(mask)) / self.n
        return p, math.sqrt(max(p * (1 - p), 1e-300) / self.n)

    def to_dict(self, imax: int = 20) -> dict:
        qh, lo, hi = self.histogram(imax)
        return {
            "replicates": self.n,
            "seed": self.config.seed,
            "n_max": self.config.n_max,
            "x": self.config.x,
            "extinct_fraction": self.extinct_fraction,
            "censored_fraction": self.censored_fraction,
            "Q_bracket": list(self.Q_bracket),
            "q_hat": [float(v) for v in qh],
            "ci_low": [float(v) for v in lo],
            "ci_high": [float(v) for v in hi],
        }

    def runs_csv(self) -> str:
        lines = ["replicate,status,Z,D"]
        for r in range(self.n):
            lines.append(f"{r},{_STATUS_NAMES[int(self.status[r])]},{self.Z[r]},{self.D[r]}")
        return "\r\n".join(lines) + "\r\n"


def estimate(config: SimConfig, workers: int = 1, chunk: int = 10_000) -> SimSummary:
    bounds = [(s, min(s + chunk, config.replicates)) for s in range(0, config.replicates, chunk)]
    jobs = [(config, a, b) for a, b in bounds]
    if workers <= 1:
        parts = [_run_range(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_range, jobs))
    status, Z, D, mp = (np.concatenate([p[i] for p in parts]) for i in range(4))
    return SimSummary(config, status, Z, D, mp)
