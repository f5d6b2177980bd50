"""Discretised renewal operator shared by the wave and coefficient solvers.

For a source g on [0, inf) the operator is

    T[g](x) = (beta/alpha) * int_0^inf e^{mu (y-x)} g(y) (e^{-alpha|y-x|} - e^{-alpha(y+x)}) dy

and splits into two one-sided exponential convolutions

    A(x) = int_0^x e^{-lam (x-y)} g(y) dy,   B(x) = int_x^inf e^{-nu (y-x)} g(y) dy,
    T = (beta/alpha) (A + B - e^{-lam x} B(0)),

with lam = alpha + mu and nu = alpha - mu.  Both are evaluated by exact
recursions over grid cells, each cell integral using a local cubic
interpolant of g.  Beyond the last node g is continued by
g_inf + (g_M - g_inf) e^{-lam_tilde (y - Y_max)}.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

_GL_T, _GL_W = np.polynomial.legendre.leggauss(16)

# stencil offsets for interior, first and last cell
_STENCILS = {"mid": (-1, 0, 1, 2), "left": (0, 1, 2, 3), "right": (-2, -1, 0, 1)}


def _lagrange(nodes, t):
    """Values of the Lagrange basis on ``nodes`` at points ``t``: shape (len(nodes), len(t))."""
    out = np.ones((len(nodes), len(t)))
    for j, xj in enumerate(nodes):
        for k, xk in enumerate(nodes):
            if k != j:
                out[j] *= (t - xk) / (xj - xk)
    return out


def cell_weights(rate: float, h: float, reverse: bool, frac: float = 1.0):
    """Weights w such that int_0^{frac h} e^{-rate * d(t)} g(x_n + t) dt ~ sum_j w_j g_{n+o_j}.

    d(t) = frac*h - t for the forward (A) direction, t for the backward (B) one.
    """
    L = frac * h
    t = 0.5 * L * (_GL_T + 1.0)
    wq = 0.5 * L * _GL_W
    d = t if reverse else L - t
    ker = np.exp(-rate * d) * wq
    return {k: _lagrange(np.array(o, float), t / h) @ ker for k, o in _STENCILS.items()}


class RenewalOperator:
    """Renewal operator on the uniform grid x_n = n h, n = 0..M."""

    def __init__(self, beta: float, mu: float, h: float, M: int, lam_tilde: float):
        if M < 4:
            raise ValueError("renewal grid needs at least five nodes")
        self.beta, self.mu, self.h, self.M = beta, mu, h, M
        self.alpha = math.sqrt(2 * beta + mu * mu)
        self.lam = self.alpha + mu
        self.nu = self.alpha - mu
        self.lam_tilde = lam_tilde
        self.x = h * np.arange(M + 1)
        self.coef = beta / self.alpha
        self.exp_lam_x = np.exp(-self.lam * self.x)
        self._wa = cell_weights(self.lam, h, reverse=False)
        self._wb = cell_weights(self.nu, h, reverse=True)
        self._da = math.exp(-self.lam * h)
        self._db = math.exp(-self.nu * h)

    def _cells(self, g: np.ndarray, w: dict) -> np.ndarray:
        M = self.M
        out = np.empty((M,) + g.shape[1:])
        wm = w["mid"]
        out[1 : M - 1] = (
            wm[0] * g[0 : M - 2] + wm[1] * g[1 : M - 1] + wm[2] * g[2:M] + wm[3] * g[3 : M + 1]
        )
        out[0] = np.tensordot(w["left"], g[0:4], axes=(0, 0))
        out[M - 1] = np.tensordot(w["right"], g[M - 3 : M + 1], axes=(0, 0))
        return out

    def tail_B(self, g_last, g_inf):
        return g_inf / self.nu + (g_last - g_inf) / (self.nu + self.lam_tilde)

    def convolutions(self, g: np.ndarray, g_inf):
        """A and B on the grid for source values g (axis 0 = grid)."""
        g = np.asarray(g, dtype=float)
        g_inf = np.broadcast_to(np.asarray(g_inf, dtype=float), g.shape[1:])
        a = self._cells(g, self._wa)
        b = self._cells(g, self._wb)
        A = np.zeros_like(g)
        A[1:] = lfilter([1.0], [1.0, -self._da], a, axis=0)
        BM = self.tail_B(g[-1], g_inf)
        zi = (self._db * BM)[None, ...]
        B = np.empty_like(g)
        B[-1] = BM
        rev, _ = lfilter([1.0], [1.0, -self._db], b[::-1], axis=0, zi=zi)
        B[:-1] = rev[::-1]
        return A, B

    def apply(self, g: np.ndarray, g_inf=0.0, derivative: bool = False):
        """T[g] on the grid, and optionally d/dx T[g]."""
        A, B = self.convolutions(g, g_inf)
        C = B[0]
        e = self.exp_lam_x.reshape((-1,) + (1,) * (A.ndim - 1))
        T = self.coef * (A + B - e * C)
        if not derivative:
            return T
        Tp = self.coef * (-self.lam * A + self.nu * B + self.lam * e * C)
        return T, Tp, C
