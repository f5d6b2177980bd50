import math

import numpy as np
import pytest

from bbm_absorb.coeffs import picard_coefficients
from bbm_absorb.generator import integrate_a
from bbm_absorb.offspring import ExplicitLaw, GeometricTailLaw, ModelConfig, PolylogTailLaw
from bbm_absorb.wave import solve_profile

# critical drift of the polylog law r=0.5, gamma=3 at beta=0.5, from a 1e-14 bisection
POLYLOG_MU_C = 0.32439545320331936
LN2 = math.log(2.0)


def binary_closed_form_f(s, x):
    """f_x(s) for L = 2, beta = 1/2, mu = 0, where Q(x) = 1.5 sech^2(x/2 + c)."""
    s = np.asarray(s, dtype=complex)
    k = 2 * s / 3
    with np.errstate(invalid="ignore", divide="ignore"):
        W = np.where(k == 0, 0.0, (1 - np.sqrt(1 - k)) ** 2 / np.where(k == 0, 1, k))
    E = W * math.exp(-x)
    return 6 * E / (1 + E) ** 2


@pytest.fixture(scope="session")
def binary():
    return ExplicitLaw([0.0, 0.0, 1.0])


@pytest.fixture(scope="session")
def binary_cfg(binary):
    return ModelConfig(binary, 0.5, 0.0)


@pytest.fixture(scope="session")
def binary_profile(binary_cfg):
    return solve_profile(binary_cfg)


@pytest.fixture(scope="session")
def binary_curve(binary_cfg):
    return integrate_a(binary_cfg)


@pytest.fixture(scope="session")
def binary_table(binary_profile):
    return picard_coefficients(binary_profile, N=64, x_grid=(0.5, LN2, 1.0, 2.0))


@pytest.fixture(scope="session")
def polylog():
    return PolylogTailLaw(0.5, 3.0)


@pytest.fixture(scope="session")
def geometric():
    return GeometricTailLaw(0.5)


@pytest.fixture(scope="session")
def polylog_at_muc(polylog):
    cfg = ModelConfig(polylog, 0.5, POLYLOG_MU_C)
    return solve_profile(cfg), integrate_a(cfg)


@pytest.fixture(scope="session")
def polylog_above(polylog):
    cfg = ModelConfig(polylog, 0.5, POLYLOG_MU_C + 0.5)
    prof = solve_profile(cfg)
    return prof, integrate_a(cfg), picard_coefficients(prof, N=64, x_grid=(1.0,))
