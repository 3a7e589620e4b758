"""Modified Bessel function ratios and the quadrature rules used by the closure solves."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ive

#: Above this argument the ratio I_n/I_0 comes from the large-argument series.
ASYMPTOTIC_SWITCH = 700.0

# Coefficients (-1)^k a_k(n) of the large-argument expansion
#   I_n(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(n) / x^k,
#   a_k(n) = prod_{l=1..k} (4 n^2 - (2l - 1)^2) / (8^k k!),
# truncated at k = 4.
_ASYMPTOTIC_SERIES = {
    0: (1.0, 1.0 / 8.0, 9.0 / 128.0, 75.0 / 1024.0, 3675.0 / 32768.0),
    1: (1.0, -3.0 / 8.0, -15.0 / 128.0, -105.0 / 1024.0, -4725.0 / 32768.0),
    2: (1.0, -15.0 / 8.0, 105.0 / 128.0, 315.0 / 1024.0, 10395.0 / 32768.0),
}


def _series(n, x):
    inv = 1.0 / x
    coeffs = _ASYMPTOTIC_SERIES[n]
    total = np.full_like(x, coeffs[-1])
    for a in coeffs[-2::-1]:
        total = total * inv + a
    return total


def bessel_ratio_asymptotic(n, lam):
    """Ratio I_n(lam)/I_0(lam) from the truncated large-argument series."""
    lam = np.asarray(lam, dtype=float)
    return _series(n, lam) / _series(0, lam)


def bessel_ratio(n, lam):
    """Return I_n(lam)/I_0(lam) for n in {1, 2} and lam >= 0.

    Exponentially scaled Bessel values are used up to ``ASYMPTOTIC_SWITCH``
    and the ratio of asymptotic series beyond it, so no argument overflows.
    Accepts scalars or arrays.
    """
    if n not in (1, 2):
        raise ValueError(f"bessel_ratio supports n in {{1, 2}}, got n={n}")
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam >= 0.0)):
        raise ValueError("bessel_ratio requires lam >= 0")
    large = lam > ASYMPTOTIC_SWITCH
    small_arg = np.where(large, 0.0, lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = ive(n, small_arg) / ive(0, small_arg)
        asym = bessel_ratio_asymptotic(n, np.where(large, lam, ASYMPTOTIC_SWITCH + 1.0))
    out = np.where(large, asym, direct)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Immutable one-dimensional rule: ``sum(weights * f(nodes))``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.size < 1:
            raise ValueError("nodes and weights must be non-empty and the same shape")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def measure(self):
        return 2.0 * np.pi if self.kind == "trapezoid-periodic" else 2.0

    def integrate(self, values):
        return np.sum(self.weights * values, axis=-1)


def _legendre_pair(order, theta):
    """P_order(cos theta) and the difference P_order - P_{order-1}.

    The recurrence is written in t = 1 - cos(theta) = 2 sin^2(theta/2) so
    nodes near the poles keep full relative precision.
    """
    t = 2.0 * np.sin(0.5 * theta) ** 2
    p = 1.0 - t
    delta = -t
    for k in range(1, order):
        delta = (k * delta - (2 * k + 1) * t * p) / (k + 1)
        p = p + delta
    return p, delta, t


def _dp_dtheta(order, theta, p, delta, t):
    # (1 - x^2) P_N' = N (P_{N-1} - x P_N) and P_{N-1} - x P_N = t P_N - delta
    return -order * (t * p - delta) / np.sin(theta)


@lru_cache(maxsize=16)
def _gauss_half(order):
    # Newton iteration in the angle theta on P_N(cos theta); working in theta
    # keeps sin(theta) accurate for the nodes clustered at the poles.
    half = (order + 1) // 2
    k = np.arange(1, half + 1)
    theta = np.pi * (4 * k - 1) / (4 * order + 2)
    polish = False
    for _ in range(100):
        p, delta, t = _legendre_pair(order, theta)
        step = p / _dp_dtheta(order, theta, p, delta, t)
        theta = theta - step
        if polish:
            break
        # convergence is quadratic, so one more step after 1e-10 reaches
        # rounding; a tighter stopping test can stall on ulp-level noise
        polish = np.max(np.abs(step) / theta) < 1e-10
    else:
        raise RuntimeError(f"Gauss-Legendre node iteration did not converge for N={order}")
    p, delta, t = _legendre_pair(order, theta)
    weights = 2.0 / _dp_dtheta(order, theta, p, delta, t) ** 2
    if order % 2 == 1:
        theta[-1] = 0.5 * np.pi
    return theta, weights


def gauss_polar_rule(N):
    """N-point Gauss-Legendre rule in cos(theta), reported as angles in [0, pi].

    ``sum(w * f(theta))`` approximates ``int_0^pi f(theta) sin(theta) dtheta``
    and is exact when f is a polynomial in cos(theta) of degree <= 2N - 1.
    Nodes are exactly symmetric about pi/2 and increasing.
    """
    N = int(N)
    if N < 2:
        raise ValueError("gauss_polar_rule needs N >= 2")
    theta, w = _gauss_half(N)
    if N % 2 == 0:
        nodes = np.concatenate([theta, np.pi - theta[::-1]])
        weights = np.concatenate([w, w[::-1]])
    else:
        nodes = np.concatenate([theta, np.pi - theta[-2::-1]])
        weights = np.concatenate([w, w[-2::-1]])
    return QuadratureRule(nodes, weights, "gauss-polar")


def trapezoid_rule(N):
    """Equispaced periodic trapezoid rule on [0, 2 pi): nodes 2 pi k / N."""
    N = int(N)
    if N < 4 or N % 2:
        raise ValueError("trapezoid_rule needs an even N >= 4")
    nodes = 2.0 * np.pi * np.arange(N) / N
    weights = np.full(N, 2.0 * np.pi / N)
    return QuadratureRule(nodes, weights, "trapezoid-periodic")
