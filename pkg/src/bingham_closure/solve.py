"""Moment inversion for the diagonal Bingham distribution in two and three dimensions.

Two dimensions reduce to a scalar equation in modified Bessel ratios.  Three
dimensions use a trapezoid x Gauss product rule on the sphere in coordinates
p = (cos t, sin f sin t, cos f sin t), so the Gauss nodes cluster at p1 = +-1
where the ordered distribution peaks.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numba
import numpy as np

from .special import bessel_ratio, gauss_polar_rule

#: Quadrature sizes (phi, theta) used for the precomputed maps.
NPHI = 1024
NTHETA = 4096

TRIANGLE_TOL = 1e-12
# Integrand values below exp(-80) relative to the peak are skipped.
_CUTOFF = -80.0


class ConvergenceError(RuntimeError):
    """A Newton iteration exhausted its budget."""


@dataclass(frozen=True)
class BinghamParams:
    """Diagonal Bingham exponents relative to the last axis.

    ``lambdas[i] = lambda_i - lambda_d``.  ``log_z`` is the log of
    ``int exp(sum lambdas[i] p_i^2) dp`` over the unit sphere (circle in 2D),
    or None when it was not computed.
    """

    lambdas: tuple
    log_z: float | None = None

    @property
    def dim(self):
        return len(self.lambdas) + 1

    def trace_free(self):
        """Eigenvalues of the trace-free parameter tensor B."""
        lam = np.append(np.asarray(self.lambdas, dtype=float), 0.0)
        return lam - lam.mean()

    def gamma(self):
        """gamma = -log Z for the trace-free B (needs ``log_z``)."""
        if self.log_z is None:
            raise ValueError("log_z was not computed for these parameters")
        lam = np.append(np.asarray(self.lambdas, dtype=float), 0.0)
        return -(self.log_z - lam.mean())


class TrianglePoint(NamedTuple):
    mu1: float
    mu2: float


class SquarePoint(NamedTuple):
    nu1: float
    nu2: float


# -- two dimensions ---------------------------------------------------------


def _check_mu1_2d(mu1, upper_open):
    mu1 = float(mu1)
    if mu1 < 0.5 - TRIANGLE_TOL or mu1 > 1.0 + TRIANGLE_TOL:
        raise ValueError(f"mu1={mu1!r} is outside [1/2, 1]")
    mu1 = min(max(mu1, 0.5), 1.0)
    if upper_open and mu1 >= 1.0:
        raise ValueError("mu1 = 1 has no finite Bingham parameter")
    return mu1


def solve_lambda_2d(mu1, guess=None, tol=1e-16, maxiter=100):
    """Solve (1 + I1/I0)/2 = mu1 for lambda >= 0 (exponent lambda cos 2 theta).

    Newton's method with a bracket so that a step leaving the current
    bracket falls back to bisection.  Iteration stops when the residual is
    below ``tol`` or the Newton step is within a few ulp of lambda; near
    isotropy dS1111/dmu1 is close to one, so a loose residual test would
    pass straight into the closure value.
    """
    mu1 = _check_mu1_2d(mu1, upper_open=True)
    if mu1 == 0.5:
        return 0.0
    lam = (mu1 - 0.5) / (2.0 * (mu1 - mu1 * mu1)) if guess is None else float(guess)
    lo, hi = 0.0, np.inf
    for _ in range(maxiter):
        r1 = bessel_ratio(1, lam)
        F = 0.5 * (1.0 + r1) - mu1
        if abs(F) <= tol:
            return lam
        if F < 0.0:
            lo = lam
        else:
            hi = lam
        J = 0.25 * (1.0 - 2.0 * r1 * r1 + bessel_ratio(2, lam))
        new = lam - F / J if J > 0.0 else np.nan
        if not lo < new < hi:
            new = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo + 1.0
        if abs(new - lam) <= 4.0 * np.finfo(float).eps * lam:
            return new
        lam = new
    raise ConvergenceError(f"2D Bingham solve did not converge for mu1={mu1!r}")


def s1111_from_lambda_2d(lam):
    """Fourth moment <cos^4> = (3 + 4 I1/I0 + I2/I0)/8; returns 1 for lam = inf."""
    lam = float(lam)
    if lam == np.inf:
        return 1.0
    if not lam >= 0.0:
        raise ValueError("lambda must be >= 0")
    return (3.0 + 4.0 * bessel_ratio(1, lam) + bessel_ratio(2, lam)) / 8.0


def s1111_2d(mu1):
    """Direct (non-interpolated) 2D closure value at mu1 in [1/2, 1]."""
    mu1 = _check_mu1_2d(mu1, upper_open=False)
    if mu1 == 1.0:
        return 1.0
    return s1111_from_lambda_2d(solve_lambda_2d(mu1))


def log_partition_2d(lam):
    """log of int_0^{2 pi} exp(lam cos 2 theta) d theta = log(2 pi I0(lam))."""
    from scipy.special import ive

    lam = np.asarray(lam, dtype=float)
    return np.log(2.0 * np.pi * ive(0, lam)) + lam


def quadrature_estimate(mu1, s1111):
    """Trapezoid nodes needed for ten nodes per standard deviation of the 2D density."""
    if not 0.5 < mu1 < 1.0:
        raise ValueError("quadrature_estimate needs 1/2 < mu1 < 1")
    if not s1111 < mu1:
        raise ValueError("quadrature_estimate needs s1111 < mu1")
    return 40.0 * np.pi * np.sqrt((mu1 - 0.5) / (mu1 - s1111))


# -- triangle <-> square ----------------------------------------------------


def triangle_to_square(mu1, mu2):
    """Map eigenvalue pairs in the feasible triangle to [-1, 1]^2.

    Works elementwise on arrays.  The isotropic corner (1/3, 1/3) is singular
    and raises; callers special-case it.
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    a = mu1 - mu2
    b = 2.0 * mu1 + 4.0 * mu2 - 2.0
    s = a + b
    if np.any(s == 0.0):
        raise ValueError("triangle_to_square is singular at the isotropic corner (1/3, 1/3)")
    nu1 = np.clip(2.0 * s - 1.0, -1.0, 1.0)
    nu2 = np.clip((a - b) / s, -1.0, 1.0)
    if nu1.ndim == 0:
        return SquarePoint(float(nu1), float(nu2))
    return SquarePoint(nu1, nu2)


def square_to_triangle(nu1, nu2):
    """Inverse of :func:`triangle_to_square`; the edge nu1 = -1 collapses to (1/3, 1/3)."""
    nu1 = np.asarray(nu1, dtype=float)
    nu2 = np.asarray(nu2, dtype=float)
    a = 0.25 * (1.0 + nu1) * (1.0 + nu2)
    b = 0.25 * (1.0 + nu1) * (1.0 - nu2)
    mu1 = 2.0 * a / 3.0 + b / 6.0 + 1.0 / 3.0
    mu2 = -a / 3.0 + b / 6.0 + 1.0 / 3.0
    if mu1.ndim == 0:
        return TrianglePoint(float(mu1), float(mu2))
    return TrianglePoint(mu1, mu2)


def clamp_triangle(mu1, mu2, tol=TRIANGLE_TOL):
    """Project a slightly infeasible eigenvalue pair onto the triangle.

    Violations up to ``tol`` are absorbed; larger ones raise ValueError.
    """
    mus = np.array([mu1, mu2, 1.0 - mu1 - mu2], dtype=float)
    bad = max(0.0, -mus[2], mus[1] - mus[0], mus[2] - mus[1], mus[0] - 1.0)
    if bad > tol:
        raise ValueError(f"({mu1!r}, {mu2!r}) is outside the feasible triangle by {bad:.3g}")
    mus = np.sort(mus)[::-1]
    if mus[2] < 0.0:
        mus[:2] += 0.5 * mus[2]
        mus[2] = 0.0
    return TrianglePoint(float(mus[0]), float(mus[1]))


# -- three dimensions: sphere quadrature ------------------------------------


@dataclass(frozen=True)
class SphereMoments:
    """Normalized second and fourth moments of exp(l1 p1^2 + l2 p2^2) on the sphere."""

    p1p1: float
    p2p2: float
    p3p3: float
    s1111: float
    s1122: float
    s2222: float
    s1133: float
    s2233: float
    s3333: float
    log_z: float


@lru_cache(maxsize=8)
def _folded_nodes(nphi, ntheta):
    """Symmetry-reduced nodes and weights of the product rule.

    The integrand depends on cos^2(theta) and sin^2(phi) only, so the Gauss
    rule is folded about pi/2 and the trapezoid rule onto [0, pi/2].
    """
    if nphi < 4 or nphi % 2:
        raise ValueError("nphi must be an even integer >= 4")
    if ntheta < 2:
        raise ValueError("ntheta must be >= 2")
    rule = gauss_polar_rule(ntheta)
    half = ntheta // 2
    theta = rule.nodes[:half]
    wt = 2.0 * rule.weights[:half]
    if ntheta % 2:
        theta = np.append(theta, rule.nodes[half])
        wt = np.append(wt, rule.weights[half])
    h = 2.0 * np.pi / nphi
    if nphi % 4 == 0:
        j = np.arange(nphi // 4 + 1)
        mult = np.full(j.size, 4.0)
        mult[0] = mult[-1] = 2.0
    else:
        j = np.arange(nphi // 2)
        mult = np.full(j.size, 2.0)
    phi = h * j
    return (
        np.cos(theta) ** 2,
        np.sin(theta) ** 2,
        wt,
        np.sin(phi) ** 2,
        np.cos(phi) ** 2,
        h * mult,
    )


@numba.njit(cache=True)
def _moment_kernel(lam1, lam2, x2, y2, wt, s, c, ws):
    shift = max(lam1, lam2, 0.0)
    acc = np.zeros(10)
    top2 = max(lam2, 0.0)
    for i in range(x2.size):
        a = y2[i]
        base = lam1 * x2[i] - shift
        if base + top2 * a < _CUTOFF:
            continue
        r0 = 0.0
        rs = 0.0
        rc = 0.0
        rss = 0.0
        rsc = 0.0
        rcc = 0.0
        for j in range(s.size):
            e = base + lam2 * a * s[j]
            if e < _CUTOFF:
                continue
            v = ws[j] * np.exp(e)
            r0 += v
            rs += v * s[j]
            rc += v * c[j]
            rss += v * s[j] * s[j]
            rsc += v * s[j] * c[j]
            rcc += v * c[j] * c[j]
        w = wt[i]
        b = x2[i]
        acc[0] += w * r0
        acc[1] += w * b * r0
        acc[2] += w * a * rs
        acc[3] += w * a * rc
        acc[4] += w * b * b * r0
        acc[5] += w * b * a * rs
        acc[6] += w * a * a * rss
        acc[7] += w * b * a * rc
        acc[8] += w * a * a * rsc
        acc[9] += w * a * a * rcc
    return acc, shift


def sphere_moments(lambdas, nphi=NPHI, ntheta=NTHETA):
    """Bingham moments for exponents (l1, l2) by product quadrature.

    The exponent is shifted by max(l1, l2, 0) before exponentiation; the
    shift cancels in every ratio and is added back to ``log_z``.
    """
    if isinstance(lambdas, BinghamParams):
        lambdas = lambdas.lambdas
    lam1, lam2 = (float(v) for v in lambdas)
    acc, shift = _moment_kernel(lam1, lam2, *_folded_nodes(int(nphi), int(ntheta)))
    z = acc[0]
    m = acc[1:] / z
    return SphereMoments(*m, log_z=float(np.log(z) + shift))


# -- three dimensions: Newton solve -----------------------------------------


def _initial_guess_3d(mu1, mu2):
    mu3 = 1.0 - mu1 - mu2
    linear = np.array([7.5 * (mu1 - mu3), 7.5 * (mu2 - mu3)])
    if mu3 <= 0.0:
        return linear
    # Laplace estimate for a density concentrated about the first axis.
    aligned = np.array([0.5 / mu3, max(0.5 / mu3 - 0.5 / max(mu2, 1e-300), 0.0)])
    return np.maximum(linear, aligned) if mu3 < 0.1 else linear


def _newton_3d(mu1, mu2, guess, nphi, ntheta, tol, maxiter):
    lam = np.array(guess, dtype=float)
    mom = sphere_moments(lam, nphi, ntheta)
    F = np.array([mom.p1p1 - mu1, mom.p2p2 - mu2])
    norm = np.max(np.abs(F))
    for _ in range(maxiter):
        if norm <= tol:
            return lam, mom
        J = np.array(
            [
                [mom.s1111 - mom.p1p1**2, mom.s1122 - mom.p1p1 * mom.p2p2],
                [mom.s1122 - mom.p1p1 * mom.p2p2, mom.s2222 - mom.p2p2**2],
            ]
        )
        step = np.linalg.solve(J, F)
        for _ in range(31):
            trial = lam - step
            tmom = sphere_moments(trial, nphi, ntheta)
            tF = np.array([tmom.p1p1 - mu1, tmom.p2p2 - mu2])
            tnorm = np.max(np.abs(tF))
            if tnorm < norm:
                break
            step = 0.5 * step
        else:
            if norm <= 100.0 * tol:
                return lam, mom
            raise ConvergenceError(
                f"3D Bingham solve stalled at ({mu1!r}, {mu2!r}) with residual {norm:.3g}"
            )
        lam, mom, F, norm = trial, tmom, tF, tnorm
    if norm <= tol:
        return lam, mom
    raise ConvergenceError(f"3D Bingham solve did not converge at ({mu1!r}, {mu2!r})")


def solve_lambda_3d_moments(
    mu1, mu2, guess=None, nphi=NPHI, ntheta=NTHETA, tol=1e-13, maxiter=200
):
    """Like :func:`solve_lambda_3d` but also returns the moments at the solution."""
    mu1, mu2 = clamp_triangle(mu1, mu2)
    if 1.0 - mu1 - mu2 <= 0.0:
        raise ValueError("the planar-aligned edge mu1 + mu2 = 1 has no finite solution")
    if guess is None:
        guess = _initial_guess_3d(mu1, mu2)
    lam, mom = _newton_3d(mu1, mu2, guess, nphi, ntheta, tol, maxiter)
    return BinghamParams((float(lam[0]), float(lam[1])), mom.log_z), mom


def solve_lambda_3d(point, guess=None, nphi=NPHI, ntheta=NTHETA, tol=1e-13, maxiter=200):
    """Exponents (l1', l2') whose Bingham moments match the eigenvalues ``point``.

    Damped Newton on the two second-moment constraints; the Jacobian is the
    covariance matrix of (p1^2, p2^2).
    """
    mu1, mu2 = point
    return solve_lambda_3d_moments(mu1, mu2, guess, nphi, ntheta, tol, maxiter)[0]


def planar_aligned_moments(mu1):
    """(S1111, S1122, S2222) on the edge mu3 = 0, where the density lives on a great circle.

    Reduces to the 2D problem in the in-plane angle.
    """
    mu1 = _check_mu1_2d(mu1, upper_open=False)
    s1111 = s1111_2d(mu1)
    s1122 = mu1 - s1111
    s2222 = (1.0 - mu1) - s1122
    return s1111, max(s1122, 0.0), max(s2222, 0.0)
