"""Shell spectra, vorticity, the oscillation-onset detector and entropy functionals."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ive

from . import frame, solve

BINNING = "nearest-integer |k| in lattice units 2 pi / L"


@dataclass
class ShellSpectrum:
    k: np.ndarray
    value: np.ndarray
    mode: str = "mean"
    meta: dict = field(default_factory=dict)


def _rfft_weights(grid):
    # modes strictly inside the half-spectrum stand for themselves and their
    # conjugate partner
    last = grid.mode[-1]
    self_conjugate = (last == 0) | ((grid.n % 2 == 0) & (last == grid.n // 2))
    w = np.where(self_conjugate, 1.0, 2.0)
    return w


def shell_count(n, d):
    """Number of shells 0..K, where K is the largest rounded |k| on an n^d grid.

    K is floor(n sqrt(d) / 2) unless the corner modes round up past it.
    """
    kmax = np.sqrt(d * float(n // 2) ** 2)
    return max(int(np.floor(n * np.sqrt(d) / 2)), int(np.rint(kmax))) + 1


def shell_spectrum(field_hat, grid, mode="mean"):
    """Bin a spectral field (from ``grid.forward``) into integer shells.

    ``mode="mean"`` averages |u_k| over the modes of each shell;
    ``mode="sum-squared"`` sums |u_k|^2, so the shells add up to the grid
    average of |u|^2.  Coefficients are normalized by n^d; vector fields
    carry their components along the first axis.
    """
    if mode not in ("mean", "sum-squared"):
        raise ValueError("mode must be 'mean' or 'sum-squared'")
    fh = np.asarray(field_hat)
    if fh.ndim == grid.d:
        fh = fh[None]
    amp2 = np.sum(np.abs(fh) ** 2, axis=0) / float(grid.n**grid.d) ** 2
    kmag = np.sqrt(np.sum(grid.mode.astype(float) ** 2, axis=0))
    shell = np.rint(kmag).astype(int).ravel()
    nshell = shell_count(grid.n, grid.d)
    w = _rfft_weights(grid).ravel()
    if mode == "sum-squared":
        value = np.bincount(shell, weights=w * amp2.ravel(), minlength=nshell)
    else:
        total = np.bincount(shell, weights=w * np.sqrt(amp2).ravel(), minlength=nshell)
        count = np.bincount(shell, weights=w, minlength=nshell)
        value = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return ShellSpectrum(np.arange(nshell), value[:nshell], mode, {"binning": BINNING})


def vorticity_hat(u_hat, grid):
    """Spectral vorticity: scalar in 2D, vector curl in 3D."""
    k = grid.k
    if grid.d == 2:
        return 1j * (k[0] * u_hat[1] - k[1] * u_hat[0])
    return 1j * np.stack(
        [
            k[1] * u_hat[2] - k[2] * u_hat[1],
            k[2] * u_hat[0] - k[0] * u_hat[2],
            k[0] * u_hat[1] - k[1] * u_hat[0],
        ]
    )


def vorticity(u_hat, grid):
    """Physical-space vorticity of a velocity spectrum."""
    return grid.inverse(vorticity_hat(u_hat, grid))


@dataclass
class Onset:
    k_star: int | None
    params: dict
    curvature: np.ndarray


def onset_wavenumber(spectrum, threshold=0.05, skip=2, kmax=None):
    """First shell past the spectral peak where oscillations set in.

    The detector is q_k = |d^2 log S / d(log k)^2| / k^2, from three-point
    differences on the non-uniform log k grid.  A power law gives q = 0
    exactly and smooth exponential decay gives q ~ 1/(k k0), while an
    oscillation of relative amplitude a and period P gives q ~ a (2 pi / P)^2.
    The search starts ``skip`` shells after the global maximum and stops at
    ``kmax`` (default: the last positive shell).  Returns ``k_star = None``
    when no shell exceeds ``threshold``.
    """
    k = np.asarray(spectrum.k, dtype=float)
    v = np.asarray(spectrum.value, dtype=float)
    params = {"threshold": threshold, "skip": skip, "kmax": kmax,
              "statistic": "|d2 log S / d(log k)^2| / k^2"}
    good = (k >= 1) & (v > 0)
    if kmax is not None:
        good &= k <= kmax
    idx = np.flatnonzero(good)
    # keep the leading run of consecutive positive shells
    if idx.size:
        breaks = np.flatnonzero(np.diff(idx) != 1)
        idx = idx[: breaks[0] + 1] if breaks.size else idx
    q = np.zeros_like(v)
    if idx.size < 3:
        return Onset(None, params, q)
    x = np.log(k[idx])
    y = np.log(v[idx])
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d2 = 2.0 * (h0 * y[2:] - (h0 + h1) * y[1:-1] + h1 * y[:-2]) / (h0 * h1 * (h0 + h1))
    q[idx[1:-1]] = np.abs(d2) / k[idx[1:-1]] ** 2
    peak = idx[np.argmax(v[idx])]
    for j in idx[1:-1]:
        if j >= peak + skip and q[j] > threshold:
            return Onset(int(k[j]), params, q)
    return Onset(None, params, q)


@dataclass
class EntropyResult:
    S: float
    D: float
    excluded: int
    valid: bool


def log_partition(lam):
    """log of int exp(sum_i lam_i p_i^2) dp for trace-free eigenvalues ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] == 2:
        # lam1 p1^2 + lam2 p2^2 = (lam1 - lam2)/2 cos(2 theta) with lam1 + lam2 = 0
        x = np.abs(0.5 * (lam[..., 0] - lam[..., 1]))
        return np.log(2.0 * np.pi * ive(0, x)) + x
    raise ValueError("use sphere_moments for three dimensions")


def entropy_functionals(c, D, grid, cmap, nphi=solve.NPHI, ntheta=solve.NTHETA):
    """Conformational entropy S(t) and steric functional D(t) of a field.

    S = (1/Psi0) int (gamma - gamma0) + B:D dx with gamma = -log Z for the
    trace-free B recovered pointwise, gamma0 = log Psi0 and Psi0 = 1/(2 pi)
    or 1/(4 pi).  Concentration is assumed to be uniform (c = 1) for S; D/c
    is used pointwise.  D(t) = int (D - (c/d) I):(D - (c/d) I) dx.  Points
    where B diverges are excluded; more than 0.1% exclusions mark the
    result invalid.  3D log Z uses product quadrature per point, which is
    slow for large grids.
    """
    d = grid.d
    volume = grid.L**d
    c = np.asarray(c, dtype=float)
    D = np.asarray(D, dtype=float)
    dev = D - (c / d)[..., None, None] * np.eye(d)
    steric = float(np.mean(np.sum(dev * dev, axis=(-2, -1)))) * volume
    fr = frame.eig(D / c[..., None, None])
    mus = np.maximum(fr.mus, 0.0)
    mus = mus / mus.sum(axis=-1, keepdims=True)
    s = frame.evaluate_map(cmap, mus)
    lam, ok = frame.recover_lambdas(mus, s)
    psi0 = 1.0 / (2.0 * np.pi) if d == 2 else 1.0 / (4.0 * np.pi)
    if d == 2:
        log_z = log_partition(np.where(ok[..., None], lam, 0.0))
    else:
        log_z = np.zeros(mus.shape[:-1])
        flat_lam = lam.reshape(-1, 3)
        flat_ok = ok.ravel()
        out = log_z.reshape(-1)
        for p in np.flatnonzero(flat_ok):
            rel = flat_lam[p, :2] - flat_lam[p, 2]
            out[p] = solve.sphere_moments(rel, nphi, ntheta).log_z + flat_lam[p, 2]
    gamma = -log_z
    density = (gamma - np.log(psi0) + c * np.sum(np.where(ok[..., None], lam, 0.0) * mus, axis=-1)) / psi0
    excluded = int(np.count_nonzero(~ok))
    entropy = float(np.sum(np.where(ok, density, 0.0)) / ok.size) * volume
    return EntropyResult(entropy, steric, excluded, excluded <= 1e-3 * ok.size)


# -- CSV ----------------------------------------------------------------------


def write_spectrum_csv(path, spectrum):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "value"])
        for k, v in zip(spectrum.k, spectrum.value):
            w.writerow([int(k), format(float(v), ".17g")])


def read_spectrum_csv(path, mode="mean"):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["k", "value"]:
        raise ValueError("spectrum CSV must start with the header 'k,value'")
    k = np.array([int(r[0]) for r in rows[1:]], dtype=int)
    v = np.array([float(r[1]) for r in rows[1:]])
    return ShellSpectrum(k, v, mode, {"binning": BINNING})
