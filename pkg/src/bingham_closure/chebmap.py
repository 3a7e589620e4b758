"""Chebyshev interpolants of the closure maps, plus their text file format.

2D: mu1 -> S1111 on nu = 4 mu1 - 3, fit on first-kind Chebyshev points.
3D: (nu1, nu2) = H(mu1, mu2) -> (S1111, S1122, S2222) on a tensor grid of
Chebyshev-Lobatto points, truncated to total degree m1 + m2 <= M.
"""
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.fft

from . import solve

FORMAT_TAG = "binghammap v1"
TARGETS_3D = ("S1111", "S1122", "S2222")
ISOTROPIC_3D = (0.2, 1.0 / 15.0, 0.2)
DATA_DIR = Path(__file__).parent / "data"


class MapFormatError(ValueError):
    """Malformed or inconsistent coefficient file."""


@dataclass(frozen=True)
class ChebMap1D:
    """Coefficients c_m of S1111(mu1) = sum c_m T_m(4 mu1 - 3)."""

    coeffs: np.ndarray
    node_values: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def degree(self):
        return self.coeffs.size - 1

    @property
    def dim(self):
        return 2

    def __call__(self, mu1):
        return eval_map_2d(self, mu1)


@dataclass(frozen=True)
class ChebMap2D:
    """Coefficients C[t, m1, m2] (zero for m1 + m2 > M) for the three 3D targets.

    After a fit, ``max_residual`` is the largest moment-equation residual of
    the node solves and ``node_residual`` the largest interpolation error at
    the nodes left by the total-degree truncation.
    """

    coeffs: np.ndarray
    node_values: np.ndarray | None = field(default=None, compare=False, repr=False)
    max_residual: float | None = field(default=None, compare=False)
    node_residual: float | None = field(default=None, compare=False)

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @property
    def dim(self):
        return 3

    def __call__(self, mu1, mu2):
        return eval_map_3d(self, mu1, mu2)


# -- Chebyshev utilities ----------------------------------------------------


def first_kind_points(n):
    """cos((2k - 1) pi / 2n), k = 1..n (descending)."""
    k = np.arange(1, n + 1)
    return np.cos((2 * k - 1) * np.pi / (2 * n))


def lobatto_points(M):
    """cos(j pi / M), j = 0..M (descending, endpoints included)."""
    return np.cos(np.arange(M + 1) * np.pi / M)


def chebvander(x, M):
    """T_0..T_M at x by the three-term recurrence; shape x.shape + (M + 1,)."""
    x = np.asarray(x, dtype=float)
    T = np.empty(x.shape + (M + 1,))
    T[..., 0] = 1.0
    if M >= 1:
        T[..., 1] = x
    for m in range(1, M):
        T[..., m + 1] = 2.0 * x * T[..., m] - T[..., m - 1]
    return T


@numba.njit(cache=True)
def _chebvander_flat(x, M):
    out = np.empty((x.size, M + 1))
    for p in range(x.size):
        t0, t1 = 1.0, x[p]
        out[p, 0] = t0
        if M >= 1:
            out[p, 1] = t1
        for m in range(1, M):
            t0, t1 = t1, 2.0 * x[p] * t1 - t0
            out[p, m + 1] = t1
    return out


def clenshaw(coeffs, x):
    """Evaluate sum c_m T_m(x) by Clenshaw's backward recurrence."""
    x = np.asarray(x, dtype=float)
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for c in coeffs[:0:-1]:
        b1, b2 = 2.0 * x * b1 - b2 + c, b1
    return x * b1 - b2 + coeffs[0]


def first_kind_transform(values):
    """Coefficients of the degree n-1 interpolant through values at first-kind points."""
    n = values.shape[-1]
    c = scipy.fft.dct(np.asarray(values, dtype=float), type=2, axis=-1) / n
    c[..., 0] *= 0.5
    return c


def lobatto_matrix(M):
    """Matrix L with c = L @ f for values f at :func:`lobatto_points`."""
    j = np.arange(M + 1)
    # reduce j k mod 2M in integers so the cosine argument carries no rounding
    L = (2.0 / M) * np.cos((np.outer(j, j) % (2 * M)) * np.pi / M)
    L[:, 0] *= 0.5
    L[:, -1] *= 0.5
    L[0] *= 0.5
    L[-1] *= 0.5
    return L


def degree_averaged(coeffs):
    """Mean |C[m1, m2]| over m1 + m2 = m for m = 0..M."""
    C = np.abs(np.asarray(coeffs))
    M = C.shape[-1] - 1
    out = np.empty(M + 1)
    for m in range(M + 1):
        i = np.arange(m + 1)
        out[m] = C[..., i, m - i].mean(axis=-1).max() if C.ndim == 3 else C[i, m - i].mean()
    return out


# -- 2D map -----------------------------------------------------------------


def fit_map_2d(M):
    """Fit the degree-M interpolant of mu1 -> S1111 on M + 1 first-kind points."""
    if M < 4:
        raise ValueError("fit_map_2d needs M >= 4")
    n = M + 1
    nu = first_kind_points(n)
    mu = 0.25 * (nu + 3.0)
    values = np.empty(n)
    lam = None
    # march upward from the isotropic end, warm-starting each Newton solve
    for k in np.argsort(mu):
        lam = solve.solve_lambda_2d(mu[k], guess=lam)
        values[k] = solve.s1111_from_lambda_2d(lam)
    return ChebMap1D(first_kind_transform(values), node_values=values)


def _clamp_mu1(mu1):
    mu1 = np.asarray(mu1, dtype=float)
    if np.any(mu1 < 0.5 - solve.TRIANGLE_TOL) or np.any(mu1 > 1.0 + solve.TRIANGLE_TOL):
        raise ValueError("mu1 outside [1/2, 1]")
    return np.clip(mu1, 0.5, 1.0)


def eval_map_2d(cmap, mu1):
    """S1111(mu1) by forward recurrence on T_m(4 mu1 - 3)."""
    nu = 4.0 * _clamp_mu1(mu1) - 3.0
    out = (_chebvander_flat(nu.ravel(), cmap.degree) @ cmap.coeffs).reshape(nu.shape)
    return float(out) if out.ndim == 0 else out


# -- 3D map -----------------------------------------------------------------


def _solve_line(nu2, nu1_nodes, nphi, ntheta):
    """Closure values along one nu2 line, marching nu1 from -1 to +1."""
    M = nu1_nodes.size - 1
    vals = np.empty((3, M + 1))
    resid = np.zeros(M + 1)
    vals[:, M] = ISOTROPIC_3D
    lam, mu3_prev = np.zeros(2), 1.0 / 3.0
    for i in range(M - 1, 0, -1):
        mu1, mu2 = solve.square_to_triangle(nu1_nodes[i], nu2)
        mu3 = 1.0 - mu1 - mu2
        guess = lam * (mu3_prev / mu3) if mu3 < 0.1 else lam
        try:
            params, mom = solve.solve_lambda_3d_moments(
                mu1, mu2, guess=guess, nphi=nphi, ntheta=ntheta
            )
        except solve.ConvergenceError as exc:
            raise solve.ConvergenceError(f"at (nu1, nu2) = ({nu1_nodes[i]!r}, {nu2!r}): {exc}")
        lam, mu3_prev = np.array(params.lambdas), mu3
        vals[:, i] = mom.s1111, mom.s1122, mom.s2222
        resid[i] = max(abs(mom.p1p1 - mu1), abs(mom.p2p2 - mu2))
    mu1, _ = solve.square_to_triangle(1.0, nu2)
    vals[:, 0] = solve.planar_aligned_moments(mu1)
    return vals, resid


def fit_map_3d(M, nphi=solve.NPHI, ntheta=solve.NTHETA, workers=None):
    """Fit the total-degree-M interpolant of (nu1, nu2) -> (S1111, S1122, S2222).

    Each nu2 line is solved with continuation from the isotropic edge; the
    nu1 = +1 edge comes from the planar-aligned reduction.  Lines are
    independent and may run in ``workers`` processes.
    """
    if M < 4:
        raise ValueError("fit_map_3d needs M >= 4")
    nodes = lobatto_points(M)
    args = [(nu2, nodes, nphi, ntheta) for nu2 in nodes]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            lines = list(pool.map(_solve_line, *zip(*args)))
    else:
        lines = [_solve_line(*a) for a in args]
    # values[t, i, j]: target t at (nu1_i, nu2_j)
    values = np.stack([v for v, _ in lines], axis=-1)
    max_resid = max(float(r.max()) for _, r in lines)
    L = lobatto_matrix(M)
    C = np.einsum("ai,tij,bj->tab", L, values, L)
    m = np.arange(M + 1)
    C[:, m[:, None] + m[None, :] > M] = 0.0
    V = chebvander(nodes, M)
    interp = np.einsum("ia,tab,jb->tij", V, C, V)
    node_resid = float(np.max(np.abs(interp - values)))
    return ChebMap2D(C, node_values=values, max_residual=max_resid, node_residual=node_resid)


def _clamp_triangle_array(mu1, mu2, tol=solve.TRIANGLE_TOL):
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    mu3 = 1.0 - mu1 - mu2
    bad = np.maximum.reduce([-mu3, mu2 - mu1, mu3 - mu2, mu1 - 1.0, np.zeros_like(mu1)])
    if np.any(bad > tol):
        raise ValueError(f"eigenvalues outside the feasible triangle by {bad.max():.3g}")
    s = np.sort(np.stack([mu1, mu2, mu3]), axis=0)[::-1]
    neg = np.minimum(s[2], 0.0)
    return s[0] + 0.5 * neg, s[1] + 0.5 * neg


@numba.njit(cache=True)
def _rowdot3(T1, W, out, offset):
    # out[t, offset + p] = sum_m T1[p, m] W[p, t (M + 1) + m]
    n = T1.shape[1]
    for p in range(T1.shape[0]):
        for t in range(3):
            acc = 0.0
            for m in range(n):
                acc += T1[p, m] * W[p, t * n + m]
            out[t, offset + p] = acc


def eval_map_3d(cmap, mu1, mu2, chunk=16384):
    """(S1111, S1122, S2222) at eigenvalue pairs (mu1, mu2); arrays allowed.

    The exact isotropic corner returns (1/5, 1/15, 1/5) without going
    through the singular triangle-to-square map.
    """
    mu1, mu2 = _clamp_triangle_array(mu1, mu2)
    shape = mu1.shape
    mu1, mu2 = mu1.ravel(), mu2.ravel()
    a = mu1 - mu2
    b = 2.0 * mu1 + 4.0 * mu2 - 2.0
    s = a + b
    iso = s <= 1e-15
    safe = np.where(iso, 1.0, s)
    nu1 = np.clip(2.0 * s - 1.0, -1.0, 1.0)
    nu2 = np.clip((a - b) / safe, -1.0, 1.0)
    M = cmap.degree
    # one pass of T_m(nu2) against all three coefficient arrays, then the
    # T_m(nu1) contraction per target
    stacked = np.concatenate([cmap.coeffs[t].T for t in range(3)], axis=1)
    out = np.empty((3, mu1.size))
    for lo in range(0, mu1.size, chunk):
        sl = slice(lo, lo + chunk)
        T1 = _chebvander_flat(np.ascontiguousarray(nu1[sl]), M)
        W = _chebvander_flat(np.ascontiguousarray(nu2[sl]), M) @ stacked
        _rowdot3(T1, W, out, lo)
    out[:, iso] = np.array(ISOTROPIC_3D)[:, None]
    out = out.reshape((3,) + shape)
    if not shape:
        return tuple(float(v) for v in out)
    return out[0], out[1], out[2]


# -- file format ------------------------------------------------------------


def _coeff_lines(cmap):
    if cmap.dim == 2:
        blocks = [("S1111", cmap.coeffs)]
    else:
        blocks = [(name, cmap.coeffs[t].ravel()) for t, name in enumerate(TARGETS_3D)]
    return blocks


def save_map(cmap, path):
    """Write the text coefficient file (17 significant digits, CRC32 trailer)."""
    blocks = _coeff_lines(cmap)
    domain = "mu1:0.5:1" if cmap.dim == 2 else "square:H-v1"
    lines = [
        f"{FORMAT_TAG} dim={cmap.dim} M={cmap.degree} targets={len(blocks)}",
        f"domain={domain}",
    ]
    numbers = []
    for name, values in blocks:
        lines.append(f"target={name}")
        text = [format(float(v), ".17g") for v in values]
        numbers.extend(text)
        lines.extend(text)
    crc = zlib.crc32("\n".join(numbers).encode("utf-8"))
    lines.append(f"crc32={crc:08x}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line):
    parts = line.split()
    if len(parts) != 5 or " ".join(parts[:2]) != FORMAT_TAG:
        if parts[:1] == ["binghammap"]:
            raise MapFormatError(f"unsupported format version {parts[1] if len(parts) > 1 else '?'}")
        raise MapFormatError("missing section: header line 'binghammap v1 ...'")
    fields = dict(p.split("=", 1) for p in parts[2:] if "=" in p)
    try:
        dim, M, ntarg = int(fields["dim"]), int(fields["M"]), int(fields["targets"])
    except (KeyError, ValueError):
        raise MapFormatError(f"malformed header: {line!r}")
    if dim not in (2, 3):
        raise MapFormatError(f"unsupported dimension dim={dim}")
    if ntarg != (1 if dim == 2 else 3):
        raise MapFormatError(f"dim={dim} maps need targets={1 if dim == 2 else 3}")
    return dim, M, ntarg


def load_map(path):
    """Read a coefficient file written by :func:`save_map`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MapFormatError("missing section: header")
    dim, M, ntarg = _parse_header(lines[0])
    expected_domain = "domain=mu1:0.5:1" if dim == 2 else "domain=square:H-v1"
    if len(lines) < 2 or not lines[1].startswith("domain="):
        raise MapFormatError("missing section: domain")
    if lines[1] != expected_domain:
        raise MapFormatError(f"unexpected domain {lines[1]!r} for dim={dim}")
    names = ("S1111",) if dim == 2 else TARGETS_3D
    count = M + 1 if dim == 2 else (M + 1) ** 2
    pos = 2
    numbers, blocks = [], []
    for name in names:
        if pos >= len(lines) or lines[pos] != f"target={name}":
            raise MapFormatError(f"missing section: target={name}")
        chunk = lines[pos + 1 : pos + 1 + count]
        if len(chunk) < count or any(not c or c.startswith(("target=", "crc32=")) for c in chunk):
            got = sum(1 for c in chunk if c and not c.startswith(("target=", "crc32=")))
            raise MapFormatError(f"missing section: target={name} has {got} of {count} coefficients")
        try:
            blocks.append(np.array([float(c) for c in chunk]))
        except ValueError as exc:
            raise MapFormatError(f"bad coefficient in target={name}: {exc}")
        numbers.extend(chunk)
        pos += 1 + count
    if pos >= len(lines) or not lines[pos].startswith("crc32="):
        raise MapFormatError("missing section: crc32")
    crc = zlib.crc32("\n".join(numbers).encode("utf-8"))
    if lines[pos] != f"crc32={crc:08x}":
        raise MapFormatError(f"checksum mismatch: file has {lines[pos][6:]}, data gives {crc:08x}")
    if dim == 2:
        return ChebMap1D(blocks[0])
    return ChebMap2D(np.stack([b.reshape(M + 1, M + 1) for b in blocks]))


def default_map(dim, degree=80):
    """Load a packaged precomputed map; 2D maps are fit on the fly if absent."""
    path = DATA_DIR / f"map{dim}d_M{degree}.txt"
    if path.exists():
        return load_map(path)
    if dim == 2:
        return fit_map_2d(degree)
    raise FileNotFoundError(
        f"no packaged 3D map of degree {degree}; run `python -m bingham_closure precompute "
        f"--dim 3 --degree {degree} --out FILE` and load it with load_map"
    )
