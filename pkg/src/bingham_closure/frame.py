"""Eigenframes of the second moment, rotation of the closure, and parameter recovery.

Every routine works on stacks of full symmetric matrices with shape
``(..., d, d)`` so a whole simulation grid is processed in one call.
"""
from dataclasses import dataclass

import numba
import numpy as np

from . import chebmap, solve

#: Off-diagonal perturbation applied before the 3D eigensolve.
OFFDIAG_PERTURBATION = 1e-16
_CLAMP_TOL = 1e-12
_CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class EigenFrame:
    """Descending eigenvalues ``mus[..., i]`` and eigenvectors ``omega[..., :, i]``."""

    mus: np.ndarray
    omega: np.ndarray

    @property
    def dim(self):
        return self.mus.shape[-1]

    def reconstruct(self):
        return np.einsum("...ik,...k,...jk->...ij", self.omega, self.mus, self.omega)


@dataclass(frozen=True)
class DiagFourthMoment:
    """Distinct diagonal-frame fourth moments S_iijj (i <= j) as arrays.

    In 2D only s1111, s1122, s2222 are used; the index-3 entries are None.
    """

    s1111: np.ndarray
    s1122: np.ndarray
    s2222: np.ndarray
    s1133: np.ndarray | None = None
    s2233: np.ndarray | None = None
    s3333: np.ndarray | None = None

    @property
    def dim(self):
        return 2 if self.s1133 is None else 3

    def pair_matrix(self):
        """Symmetric matrix P[..., i, j] = S_iijj."""
        if self.dim == 2:
            rows = [[self.s1111, self.s1122], [self.s1122, self.s2222]]
        else:
            rows = [
                [self.s1111, self.s1122, self.s1133],
                [self.s1122, self.s2222, self.s2233],
                [self.s1133, self.s2233, self.s3333],
            ]
        return np.stack([np.stack([np.asarray(v, float) for v in r], -1) for r in rows], -2)


# -- eigendecomposition -----------------------------------------------------


def eig2(D):
    """Closed-form eigenframe of symmetric 2x2 matrices.

    The rotation angle is omega = atan2(2 D12, D11 - D22) / 2, so D = I/2
    gives the identity frame.
    """
    D = np.asarray(D, dtype=float)
    d11, d22, d12 = D[..., 0, 0], D[..., 1, 1], D[..., 0, 1]
    tr = d11 + d22
    root = np.sqrt((d11 - d22) ** 2 + 4.0 * d12**2)
    mus = np.stack([0.5 * (tr + root), 0.5 * (tr - root)], -1)
    w = 0.5 * np.arctan2(2.0 * d12, d11 - d22)
    c, s = np.cos(w), np.sin(w)
    omega = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return EigenFrame(mus, omega)


@numba.njit(cache=True)
def _largest_deviatoric_root(j2, j3):
    # Newton on q(z) = z^3 - j2 z - j3 from the upper bound 2 sqrt(j2/3) of the
    # largest root; q is increasing and convex to the right of it, so the
    # iterates decrease monotonically.
    if j2 <= 0.0:
        return 0.0
    z = 2.0 * np.sqrt(j2 / 3.0)
    for _ in range(100):
        dq = 3.0 * z * z - j2
        if dq <= 0.0:
            break
        step = (z * z * z - j2 * z - j3) / dq
        if step <= 4e-16 * abs(z):
            return z - max(step, 0.0)
        z -= step
    # bisection between the local maximum of q and the upper bound
    lo, hi = np.sqrt(j2 / 3.0), 2.0 * np.sqrt(j2 / 3.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * mid * mid - j2 * mid - j3 > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def _argmin_abs3(x):
    k = 0
    for i in range(1, 3):
        if abs(x[i]) < abs(x[k]):
            k = i
    return k


@numba.njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@numba.njit(cache=True)
def _null_vector(A, v, tmp, axis):
    """Unit vector spanning the null space of a rank-2 symmetric 3x3 matrix.

    The best-conditioned cross product of two rows is used; for rank <= 1
    (a repeated eigenvalue at the isolated end) any vector orthogonal to the
    largest row is returned.
    """
    best = -1.0
    for pair in range(3):
        a = 0 if pair < 2 else 1
        b = 1 if pair == 0 else 2
        _cross(A[a], A[b], tmp)
        n = np.sqrt(tmp[0] ** 2 + tmp[1] ** 2 + tmp[2] ** 2)
        if n > best:
            best = n
            scale = 1.0 / n if n > 0.0 else 1.0
            for i in range(3):
                v[i] = tmp[i] * scale
    if best > 1e-300:
        return
    r = 0
    rn = -1.0
    for i in range(3):
        n = A[i, 0] ** 2 + A[i, 1] ** 2 + A[i, 2] ** 2
        if n > rn:
            rn, r = n, i
    if rn <= 0.0:
        v[:] = 0.0
        v[0] = 1.0
        return
    axis[:] = 0.0
    axis[_argmin_abs3(A[r])] = 1.0
    _cross(A[r], axis, v)
    v /= np.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)


@numba.njit(cache=True)
def _eig3_kernel(D, perturb, mus, omega):
    Dev = np.empty((3, 3))
    A = np.empty((3, 3))
    v = np.empty(3)
    u = np.empty(3)
    w = np.empty(3)
    axis = np.empty(3)
    tmp = np.empty(3)
    for p in range(D.shape[0]):
        mean = (D[p, 0, 0] + D[p, 1, 1] + D[p, 2, 2]) / 3.0
        for i in range(3):
            for j in range(3):
                Dev[i, j] = D[p, i, j] + (perturb if i != j else -mean)
        j2 = 0.0
        for i in range(3):
            for j in range(3):
                j2 += 0.5 * Dev[i, j] * Dev[i, j]
        j3 = (
            Dev[0, 0] * (Dev[1, 1] * Dev[2, 2] - Dev[1, 2] * Dev[2, 1])
            - Dev[0, 1] * (Dev[1, 0] * Dev[2, 2] - Dev[1, 2] * Dev[2, 0])
            + Dev[0, 2] * (Dev[1, 0] * Dev[2, 1] - Dev[1, 1] * Dev[2, 0])
        )
        z1 = _largest_deviatoric_root(j2, j3)
        disc = np.sqrt(max(4.0 * j2 - 3.0 * z1 * z1, 0.0))
        z2, z3 = 0.5 * (-z1 + disc), 0.5 * (-z1 - disc)
        # eigenvector of whichever end of the spectrum is more isolated
        top = (z1 - z2) >= (z2 - z3)
        z_iso = z1 if top else z3
        for i in range(3):
            for j in range(3):
                A[i, j] = Dev[i, j] - (z_iso if i == j else 0.0)
        _null_vector(A, v, tmp, axis)
        axis[:] = 0.0
        axis[_argmin_abs3(v)] = 1.0
        _cross(v, axis, u)
        u /= np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
        _cross(v, u, w)
        # closed-form 2x2 problem in the complement spanned by (u, w)
        a = b = c = 0.0
        for i in range(3):
            for j in range(3):
                a += u[i] * Dev[i, j] * u[j]
                b += u[i] * Dev[i, j] * w[j]
                c += w[i] * Dev[i, j] * w[j]
        root = np.sqrt((a - c) ** 2 + 4.0 * b * b)
        za, zb = 0.5 * (a + c + root), 0.5 * (a + c - root)
        ang = 0.5 * np.arctan2(2.0 * b, a - c)
        ca, sa = np.cos(ang), np.sin(ang)
        first = 0 if top else 2
        cols = (1, 2) if top else (0, 1)
        mus[p, first] = z_iso + mean
        mus[p, cols[0]] = za + mean
        mus[p, cols[1]] = zb + mean
        for i in range(3):
            omega[p, i, first] = v[i]
            omega[p, i, cols[0]] = ca * u[i] + sa * w[i]
            omega[p, i, cols[1]] = -sa * u[i] + ca * w[i]
        # largest-magnitude component of every eigenvector is made positive
        for j in range(3):
            big = 0
            for i in range(1, 3):
                if abs(omega[p, i, j]) > abs(omega[p, big, j]):
                    big = i
            if omega[p, big, j] < 0.0:
                for i in range(3):
                    omega[p, i, j] = -omega[p, i, j]


def eig3(D, perturb=OFFDIAG_PERTURBATION):
    """Eigenframe of symmetric 3x3 matrices from the characteristic cubic.

    The largest root of the deviatoric cubic comes from Newton iteration and
    the others from the quadratic formula.  The eigenvector of the most
    isolated eigenvalue is a cross product of two rows of D - mu I; the
    remaining pair is resolved in closed form inside its orthogonal
    complement, so the frame is orthonormal even for repeated eigenvalues.
    Off-diagonal entries are perturbed by ``perturb`` first.
    """
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)):
        raise ValueError("eig3 received non-finite entries")
    shape = D.shape[:-2]
    flat = np.ascontiguousarray(D).reshape(-1, 3, 3)
    mus = np.empty((flat.shape[0], 3))
    omega = np.empty_like(flat)
    _eig3_kernel(flat, float(perturb), mus, omega)
    return EigenFrame(mus.reshape(shape + (3,)), omega.reshape(shape + (3, 3)))


def eig(D):
    D = np.asarray(D, dtype=float)
    return eig2(D) if D.shape[-1] == 2 else eig3(D)


# -- fourth moments and rotation --------------------------------------------


def _clamp_entry(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(x < -_CONSISTENCY_TOL) or np.any(x > 1.0 + _CONSISTENCY_TOL):
        raise ValueError(f"trace completion gave {name} outside [0, 1]: inconsistent inputs")
    x = np.where((x < 0.0) & (x >= -_CLAMP_TOL), 0.0, x)
    return np.where((x > 1.0) & (x <= 1.0 + _CLAMP_TOL), 1.0, x)


def complete_fourth(mus, partial):
    """Fill in the diagonal fourth moments from sum_k S_iikk = mu_i.

    ``partial`` is S1111 (2D) or the triple (S1111, S1122, S2222) (3D).
    """
    mus = np.asarray(mus, dtype=float)
    if mus.shape[-1] == 2:
        s1111 = np.asarray(partial[0] if isinstance(partial, tuple) else partial, float)
        s1122 = mus[..., 0] - s1111
        s2222 = mus[..., 1] - s1122
        return DiagFourthMoment(
            _clamp_entry(s1111, "S1111"), _clamp_entry(s1122, "S1122"), _clamp_entry(s2222, "S2222")
        )
    s1111, s1122, s2222 = (np.asarray(v, float) for v in partial)
    s1133 = mus[..., 0] - s1111 - s1122
    s2233 = mus[..., 1] - s1122 - s2222
    s3333 = mus[..., 2] - s1133 - s2233
    vals = dict(s1111=s1111, s1122=s1122, s2222=s2222, s1133=s1133, s2233=s2233, s3333=s3333)
    return DiagFourthMoment(**{k: _clamp_entry(v, k) for k, v in vals.items()})


@numba.njit(cache=True)
def _contract3(Om, P, T, out):
    # T and out hold components (00, 01, 02, 11, 12, 22) of symmetric tensors.
    # With v_i the columns of Om: q_ij = v_i . T v_j, r = S~:q in the
    # eigenframe, and out = sum_ij r_ij v_i v_j^T.
    for p in range(T.shape[1]):
        t00, t01, t02, t11, t12, t22 = T[0, p], T[1, p], T[2, p], T[3, p], T[4, p], T[5, p]
        v0x, v0y, v0z = Om[p, 0, 0], Om[p, 1, 0], Om[p, 2, 0]
        v1x, v1y, v1z = Om[p, 0, 1], Om[p, 1, 1], Om[p, 2, 1]
        v2x, v2y, v2z = Om[p, 0, 2], Om[p, 1, 2], Om[p, 2, 2]
        a0x = t00 * v0x + t01 * v0y + t02 * v0z
        a0y = t01 * v0x + t11 * v0y + t12 * v0z
        a0z = t02 * v0x + t12 * v0y + t22 * v0z
        a1x = t00 * v1x + t01 * v1y + t02 * v1z
        a1y = t01 * v1x + t11 * v1y + t12 * v1z
        a1z = t02 * v1x + t12 * v1y + t22 * v1z
        a2x = t00 * v2x + t01 * v2y + t02 * v2z
        a2y = t01 * v2x + t11 * v2y + t12 * v2z
        a2z = t02 * v2x + t12 * v2y + t22 * v2z
        q00 = v0x * a0x + v0y * a0y + v0z * a0z
        q11 = v1x * a1x + v1y * a1y + v1z * a1z
        q22 = v2x * a2x + v2y * a2y + v2z * a2z
        q01 = v0x * a1x + v0y * a1y + v0z * a1z
        q02 = v0x * a2x + v0y * a2y + v0z * a2z
        q12 = v1x * a2x + v1y * a2y + v1z * a2z
        p00, p01, p02 = P[p, 0, 0], P[p, 0, 1], P[p, 0, 2]
        p11, p12, p22 = P[p, 1, 1], P[p, 1, 2], P[p, 2, 2]
        r00 = p00 * q00 + p01 * q11 + p02 * q22
        r11 = p01 * q00 + p11 * q11 + p12 * q22
        r22 = p02 * q00 + p12 * q11 + p22 * q22
        r01 = 2.0 * p01 * q01
        r02 = 2.0 * p02 * q02
        r12 = 2.0 * p12 * q12
        out[0, p] = (r00 * v0x * v0x + r11 * v1x * v1x + r22 * v2x * v2x
                     + 2.0 * (r01 * v0x * v1x + r02 * v0x * v2x + r12 * v1x * v2x))
        out[3, p] = (r00 * v0y * v0y + r11 * v1y * v1y + r22 * v2y * v2y
                     + 2.0 * (r01 * v0y * v1y + r02 * v0y * v2y + r12 * v1y * v2y))
        out[5, p] = (r00 * v0z * v0z + r11 * v1z * v1z + r22 * v2z * v2z
                     + 2.0 * (r01 * v0z * v1z + r02 * v0z * v2z + r12 * v1z * v2z))
        out[1, p] = (r00 * v0x * v0y + r11 * v1x * v1y + r22 * v2x * v2y
                     + r01 * (v0x * v1y + v1x * v0y) + r02 * (v0x * v2y + v2x * v0y)
                     + r12 * (v1x * v2y + v2x * v1y))
        out[2, p] = (r00 * v0x * v0z + r11 * v1x * v1z + r22 * v2x * v2z
                     + r01 * (v0x * v1z + v1x * v0z) + r02 * (v0x * v2z + v2x * v0z)
                     + r12 * (v1x * v2z + v2x * v1z))
        out[4, p] = (r00 * v0y * v0z + r11 * v1y * v1z + r22 * v2y * v2z
                     + r01 * (v0y * v1z + v1y * v0z) + r02 * (v0y * v2z + v2y * v0z)
                     + r12 * (v1y * v2z + v2y * v1z))


@numba.njit(cache=True)
def _contract2(Om, P, T, out):
    # components (00, 01, 11)
    for p in range(T.shape[1]):
        t00, t01, t11 = T[0, p], T[1, p], T[2, p]
        v0x, v0y = Om[p, 0, 0], Om[p, 1, 0]
        v1x, v1y = Om[p, 0, 1], Om[p, 1, 1]
        q00 = v0x * (t00 * v0x + t01 * v0y) + v0y * (t01 * v0x + t11 * v0y)
        q11 = v1x * (t00 * v1x + t01 * v1y) + v1y * (t01 * v1x + t11 * v1y)
        q01 = v0x * (t00 * v1x + t01 * v1y) + v0y * (t01 * v1x + t11 * v1y)
        p00, p01, p11 = P[p, 0, 0], P[p, 0, 1], P[p, 1, 1]
        r00 = p00 * q00 + p01 * q11
        r11 = p01 * q00 + p11 * q11
        r01 = 2.0 * p01 * q01
        out[0, p] = r00 * v0x * v0x + r11 * v1x * v1x + 2.0 * r01 * v0x * v1x
        out[2, p] = r00 * v0y * v0y + r11 * v1y * v1y + 2.0 * r01 * v0y * v1y
        out[1, p] = r00 * v0x * v0y + r11 * v1x * v1y + r01 * (v0x * v1y + v1x * v0y)


def sym_components(T):
    """(..., d, d) -> (ncomp, ...) upper-triangle components, row-major."""
    d = T.shape[-1]
    return np.stack([T[..., i, j] for i in range(d) for j in range(i, d)])


def sym_matrix(comps, d):
    """(ncomp, ...) upper-triangle components -> (..., d, d)."""
    full = np.empty(comps.shape[1:] + (d, d), dtype=comps.dtype)
    a = 0
    for i in range(d):
        for j in range(i, d):
            full[..., i, j] = comps[a]
            full[..., j, i] = comps[a]
            a += 1
    return full


class Contraction:
    """Frame and fourth moments flattened once for repeated contractions."""

    def __init__(self, frame, s, shape=None):
        Om = np.asarray(frame.omega, dtype=float)
        P = s.pair_matrix()
        self.shape = np.broadcast_shapes(Om.shape, P.shape, shape or ())
        d = self.shape[-1]
        self._Om = np.ascontiguousarray(np.broadcast_to(Om, self.shape)).reshape(-1, d, d)
        self._P = np.ascontiguousarray(np.broadcast_to(P, self.shape)).reshape(-1, d, d)
        self._kernel = _contract3 if d == 3 else _contract2

    def components(self, comps):
        """Contract symmetric tensors given as (ncomp, ...) components."""
        comps = np.asarray(comps, dtype=float)
        flat = np.ascontiguousarray(comps.reshape(comps.shape[0], -1))
        out = np.empty_like(flat)
        self._kernel(self._Om, self._P, flat, out)
        return out.reshape(comps.shape)

    def __call__(self, T):
        d = self.shape[-1]
        T = np.broadcast_to(np.asarray(T, dtype=float), self.shape)
        return sym_matrix(self.components(sym_components(T)), d)


def contract_rotate(frame, s, T):
    """Omega (S~ : T~) Omega^T with T~ = Omega^T T Omega, for symmetric T.

    In the eigenframe S~ only couples (ii, jj) index pairs, so
    (S~:T~)_ii = sum_k S_iikk T~_kk and (S~:T~)_ij = 2 S_iijj T~_ij for i != j.
    """
    T = np.asarray(T, dtype=float)
    return Contraction(frame, s, T.shape)(T)


def evaluate_map(cmap, mus, complete_with=None):
    """Diagonal fourth moments from a Chebyshev map at unit-trace eigenvalues ``mus``.

    The trace completion uses ``complete_with`` when given (for example the
    unnormalized eigenvalues of a field whose trace carries round-off), so
    that sum_k S_iikk matches those exactly.
    """
    target = mus if complete_with is None else complete_with
    if mus.shape[-1] == 2:
        return complete_fourth(target, chebmap.eval_map_2d(cmap, mus[..., 0]))
    return complete_fourth(target, chebmap.eval_map_3d(cmap, mus[..., 0], mus[..., 1]))


def closure_eval(D, c, zeta, E, cmap):
    """S_B : (E + 2 zeta D) for second-moment fields D with trace c.

    Returns ``(SdotT, frame, s)`` where the frame and fourth moments belong
    to the normalized tensor D/c and SdotT carries the factor c.
    """
    D = np.asarray(D, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0.0):
        raise ValueError("closure_eval needs c > 0")
    frame = eig(D / c[..., None, None])
    mus = frame.mus
    if mus.shape[-1] == 3:
        mus = np.stack(chebmap._clamp_triangle_array(mus[..., 0], mus[..., 1]), -1)
        mus = np.concatenate([mus, (1.0 - mus.sum(-1))[..., None]], -1)
    else:
        hi = np.clip(mus[..., 0], 0.5, 1.0)
        mus = np.stack([hi, 1.0 - hi], -1)
    s = evaluate_map(cmap, mus)
    T = np.asarray(E, dtype=float) + 2.0 * zeta * D
    return c[..., None, None] * contract_rotate(frame, s, T), frame, s


# -- parameter recovery and order -------------------------------------------


def recover_lambdas(mus, s, overflow_tol=1e-14):
    """Trace-free Bingham eigenvalues for stacks of points.

    Solves diag(mu) lam - P lam = (d/2)(mu - 1/d) with sum(lam) = 0, where
    P[i, j] = S_iijj.  The matrix annihilates (1, ..., 1), so the last row is
    replaced by the trace constraint.  Returns ``(lam, ok)``; ``ok`` is False
    where some mu_i - S_iiii < ``overflow_tol`` (the exponent diverges there)
    and lam is set to NaN.
    """
    mus = np.asarray(mus, dtype=float)
    d = mus.shape[-1]
    P = s.pair_matrix()
    diag = np.diagonal(P, axis1=-2, axis2=-1)
    ok = np.all(mus - diag >= overflow_tol, axis=-1) | np.all(np.abs(mus - 1.0 / d) <= 1e-14, axis=-1)
    A = np.zeros(np.broadcast_shapes(P.shape, mus.shape + (d,)))
    idx = np.arange(d)
    A[...] = -P
    A[..., idx, idx] += mus
    A[..., -1, :] = 1.0
    rhs = 0.5 * d * (mus - 1.0 / d)
    rhs[..., -1] = 0.0
    A = np.where(ok[..., None, None], A, np.eye(d))
    lam = np.linalg.solve(A, rhs[..., None])[..., 0]
    return np.where(ok[..., None], lam, np.nan), ok


def recover_B(mus, s, c=1.0):
    """Bingham exponents of one point from its eigenvalues and fourth moments.

    The trace c cancels from the linear system.  Returns BinghamParams with
    exponents relative to the last axis (for 2D, lambdas[0] = lam1 - lam2,
    which is twice the coefficient of cos(2 theta)).
    """
    mus = np.asarray(mus, dtype=float)
    if np.all(np.abs(mus - 1.0 / mus.size) <= 1e-14):
        return solve.BinghamParams(tuple([0.0] * (mus.size - 1)))
    lam, ok = recover_lambdas(mus, s)
    if not ok:
        raise OverflowError("mu_i - S_iiii below 1e-14: the Bingham exponent overflows")
    return solve.BinghamParams(tuple(float(v) for v in lam[:-1] - lam[-1]))


def scalar_order(D, c=1.0):
    """Scalar order s = d(mu1 - 1/d)/(d - 1) and director v1 (first nonzero component positive)."""
    D = np.asarray(D, dtype=float) / np.asarray(c, dtype=float)[..., None, None]
    frame = eig(D)
    d = D.shape[-1]
    s = d * (frame.mus[..., 0] - 1.0 / d) / (d - 1)
    v = frame.omega[..., :, 0]
    nz = np.abs(v) > 1e-14
    first = np.argmax(nz, axis=-1)
    sign = np.sign(np.take_along_axis(v, first[..., None], -1))
    sign = np.where(sign == 0, 1.0, sign)
    return s, v * sign
