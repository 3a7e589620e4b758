"""Pseudo-spectral simulator for the Bingham-closed active nematic model.

Fields live on a periodic box [0, L)^d with n points per side.  The
concentration c and the symmetric second moment D are advanced with SBDF2:
diffusion and the -2 d dR D relaxation are implicit (diagonal in Fourier
space), everything else is extrapolated explicitly.  Tensors are stored as
their upper-triangle components, ``(ncomp, n, ..., n)``.
"""
import dataclasses
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, gmres

from . import chebmap, frame

SNAPSHOT_MAGIC = b"ANF1"
FEASIBILITY_TOL = 1e-8


class NumericalError(RuntimeError):
    """The simulation produced non-finite or infeasible fields."""


@dataclass
class SimConfig:
    d: int = 3
    n: int = 64
    L: float = 15.0
    dt: float = 0.05
    alpha: float = -1.0
    beta: float = 0.8
    zeta: float = 1.0
    dT: float = 0.1
    dR: float = 0.1
    M: int = 80
    map_file: str = ""
    init_amplitude: float = 1e-2
    init_wavevectors: str = ""
    seed: int = 0
    t_end: float = 50.0
    output_every: float = 0.0
    output_dir: str = "run_output"
    velocity_tol: float = 1e-12
    workers: int = 1

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.n < 4 or self.n % 2:
            raise ValueError("n must be even and >= 4")
        if not (self.dt > 0 and self.L > 0):
            raise ValueError("dt and L must be positive")
        if self.dT < 0 or self.dR < 0:
            raise ValueError("dT and dR must be non-negative")

    @classmethod
    def from_text(cls, text):
        """Parse ``key = value`` lines (``#`` starts a comment)."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = types[key]
            kind = {"int": int, "float": float, "str": str}.get(kind, kind)
            try:
                values[key] = kind(val)
            except ValueError:
                raise ValueError(f"config line {lineno}: bad value {val!r} for {key}")
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def upper_indices(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


sym_to_full = frame.sym_matrix
full_to_sym = frame.sym_components


class SpectralGrid:
    """Wavenumbers, dealiasing mask and real transforms for a periodic box."""

    def __init__(self, d, n, L, workers=1):
        self.d, self.n, self.L, self.workers = d, n, L, workers
        self.axes = tuple(range(-d, 0))
        m = np.fft.fftfreq(n, 1.0 / n)
        mr = np.fft.rfftfreq(n, 1.0 / n)
        ints = np.meshgrid(*([m] * (d - 1) + [mr]), indexing="ij")
        self.mode = np.stack(ints)
        self.k = (2.0 * np.pi / L) * self.mode
        self.k2 = np.sum(self.k**2, axis=0)
        self.keep = np.all(np.abs(self.mode) <= n / 3.0, axis=0)
        self.inv_k2 = np.zeros_like(self.k2)
        np.divide(1.0, self.k2, out=self.inv_k2, where=self.k2 > 0)
        self.shape = (n,) * d
        self.x = np.stack(np.meshgrid(*([np.arange(n) * (L / n)] * d), indexing="ij"))

    def forward(self, f):
        return fft.rfftn(f, axes=self.axes, workers=self.workers)

    def inverse(self, fh):
        return fft.irfftn(fh, s=self.shape, axes=self.axes, workers=self.workers)

    def dealias(self, fh):
        return dealias(fh, self.keep)

    def grad(self, fh):
        """Spectral gradient: (d, ...) stacked in front of fh's shape."""
        return 1j * self.k.reshape((self.d,) + (1,) * (fh.ndim - self.d) + self.k2.shape) * fh


def dealias(spectrum, keep):
    """Zero every mode with some |k_i| > n/3 (per-axis two-thirds rule)."""
    return np.where(keep, spectrum, 0.0)


def stokes_solve(sigma_hat, grid):
    """Velocity spectrum for -Lap u + grad q = div Sigma, div u = 0, mean(u) = 0.

    u_hat = (I - k k^T / |k|^2)(i k . Sigma_hat) / |k|^2.
    """
    d = grid.d
    S = {}
    for a, (i, j) in enumerate(upper_indices(d)):
        S[i, j] = S[j, i] = sigma_hat[a]
    f = np.stack([1j * sum(grid.k[j] * S[i, j] for j in range(d)) for i in range(d)])
    return _project(f, grid)


def _project(f, grid):
    kf = np.sum(grid.k * f, axis=0)
    u = (f - grid.k * (kf * grid.inv_k2)) * grid.inv_k2
    u[(slice(None),) + (0,) * grid.d] = 0.0
    return u


def divergence_residual(u_hat, grid):
    return float(np.max(np.abs(np.sum(grid.k * u_hat, axis=0))))


def compute_stress(D, c, SdotT, zeta, alpha, beta):
    """Sigma = alpha D + beta S:T - 2 zeta beta D.D, with T = E + 2 zeta D.

    Equivalent to alpha D + beta S:E - 2 zeta beta (D.D - S:D); ``c`` is
    accepted for symmetry with the closure call and is already inside SdotT.
    """
    return alpha * D + beta * SdotT - 2.0 * zeta * beta * (D @ D)


def project_feasible(mus, tol=FEASIBILITY_TOL):
    """Clip eigenvalues of D/c that are negative by at most ``tol``.

    Returns the clipped eigenvalues and their unit-trace normalization.
    """
    low = mus.min()
    if low < -tol or not np.all(np.isfinite(mus)):
        raise NumericalError(f"eigenvalue of D/c at {low:.3g} is outside the feasible set")
    mus = np.maximum(mus, 0.0)
    return mus, mus / mus.sum(axis=-1, keepdims=True)


@dataclass
class FieldState:
    """Spectral c and D at time t.

    ``u_hat`` is the velocity from the most recent solve (taken at the
    previous time level during stepping) and only seeds the next solve; use
    :meth:`Simulator.velocity_of` for the velocity at ``t``.  ``history``
    holds the previous level and tendencies needed by SBDF2.
    """

    t: float
    c_hat: np.ndarray
    D_hat: np.ndarray
    u_hat: np.ndarray | None = None
    step: int = 0
    history: tuple | None = field(default=None, repr=False)

    def physical(self, grid):
        c = grid.inverse(self.c_hat)
        D = sym_to_full(grid.inverse(self.D_hat), grid.d)
        return c, D


class Simulator:
    """Holds the grid, closure map and operators for one configuration."""

    def __init__(self, config, cmap=None):
        self.config = config
        self.grid = SpectralGrid(config.d, config.n, config.L, config.workers)
        if cmap is None:
            if config.map_file:
                cmap = chebmap.load_map(config.map_file)
            else:
                cmap = chebmap.default_map(config.d, config.M)
        if cmap.dim != config.d:
            raise ValueError(f"map dimension {cmap.dim} does not match d={config.d}")
        self.cmap = cmap
        d = config.d
        self.diag_comp = [a for a, (i, j) in enumerate(upper_indices(d)) if i == j]
        self.lin_c = -config.dT * self.grid.k2
        self.lin_D = -config.dT * self.grid.k2 - 2.0 * d * config.dR
        self.velocity_iterations = []
        self.max_cfl = 0.0
        self._cfl_warned = False

    # -- closure and velocity ---------------------------------------------

    def closure_state(self, c, D):
        """Frame and completed fourth moments of D/c, with the feasibility guard."""
        if np.any(c <= 0.0):
            raise NumericalError("concentration became non-positive")
        fr = frame.eig(D / c[..., None, None])
        mus, unit = project_feasible(fr.mus)
        # complete with the unnormalized eigenvalues so tr(S:T) = tr(D T)/c exactly
        return fr, frame.evaluate_map(self.cmap, unit, complete_with=mus)

    def _strain_hat(self, u_hat):
        g = self.grid
        out = []
        for i, j in upper_indices(g.d):
            out.append(0.5j * (g.k[j] * u_hat[i] + g.k[i] * u_hat[j]))
        return np.stack(out)

    def velocity(self, c, D, fr, s, guess=None):
        """Solve Stokes with the stress's dependence on E.

        With the frame and fourth moments fixed for the step, the strain-rate
        part of the stress is linear in u, so u - K u = f0 is solved by GMRES
        (warm-started from ``guess``).  Each K application re-contracts S with
        the strain rate of its argument.
        """
        cfg, g = self.config, self.grid
        cc = c[..., None, None]
        contract = frame.Contraction(fr, s, D.shape)
        SD = cc * contract(D)
        sigma0 = cfg.alpha * D + 2.0 * cfg.zeta * cfg.beta * (SD - D @ D)
        f0 = stokes_solve(g.dealias(g.forward(full_to_sym(sigma0))), g)

        def strain_stress(u_hat):
            # components of c S_B:E for the strain rate of u_hat
            return c * contract.components(g.inverse(self._strain_hat(u_hat)))

        if cfg.beta == 0.0:
            self.velocity_iterations.append(0)
            return f0, SD, sym_to_full(strain_stress(f0), g.d)
        shape = f0.shape
        count = [0]

        def matvec(x):
            count[0] += 1
            u = x.reshape(shape)
            Ku = cfg.beta * stokes_solve(g.dealias(g.forward(strain_stress(u))), g)
            return (u - Ku).ravel()

        op = LinearOperator((f0.size, f0.size), matvec=matvec, dtype=complex)
        x0 = (f0 if guess is None else guess).ravel()
        sol, info = gmres(op, f0.ravel(), x0=x0, rtol=cfg.velocity_tol, atol=0.0,
                          restart=30, maxiter=10)
        if info != 0:
            raise NumericalError(f"velocity solve did not converge (GMRES info {info})")
        self.velocity_iterations.append(count[0])
        u = sol.reshape(shape)
        return u, SD, sym_to_full(strain_stress(u), g.d)

    def velocity_of(self, state):
        """Velocity spectrum at the state's own time."""
        g = self.grid
        c = g.inverse(g.dealias(state.c_hat))
        D = sym_to_full(g.inverse(g.dealias(state.D_hat)), g.d)
        fr, s = self.closure_state(c, D)
        return self.velocity(c, D, fr, s, guess=state.u_hat)[0]

    def stress(self, c, D, u_hat=None):
        """Extra stress of a state (solving for u when not supplied)."""
        fr, s = self.closure_state(c, D)
        if u_hat is None:
            u_hat, SD, SE = self.velocity(c, D, fr, s)
        else:
            SD = c[..., None, None] * frame.contract_rotate(fr, s, D)
            E = sym_to_full(self.grid.inverse(self._strain_hat(u_hat)), self.grid.d)
            SE = c[..., None, None] * frame.contract_rotate(fr, s, E)
        cfg = self.config
        return compute_stress(D, c, SE + 2.0 * cfg.zeta * SD, cfg.zeta, cfg.alpha, cfg.beta)

    # -- explicit tendency ------------------------------------------------

    def rhs_explicit(self, state):
        """Explicit tendencies (c_hat, D_hat) and the velocity at ``state``."""
        cfg, g = self.config, self.grid
        d = g.d
        c_hat = g.dealias(state.c_hat)
        D_hat = g.dealias(state.D_hat)
        c = g.inverse(c_hat)
        D = sym_to_full(g.inverse(D_hat), d)
        fr, s = self.closure_state(c, D)
        u_hat, SD, SE = self.velocity(c, D, fr, s, guess=state.u_hat)
        u = g.inverse(u_hat)
        grad_u = np.moveaxis(g.inverse(g.grad(u_hat)), (0, 1), (-1, -2))  # [..., i, j] = du_i/dx_j
        grad_c = g.inverse(g.grad(c_hat))
        grad_D = g.inverse(g.grad(D_hat))  # (d, ncomp, ...)
        adv_D = np.einsum("j...,ja...->a...", u, grad_D)
        DD = D @ D
        ST = SE + 2.0 * cfg.zeta * SD
        tend = grad_u @ D + D @ np.swapaxes(grad_u, -1, -2) - 2.0 * ST + 4.0 * cfg.zeta * DD
        ND = full_to_sym(tend) - adv_D
        ND[self.diag_comp] += 2.0 * cfg.dR * c
        Nc = -np.einsum("j...,j...->...", u, grad_c)
        if not (np.all(np.isfinite(ND)) and np.all(np.isfinite(Nc))):
            raise NumericalError(f"non-finite tendency at t = {state.t}")
        return g.dealias(g.forward(Nc)), g.dealias(g.forward(ND)), u_hat, u

    # -- time stepping ----------------------------------------------------

    def step(self, state):
        """One IMEX step: first-order Euler at start-up, SBDF2 afterwards."""
        cfg = self.config
        dt = cfg.dt
        Nc, ND, u_hat, u = self.rhs_explicit(state)
        umax = float(np.max(np.sqrt(np.sum(u**2, axis=0))))
        cfl = umax * dt * cfg.n / cfg.L
        self.max_cfl = max(self.max_cfl, cfl)
        if cfl > 1.0 and not self._cfl_warned:
            # reported once per simulator; max_cfl keeps the running maximum
            warnings.warn(f"CFL number {cfl:.2f} > 1 at t = {state.t:g}")
            self._cfl_warned = True
        if state.history is None:
            c_new = (state.c_hat + dt * Nc) / (1.0 - dt * self.lin_c)
            D_new = (state.D_hat + dt * ND) / (1.0 - dt * self.lin_D)
        else:
            c_old, D_old, Nc_old, ND_old = state.history
            c_new = (2.0 * state.c_hat - 0.5 * c_old + dt * (2.0 * Nc - Nc_old)) / (
                1.5 - dt * self.lin_c
            )
            D_new = (2.0 * state.D_hat - 0.5 * D_old + dt * (2.0 * ND - ND_old)) / (
                1.5 - dt * self.lin_D
            )
        self.last_velocity = u_hat
        self.last_umax = umax
        return FieldState(
            t=state.t + dt,
            c_hat=c_new,
            D_hat=D_new,
            u_hat=u_hat,
            step=state.step + 1,
            history=(state.c_hat, state.D_hat, Nc, ND),
        )

    def state_from_fields(self, c, D, t=0.0):
        g = self.grid
        return FieldState(t, g.forward(np.asarray(c, float)), g.forward(full_to_sym(D)))

    def diagnostics(self, state):
        """Trace drift, divergence residual, min eigenvalue of D/c and max |u|."""
        g = self.grid
        c, D = state.physical(g)
        drift = float(np.max(np.abs(np.trace(D, axis1=-2, axis2=-1) - c)))
        mus = frame.eig(D / c[..., None, None]).mus
        out = dict(t=state.t, trace_drift=drift, min_eig=float(mus.min()))
        if state.u_hat is not None:
            out["div_u"] = divergence_residual(state.u_hat, g)
        return out


def step_sbdf2(sim, state):
    return sim.step(state)


def init_planewave(config, grid=None):
    """Isotropic state plus trace-free plane-wave perturbations.

    D = I/d + eps * sum_k A_k cos(k.x + phi_k) with random symmetric
    trace-free A_k (unit Frobenius norm) and phases drawn from ``config.seed``.
    Wavevectors are integer lattice indices from ``config.init_wavevectors``
    ("1 0 0; 0 1 0"), defaulting to the three lowest lattice modes.
    """
    d, eps = config.d, config.init_amplitude
    grid = grid or SpectralGrid(d, config.n, config.L, config.workers)
    if config.init_wavevectors.strip():
        modes = [
            [int(v) for v in part.replace(",", " ").split()]
            for part in config.init_wavevectors.split(";")
            if part.strip()
        ]
        if any(len(m) != d for m in modes):
            raise ValueError(f"every wavevector needs {d} integer components")
    else:
        modes = np.eye(d, dtype=int).tolist() if d == 3 else [[1, 0], [0, 1], [1, 1]]
    rng = np.random.default_rng(config.seed)
    pert = np.zeros(grid.shape + (d, d))
    for m in modes:
        A = rng.standard_normal((d, d))
        A = 0.5 * (A + A.T)
        A -= np.trace(A) / d * np.eye(d)
        A /= np.linalg.norm(A)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        kx = np.tensordot(2.0 * np.pi / config.L * np.asarray(m, float), grid.x, axes=1)
        pert += np.cos(kx + phase)[..., None, None] * A
    if eps != 0.0:
        lo = float(np.linalg.eigvalsh(pert).min())
        eps_max = (1.0 / d) / -lo if lo < 0 else math.inf
        if abs(eps) > eps_max:
            raise ValueError(f"init_amplitude {eps} is infeasible; the largest feasible value is {eps_max:.6g}")
    D = np.eye(d) / d + eps * pert
    c = np.ones(grid.shape)
    return FieldState(0.0, grid.forward(c), grid.forward(full_to_sym(D)))


def run(config, cmap=None, on_step=None, snapshot_dir=None):
    """Advance from the plane-wave initial state to ``t_end``.

    ``on_step(sim, state)`` is called after every step.  Snapshots are written
    every ``output_every`` time units (and at the end) into ``snapshot_dir``.
    Returns (simulator, final state).
    """
    sim = Simulator(config, cmap)
    state = init_planewave(config, sim.grid)
    nsteps = int(round(config.t_end / config.dt))
    every = int(round(config.output_every / config.dt)) if config.output_every > 0 else 0
    for _ in range(nsteps):
        try:
            state = sim.step(state)
        except NumericalError:
            if snapshot_dir is not None:
                write_snapshot(f"{snapshot_dir}/diagnostic_t{state.t:.4f}.anf", sim, state)
            raise
        if on_step is not None:
            on_step(sim, state)
        if snapshot_dir is not None and every and state.step % every == 0:
            write_snapshot(f"{snapshot_dir}/snapshot_{state.step:06d}.anf", sim, state)
    if snapshot_dir is not None:
        write_snapshot(f"{snapshot_dir}/final.anf", sim, state)
    return sim, state


# -- snapshots ----------------------------------------------------------------

_HEADER = struct.Struct("<4sIIddd")


@dataclass
class Snapshot:
    d: int
    n: int
    L: float
    t: float
    dt: float
    c: np.ndarray
    D: np.ndarray  # (ncomp, *grid), upper-triangle order


def write_snapshot(path, sim, state):
    cfg, g = sim.config, sim.grid
    c = g.inverse(state.c_hat)
    D = g.inverse(state.D_hat)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, cfg.d, cfg.n, float(cfg.L), float(state.t), float(cfg.dt)))
        fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(D, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot too short for its header")
    magic, d, n, L, t, dt = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    if d not in (2, 3):
        raise ValueError(f"unsupported snapshot dimension {d}")
    npts = n**d
    ncomp = d * (d + 1) // 2
    expected = _HEADER.size + 8 * npts * (1 + ncomp)
    if len(raw) != expected:
        raise ValueError(f"snapshot size {len(raw)} does not match header ({expected} bytes)")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    c = data[:npts].reshape((n,) * d).copy()
    D = data[npts:].reshape((ncomp,) + (n,) * d).copy()
    return Snapshot(d, n, L, t, dt, c, D)
