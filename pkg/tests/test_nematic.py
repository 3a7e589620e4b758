import dataclasses

import numpy as np
import pytest

from bingham_closure import chebmap, frame, nematic
from bingham_closure.nematic import SimConfig, Simulator, SpectralGrid


@pytest.fixture(scope="module")
def map2d():
    return chebmap.default_map(2, 80)


@pytest.fixture(scope="module")
def map3d():
    return chebmap.default_map(3, 80)


def small_config(**kw):
    base = dict(d=2, n=16, L=15.0, dt=0.05, t_end=0.5, init_amplitude=0.05, seed=1)
    base.update(kw)
    return SimConfig(**base)


def real_field(grid, ncomp, rng):
    return rng.standard_normal((ncomp,) + grid.shape)


# -- Stokes ----------------------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3])
def test_stokes_zero(d):
    g = SpectralGrid(d, 8, 15.0)
    ncomp = d * (d + 1) // 2
    sig = g.forward(np.zeros((ncomp,) + g.shape))
    assert np.all(nematic.stokes_solve(sig, g) == 0)


@pytest.mark.parametrize("d", [2, 3])
def test_stokes_gradient_forcing_absorbed(d):
    g = SpectralGrid(d, 8, 15.0)
    phi = np.cos(2 * np.pi / 15.0 * (2 * g.x[0] + g.x[-1]))
    sigma = np.zeros(g.shape + (d, d))
    sigma[...] = phi[..., None, None] * np.eye(d)
    u = nematic.stokes_solve(g.forward(nematic.full_to_sym(sigma)), g)
    assert np.max(np.abs(u)) <= 1e-12 * np.max(np.abs(g.forward(phi)))


@pytest.mark.parametrize("d", [2, 3])
def test_stokes_residual(d):
    rng = np.random.default_rng(d)
    g = SpectralGrid(d, 16, 10.0)
    ncomp = d * (d + 1) // 2
    sig_hat = g.forward(real_field(g, ncomp, rng))
    u = nematic.stokes_solve(sig_hat, g)
    S = nematic.sym_to_full(sig_hat, d)
    f = 1j * np.einsum("j...,...ij->i...", g.k, S)
    q = -1j * np.sum(g.k * f, axis=0) * g.inv_k2
    resid = g.k2 * u + 1j * g.k * q - f
    resid[(slice(None),) + (0,) * d] = 0.0
    scale = np.max(np.abs(f))
    assert np.max(np.abs(resid)) <= 1e-12 * scale
    assert nematic.divergence_residual(u, g) <= 1e-12 * scale
    assert np.all(u[(slice(None),) + (0,) * d] == 0)


# -- stress -----------------------------------------------------------------------


def test_stress_reduces_without_activity():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((5, 3, 3))
    D = D + np.swapaxes(D, -1, -2)
    S = nematic.compute_stress(D, np.ones(5), np.zeros_like(D), 0.0, -1.3, 0.8)
    np.testing.assert_array_equal(S, -1.3 * D)


def test_stress_matches_term_by_term(map3d):
    rng = np.random.default_rng(1)
    from scipy.spatial.transform import Rotation

    R = Rotation.random(20, random_state=rng).as_matrix()
    c = rng.uniform(0.5, 1.5, 20)
    D = c[:, None, None] * np.einsum("nik,nk,njk->nij", R, rng.dirichlet(np.ones(3), 20), R)
    E = rng.standard_normal((20, 3, 3))
    E = E + np.swapaxes(E, -1, -2)
    alpha, beta, zeta = -1.0, 0.8, 1.7
    SdotT, fr, s = frame.closure_eval(D, c, zeta, E, map3d)
    SE = c[:, None, None] * frame.contract_rotate(fr, s, E)
    SD = c[:, None, None] * frame.contract_rotate(fr, s, D)
    expected = alpha * D + beta * SE - 2 * zeta * beta * (D @ D - SD)
    np.testing.assert_allclose(nematic.compute_stress(D, c, SdotT, zeta, alpha, beta), expected, atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_isotropic_rest_state(d, map2d, map3d):
    cfg = SimConfig(d=d, n=8, init_amplitude=0.0)
    sim = Simulator(cfg, map2d if d == 2 else map3d)
    state = nematic.init_planewave(cfg, sim.grid)
    Nc, ND, u_hat, _ = sim.rhs_explicit(state)
    assert np.max(np.abs(u_hat)) <= 1e-14
    total_D = ND + sim.lin_D * state.D_hat
    total_c = Nc + sim.lin_c * state.c_hat
    assert np.max(np.abs(total_D)) <= 1e-13 * state.c_hat.flat[0].real
    assert np.max(np.abs(total_c)) <= 1e-13


def test_isotropic_fixed_point_100_steps(map2d):
    cfg = small_config(init_amplitude=0.0, n=8)
    sim = Simulator(cfg, map2d)
    state = nematic.init_planewave(cfg, sim.grid)
    c0, D0 = state.physical(sim.grid)
    for _ in range(100):
        state = sim.step(state)
    c, D = state.physical(sim.grid)
    assert np.max(np.abs(c - c0)) <= 1e-13
    assert np.max(np.abs(D - D0)) <= 1e-13


# -- tendency identities ----------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3])
def test_trace_of_tendency(d, map2d, map3d):
    cfg = SimConfig(d=d, n=16 if d == 2 else 8, init_amplitude=0.05, seed=3, zeta=1.3)
    sim = Simulator(cfg, map2d if d == 2 else map3d)
    state = nematic.init_planewave(cfg, sim.grid)
    # advance a little so the state carries flow and harmonics
    for _ in range(3):
        state = sim.step(state)
    Nc, ND, _, _ = sim.rhs_explicit(state)
    total_D = sim.grid.inverse(ND + sim.lin_D * state.D_hat)
    total_c = sim.grid.inverse(Nc + sim.lin_c * state.c_hat)
    trace = sum(total_D[a] for a in sim.diag_comp)
    assert np.max(np.abs(trace - total_c)) <= 1e-12


def linear_decay_run(dt, steps, n=16):
    """alpha = beta = zeta = 0 keeps u = 0, so each deviatoric mode decays at dT k^2 + 2 d dR."""
    cfg = SimConfig(d=2, n=n, L=15.0, dt=dt, alpha=0.0, beta=0.0, zeta=0.0, dT=0.1, dR=0.1,
                    init_amplitude=0.05, init_wavevectors="1 0; 0 2", seed=4)
    sim = Simulator(cfg)
    state = nematic.init_planewave(cfg, sim.grid)
    D0 = state.D_hat.copy()
    for _ in range(steps):
        state = sim.step(state)
    return sim, state, D0


def analytic_decay(sim, D0, t):
    rate = sim.config.dT * sim.grid.k2 + 2 * sim.grid.d * sim.config.dR
    out = D0 * np.exp(-rate * t)
    # the mean mode of the diagonal holds c/d and is stationary
    for a in sim.diag_comp:
        out[a][(0,) * sim.grid.d] = D0[a][(0,) * sim.grid.d]
    return out


def test_linear_decay_matches_analytic():
    sim, state, D0 = linear_decay_run(1e-3, 100)
    err = np.max(np.abs(sim.grid.inverse(state.D_hat - analytic_decay(sim, D0, state.t))))
    assert err <= 1e-8


def decay_error(dt, t_end=1.0):
    sim, state, D0 = linear_decay_run(dt, int(round(t_end / dt)))
    return np.max(np.abs(sim.grid.inverse(state.D_hat - analytic_decay(sim, D0, state.t))))


def test_sbdf2_second_order():
    errs = [decay_error(dt) for dt in (0.04, 0.02, 0.01)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    order = np.log2(ratios[-1])
    assert order == pytest.approx(2.0, abs=0.1)


# -- dealiasing ---------------------------------------------------------------------


@pytest.mark.parametrize("d,n", [(2, 24), (3, 12)])
def test_dealias_counts(d, n):
    g = SpectralGrid(d, n, 1.0)
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(g.shape)
    kept = g.inverse(g.dealias(g.forward(noise)))
    full = np.fft.fftn(kept)
    assert np.count_nonzero(np.abs(full) > 1e-9) == (2 * (n // 3) + 1) ** d


def test_dealias_band_limited_unchanged():
    g = SpectralGrid(2, 24, 1.0)
    rng = np.random.default_rng(1)
    spec = g.dealias(g.forward(rng.standard_normal(g.shape)))
    np.testing.assert_array_equal(g.dealias(spec), spec)


def test_dealias_removes_alias():
    n = 30
    g = SpectralGrid(1 + 1, n, 2 * np.pi)
    m = 9  # 0.6 of the Nyquist index 15
    f = np.cos(m * g.x[0])
    raw = g.forward(f * f)
    fh = g.dealias(g.forward(f))
    clean = g.dealias(g.forward(g.inverse(fh) ** 2))
    alias = n - 2 * m  # 2m = 18 folds back to 12
    assert abs(raw[alias, 0]) > 0.1 * n * n
    assert abs(clean[alias, 0]) <= 1e-12 * n * n
    assert clean[0, 0] == pytest.approx(0.5 * n * n)


# -- initial condition ---------------------------------------------------------------


def test_init_zero_amplitude():
    cfg = SimConfig(d=3, n=8, init_amplitude=0.0)
    g = SpectralGrid(3, 8, cfg.L)
    c, D = nematic.init_planewave(cfg, g).physical(g)
    np.testing.assert_allclose(c, 1.0, atol=1e-15)
    np.testing.assert_allclose(D, np.broadcast_to(np.eye(3) / 3, D.shape), atol=1e-15)


def test_init_single_mode():
    cfg = SimConfig(d=3, n=8, init_amplitude=1e-2, init_wavevectors="1 0 0")
    g = SpectralGrid(3, 8, cfg.L)
    c, D = nematic.init_planewave(cfg, g).physical(g)
    np.testing.assert_allclose(np.trace(D, axis1=-2, axis2=-1), 1.0, atol=1e-15)
    assert np.linalg.eigvalsh(D).min() > 0


def test_init_reproducible():
    cfg = SimConfig(d=3, n=8, init_amplitude=1e-2, seed=42)
    g = SpectralGrid(3, 8, cfg.L)
    a = nematic.init_planewave(cfg, g)
    b = nematic.init_planewave(cfg, g)
    np.testing.assert_array_equal(a.D_hat, b.D_hat)


def test_init_infeasible_amplitude():
    cfg = SimConfig(d=2, n=8, init_amplitude=5.0)
    with pytest.raises(ValueError, match="infeasible"):
        nematic.init_planewave(cfg)


def test_init_bad_wavevectors():
    cfg = SimConfig(d=3, n=8, init_wavevectors="1 0")
    with pytest.raises(ValueError):
        nematic.init_planewave(cfg)


# -- stepping invariants --------------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3])
def test_run_invariants(d, map2d, map3d):
    cfg = small_config(d=d, n=16 if d == 2 else 8, t_end=1.0, init_amplitude=0.1 if d == 2 else 0.05)
    sim = Simulator(cfg, map2d if d == 2 else map3d)
    state = nematic.init_planewave(cfg, sim.grid)
    worst_div = worst_trace = 0.0
    for _ in range(20):
        state = sim.step(state)
        diag = sim.diagnostics(state)
        scale = max(np.max(np.abs(state.u_hat)), 1e-300)
        worst_div = max(worst_div, diag["div_u"] / scale)
        worst_trace = max(worst_trace, diag["trace_drift"])
        assert diag["min_eig"] >= -1e-8
    assert worst_div <= 1e-12
    assert worst_trace <= 1e-10
    # real transforms leave no imaginary residue by construction; the complex
    # round trip must agree with them
    D = np.fft.ifftn(np.fft.fftn(sim.grid.inverse(state.D_hat), axes=sim.grid.axes), axes=sim.grid.axes)
    assert np.max(np.abs(D.imag)) <= 1e-13


def test_run_bit_reproducible(map2d):
    cfg = small_config(t_end=0.25)
    _, a = nematic.run(cfg, map2d)
    _, b = nematic.run(cfg, map2d)
    np.testing.assert_array_equal(a.D_hat, b.D_hat)
    np.testing.assert_array_equal(a.c_hat, b.c_hat)


def test_infeasible_state_aborts(map2d, tmp_path):
    cfg = small_config(n=8)
    sim = Simulator(cfg, map2d)
    c = np.ones(sim.grid.shape)
    D = np.broadcast_to(np.diag([1.1, -0.1]), sim.grid.shape + (2, 2)).copy()
    state = sim.state_from_fields(c, D)
    with pytest.raises(nematic.NumericalError):
        sim.step(state)


def test_velocity_gmres_matches_fixed_point(map2d):
    cfg = small_config(beta=0.8, init_amplitude=0.2)
    sim = Simulator(cfg, map2d)
    state = nematic.init_planewave(cfg, sim.grid)
    c, D = state.physical(sim.grid)
    fr, s = sim.closure_state(c, D)
    u, SD, SE = sim.velocity(c, D, fr, s)
    # u must solve Stokes with the stress evaluated at its own strain rate
    sigma = nematic.compute_stress(D, c, SE + 2 * cfg.zeta * SD, cfg.zeta, cfg.alpha, cfg.beta)
    u2 = nematic.stokes_solve(sim.grid.dealias(sim.grid.forward(nematic.full_to_sym(sigma))), sim.grid)
    assert np.max(np.abs(u - u2)) <= 1e-10 * np.max(np.abs(u))


# -- configuration and snapshots ----------------------------------------------------------


def test_config_round_trip():
    cfg = SimConfig(d=2, n=32, zeta=8.0, init_wavevectors="1 0; 0 1", map_file="x.txt")
    assert SimConfig.from_text(cfg.to_text()) == cfg


def test_config_errors():
    with pytest.raises(ValueError, match="unknown key"):
        SimConfig.from_text("nonsense = 3\n")
    with pytest.raises(ValueError, match="bad value"):
        SimConfig.from_text("n = many\n")
    with pytest.raises(ValueError, match="expected"):
        SimConfig.from_text("just words\n")
    with pytest.raises(ValueError):
        SimConfig.from_text("d = 4\n")
    cfg = SimConfig.from_text("# comment\nd = 2  # trailing\n\nzeta = 2.5\n")
    assert (cfg.d, cfg.zeta) == (2, 2.5)


def test_snapshot_round_trip(tmp_path, map2d):
    cfg = small_config(t_end=0.1)
    sim, state = nematic.run(cfg, map2d)
    path = tmp_path / "s.anf"
    nematic.write_snapshot(path, sim, state)
    snap = nematic.read_snapshot(path)
    c, D = state.physical(sim.grid)
    np.testing.assert_array_equal(snap.c, c)
    np.testing.assert_array_equal(nematic.sym_to_full(snap.D, 2), D)
    assert (snap.d, snap.n, snap.L, snap.t, snap.dt) == (2, cfg.n, cfg.L, state.t, cfg.dt)


def test_snapshot_errors(tmp_path):
    path = tmp_path / "bad.anf"
    path.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError, match="magic"):
        nematic.read_snapshot(path)
    path.write_bytes(b"AN")
    with pytest.raises(ValueError, match="short"):
        nematic.read_snapshot(path)
    import struct

    path.write_bytes(struct.pack("<4sIIddd", b"ANF1", 2, 8, 1.0, 0.0, 0.1) + bytes(8))
    with pytest.raises(ValueError, match="size"):
        nematic.read_snapshot(path)


def test_run_writes_snapshots(tmp_path, map2d):
    cfg = small_config(t_end=0.2, output_every=0.1)
    nematic.run(cfg, map2d, snapshot_dir=str(tmp_path))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["final.anf", "snapshot_000002.anf", "snapshot_000004.anf"]
