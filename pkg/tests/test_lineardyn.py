import numpy as np
import pytest

from stratshear.lineardyn import (
    ModeSet,
    TermSwitches,
    energy_functional,
    energy_rate,
    fit_window,
    liftup_diagnostic,
    linear_rhs,
    propagate_linear,
    propagate_zero_modes,
    rate_fit,
    recovery_symbols,
    zero_mode_matrix,
    zero_mode_rhs,
    zero_mode_spectrum,
)
from stratshear.multipliers import MultiplierParams
from stratshear.spectral import Grid, ModeClass, mode_mask


def rk4(rhs, t0, y0, dt, n):
    y = y0
    for i in range(n):
        t = t0 + i * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def random_modeset(rng, n):
    return ModeSet(
        k=rng.choice([-5.0, -2.0, -1.0, 1.0, 2.0, 3.0, 8.0], size=n),
        eta=rng.uniform(-15.0, 15.0, size=n),
        l=rng.integers(0, 7, size=n).astype(float),
    )


def test_recovery_symbols_rejects_xz_mean():
    modes = ModeSet(k=np.array([0.0]), eta=np.array([1.0]), l=np.array([0.0]))
    with pytest.raises(ValueError):
        recovery_symbols(modes, 0.0)


def test_linear_rhs_rejects_zero_streamwise_modes():
    modes = ModeSet(k=np.array([0.0]), eta=np.array([1.0]), l=np.array([2.0]))
    with pytest.raises(ValueError):
        linear_rhs(0.0, np.zeros((4, 1), dtype=complex), modes, 1e-2, 1.0)


def test_linear_rhs_matches_fd_jacobian_of_flow():
    rng = np.random.default_rng(0)
    modes = random_modeset(rng, 40)
    nu, beta = 3e-2, 1.3
    eps = 3e-6
    rhs = lambda t, y: linear_rhs(t, y, modes, nu, beta)
    for t in (0.0, 0.8, 4.0):
        for comp in range(4):
            e = np.zeros((4, len(modes)), dtype=complex)
            e[comp] = 1.0
            plus = rk4(rhs, t, e.copy(), eps, 1)
            minus = rk4(rhs, t, e.copy(), -eps, 1)
            fd = (plus - minus) / (2.0 * eps)
            exact = linear_rhs(t, e, modes, nu, beta)
            scale = float(np.max(np.abs(exact)))
            np.testing.assert_allclose(fd, exact, rtol=0.0, atol=1e-8 * scale)


def test_inviscid_shear_tilting_closed_form():
    # With viscosity and buoyancy off, the sheared wave has the exact
    # amplitude laws G ~ (a0^2/a^2)^(1/4), Gamma ~ (a^2/a0^2)^(1/4), and the
    # recovered wall-normal velocity decays like a0^2/a^2 through the tilt.
    modes = ModeSet(k=np.array([2.0]), eta=np.array([3.0]), l=np.array([1.0]))
    sw = TermSwitches(shear=True, buoyancy=False)
    rhs = lambda t, y: linear_rhs(t, y, modes, 0.0, 1.0, switches=sw)
    y0 = np.array([[0.1], [0.2], [1.0], [0.8]], dtype=complex)

    def a2(t):
        return float(modes.k[0] ** 2 + (modes.eta[0] - t * modes.k[0]) ** 2 + modes.l[0] ** 2)

    for T in (1.0, 1.5, 3.0, 6.0):
        y = rk4(rhs, 0.0, y0.copy(), 0.001, int(round(T / 0.001)))
        np.testing.assert_allclose(y[2], y0[2] * (a2(0.0) / a2(T)) ** 0.25, rtol=1e-10)
        np.testing.assert_allclose(y[3], y0[3] * (a2(T) / a2(0.0)) ** 0.25, rtol=1e-10)
        c_u2, c_th = recovery_symbols(modes, T)
        c0, c_th0 = recovery_symbols(modes, 0.0)
        np.testing.assert_allclose(c_u2 * y[2], (c0 * y0[2]) * (a2(0.0) / a2(T)), rtol=1e-10)
        # The temperature is passively advected: constant when nu = beta = 0.
        np.testing.assert_allclose(c_th * y[3], c_th0 * y0[3], rtol=1e-10)


def test_buoyancy_rotation_preserves_norm():
    rng = np.random.default_rng(1)
    modes = random_modeset(rng, 12)
    sw = TermSwitches(shear=False, buoyancy=True)
    rhs = lambda t, y: linear_rhs(t, y, modes, 0.0, 1.0, switches=sw)
    y0 = np.zeros((4, len(modes)), dtype=complex)
    y0[2] = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    y0[3] = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    n0 = np.abs(y0[2]) ** 2 + np.abs(y0[3]) ** 2
    y = rk4(rhs, 0.0, y0.copy(), 0.002, 1000)
    n1 = np.abs(y[2]) ** 2 + np.abs(y[3]) ** 2
    np.testing.assert_allclose(n1, n0, rtol=1e-12)


def test_energy_functional_coercivity_band():
    rng = np.random.default_rng(2)
    for beta in (0.6, 1.0, 4.0):
        params = MultiplierParams(nu=1e-2, beta=beta, m=3)
        for _ in range(50):
            modes = random_modeset(rng, 8)
            G = rng.standard_normal(8) + 1j * rng.standard_normal(8)
            Gm = rng.standard_normal(8) + 1j * rng.standard_normal(8)
            rep = energy_functional(G, Gm, rng.uniform(0.0, 20.0), modes, params)
            assert rep.within_band
            assert rep.coercivity_lower > 0.0


def test_energy_rate_matches_finite_difference():
    rng = np.random.default_rng(3)
    modes = random_modeset(rng, 10)
    params = MultiplierParams(nu=2e-2, beta=1.1, m=3)
    rhs = lambda t, y: linear_rhs(t, y, modes, params.nu, params.beta)
    y = np.zeros((4, len(modes)), dtype=complex)
    y[2] = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    y[3] = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    eps = 1e-5
    for t in (0.3, 2.0, 9.0):
        plus = rk4(rhs, t, y.copy(), eps, 1)
        minus = rk4(rhs, t, y.copy(), -eps, 1)
        e_plus = energy_functional(plus[2], plus[3], t + eps, modes, params).E
        e_minus = energy_functional(minus[2], minus[3], t - eps, modes, params).E
        fd = (e_plus - e_minus) / (2.0 * eps)
        exact = energy_rate(y[2], y[3], t, modes, params)
        np.testing.assert_allclose(fd, exact, rtol=1e-6)


def test_energy_rate_is_nonpositive():
    # The decaying weights are built so the weighted energy never grows
    # along the linear flow; spot-check on random modes, states and times.
    rng = np.random.default_rng(4)
    for _ in range(500):
        modes = random_modeset(rng, 1)
        params = MultiplierParams(nu=10 ** rng.uniform(-4.0, -1.0),
                                  beta=rng.uniform(0.6, 4.0), m=3)
        G = rng.standard_normal(1) + 1j * rng.standard_normal(1)
        Gm = rng.standard_normal(1) + 1j * rng.standard_normal(1)
        t = rng.uniform(0.0, 30.0)
        rate = energy_rate(G, Gm, t, modes, params)
        E = energy_functional(G, Gm, t, modes, params).E
        assert rate <= 1e-12 * abs(E)


def test_zero_mode_spectrum_matches_dense_eigensolve():
    rng = np.random.default_rng(5)
    for _ in range(100):
        eta = rng.uniform(-10.0, 10.0)
        l = int(rng.integers(1, 9))
        nu = 10 ** rng.uniform(-4.0, -1.0)
        beta = rng.uniform(0.6, 5.0)
        spec = zero_mode_spectrum(eta, l, nu, beta)
        dense = np.linalg.eigvals(zero_mode_matrix(eta, l, nu, beta))
        got = np.sort_complex(spec.eigenvalues)
        ref = np.sort_complex(dense)
        np.testing.assert_allclose(got, ref, rtol=0.0, atol=1e-10)


def test_zero_mode_matrix_requires_nonzero_l():
    with pytest.raises(ValueError):
        zero_mode_matrix(1.0, 0, 1e-2, 1.0)


def test_heat_combination_of_zero_modes():
    # U1_0 + Theta_0 / beta obeys pure diffusion: the lift-up source cG0 is
    # cancelled exactly by the buoyancy feed into Theta_0.
    eta = np.array([0.5])
    l = np.array([2.0])
    nu, beta = 1e-2, 1.4
    a2 = float(eta[0] ** 2 + l[0] ** 2)
    c_th = 1.0 / (np.abs(l[0]) ** 0.5 * a2**0.25)
    state0 = np.array([[0.7 - 0.2j], [0.1 + 0.4j], [0.3 + 0.1j]], dtype=complex)
    rhs = lambda t, y: zero_mode_rhs(t, y, eta, l, nu, beta)
    v0 = state0[2, 0] + c_th * state0[1, 0] / beta
    for T in (2.0, 10.0):
        y = rk4(rhs, 0.0, state0.copy(), 0.01, int(round(T / 0.01)))
        vT = y[2, 0] + c_th * y[1, 0] / beta
        np.testing.assert_allclose(vT, v0 * np.exp(-nu * a2 * T), rtol=1e-8)


def test_propagate_zero_modes_series():
    eta = np.array([0.0, 1.0])
    l = np.array([1.0, 2.0])
    state0 = np.zeros((3, 2), dtype=complex)
    state0[0] = 1.0
    times, series, final = propagate_zero_modes(eta, l, state0, t_end=2.0, dt=0.01,
                                                nu=1e-2, beta=1.0, checkpoint_every=0.1)
    assert times[0] == 0.0 and abs(times[-1] - 2.0) < 1e-12
    assert set(series) == {"G0", "Gamma0", "U1_0"}
    assert series["U1_0"][0] == 0.0
    assert series["U1_0"][-1] > 0.0
    assert final.shape == (3, 2)


def test_liftup_suppression():
    state0 = np.array([[1.0], [0.0], [0.0]], dtype=complex)
    report = liftup_diagnostic(np.array([0.0]), np.array([1.0]), state0,
                               nu=1e-2, beta=2.0)
    assert report["u1_unstratified_at_mark"] > 5.0
    assert report["max_u1_stratified"] < 1.0
    assert report["suppression_ratio"] < 0.2


def test_propagate_linear_series_and_horizon_warning():
    grid = Grid(4, 8, 4)
    modes = ModeSet.from_grid(grid, mode_mask(grid, ModeClass.NONZERO))
    params = MultiplierParams(nu=1e-2, beta=1.0, m=3)
    rng = np.random.default_rng(6)
    state0 = rng.standard_normal((4, len(modes))) + 1j * rng.standard_normal((4, len(modes)))
    with pytest.warns(UserWarning, match="horizon"):
        traj = propagate_linear(modes, state0, t_end=8.0, dt=0.05, params=params)
    assert traj.times[0] == 0.0
    for key in ("aG", "aGamma", "U2_t32", "Theta_t12", "E"):
        assert len(traj.series[key]) == len(traj.times)
    assert traj.final_state.shape == state0.shape
    # Weighted norms decay from their initial values for this viscous run.
    assert traj.series["aG"][-1] < traj.series["aG"][0]

    with pytest.raises(ValueError):
        propagate_linear(modes, state0, t_end=0.4, dt=0.2, params=params)
    with pytest.raises(ValueError):
        propagate_linear(modes, state0[:, :3], t_end=0.4, dt=0.05, params=params)


def test_rate_fit_recovers_synthetic_laws():
    t = np.linspace(1.0, 20.0, 60)
    rate, resid = rate_fit(t, 3.0 * np.exp(-0.7 * t), model="exponential")
    np.testing.assert_allclose(rate, -0.7, atol=1e-10)
    assert resid < 1e-10
    power, resid = rate_fit(t, 2.0 * t**-1.5, model="power")
    np.testing.assert_allclose(power, -1.5, atol=1e-10)
    assert resid < 1e-10
    with pytest.raises(ValueError):
        rate_fit(t[:5], np.exp(-t[:5]))
    with pytest.raises(ValueError):
        rate_fit(t, np.zeros_like(t))
    with pytest.raises(ValueError):
        rate_fit(t, np.exp(-t), model="cubic")


def test_fit_window_trims_head_and_tail():
    t = np.linspace(0.0, 10.0, 101)
    v = np.ones_like(t)
    tw, vw = fit_window(t, v, t_min=1.0, drop_tail=0.1)
    assert tw[0] >= 1.0
    assert tw[-1] <= t[90]
    assert len(tw) == len(vw)
