import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratshear.multipliers import (
    C_HALF,
    MultiplierParams,
    decay_density,
    kappa_floor_m3,
    kappa_floor_m3_crossing,
    lambda_beta,
    log_m1,
    log_m2,
    log_m3,
    log_weight,
    log_weight_quad,
    main_weight,
    orr_margin,
    scan_multipliers,
    weight_table,
    weights,
)
from stratshear.spectral import Grid


def sample_modes(rng, n):
    k = rng.choice([-8, -4, -2, -1, 1, 2, 3, 5, 8], size=n)
    eta = rng.uniform(-20.0, 20.0, size=n)
    l = rng.integers(0, 9, size=n)
    t = rng.uniform(0.0, 50.0, size=n)
    nu = 10.0 ** rng.uniform(-4.0, -1.0, size=n)
    beta = rng.uniform(0.55, 5.0, size=n)
    return k, eta, l, t, nu, beta


def test_lambda_beta_values():
    np.testing.assert_allclose(lambda_beta(1.0), 1.0 / 3.0, rtol=1e-15)
    np.testing.assert_allclose(lambda_beta(1.5), 0.5, rtol=1e-15)
    with pytest.raises(ValueError):
        lambda_beta(0.5)
    vals = np.array([lambda_beta(b) for b in np.linspace(0.51, 50.0, 200)])
    assert np.all(np.diff(vals) > 0.0)
    assert np.all(vals < 1.0)
    assert vals[0] < 0.01  # limit 0 as beta -> 1/2 from above


def test_params_validation():
    MultiplierParams(nu=1e-3, beta=1.0, m=3)
    with pytest.raises(ValueError):
        MultiplierParams(nu=0.0, beta=1.0, m=3)
    with pytest.raises(ValueError):
        MultiplierParams(nu=1e-3, beta=0.5, m=3)
    with pytest.raises(ValueError):
        MultiplierParams(nu=1e-3, beta=1.0, m=2)


def test_frozen_constants():
    # exp of the odd antiderivative's asymptote: (sqrt(pi)/2) G(1/4)/G(3/4).
    np.testing.assert_allclose(C_HALF, 2.62205755429212, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(kappa_floor_m3(), 0.07265322098544627, rtol=0.0, atol=1e-14)
    np.testing.assert_allclose(kappa_floor_m3_crossing(), kappa_floor_m3() ** 2, rtol=1e-14)


def test_closed_forms_match_quadrature():
    rng = np.random.default_rng(42)
    k, eta, l, t, nu, beta = sample_modes(rng, 100)
    for i in range(100):
        args = (float(t[i]), int(k[i]), float(eta[i]), int(l[i]))
        ref1 = log_weight_quad(1, *args, nu=float(nu[i]), beta=float(beta[i]))
        ref2 = log_weight_quad(2, *args, nu=float(nu[i]), beta=float(beta[i]))
        ref3 = log_weight_quad(3, *args, nu=float(nu[i]), beta=float(beta[i]))
        np.testing.assert_allclose(log_m1(*args[:1], *args[1:], nu=float(nu[i])), ref1,
                                   rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(log_m2(*args, beta=float(beta[i])), ref2,
                                   rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(log_m3(*args), ref3, rtol=1e-8, atol=1e-10)


def test_density_is_minus_log_derivative():
    rng = np.random.default_rng(7)
    k, eta, l, t, nu, beta = sample_modes(rng, 30)
    eps = 1e-5
    for i in range(30):
        a = (int(k[i]), float(eta[i]), int(l[i]))
        for j, f in ((1, lambda tt: log_m1(tt, *a, nu=float(nu[i]))),
                     (2, lambda tt: log_m2(tt, *a, beta=float(beta[i]))),
                     (3, lambda tt: log_m3(tt, *a))):
            fd = (f(t[i] + eps) - f(t[i] - eps)) / (2.0 * eps)
            dens = decay_density(j, float(t[i]), *a, nu=float(nu[i]), beta=float(beta[i]))
            np.testing.assert_allclose(-fd, dens, rtol=1e-6, atol=1e-9)


def test_weights_bounded_and_monotone():
    rng = np.random.default_rng(3)
    k, eta, l, _, nu, beta = sample_modes(rng, 20)
    ts = np.linspace(0.0, 80.0, 400)
    for i in range(20):
        m1, m2, m3 = weights(ts, int(k[i]), float(eta[i]), int(l[i]),
                             float(nu[i]), float(beta[i]))
        for m in (m1, m2, m3):
            assert np.all(m > 0.0)
            assert np.all(m <= 1.0 + 1e-12)
            assert np.all(np.diff(m) <= 1e-12)


def test_m3_floor_on_sign_preserving_windows():
    # Window never crosses the critical time: eta <= 0 with k > 0 keeps
    # eta - t*k negative for t >= 0.
    rng = np.random.default_rng(11)
    k = rng.integers(1, 9, size=300)
    eta = -rng.uniform(0.0, 30.0, size=300)
    l = rng.integers(0, 9, size=300)
    t = rng.uniform(0.0, 200.0, size=300)
    m3 = np.exp(log_m3(t, k, eta, l))
    assert np.all(m3 >= kappa_floor_m3() - 1e-9)


@settings(deadline=None, max_examples=300)
@given(
    k=st.integers(min_value=-8, max_value=8).filter(lambda v: v != 0),
    eta=st.floats(min_value=-50.0, max_value=50.0),
    l=st.integers(min_value=0, max_value=8),
    t=st.floats(min_value=0.0, max_value=500.0),
)
def test_m3_universal_floor(k, eta, l, t):
    m3 = float(np.exp(log_m3(t, k, eta, l)))
    assert m3 >= kappa_floor_m3_crossing() - 1e-9


def test_orr_margin_nonnegative_with_known_minimum():
    u = np.linspace(-200.0, 200.0, 400001)
    for nu in (1e-1, 1e-2, 1e-3, 1e-4):
        margin = orr_margin(1.0, u, nu)
        assert np.all(margin >= 0.0)
        np.testing.assert_allclose(margin.min(), 0.8592022139417 * nu ** (1.0 / 6.0),
                                   rtol=1e-6)
        # At the critical time the bound is saturated up to the x = 0 value.
        np.testing.assert_allclose(orr_margin(3.0, 0.0, nu), nu ** (1.0 / 6.0), rtol=1e-12)


def test_main_weight_assembly():
    params = MultiplierParams(nu=1e-2, beta=1.2, m=3)
    t, k, eta, l = 4.0, 2, -1.5, 3
    m1, m2, m3 = weights(t, k, eta, l, params.nu, params.beta)
    expected = (np.exp(lambda_beta(1.2) * 1e-2 ** (1.0 / 3.0) * t)
                * (1.0 + k**2 + eta**2 + l**2) ** 3 * m1 * m2 * m3)
    np.testing.assert_allclose(main_weight(params, t, k, eta, l), expected, rtol=1e-13)
    # At t = 0 the decaying factors are all 1.
    np.testing.assert_allclose(main_weight(params, 0.0, k, eta, l),
                               (1.0 + k**2 + eta**2 + l**2) ** 3, rtol=1e-13)


def test_weight_table_matches_pointwise():
    grid = Grid(8, 8, 8)
    params = MultiplierParams(nu=5e-3, beta=1.0, m=3)
    table = weight_table(grid, params, t=2.5)
    rng = np.random.default_rng(5)
    for _ in range(20):
        i = rng.integers(0, 8)
        j = rng.integers(0, 8)
        p = rng.integers(0, 8)
        k, eta, l = grid.kx[i], grid.eta[j], grid.kz[p]
        np.testing.assert_allclose(
            table.A[i, j, p], main_weight(params, 2.5, k, eta, l), rtol=1e-12)
        np.testing.assert_allclose(
            table.M[i, j, p],
            np.exp(log_weight(1, 2.5, int(k), float(eta), int(l), nu=params.nu)
                   + log_weight(2, 2.5, int(k), float(eta), int(l), beta=params.beta)
                   + log_weight(3, 2.5, int(k), float(eta), int(l))),
            rtol=1e-8)


def test_zero_streamwise_modes_carry_unit_weight():
    ts = np.linspace(0.0, 10.0, 7)
    assert np.all(log_m1(ts, 0, 2.0, 3, 1e-2) == 0.0)
    assert np.all(log_m2(ts, 0, 2.0, 3, 1.0) == 0.0)
    assert np.all(log_m3(ts, 0, 2.0, 3) == 0.0)


def test_scan_multipliers_small():
    report = scan_multipliers(n_samples=3000, seed=1, beta=1.0)
    cols = report["columns"]
    assert len(cols["M3"]) == 3000
    summary = report["summary"]
    assert summary["n_samples"] == 3000
    assert 0.0 < summary["min_M1"] and summary["max_M1"] <= 1.0 + 1e-12
    assert 0.0 < summary["min_M2"] and summary["max_M2"] <= 1.0 + 1e-12
    assert summary["min_M3"] >= summary["m3_floor"] - 1e-9
    assert summary["min_orr_margin"] >= 0.0
