import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratshear.spectral import (
    Grid,
    ModeClass,
    SingularSymbolError,
    SpectralField,
    dealias_mask,
    dealias_product,
    divergence_residual,
    forward_transform,
    fractional_multiplier,
    hermitian_defect,
    hermitize,
    inverse_transform,
    l2_norm,
    leray_project,
    linf_norm,
    mode_mask,
    moving_derivative,
    physical_points,
    project_modes,
    remove_xz_mean,
    sobolev_norm,
    symbol_array,
    w_s1_norm,
)
from stratshear.solver import convolution_oracle


def random_hermitian(grid, rng, scale=1.0):
    f = rng.standard_normal(grid.shape) * scale
    return forward_transform(grid, f)


def test_grid_wavenumbers():
    grid = Grid(8, 16, 8, Ly=4.0 * np.pi)
    assert grid.kx[0] == 0.0
    assert grid.kx[1] == 1.0
    assert grid.kx[4] == -4.0
    # y wavenumbers are scaled by 2*pi/Ly = 1/2
    np.testing.assert_allclose(grid.eta[1], 0.5)
    np.testing.assert_allclose(grid.eta[8], -4.0)
    np.testing.assert_allclose(grid.volume, 2.0 * np.pi * 4.0 * np.pi * 2.0 * np.pi)


def test_grid_rejects_odd_sizes():
    with pytest.raises(ValueError):
        Grid(7, 8, 8)
    with pytest.raises(ValueError):
        Grid(8, 8, 10, dealias_fraction=1.5)


def test_physical_points_centered_in_y():
    grid = Grid(4, 8, 4)
    x, y, z = physical_points(grid)
    np.testing.assert_allclose(y[0, 0, 0], -grid.Ly / 2.0)
    np.testing.assert_allclose(x[1, 0, 0] - x[0, 0, 0], 2.0 * np.pi / 4)


def test_transform_round_trip_and_parseval():
    grid = Grid(8, 12, 6)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(grid.shape)
    fhat = forward_transform(grid, f)
    back = inverse_transform(grid, fhat)
    np.testing.assert_allclose(back, f, rtol=0.0, atol=1e-12)
    # Discrete Parseval with the amplitude normalization: sum |f|^2 dV equals
    # V * sum |fhat|^2.
    cell = grid.volume / f.size
    np.testing.assert_allclose(
        np.sum(f**2) * cell,
        grid.volume * np.sum(np.abs(fhat) ** 2),
        rtol=1e-12,
    )


def test_forward_transform_output_is_hermitian():
    grid = Grid(6, 6, 6)
    rng = np.random.default_rng(1)
    fhat = random_hermitian(grid, rng)
    assert hermitian_defect(grid, fhat) < 1e-14


def test_hermitize_projects_and_is_idempotent():
    grid = Grid(6, 6, 6)
    rng = np.random.default_rng(2)
    raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    sym = hermitize(grid, raw)
    assert hermitian_defect(grid, sym) < 1e-14
    np.testing.assert_allclose(hermitize(grid, sym), sym, rtol=0.0, atol=1e-15)
    # Hermitian input passes through untouched.
    fhat = random_hermitian(grid, rng)
    np.testing.assert_allclose(hermitize(grid, fhat), fhat, rtol=0.0, atol=1e-15)


def test_moving_derivative_single_mode():
    grid = Grid(8, 8, 8)
    x, y, z = physical_points(grid)
    k, m, l = 2.0, 1.0, 3.0  # m indexes the y mode; eta = m * 2pi/Ly = 0.5 m
    eta = m * 2.0 * np.pi / grid.Ly
    f = np.cos(k * x + eta * y + l * z)
    fhat = forward_transform(grid, f)
    t = 0.7
    dx = inverse_transform(grid, moving_derivative(grid, fhat, t, "x"))
    dyL = inverse_transform(grid, moving_derivative(grid, fhat, t, "yL"))
    dz = inverse_transform(grid, moving_derivative(grid, fhat, t, "z"))
    s = -np.sin(k * x + eta * y + l * z)
    np.testing.assert_allclose(dx, k * s, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(dyL, (eta - t * k) * s, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(dz, l * s, rtol=0.0, atol=1e-12)


def test_moving_derivative_rejects_bad_axis():
    grid = Grid(4, 4, 4)
    fhat = np.zeros(grid.shape, dtype=complex)
    with pytest.raises(ValueError):
        moving_derivative(grid, fhat, 0.0, "y")


def test_symbol_array_matches_hand_values():
    grid = Grid(4, 8, 4)
    t = 1.3
    a2 = symbol_array(grid, "grad_L", t)
    q2 = symbol_array(grid, "grad_xz", t)
    k = grid.kx[:, None, None]
    eta = grid.eta[None, :, None]
    l = grid.kz[None, None, :]
    np.testing.assert_allclose(a2, k**2 + (eta - t * k) ** 2 + l**2, rtol=1e-14)
    np.testing.assert_allclose(q2, np.broadcast_to(k**2 + l**2, grid.shape), rtol=1e-14)


def test_mode_masks_partition_the_grid():
    grid = Grid(6, 8, 6)
    masks = [mode_mask(grid, c) for c in ModeClass]
    total = np.zeros(grid.shape, dtype=int)
    for m in masks:
        total += m.astype(int)
    assert np.all(total == 1)


def test_project_modes_orthogonal_decomposition():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(3)
    fhat = random_hermitian(grid, rng)
    parts = [project_modes(grid, fhat, c) for c in ModeClass]
    np.testing.assert_allclose(sum(parts), fhat, rtol=0.0, atol=1e-15)
    # Parseval additivity across the sectors.
    np.testing.assert_allclose(
        sum(np.sum(np.abs(p) ** 2) for p in parts),
        np.sum(np.abs(fhat) ** 2),
        rtol=1e-12,
    )


def test_remove_xz_mean():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(4)
    fhat = random_hermitian(grid, rng)
    cleaned = remove_xz_mean(grid, fhat)
    assert np.all(cleaned[0, :, 0] == 0.0)
    mask = mode_mask(grid, ModeClass.NONZERO)
    np.testing.assert_allclose(cleaned[mask], fhat[mask], rtol=0.0, atol=0.0)


def test_fractional_multiplier_positive_powers_everywhere():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(5)
    fhat = random_hermitian(grid, rng)
    out = fractional_multiplier(grid, fhat, "grad_L", 0.5, t=0.4)
    a2 = symbol_array(grid, "grad_L", 0.4)
    np.testing.assert_allclose(out, fhat * a2**0.25, rtol=1e-12)


def test_fractional_multiplier_negative_power_needs_clean_kernel():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(6)
    fhat = random_hermitian(grid, rng)
    with pytest.raises(SingularSymbolError) as err:
        fractional_multiplier(grid, fhat, "grad_xz", -0.5)
    assert "x-z mean" in str(err.value)
    cleaned = remove_xz_mean(grid, fhat)
    out = fractional_multiplier(grid, cleaned, "grad_xz", -0.5)
    assert np.all(np.isfinite(out))
    assert np.all(out[0, :, 0] == 0.0)


def test_fractional_multiplier_composes_additively():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(7)
    fhat = remove_xz_mean(grid, random_hermitian(grid, rng))
    one = fractional_multiplier(grid, fhat, "grad_xz", 0.75)
    two = fractional_multiplier(grid, one, "grad_xz", -0.25)
    direct = fractional_multiplier(grid, fhat, "grad_xz", 0.5)
    np.testing.assert_allclose(two, direct, rtol=1e-12, atol=1e-15)


def test_fractional_multiplier_commutes_with_moving_derivative():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(8)
    fhat = remove_xz_mean(grid, random_hermitian(grid, rng))
    t = 0.9
    a = moving_derivative(grid, fractional_multiplier(grid, fhat, "grad_xz", 0.5), t, "yL")
    b = fractional_multiplier(grid, moving_derivative(grid, fhat, t, "yL"), "grad_xz", 0.5)
    np.testing.assert_allclose(a, b, rtol=0.0, atol=1e-13)


def test_dealias_mask_cutoff_blocks_aliasing():
    for n in (6, 8, 12, 16, 32):
        grid = Grid(n, n, n)
        mask = dealias_mask(grid)
        kept = np.where(mask[:, 0, 0])[0]
        cut = int(np.max(np.abs(grid.kx[kept])))
        # Quadratic interactions of kept modes stay below the first alias.
        assert 2 * cut - n < -cut


def test_dealias_product_matches_convolution_oracle():
    grid = Grid(8, 8, 8)
    rng = np.random.default_rng(9)
    for _ in range(4):
        fhat = random_hermitian(grid, rng)
        ghat = random_hermitian(grid, rng)
        fast = dealias_product(grid, fhat, ghat)
        slow = convolution_oracle(grid, fhat, ghat)
        np.testing.assert_allclose(fast, slow, rtol=0.0, atol=1e-12)


def test_dealias_product_output_support():
    grid = Grid(8, 8, 8)
    rng = np.random.default_rng(10)
    out = dealias_product(grid, random_hermitian(grid, rng), random_hermitian(grid, rng))
    assert np.all(out[~dealias_mask(grid)] == 0.0)
    assert hermitian_defect(grid, out) < 1e-13


def test_leray_projection_properties():
    grid = Grid(6, 8, 6)
    rng = np.random.default_rng(11)
    t = 1.1
    U = tuple(random_hermitian(grid, rng) for _ in range(3))
    P = leray_project(grid, U, t)
    assert divergence_residual(grid, P, t) < 1e-12
    # Idempotent.
    PP = leray_project(grid, P, t)
    for a, b in zip(PP, P):
        np.testing.assert_allclose(a, b, rtol=0.0, atol=1e-14)
    # Orthogonality of the removed gradient part.
    inner = sum(np.sum(np.conj(u - p) * p) for u, p in zip(U, P))
    assert abs(inner) < 1e-12
    # Constant mode is annihilated.
    for p in P:
        assert p[0, 0, 0] == 0.0


def test_norms_consistency():
    grid = Grid(8, 8, 8)
    rng = np.random.default_rng(12)
    f = rng.standard_normal(grid.shape)
    fhat = forward_transform(grid, f)
    cell = grid.volume / f.size
    np.testing.assert_allclose(l2_norm(grid, fhat), np.sqrt(np.sum(f**2) * cell), rtol=1e-12)
    np.testing.assert_allclose(sobolev_norm(grid, fhat, 0), l2_norm(grid, fhat), rtol=1e-12)
    # Higher smoothness weights never shrink the norm (brackets are >= 1).
    assert sobolev_norm(grid, fhat, 2) >= l2_norm(grid, fhat)
    np.testing.assert_allclose(linf_norm(grid, fhat), np.max(np.abs(f)), rtol=1e-12)
    # W^{0,1} is the plain L1 norm of the samples.
    np.testing.assert_allclose(w_s1_norm(grid, fhat, 0), np.sum(np.abs(f)) * cell, rtol=1e-12)
    assert w_s1_norm(grid, fhat, 0) <= w_s1_norm(grid, fhat, 2)


def test_spectral_field_validation():
    grid = Grid(4, 4, 4)
    bad = np.zeros(grid.shape, dtype=complex)
    bad[1, 0, 0] = 1.0  # no conjugate partner
    with pytest.raises(ValueError):
        SpectralField(grid, bad)
    field = SpectralField(grid, hermitize(grid, bad))
    assert np.isrealobj(field.physical())
    nan = np.full(grid.shape, np.nan, dtype=complex)
    with pytest.raises(ValueError):
        SpectralField(grid, nan)


@settings(deadline=None, max_examples=25)
@given(
    k=st.integers(min_value=-2, max_value=2),
    m=st.integers(min_value=-3, max_value=3),
    l=st.integers(min_value=-2, max_value=2),
    t=st.floats(min_value=0.0, max_value=5.0),
)
def test_derivative_symbol_matches_squared_symbol(k, m, l, t):
    grid = Grid(6, 8, 6)
    fhat = np.zeros(grid.shape, dtype=complex)
    fhat[k % 6, m % 8, l % 6] = 1.0
    fhat = hermitize(grid, fhat)
    pieces = [moving_derivative(grid, fhat, t, ax) for ax in ("x", "yL", "z")]
    lhs = sum(np.sum(np.abs(p) ** 2) for p in pieces)
    rhs = np.sum(symbol_array(grid, "grad_L", t) * np.abs(fhat) ** 2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-14)
