"""Independent reference routes used by the tests.

The primitive-variable tendency below reproduces the full dynamics in the
(U, Theta) representation: viscosity, a Leray projection of the forcing and
transport, the frame-stretch compensation W, and the buoyancy exchange.  It
never touches the symmetric variables or the derived per-block couplings, so
finite differences along its trajectories provide an external check of the
solver's assembled right-hand side, including every sign and fractional
prefactor.
"""

from __future__ import annotations

import numpy as np

from stratshear.spectral import (
    Grid,
    dealias_product,
    leray_project,
    moving_derivative,
    symbol_array,
)


def transport(grid: Grid, t: float, U: tuple, Fhat: np.ndarray) -> np.ndarray:
    """-(U . grad_L) F via three dealiased products."""
    out = np.zeros(grid.shape, dtype=complex)
    for comp, axis in zip(U, ("x", "yL", "z")):
        out -= dealias_product(grid, comp, moving_derivative(grid, Fhat, t, axis))
    return out


def primitive_rhs(
    grid: Grid,
    t: float,
    U: tuple[np.ndarray, np.ndarray, np.ndarray],
    Th: np.ndarray,
    nu: float,
    beta: float,
    shear: bool = True,
    buoyancy: bool = True,
    nonlinear: bool = True,
) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """Moving-frame Boussinesq tendency in primitive variables."""
    a2 = symbol_array(grid, "grad_L", t)
    dU = [-nu * a2 * U[j] for j in range(3)]
    dTh = -nu * a2 * Th

    force = [np.zeros(grid.shape, dtype=complex) for _ in range(3)]
    if shear:
        force[0] -= U[1]
    if buoyancy:
        force[1] -= beta * Th
        dTh += beta * U[1]
    if nonlinear:
        for j in range(3):
            force[j] += transport(grid, t, U, U[j])
        dTh += transport(grid, t, U, Th)
    proj = leray_project(grid, tuple(force), t)
    for j in range(3):
        dU[j] += proj[j]

    if shear:
        # The divergence constraint drifts with the frame; the compensation
        # has components K_j k U2 / a^2 with K = (k, eta - tk, l).
        k3 = grid.kx[:, None, None]
        eta3 = grid.eta[None, :, None]
        l3 = grid.kz[None, None, :]
        K = (k3, eta3 - t * k3, l3)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_a2 = np.where(a2 == 0.0, 0.0, 1.0 / np.where(a2 == 0.0, 1.0, a2))
        for j in range(3):
            dU[j] += K[j] * k3 * inv_a2 * U[1]
    return (dU[0], dU[1], dU[2]), dTh


def primitive_rk4(
    grid: Grid,
    t: float,
    U: tuple,
    Th: np.ndarray,
    dt: float,
    n_steps: int,
    nu: float,
    beta: float,
    **switches,
) -> tuple[tuple, np.ndarray, float]:
    """Plain RK4 on the primitive tendency (reference quality, small steps)."""

    def rhs(tt, y):
        (u1, u2, u3), th = primitive_rhs(grid, tt, (y[0], y[1], y[2]), y[3],
                                         nu, beta, **switches)
        return np.stack([u1, u2, u3, th])

    y = np.stack([U[0], U[1], U[2], Th]).astype(complex)
    h = dt
    for i in range(n_steps):
        tt = t + i * h
        k1 = rhs(tt, y)
        k2 = rhs(tt + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(tt + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(tt + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (y[0], y[1], y[2]), y[3], t + n_steps * h
