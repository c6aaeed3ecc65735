"""Oscillatory dynamics of the streamwise-averaged sector.

The streamwise-averaged (k = 0) wall-normal velocity and buoyancy combine into
the complex field Upsilon = U2_0 - i R Theta_0 (R is the zero-order operator
with symbol i |l| / |(eta, l)|), which evolves by the constant-coefficient
semigroup

    exp(t L),   L(eta, l) = -nu (eta^2 + l^2) - i beta |l| / sqrt(eta^2 + l^2),

on z-mean-free fields of (y, z).  The inverse transform in eta at fixed l is an
oscillatory integral with phase

    Phi(xi; r) = r xi - (1 + xi^2)^(-1/2),    xi = eta / l,

whose stationary points degenerate on the critical ray r = -2/(3 sqrt(3)),
producing the slow t^(-1/3) sup-norm decay.  This module provides the
semigroup, sup-norm decay scans, a quadrature oracle for the band-localized
stationary-phase asymptotics, the dyadic frequency decomposition used to
organize them, and the Duhamel split of a recorded nonlinear trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "Plane2D",
    "DispersiveOperator",
    "PhaseFunction",
    "DuhamelSplit",
    "XI_CRIT",
    "R_CRIT",
    "dispersive_symbol",
    "semigroup_apply",
    "sup_norm",
    "w_s1_norm_2d",
    "sup_decay_scan",
    "bump_plateau",
    "bump_band",
    "littlewood_paley_weights",
    "lp_partition_defect",
    "littlewood_paley_project",
    "stationary_phase_oracle",
    "duhamel_decompose",
]

# Stationary point xi_0 = 1/sqrt(2) of the group velocity, and the critical
# ray slope r = -xi_0 (1 + xi_0^2)^(-3/2) = -2/(3 sqrt(3)) where the phase
# degenerates (Phi' = Phi'' = 0).
XI_CRIT = 2.0**-0.5
R_CRIT = -2.0 / (3.0 * np.sqrt(3.0))


@dataclass(frozen=True)
class Plane2D:
    """Periodic (y, z) plane [-Ly/2, Ly/2) x [0, 2 pi) holding k = 0 slices.

    Spectral fields use the amplitude convention (forward = fft2 / N), so a
    coefficient is the amplitude of its exponential.
    """

    Ny: int
    Nz: int
    Ly: float = 4.0 * np.pi

    def __post_init__(self) -> None:
        for name in ("Ny", "Nz"):
            n = getattr(self, name)
            if not isinstance(n, int) or n <= 0 or n % 2 != 0:
                raise ValueError(f"{name} must be a positive even integer, got {n!r}")
        if self.Ly <= 0:
            raise ValueError(f"Ly must be positive, got {self.Ly}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Ny, self.Nz)

    @property
    def eta(self) -> np.ndarray:
        return np.fft.fftfreq(self.Ny, d=1.0 / self.Ny) * (2.0 * np.pi / self.Ly)

    @property
    def l(self) -> np.ndarray:
        return np.fft.fftfreq(self.Nz, d=1.0 / self.Nz)

    @property
    def area(self) -> float:
        return 2.0 * np.pi * self.Ly

    def forward(self, f: np.ndarray) -> np.ndarray:
        return np.fft.fft2(f) / (self.Ny * self.Nz)

    def inverse(self, fhat: np.ndarray, real: bool = False) -> np.ndarray:
        f = np.fft.ifft2(fhat) * (self.Ny * self.Nz)
        return f.real if real else f

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        y = -0.5 * self.Ly + np.arange(self.Ny) * (self.Ly / self.Ny)
        z = np.arange(self.Nz) * (2.0 * np.pi / self.Nz)
        return y, z


def dispersive_symbol(eta: np.ndarray, l: np.ndarray, nu: float, beta: float) -> np.ndarray:
    """Semigroup generator -nu (eta^2 + l^2) - i beta |l| / sqrt(eta^2 + l^2)."""
    a2 = eta**2 + l**2
    safe = np.where(a2 == 0.0, 1.0, a2)
    return -nu * a2 - 1j * beta * np.abs(l) / np.sqrt(safe)


def _check_z_mean_free(plane: Plane2D, hhat: np.ndarray) -> None:
    scale = float(np.max(np.abs(hhat))) if hhat.size else 0.0
    if scale == 0.0:
        return
    if float(np.max(np.abs(hhat[:, 0]))) > 1e-12 * scale:
        raise ValueError(
            "semigroup domain is z-mean-free: the l = 0 column carries "
            f"relative weight {float(np.max(np.abs(hhat[:, 0]))) / scale:.3e}"
        )


def semigroup_apply(plane: Plane2D, hhat: np.ndarray, t: float, nu: float,
                    beta: float) -> np.ndarray:
    """Apply exp(t L) spectrally; rejects fields with z-mean content."""
    if hhat.shape != plane.shape:
        raise ValueError(f"field shape {hhat.shape} does not match plane {plane.shape}")
    _check_z_mean_free(plane, hhat)
    sym = dispersive_symbol(plane.eta[:, None], plane.l[None, :], nu, beta)
    out = hhat * np.exp(t * sym)
    out[:, 0] = 0.0
    return out


@dataclass(frozen=True)
class DispersiveOperator:
    """The zero-mode semigroup bound to a plane and physical parameters."""

    plane: Plane2D
    nu: float
    beta: float

    def symbol(self) -> np.ndarray:
        return dispersive_symbol(self.plane.eta[:, None], self.plane.l[None, :],
                                 self.nu, self.beta)

    def apply(self, hhat: np.ndarray, t: float) -> np.ndarray:
        return semigroup_apply(self.plane, hhat, t, self.nu, self.beta)

    def isometry_defect(self, hhat: np.ndarray, t: float) -> float:
        """Relative change of the L2 norm under exp(t L); zero when nu = 0."""
        before = float(np.sqrt(np.sum(np.abs(hhat) ** 2)))
        after = float(np.sqrt(np.sum(np.abs(self.apply(hhat, t)) ** 2)))
        return abs(after - before) / max(before, 1e-300)


def sup_norm(plane: Plane2D, hhat: np.ndarray, pad: int = 4) -> float:
    """Sup of |h| evaluated on a pad-times-finer grid via zero padding."""
    Ny, Nz = plane.shape
    My, Mz = pad * Ny, pad * Nz
    big = np.zeros((My, Mz), dtype=complex)
    iy = np.fft.fftfreq(Ny, d=1.0 / Ny).astype(int)
    iz = np.fft.fftfreq(Nz, d=1.0 / Nz).astype(int)
    big[np.ix_(iy % My, iz % Mz)] = hhat
    field = np.fft.ifft2(big) * (My * Mz)
    return float(np.max(np.abs(field)))


def w_s1_norm_2d(plane: Plane2D, hhat: np.ndarray, s: float) -> float:
    """L1 norm of <grad>^s h on the plane (trapezoid, i.e. sum times cell area)."""
    bracket = 1.0 + plane.eta[:, None] ** 2 + plane.l[None, :] ** 2
    g = plane.inverse(hhat * bracket ** (s / 2.0))
    cell = plane.area / (plane.Ny * plane.Nz)
    return float(np.sum(np.abs(g)) * cell)


def sup_decay_scan(
    plane: Plane2D,
    hhat: np.ndarray,
    times: Sequence[float],
    beta: float,
    nu: float = 0.0,
    pad: int = 4,
) -> dict:
    """Sup-norm decay of the free evolution, scaled by the critical (beta t)^(1/3).

    Returns the raw sup series, the scaled series, and the dispersive budget
    10 * ||h||_W^{2,1} the scaled series is compared against.
    """
    times = np.asarray(list(times), dtype=float)
    if np.any(times <= 0.0):
        raise ValueError("decay scan times must be positive")
    sups = np.array([
        sup_norm(plane, semigroup_apply(plane, hhat, t, nu, beta), pad=pad)
        for t in times
    ])
    scaled = sups * (beta * times) ** (1.0 / 3.0)
    return {
        "times": times,
        "sup": sups,
        "scaled": scaled,
        "budget_w21": 10.0 * w_s1_norm_2d(plane, hhat, 2.0),
    }


@dataclass(frozen=True)
class PhaseFunction:
    """Phase Phi(xi) = r xi - (1 + xi^2)^(-1/2) of the fixed-l eta-integral."""

    r: float

    def value(self, xi: np.ndarray) -> np.ndarray:
        return self.r * xi - (1.0 + xi**2) ** -0.5

    def dphi(self, xi: np.ndarray) -> np.ndarray:
        return self.r + xi * (1.0 + xi**2) ** -1.5

    def d2phi(self, xi: np.ndarray) -> np.ndarray:
        return (1.0 - 2.0 * xi**2) * (1.0 + xi**2) ** -2.5

    def stationary_points(self, xi_max: float = 1e6) -> list[float]:
        """Real roots of Phi' in (-xi_max, xi_max), found by bracketed bisection.

        The group-velocity profile g(xi) = xi (1 + xi^2)^(-3/2) is odd with a
        single extremum at +-xi_0, so there are 0, 1, or 2 roots per side.
        """
        g_max = XI_CRIT * (1.0 + XI_CRIT**2) ** -1.5
        roots: list[float] = []
        r = self.r
        if abs(r) > g_max:
            return roots
        side = -np.sign(r) if r != 0.0 else 1.0
        if r == 0.0:
            return [0.0]

        def dphi(x: float) -> float:
            return float(self.dphi(np.asarray(x)))

        lo, hi = (0.0, side * XI_CRIT) if side > 0 else (side * XI_CRIT, 0.0)
        if dphi(lo) * dphi(hi) < 0:
            roots.append(float(optimize.brentq(dphi, lo, hi, xtol=1e-14)))
        lo, hi = (side * XI_CRIT, side * xi_max) if side > 0 else (-xi_max, side * XI_CRIT)
        if dphi(lo) * dphi(hi) < 0:
            roots.append(float(optimize.brentq(dphi, lo, hi, xtol=1e-13)))
        if abs(abs(r) - g_max) < 1e-13:
            roots = [float(side * XI_CRIT)]
        return sorted(roots)


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity transition: 1 for s <= 0, 0 for s >= 1."""
    s = np.asarray(s, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        f = np.where(s > 0.0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        fc = np.where(1.0 - s > 0.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
    return fc / (f + fc)


def bump_plateau(x: np.ndarray) -> np.ndarray:
    """Even bump, identically 1 on [-3/2, 3/2], supported in [-2, 2]."""
    return _smooth_step(2.0 * (np.abs(np.asarray(x, dtype=float)) - 1.5))


def bump_band(x: np.ndarray) -> np.ndarray:
    """Annular band profile bump_plateau(x) - bump_plateau(2x), supported in 3/4 <= |x| <= 2."""
    x = np.asarray(x, dtype=float)
    return bump_plateau(x) - bump_plateau(2.0 * x)


def littlewood_paley_weights(eta: np.ndarray, j_lo: int, j_hi: int) -> dict[int, np.ndarray]:
    """Dyadic partition of unity in eta with the sub-box bands merged.

    Key j carries bump_band(2^-j eta) for j_lo < j <= j_hi; key j_lo carries
    the merged low block bump_plateau(2^-j_lo eta).  The weights telescope to
    bump_plateau(2^-j_hi eta), which is identically 1 for |eta| <= 1.5 * 2^j_hi.
    """
    if j_hi < j_lo:
        raise ValueError(f"need j_hi >= j_lo, got [{j_lo}, {j_hi}]")
    eta = np.asarray(eta, dtype=float)
    weights = {j_lo: bump_plateau(eta * 2.0**-j_lo)}
    for j in range(j_lo + 1, j_hi + 1):
        weights[j] = bump_plateau(eta * 2.0**-j) - bump_plateau(eta * 2.0 ** -(j - 1))
    return weights


def lp_partition_defect(eta: np.ndarray, weights: dict[int, np.ndarray]) -> float:
    """Max deviation of the band sum from 1 over the covered range."""
    j_hi = max(weights)
    eta = np.asarray(eta, dtype=float)
    total = sum(weights.values())
    covered = np.abs(eta) <= 1.5 * 2.0**j_hi
    if not np.any(covered):
        return 0.0
    return float(np.max(np.abs(total[covered] - 1.0)))


def littlewood_paley_project(plane: Plane2D, hhat: np.ndarray,
                             j_hi: Optional[int] = None) -> dict[int, np.ndarray]:
    """Split a plane field into dyadic eta-bands covering the whole grid.

    Bands below the box frequency 2 pi / Ly are merged into the lowest block;
    j_hi defaults to the smallest value whose plateau covers max |eta|.
    """
    box_freq = 2.0 * np.pi / plane.Ly
    j_lo = int(np.floor(np.log2(box_freq)))
    eta_max = float(np.max(np.abs(plane.eta)))
    if j_hi is None:
        j_hi = int(np.ceil(np.log2(max(eta_max, box_freq) / 1.5)))
    j_hi = max(j_hi, j_lo)
    weights = littlewood_paley_weights(plane.eta, j_lo, j_hi)
    return {j: w[:, None] * hhat for j, w in weights.items()}


@lru_cache(maxsize=None)
def _oracle_cached(r: float, tb: float, l: int, j: int, epsabs: float) -> float:
    phase = PhaseFunction(r)
    scale = 2.0**j / l

    def integrand_re(xi: float) -> float:
        return float(bump_band(np.asarray(xi / scale)) * np.cos(tb * phase.value(np.asarray(xi))))

    def integrand_im(xi: float) -> float:
        return float(bump_band(np.asarray(xi / scale)) * np.sin(tb * phase.value(np.asarray(xi))))

    pts = [p for p in phase.stationary_points() if 0.7 * scale <= abs(p) <= 2.1 * scale]
    total = 0.0 + 0.0j
    for lo, hi in ((-2.0 * scale, -0.74 * scale), (0.74 * scale, 2.0 * scale)):
        inner = sorted(p for p in pts if lo < p < hi)
        re, _ = integrate.quad(integrand_re, lo, hi, points=inner or None,
                               epsabs=epsabs, epsrel=1e-9, limit=200_000)
        im, _ = integrate.quad(integrand_im, lo, hi, points=inner or None,
                               epsabs=epsabs, epsrel=1e-9, limit=200_000)
        total += re + 1j * im
    return float(abs(total))


def stationary_phase_oracle(r: float, tb: float, l: int = 1, j: int = -1,
                            epsabs: float = 1e-10) -> float:
    """Modulus of the band-localized oscillatory integral, by adaptive quadrature.

    Computes |int bump_band(l xi / 2^j) exp(i tb Phi_r(xi)) dxi| with the
    stationary points passed to the integrator as breakpoints.  On the
    critical ray r = R_CRIT the result decays like tb^(-1/3); on rays with
    simple stationary points inside the band it decays like tb^(-1/2) with
    prefactor growing like (2^j / l)^(3/2); bands without stationary points
    are bounded by their bandwidth and decay faster.
    """
    if tb <= 0.0:
        raise ValueError("tb must be positive")
    if l <= 0:
        raise ValueError("l must be a positive integer")
    return _oracle_cached(float(r), float(tb), int(l), int(j), float(epsabs))


@dataclass
class DuhamelSplit:
    """Free-flow / forced decomposition of a recorded zero-mode trajectory."""

    times: np.ndarray
    u2_in: np.ndarray
    u2_nl: np.ndarray
    u2_total: np.ndarray
    residual: np.ndarray
    max_residual: float


def duhamel_decompose(
    plane: Plane2D,
    times: np.ndarray,
    upsilon_hats: np.ndarray,
    forcing_hats: np.ndarray,
    nu: float,
    beta: float,
) -> DuhamelSplit:
    """Split a recorded Upsilon trajectory into free flow plus forced response.

    upsilon_hats[i] is the recorded spectral field at times[i] and
    forcing_hats[i] the instantaneous nonlinear forcing.  The forced part is
    accumulated by the trapezoid rule through the one-step recurrence
    I_n = exp(dt L) I_{n-1} + (dt/2)(exp(dt L) F_{n-1} + F_n), so the
    reconstruction error is O(dt^2).  Series report L2 norms of the real part
    (the wall-normal velocity); the residual is relative to the trajectory peak.
    """
    times = np.asarray(times, dtype=float)
    n_t = len(times)
    if upsilon_hats.shape != (n_t, *plane.shape) or forcing_hats.shape != (n_t, *plane.shape):
        raise ValueError("trajectory arrays must have shape (n_times, Ny, Nz)")
    sym = dispersive_symbol(plane.eta[:, None], plane.l[None, :], nu, beta)

    def u2_l2(hhat: np.ndarray) -> float:
        u2hat = 0.5 * (hhat + np.conj(hhat[(-np.arange(plane.Ny)) % plane.Ny][:, (-np.arange(plane.Nz)) % plane.Nz]))
        return float(np.sqrt(plane.area * np.sum(np.abs(u2hat) ** 2)))

    u2_in = np.empty(n_t)
    u2_nl = np.empty(n_t)
    u2_total = np.empty(n_t)
    residual = np.empty(n_t)
    peak = max(float(np.sqrt(np.sum(np.abs(h) ** 2))) for h in upsilon_hats)
    peak = max(peak, 1e-300)

    free = upsilon_hats[0].copy()
    forced = np.zeros_like(free)
    u2_in[0] = u2_l2(free)
    u2_nl[0] = 0.0
    u2_total[0] = u2_l2(upsilon_hats[0])
    residual[0] = 0.0
    for i in range(1, n_t):
        dt = times[i] - times[i - 1]
        prop = np.exp(dt * sym)
        free = prop * free
        forced = prop * forced + 0.5 * dt * (prop * forcing_hats[i - 1] + forcing_hats[i])
        u2_in[i] = u2_l2(free)
        u2_nl[i] = u2_l2(forced)
        u2_total[i] = u2_l2(upsilon_hats[i])
        defect = free + forced - upsilon_hats[i]
        residual[i] = float(np.sqrt(np.sum(np.abs(defect) ** 2))) / peak
    return DuhamelSplit(
        times=times, u2_in=u2_in, u2_nl=u2_nl, u2_total=u2_total,
        residual=residual, max_residual=float(residual.max()),
    )
