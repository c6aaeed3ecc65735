"""Sheared-frame spectral operators on a triply periodic box.

Fields live on [0, 2pi) x [-Ly/2, Ly/2) x [0, 2pi).  A physical field is a
real array of shape (Nx, Ny, Nz); its modal representation is a complex array
of the same shape in numpy FFT layout with the amplitude convention

    f(x, y, z) = sum_{k,eta,l} fhat[k, eta, l] * exp(i(k x + eta y + l z)),

so Parseval reads integral |f|^2 dV = V * sum |fhat|^2 with V = (2pi)*Ly*(2pi).
Wavenumbers k, l are integers; eta runs over (2pi/Ly) * integers.

The background shear is handled in the co-moving frame, where y-derivatives
pick up the time-tilted frequency eta - t*k.  Every operator that involves
d/dy therefore takes the frame time t; the grid itself never deforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import ceil

import numpy as np

__all__ = [
    "Grid",
    "ModeClass",
    "SpectralField",
    "SingularSymbolError",
    "forward_transform",
    "inverse_transform",
    "physical_points",
    "hermitize",
    "hermitian_defect",
    "mode_mask",
    "project_modes",
    "remove_xz_mean",
    "moving_derivative",
    "fractional_multiplier",
    "symbol_array",
    "dealias_mask",
    "dealias_product",
    "divergence",
    "divergence_residual",
    "leray_project",
    "l2_norm",
    "sobolev_norm",
    "w_s1_norm",
    "linf_norm",
]


class SingularSymbolError(ValueError):
    """Negative fractional power applied to a field supported on the symbol kernel."""


class ModeClass(Enum):
    """Fourier sectors with distinct dynamics."""

    NONZERO = "nonzero"          # k != 0
    SIMPLE_ZERO = "simple_zero"  # k == 0, l != 0
    DOUBLE_ZERO = "double_zero"  # k == 0, l == 0 (x-z mean, function of y)


@dataclass(frozen=True)
class Grid:
    """Static Fourier grid. Nx, Ny, Nz are modes per axis (positive, even)."""

    Nx: int
    Ny: int
    Nz: int
    Ly: float = 4.0 * np.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        for name in ("Nx", "Ny", "Nz"):
            n = getattr(self, name)
            if not (isinstance(n, (int, np.integer)) and n > 0 and n % 2 == 0):
                raise ValueError(f"{name} must be a positive even integer, got {n!r}")
        if not self.Ly > 0:
            raise ValueError(f"Ly must be positive, got {self.Ly!r}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction!r}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.Nx, self.Ny, self.Nz)

    @property
    def num_points(self) -> int:
        return self.Nx * self.Ny * self.Nz

    @property
    def volume(self) -> float:
        return (2.0 * np.pi) ** 2 * self.Ly

    @property
    def kx(self) -> np.ndarray:
        """Integer streamwise wavenumbers in FFT order."""
        return _axes(self)[0]

    @property
    def eta(self) -> np.ndarray:
        """y-frequencies (2pi/Ly)*n in FFT order."""
        return _axes(self)[1]

    @property
    def kz(self) -> np.ndarray:
        """Integer spanwise wavenumbers in FFT order."""
        return _axes(self)[2]

    def eta_eff(self, t: float) -> np.ndarray:
        """Effective y-frequency eta - t*k, shape (Nx, Ny)."""
        return self.eta[None, :] - t * self.kx[:, None]


@lru_cache(maxsize=32)
def _axes(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kx = np.fft.fftfreq(grid.Nx, d=1.0 / grid.Nx)
    eta = np.fft.fftfreq(grid.Ny, d=1.0 / grid.Ny) * (2.0 * np.pi / grid.Ly)
    kz = np.fft.fftfreq(grid.Nz, d=1.0 / grid.Nz)
    for a in (kx, eta, kz):
        a.setflags(write=False)
    return kx, eta, kz


@lru_cache(maxsize=32)
def _broadcast_axes(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kx, eta, kz = _axes(grid)
    return kx[:, None, None], eta[None, :, None], kz[None, None, :]


def physical_points(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collocation coordinates (x, y, z) as broadcastable 3D arrays; y is centered."""
    x = (2.0 * np.pi / grid.Nx) * np.arange(grid.Nx)
    y = -0.5 * grid.Ly + (grid.Ly / grid.Ny) * np.arange(grid.Ny)
    z = (2.0 * np.pi / grid.Nz) * np.arange(grid.Nz)
    return x[:, None, None], y[None, :, None], z[None, None, :]


def forward_transform(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Physical samples -> modal amplitudes."""
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid shape {grid.shape}")
    return np.fft.fftn(f) / grid.num_points


def inverse_transform(grid: Grid, fhat: np.ndarray, real: bool = False) -> np.ndarray:
    """Modal amplitudes -> physical samples. real=True drops the imaginary part."""
    if fhat.shape != grid.shape:
        raise ValueError(f"field shape {fhat.shape} does not match grid shape {grid.shape}")
    out = np.fft.ifftn(fhat) * grid.num_points
    return out.real if real else out


@lru_cache(maxsize=32)
def _flip_index(grid: Grid) -> tuple[np.ndarray, ...]:
    return np.ix_(
        (-np.arange(grid.Nx)) % grid.Nx,
        (-np.arange(grid.Ny)) % grid.Ny,
        (-np.arange(grid.Nz)) % grid.Nz,
    )


def hermitize(grid: Grid, fhat: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian-symmetric (real physical field) subspace."""
    return 0.5 * (fhat + np.conj(fhat[_flip_index(grid)]))


def hermitian_defect(grid: Grid, fhat: np.ndarray) -> float:
    """Relative size of the non-Hermitian component."""
    asym = fhat - np.conj(fhat[_flip_index(grid)])
    scale = np.sqrt(np.sum(np.abs(fhat) ** 2))
    if scale == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(asym) ** 2)) / (2.0 * scale))


@dataclass
class SpectralField:
    """Modal coefficients tied to a grid; validated Hermitian and finite."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coeffs contain NaN or Inf")
        defect = hermitian_defect(self.grid, self.coeffs)
        if defect > 1e-12:
            raise ValueError(f"coeffs violate Hermitian symmetry (defect {defect:.3e})")

    @classmethod
    def from_physical(cls, grid: Grid, f: np.ndarray) -> "SpectralField":
        return cls(grid, forward_transform(grid, np.asarray(f, dtype=float)))

    def physical(self) -> np.ndarray:
        return inverse_transform(self.grid, self.coeffs, real=True)


@lru_cache(maxsize=64)
def mode_mask(grid: Grid, mode_class: ModeClass) -> np.ndarray:
    """Boolean mask of the modes in a sector."""
    k3, _, l3 = _broadcast_axes(grid)
    if mode_class is ModeClass.NONZERO:
        mask = np.broadcast_to(k3 != 0, grid.shape)
    elif mode_class is ModeClass.SIMPLE_ZERO:
        mask = (k3 == 0) & (l3 != 0)
    else:
        mask = np.broadcast_to((k3 == 0) & (l3 == 0), grid.shape)
    mask = np.ascontiguousarray(np.broadcast_to(mask, grid.shape))
    mask.setflags(write=False)
    return mask


def project_modes(grid: Grid, fhat: np.ndarray, mode_class: ModeClass) -> np.ndarray:
    """Zero all coefficients outside the sector."""
    return np.where(mode_mask(grid, mode_class), fhat, 0.0)


def remove_xz_mean(grid: Grid, fhat: np.ndarray) -> np.ndarray:
    """Subtract the double-zero (x-z mean) part."""
    out = fhat.copy()
    out[0, :, 0] = 0.0
    return out


def moving_derivative(grid: Grid, fhat: np.ndarray, t: float, axis: str) -> np.ndarray:
    """Apply i*k, i*(eta - t*k) or i*l. Axis is one of 'x', 'yL', 'z'.

    Nyquist planes of the symbol are zeroed so that odd multipliers preserve
    Hermitian symmetry exactly on even grids.
    """
    k3, eta3, l3 = _broadcast_axes(grid)
    if axis == "x":
        sym = 1j * np.broadcast_to(k3, grid.shape).copy()
        sym[grid.Nx // 2, :, :] = 0.0
    elif axis == "yL":
        sym = 1j * (eta3 - t * k3)
        sym = np.broadcast_to(sym, grid.shape).copy()
        sym[grid.Nx // 2, :, :] = 0.0
        sym[:, grid.Ny // 2, :] = 0.0
    elif axis == "z":
        sym = 1j * np.broadcast_to(l3, grid.shape).copy()
        sym[:, :, grid.Nz // 2] = 0.0
    else:
        raise ValueError(f"axis must be 'x', 'yL' or 'z', got {axis!r}")
    return sym * fhat


_KERNEL_NAMES = {
    "grad_L": "the (0,0,0) mean mode",
    "grad_xz": "the x-z mean modes (k = l = 0)",
    "grad_yz": "the x-line modes (eta = l = 0)",
    "dz": "the z-mean modes (l = 0)",
}


def symbol_array(grid: Grid, symbol: str, t: float = 0.0) -> np.ndarray:
    """Squared symbol of the named operator evaluated on the grid.

    Returns |.|^2 so fractional powers p apply as symbol_array ** (p/2).
    """
    k3, eta3, l3 = _broadcast_axes(grid)
    if symbol == "grad_L":
        s = eta3 - t * k3
        return k3**2 + s**2 + l3**2
    if symbol == "grad_xz":
        return np.broadcast_to(k3**2 + l3**2, grid.shape)
    if symbol == "grad_yz":
        return np.broadcast_to(eta3**2 + l3**2, grid.shape)
    if symbol == "dz":
        return np.broadcast_to(l3**2, grid.shape)
    if symbol == "bracket":
        return 1.0 + k3**2 + eta3**2 + l3**2
    raise ValueError(
        f"unknown symbol {symbol!r}; expected one of "
        "'grad_L', 'grad_xz', 'grad_yz', 'dz', 'bracket'"
    )


def fractional_multiplier(
    grid: Grid,
    fhat: np.ndarray,
    symbol: str,
    power: float,
    t: float = 0.0,
) -> np.ndarray:
    """Apply |D|^power for D in {grad_L, grad_xz, grad_yz, dz, bracket}.

    Negative powers require the input to vanish on the symbol kernel
    (relative tolerance 1e-13); violations raise SingularSymbolError naming
    the offending mode class.  Kernel modes of the output are zeroed.
    """
    base = symbol_array(grid, symbol, t)
    if symbol == "bracket":
        return fhat * base ** (0.5 * power)
    kernel = base == 0.0
    if power < 0.0 and kernel.any():
        kernel_amp = np.max(np.abs(np.broadcast_to(fhat, grid.shape)[kernel]))
        scale = np.max(np.abs(fhat))
        if kernel_amp > 1e-13 * max(scale, 1e-300):
            raise SingularSymbolError(
                f"|{symbol}|^{power} is singular on {_KERNEL_NAMES[symbol]}: "
                f"input has amplitude {kernel_amp:.3e} there"
            )
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.where(kernel, 0.0, base ** (0.5 * power))
    return fhat * mult


@lru_cache(maxsize=32)
def dealias_mask(grid: Grid) -> np.ndarray:
    """Boolean 2/3-rule mask on grid (not effective) wavenumbers."""

    def keep(n: int) -> int:
        # Largest cutoff c with the aliasing-safe property 2c - N < -c.
        return ceil(grid.dealias_fraction * n / 2) - 1

    kx, eta, kz = _axes(grid)
    nx = np.abs(kx) <= keep(grid.Nx)
    ny = np.abs(np.fft.fftfreq(grid.Ny, d=1.0 / grid.Ny)) <= keep(grid.Ny)
    nz = np.abs(kz) <= keep(grid.Nz)
    mask = nx[:, None, None] & ny[None, :, None] & nz[None, None, :]
    mask.setflags(write=False)
    return mask


def dealias_product(grid: Grid, fhat: np.ndarray, ghat: np.ndarray) -> np.ndarray:
    """Pointwise physical product with 2/3-rule truncation on input and output."""
    if fhat.shape != ghat.shape or fhat.shape != grid.shape:
        raise ValueError("dealias_product requires both fields on the same grid")
    mask = dealias_mask(grid)
    fp = inverse_transform(grid, np.where(mask, fhat, 0.0))
    gp = inverse_transform(grid, np.where(mask, ghat, 0.0))
    return np.where(mask, forward_transform(grid, fp * gp), 0.0)


def _wavevectors(grid: Grid, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k3, eta3, l3 = _broadcast_axes(grid)
    return k3, eta3 - t * k3, l3


def divergence(grid: Grid, U: tuple[np.ndarray, np.ndarray, np.ndarray], t: float) -> np.ndarray:
    """Moving-frame divergence i*(k U1 + (eta - tk) U2 + l U3)."""
    K1, K2, K3 = _wavevectors(grid, t)
    return 1j * (K1 * U[0] + K2 * U[1] + K3 * U[2])


def divergence_residual(grid: Grid, U: tuple[np.ndarray, np.ndarray, np.ndarray], t: float) -> float:
    """Divergence norm relative to the gradient-scale norm of U."""
    K1, K2, K3 = _wavevectors(grid, t)
    D = K1 * U[0] + K2 * U[1] + K3 * U[2]
    K2sq = K1**2 + K2**2 + K3**2
    scale = np.sqrt(np.sum(K2sq * (np.abs(U[0]) ** 2 + np.abs(U[1]) ** 2 + np.abs(U[2]) ** 2)))
    if scale == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(D) ** 2)) / scale)


def leray_project(
    grid: Grid,
    U: tuple[np.ndarray, np.ndarray, np.ndarray],
    t: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project onto moving-frame solenoidal fields; zeroes the (0,0,0) mode."""
    K1, K2, K3 = _wavevectors(grid, t)
    K2sq = K1**2 + K2**2 + K3**2
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(K2sq == 0.0, 0.0, (K1 * U[0] + K2 * U[1] + K3 * U[2]) / np.where(K2sq == 0.0, 1.0, K2sq))
    out1 = U[0] - K1 * coef
    out2 = U[1] - K2 * coef
    out3 = U[2] - K3 * coef
    for comp in (out1, out2, out3):
        comp[0, 0, 0] = 0.0
    return out1, out2, out3


def l2_norm(grid: Grid, fhat: np.ndarray) -> float:
    """True L2 norm: sqrt(V * sum |fhat|^2)."""
    return float(np.sqrt(grid.volume * np.sum(np.abs(fhat) ** 2)))


def sobolev_norm(grid: Grid, fhat: np.ndarray, s: float) -> float:
    """H^s norm with the static bracket weight <k,eta,l>^(2s)."""
    if s < 0:
        raise ValueError(f"Sobolev order must be >= 0, got {s}")
    w = symbol_array(grid, "bracket") ** s
    return float(np.sqrt(grid.volume * np.sum(w * np.abs(fhat) ** 2)))


def w_s1_norm(grid: Grid, fhat: np.ndarray, s: float) -> float:
    """W^{s,1} norm: L1 of <grad>^s f on the collocation grid (trapezoidal)."""
    if s < 0:
        raise ValueError(f"W^{{s,1}} order must be >= 0, got {s}")
    g = inverse_transform(grid, fractional_multiplier(grid, fhat, "bracket", s))
    dv = grid.volume / grid.num_points
    return float(np.sum(np.abs(g)) * dv)


def linf_norm(grid: Grid, fhat: np.ndarray) -> float:
    """Sup norm of the physical field on the collocation grid."""
    return float(np.max(np.abs(inverse_transform(grid, fhat))))
