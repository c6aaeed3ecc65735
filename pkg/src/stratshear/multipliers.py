"""Ghost weights M1, M2, M3, the main weight A, and their defining inequalities.

Each weight solves dM/dt = -(density) * M with M(0) = 1, where the densities
are (s := eta - t*k, q^2 := k^2 + l^2, a^2 := k^2 + s^2 + l^2):

    -dM1/dt / M1 = nu^(1/3) k^2 / (k^2 + nu^(2/3) s^2)
    -dM2/dt / M2 = (2 / (2 beta - 1)) * q k^2 / a^3
    -dM3/dt / M3 = |k| q^(1/2) / a^(3/2)

For k = 0 all three are identically 1.  M1 and M2 have elementary
antiderivatives; M3 is evaluated either by adaptive quadrature (the scalar
reference route) or by a hypergeometric closed form (the vectorized route),
and the two are cross-validated in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np
from scipy import integrate
from scipy.special import gamma, hyp2f1

__all__ = [
    "MultiplierParams",
    "WeightTable",
    "lambda_beta",
    "log_m1",
    "log_m2",
    "log_m3",
    "log_weight",
    "log_weight_quad",
    "weights",
    "main_weight",
    "decay_density",
    "kappa_floor_m3",
    "kappa_floor_m3_crossing",
    "orr_margin",
    "weight_table",
    "scan_multipliers",
]

# Half-line mass of the M3 density profile: integral over [0, inf) of
# (1 + u^2)^(-3/4) du = (sqrt(pi)/2) Gamma(1/4) / Gamma(3/4).
C_HALF = float((sqrt(pi) / 2.0) * gamma(0.25) / gamma(0.75))


@dataclass(frozen=True)
class MultiplierParams:
    """Physics parameters shared by the weight machinery."""

    nu: float
    beta: float
    m: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu!r}")
        if not self.beta > 0.5:
            raise ValueError(f"beta must exceed 1/2, got {self.beta!r}")
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 3):
            raise ValueError(f"m must be an integer >= 3, got {self.m!r}")


def lambda_beta(beta: float) -> float:
    """Enhanced-dissipation rate factor (2*beta - 1) / (2*beta + 1)."""
    if not beta > 0.5:
        raise ValueError(f"lambda(beta) requires beta > 1/2, got {beta!r}")
    return (2.0 * beta - 1.0) / (2.0 * beta + 1.0)


def log_m1(t, k, eta, l, nu):
    """Closed form: -sign(k) * [atan(c*eta) - atan(c*(eta - k t))], c = nu^(1/3)/|k|."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    absk = np.where(k == 0.0, 1.0, np.abs(k))
    c = nu ** (1.0 / 3.0) / absk
    val = -np.sign(k) * (np.arctan(c * eta) - np.arctan(c * (eta - k * t)))
    return np.where(k == 0.0, 0.0, val)


def log_m2(t, k, eta, l, beta):
    """Closed form from the primitive s / (q^2 sqrt(q^2 + s^2))."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l = np.asarray(l, dtype=float)
    q = np.sqrt(k**2 + l**2)
    qs = np.where(q == 0.0, 1.0, q)
    s0 = eta
    s1 = eta - k * t
    prim = s0 / np.sqrt(qs**2 + s0**2) - s1 / np.sqrt(qs**2 + s1**2)
    val = -(2.0 / (2.0 * beta - 1.0)) * np.sign(k) * (np.abs(k) / qs) * prim
    return np.where(k == 0.0, 0.0, val)


def _fu(x):
    """Antiderivative F(X) = integral_0^X (1 + u^2)^(-3/4) du, odd in X.

    Stable on both sides of |X| = 1: the inner branch uses the series-friendly
    2F1 argument -X^2 in [-1, 0]; the outer branch uses the tail identity
    integral_X^inf = 2 X^(-1/2) 2F1(3/4, 1/4; 5/4; -1/X^2).
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    inner = np.minimum(ax, 1.0)
    outer = np.maximum(ax, 1.0)
    val_in = inner * hyp2f1(0.75, 0.5, 1.5, -(inner**2))
    val_out = C_HALF - 2.0 / np.sqrt(outer) * hyp2f1(0.75, 0.25, 1.25, -1.0 / outer**2)
    return np.sign(x) * np.where(ax <= 1.0, val_in, val_out)


def log_m3(t, k, eta, l):
    """Closed form -sign(k) * [F(eta/q) - F((eta - k t)/q)] via hypergeometric F."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l = np.asarray(l, dtype=float)
    q = np.sqrt(k**2 + l**2)
    qs = np.where(q == 0.0, 1.0, q)
    val = -np.sign(k) * (_fu(eta / qs) - _fu((eta - k * t) / qs))
    return np.where(k == 0.0, 0.0, val)


def decay_density(j: int, t, k, eta, l, nu: float = 0.0, beta: float = 1.0):
    """The nonnegative density -dlogM_j/dt at frame time t."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l = np.asarray(l, dtype=float)
    s = eta - k * t
    if j == 1:
        return nu ** (1.0 / 3.0) * k**2 / (k**2 + nu ** (2.0 / 3.0) * s**2 + (k == 0.0))
    q2 = k**2 + l**2
    a2 = q2 + s**2
    if j == 2:
        return (2.0 / (2.0 * beta - 1.0)) * np.sqrt(q2) * k**2 / np.where(a2 == 0.0, 1.0, a2**1.5)
    if j == 3:
        return np.abs(k) * q2**0.25 / np.where(a2 == 0.0, 1.0, a2**0.75)
    raise ValueError(f"j must be 1, 2 or 3, got {j!r}")


def log_weight_quad(j: int, t: float, k: int, eta: float, l: int, nu: float = 0.0,
                    beta: float = 1.0, epsrel: float = 1e-10) -> float:
    """Adaptive-quadrature reference for log M_j (scalar)."""
    if k == 0:
        return 0.0
    points = []
    t_orr = eta / k
    if 0.0 < t_orr < t:
        points.append(t_orr)
    val, err = integrate.quad(
        lambda tau: float(decay_density(j, tau, k, eta, l, nu, beta)),
        0.0, t, points=points or None, epsabs=0.0, epsrel=epsrel, limit=200,
    )
    if not np.isfinite(val) or (abs(val) > 0 and err > 1e-6 * abs(val) + 1e-12):
        raise ArithmeticError(
            f"log M_{j} quadrature failed to converge at mode (k={k}, eta={eta}, l={l}), t={t}"
        )
    return -val


def log_weight(j: int, t: float, k: int, eta: float, l: int, nu: float = 0.0,
               beta: float = 1.0) -> float:
    """Scalar log M_j: closed forms for j = 1, 2; adaptive quadrature for j = 3."""
    if k == 0:
        return 0.0
    if j == 1:
        return float(log_m1(t, k, eta, l, nu))
    if j == 2:
        return float(log_m2(t, k, eta, l, beta))
    if j == 3:
        return log_weight_quad(3, t, k, eta, l, nu, beta)
    raise ValueError(f"j must be 1, 2 or 3, got {j!r}")


def weights(t, k, eta, l, nu: float, beta: float):
    """(M1, M2, M3) via the vectorized closed forms."""
    return (
        np.exp(log_m1(t, k, eta, l, nu)),
        np.exp(log_m2(t, k, eta, l, beta)),
        np.exp(log_m3(t, k, eta, l)),
    )


def main_weight(params: MultiplierParams, t, k, eta, l):
    """A = e^(lambda nu^(1/3) t) <k,eta,l>^(2m) M1 M2 M3."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l = np.asarray(l, dtype=float)
    m1, m2, m3 = weights(t, k, eta, l, params.nu, params.beta)
    bracket2 = 1.0 + k**2 + eta**2 + l**2
    rate = lambda_beta(params.beta) * params.nu ** (1.0 / 3.0)
    return np.exp(rate * t) * bracket2**params.m * m1 * m2 * m3


def kappa_floor_m3() -> float:
    """Lower bound for M3 on windows where eta - t*k keeps one sign.

    Equals exp(-(sqrt(pi)/2) Gamma(1/4)/Gamma(3/4)), the exponential of the
    half-line mass of the density profile; approached as t -> inf for modes
    starting at eta = 0.  Windows that cross eta = t*k can sweep up to twice
    this mass; see kappa_floor_m3_crossing.
    """
    return float(np.exp(-C_HALF))


def kappa_floor_m3_crossing() -> float:
    """Universal M3 floor over arbitrary windows (full-line density mass)."""
    return float(np.exp(-2.0 * C_HALF))


def orr_margin(k, u, nu):
    """Margin of nu^(1/6) <= 2 sqrt(-dM1/M1) + (1/2) nu^(1/2) |u| / |k| at s = u."""
    k = np.asarray(k, dtype=float)
    u = np.asarray(u, dtype=float)
    x = nu ** (1.0 / 3.0) * np.abs(u) / np.abs(k)
    return nu ** (1.0 / 6.0) * (2.0 / np.sqrt(1.0 + x**2) + 0.5 * x - 1.0)


@dataclass
class WeightTable:
    """Per-mode weight arrays on a grid at a fixed frame time."""

    t: float
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    M: np.ndarray
    A: np.ndarray


def weight_table(grid, params: MultiplierParams, t: float) -> WeightTable:
    """Evaluate the weights on all grid modes (vectorized closed forms)."""
    k3 = grid.kx[:, None, None]
    eta3 = grid.eta[None, :, None]
    l3 = grid.kz[None, None, :]
    m1, m2, m3 = weights(t, k3, eta3, l3, params.nu, params.beta)
    m1, m2, m3 = np.broadcast_arrays(m1, m2, m3)
    prod = m1 * m2 * m3
    bracket2 = 1.0 + k3**2 + eta3**2 + l3**2
    rate = lambda_beta(params.beta) * params.nu ** (1.0 / 3.0)
    A = np.exp(rate * t) * bracket2**params.m * prod
    return WeightTable(t=t, M1=m1, M2=m2, M3=m3, M=prod, A=np.ascontiguousarray(A))


def scan_multipliers(
    n_samples: int = 100_000,
    seed: int = 0,
    beta: float = 1.0,
    nu_values: tuple[float, ...] = (1e-2, 1e-3, 1e-4),
    k_max: int = 16,
    l_max: int = 16,
    u_max: float = 1e3,
) -> dict:
    """Randomized verification scan of the weight bounds and the Orr inequality.

    Samples (k, l, nu) with |k| in [1, k_max], l in [0, l_max], and a frame
    window whose effective frequency runs from eta to eta - t*k without
    changing sign (the domain on which the M3 half-line floor is provable;
    windows that cross the critical time are exercised separately in the test
    suite against the full-line floor).  Returns the sample columns plus a
    summary of extrema.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    k = rng.integers(1, k_max + 1, n_samples) * rng.choice([-1, 1], n_samples)
    l = rng.integers(0, l_max + 1, n_samples)
    nu = rng.choice(np.asarray(nu_values, dtype=float), n_samples)

    # Window endpoints: half uniform in [0, u_max], half log-uniform down to 1e-3,
    # sorted so u_lo <= u_hi, on a random side of the critical time.
    u_a = np.where(
        rng.random(n_samples) < 0.5,
        rng.uniform(0.0, u_max, n_samples),
        10.0 ** rng.uniform(-3.0, np.log10(u_max), n_samples),
    )
    u_b = np.where(
        rng.random(n_samples) < 0.5,
        rng.uniform(0.0, u_max, n_samples),
        10.0 ** rng.uniform(-3.0, np.log10(u_max), n_samples),
    )
    u_lo = np.minimum(u_a, u_b)
    u_hi = np.maximum(u_a, u_b)
    side = rng.choice([-1.0, 1.0], n_samples)

    # For k > 0 the effective frequency decreases in t, so the start must be
    # the signed maximum of the window; for k < 0 it increases.
    start = np.where(side > 0, u_hi, -u_lo)
    end = np.where(side > 0, u_lo, -u_hi)
    swap = k < 0
    start, end = np.where(swap, -start, start), np.where(swap, -end, end)
    eta = start
    t = (eta - end) / k

    m1 = np.exp(log_m1(t, k, eta, l, nu))
    m2 = np.exp(log_m2(t, k, eta, l, beta))
    m3 = np.exp(log_m3(t, k, eta, l))
    margin = orr_margin(k, end, nu)

    summary = {
        "n_samples": int(n_samples),
        "min_M1": float(m1.min()),
        "max_M1": float(m1.max()),
        "min_M2": float(m2.min()),
        "max_M2": float(m2.max()),
        "min_M3": float(m3.min()),
        "max_M3": float(m3.max()),
        "m3_floor": kappa_floor_m3(),
        "min_orr_margin": float(margin.min()),
    }
    columns = {
        "k": k, "l": l, "nu": nu, "eta": eta, "t": t, "u_end": end,
        "M1": m1, "M2": m2, "M3": m3, "orr_margin": margin,
    }
    return {"columns": columns, "summary": summary}
