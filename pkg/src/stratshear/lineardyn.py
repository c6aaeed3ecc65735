"""Linearized per-mode dynamics in the sheared frame.

Two sectors are handled here.  For k != 0 the evolved 4-vector per mode is
(U1, U3, G, Gamma); the wall-normal velocity U2 and buoyancy Theta are always
recovered through the time-dependent symbols

    U2 = -q^(1/2) a^(-3/2) G,      Theta = q^(-1/2) a^(-1/2) Gamma,

with q^2 = k^2 + l^2 and a^2 = k^2 + (eta - t k)^2 + l^2.  Writing
kappa = k (eta - t k) / a^2, the linear system reads

    dU1 = -nu a^2 U1 + (-1 + 2 k^2/a^2) U2 + beta k (eta - tk) a^-2 Theta
    dU3 = -nu a^2 U3 + 2 k l a^-2 U2 + beta l (eta - tk) a^-2 Theta
    dG  = -nu a^2 G  + (kappa/2) G  + beta (q/a) Gamma
    dGm = -nu a^2 Gm - (kappa/2) Gm - beta (q/a) G

For k = 0, l != 0 the sector reduces to the 3-vector (G0, Gamma0, U1_0) with a
pure rotation at frequency beta |l| / a and the lift-up forcing -U2 on U1_0.

All propagation is plain RK4, vectorized over modes (they never couple).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .multipliers import MultiplierParams, decay_density, lambda_beta, main_weight

__all__ = [
    "TermSwitches",
    "ModeSet",
    "LinearTrajectory",
    "EnergyReport",
    "ZeroModeSpectrum",
    "linear_rhs",
    "recovery_symbols",
    "propagate_linear",
    "energy_functional",
    "energy_rate",
    "zero_mode_matrix",
    "zero_mode_spectrum",
    "zero_mode_rhs",
    "propagate_zero_modes",
    "liftup_diagnostic",
    "rate_fit",
    "fit_window",
]


@dataclass(frozen=True)
class TermSwitches:
    """Toggles for the physically distinct linear terms.

    shear gates everything sourced by the background Couette flow: the
    +-kappa/2 terms, the lift-up forcing and the shear part of the pressure.
    buoyancy gates the skew beta-coupling and the buoyant pressure.
    """

    shear: bool = True
    buoyancy: bool = True


@dataclass
class ModeSet:
    """A batch of (k, eta, l) modes propagated together."""

    k: np.ndarray
    eta: np.ndarray
    l: np.ndarray
    volume: float = 1.0
    eta_max: Optional[float] = None

    def __post_init__(self) -> None:
        self.k = np.asarray(self.k, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        if not (self.k.shape == self.eta.shape == self.l.shape):
            raise ValueError("k, eta, l must have matching shapes")

    def __len__(self) -> int:
        return self.k.size

    @classmethod
    def from_grid(cls, grid, mask: np.ndarray) -> "ModeSet":
        k3 = np.broadcast_to(grid.kx[:, None, None], grid.shape)
        eta3 = np.broadcast_to(grid.eta[None, :, None], grid.shape)
        l3 = np.broadcast_to(grid.kz[None, None, :], grid.shape)
        return cls(
            k=k3[mask], eta=eta3[mask], l=l3[mask],
            volume=grid.volume, eta_max=float(np.max(np.abs(grid.eta))),
        )


def recovery_symbols(modes: ModeSet, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Multipliers (c_u2, c_th) with U2 = c_u2 * G, Theta = c_th * Gamma."""
    s = modes.eta - t * modes.k
    q2 = modes.k**2 + modes.l**2
    a2 = q2 + s**2
    if np.any(q2 == 0.0):
        raise ValueError("recovery symbols are singular on x-z mean modes (k = l = 0)")
    return -q2**0.25 / a2**0.75, 1.0 / (q2**0.25 * a2**0.25)


def linear_rhs(
    t: float,
    state: np.ndarray,
    modes: ModeSet,
    nu: float,
    beta: float,
    switches: TermSwitches = TermSwitches(),
) -> np.ndarray:
    """Tendency of the stacked state (4, n) = (U1, U3, G, Gamma)."""
    k, eta, l = modes.k, modes.eta, modes.l
    if np.any(k == 0.0):
        raise ValueError("linear_rhs handles the k != 0 sector; use zero_mode_rhs for k = 0")
    s = eta - t * k
    q2 = k**2 + l**2
    a2 = q2 + s**2
    kappa = k * s / a2
    c_u2, c_th = recovery_symbols(modes, t)

    U1, U3, G, Gm = state
    U2 = c_u2 * G
    Th = c_th * Gm

    rot = beta * np.sqrt(q2 / a2)
    dU1 = -nu * a2 * U1
    dU3 = -nu * a2 * U3
    dG = -nu * a2 * G
    dGm = -nu * a2 * Gm
    if switches.shear:
        dU1 = dU1 + (-1.0 + 2.0 * k**2 / a2) * U2
        dU3 = dU3 + (2.0 * k * l / a2) * U2
        dG = dG + 0.5 * kappa * G
        dGm = dGm - 0.5 * kappa * Gm
    if switches.buoyancy:
        dU1 = dU1 + beta * (k * s / a2) * Th
        dU3 = dU3 + beta * (l * s / a2) * Th
        dG = dG + rot * Gm
        dGm = dGm - rot * G
    return np.stack([dU1, dU3, dG, dGm])


def _rk4_step(rhs: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_step_robust(rhs: Callable, t: float, y: np.ndarray, dt: float, depth: int = 0) -> np.ndarray:
    """RK4 with recursive step halving on non-finite output (up to 8 levels)."""
    out = _rk4_step(rhs, t, y, dt)
    if np.all(np.isfinite(out)):
        return out
    if depth >= 8:
        raise ArithmeticError(f"RK4 step failed at t = {t} after 8 halvings (dt = {dt})")
    half = _rk4_step_robust(rhs, t, y, 0.5 * dt, depth + 1)
    return _rk4_step_robust(rhs, t + 0.5 * dt, half, 0.5 * dt, depth + 1)


@dataclass
class LinearTrajectory:
    times: np.ndarray
    series: dict
    final_state: np.ndarray
    modes: ModeSet


def _mode_l2(values: np.ndarray, volume: float, weight: Optional[np.ndarray] = None) -> float:
    w2 = 1.0 if weight is None else weight**2
    return float(np.sqrt(volume * np.sum(w2 * np.abs(values) ** 2)))


def propagate_linear(
    modes: ModeSet,
    state0: np.ndarray,
    t_end: float,
    dt: float,
    params: MultiplierParams,
    switches: TermSwitches = TermSwitches(),
    t0: float = 0.0,
    checkpoint_every: Optional[float] = None,
    track_energy: bool = True,
) -> LinearTrajectory:
    """RK4-propagate the k != 0 sector, emitting norm series at checkpoints.

    Per-mode symbols stay exact for all t (no products, hence no aliasing),
    but a warning is issued when the horizon exceeds the grid-resolution cap
    t_end * k_max <= eta_max / 2 relevant to fields reconstructed on a grid.
    """
    nu, beta = params.nu, params.beta
    if dt * max(beta, 1e-12) > 0.1 + 1e-12:
        raise ValueError(f"dt = {dt} does not resolve the rotation: need dt*beta <= 0.1")
    if modes.eta_max is not None:
        kmax = float(np.max(np.abs(modes.k)))
        if t_end * kmax > 0.5 * modes.eta_max:
            warnings.warn(
                f"horizon t_end = {t_end} exceeds the resolution cap "
                f"eta_max/(2 k_max) = {0.5 * modes.eta_max / kmax:.3g}; "
                "per-mode symbols remain exact but grid reconstructions tilt "
                "beyond the resolved band",
                stacklevel=2,
            )

    rhs = lambda t, y: linear_rhs(t, y, modes, nu, beta, switches)
    every = checkpoint_every if checkpoint_every is not None else dt
    n_steps = int(round((t_end - t0) / dt))
    stride = max(1, int(round(every / dt)))

    times = []
    rows = {key: [] for key in (
        "aG", "aGamma", "G", "Gamma", "U2_t32", "Theta_t12", "U1", "U3",
        "E", "coer_lo", "coer_hi",
    )}

    def record(t: float, y: np.ndarray) -> None:
        U1, U3, G, Gm = y
        c_u2, c_th = recovery_symbols(modes, t)
        A = main_weight(params, t, modes.k, modes.eta, modes.l)
        bracket = np.sqrt(1.0 + t * t)
        times.append(t)
        rows["aG"].append(_mode_l2(G, modes.volume, A))
        rows["aGamma"].append(_mode_l2(Gm, modes.volume, A))
        rows["G"].append(_mode_l2(G, modes.volume))
        rows["Gamma"].append(_mode_l2(Gm, modes.volume))
        rows["U2_t32"].append(bracket**1.5 * _mode_l2(c_u2 * G, modes.volume))
        rows["Theta_t12"].append(bracket**0.5 * _mode_l2(c_th * Gm, modes.volume))
        rows["U1"].append(_mode_l2(U1, modes.volume))
        rows["U3"].append(_mode_l2(U3, modes.volume))
        if track_energy:
            rep = energy_functional(G, Gm, t, modes, params)
            rows["E"].append(rep.E)
            rows["coer_lo"].append(rep.coercivity_lower)
            rows["coer_hi"].append(rep.coercivity_upper)
        else:
            rows["E"].append(0.0)
            rows["coer_lo"].append(0.0)
            rows["coer_hi"].append(0.0)

    y = np.array(state0, dtype=complex)
    if y.shape != (4, len(modes)):
        raise ValueError(f"state0 must have shape (4, {len(modes)}), got {y.shape}")
    t = t0
    record(t, y)
    for i in range(n_steps):
        y = _rk4_step_robust(rhs, t, y, dt)
        t = t0 + (i + 1) * dt
        if (i + 1) % stride == 0 or i == n_steps - 1:
            record(t, y)

    series = {key: np.asarray(val) for key, val in rows.items()}
    return LinearTrajectory(times=np.asarray(times), series=series, final_state=y, modes=modes)


@dataclass
class EnergyReport:
    E: float
    norm_G: float
    norm_Gamma: float
    cross_term: float
    coercivity_lower: float
    coercivity_upper: float
    within_band: bool


def _chi(modes: ModeSet, t: float) -> np.ndarray:
    """Cross-term symbol k (eta - tk) / (q a); bounded by 1 in modulus."""
    s = modes.eta - t * modes.k
    q2 = modes.k**2 + modes.l**2
    a2 = q2 + s**2
    return modes.k * s / np.sqrt(np.where(q2 == 0.0, 1.0, q2 * a2))


def energy_functional(
    G: np.ndarray,
    Gm: np.ndarray,
    t: float,
    modes: ModeSet,
    params: MultiplierParams,
) -> EnergyReport:
    """Weighted energy E = (1/2)(||AG||^2 + ||AGm||^2) + (1/(2 beta)) <chi AG, AGm>.

    The symbol bound |chi| <= 1 gives the two-sided coercivity band
    (1/2)(1 -+ 1/(2 beta)) (||AG||^2 + ||AGm||^2).
    """
    beta = params.beta
    A = main_weight(params, t, modes.k, modes.eta, modes.l)
    V = modes.volume
    SG = V * np.sum(np.abs(A * G) ** 2)
    SGm = V * np.sum(np.abs(A * Gm) ** 2)
    S = SG + SGm
    chi = _chi(modes, t)
    cross = (0.5 / beta) * V * float(np.sum(chi * A**2 * (G * np.conj(Gm)).real))
    E = 0.5 * (SG + SGm) + cross
    lo = 0.5 * (1.0 - 0.5 / beta) * S
    hi = 0.5 * (1.0 + 0.5 / beta) * S
    tol = 1e-10 * max(S, 1e-300)
    return EnergyReport(
        E=float(E),
        norm_G=float(np.sqrt(SG)),
        norm_Gamma=float(np.sqrt(SGm)),
        cross_term=float(cross),
        coercivity_lower=float(lo),
        coercivity_upper=float(hi),
        within_band=bool(lo - tol <= E <= hi + tol),
    )


def energy_rate(
    G: np.ndarray,
    Gm: np.ndarray,
    t: float,
    modes: ModeSet,
    params: MultiplierParams,
    switches: TermSwitches = TermSwitches(),
) -> float:
    """Analytic dE/dt along the linear (G, Gamma) flow.

    Assembles the weight decay (lambda nu^(1/3) minus the three densities),
    the RHS contraction, and the cross-term time derivative, whose symbol
    derivative is d(chi)/dt = -k^2 q / a^3.
    """
    nu, beta = params.nu, params.beta
    k, eta, l = modes.k, modes.eta, modes.l
    V = modes.volume
    A = main_weight(params, t, k, eta, l)
    A2 = A**2
    dstate = linear_rhs(t, np.stack([np.zeros_like(G), np.zeros_like(G), G, Gm]),
                        modes, nu, beta, switches)
    dG, dGm = dstate[2], dstate[3]

    dens = sum(decay_density(j, t, k, eta, l, nu, beta) for j in (1, 2, 3))
    dlogA = lambda_beta(beta) * nu ** (1.0 / 3.0) - dens

    s = eta - t * k
    q2 = k**2 + l**2
    a2 = q2 + s**2
    chi = _chi(modes, t)
    dchi = -(k**2) * np.sqrt(q2) / a2**1.5

    quad = np.abs(G) ** 2 + np.abs(Gm) ** 2
    rate = np.sum(A2 * (2.0 * dlogA * 0.5 * quad))
    rate += np.sum(A2 * (np.conj(G) * dG + np.conj(Gm) * dGm).real)
    cross_re = (G * np.conj(Gm)).real
    dcross_re = (dG * np.conj(Gm) + G * np.conj(dGm)).real
    rate += (0.5 / beta) * np.sum(A2 * ((dchi + 2.0 * dlogA * chi) * cross_re + chi * dcross_re))
    return float(V * rate)


def zero_mode_matrix(eta: float, l: int, nu: float, beta: float) -> np.ndarray:
    """Real 3x3 generator of the simple-zero sector in the (G0, Gamma0, U1_0) basis."""
    if l == 0:
        raise ValueError("simple-zero sector requires l != 0")
    a2 = eta**2 + l**2
    d = abs(l) / np.sqrt(a2)
    c = abs(l) ** 0.5 / a2**0.75  # -U2 = +|l|^(1/2) a^(-3/2) G0
    return np.array([
        [-nu * a2, beta * d, 0.0],
        [-beta * d, -nu * a2, 0.0],
        [c, 0.0, -nu * a2],
    ])


@dataclass
class ZeroModeSpectrum:
    eta: float
    l: int
    eigenvalues: np.ndarray
    matrix: np.ndarray


def zero_mode_spectrum(eta: float, l: int, nu: float, beta: float) -> ZeroModeSpectrum:
    """Analytic eigenvalues -nu a^2 and -nu a^2 +- i beta |l|/a of the sector."""
    a2 = eta**2 + l**2
    d = abs(l) / np.sqrt(a2)
    eig = np.array([
        -nu * a2,
        -nu * a2 + 1j * beta * d,
        -nu * a2 - 1j * beta * d,
    ])
    return ZeroModeSpectrum(eta=eta, l=l, eigenvalues=eig,
                            matrix=zero_mode_matrix(eta, l, nu, beta))


def zero_mode_rhs(t: float, state: np.ndarray, eta: np.ndarray, l: np.ndarray,
                  nu: float, beta: float) -> np.ndarray:
    """Tendency of the stacked simple-zero state (3, n) = (G0, Gamma0, U1_0).

    beta = 0 is admitted here (the unstratified lift-up regression).
    """
    a2 = eta**2 + l**2
    d = np.abs(l) / np.sqrt(a2)
    c = np.abs(l) ** 0.5 / a2**0.75
    G0, Gm0, U10 = state
    return np.stack([
        -nu * a2 * G0 + beta * d * Gm0,
        -nu * a2 * Gm0 - beta * d * G0,
        -nu * a2 * U10 + c * G0,
    ])


def propagate_zero_modes(
    eta: np.ndarray,
    l: np.ndarray,
    state0: np.ndarray,
    t_end: float,
    dt: float,
    nu: float,
    beta: float,
    checkpoint_every: Optional[float] = None,
) -> tuple[np.ndarray, dict, np.ndarray]:
    """RK4 for the simple-zero sector; returns (times, series, final state)."""
    eta = np.asarray(eta, dtype=float)
    l = np.asarray(l, dtype=float)
    rhs = lambda t, y: zero_mode_rhs(t, y, eta, l, nu, beta)
    every = checkpoint_every if checkpoint_every is not None else dt
    n_steps = int(round(t_end / dt))
    stride = max(1, int(round(every / dt)))

    times, u1, g0, gm0 = [], [], [], []

    def record(t: float, y: np.ndarray) -> None:
        times.append(t)
        g0.append(float(np.sqrt(np.sum(np.abs(y[0]) ** 2))))
        gm0.append(float(np.sqrt(np.sum(np.abs(y[1]) ** 2))))
        u1.append(float(np.sqrt(np.sum(np.abs(y[2]) ** 2))))

    y = np.array(state0, dtype=complex)
    t = 0.0
    record(t, y)
    for i in range(n_steps):
        y = _rk4_step_robust(rhs, t, y, dt)
        t = (i + 1) * dt
        if (i + 1) % stride == 0 or i == n_steps - 1:
            record(t, y)
    series = {"G0": np.asarray(g0), "Gamma0": np.asarray(gm0), "U1_0": np.asarray(u1)}
    return np.asarray(times), series, y


def liftup_diagnostic(
    eta: np.ndarray,
    l: np.ndarray,
    state0: np.ndarray,
    nu: float,
    beta: float,
    t_end: Optional[float] = None,
    dt: Optional[float] = None,
) -> dict:
    """Compare streamwise-velocity growth with and without the buoyancy coupling.

    Runs the simple-zero linear system at the given beta and at beta = 0
    (plain shear flow, where U1_0 grows like t * U2_0(0)).  Reports the
    max-over-time of ||U1_0|| relative to the initial data size for the
    stratified run, and the same ratio at t = nu^(-1/2) for beta = 0.
    """
    if t_end is None:
        t_end = 1.25 * nu**-0.5
    if dt is None:
        dt = min(0.1 / max(beta, 1.0), 0.05 * nu**0.5) if beta > 0 else 0.05 * nu**0.5
        dt = min(dt, 0.1)
    data_norm = float(np.sqrt(np.sum(np.abs(np.asarray(state0)) ** 2)))
    t_mark = nu**-0.5

    times_b, series_b, _ = propagate_zero_modes(eta, l, state0, t_end, dt, nu, beta)
    times_0, series_0, _ = propagate_zero_modes(eta, l, state0, t_end, dt, nu, 0.0)
    i_mark = int(np.argmin(np.abs(times_0 - t_mark)))
    return {
        "beta": beta,
        "nu": nu,
        "data_norm": data_norm,
        "max_u1_stratified": float(series_b["U1_0"].max()) / data_norm,
        "u1_unstratified_at_mark": float(series_0["U1_0"][i_mark]) / data_norm,
        "t_mark": float(times_0[i_mark]),
        "suppression_ratio": float(series_b["U1_0"].max() / max(series_0["U1_0"][i_mark], 1e-300)),
    }


def fit_window(times: np.ndarray, values: np.ndarray, t_min: float = 1.0,
               drop_tail: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Trim the transient (t < t_min) and the final fraction of a series."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    n_keep = len(times) - int(np.floor(drop_tail * len(times)))
    sel = times[:n_keep] >= t_min
    return times[:n_keep][sel], values[:n_keep][sel]


def rate_fit(times, values, model: str = "exponential") -> tuple[float, float]:
    """Least-squares exponent of value ~ C e^(rate t) or C t^power.

    Returns (exponent, rms residual of the log fit).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 10:
        raise ValueError(f"rate_fit needs at least 10 samples, got {len(times)}")
    if np.any(values <= 0.0):
        raise ValueError("rate_fit requires strictly positive values")
    if model == "exponential":
        x = times
    elif model == "power":
        if np.any(times <= 0.0):
            raise ValueError("power-law fit requires positive times")
        x = np.log(times)
    else:
        raise ValueError(f"model must be 'exponential' or 'power', got {model!r}")
    y = np.log(values)
    coeffs = np.polyfit(x, y, 1)
    resid = y - np.polyval(coeffs, x)
    return float(coeffs[0]), float(np.sqrt(np.mean(resid**2)))
