"""Experiment orchestration: validated configs, runs, scans and reports.

A run is described by a versioned JSON document (see ExperimentConfig); the
harness validates it field by field, dispatches on the mode (linear,
dispersive, dns, threshold), and writes a fixed-column series.csv together
with metadata.json and summary.json into the output directory.  CSV cells are
formatted with repr, so identical configs reproduce byte-identical files.

The default output root is the STRATSHEAR_OUTPUT environment variable,
falling back to ./stratshear_runs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import dispersive as disp
from . import lineardyn, solver
from .multipliers import MultiplierParams, lambda_beta, scan_multipliers
from .spectral import Grid

__all__ = [
    "ConfigError",
    "PhysicsConfig",
    "GridConfig",
    "TimeConfig",
    "InitialConfig",
    "BisectionConfig",
    "ExperimentConfig",
    "ThresholdResult",
    "write_series_csv",
    "run",
    "threshold_bisection",
    "fit_report",
    "render_fit_report",
    "output_root",
]

CONFIG_VERSION = 1

MODES = ("linear", "dispersive", "dns", "threshold")


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted field name."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"invalid config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class PhysicsConfig:
    nu: float = 1e-2
    beta: float = 1.0
    m: int = 3


@dataclass
class GridConfig:
    Nx: int = 32
    Ny: int = 64
    Nz: int = 32
    Ly: float = 4.0 * np.pi

    def build(self) -> Grid:
        return Grid(Nx=self.Nx, Ny=self.Ny, Nz=self.Nz, Ly=self.Ly)


@dataclass
class TimeConfig:
    dt: float = 0.05
    t_end: float = 20.0
    checkpoint_every: Optional[float] = None


@dataclass
class InitialConfig:
    kind: str = "random_band"
    eps0: float = 1e-3
    seed: int = 0
    mean_free: bool = False
    packet: Optional[dict] = None


@dataclass
class BisectionConfig:
    eps_lo: float = 1e-6
    eps_hi: float = 1e-1
    max_iters: int = 12
    tol_rel: float = 0.25
    max_expand: int = 4


@dataclass
class ExperimentConfig:
    mode: str = "dns"
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    bisection: Optional[BisectionConfig] = None
    seed: int = 0
    output_dir: Optional[str] = None
    config_version: int = CONFIG_VERSION

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError("config_version",
                              f"expected {CONFIG_VERSION}, got {self.config_version!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        p = self.physics
        if not 0.0 < p.nu < 1.0:
            raise ConfigError("physics.nu", f"must lie in (0, 1), got {p.nu!r}")
        if p.beta == 0.0:
            if self.mode not in ("linear", "dns"):
                raise ConfigError("physics.beta",
                                  "beta = 0 is reserved for lift-up regression runs "
                                  "(modes 'linear' and 'dns')")
        elif not p.beta > 0.5:
            raise ConfigError("physics.beta", f"must exceed 1/2 (or be 0), got {p.beta!r}")
        if not (isinstance(p.m, int) and p.m >= 3):
            raise ConfigError("physics.m", f"must be an integer >= 3, got {p.m!r}")
        g = self.grid
        for name in ("Nx", "Ny", "Nz"):
            n = getattr(g, name)
            if not (isinstance(n, int) and n > 0 and n % 2 == 0):
                raise ConfigError(f"grid.{name}", f"must be a positive even integer, got {n!r}")
        if not g.Ly > 0:
            raise ConfigError("grid.Ly", f"must be positive, got {g.Ly!r}")
        t = self.time
        if not t.dt > 0:
            raise ConfigError("time.dt", f"must be positive, got {t.dt!r}")
        if not t.t_end > 0:
            raise ConfigError("time.t_end", f"must be positive, got {t.t_end!r}")
        if t.dt * p.beta > 0.1 + 1e-12:
            raise ConfigError("time.dt",
                              f"dt*beta = {t.dt * p.beta:.3g} does not resolve the rotation "
                              "(need <= 0.1)")
        if t.checkpoint_every is not None and not t.checkpoint_every > 0:
            raise ConfigError("time.checkpoint_every",
                              f"must be positive when set, got {t.checkpoint_every!r}")
        ini = self.initial
        if ini.kind not in ("random_band", "packet", "gaussian_plane", "zero_mode"):
            raise ConfigError("initial.kind", f"unknown kind {ini.kind!r}")
        if ini.eps0 < 0:
            raise ConfigError("initial.eps0", f"must be nonnegative, got {ini.eps0!r}")
        if self.mode == "threshold":
            if self.bisection is None:
                raise ConfigError("bisection", "required for threshold mode")
            b = self.bisection
            if not 0 < b.eps_lo < b.eps_hi:
                raise ConfigError("bisection.eps_lo",
                                  f"need 0 < eps_lo < eps_hi, got [{b.eps_lo!r}, {b.eps_hi!r}]")
            if b.max_iters < 1:
                raise ConfigError("bisection.max_iters", f"must be >= 1, got {b.max_iters!r}")
            if not b.tol_rel > 0:
                raise ConfigError("bisection.tol_rel", f"must be positive, got {b.tol_rel!r}")
            if b.max_expand < 0:
                raise ConfigError("bisection.max_expand", f"must be >= 0, got {b.max_expand!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"mode", "physics", "grid", "time", "initial", "bisection", "seed",
                 "output_dir", "config_version"}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown top-level field")

        def build(section_cls, key):
            sub = doc.get(key)
            if sub is None:
                return None if key == "bisection" else section_cls()
            if not isinstance(sub, dict):
                raise ConfigError(key, f"must be an object, got {type(sub).__name__}")
            names = {f for f in section_cls.__dataclass_fields__}
            for k in sub:
                if k not in names:
                    raise ConfigError(f"{key}.{k}", "unknown field")
            return section_cls(**sub)

        return cls(
            mode=doc.get("mode", "dns"),
            physics=build(PhysicsConfig, "physics"),
            grid=build(GridConfig, "grid"),
            time=build(TimeConfig, "time"),
            initial=build(InitialConfig, "initial"),
            bisection=build(BisectionConfig, "bisection"),
            seed=doc.get("seed", 0),
            output_dir=doc.get("output_dir"),
            config_version=doc.get("config_version", CONFIG_VERSION),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("<document>", "top level must be a JSON object")
        return cls.from_dict(doc)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def output_root() -> str:
    return os.environ.get("STRATSHEAR_OUTPUT", "stratshear_runs")


def _resolve_output_dir(config: ExperimentConfig) -> str:
    if config.output_dir is not None:
        return config.output_dir
    return os.path.join(output_root(), f"{config.mode}_seed{config.seed}")


def write_series_csv(path: str, times: np.ndarray, series: dict,
                     columns: list[str]) -> None:
    """Fixed-column CSV with repr-formatted cells (byte-stable across runs)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *columns])
        for i in range(len(times)):
            writer.writerow([repr(float(times[i]))]
                            + [repr(float(series[c][i])) for c in columns])


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _linear_initial(config: ExperimentConfig, grid: Grid):
    """ModeSet and 4-vector state for the linear mode."""
    ini = config.initial
    if ini.kind == "packet":
        pk = dict(ini.packet or {})
        k = int(pk.get("k", 1))
        l = int(pk.get("l", 1))
        eta0 = float(pk.get("eta0", -12.0))
        sigma = float(pk.get("sigma", 2.0))
        amp_g = complex(pk.get("amp_G", 1.0))
        amp_gm = complex(pk.get("amp_Gamma", 0.0))
        if k == 0:
            raise ConfigError("initial.packet.k", "linear packets live in the k != 0 sector")
        eta = np.sort(grid.eta)
        modes = lineardyn.ModeSet(
            k=np.full(eta.shape, float(k)), eta=eta, l=np.full(eta.shape, float(l)),
            volume=grid.volume, eta_max=float(np.max(np.abs(grid.eta))),
        )
        profile = np.exp(-((eta - eta0) ** 2) / (2.0 * sigma**2))
        state = np.zeros((4, len(modes)), dtype=complex)
        state[2] = amp_g * profile
        state[3] = amp_gm * profile
        scale = ini.eps0 / max(np.sqrt(grid.volume * np.sum(np.abs(state) ** 2)), 1e-300)
        return modes, state * scale
    if ini.kind == "random_band":
        rng = np.random.default_rng(ini.seed)
        eta = np.sort(grid.eta)
        n = len(eta)
        modes = lineardyn.ModeSet(
            k=np.ones(n), eta=eta, l=np.ones(n),
            volume=grid.volume, eta_max=float(np.max(np.abs(grid.eta))),
        )
        state = (rng.standard_normal((4, n)) + 1j * rng.standard_normal((4, n)))
        state *= np.exp(-(eta**2) / (2.0 * (0.25 * np.max(np.abs(eta))) ** 2))
        scale = ini.eps0 / max(np.sqrt(grid.volume * np.sum(np.abs(state) ** 2)), 1e-300)
        return modes, state * scale
    raise ConfigError("initial.kind", f"{ini.kind!r} is not valid for mode 'linear'")


def _run_linear(config: ExperimentConfig, outdir: str) -> dict:
    grid = config.grid.build()
    p = config.physics
    modes, state0 = _linear_initial(config, grid)
    if p.beta == 0.0:
        raise ConfigError("physics.beta",
                          "the linear CLI mode propagates the k != 0 sector and "
                          "needs beta > 1/2; use zero-mode diagnostics for beta = 0")
    params = MultiplierParams(nu=p.nu, beta=p.beta, m=p.m)
    traj = lineardyn.propagate_linear(
        modes, state0, t_end=config.time.t_end, dt=config.time.dt, params=params,
        checkpoint_every=config.time.checkpoint_every,
    )
    columns = list(traj.series)
    write_series_csv(os.path.join(outdir, "series.csv"), traj.times, traj.series, columns)
    report = fit_report(traj.times, traj.series, nu=p.nu, beta=p.beta, kind="linear")
    summary = {
        "mode": "linear",
        "n_modes": len(modes),
        "final": {key: float(traj.series[key][-1]) for key in columns},
        "fit_report": report,
    }
    return summary


def _run_dispersive(config: ExperimentConfig, outdir: str) -> dict:
    p = config.physics
    ini = config.initial
    plane = disp.Plane2D(Ny=config.grid.Ny, Nz=config.grid.Nz, Ly=config.grid.Ly)
    pk = dict(ini.packet or {})
    sigma = float(pk.get("sigma_y", 1.0))
    l0 = int(pk.get("l0", 1))
    if not 0 < l0 < plane.Nz // 2:
        raise ConfigError("initial.packet.l0",
                          f"need 0 < l0 < Nz/2 = {plane.Nz // 2}, got {l0}")
    y, z = plane.points()
    h = ini.eps0 * np.exp(-(y[:, None] ** 2) / (2.0 * sigma**2)) * np.cos(l0 * z[None, :])
    hhat = plane.forward(h)
    hhat[:, 0] = 0.0
    t_end = config.time.t_end
    n_pts = max(2, int(round(t_end / max(config.time.checkpoint_every or 1.0, 1e-6))))
    times = np.geomspace(1.0, max(t_end, 1.0 + 1e-9), num=min(n_pts, 200))
    scan = disp.sup_decay_scan(plane, hhat, times, beta=p.beta, nu=p.nu)
    series = {"sup": scan["sup"], "scaled": scan["scaled"]}
    write_series_csv(os.path.join(outdir, "series.csv"), scan["times"], series,
                     ["sup", "scaled"])
    report = fit_report(scan["times"], series, nu=p.nu, beta=p.beta, kind="dispersive")
    return {
        "mode": "dispersive",
        "budget_w21": scan["budget_w21"],
        "max_scaled": float(np.max(scan["scaled"])),
        "within_budget": bool(np.max(scan["scaled"]) <= scan["budget_w21"]),
        "fit_report": report,
    }


def _run_dns(config: ExperimentConfig, outdir: str) -> dict:
    grid = config.grid.build()
    p = config.physics
    params = solver.SolverParams(nu=p.nu, beta=p.beta, m=p.m)
    state0, init_info = solver.make_initial_data(
        grid, params, eps0=config.initial.eps0, seed=config.initial.seed,
        mean_free=config.initial.mean_free,
    )
    result = solver.simulate(
        state0, params, t_end=config.time.t_end, dt=config.time.dt,
        checkpoint_every=config.time.checkpoint_every, output_dir=outdir,
    )
    columns = list(solver._SERIES_KEYS)
    write_series_csv(os.path.join(outdir, "series.csv"), result.times, result.series, columns)
    return {
        "mode": "dns",
        "verdict": result.verdict,
        "blowup_time": result.blowup_time,
        "zero_excursion": result.zero_excursion,
        "weight_drift_max": result.weight_drift_max,
        "n_steps": result.n_steps,
        "wall_time": result.wall_time,
        "initial_data": init_info,
        "final": {key: float(result.series[key][-1]) for key in columns},
    }


@dataclass
class ThresholdResult:
    """Outcome of a log-space stability-threshold bisection."""

    nu: float
    beta: float
    eps_star: float
    bracket: tuple[float, float]
    trials: list
    fitted_exponent: Optional[float]
    status: str


def threshold_bisection(
    grid: Grid,
    params: solver.SolverParams,
    t_end: float,
    dt: float,
    eps_lo: float,
    eps_hi: float,
    seed: int = 0,
    max_iters: int = 12,
    tol_rel: float = 0.25,
    max_expand: int = 4,
    mean_free: bool = False,
) -> ThresholdResult:
    """Bisect the data size between a stable and an unstable run (log midpoints).

    The bracket auto-expands by doublings (at most max_expand each way) when
    an endpoint has the wrong verdict.  A failure to straddle is recorded as
    status "inconclusive" rather than raised.
    """
    trials: list[tuple[float, str]] = []

    def probe(eps: float) -> str:
        state0, _ = solver.make_initial_data(grid, params, eps0=eps, seed=seed,
                                             mean_free=mean_free)
        result = solver.simulate(state0, params, t_end=t_end, dt=dt,
                                 checkpoint_every=max(10 * dt, t_end / 50.0),
                                 track_v0=False, early_exit=True)
        trials.append((float(eps), result.verdict))
        return result.verdict

    lo, hi = float(eps_lo), float(eps_hi)
    v_lo = probe(lo)
    for _ in range(max_expand):
        if v_lo == "stable":
            break
        lo *= 0.5
        v_lo = probe(lo)
    v_hi = probe(hi)
    for _ in range(max_expand):
        if v_hi == "unstable":
            break
        hi *= 2.0
        v_hi = probe(hi)

    if v_lo != "stable" or v_hi != "unstable":
        return ThresholdResult(nu=params.nu, beta=params.beta, eps_star=float("nan"),
                               bracket=(lo, hi), trials=trials, fitted_exponent=None,
                               status="inconclusive")

    for _ in range(max_iters):
        if hi / lo <= 1.0 + tol_rel:
            break
        mid = float(np.sqrt(lo * hi))
        if probe(mid) == "stable":
            lo = mid
        else:
            hi = mid
    eps_star = float(np.sqrt(lo * hi))
    return ThresholdResult(nu=params.nu, beta=params.beta, eps_star=eps_star,
                           bracket=(lo, hi), trials=trials, fitted_exponent=None,
                           status="bracketed")


def _run_threshold(config: ExperimentConfig, outdir: str) -> dict:
    grid = config.grid.build()
    p = config.physics
    b = config.bisection
    params = solver.SolverParams(nu=p.nu, beta=p.beta, m=p.m)
    result = threshold_bisection(
        grid, params, t_end=config.time.t_end, dt=config.time.dt,
        eps_lo=b.eps_lo, eps_hi=b.eps_hi, seed=config.initial.seed,
        max_iters=b.max_iters, tol_rel=b.tol_rel, max_expand=b.max_expand,
        mean_free=config.initial.mean_free,
    )
    trials_series = {
        "eps0": np.array([tr[0] for tr in result.trials]),
        "stable": np.array([1.0 if tr[1] == "stable" else 0.0 for tr in result.trials]),
    }
    write_series_csv(os.path.join(outdir, "series.csv"),
                     np.arange(len(result.trials), dtype=float),
                     trials_series, ["eps0", "stable"])
    return {
        "mode": "threshold",
        "status": result.status,
        "eps_star": result.eps_star,
        "bracket": list(result.bracket),
        "n_trials": len(result.trials),
        "trials": [[tr[0], tr[1]] for tr in result.trials],
    }


def run(config: ExperimentConfig) -> dict:
    """Validate, dispatch and persist one experiment; returns the summary."""
    config.validate()
    outdir = _resolve_output_dir(config)
    os.makedirs(outdir, exist_ok=True)
    dispatch = {
        "linear": _run_linear,
        "dispersive": _run_dispersive,
        "dns": _run_dns,
        "threshold": _run_threshold,
    }
    summary = dispatch[config.mode](config, outdir)
    _write_json(os.path.join(outdir, "metadata.json"), {
        "config": json.loads(config.to_json()),
        "package": "stratshear",
    })
    _write_json(os.path.join(outdir, "summary.json"), summary)
    summary["output_dir"] = outdir
    return summary


def fit_report(times: np.ndarray, series: dict, nu: float, beta: float,
               kind: str = "linear") -> dict:
    """Fitted decay rates and exponents next to the reference values.

    Exponential rates are fitted to the weighted norms (reference: the
    allowance lambda(beta) nu^(1/3) built into the weight); power laws to the
    compensated damped norms (references -3/2 and -1/2) and to dispersive sup
    scans (reference -1/3).  Series with too few usable samples are skipped.
    """
    rows = []

    def try_fit(name, values, model, predicted, compensate=None):
        vals = np.asarray(values, dtype=float)
        tt, vv = lineardyn.fit_window(times, vals)
        if compensate is not None:
            vv = vv * compensate(tt)
        if len(tt) < 10 or np.any(vv <= 0.0):
            return
        exponent, resid = lineardyn.rate_fit(tt, vv, model=model)
        rows.append({"series": name, "model": model, "fitted": exponent,
                     "predicted": predicted, "residual_rms": resid})

    allowance = lambda_beta(beta) * nu ** (1.0 / 3.0) if beta > 0.5 else 0.0
    if kind == "linear":
        for key in ("aG", "aGamma"):
            if key in series:
                try_fit(key, series[key], "exponential", 0.0)
        if "U2_t32" in series:
            try_fit("U2", series["U2_t32"], "power", -1.5,
                    compensate=lambda tt: (1.0 + tt**2) ** -0.75)
        if "Theta_t12" in series:
            try_fit("Theta", series["Theta_t12"], "power", -0.5,
                    compensate=lambda tt: (1.0 + tt**2) ** -0.25)
    elif kind == "dispersive":
        if "sup" in series:
            try_fit("sup", series["sup"], "power", -1.0 / 3.0)
    else:
        for key, values in series.items():
            try_fit(key, values, "exponential", 0.0)
    return {"rows": rows, "rate_allowance": allowance}


def render_fit_report(report: dict) -> str:
    """Plain-text table of a fit_report result."""
    lines = [f"{'series':<12} {'model':<12} {'fitted':>12} {'predicted':>12} {'resid':>10}"]
    for row in report["rows"]:
        lines.append(
            f"{row['series']:<12} {row['model']:<12} {row['fitted']:>12.5g} "
            f"{row['predicted']:>12.5g} {row['residual_rms']:>10.2e}"
        )
    lines.append(f"weight rate allowance: {report['rate_allowance']:.5g}")
    return "\n".join(lines)


def verify_multipliers_csv(path: str, n_samples: int = 100_000, seed: int = 0,
                           beta: float = 1.0) -> dict:
    """Run the randomized weight scan and dump per-sample columns to CSV."""
    scan = scan_multipliers(n_samples=n_samples, seed=seed, beta=beta)
    cols = scan["columns"]
    names = list(cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        n = len(cols[names[0]])
        for i in range(n):
            writer.writerow([repr(float(cols[name][i])) for name in names])
    return scan["summary"]
