"""Experiment generation for the vessel: inputs, disturbances, measurements.

Every experiment is open loop: the input series is drawn from its own random
stream before any disturbance is sampled and never reads a measurement.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from . import kernels
from .errors import ConfigError, DimensionError, SimulationDivergedError
from .vessel import ShipParams, VesselState, r_matrix, rotation, rotation_inv, ship_rhs

# Static thrust offsets (surge force, sway force, yaw moment). Calibrated by the
# pilot run in benchmarks/calibrate_offsets.py so that surge and sway stay well
# above the current speed under the true model.
DEFAULT_TAU_BAR = (25.0, 90.0, 60.0)


def _vec(values, n, name):
    arr = tuple(float(v) for v in np.broadcast_to(np.asarray(values, dtype=float), (n,)))
    if not all(math.isfinite(v) for v in arr):
        raise ConfigError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian disturbance and measurement-noise moments (variances, not stds)."""

    var_e_nu: tuple = (2e-4, 2e-4, 2e-4)
    var_e_psi: float = 1e-4
    current_mean: tuple = (0.2, 0.2)
    current_var: tuple = (1e-3, 1e-3)
    wind_mean: tuple = (1.0, 1.0)
    wind_var: tuple = (1e-3, 1e-3)
    var_e_aux: tuple = (1e-3, 1e-3, 1e-3)
    var_w: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name, n in (("var_e_nu", 3), ("current_mean", 2), ("current_var", 2),
                        ("wind_mean", 2), ("wind_var", 2), ("var_e_aux", 3), ("var_w", 3)):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))
        object.__setattr__(self, "var_e_psi", float(self.var_e_psi))
        for name in ("var_e_nu", "current_var", "wind_var", "var_e_aux", "var_w"):
            if min(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.var_e_psi < 0:
            raise ConfigError("var_e_psi must be non-negative")

    @classmethod
    def from_mapping(cls, mapping):
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown [noise] keys: {', '.join(sorted(unknown))}")
        return cls(**mapping)

    def with_wind(self, mean):
        return replace(self, wind_mean=(float(mean), float(mean)))

    def without_measurement_noise(self):
        return replace(self, var_e_nu=(0.0,) * 3, var_e_psi=0.0, var_e_aux=(0.0,) * 3)

    def without_disturbances(self):
        return replace(self, current_mean=(0.0, 0.0), current_var=(0.0, 0.0),
                       wind_mean=(0.0, 0.0), wind_var=(0.0, 0.0), var_w=(0.0,) * 3)


@dataclass(frozen=True)
class InputDesign:
    """Static thrust offset plus smoothed random-width pulses (or a zigzag)."""

    tau_bar: tuple = DEFAULT_TAU_BAR
    pulse_amp: tuple | None = None
    width_range: tuple = (50, 200)
    smoothing: float = 10.0
    mode: str = "circle-offset"
    zigzag_period: int = 150
    zigzag_amp: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "tau_bar", _vec(self.tau_bar, 3, "tau_bar"))
        if self.pulse_amp is None:
            amp = tuple(0.5 * abs(t) for t in self.tau_bar)
        else:
            amp = _vec(self.pulse_amp, 3, "pulse_amp")
        object.__setattr__(self, "pulse_amp", amp)
        lo, hi = (int(w) for w in self.width_range)
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid pulse width range {self.width_range}")
        object.__setattr__(self, "width_range", (lo, hi))
        if self.smoothing < 0:
            raise ConfigError("smoothing constant must be non-negative")
        if self.mode not in ("circle-offset", "zigzag-validation"):
            raise ConfigError(f"unknown input mode {self.mode!r}")
        if int(self.zigzag_period) < 1:
            raise ConfigError("zigzag period must be at least one sample")

    @classmethod
    def from_mapping(cls, mapping):
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown [input] keys: {', '.join(sorted(unknown))}")
        return cls(**mapping)

    def mirrored(self):
        """Same design with sway force and yaw moment offsets negated."""
        t1, t2, t3 = self.tau_bar
        return replace(self, tau_bar=(t1, -t2, -t3))

    def validation(self):
        return replace(self, mode="zigzag-validation")


def _smooth(x, smoothing):
    if smoothing == 0:
        return x
    alpha = 1.0 / (1.0 + smoothing)
    return lfilter([alpha], [1.0, alpha - 1.0], x, axis=0)


def design_input(design, n_d, seed=0):
    """Input series ``tau(k) = tau_bar + tau_tilde(k)`` of shape ``(n_d, 3)``."""
    if n_d < 1:
        raise ValueError("N_D must be at least 1")
    tau_bar = np.asarray(design.tau_bar)
    if design.mode == "zigzag-validation":
        k = np.arange(n_d)
        sign = np.where((k // int(design.zigzag_period)) % 2 == 0, 1.0, -1.0)
        yaw = _smooth(design.zigzag_amp * sign, design.smoothing)
        out = np.zeros((n_d, 3))
        out[:, 0] = tau_bar[0]
        out[:, 2] = yaw
        return out
    rng = np.random.default_rng(seed)
    lo, hi = design.width_range
    pulses = np.zeros((n_d, 3))
    for c in range(3):
        pos = 0
        while pos < n_d:
            width = int(rng.integers(lo, hi + 1))
            level = design.pulse_amp[c] * (1.0 if rng.random() < 0.5 else -1.0)
            pulses[pos:pos + width, c] = level
            pos += width
    return tau_bar + _smooth(pulses, design.smoothing)


class Truth(NamedTuple):
    """Latent signals kept for oracle checks; never used by estimators."""

    nu: np.ndarray
    eta: np.ndarray
    current: np.ndarray
    wind: np.ndarray
    w: np.ndarray


@dataclass
class Dataset:
    """One experiment: inputs, measurements and (optionally) hidden truth.

    ``psi0`` is the design heading at ``k = 0``; it is part of the experiment
    description, not a measurement.
    """

    u: np.ndarray
    y: np.ndarray
    y_psi: np.ndarray
    y_aux: np.ndarray | None = None
    psi0: float = 0.0
    dt: float = 1.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)
    truth: Truth | None = None

    def __post_init__(self):
        n = len(self.u)
        for name in ("u", "y", "y_psi", "y_aux"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise DimensionError(name, n, len(arr))

    @property
    def n_d(self):
        return len(self.u)

    @property
    def Y_R(self):
        """Measured disturbance gain ``J^-1(y_psi)[:, :2]``, shape ``(N, 3, 2)``."""
        return r_matrix(self.y_psi)

    def view(self):
        """Estimator-visible copy (truth removed)."""
        return replace(self, truth=None, meta=dict(self.meta))

    def truncate(self, n):
        cut = slice(0, n)
        truth = None
        if self.truth is not None:
            truth = Truth(*(a[cut] for a in self.truth))
        return replace(self, u=self.u[cut], y=self.y[cut], y_psi=self.y_psi[cut],
                       y_aux=None if self.y_aux is None else self.y_aux[cut],
                       truth=truth, meta=dict(self.meta))


def step(params, state, tau, nu_c, nu_w, w=None, dt=1.0):
    """One Euler step of the vessel; ``nu_c``/``nu_w`` are body-frame vectors."""
    nu = np.asarray(state.nu, dtype=float)
    eta = np.asarray(state.eta, dtype=float)
    nu_r = nu - np.asarray(nu_c, dtype=float)
    nu_q = nu - np.asarray(nu_w, dtype=float)
    inc = ship_rhs(params.as_array(), nu_r, nu_q, np.asarray(tau, dtype=float))
    nu_next = nu + dt * inc + (0.0 if w is None else np.asarray(w, dtype=float))
    eta_next = eta + dt * rotation(eta[2]) @ nu
    if not (np.all(np.isfinite(nu_next)) and np.all(np.isfinite(eta_next))):
        raise SimulationDivergedError(1, "vessel step")
    return VesselState(nu_next, eta_next)


def equilibrium(theta, tau, dt=1.0, n_iter=3000, what="equilibrium search"):
    """Undisturbed steady velocity under a constant input (by forward iteration)."""
    tau_series = np.broadcast_to(np.asarray(tau, dtype=float), (n_iter, 3))
    nu, _ = kernels.simulate_ship(np.asarray(theta, dtype=float), np.zeros(3), 0.0,
                                  tau_series, dt=dt, what=what)
    return nu[-1].copy()


def run_experiment(params, design, noise, n_d, seed=0, psi0=0.0, dt=1.0, nu0=None):
    """Simulate one experiment and synthesize its measurements.

    The true vessel starts at its undisturbed equilibrium for ``tau(0)`` (unless
    ``nu0`` is given) with heading ``psi0``. The auxiliary measurement is the
    additive offset ``y_aux = -nu_w + e_aux`` so that ``y + y_aux`` measures the
    wind-relative velocity.
    """
    if n_d < 2:
        raise ValueError("an experiment needs at least two samples")
    theta = params.as_array() if isinstance(params, ShipParams) else np.asarray(params, float)
    in_seq, dist_seq = np.random.SeedSequence(seed).spawn(2)
    tau = design_input(design, n_d, np.random.default_rng(in_seq))
    rng = np.random.default_rng(dist_seq)

    def gauss(shape, mean, var):
        return np.asarray(mean) + rng.standard_normal(shape) * np.sqrt(np.asarray(var))

    current = gauss((n_d, 2), noise.current_mean, noise.current_var)
    wind = gauss((n_d, 2), noise.wind_mean, noise.wind_var)
    w = gauss((n_d, 3), 0.0, noise.var_w)
    e_nu = gauss((n_d, 3), 0.0, noise.var_e_nu)
    e_psi = gauss((n_d,), 0.0, noise.var_e_psi)
    e_aux = gauss((n_d, 3), 0.0, noise.var_e_aux)

    if nu0 is None:
        nu0 = equilibrium(theta, tau[0], dt)
    nu, eta = kernels.simulate_ship(theta, nu0, psi0, tau, current, wind,
                                    w if any(noise.var_w) else None, dt, what="experiment")
    psi = eta[:, 2]
    nu_w = np.einsum("kij,kj->ki", r_matrix(psi), wind)
    meta = {
        "std_e_nu": [math.sqrt(v) for v in noise.var_e_nu],
        "std_e_psi": math.sqrt(noise.var_e_psi),
        "std_e_aux": [math.sqrt(v) for v in noise.var_e_aux],
        "tau_bar": list(design.tau_bar),
        "wind_mean": list(noise.wind_mean),
    }
    return Dataset(u=tau, y=nu + e_nu, y_psi=psi + e_psi, y_aux=-nu_w + e_aux, psi0=float(psi0),
                   dt=float(dt), seed=seed if isinstance(seed, int) else None, meta=meta,
                   truth=Truth(nu, eta, current, wind, w))


# ---------------------------------------------------------------------------
# Excitation diagnostics
# ---------------------------------------------------------------------------

class ChannelExcitation(NamedTuple):
    channel: int
    sign: int
    sign_fraction: float
    min_abs: float
    amplitude_violation: float
    violated: bool


class ExcitationReport(NamedTuple):
    measured: tuple
    relative: tuple | None

    def flagged(self, which="measured"):
        rows = self.measured if which == "measured" else (self.relative or ())
        return [c.channel for c in rows if c.violated]

    def format(self):
        lines = ["signal    ch  sign  sign-frac  min|.|      amp-viol  flag"]
        for label, rows in (("y", self.measured), ("y+y_aux", self.relative or ())):
            for c in rows:
                lines.append(f"{label:<9} {c.channel:>2}  {c.sign:+d}    {c.sign_fraction:8.4f}  "
                             f"{c.min_abs:10.3e}  {c.amplitude_violation:8.4f}  "
                             f"{'VIOLATED' if c.violated else 'ok'}")
        return "\n".join(lines)


def _noise_std(ds, key, signal):
    std = ds.meta.get(key)
    if std is not None:
        return np.broadcast_to(np.asarray(std, dtype=float), (signal.shape[1],))
    # Unknown noise level: white noise dominates first differences of slow signals.
    return np.std(np.diff(signal, axis=0), axis=0) / math.sqrt(2.0)


def _channel_report(signal, margin, max_violation):
    rows = []
    for c in range(signal.shape[1]):
        x = signal[:, c]
        sign = int(np.sign(np.mean(x)))
        frac = float(np.mean(np.sign(x) == sign)) if sign != 0 else 0.0
        amp = float(np.mean(np.abs(x) <= margin[c]))
        rows.append(ChannelExcitation(c + 1, sign, frac, float(np.min(np.abs(x))), amp,
                                      (1.0 - frac) > max_violation or amp > max_violation))
    return tuple(rows)


def check_excitation(ds, sigma_margin=3.0, max_violation=0.01):
    """Sign-constancy and amplitude diagnostics per state channel.

    A channel is flagged when more than ``max_violation`` of its samples differ
    in sign from the channel mean, or lie within ``sigma_margin`` noise standard
    deviations of zero. Never raises on poor data.
    """
    y = np.asarray(ds.y, dtype=float)
    margin = sigma_margin * _noise_std(ds, "std_e_nu", y)
    measured = _channel_report(y, margin, max_violation)
    relative = None
    if ds.y_aux is not None:
        rel = y + ds.y_aux
        std_aux = ds.meta.get("std_e_aux")
        if std_aux is not None and ds.meta.get("std_e_nu") is not None:
            m = sigma_margin * np.hypot(np.asarray(ds.meta["std_e_nu"], float),
                                        np.asarray(std_aux, float))
        else:
            m = sigma_margin * _noise_std(ds, "__none__", rel)
        relative = _channel_report(rel, m, max_violation)
    return ExcitationReport(measured, relative)


# ---------------------------------------------------------------------------
# CSV exchange
# ---------------------------------------------------------------------------

_MEAS_COLS = ["k", "u1", "u2", "u3", "y1", "y2", "y3", "y_psi", "yaux1", "yaux2", "yaux3"]
_TRUTH_COLS = ["nu1", "nu2", "nu3", "eta_x", "eta_y", "eta_psi", "cur_ns", "cur_ew",
               "wind_ns", "wind_ew", "w1", "w2", "w3"]


def _fmt(x):
    return format(float(x), ".17g")


def write_dataset_csv(ds, path, truth=False):
    """Write one row per sample; metadata goes to leading ``#`` comment lines."""
    if truth and ds.truth is None:
        raise ValueError("dataset carries no truth block")
    meta = {"psi0": ds.psi0, "dt": ds.dt, "seed": ds.seed, **ds.meta}
    cols = _MEAS_COLS + (_TRUTH_COLS if truth else [])
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            if value is None:
                continue
            if isinstance(value, (list, tuple)):
                value = " ".join(_fmt(v) for v in value)
            elif isinstance(value, float):
                value = _fmt(value)
            fh.write(f"# {key} = {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for k in range(ds.n_d):
            row = [str(k)] + [_fmt(v) for v in ds.u[k]] + [_fmt(v) for v in ds.y[k]]
            row.append(_fmt(ds.y_psi[k]))
            row += [_fmt(v) for v in ds.y_aux[k]] if ds.y_aux is not None else ["", "", ""]
            if truth:
                t = ds.truth
                for arr in (t.nu[k], t.eta[k], t.current[k], t.wind[k], t.w[k]):
                    row += [_fmt(v) for v in arr]
            writer.writerow(row)


def _parse_meta(value):
    parts = value.split()
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        return value
    if len(nums) == 1 and not value.strip().startswith("["):
        return nums[0]
    return nums


def read_dataset_csv(path):
    """Inverse of :func:`write_dataset_csv` (truth block restored when present)."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = _parse_meta(value.strip())
        elif line.strip():
            body.append(line)
    if not body:
        raise ConfigError(f"{path}: missing header row")
    reader = csv.reader(body)
    header = next(reader)
    if header[:len(_MEAS_COLS)] != _MEAS_COLS:
        raise ConfigError(f"{path}: unexpected header {header[:len(_MEAS_COLS)]}")
    rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    has_aux = rows[0][8] != ""
    num = np.array([[float(v) if v != "" else np.nan for v in r] for r in rows])
    truth = None
    if header[len(_MEAS_COLS):] == _TRUTH_COLS:
        t = num[:, len(_MEAS_COLS):]
        truth = Truth(t[:, 0:3], t[:, 3:6], t[:, 6:8], t[:, 8:10], t[:, 10:13])
    psi0 = float(meta.pop("psi0", 0.0))
    dt = float(meta.pop("dt", 1.0))
    seed = meta.pop("seed", None)
    seed = int(seed) if isinstance(seed, float) else None
    return Dataset(u=num[:, 1:4], y=num[:, 4:7], y_psi=num[:, 7],
                   y_aux=num[:, 8:11] if has_aux else None, psi0=psi0, dt=dt, seed=seed,
                   meta=meta, truth=truth)
