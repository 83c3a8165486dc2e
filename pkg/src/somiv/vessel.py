"""Three-degree-of-freedom surface vessel in the second-order modulus form.

The discretized (unit sample) maneuvering model is

    nu(k) = nu(k-1) + blockdiag(phi_u, phi_v, phi_r).T @ theta

with hydrodynamic terms in the current-relative velocity ``nu_r = nu - nu_c``
and aerodynamic terms in the wind-relative velocity ``nu_q = nu - nu_w``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .som import Cross, CrossAbs, Linear, RegressorSpec, Zero, eval_som, merge_duplicate_rows

# Display names in parameter-vector order.
PARAM_NAMES = (
    "X_u", "X_vr", "X_|u|u", "W_|u|u", "X_tau",
    "Y_v", "Y_ur", "Y_|v|v", "Y_|v|r", "W_|v|v", "Y_tau",
    "N_r", "N_uv", "N_|v|v", "N_|v|r", "W_uv", "N_tau",
)

TRUE_VALUES = (
    -0.05, 1.0, -0.05, -0.0005, 0.02,
    -0.2, -0.65, -0.2, -0.1, -0.0015, 0.02,
    -0.1, -0.0015, -0.001, -0.04, -0.00003, 0.0003,
)

NOMINAL_VALUES = (
    -0.2, 0.8, 0.0, 0.0, 0.01,
    -0.3, -0.8, 0.0, 0.0, 0.0, 0.01,
    -0.15, 0.0, 0.0, 0.0, 0.0, 0.00015,
)

# Parameters acting on the wind-relative velocity.
WIND_PARAMS = ("W_|u|u", "W_|v|v", "W_uv")
# Dissipative coefficients that should be non-positive.
_DAMPING = ("X_u", "X_|u|u", "W_|u|u", "Y_v", "Y_|v|v", "W_|v|v", "N_r", "N_|v|v")


def normalize_name(name):
    """Map spellings such as ``X_{|u|u}``, ``X_uu`` or ``X_τ`` to a display name."""
    key = str(name).strip().replace("{", "").replace("}", "").replace("τ", "tau")
    key = key.replace("\\tau", "tau").replace("\\", "")
    if key in PARAM_NAMES:
        return key
    bare = {n.replace("|", ""): n for n in PARAM_NAMES}
    if key.replace("|", "") in bare:
        return bare[key.replace("|", "")]
    raise ConfigError(f"unknown ship parameter {name!r}")


@dataclass(frozen=True)
class ShipParams:
    """The 17 coefficients of the discretized maneuvering model."""

    X_u: float
    X_vr: float
    X_uu: float
    W_uu: float
    X_tau: float
    Y_v: float
    Y_ur: float
    Y_vv: float
    Y_vr: float
    W_vv: float
    Y_tau: float
    N_r: float
    N_uv: float
    N_vv: float
    N_vr: float
    W_uv: float
    N_tau: float

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value):
                raise ConfigError(f"ship parameter {f.name} is not finite")
            object.__setattr__(self, f.name, value)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (17,):
            raise ConfigError(f"expected 17 ship parameters, got {values.size}")
        return cls(*values)

    @classmethod
    def from_mapping(cls, mapping, base=None):
        """Build from a name -> value mapping; missing names fall back to ``base``."""
        values = dict(zip(PARAM_NAMES, base.as_array() if base is not None else [None] * 17))
        for name, value in mapping.items():
            values[normalize_name(name)] = value
        missing = [n for n, v in values.items() if v is None]
        if missing:
            raise ConfigError(f"missing ship parameters: {', '.join(missing)}")
        return cls(*(values[n] for n in PARAM_NAMES))

    @classmethod
    def preset(cls, name):
        if name == "true":
            return cls(*TRUE_VALUES)
        if name == "nominal":
            return cls(*NOMINAL_VALUES)
        raise ConfigError(f"unknown parameter preset {name!r} (expected 'true' or 'nominal')")

    def as_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)])

    def as_dict(self):
        return dict(zip(PARAM_NAMES, self.as_array().tolist()))

    def check_dissipative(self):
        """Warn when a damping coefficient is positive; returns offending names."""
        bad = [n for n in _DAMPING if self.as_dict()[n] > 0]
        if bad:
            warnings.warn(f"non-dissipative damping coefficients: {', '.join(bad)}",
                          RuntimeWarning, stacklevel=2)
        return bad


class VesselState(NamedTuple):
    """Body velocities ``nu = [u, v, r]`` and pose ``eta = [x, y, psi]`` (psi unwrapped)."""

    nu: np.ndarray
    eta: np.ndarray


class WorldDisturbance(NamedTuple):
    """Inertial-frame current and wind velocities in m/s."""

    current_NS: float = 0.0
    current_EW: float = 0.0
    wind_NS: float = 0.0
    wind_EW: float = 0.0


class ShipStructure(NamedTuple):
    hydro: RegressorSpec
    wind: RegressorSpec
    theta_map: tuple


# States are [u, v, r] = indices 1..3, inputs [tau1, tau2, tau3] = 4..6.
_U, _V, _R = 1, 2, 3
_Z = Zero()

_ROWS = {
    "X_u": (Linear(_U), _Z, _Z),
    "X_vr": (Cross(_V, _R), _Z, _Z),
    "X_|u|u": (CrossAbs(_U, _U), _Z, _Z),
    "W_|u|u": (CrossAbs(_U, _U), _Z, _Z),
    "X_tau": (Linear(4), _Z, _Z),
    "Y_v": (_Z, Linear(_V), _Z),
    "Y_ur": (_Z, Cross(_U, _R), _Z),
    "Y_|v|v": (_Z, CrossAbs(_V, _V), _Z),
    "Y_|v|r": (_Z, CrossAbs(_R, _V), _Z),
    "W_|v|v": (_Z, CrossAbs(_V, _V), _Z),
    "Y_tau": (_Z, Linear(5), _Z),
    "N_r": (_Z, _Z, Linear(_R)),
    "N_uv": (_Z, _Z, Cross(_U, _V)),
    "N_|v|v": (_Z, _Z, CrossAbs(_V, _V)),
    "N_|v|r": (_Z, _Z, CrossAbs(_R, _V)),
    "W_uv": (_Z, _Z, Cross(_U, _V)),
    "N_tau": (_Z, _Z, Linear(6)),
}

HYDRO_PARAMS = tuple(n for n in PARAM_NAMES if n not in WIND_PARAMS)

# Column 3 of R (yaw) never sees the planar disturbances.
R_MASK = ((True, True), (True, True), (False, False))


def full_spec():
    """All 17 rows in parameter order, every term evaluated on the same signals."""
    return RegressorSpec(tuple(_ROWS[n] for n in PARAM_NAMES), 3, 3, PARAM_NAMES)


def ship_regressor_spec():
    """Return the hydrodynamic block, the wind block and the parameter map.

    ``theta_map[p]`` is ``("hydro", row)`` or ``("wind", row)`` for parameter ``p``
    of :data:`PARAM_NAMES`. Hydro rows evaluate on ``[nu_r; tau]``, wind rows on
    ``[nu_q; tau]``.
    """
    hydro = RegressorSpec(tuple(_ROWS[n] for n in HYDRO_PARAMS), 3, 3, HYDRO_PARAMS)
    wind = RegressorSpec(tuple(_ROWS[n] for n in WIND_PARAMS), 3, 3, WIND_PARAMS)
    theta_map = tuple(("wind", WIND_PARAMS.index(n)) if n in WIND_PARAMS
                      else ("hydro", HYDRO_PARAMS.index(n)) for n in PARAM_NAMES)
    return ShipStructure(hydro, wind, theta_map)


def merged_spec():
    """Full spec with rows that coincide on a single signal merged into sums."""
    return merge_duplicate_rows(full_spec())


def ship_rhs(theta, nu_r, nu_q, tau):
    """Velocity increment ``blockdiag(phi).T @ theta``; leading axes broadcast."""
    st = ship_regressor_spec()
    theta = np.asarray(theta, dtype=float)
    hydro_idx = [p for p, (b, _) in enumerate(st.theta_map) if b == "hydro"]
    wind_idx = [p for p, (b, _) in enumerate(st.theta_map) if b == "wind"]
    return (eval_som(st.hydro, theta[hydro_idx], nu_r, tau)
            + eval_som(st.wind, theta[wind_idx], nu_q, tau))


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

def _check_angle(psi):
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise ValueError("heading must be finite")
    return psi


def rotation(psi):
    """Planar rotation ``J(psi)`` about the vertical axis (body -> inertial)."""
    psi = _check_angle(psi)
    c, s = np.cos(psi), np.sin(psi)
    out = np.zeros(psi.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def rotation_inv(psi):
    """``J(psi)^-1 = J(psi).T = J(-psi)`` (inertial -> body)."""
    return np.swapaxes(rotation(psi), -1, -2)


def r_matrix(psi):
    """Disturbance gain ``R = J^-1(psi)[:, :2]`` mapping planar world vectors to body."""
    return rotation_inv(psi)[..., :2]


def body_disturbance(psi, w):
    """Body-frame current and wind velocities ``(nu_c, nu_w)`` at heading ``psi``."""
    jinv = rotation_inv(psi)
    cur = np.array([w.current_NS, w.current_EW, 0.0], dtype=float)
    wind = np.array([w.wind_NS, w.wind_EW, 0.0], dtype=float)
    return jinv @ cur, jinv @ wind
