"""Backend selection for the propagation kernel.

The compiled extension is used when it imports; set ``SOMIV_PURE_PYTHON=1`` to
force the pure-Python loop.
"""
import os

import numpy as np

from . import _kernels_py
from .errors import DimensionError, SimulationDivergedError

if os.environ.get("SOMIV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py
        BACKEND = "python"


def simulate_ship(theta, nu0, psi0, tau, current=None, wind=None, w=None, dt=1.0,
                  backend=None, what="simulation"):
    """Run the maneuvering model over ``len(tau)`` rows; see ``_kernels_py``.

    Missing disturbances are zero. Raises :class:`SimulationDivergedError` with
    the offending step on a non-finite state. Returns ``(nu, eta)``.
    """
    tau = np.ascontiguousarray(tau, dtype=float)
    if tau.ndim != 2 or tau.shape[1] != 3:
        raise DimensionError("tau", "(N, 3)", tau.shape)
    n = tau.shape[0]
    zeros2 = np.zeros((n, 2))
    current = zeros2 if current is None else np.ascontiguousarray(current, dtype=float)
    wind = zeros2 if wind is None else np.ascontiguousarray(wind, dtype=float)
    for name, arr in (("current", current), ("wind", wind)):
        if arr.shape != (n, 2):
            raise DimensionError(name, (n, 2), arr.shape)
    if w is not None:
        w = np.ascontiguousarray(w, dtype=float)
        if w.shape != (n, 3):
            raise DimensionError("w", (n, 3), w.shape)
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.shape != (17,):
        raise DimensionError("theta", 17, theta.shape)
    impl = {"python": _kernels_py, None: _impl}.get(backend)
    if impl is None:
        if backend != "cython":
            raise ValueError(f"unknown backend {backend!r}")
        from . import _kernels as impl
    nu, eta, bad = impl.simulate_ship(theta, np.asarray(nu0, dtype=float), float(psi0), tau,
                                      current, wind, w, float(dt))
    if bad >= 0:
        raise SimulationDivergedError(int(bad), what)
    return nu, eta
