"""Pure-Python ship propagation loop (reference and fallback backend)."""
import math

import numpy as np


def simulate_ship(theta, nu0, psi0, tau, current, wind, w, dt=1.0):
    """Propagate the maneuvering model with explicit Euler steps.

    Row ``k`` of the outputs is the state after ``k`` steps; the step from
    ``k-1`` to ``k`` uses inputs and disturbances of row ``k-1``. ``current`` and
    ``wind`` are inertial-frame (NS, EW) velocities. Returns ``(nu, eta, bad)``
    where ``bad`` is the first non-finite row index or -1.
    """
    th = [float(t) for t in theta]
    n = tau.shape[0]
    nu = np.empty((n, 3))
    eta = np.empty((n, 3))
    tau_l = tau.tolist()
    cur_l = current.tolist()
    wind_l = wind.tolist()
    w_l = w.tolist() if w is not None else None
    u, v, r = (float(a) for a in nu0)
    x = y = 0.0
    psi = float(psi0)
    if n == 0:
        return nu, eta, -1
    nu[0] = (u, v, r)
    eta[0] = (x, y, psi)
    for k in range(1, n):
        c = math.cos(psi)
        s = math.sin(psi)
        cn, ce = cur_l[k - 1]
        wn, we = wind_l[k - 1]
        t1, t2, t3 = tau_l[k - 1]
        ur = u - (c * cn + s * ce)
        vr = v - (-s * cn + c * ce)
        uq = u - (c * wn + s * we)
        vq = v - (-s * wn + c * we)
        avr = abs(vr)
        du = (th[0] * ur + th[1] * vr * r + th[2] * ur * abs(ur) + th[3] * uq * abs(uq)
              + th[4] * t1)
        dv = (th[5] * vr + th[6] * ur * r + th[7] * vr * avr + th[8] * r * avr
              + th[9] * vq * abs(vq) + th[10] * t2)
        dr = (th[11] * r + th[12] * ur * vr + th[13] * vr * avr + th[14] * r * avr
              + th[15] * uq * vq + th[16] * t3)
        x += dt * (c * u - s * v)
        y += dt * (s * u + c * v)
        psi += dt * r
        u += dt * du
        v += dt * dv
        r += dt * dr
        if w_l is not None:
            wk = w_l[k - 1]
            u += wk[0]
            v += wk[1]
            r += wk[2]
        nu[k] = (u, v, r)
        eta[k] = (x, y, psi)
        if not (math.isfinite(u) and math.isfinite(v) and math.isfinite(r)
                and math.isfinite(psi)):
            return nu, eta, k
    return nu, eta, -1
