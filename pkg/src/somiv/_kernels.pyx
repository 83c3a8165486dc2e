# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ship propagation loop; mirrors ``_kernels_py.simulate_ship``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, isfinite

cnp.import_array()


def simulate_ship(theta, nu0, double psi0, tau, current, wind, w, double dt=1.0):
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[:, ::1] tau_v = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[:, ::1] cur_v = np.ascontiguousarray(current, dtype=np.float64)
    cdef double[:, ::1] wind_v = np.ascontiguousarray(wind, dtype=np.float64)
    cdef bint has_w = w is not None
    cdef double[:, ::1] w_v
    if has_w:
        w_v = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = tau_v.shape[0]
    nu_arr = np.empty((n, 3))
    eta_arr = np.empty((n, 3))
    cdef double[:, ::1] nu = nu_arr
    cdef double[:, ::1] eta = eta_arr
    cdef double u = nu0[0], v = nu0[1], r = nu0[2]
    cdef double x = 0.0, y = 0.0, psi = psi0
    cdef double c, s, ur, vr, uq, vq, avr, du, dv, dr
    cdef Py_ssize_t k
    if n == 0:
        return nu_arr, eta_arr, -1
    nu[0, 0] = u; nu[0, 1] = v; nu[0, 2] = r
    eta[0, 0] = x; eta[0, 1] = y; eta[0, 2] = psi
    for k in range(1, n):
        c = cos(psi)
        s = sin(psi)
        ur = u - (c * cur_v[k - 1, 0] + s * cur_v[k - 1, 1])
        vr = v - (-s * cur_v[k - 1, 0] + c * cur_v[k - 1, 1])
        uq = u - (c * wind_v[k - 1, 0] + s * wind_v[k - 1, 1])
        vq = v - (-s * wind_v[k - 1, 0] + c * wind_v[k - 1, 1])
        avr = fabs(vr)
        du = (th[0] * ur + th[1] * vr * r + th[2] * ur * fabs(ur) + th[3] * uq * fabs(uq)
              + th[4] * tau_v[k - 1, 0])
        dv = (th[5] * vr + th[6] * ur * r + th[7] * vr * avr + th[8] * r * avr
              + th[9] * vq * fabs(vq) + th[10] * tau_v[k - 1, 1])
        dr = (th[11] * r + th[12] * ur * vr + th[13] * vr * avr + th[14] * r * avr
              + th[15] * uq * vq + th[16] * tau_v[k - 1, 2])
        x += dt * (c * u - s * v)
        y += dt * (s * u + c * v)
        psi += dt * r
        u += dt * du
        v += dt * dv
        r += dt * dr
        if has_w:
            u += w_v[k - 1, 0]
            v += w_v[k - 1, 1]
            r += w_v[k - 1, 2]
        nu[k, 0] = u; nu[k, 1] = v; nu[k, 2] = r
        eta[k, 0] = x; eta[k, 1] = y; eta[k, 2] = psi
        if not (isfinite(u) and isfinite(v) and isfinite(r) and isfinite(psi)):
            return nu_arr, eta_arr, k
    return nu_arr, eta_arr, -1
