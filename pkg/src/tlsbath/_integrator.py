"""Compiled adaptive DOP853 stepper for matrix-valued linear ODEs.

Two right-hand sides share the stepper:

* ``MODE_LINDBLAD``: drho/dt = X + X^dag + g2 * S- rho S+, with X = (M0 + i f(t) P) rho,
  where M0 = -i H0 - Gamma S+S- and g2 = 2 Gamma.
* ``MODE_UNITARY``: dU/dt = (M0 + i f(t) P) U with M0 = -i H0.

The drive f(t) comes from a single pulse row (start, duration, 2pi*amp, 2pi*freq, phase,
ramp_length) that is taken as active on the whole segment; callers split the time axis
at pulse edges so that every segment has a smooth right-hand side.

Step control, error norm, initial step selection and dense output follow the
Hairer-Norsett-Wanner DOP853 scheme as implemented in ``scipy.integrate.RK`` so that
the compiled stepper behaves like ``solve_ivp(method="DOP853")``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

MODE_LINDBLAD = 0
MODE_UNITARY = 1

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1

N_STAGES = _dop.N_STAGES
N_STAGES_EXT = _dop.N_STAGES_EXTENDED
_A = np.ascontiguousarray(_dop.A, dtype=float)
_B = np.ascontiguousarray(_dop.B, dtype=float)
_C = np.ascontiguousarray(_dop.C, dtype=float)
_E3 = np.ascontiguousarray(_dop.E3, dtype=float)
_E5 = np.ascontiguousarray(_dop.E5, dtype=float)
_D = np.ascontiguousarray(_dop.D, dtype=float)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERROR_ORDER = 7
_ERR_EXP = -1.0 / (_ERROR_ORDER + 1)


@njit(cache=True)
def pulse_field(t, prow):
    amp = prow[2]
    if amp == 0.0:
        return 0.0
    start = prow[0]
    dur = prow[1]
    s = t - start
    if s < 0.0:
        s = 0.0
    elif s > dur:
        s = dur
    env = 1.0
    ramp = prow[5]
    if ramp > 0.0:
        if s < ramp:
            env = 0.5 * (1.0 - math.cos(math.pi * s / ramp))
        elif s > dur - ramp:
            env = 0.5 * (1.0 - math.cos(math.pi * (dur - s) / ramp))
    return env * amp * math.cos(prow[3] * t + prow[4])


@njit(cache=True)
def _deriv(mode, t, y, ops, g2, prow, out, tmp):
    """``ops`` = (m_rows, m_cols, m_vals, p_rows, p_cols, p_vals, s_rows, s_cols, s_vals):
    coordinate lists of M0, P and S-; S+ is applied as the adjoint of S-."""
    mr, mc, mv, pr, pc, pv, sr, sc, sv = ops
    n = y.shape[0]
    jf = 1j * pulse_field(t, prow)
    out[:] = 0.0
    for q in range(mr.shape[0]):
        i = mr[q]
        k = mc[q]
        v = mv[q]
        for j in range(n):
            out[i, j] += v * y[k, j]
    if jf != 0.0:
        for q in range(pr.shape[0]):
            i = pr[q]
            k = pc[q]
            v = jf * pv[q]
            for j in range(n):
                out[i, j] += v * y[k, j]
    if mode == MODE_UNITARY:
        return
    # out currently holds X; form X + X^dag in place
    for i in range(n):
        for j in range(i, n):
            a = out[i, j]
            b = out[j, i]
            s = a + b.conjugate()
            out[i, j] = s
            out[j, i] = s.conjugate()
    if g2 != 0.0:
        tmp[:] = 0.0
        for q in range(sr.shape[0]):
            i = sr[q]
            k = sc[q]
            v = sv[q]
            for j in range(n):
                tmp[i, j] += v * y[k, j]
        # (tmp S+)[i, j] = sum_k tmp[i, k] conj(S-[j, k])
        for q in range(sr.shape[0]):
            j = sr[q]
            k = sc[q]
            v = g2 * sv[q].conjugate()
            for i in range(n):
                out[i, j] += tmp[i, k] * v


@njit(cache=True)
def _rms(x):
    acc = 0.0
    for v in x.ravel():
        acc += v.real * v.real + v.imag * v.imag
    return math.sqrt(acc / x.size)


@njit(cache=True)
def _initial_step(mode, t0, y0, f0, t_bound, max_step, ops, g2, prow,
                  rtol, atol, tmp):
    interval = abs(t_bound - t0)
    if interval == 0.0:
        return 0.0
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, interval)
    y1 = y0 + h0 * f0
    f1 = np.empty_like(y0)
    _deriv(mode, t0 + h0, y1, ops, g2, prow, f1, tmp)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (_ERROR_ORDER + 1))
    return min(100.0 * h0, h1, interval, max_step)


@njit(cache=True)
def integrate_segment(mode, t0, t1, y0, ops, g2, prow, t_samples, out,
                      rtol, atol, max_step):
    """Integrate from ``t0`` to ``t1`` writing dense-output samples into ``out``.

    ``t_samples`` must be sorted and lie inside ``[t0, t1]``. Returns
    ``(y_end, n_eval, status, t_fail)``.
    """
    n = y0.shape[0]
    A = _A
    B = _B
    C = _C
    D = _D
    E3 = _E3
    E5 = _E5
    K = np.empty((N_STAGES_EXT, n, n), dtype=np.complex128)
    tmp = np.empty((n, n), dtype=np.complex128)
    ystage = np.empty((n, n), dtype=np.complex128)
    F = np.empty((7, n, n), dtype=np.complex128)
    y = y0.copy()
    f = np.empty((n, n), dtype=np.complex128)
    _deriv(mode, t0, y, ops, g2, prow, f, tmp)
    nfev = 1

    n_samp = t_samples.shape[0]
    idx = 0
    while idx < n_samp and t_samples[idx] <= t0:
        out[idx] = y
        idx += 1

    t = t0
    if t1 <= t0:
        return y, nfev, STATUS_OK, t

    h_abs = _initial_step(mode, t0, y, f, t1, max_step, ops, g2, prow,
                          rtol, atol, tmp)
    nfev += 1

    y_new = np.empty((n, n), dtype=np.complex128)
    f_new = np.empty((n, n), dtype=np.complex128)
    while t < t1:
        min_step = 10.0 * abs(np.nextafter(t, np.inf) - t)
        if h_abs > max_step:
            h_abs = max_step
        elif h_abs < min_step:
            h_abs = min_step
        accepted = False
        rejected = False
        h = 0.0
        t_new = t
        while not accepted:
            if h_abs < min_step:
                return y, nfev, STATUS_STEP_UNDERFLOW, t
            h = h_abs
            t_new = t + h
            if t_new > t1:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)

            K[0] = f
            for s in range(1, N_STAGES):
                ystage[:] = y
                for j in range(s):
                    a = A[s, j]
                    if a != 0.0:
                        ystage += (h * a) * K[j]
                _deriv(mode, t + C[s] * h, ystage, ops, g2, prow, K[s], tmp)
            y_new[:] = y
            for s in range(N_STAGES):
                y_new += (h * B[s]) * K[s]
            _deriv(mode, t + h, y_new, ops, g2, prow, f_new, tmp)
            K[N_STAGES] = f_new
            nfev += N_STAGES

            err5 = 0.0
            err3 = 0.0
            for i in range(n):
                for j in range(n):
                    sc = atol + max(abs(y[i, j]), abs(y_new[i, j])) * rtol
                    e5 = 0j
                    e3 = 0j
                    for s in range(N_STAGES + 1):
                        e5 += E5[s] * K[s, i, j]
                        e3 += E3[s] * K[s, i, j]
                    e5 /= sc
                    e3 /= sc
                    err5 += e5.real * e5.real + e5.imag * e5.imag
                    err3 += e3.real * e3.real + e3.imag * e3.imag
            if err5 == 0.0 and err3 == 0.0:
                error_norm = 0.0
            else:
                denom = err5 + 0.01 * err3
                error_norm = abs(h) * err5 / math.sqrt(denom * (n * n))

            if error_norm < 1.0:
                if error_norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * error_norm ** _ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                accepted = True
            else:
                h_abs *= max(_MIN_FACTOR, _SAFETY * error_norm ** _ERR_EXP)
                rejected = True

        if idx < n_samp and t_samples[idx] <= t_new:
            # dense output: three extra stages, then the degree-7 interpolant
            for s in range(N_STAGES + 1, N_STAGES_EXT):
                ystage[:] = y
                for j in range(s):
                    a = A[s, j]
                    if a != 0.0:
                        ystage += (h * a) * K[j]
                _deriv(mode, t + C[s] * h, ystage, ops, g2, prow, K[s], tmp)
                nfev += 1
            dy = y_new - y
            F[0] = dy
            F[1] = h * K[0] - dy
            F[2] = 2.0 * dy - h * (f_new + K[0])
            for r in range(4):
                F[3 + r] = 0.0
                for s in range(N_STAGES_EXT):
                    d = D[r, s]
                    if d != 0.0:
                        F[3 + r] += (h * d) * K[s]
            while idx < n_samp and t_samples[idx] <= t_new:
                x = (t_samples[idx] - t) / h
                acc = np.zeros((n, n), dtype=np.complex128)
                for k in range(7):
                    acc += F[6 - k]
                    if k % 2 == 0:
                        acc *= x
                    else:
                        acc *= 1.0 - x
                out[idx] = acc + y
                idx += 1

        t = t_new
        y[:] = y_new
        f[:] = f_new

    return y, nfev, STATUS_OK, t
