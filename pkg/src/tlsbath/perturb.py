"""Second-order (in J) perturbative amplitude of |eg> for a weakly driven coupled pair.

Frame: the amplitude carries exp(-i w1 t) relative to the ground state, i.e. it is the
lab-frame coherence <eg|rho|gg> of the undepleted ground state. Within the
single-excitation subspace the drive matrix element is (Omega/2) exp(-i w_d t) (rotating
wave) and the exchange term is -J (|eg><ge| + h.c.).

With these conventions the closed form is an exact Dyson expansion when the exchange
detuning entering the J terms is w2 - w1 = -delta; see :func:`c_eg_terms`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_simpson

from .evolve import TimeSeries
from .model import TWO_PI
from .signal import PER_COLUMN_MAX, SpectralMap, build_map, phase_fft, relative_phase

DEGENERACY_TOL = 1e-9
QUADRATURE_TOL = 1e-6


class DegenerateDetuningError(ValueError):
    """A detuning in a denominator vanishes; nudge the parameters instead."""


class QuadratureError(RuntimeError):
    """Halving the quadrature step changed the result beyond tolerance."""


@dataclass(frozen=True)
class PerturbParams:
    omega1: float
    omega2: float
    omega_d: float
    drive_amp: float
    coupling: float

    def __post_init__(self):
        if self.drive_amp < 0:
            raise ValueError("drive amplitude must be non-negative")

    @property
    def delta(self) -> float:
        return self.omega1 - self.omega2

    @property
    def delta1(self) -> float:
        return self.omega1 - self.omega_d

    @property
    def delta2(self) -> float:
        return self.omega2 - self.omega_d

    def swapped(self) -> PerturbParams:
        return replace(self, omega1=self.omega2, omega2=self.omega1)

    def check_nondegenerate(self) -> None:
        for name, val in (("delta", self.delta), ("delta1", self.delta1), ("delta2", self.delta2)):
            if abs(val) < DEGENERACY_TOL:
                raise DegenerateDetuningError(
                    f"{name} = {val:.3g} GHz is too close to zero for the closed form; "
                    "shift a frequency slightly or evaluate the limit numerically"
                )


@dataclass(frozen=True)
class AmplitudeTerms:
    order0: np.ndarray
    order1: np.ndarray
    order2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.order0 + self.order1 + self.order2


def _k_integral(t, dx, d1):
    """K with the exchange detuning dx and drive detuning d1 (rad/ns); d1 + dx = delta2."""
    e1 = (np.exp(1j * d1 * t) - 1.0) / (1j * d1)
    ex = (np.exp(-1j * dx * t) - 1.0) / (-1j * dx)
    inner = (e1 - ex) / (1j * (dx + d1)) - (t - ex) / (1j * dx)
    return inner / (1j * d1)


def c_eg_terms(params: PerturbParams, t) -> AmplitudeTerms:
    params.check_nondegenerate()
    t = np.asarray(t, dtype=float)
    om = TWO_PI * params.drive_amp
    j = TWO_PI * params.coupling
    w1 = TWO_PI * params.omega1
    d1 = TWO_PI * params.delta1
    d2 = TWO_PI * params.delta2
    # exchange detuning w2 - w1; it satisfies dx + d1 = d2
    dx = -TWO_PI * params.delta
    carrier = np.exp(-1j * w1 * t)
    first = (1.0 - np.exp(1j * d1 * t)) / d1
    order0 = 0.5 * om * carrier * first
    order1 = 0.5 * om * j * carrier * (first + (1.0 - np.exp(-1j * dx * t)) / dx) / d2
    order2 = 0.5j * om * j**2 * carrier * _k_integral(t, dx, d1)
    return AmplitudeTerms(order0, order1, order2)


def c_eg_analytic(params: PerturbParams, t):
    return c_eg_terms(params, t).total


def _dyson_on_grid(params: PerturbParams, t: np.ndarray) -> AmplitudeTerms:
    om = TWO_PI * params.drive_amp
    g = -TWO_PI * params.coupling
    d1 = TWO_PI * params.delta1
    d2 = TWO_PI * params.delta2
    dd = TWO_PI * params.delta

    def cum(y):
        # cumulative_simpson is real-only
        return (cumulative_simpson(y.real, x=t, initial=0.0)
                + 1j * cumulative_simpson(y.imag, x=t, initial=0.0))

    # interaction-picture amplitudes of |eg> (b) and |ge> (a), order by order in g
    b0 = -0.5j * om * cum(np.exp(1j * d1 * t))
    a0 = -0.5j * om * cum(np.exp(1j * d2 * t))
    b1 = -1j * g * cum(np.exp(1j * dd * t) * a0)
    a1 = -1j * g * cum(np.exp(-1j * dd * t) * b0)
    b2 = -1j * g * cum(np.exp(1j * dd * t) * a1)
    carrier = np.exp(-1j * TWO_PI * params.omega1 * t)
    return AmplitudeTerms(carrier * b0, carrier * b1, carrier * b2)


def _fine_grid(t_grid: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid from 0 that contains every output time; returns (grid, indices)."""
    if t_grid.size > 1:
        dt = float(t_grid[1] - t_grid[0])
        k = t_grid / dt
        if np.max(np.abs(np.diff(t_grid) - dt)) > 1e-9 * dt or np.max(np.abs(k - np.rint(k))) > 1e-6:
            raise ValueError("t_grid must be uniform with points on multiples of its spacing")
    else:
        dt = float(t_grid[0])
    sub = max(1, int(np.ceil(dt / step)))
    sub += sub % 2
    n_out = int(np.rint(t_grid[-1] / dt))
    fine = np.linspace(0.0, n_out * dt, n_out * sub + 1)
    idx = np.rint(t_grid / dt).astype(int) * sub
    return fine, idx


def dyson_oracle(params: PerturbParams, t_grid, step: float | None = None) -> AmplitudeTerms:
    """Time-ordered series to second order in J by cumulative Simpson quadrature.

    ``t_grid`` must be uniform and aligned with multiples of its spacing. The
    quadrature step defaults to 0.01 / max frequency (ns); the result is accepted only
    if halving it changes every order by less than 1e-6 relative to its peak.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValueError("t_grid must be non-negative")
    fmax = max(abs(params.omega1), abs(params.omega2), abs(params.omega_d))
    if step is None:
        step = 0.01 / fmax
    if t_grid.max() == 0.0:
        z = np.zeros_like(t_grid, dtype=complex)
        return AmplitudeTerms(z, z.copy(), z.copy())

    def at_step(h):
        fine, idx = _fine_grid(t_grid, h)
        terms = _dyson_on_grid(params, fine)
        return AmplitudeTerms(terms.order0[idx], terms.order1[idx], terms.order2[idx])

    coarse = at_step(step)
    fine = at_step(step / 2)
    for a, b in ((coarse.order0, fine.order0), (coarse.order1, fine.order1), (coarse.order2, fine.order2)):
        scale = np.max(np.abs(b))
        if scale > 0 and np.max(np.abs(a - b)) / scale > QUADRATURE_TOL:
            raise QuadratureError("Dyson quadrature not converged; reduce the step")
    return fine


def relative_l2(a, b) -> float:
    """||a - b|| / ||b||."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def analytic_coherences(params: PerturbParams, t) -> tuple[np.ndarray, np.ndarray]:
    """(<sigma_1^+>, <sigma_2^+>) to first order in the amplitudes: conj(c_eg), conj(c_ge)."""
    c1 = c_eg_analytic(params, t)
    c2 = c_eg_analytic(params.swapped(), t)
    return np.conj(c1), np.conj(c2)


def analytic_phase_spectrum(
    base: PerturbParams,
    drive_freqs,
    t_grid,
    window: str = "rect",
    zero_pad_factor: int = 4,
) -> SpectralMap:
    """Column-normalized FFT of arg(<s1+>/<s2+>) from the closed form, per drive frequency."""
    t_grid = np.asarray(t_grid, dtype=float)
    dt = float(t_grid[1] - t_grid[0])
    results = []
    for fd in drive_freqs:
        p = replace(base, omega_d=float(fd))
        s1, s2 = analytic_coherences(p, t_grid)
        phi = relative_phase(TimeSeries(t_grid[0], dt, s1), TimeSeries(t_grid[0], dt, s2))
        results.append((float(fd), phase_fft(phi, window, zero_pad_factor)))
    return build_map(results, PER_COLUMN_MAX, "drive_freq_GHz")
