"""Homodyne baseband synthesis and the phase-FFT analysis chain.

Sign convention: an emitter at frequency f contributes a positive-frequency field
``c * exp(-i 2pi f t)``. Demodulation at ``lo_freq`` maps that field to the baseband
``c * exp(-i (2pi (f - lo_freq) t + lo_phase))``, which is exactly what
:func:`synth_emitters` produces, so the two operations invert each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .evolve import TimeSeries
from .model import TWO_PI

RECT = "rect"
HANN = "hann"
WINDOWS = (RECT, HANN)

NONE = "none"
PER_COLUMN_MAX = "per_column_max"

DEFAULT_ZERO_PAD = 4
DEFAULT_MIN_SEPARATION = 0.002  # GHz
DEFAULT_PHASE_FLOOR = 1e-12


class AliasingError(ValueError):
    """Sampling grid cannot represent the requested frequencies."""


@dataclass(frozen=True)
class QuadratureTrace:
    t0: float
    dt: float
    i_samples: np.ndarray
    q_samples: np.ndarray
    lo_freq: float
    lo_phase: float = 0.0

    def __post_init__(self):
        i = np.asarray(self.i_samples, dtype=float).copy()
        q = np.asarray(self.q_samples, dtype=float).copy()
        if i.shape != q.shape or i.ndim != 1:
            raise ValueError("I and Q must be 1D sequences of equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        i.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "i_samples", i)
        object.__setattr__(self, "q_samples", q)

    @classmethod
    def from_complex(cls, t0, dt, z, lo_freq, lo_phase=0.0) -> QuadratureTrace:
        z = np.asarray(z, dtype=complex)
        return cls(t0, dt, z.real, z.imag, lo_freq, lo_phase)

    @property
    def z(self) -> np.ndarray:
        return self.i_samples + 1j * self.q_samples

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.i_samples.size)

    def __len__(self) -> int:
        return self.i_samples.size


@dataclass(frozen=True)
class Emitter:
    weight: complex
    freq: float
    decay: float = 0.0
    onset: float = 0.0

    def __post_init__(self):
        if self.decay < 0:
            raise ValueError("emitter decay must be non-negative")


@dataclass(frozen=True)
class EmitterSet:
    emitters: tuple[Emitter, ...]

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))

    @classmethod
    def from_arrays(cls, weights, freqs, decays=None, onsets=None) -> EmitterSet:
        n = len(freqs)
        decays = np.zeros(n) if decays is None else decays
        onsets = np.zeros(n) if onsets is None else onsets
        return cls(tuple(Emitter(complex(w), float(f), float(g), float(o))
                         for w, f, g, o in zip(weights, freqs, decays, onsets)))

    def __len__(self) -> int:
        return len(self.emitters)

    @property
    def freqs(self) -> np.ndarray:
        return np.array([e.freq for e in self.emitters])


def synth_emitters(
    emitters: EmitterSet,
    lo_freq: float,
    lo_phase: float,
    t0: float,
    dt: float,
    n_samples: int,
) -> QuadratureTrace:
    """z(t) = sum_k c_k exp(-i(2pi(f_k - f_LO) t + phi_LO)) exp(-2pi g_k (t - t_k)) H(t - t_k)."""
    nyq = 0.5 / dt
    if len(emitters) and np.max(np.abs(emitters.freqs - lo_freq)) >= nyq:
        raise AliasingError("emitter detuning exceeds the Nyquist frequency of the grid")
    t = t0 + dt * np.arange(n_samples)
    z = np.zeros(n_samples, dtype=complex)
    for e in emitters.emitters:
        on = t >= e.onset
        arg = TWO_PI * (e.freq - lo_freq) * t + lo_phase
        env = np.exp(-TWO_PI * e.decay * np.where(on, t - e.onset, 0.0))
        z += np.where(on, e.weight * np.exp(-1j * arg) * env, 0.0)
    return QuadratureTrace.from_complex(t0, dt, z, lo_freq, lo_phase)


def _lowpass_sos(cutoff: float, dt: float) -> np.ndarray:
    one = sps.butter(1, cutoff, btype="low", fs=1.0 / dt, output="sos")
    return np.vstack([one, one])


def demodulate(
    field: TimeSeries,
    lo_freq: float,
    lo_phase: float = 0.0,
    lowpass_cutoff: float | None = None,
) -> QuadratureTrace:
    """Mix a real field, or a complex positive-frequency field, down to baseband.

    A real input is treated as twice the real part of its positive-frequency component,
    so ``cos(2pi f t)`` and ``exp(-i 2pi f t)`` demodulate to the same baseband.
    The low-pass is a cascade of two single-pole sections run forward and backward.
    """
    x = np.asarray(field.samples)
    t = field.times
    nyq = 0.5 / field.dt
    cutoff = 0.25 * lo_freq if lowpass_cutoff is None else lowpass_cutoff
    is_real = not np.iscomplexobj(x)
    if is_real and lo_freq >= nyq:
        raise AliasingError("grid does not resolve the carrier of a real-valued field")
    if cutoff is not None and cutoff >= nyq:
        raise AliasingError("low-pass cutoff is above the Nyquist frequency")
    scale = 2.0 if is_real else 1.0
    z = scale * x * np.exp(1j * (TWO_PI * lo_freq * t - lo_phase))
    if cutoff and cutoff > 0 and z.size > 15:
        sos = _lowpass_sos(cutoff, field.dt)
        z = sps.sosfiltfilt(sos, z.real) + 1j * sps.sosfiltfilt(sos, z.imag)
    return QuadratureTrace.from_complex(field.t0, field.dt, z, lo_freq, lo_phase)


def wrap_phase(phi) -> np.ndarray:
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    # np.mod can round tiny negative inputs up to exactly 2pi
    return np.where(out >= TWO_PI, 0.0, out)


def amp_phase(trace: QuadratureTrace) -> tuple[TimeSeries, TimeSeries]:
    i, q = trace.i_samples, trace.q_samples
    amp = np.hypot(i, q)
    phase = wrap_phase(np.arctan2(q, i))
    return (
        TimeSeries(trace.t0, trace.dt, amp, "amplitude"),
        TimeSeries(trace.t0, trace.dt, phase, "phase"),
    )


def relative_phase(
    coh1: TimeSeries,
    coh2: TimeSeries,
    floor: float = DEFAULT_PHASE_FLOOR,
    return_mask: bool = False,
):
    """Wrapped arg(coh1 / coh2). Samples with |coh2| below ``floor`` are set to 0 and masked."""
    if len(coh1) != len(coh2) or coh1.dt != coh2.dt or coh1.t0 != coh2.t0:
        raise ValueError("coherences must share a grid")
    a = np.asarray(coh1.samples, dtype=complex)
    b = np.asarray(coh2.samples, dtype=complex)
    mask = np.abs(b) < floor
    safe = np.where(mask, 1.0, b)
    phi = wrap_phase(np.angle(a * np.conj(safe)))
    phi = np.where(mask, 0.0, phi)
    out = TimeSeries(coh1.t0, coh1.dt, phi, "relative_phase")
    return (out, mask) if return_mask else out


def phase_fft(
    phase: TimeSeries,
    window: str = RECT,
    zero_pad_factor: int = DEFAULT_ZERO_PAD,
) -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude spectrum of the wrapped phase; bins in MHz."""
    if window not in WINDOWS:
        raise ValueError(f"unknown window {window!r}")
    if zero_pad_factor < 1:
        raise ValueError("zero_pad_factor must be at least 1")
    x = np.asarray(phase.samples, dtype=float)
    x = x - x.mean()
    n = x.size
    if window == HANN:
        x = x * np.hanning(n)
    n_fft = n * int(zero_pad_factor)
    spec = np.abs(np.fft.rfft(x, n_fft))
    bins = np.fft.rfftfreq(n_fft, phase.dt) * 1e3
    return bins, spec


def magnitude_fft(series: TimeSeries, window: str = RECT, zero_pad_factor: int = 1):
    """Same transform for an arbitrary real observable (e.g. a population ring-down)."""
    return phase_fft(series.with_samples(np.asarray(series.samples).real), window, zero_pad_factor)


@dataclass(frozen=True)
class SpectralMap:
    sweep_label: str
    sweep_values: np.ndarray
    fft_axis: np.ndarray
    magnitudes: np.ndarray
    normalization: str = NONE

    def __post_init__(self):
        sv = np.asarray(self.sweep_values, dtype=float)
        fa = np.asarray(self.fft_axis, dtype=float)
        m = np.asarray(self.magnitudes, dtype=float)
        if m.shape != (sv.size, fa.size):
            raise ValueError(f"grid shape {m.shape} does not match axes ({sv.size}, {fa.size})")
        for a in (sv, fa, m):
            a.setflags(write=False)
        object.__setattr__(self, "sweep_values", sv)
        object.__setattr__(self, "fft_axis", fa)
        object.__setattr__(self, "magnitudes", m)

    @property
    def bin_width(self) -> float:
        return float(self.fft_axis[1] - self.fft_axis[0]) if self.fft_axis.size > 1 else 0.0


def build_map(
    results: Sequence[tuple[float, tuple[np.ndarray, np.ndarray]]],
    normalization: str = NONE,
    sweep_label: str = "drive_freq_GHz",
) -> SpectralMap:
    if not results:
        raise ValueError("cannot build a map from an empty sweep")
    if normalization not in (NONE, PER_COLUMN_MAX):
        raise ValueError(f"unknown normalization {normalization!r}")
    axis = np.asarray(results[0][1][0], dtype=float)
    rows = []
    for value, (bins, mags) in results:
        bins = np.asarray(bins, dtype=float)
        if bins.shape != axis.shape or np.any(bins != axis):
            raise ValueError(f"fft axis mismatch at sweep value {value}")
        rows.append(np.asarray(mags, dtype=float))
    grid = np.vstack(rows)
    if normalization == PER_COLUMN_MAX:
        peak = grid.max(axis=1, keepdims=True)
        grid = np.divide(grid, peak, out=np.zeros_like(grid), where=peak > 0)
    return SpectralMap(sweep_label, [r[0] for r in results], axis, grid, normalization)


@dataclass(frozen=True)
class Slice:
    axis_label: str
    axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if a.shape != v.shape or a.ndim != 1:
            raise ValueError("slice axis and values must be 1D of equal length")
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "values", v)


def zero_frequency_slice(smap: SpectralMap, bin_tolerance: float = 1.0) -> Slice:
    """Mean magnitude over FFT bins with |f| <= bin_tolerance bins, for every sweep value."""
    fa = smap.fft_axis
    if fa.size == 0 or abs(fa[0]) > 1e-12:
        raise ValueError("fft axis has no zero-frequency bin")
    width = smap.bin_width if fa.size > 1 else 1.0
    sel = np.abs(fa) <= bin_tolerance * width * (1 + 1e-9)
    return Slice(smap.sweep_label, smap.sweep_values, smap.magnitudes[:, sel].mean(axis=1))


@dataclass(frozen=True)
class TimeGrid:
    """Observable values over (sweep value x time); every row shares the time axis."""

    sweep_label: str
    sweep_values: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        sv = np.asarray(self.sweep_values, dtype=float)
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values)
        if v.shape != (sv.size, t.size):
            raise ValueError("time grid shape does not match its axes")
        object.__setattr__(self, "sweep_values", sv)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def zero_time_slice(grid: TimeGrid, pulse_ends) -> Slice:
    """Row values at the first sample at or after each row's pulse end (t = t_off)."""
    ends = np.broadcast_to(np.asarray(pulse_ends, dtype=float), grid.sweep_values.shape)
    dt = grid.times[1] - grid.times[0] if grid.times.size > 1 else 1.0
    out = np.empty(grid.sweep_values.size)
    for k, e in enumerate(ends):
        idx = int(np.searchsorted(grid.times, e - 1e-9 * dt, side="left"))
        if idx >= grid.times.size:
            raise ValueError("time grid does not cover the pulse end")
        out[k] = np.real(grid.values[k, idx])
    return Slice(grid.sweep_label, grid.sweep_values, out)


def average_slices(slices: Sequence[Slice]) -> Slice:
    if not slices:
        raise ValueError("no slices to average")
    ref = slices[0]
    for s in slices[1:]:
        if s.axis.shape != ref.axis.shape or np.any(s.axis != ref.axis):
            raise ValueError("slices have different sweep axes")
    vals = np.mean(np.vstack([s.values for s in slices]), axis=0)
    return Slice(ref.axis_label, ref.axis, vals)


@dataclass(frozen=True)
class PeakSet:
    frequencies: np.ndarray
    magnitudes: np.ndarray
    threshold: float
    min_separation: float
    span: tuple[float, float]

    def __len__(self) -> int:
        return self.frequencies.size


def detect_peaks(
    sl: Slice,
    threshold: float,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    span: tuple[float, float] | None = None,
) -> PeakSet:
    """Local maxima strictly above ``threshold``, kept greedily by descending magnitude.

    Candidates closer than ``min_separation`` to an already kept peak are dropped;
    equal magnitudes are visited from lower to higher frequency.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    axis, vals = sl.axis, sl.values
    if span is None:
        span = (float(axis[0]), float(axis[-1]))
    idx, _ = sps.find_peaks(vals)
    idx = idx[vals[idx] > threshold]
    order = sorted(idx, key=lambda k: (-vals[k], axis[k]))
    kept: list[int] = []
    for k in order:
        if all(abs(axis[k] - axis[j]) >= min_separation for j in kept):
            kept.append(k)
    kept.sort(key=lambda k: axis[k])
    kept_arr = np.array(kept, dtype=int)
    return PeakSet(axis[kept_arr], vals[kept_arr], float(threshold), float(min_separation),
                   (float(span[0]), float(span[1])))


def spectral_density(peaks: PeakSet) -> float:
    """Peak count per GHz of span."""
    width = peaks.span[1] - peaks.span[0]
    if not width > 0:
        raise ValueError("span width must be positive")
    inside = (peaks.frequencies >= peaks.span[0]) & (peaks.frequencies <= peaks.span[1])
    return float(np.count_nonzero(inside)) / width


def pulse_response_weight(freq, drive_freq: float, duration: float, amplitude: complex = 1.0):
    """First-order amplitude left in an emitter at ``freq`` by a square pulse at
    ``drive_freq`` of length ``duration``: a (1 - exp(i 2pi d tau)) / (2pi d), d = f - f_d."""
    d = np.asarray(freq, dtype=float) - drive_freq
    w = TWO_PI * d
    small = np.abs(w * duration) < 1e-8
    safe = np.where(small, 1.0, w)
    val = np.where(small, -1j * duration, (1.0 - np.exp(1j * w * duration)) / safe)
    return amplitude * val


def synth_field(emitters: EmitterSet, t0: float, dt: float, n_samples: int) -> TimeSeries:
    """Complex positive-frequency field sum_k c_k exp(-i 2pi f_k t) on a grid."""
    tr = synth_emitters(emitters, 0.0, 0.0, t0, dt, n_samples)
    return TimeSeries(t0, dt, tr.z, "field")


def nyquist(dt: float) -> float:
    return 0.5 / dt


def bin_index(axis: np.ndarray, value: float) -> int:
    return int(np.argmin(np.abs(np.asarray(axis) - value)))


def sweep_step(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.min(np.diff(v))) if v.size > 1 else math.inf
