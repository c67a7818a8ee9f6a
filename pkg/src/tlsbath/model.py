"""Physical model: TLS parameters, ensembles, drive pulses and the driven Hamiltonian.

Units: user-facing frequencies are ordinary frequencies in GHz, times in ns.
Operators are assembled in angular units (rad/ns) with hbar = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hilbert import (
    SIGMA_X,
    SIGMA_Z,
    OperatorMatrix,
    collective_lowering,
    embed_site_operator,
)

TWO_PI = 2.0 * math.pi

SQUARE = "square"
SQUARE_COSINE_RAMP = "square_cosine_ramp"
ENVELOPES = (SQUARE, SQUARE_COSINE_RAMP)
DEFAULT_RAMP_FRACTION = 0.05


@dataclass(frozen=True)
class TlsParams:
    """A single defect in the (asymmetry, tunneling) parametrization, both in GHz."""

    epsilon: float
    delta: float
    dipole_scale: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("tunneling amplitude must be non-negative")
        if self.energy <= 0:
            raise ValueError("TLS energy must be positive")

    @classmethod
    def symmetric(cls, frequency: float, dipole_scale: float = 1.0) -> TlsParams:
        """Bare-frequency defect: epsilon = 0, so the dipole couples through sigma_x."""
        return cls(0.0, float(frequency), dipole_scale)

    @property
    def energy(self) -> float:
        return math.hypot(self.epsilon, self.delta)

    @property
    def mixing_angle(self) -> float:
        return math.atan2(self.delta, self.epsilon)


@dataclass(frozen=True)
class EnsembleSpec:
    tls: tuple[TlsParams, ...]
    coupling: np.ndarray
    gamma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        tls = tuple(self.tls)
        n = len(tls)
        if n < 1:
            raise ValueError("an ensemble needs at least one TLS")
        j = np.array(self.coupling, dtype=float)
        if j.shape != (n, n):
            raise ValueError(f"coupling must be {n}x{n}, got {j.shape}")
        if np.any(np.diag(j) != 0.0):
            raise ValueError("coupling diagonal must be exactly zero")
        if np.max(np.abs(j - j.T)) > 1e-12:
            raise ValueError("coupling matrix must be symmetric")
        if self.gamma < 0:
            raise ValueError("collective decay rate must be non-negative")
        j.setflags(write=False)
        object.__setattr__(self, "tls", tls)
        object.__setattr__(self, "coupling", j)

    @property
    def n_sites(self) -> int:
        return len(self.tls)

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([q.energy for q in self.tls])

    @classmethod
    def from_frequencies(
        cls,
        frequencies: Sequence[float],
        coupling=0.0,
        gamma: float = 0.0,
        dipole_scales: Sequence[float] | None = None,
    ) -> EnsembleSpec:
        """Ensemble of symmetric TLS. ``coupling`` is a scalar (all pairs) or a matrix."""
        n = len(frequencies)
        scales = dipole_scales if dipole_scales is not None else [1.0] * n
        tls = tuple(TlsParams.symmetric(f, p) for f, p in zip(frequencies, scales))
        if np.ndim(coupling) == 0:
            j = np.full((n, n), float(coupling))
            np.fill_diagonal(j, 0.0)
        else:
            j = np.asarray(coupling, dtype=float)
        return cls(tls, j, gamma)


@dataclass(frozen=True)
class PulseSpec:
    amplitude: float
    carrier_freq: float
    duration: float
    start: float = 0.0
    carrier_phase: float = 0.0
    envelope: str = SQUARE
    ramp_fraction: float = DEFAULT_RAMP_FRACTION

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")
        if self.amplitude < 0:
            raise ValueError("pulse amplitude must be non-negative")
        if self.envelope not in ENVELOPES:
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if not 0.0 <= self.ramp_fraction <= 0.5:
            raise ValueError("ramp_fraction must lie in [0, 0.5]")
        # phases are only meaningful mod 2pi; reducing here makes 0 and 2pi bitwise equal
        object.__setattr__(self, "carrier_phase", float(np.mod(self.carrier_phase, TWO_PI)))

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def ramp_length(self) -> float:
        if self.envelope == SQUARE:
            return 0.0
        return self.ramp_fraction * self.duration

    def envelope_at(self, t):
        t = np.asarray(t, dtype=float)
        s = t - self.start
        inside = (s >= 0.0) & (s < self.duration)
        env = inside.astype(float)
        r = self.ramp_length
        if r > 0.0:
            rise = inside & (s < r)
            fall = inside & (s > self.duration - r)
            env = np.where(rise, 0.5 * (1.0 - np.cos(math.pi * s / r)), env)
            env = np.where(fall, 0.5 * (1.0 - np.cos(math.pi * (self.duration - s) / r)), env)
        return env


@dataclass(frozen=True)
class DriveProtocol:
    pulses: tuple[PulseSpec, ...]
    t_end: float
    sample_step: float = 0.25
    lo_freq: float | None = None
    lo_phase: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pulses = tuple(self.pulses)
        object.__setattr__(self, "pulses", pulses)
        if self.sample_step <= 0:
            raise ValueError("sample_step must be positive")
        for a, b in zip(pulses, pulses[1:]):
            if b.start < a.start:
                raise ValueError("pulses must be sorted by start time")
            if a.end > b.start:
                raise ValueError("pulses overlap")
        if pulses and self.t_end < pulses[-1].end:
            raise ValueError("t_end precedes the end of the last pulse")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.lo_freq is None:
            lo = pulses[0].carrier_freq if pulses else 0.0
            object.__setattr__(self, "lo_freq", lo)

    @property
    def last_pulse_end(self) -> float:
        return self.pulses[-1].end if self.pulses else 0.0

    def sample_times(self) -> np.ndarray:
        n = int(math.floor(self.t_end / self.sample_step + 1e-9)) + 1
        return np.arange(n) * self.sample_step

    def pulse_table(self) -> np.ndarray:
        """Pulses packed as rows (start, duration, 2pi*amp, 2pi*freq, phase, ramp_length)."""
        rows = [
            (p.start, p.duration, TWO_PI * p.amplitude, TWO_PI * p.carrier_freq,
             p.carrier_phase, p.ramp_length)
            for p in self.pulses
        ]
        return np.array(rows, dtype=float).reshape(len(rows), 6)


def single_pulse(
    carrier_freq: float,
    amplitude: float,
    duration: float,
    t_end: float,
    *,
    start: float = 0.0,
    phase: float = 0.0,
    envelope: str = SQUARE,
    ramp_fraction: float = DEFAULT_RAMP_FRACTION,
    sample_step: float = 0.25,
) -> DriveProtocol:
    pulse = PulseSpec(amplitude, carrier_freq, duration, start, phase, envelope, ramp_fraction)
    return DriveProtocol((pulse,), t_end, sample_step, lo_freq=carrier_freq)


def two_pulse(
    carrier_freq: float,
    amp1: float,
    amp2: float,
    duration: float,
    gap: float,
    t_after: float,
    *,
    phase1: float = 0.0,
    phase2: float = 0.0,
    envelope: str = SQUARE,
    sample_step: float = 0.25,
) -> DriveProtocol:
    """First pulse at t=0, second after ``gap``; record ``t_after`` ns past the second."""
    p1 = PulseSpec(amp1, carrier_freq, duration, 0.0, phase1, envelope)
    p2 = PulseSpec(amp2, carrier_freq, duration, duration + gap, phase2, envelope)
    return DriveProtocol((p1, p2), p2.end + t_after, sample_step, lo_freq=carrier_freq)


def static_hamiltonian(ens: EnsembleSpec) -> OperatorMatrix:
    """H0 = sum_j (2pi E_j / 2) sz_j + sum_{i<j} 2pi J_ij sx_i sx_j, in rad/ns."""
    n = ens.n_sites
    h = np.zeros((ens.dim, ens.dim), dtype=complex)
    sx = [embed_site_operator(SIGMA_X, j, n).entries for j in range(n)]
    for j, q in enumerate(ens.tls):
        h += 0.5 * TWO_PI * q.energy * embed_site_operator(SIGMA_Z, j, n).entries
    for i in range(n):
        for j in range(i + 1, n):
            if ens.coupling[i, j] != 0.0:
                h += TWO_PI * ens.coupling[i, j] * (sx[i] @ sx[j])
    return OperatorMatrix(h, hermitian=True)


def polarization_operator(ens: EnsembleSpec) -> OperatorMatrix:
    """P = sum_j p_j (cos(theta_j) sz_j + sin(theta_j) sx_j)."""
    n = ens.n_sites
    p = np.zeros((ens.dim, ens.dim), dtype=complex)
    for j, q in enumerate(ens.tls):
        th = q.mixing_angle
        local = math.cos(th) * SIGMA_Z + math.sin(th) * SIGMA_X
        p += q.dipole_scale * embed_site_operator(local, j, n).entries
    return OperatorMatrix(p, hermitian=True)


def jump_operator(ens: EnsembleSpec) -> OperatorMatrix:
    return collective_lowering(ens.n_sites)


def drive_field(protocol: DriveProtocol, t):
    """E(t) in rad/ns: sum of envelope * 2pi*A * cos(2pi f t + phase) over pulses."""
    t_arr = np.asarray(t, dtype=float)
    total = np.zeros_like(t_arr)
    for p in protocol.pulses:
        env = p.envelope_at(t_arr)
        if np.any(env):
            total = total + env * TWO_PI * p.amplitude * np.cos(
                TWO_PI * p.carrier_freq * t_arr + p.carrier_phase
            )
    return float(total) if total.ndim == 0 else total


def hamiltonian_at(ens: EnsembleSpec, protocol: DriveProtocol, t: float) -> OperatorMatrix:
    h0 = static_hamiltonian(ens).entries
    f = drive_field(protocol, t)
    if f == 0.0:
        return OperatorMatrix(h0, hermitian=True)
    return OperatorMatrix(h0 - f * polarization_operator(ens).entries, hermitian=True)


def sample_random_ensemble(
    n: int,
    freq_range: tuple[float, float],
    coupling_range: tuple[float, float],
    gamma: float,
    seed: int | None,
) -> EnsembleSpec:
    """Uniformly sampled bare frequencies and symmetric pair couplings."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, hi = freq_range
    jlo, jhi = coupling_range
    if not (0 < lo <= hi) or jlo > jhi:
        raise ValueError("invalid sampling range")
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(lo, hi, size=n)
    j = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    j[iu] = rng.uniform(jlo, jhi, size=len(iu[0]))
    j = j + j.T
    ens = EnsembleSpec.from_frequencies(freqs, j, gamma)
    return EnsembleSpec(ens.tls, ens.coupling, gamma, seed)
