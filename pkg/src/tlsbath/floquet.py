"""Floquet quasi-energies of a continuously driven ensemble, computed two ways.

* Monodromy: eigenphases of the one-period propagator U(T).
* Extended space: the truncated block-tridiagonal Floquet Hamiltonian over harmonics
  m in [-M, M], with diagonal blocks H0 + m*Omega and a cosine drive split into V e^{i Omega t}
  plus its adjoint.

Quasi-energies are reported in GHz and folded into [-f_d/2, f_d/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolve import unitary_propagator
from .hilbert import OperatorMatrix
from .model import (
    TWO_PI,
    DriveProtocol,
    EnsembleSpec,
    PulseSpec,
    polarization_operator,
    static_hamiltonian,
)

DEFAULT_CUTOFF = 15
POLE_WEIGHT_FLOOR = 1e-12
# representatives whose folded energies agree this closely are copies of one branch
_COPY_TOL = 1e-7


class FloquetError(RuntimeError):
    """Branch identification failed or the propagator was not unitary."""


@dataclass(frozen=True)
class CosineDrive:
    """Continuous drive -P * 2pi*amplitude * cos(2pi*freq*t + phase); GHz and radians."""

    freq: float
    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        if self.freq <= 0:
            raise ValueError("drive frequency must be positive")
        if self.amplitude < 0:
            raise ValueError("drive amplitude must be non-negative")

    @property
    def period(self) -> float:
        return 1.0 / self.freq

    def one_period_protocol(self) -> DriveProtocol:
        pulse = PulseSpec(self.amplitude, self.freq, self.period, 0.0, self.phase)
        return DriveProtocol((pulse,), self.period, self.period, lo_freq=self.freq)


@dataclass(frozen=True)
class QuasiEnergySpectrum:
    drive_freq: float
    branches: np.ndarray
    method: str
    raw_energies: np.ndarray | None = None
    modes: np.ndarray | None = None
    harmonic_cutoff: int | None = None
    boundary_weight: float | None = None

    @property
    def n_branches(self) -> int:
        return self.branches.size


def fold(x, drive_freq: float):
    """Map energies (GHz) into [-f/2, f/2)."""
    half = 0.5 * drive_freq
    return np.mod(np.asarray(x, dtype=float) + half, drive_freq) - half


def _as_drive(drive, amplitude=None) -> CosineDrive:
    if isinstance(drive, CosineDrive):
        return drive
    return CosineDrive(float(drive), float(amplitude or 0.0))


def quasi_energies_monodromy(ens: EnsembleSpec, drive, tol: float = 1e-10) -> QuasiEnergySpectrum:
    d = _as_drive(drive)
    u = unitary_propagator(ens, d.one_period_protocol(), 0.0, d.period, tol).entries
    lam = np.linalg.eigvals(u)
    eps = -np.angle(lam) / (TWO_PI * d.period)
    branches = np.sort(fold(eps, d.freq))
    return QuasiEnergySpectrum(d.freq, branches, "monodromy")


@dataclass(frozen=True)
class ExtendedFloquetOperator:
    harmonic_cutoff: int
    h0: np.ndarray
    v: np.ndarray
    omega: float

    @property
    def block_dim(self) -> int:
        return self.h0.shape[0]

    @property
    def dim(self) -> int:
        return (2 * self.harmonic_cutoff + 1) * self.block_dim

    @property
    def harmonics(self) -> np.ndarray:
        return np.arange(-self.harmonic_cutoff, self.harmonic_cutoff + 1)

    def matrix(self) -> np.ndarray:
        """Dense operator in rad/ns; block (n, n-1) holds V, block (n-1, n) holds V^dag."""
        d = self.block_dim
        big = np.zeros((self.dim, self.dim), dtype=complex)
        for k, m in enumerate(self.harmonics):
            sl = slice(k * d, (k + 1) * d)
            big[sl, sl] = self.h0 + m * self.omega * np.eye(d)
            if k > 0:
                prev = slice((k - 1) * d, k * d)
                big[sl, prev] = self.v
                big[prev, sl] = self.v.conj().T
        return big


def extended_operator(ens: EnsembleSpec, drive, harmonic_cutoff: int) -> ExtendedFloquetOperator:
    d = _as_drive(drive)
    if harmonic_cutoff < 1:
        raise ValueError("harmonic cutoff must be at least 1")
    h0 = static_hamiltonian(ens).entries
    p = polarization_operator(ens).entries
    v = -p * (TWO_PI * d.amplitude / 2.0) * np.exp(1j * d.phase)
    return ExtendedFloquetOperator(harmonic_cutoff, np.array(h0), v, TWO_PI * d.freq)


def quasi_energies_extended(
    ens: EnsembleSpec, drive, harmonic_cutoff: int = DEFAULT_CUTOFF
) -> QuasiEnergySpectrum:
    d = _as_drive(drive)
    op = extended_operator(ens, d, harmonic_cutoff)
    w, vecs = np.linalg.eigh(op.matrix())
    n_h = 2 * harmonic_cutoff + 1
    dim = ens.dim
    comps = vecs.T.reshape(-1, n_h, dim)
    weights = np.sum(np.abs(comps) ** 2, axis=2)
    harm = op.harmonics
    mbar = weights @ harm
    energies = w / TWO_PI
    folded = fold(energies, d.freq)
    centre = weights[:, harmonic_cutoff]

    order = np.lexsort((np.abs(mbar), -centre))
    chosen: list[int] = []
    for k in order:
        dup = False
        for c in chosen:
            gap = abs(folded[k] - folded[c])
            gap = min(gap, d.freq - gap)
            if gap < _COPY_TOL * max(1.0, d.freq) and abs(mbar[k] - mbar[c]) > 0.5:
                dup = True
                break
        if not dup:
            chosen.append(int(k))
        if len(chosen) == dim:
            break
    if len(chosen) < dim:
        raise FloquetError("could not identify one representative per branch; raise the cutoff")

    idx = np.array(chosen)
    boundary = float(np.max(weights[idx][:, [0, -1]]))
    sort = np.argsort(folded[idx], kind="stable")
    idx = idx[sort]
    return QuasiEnergySpectrum(
        d.freq,
        folded[idx],
        "extended",
        raw_energies=energies[idx],
        modes=comps[idx],
        harmonic_cutoff=harmonic_cutoff,
        boundary_weight=boundary,
    )


def convergence_report(
    ens: EnsembleSpec, drive, cutoffs=(10, 15, 20)
) -> list[tuple[int, float, float]]:
    """Rows (M, max branch drift vs the largest M in GHz, boundary weight)."""
    specs = [quasi_energies_extended(ens, drive, m) for m in cutoffs]
    ref = specs[-1].branches
    f = specs[-1].drive_freq
    rows = []
    for m, s in zip(cutoffs, specs):
        gap = np.abs(s.branches - ref)
        gap = np.minimum(gap, f - gap)
        rows.append((int(m), float(np.max(gap)), float(s.boundary_weight)))
    return rows


def match_branches(a: np.ndarray, b: np.ndarray, drive_freq: float) -> np.ndarray:
    """Circular distances between optimally paired branches of two spectra."""
    from scipy.optimize import linear_sum_assignment

    diff = np.abs(a[:, None] - b[None, :])
    diff = np.minimum(diff, drive_freq - diff)
    rows, cols = linear_sum_assignment(diff)
    return diff[rows, cols]


@dataclass(frozen=True)
class DipoleElements:
    m_values: np.ndarray
    values: np.ndarray

    def at(self, m: int) -> np.ndarray:
        hits = np.nonzero(self.m_values == m)[0]
        if hits.size == 0:
            raise KeyError(f"harmonic {m} not computed")
        return self.values[hits[0]]


def floquet_dipole_elements(modes: np.ndarray, polarization, m_range) -> DipoleElements:
    """d^m_{ab} = sum_q <u_a^{q+m}| P |u_b^q> from Fourier components ``modes[a, q, :]``."""
    if modes is None:
        raise FloquetError("Floquet modes are required (use the extended-space solver)")
    p = polarization.entries if isinstance(polarization, OperatorMatrix) else np.asarray(polarization)
    n_b, n_h, _ = modes.shape
    pu = np.einsum("ij,bqj->bqi", p, modes)
    ms = np.array(sorted(set(int(m) for m in m_range)))
    out = np.zeros((ms.size, n_b, n_b), dtype=complex)
    for k, m in enumerate(ms):
        if abs(m) >= n_h:
            continue
        if m >= 0:
            left = modes[:, m:, :]
            right = pu[:, : n_h - m, :]
        else:
            left = modes[:, : n_h + m, :]
            right = pu[:, -m:, :]
        out[k] = np.einsum("aqi,bqi->ab", left.conj(), right)
    return DipoleElements(ms, out)


@dataclass(frozen=True)
class ResponsePoleSet:
    frequencies: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    sideband: np.ndarray
    weights: np.ndarray
    eta: float

    def __len__(self) -> int:
        return self.frequencies.size


def response_poles(
    spectrum: QuasiEnergySpectrum,
    elements: DipoleElements,
    ell_range,
    eta: float = 1e-3,
    n: int = 0,
    m: int = 0,
) -> ResponsePoleSet:
    """Poles at E_a - E_b + l*f_d (GHz) with weight |d^l_ab| |d^{m-n-l}_ba|."""
    energies = spectrum.raw_energies if spectrum.raw_energies is not None else spectrum.branches
    f = spectrum.drive_freq
    rows = []
    nb = energies.size
    for ell in sorted(set(int(x) for x in ell_range)):
        d_l = elements.at(ell)
        d_r = elements.at(m - n - ell)
        for a in range(nb):
            for b in range(nb):
                w = abs(d_l[a, b]) * abs(d_r[b, a])
                if w < POLE_WEIGHT_FLOOR:
                    continue
                rows.append((energies[a] - energies[b] + ell * f, a, b, ell, w))
    rows.sort(key=lambda r: (r[0], r[3], r[1], r[2]))
    arr = np.array(rows, dtype=float).reshape(len(rows), 5)
    return ResponsePoleSet(
        arr[:, 0], arr[:, 1].astype(int), arr[:, 2].astype(int), arr[:, 3].astype(int),
        arr[:, 4], eta,
    )


def quasi_energy_sweep(
    ens: EnsembleSpec,
    drive_freqs,
    amplitude: float,
    method: str = "monodromy",
    harmonic_cutoff: int = DEFAULT_CUTOFF,
) -> np.ndarray:
    """Folded quasi-energies (GHz), one row per drive frequency."""
    rows = []
    for f in drive_freqs:
        d = CosineDrive(float(f), amplitude)
        if method == "monodromy":
            rows.append(quasi_energies_monodromy(ens, d).branches)
        elif method == "extended":
            rows.append(quasi_energies_extended(ens, d, harmonic_cutoff).branches)
        else:
            raise ValueError(f"unknown method {method!r}")
    return np.array(rows)
