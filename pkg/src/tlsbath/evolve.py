"""Lindblad time evolution with collective decay, sampled on a uniform output grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _integrator as _ig
from .hilbert import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    DensityState,
    DimensionError,
    OperatorMatrix,
    collective_lowering,
    embed_site_operator,
    ground_ket,
)
from .model import TWO_PI, DriveProtocol, EnsembleSpec, polarization_operator, static_hamiltonian

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-11

TRACE_TOL = 1e-8
HERM_TOL = 1e-10
EIG_TOL = -1e-8

FREE_EXACT = "exact"
FREE_RK = "rk"


class IntegrationError(RuntimeError):
    """The stepper could not reach the requested tolerance."""

    def __init__(self, message: str, t_fail: float | None = None):
        super().__init__(message)
        self.t_fail = t_fail


class PhysicalityError(IntegrationError):
    """A sampled density matrix violated trace, Hermiticity or positivity bounds."""


@dataclass(frozen=True)
class TimeSeries:
    t0: float
    dt: float
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        s = np.array(self.samples)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1D sequence")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def with_samples(self, samples, label: str | None = None) -> TimeSeries:
        return TimeSeries(self.t0, self.dt, samples, self.label if label is None else label)


@dataclass(frozen=True)
class Observable:
    """Named selector for an operator whose expectation value is recorded."""

    label: str
    kind: str
    site: int | None = None
    operator: OperatorMatrix | None = field(default=None, compare=False)

    @classmethod
    def collective_population(cls) -> Observable:
        return cls("collective_population", "collective_population")

    @classmethod
    def site_coherence(cls, j: int) -> Observable:
        """<sigma_j^+>."""
        return cls(f"coherence_{j}", "site_coherence", j)

    @classmethod
    def site_population(cls, j: int) -> Observable:
        return cls(f"population_{j}", "site_population", j)

    @classmethod
    def total_population(cls) -> Observable:
        return cls("total_population", "total_population")

    @classmethod
    def custom(cls, label: str, op: OperatorMatrix) -> Observable:
        return cls(label, "custom", None, op)

    def matrix(self, n_sites: int) -> np.ndarray:
        if self.kind == "collective_population":
            sm = collective_lowering(n_sites).entries
            return sm.conj().T @ sm
        if self.kind == "total_population":
            num = SIGMA_PLUS @ SIGMA_MINUS
            return sum(embed_site_operator(num, j, n_sites).entries for j in range(n_sites))
        if self.kind == "site_coherence":
            return embed_site_operator(SIGMA_PLUS, self.site, n_sites).entries
        if self.kind == "site_population":
            return embed_site_operator(SIGMA_PLUS @ SIGMA_MINUS, self.site, n_sites).entries
        if self.kind == "custom":
            if self.operator.dim != 2**n_sites:
                raise DimensionError("custom observable has the wrong dimension")
            return self.operator.entries
        raise ValueError(f"unknown observable kind {self.kind!r}")

    @property
    def is_real(self) -> bool:
        if self.kind == "custom":
            return self.operator.hermitian
        return self.kind != "site_coherence"


@dataclass(frozen=True)
class EvolveRequest:
    ensemble: EnsembleSpec
    protocol: DriveProtocol
    observables: tuple[Observable, ...] = (Observable.collective_population(),)
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    initial_state: DensityState | None = None
    free_evolution: str = FREE_EXACT
    max_step: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "observables", tuple(self.observables))
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.free_evolution not in (FREE_EXACT, FREE_RK):
            raise ValueError(f"free_evolution must be {FREE_EXACT!r} or {FREE_RK!r}")
        if self.initial_state is not None and self.initial_state.dim != self.ensemble.dim:
            raise DimensionError("initial state does not match the ensemble dimension")


MAX_REFINEMENTS = 2


@dataclass
class Diagnostics:
    max_trace_error: float
    max_hermiticity_error: float
    min_eigenvalue: float
    n_evaluations: int
    refinements: int = 0

    def ok(self) -> bool:
        return (
            self.max_trace_error <= TRACE_TOL
            and self.max_hermiticity_error <= HERM_TOL
            and self.min_eigenvalue >= EIG_TOL
        )


@dataclass
class EvolveResult:
    series: dict[str, TimeSeries]
    states: np.ndarray
    times: np.ndarray
    diagnostics: Diagnostics


def lindblad_rhs(rho, h, gamma: float) -> np.ndarray:
    """-i[H, rho] + G (2 S- rho S+ - {S+S-, rho}) with G = 2pi * gamma (gamma in GHz)."""
    r = rho.rho if isinstance(rho, DensityState) else np.asarray(rho, dtype=complex)
    hm = h.entries if isinstance(h, OperatorMatrix) else np.asarray(h, dtype=complex)
    if r.shape != hm.shape:
        raise DimensionError(f"state {r.shape} and Hamiltonian {hm.shape} differ")
    n_sites = int(round(math.log2(r.shape[0])))
    sm = collective_lowering(n_sites).entries
    sp = sm.conj().T
    k = sp @ sm
    g = TWO_PI * gamma
    return -1j * (hm @ r - r @ hm) + g * (2.0 * sm @ r @ sp - k @ r - r @ k)


def liouvillian(h, gamma: float) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    hm = h.entries if isinstance(h, OperatorMatrix) else np.asarray(h, dtype=complex)
    dim = hm.shape[0]
    n_sites = int(round(math.log2(dim)))
    sm = collective_lowering(n_sites).entries
    sp = sm.conj().T
    g = TWO_PI * gamma
    m0 = -1j * hm - g * (sp @ sm)
    eye = np.eye(dim)
    return np.kron(m0, eye) + np.kron(eye, m0.conj()) + 2.0 * g * np.kron(sm, sp.T)


@dataclass(frozen=True)
class _Segment:
    t_from: float
    t_to: float
    prow: np.ndarray | None


def _segments(protocol: DriveProtocol, t_from: float, t_to: float) -> list[_Segment]:
    edges = {t_from, t_to}
    for p in protocol.pulses:
        for e in (p.start, p.end):
            if t_from < e < t_to:
                edges.add(e)
    cuts = sorted(edges)
    table = protocol.pulse_table()
    segs = []
    for a, b in zip(cuts, cuts[1:]):
        mid = 0.5 * (a + b)
        prow = None
        for k, p in enumerate(protocol.pulses):
            if p.start <= mid < p.end and p.amplitude > 0.0:
                prow = table[k].copy()
                break
        segs.append(_Segment(a, b, prow))
    return segs


_NO_PULSE = np.zeros(6)


def _coo(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, c = np.nonzero(m)
    return r.astype(np.int64), c.astype(np.int64), np.ascontiguousarray(m[r, c], dtype=complex)


class _System:
    """Matrices shared by every segment of one evolution."""

    def __init__(self, ens: EnsembleSpec, unitary: bool):
        self.dim = ens.dim
        self.h0 = np.ascontiguousarray(static_hamiltonian(ens).entries)
        self.p = np.ascontiguousarray(polarization_operator(ens).entries)
        sm = collective_lowering(ens.n_sites).entries
        self.sm = np.ascontiguousarray(sm)
        self.sp = np.ascontiguousarray(sm.conj().T)
        g = 0.0 if unitary else TWO_PI * ens.gamma
        self.g2 = 2.0 * g
        self.m0 = np.ascontiguousarray(-1j * self.h0 - g * (self.sp @ self.sm))
        self.mode = _ig.MODE_UNITARY if unitary else _ig.MODE_LINDBLAD
        self.ops = _coo(self.m0) + _coo(self.p) + _coo(self.sm)
        self._free_gen = None
        self._cache: dict[float, np.ndarray] = {}

    def free_generator(self) -> np.ndarray:
        if self._free_gen is None:
            if self.mode == _ig.MODE_UNITARY:
                self._free_gen = -1j * self.h0
            else:
                eye = np.eye(self.dim)
                self._free_gen = (
                    np.kron(self.m0, eye)
                    + np.kron(eye, self.m0.conj())
                    + self.g2 * np.kron(self.sm, self.sp.T)
                )
        return self._free_gen

    def free_propagator(self, dt: float) -> np.ndarray:
        key = float(dt)
        if key not in self._cache:
            self._cache[key] = expm(self.free_generator() * dt)
        return self._cache[key]

    def apply_free(self, y: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0.0:
            return y.copy()
        e = self.free_propagator(dt)
        if self.mode == _ig.MODE_UNITARY:
            return e @ y
        out = e @ y.ravel()
        out = out.reshape(self.dim, self.dim)
        # restore exact Hermiticity lost to rounding in the superoperator product
        return 0.5 * (out + out.conj().T)

    def run_rk(self, y, a, b, prow, ts, out, rtol, atol, max_step):
        y_end, nfev, status, t_fail = _ig.integrate_segment(
            self.mode, a, b, y, self.ops, self.g2,
            _NO_PULSE if prow is None else prow, ts, out, rtol, atol, max_step,
        )
        if status != _ig.STATUS_OK:
            raise IntegrationError(f"step size underflow at t = {t_fail:.6g} ns", t_fail)
        return y_end, nfev


def _propagate(sys: _System, y0, protocol, t_from, t_to, ts, rtol, atol, free_mode, max_step):
    """Advance ``y0`` over [t_from, t_to]; returns (states at ts, final state, n_eval)."""
    out = np.zeros((ts.size, sys.dim, sys.dim), dtype=complex)
    filled = np.zeros(ts.size, dtype=bool)
    y = np.ascontiguousarray(y0, dtype=complex)
    nfev = 0
    for seg in _segments(protocol, t_from, t_to):
        a, b = seg.t_from, seg.t_to
        sel = np.nonzero(~filled & (ts >= a) & (ts <= b))[0]
        if seg.prow is None and free_mode == FREE_EXACT:
            t_prev = a
            for k in sel:
                y = sys.apply_free(y, ts[k] - t_prev)
                out[k] = y
                t_prev = ts[k]
            y = sys.apply_free(y, b - t_prev)
        else:
            seg_ts = np.ascontiguousarray(ts[sel])
            seg_out = np.zeros((sel.size, sys.dim, sys.dim), dtype=complex)
            y, n = sys.run_rk(y, a, b, seg.prow, seg_ts, seg_out, rtol, atol, max_step)
            out[sel] = seg_out
            nfev += n
        filled[sel] = True
    return out, y, nfev


def check_physicality(states: np.ndarray) -> Diagnostics:
    tr = np.einsum("kii->k", states)
    trace_err = float(np.max(np.abs(tr - 1.0))) if states.size else 0.0
    herm_err = float(np.max(np.abs(states - states.conj().transpose(0, 2, 1)))) if states.size else 0.0
    herm = 0.5 * (states + states.conj().transpose(0, 2, 1))
    min_eig = float(np.min(np.linalg.eigvalsh(herm))) if states.size else 0.0
    return Diagnostics(trace_err, herm_err, min_eig, 0)


def evolve_detailed(req: EvolveRequest, check: bool = True) -> EvolveResult:
    ens = req.ensemble
    sys = _System(ens, unitary=False)
    if req.initial_state is None:
        psi = ground_ket(ens.n_sites)
        rho0 = np.outer(psi, psi.conj())
    else:
        rho0 = np.array(req.initial_state.rho)
    ts = req.protocol.sample_times()
    # Truncation error can push nearly pure states just past the eigenvalue
    # bound; retry with tighter tolerances before declaring failure.
    nfev = 0
    for attempt in range(MAX_REFINEMENTS + 1):
        scale = 10.0 ** (-attempt)
        states, _, n = _propagate(
            sys, rho0, req.protocol, 0.0, req.protocol.t_end, ts, req.rtol * scale,
            req.atol * scale, req.free_evolution, req.max_step,
        )
        nfev += n
        diag = check_physicality(states)
        if diag.ok() or not check:
            break
    diag.n_evaluations = nfev
    diag.refinements = attempt
    if check and not diag.ok():
        raise PhysicalityError(
            "density matrix left the physical set: "
            f"trace error {diag.max_trace_error:.2e}, Hermiticity error "
            f"{diag.max_hermiticity_error:.2e}, min eigenvalue {diag.min_eigenvalue:.2e}"
        )
    series = {}
    dt = req.protocol.sample_step
    for obs in req.observables:
        m = obs.matrix(ens.n_sites)
        vals = np.einsum("kij,ji->k", states, m)
        if obs.is_real:
            vals = vals.real.copy()
        series[obs.label] = TimeSeries(0.0, dt, vals, obs.label)
    return EvolveResult(series, states, ts, diag)


def evolve(req: EvolveRequest) -> dict[str, TimeSeries]:
    """Integrate the master equation from the all-ground state (unless overridden)."""
    return evolve_detailed(req).series


def unitary_propagator(
    ens: EnsembleSpec,
    protocol: DriveProtocol,
    t_from: float,
    t_to: float,
    tol: float = 1e-10,
    free_evolution: str = FREE_EXACT,
) -> OperatorMatrix:
    """Time-ordered propagator of H(t) alone (dissipation ignored)."""
    if t_to < t_from:
        raise ValueError("t_to must not precede t_from")
    sys = _System(ens, unitary=True)
    u0 = np.eye(ens.dim, dtype=complex)
    if t_to == t_from:
        return OperatorMatrix(u0)
    # local tolerances are tightened so the accumulated unitarity defect stays below 10*tol
    inner = 1e-2 * tol / max(1.0, (t_to - t_from) / 50.0)
    _, u, _ = _propagate(
        sys, u0, protocol, t_from, t_to, np.empty(0), inner, inner, free_evolution, math.inf
    )
    dev = np.max(np.abs(u.conj().T @ u - np.eye(ens.dim)))
    if dev > 10.0 * tol:
        raise IntegrationError(f"propagator non-unitary: deviation {dev:.2e}")
    return OperatorMatrix(u)


def slice_from(series: TimeSeries, t_ref: float) -> TimeSeries:
    """Sub-series starting at the first grid point at or after ``t_ref``, re-timed so
    that ``t_ref`` maps to 0. The leftover offset is stored in ``t0``."""
    times = series.times
    eps = 1e-9 * series.dt
    idx = int(np.searchsorted(times, t_ref - eps, side="left"))
    if idx >= times.size:
        raise ValueError("series grid does not cover the reference time")
    offset = max(0.0, float(times[idx] - t_ref))
    if offset < eps:
        offset = 0.0
    return TimeSeries(offset, series.dt, series.samples[idx:], series.label)


def post_pulse_slice(series: TimeSeries, protocol: DriveProtocol) -> TimeSeries:
    if not protocol.pulses:
        raise ValueError("protocol has no pulses")
    end = protocol.last_pulse_end
    if series.times[-1] <= end:
        raise ValueError("series grid has no samples after the pulse end")
    return slice_from(series, end)
