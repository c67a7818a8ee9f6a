"""Named sweep recipes: model -> evolve -> signal chains for each simulated protocol.

Every recipe is a pure function of its configuration (including the seed). Sweep points
are evaluated independently, optionally in worker processes, and reassembled in grid
order so that outputs do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import floquet
from .evolve import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    Diagnostics,
    EvolveRequest,
    Observable,
    TimeSeries,
    evolve_detailed,
    slice_from,
)
from .model import (
    DEFAULT_RAMP_FRACTION,
    SQUARE,
    SQUARE_COSINE_RAMP,
    DriveProtocol,
    EnsembleSpec,
    PulseSpec,
    sample_random_ensemble,
)
from .perturb import PerturbParams, analytic_phase_spectrum
from .signal import (
    HANN,
    NONE,
    PER_COLUMN_MAX,
    RECT,
    EmitterSet,
    PeakSet,
    Slice,
    SpectralMap,
    TimeGrid,
    amp_phase,
    average_slices,
    build_map,
    demodulate,
    detect_peaks,
    magnitude_fft,
    phase_fft,
    pulse_response_weight,
    relative_phase,
    spectral_density,
    synth_field,
    zero_frequency_slice,
    zero_time_slice,
)

KINDS = (
    "drive_frequency_map",
    "duration_sweep",
    "two_pulse_amplitude",
    "two_pulse_phase",
    "gap_sweep",
    "detuning_study",
    "interaction_study",
    "amplitude_sweep",
    "analytic_map",
    "density",
)
SWEPT_PARAMETERS = {
    "drive_frequency_map": "drive_freq",
    "duration_sweep": "pulse_duration",
    "two_pulse_amplitude": "first_pulse_amplitude",
    "two_pulse_phase": "first_pulse_phase",
    "gap_sweep": "inter_pulse_gap",
    "detuning_study": "detuning",
    "interaction_study": "coupling",
    "amplitude_sweep": "pulse_amplitude",
    "analytic_map": "drive_freq",
    "density": "drive_freq",
}
DEFAULT_GRID_POINTS = 201
MIN_GRID_POINTS = 3


class RecipeError(RuntimeError):
    """A sweep point failed; the message names the recipe and the point."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Grid:
    """Either an explicit value list or a linear range whose density may be rescaled."""

    values: tuple[float, ...] = ()
    start: float | None = None
    stop: float | None = None
    n: int | None = None
    fixed: bool = False  # resolution is part of the method; grid_scale leaves it alone

    @classmethod
    def linear(cls, start: float, stop: float, n: int = DEFAULT_GRID_POINTS,
               fixed: bool = False) -> Grid:
        return cls((), float(start), float(stop), int(n), fixed)

    @classmethod
    def explicit(cls, values: Sequence[float]) -> Grid:
        return cls(tuple(float(v) for v in values))

    @property
    def is_linear(self) -> bool:
        return self.n is not None

    def resolve(self, scale: float = 1.0) -> np.ndarray:
        if self.is_linear:
            if scale <= 0:
                raise ValueError("grid scale must be positive")
            n = self.n
            if scale != 1.0 and not self.fixed:
                n = max(MIN_GRID_POINTS, int(round(self.n * scale)))
            vals = np.linspace(self.start, self.stop, n)
        else:
            vals = np.array(self.values, dtype=float)
        if vals.size == 0:
            raise ValueError("sweep grid is empty")
        if vals.size > 1 and not np.all(np.diff(vals) > 0):
            raise ValueError("sweep grid must be strictly increasing")
        return vals


@dataclass(frozen=True)
class EnsembleConfig:
    frequencies: tuple[float, ...] = (4.0,)
    coupling: float = 0.0
    gamma: float = 0.002
    coupling_range: tuple[float, float] | None = None
    freq_range: tuple[float, float] | None = None

    def build(self, seed: int | None, coupling: float | None = None) -> EnsembleSpec:
        n = len(self.frequencies)
        jval = self.coupling if coupling is None else coupling
        if self.freq_range is None and self.coupling_range is None:
            return EnsembleSpec.from_frequencies(self.frequencies, jval, self.gamma)
        crange = self.coupling_range if self.coupling_range is not None else (0.0, 0.0)
        frange = self.freq_range if self.freq_range is not None else (1.0, 1.0)
        drawn = sample_random_ensemble(n, frange, crange, self.gamma, seed)
        freqs = drawn.frequencies if self.freq_range is not None else self.frequencies
        if self.coupling_range is not None:
            j = drawn.coupling
        else:
            j = np.full((n, n), float(jval))
            np.fill_diagonal(j, 0.0)
        ens = EnsembleSpec.from_frequencies(freqs, j, self.gamma)
        return EnsembleSpec(ens.tls, ens.coupling, ens.gamma, seed)


@dataclass(frozen=True)
class PulseConfig:
    drive_freq: float = 4.0
    amplitude: float = 0.1
    duration: float = 100.0
    envelope: str = SQUARE
    ramp_fraction: float = DEFAULT_RAMP_FRACTION
    phase: float = 0.0
    amplitude2: float | None = None
    gap: float = 100.0
    phase2: float = 0.0


@dataclass(frozen=True)
class AnalysisConfig:
    window: str = RECT
    zero_pad_factor: int = 4
    dc_bin_tolerance: float = 1.0
    threshold: float = 2.0
    threshold_mode: str = "median"  # "median": threshold x median of the slice; "absolute"
    min_separation: float = 0.002
    lowpass_cutoff: float | None = None
    phase_pair: tuple[int, int] = (0, 1)
    beat_window: str = HANN
    dc_exclusion_mhz: float = 30.0
    # phase used for V-base slices: demodulated ring-down ("demod_post") or
    # arg(<s1+>/<s2+>) over the whole record ("relative_full")
    v_observable: str = "demod_post"

    def __post_init__(self):
        if self.window not in (RECT, HANN) or self.beat_window not in (RECT, HANN):
            raise ValueError("window must be 'rect' or 'hann'")
        if self.threshold_mode not in ("median", "absolute"):
            raise ValueError("threshold_mode must be 'median' or 'absolute'")
        if self.v_observable not in ("demod_post", "relative_full"):
            raise ValueError("v_observable must be 'demod_post' or 'relative_full'")
        if self.zero_pad_factor < 1:
            raise ValueError("zero_pad_factor must be at least 1")


@dataclass(frozen=True)
class SweepRecipe:
    name: str
    kind: str
    swept: str
    grid: Grid
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    drive_grid: Grid | None = None
    t_after: float = 300.0
    sample_step: float = 0.25
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    version: int = 1
    amplitude_scale: float = 1.0
    cut_freq: float | None = None
    floquet_table: bool = False
    observables: tuple[str, ...] = ("collective_population", "site_coherences")
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown recipe kind {self.kind!r}")
        if self.swept != SWEPT_PARAMETERS[self.kind]:
            raise ValueError(
                f"recipe kind {self.kind!r} sweeps {SWEPT_PARAMETERS[self.kind]!r}, not {self.swept!r}"
            )
        self.grid.resolve()
        if self.drive_grid is not None:
            self.drive_grid.resolve()

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# outputs


@dataclass
class RecipeResult:
    name: str
    time_grids: dict[str, TimeGrid] = field(default_factory=dict)
    maps: dict[str, SpectralMap] = field(default_factory=dict)
    slices: dict[str, Slice] = field(default_factory=dict)
    peaks: dict[str, PeakSet] = field(default_factory=dict)
    tables: dict[str, tuple[tuple[str, ...], np.ndarray]] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)
    physicality: Diagnostics | None = None

    def absorb(self, diag: Diagnostics) -> None:
        if self.physicality is None:
            self.physicality = Diagnostics(
                diag.max_trace_error, diag.max_hermiticity_error, diag.min_eigenvalue,
                diag.n_evaluations, diag.refinements,
            )
            return
        p = self.physicality
        p.max_trace_error = max(p.max_trace_error, diag.max_trace_error)
        p.max_hermiticity_error = max(p.max_hermiticity_error, diag.max_hermiticity_error)
        p.min_eigenvalue = min(p.min_eigenvalue, diag.min_eigenvalue)
        p.n_evaluations += diag.n_evaluations
        p.refinements += diag.refinements


# ---------------------------------------------------------------------------
# point evaluation


@dataclass(frozen=True)
class PointTask:
    ensemble: EnsembleSpec
    protocol: DriveProtocol
    observables: tuple[Observable, ...]
    rtol: float
    atol: float
    label: str = ""


@dataclass
class PointResult:
    t0: float
    dt: float
    series: dict[str, np.ndarray]
    diagnostics: Diagnostics

    def ts(self, label: str) -> TimeSeries:
        return TimeSeries(self.t0, self.dt, self.series[label], label)


def run_point(task: PointTask) -> PointResult:
    req = EvolveRequest(task.ensemble, task.protocol, task.observables, task.rtol, task.atol)
    try:
        res = evolve_detailed(req)
    except Exception as exc:  # re-raised with sweep context
        raise RecipeError(f"sweep point {task.label or '?'} failed: {exc}") from exc
    series = {k: np.asarray(v.samples) for k, v in res.series.items()}
    return PointResult(0.0, task.protocol.sample_step, series, res.diagnostics)


def map_points(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map; results are keyed by position, never by completion order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _observables(n_sites: int) -> tuple[Observable, ...]:
    return (Observable.collective_population(),) + tuple(
        Observable.site_coherence(j) for j in range(n_sites)
    )


def single_pulse_protocol(pc: PulseConfig, t_after: float, sample_step: float,
                          **overrides) -> DriveProtocol:
    p = replace(pc, **overrides)
    pulse = PulseSpec(p.amplitude, p.drive_freq, p.duration, 0.0, p.phase, p.envelope,
                      p.ramp_fraction)
    return DriveProtocol((pulse,), pulse.end + t_after, sample_step, lo_freq=p.drive_freq)


def two_pulse_protocol(pc: PulseConfig, t_after: float, sample_step: float,
                       include_first: bool = True, **overrides) -> DriveProtocol:
    p = replace(pc, **overrides)
    a2 = p.amplitude if p.amplitude2 is None else p.amplitude2
    first = PulseSpec(p.amplitude, p.drive_freq, p.duration, 0.0, p.phase, p.envelope,
                      p.ramp_fraction)
    second = PulseSpec(a2, p.drive_freq, p.duration, p.duration + p.gap, p.phase2, p.envelope,
                       p.ramp_fraction)
    pulses = (first, second) if include_first else (second,)
    return DriveProtocol(pulses, second.end + t_after, sample_step, lo_freq=p.drive_freq)


def lowering_series(res: PointResult, n_sites: int) -> TimeSeries:
    """<S-> = sum_j conj(<sigma_j^+>)."""
    total = sum(np.conj(res.series[f"coherence_{j}"]) for j in range(n_sites))
    return TimeSeries(res.t0, res.dt, total, "lowering")


def demod_phase(res: PointResult, n_sites: int, lo_freq: float, cutoff: float | None,
                t_from: float = 0.0) -> TimeSeries:
    sig = lowering_series(res, n_sites)
    if t_from > 0.0:
        sig = slice_from(sig, t_from)
    return amp_phase(demodulate(sig, lo_freq, 0.0, cutoff))[1]


def rel_phase(res: PointResult, pair: tuple[int, int]) -> TimeSeries:
    return relative_phase(res.ts(f"coherence_{pair[0]}"), res.ts(f"coherence_{pair[1]}"))


def _threshold(sl: Slice, ac: AnalysisConfig) -> float:
    if ac.threshold_mode == "absolute":
        return ac.threshold
    med = float(np.median(sl.values))
    return ac.threshold * med if med > 0 else ac.threshold


def _grid(values: np.ndarray, rows: list[np.ndarray], times: np.ndarray, label: str) -> TimeGrid:
    n = min(r.size for r in rows)
    return TimeGrid(label, values, times[:n], np.vstack([r[:n] for r in rows]))


# ---------------------------------------------------------------------------
# drive-frequency maps (shared by several recipes)


@dataclass
class DriveMap:
    freqs: np.ndarray
    points: list[PointResult]
    protocols: list[DriveProtocol]


def _drive_map(recipe: SweepRecipe, ens: EnsembleSpec, freqs: np.ndarray, workers: int,
               **pulse_overrides) -> DriveMap:
    obs = _observables(ens.n_sites)
    protos = [
        single_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                              drive_freq=float(f), **pulse_overrides)
        for f in freqs
    ]
    tasks = [PointTask(ens, p, obs, recipe.rtol, recipe.atol, f"{recipe.name}@{f:.6g}GHz")
             for p, f in zip(protos, freqs)]
    return DriveMap(freqs, map_points(run_point, tasks, workers), protos)


def _relative_phase_map(dm: DriveMap, ac: AnalysisConfig) -> SpectralMap:
    rows = [(float(f), phase_fft(rel_phase(r, ac.phase_pair), ac.window, ac.zero_pad_factor))
            for f, r in zip(dm.freqs, dm.points)]
    return build_map(rows, PER_COLUMN_MAX)


def _demod_phase_map(dm: DriveMap, n_sites: int, ac: AnalysisConfig,
                     post_pulse: bool = True) -> SpectralMap:
    rows = []
    for f, r, p in zip(dm.freqs, dm.points, dm.protocols):
        t_from = p.last_pulse_end if post_pulse else 0.0
        ph = demod_phase(r, n_sites, float(f), ac.lowpass_cutoff, t_from)
        rows.append((float(f), phase_fft(ph, ac.window, ac.zero_pad_factor)))
    return build_map(rows, NONE)


def _population_grid(dm: DriveMap) -> TimeGrid:
    rows = [r.series["collective_population"] for r in dm.points]
    times = dm.points[0].t0 + dm.points[0].dt * np.arange(rows[0].size)
    return _grid(dm.freqs, rows, times, "drive_freq_GHz")


def _ringdown_slice(dm: DriveMap) -> Slice:
    vals = []
    for r, p in zip(dm.points, dm.protocols):
        post = slice_from(r.ts("collective_population"), p.last_pulse_end)
        vals.append(float(np.mean(post.samples)))
    return Slice("drive_freq_GHz", dm.freqs, vals)


def _absorb(result: RecipeResult, points: Sequence[PointResult]) -> None:
    for p in points:
        result.absorb(p.diagnostics)


# ---------------------------------------------------------------------------
# recipes


def run_drive_frequency_map(recipe: SweepRecipe, workers: int = 1,
                            grid_scale: float = 1.0) -> RecipeResult:
    ens = recipe.ensemble.build(recipe.seed)
    freqs = recipe.grid.resolve(grid_scale)
    dm = _drive_map(recipe, ens, freqs, workers)
    out = RecipeResult(recipe.name)
    _absorb(out, dm.points)
    ac = recipe.analysis
    out.time_grids["population"] = _population_grid(dm)
    out.maps["relative_phase_fft"] = _relative_phase_map(dm, ac)
    out.maps["demod_phase_fft"] = _demod_phase_map(dm, ens.n_sites, ac)
    out.slices["dc_relative_phase"] = zero_frequency_slice(out.maps["relative_phase_fft"],
                                                           ac.dc_bin_tolerance)
    out.slices["dc_demod_phase"] = zero_frequency_slice(out.maps["demod_phase_fft"],
                                                        ac.dc_bin_tolerance)
    out.slices["zero_time"] = zero_time_slice(out.time_grids["population"],
                                              [p.last_pulse_end for p in dm.protocols])
    ring = _ringdown_slice(dm)
    out.slices["ringdown_mean"] = ring
    out.scalars["max_ringdown_freq_GHz"] = float(freqs[int(np.argmax(ring.values))])
    if recipe.floquet_table:
        qe = floquet.quasi_energy_sweep(ens, freqs, recipe.pulse.amplitude, "monodromy")
        cols = ("drive_freq_GHz",) + tuple(f"branch_{k}_GHz" for k in range(qe.shape[1]))
        out.tables["quasi_energies"] = (cols, np.column_stack([freqs, qe]))
    return out


def run_duration_sweep(recipe: SweepRecipe, workers: int = 1,
                       grid_scale: float = 1.0) -> RecipeResult:
    ens = recipe.ensemble.build(recipe.seed)
    taus = recipe.grid.resolve(grid_scale)
    freqs = _require(recipe.drive_grid, "drive_grid").resolve(grid_scale)
    ac = recipe.analysis
    out = RecipeResult(recipe.name)
    obs = _observables(ens.n_sites)
    tasks, protos = [], []
    for tau in taus:
        for f in freqs:
            p = single_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                                      drive_freq=float(f), duration=float(tau))
            protos.append(p)
            tasks.append(PointTask(ens, p, obs, recipe.rtol, recipe.atol,
                                   f"{recipe.name}@tau={tau:g},f={f:.6g}"))
    points = map_points(run_point, tasks, workers)
    _absorb(out, points)
    dc_slices, zt_slices = [], []
    nf = freqs.size
    for k, tau in enumerate(taus):
        dm = DriveMap(freqs, points[k * nf:(k + 1) * nf], protos[k * nf:(k + 1) * nf])
        tag = f"tau{tau:g}"
        rel = _relative_phase_map(dm, ac)
        out.maps[f"relative_phase_fft_{tag}"] = rel
        if ac.v_observable == "relative_full":
            smap = rel
        else:
            smap = _demod_phase_map(dm, ens.n_sites, ac)
            out.maps[f"demod_phase_fft_{tag}"] = smap
        out.time_grids[f"population_{tag}"] = _population_grid(dm)
        dc = zero_frequency_slice(smap, ac.dc_bin_tolerance)
        zt = zero_time_slice(out.time_grids[f"population_{tag}"], tau)
        out.slices[f"dc_{tag}"] = dc
        out.slices[f"zero_time_{tag}"] = zt
        dc_slices.append(dc)
        zt_slices.append(zt)
        pk = detect_peaks(dc, _threshold(dc, ac), ac.min_separation)
        out.peaks[f"dc_{tag}"] = pk
    out.tables["dc_slice_stack"] = (
        ("duration_ns",) + tuple(f"f={f:.6f}GHz" for f in freqs),
        np.column_stack([taus, np.vstack([s.values for s in dc_slices])]),
    )
    out.tables["zero_time_stack"] = (
        ("duration_ns",) + tuple(f"f={f:.6f}GHz" for f in freqs),
        np.column_stack([taus, np.vstack([s.values for s in zt_slices])]),
    )
    avg = average_slices(dc_slices)
    out.slices["dc_average"] = avg
    out.peaks["dc_average"] = detect_peaks(avg, _threshold(avg, ac), ac.min_separation)
    return out


def _require(x, name):
    if x is None:
        raise ValueError(f"recipe needs {name}")
    return x


def run_two_pulse_amplitude_control(recipe: SweepRecipe, workers: int = 1,
                                    grid_scale: float = 1.0) -> RecipeResult:
    ens = recipe.ensemble.build(recipe.seed)
    a1s = recipe.grid.resolve(grid_scale) * recipe.amplitude_scale
    obs = (Observable.collective_population(),)
    protos = [two_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                                 amplitude=float(a)) for a in a1s]
    ref = two_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                             include_first=False)
    tasks = [PointTask(ens, p, obs, recipe.rtol, recipe.atol, f"{recipe.name}@A1={a:.6g}")
             for p, a in zip(protos, a1s)]
    tasks.append(PointTask(ens, ref, obs, recipe.rtol, recipe.atol, f"{recipe.name}@reference"))
    points = map_points(run_point, tasks, workers)
    out = RecipeResult(recipe.name)
    _absorb(out, points)
    end2 = protos[0].last_pulse_end
    rows = [slice_from(pt.ts("collective_population"), end2) for pt in points]
    times = rows[0].t0 + rows[0].dt * np.arange(len(rows[0]))
    out.time_grids["post_second_pulse"] = _grid(
        a1s, [r.samples for r in rows[:-1]], times, "first_pulse_amplitude_GHz"
    )
    out.time_grids["full"] = _grid(
        a1s, [pt.series["collective_population"] for pt in points[:-1]],
        points[0].dt * np.arange(points[0].series["collective_population"].size),
        "first_pulse_amplitude_GHz",
    )
    ref_row = rows[-1].samples
    out.tables["single_pulse_reference"] = (("t_ns", "collective_population"),
                                            np.column_stack([times[: ref_row.size], ref_row]))
    zero = np.nonzero(a1s == 0.0)[0]
    if zero.size:
        out.scalars["a1_zero_max_deviation"] = float(np.max(np.abs(rows[zero[0]].samples - ref_row)))
    return out


def fringe_contrast(grid: TimeGrid) -> float:
    """max over t of (max - min over the sweep axis)."""
    v = np.real(grid.values)
    return float(np.max(v.max(axis=0) - v.min(axis=0)))


def run_two_pulse_phase_control(recipe: SweepRecipe, workers: int = 1,
                                grid_scale: float = 1.0) -> RecipeResult:
    ens = recipe.ensemble.build(recipe.seed)
    phis = recipe.grid.resolve(grid_scale)
    obs = (Observable.collective_population(),)
    protos = [two_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                                 phase=math.radians(float(d))) for d in phis]
    tasks = [PointTask(ens, p, obs, recipe.rtol, recipe.atol, f"{recipe.name}@dphi={d:g}deg")
             for p, d in zip(protos, phis)]
    points = map_points(run_point, tasks, workers)
    out = RecipeResult(recipe.name)
    _absorb(out, points)
    full = [pt.series["collective_population"] for pt in points]
    times = points[0].dt * np.arange(full[0].size)
    out.time_grids["full"] = _grid(phis, full, times, "first_pulse_phase_deg")
    end2 = protos[0].last_pulse_end
    post = [slice_from(pt.ts("collective_population"), end2) for pt in points]
    pt_times = post[0].t0 + post[0].dt * np.arange(len(post[0]))
    grid = _grid(phis, [p.samples for p in post], pt_times, "first_pulse_phase_deg")
    out.time_grids["post_second_pulse"] = grid
    out.scalars["fringe_contrast"] = fringe_contrast(grid)
    out.scalars["gap_ns"] = float(recipe.pulse.gap)
    if phis.size > 1 and phis[0] == 0.0 and phis[-1] == 360.0:
        out.scalars["endpoint_row_difference"] = float(np.max(np.abs(full[0] - full[-1])))
    return out


def run_gap_sweep(recipe: SweepRecipe, workers: int = 1, grid_scale: float = 1.0) -> RecipeResult:
    ens = recipe.ensemble.build(recipe.seed)
    gaps = recipe.grid.resolve(grid_scale)
    obs = (Observable.collective_population(),)
    protos = [two_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step, gap=float(g))
              for g in gaps]
    iso = single_pulse_protocol(
        replace(recipe.pulse, amplitude=recipe.pulse.amplitude2 or recipe.pulse.amplitude,
                phase=recipe.pulse.phase2),
        recipe.t_after, recipe.sample_step,
    )
    tasks = [PointTask(ens, p, obs, recipe.rtol, recipe.atol, f"{recipe.name}@gap={g:g}")
             for p, g in zip(protos, gaps)]
    tasks.append(PointTask(ens, iso, obs, recipe.rtol, recipe.atol, f"{recipe.name}@isolated"))
    points = map_points(run_point, tasks, workers)
    out = RecipeResult(recipe.name)
    _absorb(out, points)
    rows = [slice_from(pt.ts("collective_population"), p.pulses[-1].start)
            for pt, p in zip(points[:-1], protos)]
    iso_row = points[-1].series["collective_population"]
    times = rows[0].dt * np.arange(len(rows[0]))
    grid = _grid(gaps, [r.samples for r in rows], times, "inter_pulse_gap_ns")
    out.time_grids["from_second_pulse"] = grid
    n = grid.times.size
    dev = [float(np.max(np.abs(grid.values[k] - iso_row[:n]))) for k in range(gaps.size)]
    scale = float(np.max(np.abs(iso_row))) or 1.0
    out.tables["memory_deviation"] = (("gap_ns", "max_abs_deviation", "relative_deviation"),
                                      np.column_stack([gaps, dev, np.array(dev) / scale]))
    return out


def beat_component(bins: np.ndarray, mags: np.ndarray, exclusion_mhz: float) -> tuple[float, float]:
    """Strongest spectral line (local maximum) above the DC exclusion; (nan, 0) if none.

    A monotone tail leaking out of the DC lobe is not a line and is ignored.
    """
    import scipy.signal as sps

    idx, _ = sps.find_peaks(mags)
    idx = idx[bins[idx] >= exclusion_mhz]
    if idx.size == 0:
        return math.nan, 0.0
    k = int(idx[np.argmax(mags[idx])])
    return float(bins[k]), float(mags[k])


def _beat(series: TimeSeries, ac: AnalysisConfig) -> tuple[np.ndarray, np.ndarray]:
    return magnitude_fft(series, ac.beat_window, 1)


def run_detuning_study(recipe: SweepRecipe, workers: int = 1,
                       grid_scale: float = 1.0) -> RecipeResult:
    """Grid values are the second TLS frequency; the first is ``ensemble.frequencies[0]``."""
    f1 = recipe.ensemble.frequencies[0]
    seconds = recipe.grid.resolve(1.0)
    ac = recipe.analysis
    obs = _observables(2)
    tasks, protos, enss = [], [], []
    for f2 in seconds:
        ens = EnsembleSpec.from_frequencies([f1, float(f2)], recipe.ensemble.coupling,
                                            recipe.ensemble.gamma)
        drive = 0.5 * (f1 + float(f2))
        p = single_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                                  drive_freq=drive)
        enss.append(ens)
        protos.append(p)
        tasks.append(PointTask(ens, p, obs, recipe.rtol, recipe.atol,
                               f"{recipe.name}@f2={f2:g}"))
    points = map_points(run_point, tasks, workers)
    out = RecipeResult(recipe.name)
    _absorb(out, points)
    for f2, pt, p in zip(seconds, points, protos):
        tag = f"f2_{f2:g}"
        post = slice_from(pt.ts("collective_population"), p.last_pulse_end)
        bins, mags = _beat(post, ac)
        out.tables[f"population_{tag}"] = (("t_ns", "collective_population"),
                                           np.column_stack([pt.dt * np.arange(pt.series["collective_population"].size),
                                                            pt.series["collective_population"]]))
        out.tables[f"beat_spectrum_{tag}"] = (("freq_MHz", "magnitude"), np.column_stack([bins, mags]))
        freq, mag = beat_component(bins, mags, ac.dc_exclusion_mhz)
        out.scalars[f"beat_freq_MHz_{tag}"] = freq
        out.scalars[f"beat_magnitude_{tag}"] = mag
        off = bins >= ac.dc_exclusion_mhz
        out.scalars[f"off_dc_max_{tag}"] = float(np.max(mags[off])) if off.any() else 0.0
        out.scalars[f"fft_bin_MHz_{tag}"] = float(bins[1] - bins[0])
        ph = demod_phase(pt, 2, p.pulses[0].carrier_freq, ac.lowpass_cutoff, p.last_pulse_end)
        pb, pm = phase_fft(ph, ac.window, ac.zero_pad_factor)
        out.tables[f"phase_spectrum_{tag}"] = (("freq_MHz", "magnitude"), np.column_stack([pb, pm]))
    if recipe.drive_grid is not None:
        freqs = recipe.drive_grid.resolve(grid_scale)
        for f2, ens in zip(seconds, enss):
            dm = _drive_map(recipe, ens, freqs, workers)
            _absorb(out, dm.points)
            out.maps[f"demod_phase_fft_f2_{f2:g}"] = _demod_phase_map(dm, 2, ac)
            out.time_grids[f"population_f2_{f2:g}"] = _population_grid(dm)
    return out


def run_interaction_study(recipe: SweepRecipe, workers: int = 1,
                          grid_scale: float = 1.0) -> RecipeResult:
    couplings = recipe.grid.resolve(1.0)
    freqs = _require(recipe.drive_grid, "drive_grid").resolve(grid_scale)
    ac = recipe.analysis
    out = RecipeResult(recipe.name)
    bare = None
    for j in couplings:
        ens = recipe.ensemble.build(recipe.seed, coupling=float(j))
        bare = ens.frequencies
        dm = _drive_map(recipe, ens, freqs, workers)
        _absorb(out, dm.points)
        tag = f"J{j * 1e3:g}MHz"
        pop = _population_grid(dm)
        out.time_grids[f"population_{tag}"] = pop
        rows = []
        for f, r in zip(freqs, dm.points):
            rows.append((float(f), magnitude_fft(r.ts("collective_population"), ac.window,
                                                 ac.zero_pad_factor)))
        out.maps[f"population_fft_{tag}"] = build_map(rows, PER_COLUMN_MAX)
        out.maps[f"phase_fft_{tag}"] = _demod_phase_map(dm, ens.n_sites, ac, post_pulse=False)
        out.slices[f"dc_{tag}"] = zero_frequency_slice(out.maps[f"phase_fft_{tag}"],
                                                       ac.dc_bin_tolerance)
    out.tables["bare_frequencies"] = (("site", "freq_GHz"),
                                      np.column_stack([np.arange(bare.size), bare]))
    return out


def run_amplitude_sweep(recipe: SweepRecipe, workers: int = 1,
                        grid_scale: float = 1.0) -> RecipeResult:
    """Grid values are amplitudes in a.u.; ``amplitude_scale`` converts them to GHz."""
    ens = recipe.ensemble.build(recipe.seed)
    amps_au = recipe.grid.resolve(grid_scale)
    freqs = _require(recipe.drive_grid, "drive_grid").resolve(grid_scale)
    ac = recipe.analysis
    out = RecipeResult(recipe.name)
    obs = _observables(ens.n_sites)
    tasks, protos = [], []
    for a in amps_au:
        for f in freqs:
            p = single_pulse_protocol(recipe.pulse, recipe.t_after, recipe.sample_step,
                                      drive_freq=float(f), amplitude=float(a) * recipe.amplitude_scale)
            protos.append(p)
            tasks.append(PointTask(ens, p, obs, recipe.rtol, recipe.atol,
                                   f"{recipe.name}@A={a:g}au,f={f:.6g}"))
    points = map_points(run_point, tasks, workers)
    _absorb(out, points)
    nf = freqs.size
    zt_rows, dc_rows = [], []
    for k, a in enumerate(amps_au):
        dm = DriveMap(freqs, points[k * nf:(k + 1) * nf], protos[k * nf:(k + 1) * nf])
        zt_rows.append(zero_time_slice(_population_grid(dm), recipe.pulse.duration).values)
        smap = _demod_phase_map(dm, ens.n_sites, ac)
        dc_rows.append(zero_frequency_slice(smap, ac.dc_bin_tolerance).values)
    hdr = ("amplitude_au",) + tuple(f"f={f:.6f}GHz" for f in freqs)
    zt = np.vstack(zt_rows)
    dc = np.vstack(dc_rows)
    out.tables["zero_time_stack"] = (hdr, np.column_stack([amps_au, zt]))
    out.tables["dc_slice_stack"] = (hdr, np.column_stack([amps_au, dc]))
    cut = recipe.cut_freq if recipe.cut_freq is not None else float(freqs[nf // 2])
    ci = int(np.argmin(np.abs(freqs - cut)))
    out.tables["saturation_cut"] = (
        ("amplitude_au", "amplitude_GHz", "zero_time_population", "dc_phase_fft"),
        np.column_stack([amps_au, amps_au * recipe.amplitude_scale, zt[:, ci], dc[:, ci]]),
    )
    out.scalars["cut_freq_GHz"] = float(freqs[ci])
    out.scalars["amplitude_scale_GHz_per_au"] = float(recipe.amplitude_scale)
    return out


def analytic_map(base: PerturbParams, freqs: np.ndarray, t: np.ndarray, window: str,
                 zero_pad_factor: int) -> SpectralMap:
    """Closed-form phase-FFT map; drive frequencies that land on a bare resonance (where
    the closed form is singular) are evaluated 1 kHz above it."""
    freqs = np.asarray(freqs, dtype=float)
    bare = np.array([base.omega1, base.omega2])
    near = np.min(np.abs(freqs[:, None] - bare[None]), axis=1) < 1e-6
    safe = np.where(near, freqs + 1e-6, freqs)
    smap = analytic_phase_spectrum(base, safe, t, window, zero_pad_factor)
    return SpectralMap(smap.sweep_label, freqs, smap.fft_axis, smap.magnitudes, smap.normalization)


def run_analytic_map(recipe: SweepRecipe, workers: int = 1,
                     grid_scale: float = 1.0) -> RecipeResult:
    freqs = recipe.grid.resolve(grid_scale)
    f1, f2 = recipe.ensemble.frequencies[:2]
    base = PerturbParams(f1, f2, float(freqs[0]) + 1e-3, recipe.pulse.amplitude,
                         recipe.ensemble.coupling)
    t = recipe.sample_step * np.arange(int(round(recipe.t_after / recipe.sample_step)) + 1)
    ac = recipe.analysis
    smap = analytic_map(base, freqs, t, ac.window, ac.zero_pad_factor)
    out = RecipeResult(recipe.name)
    out.maps["analytic_phase_fft"] = smap
    dc = zero_frequency_slice(smap, ac.dc_bin_tolerance)
    out.slices["dc_analytic"] = dc
    out.peaks["dc_analytic"] = detect_peaks(dc, _threshold(dc, ac), ac.min_separation)
    return out


# ---------------------------------------------------------------------------
# synthetic spectral-density pipeline


def plant_emitters(n: int, span: tuple[float, float], seed: int, jitter: float = 0.002,
                   decay: float = 0.001) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jittered regular grid of ``n`` emitter frequencies with random strengths."""
    rng = np.random.default_rng(seed)
    spacing = (span[1] - span[0]) / n
    freqs = span[0] + (np.arange(n) + 0.5) * spacing + rng.uniform(-jitter, jitter, n)
    strengths = rng.uniform(0.7, 1.3, n)
    return freqs, strengths, np.full(n, decay)


def _density_slice(args) -> np.ndarray:
    freqs, strengths, decays, drives, tau, dt, n_samples, noise, seed, ac = args
    rng = np.random.default_rng(seed)
    rows = []
    for fd in drives:
        w = pulse_response_weight(freqs, fd, tau, strengths)
        fld = synth_field(EmitterSet.from_arrays(w, freqs, decays), 0.0, dt, n_samples)
        z = np.asarray(fld.samples)
        if noise > 0:
            z = z + noise * (rng.standard_normal(z.size) + 1j * rng.standard_normal(z.size))
        tr = demodulate(fld.with_samples(z), float(fd), 0.0, ac.lowpass_cutoff)
        rows.append((float(fd), phase_fft(amp_phase(tr)[1], ac.window, ac.zero_pad_factor)))
    return zero_frequency_slice(build_map(rows, NONE), ac.dc_bin_tolerance).values


def run_density(recipe: SweepRecipe, workers: int = 1, grid_scale: float = 1.0) -> RecipeResult:
    """Grid values are drive (= LO) frequencies; ``extra`` holds the planting parameters."""
    ex = {"n_emitters": 42, "span": (4.1, 4.6), "durations": (100.0, 150.0, 200.0, 250.0, 300.0),
          "record": 400.0, "dt": 0.1, "noise": 0.0, "jitter": 0.002, "decay": 0.001}
    ex.update(recipe.extra)
    drives = recipe.grid.resolve(grid_scale)
    span = tuple(ex["span"])
    freqs, strengths, decays = plant_emitters(int(ex["n_emitters"]), span, recipe.seed,
                                              ex["jitter"], ex["decay"])
    n_samples = int(round(ex["record"] / ex["dt"]))
    ac = recipe.analysis
    ss = np.random.SeedSequence(recipe.seed).spawn(len(ex["durations"]))
    jobs = [(freqs, strengths, decays, drives, float(tau), ex["dt"], n_samples, ex["noise"],
             int(s.generate_state(1)[0]), ac) for tau, s in zip(ex["durations"], ss)]
    rows = map_points(_density_slice, jobs, workers)
    out = RecipeResult(recipe.name)
    slices = [Slice("drive_freq_GHz", drives, r) for r in rows]
    for tau, sl in zip(ex["durations"], slices):
        out.slices[f"dc_tau{tau:g}"] = sl
    avg = average_slices(slices)
    out.slices["dc_average"] = avg
    pk = detect_peaks(avg, _threshold(avg, ac), ac.min_separation, span)
    out.peaks["dc_average"] = pk
    out.tables["planted_emitters"] = (("freq_GHz", "strength", "decay_GHz"),
                                      np.column_stack([freqs, strengths, decays]))
    out.scalars["n_peaks"] = float(len(pk))
    out.scalars["spectral_density_per_GHz"] = spectral_density(pk)
    out.scalars["n_planted"] = float(freqs.size)
    return out


RUNNERS: dict[str, Callable[..., RecipeResult]] = {
    "drive_frequency_map": run_drive_frequency_map,
    "duration_sweep": run_duration_sweep,
    "two_pulse_amplitude": run_two_pulse_amplitude_control,
    "two_pulse_phase": run_two_pulse_phase_control,
    "gap_sweep": run_gap_sweep,
    "detuning_study": run_detuning_study,
    "interaction_study": run_interaction_study,
    "amplitude_sweep": run_amplitude_sweep,
    "analytic_map": run_analytic_map,
    "density": run_density,
}


def run_recipe(recipe: SweepRecipe, workers: int = 1, grid_scale: float = 1.0) -> RecipeResult:
    return RUNNERS[recipe.kind](recipe, workers=workers, grid_scale=grid_scale)


# ---------------------------------------------------------------------------
# named recipes


def pair_drive_map() -> SweepRecipe:
    return SweepRecipe(
        "pair_drive_map", "drive_frequency_map", "drive_freq", Grid.linear(3.0, 5.0),
        ensemble=EnsembleConfig((3.0, 4.0), 0.05, 0.002),
        pulse=PulseConfig(4.0, 0.1, 100.0, envelope=SQUARE_COSINE_RAMP),
        t_after=300.0, floquet_table=True,
    )


def analytic_pair_map() -> SweepRecipe:
    return SweepRecipe(
        "analytic_pair_map", "analytic_map", "drive_freq", Grid.linear(2.5, 4.5),
        ensemble=EnsembleConfig((3.0, 4.0), 0.005, 0.0),
        pulse=PulseConfig(3.5, 0.001, 200.0),
        t_after=200.0,
        analysis=AnalysisConfig(min_separation=0.02),
    )


def quad_drive_map() -> SweepRecipe:
    return SweepRecipe(
        "quad_drive_map", "drive_frequency_map", "drive_freq", Grid.linear(3.0, 5.0),
        ensemble=EnsembleConfig((3.49, 3.17, 4.09, 4.19), 0.0, 0.002, coupling_range=(-0.05, 0.05)),
        pulse=PulseConfig(4.15, 0.1, 200.0),
        t_after=300.0, seed=6,
    )


def quad_two_pulse_amplitude() -> SweepRecipe:
    return SweepRecipe(
        "quad_two_pulse_amplitude", "two_pulse_amplitude", "first_pulse_amplitude", Grid.linear(0.0, 0.2),
        ensemble=EnsembleConfig((3.49, 3.17, 4.09, 4.19), 0.0, 0.002, coupling_range=(-0.05, 0.05)),
        pulse=PulseConfig(4.15, 0.1, 200.0, amplitude2=0.1, gap=100.0),
        t_after=300.0, seed=6,
    )


def _phase_pair_ensemble() -> EnsembleConfig:
    return EnsembleConfig((3.93, 4.10), 0.05, 0.002)


def pair_gap_sweep() -> SweepRecipe:
    return SweepRecipe(
        "pair_gap_sweep", "gap_sweep", "inter_pulse_gap", Grid.linear(10.0, 600.0, 60),
        ensemble=_phase_pair_ensemble(),
        pulse=PulseConfig(3.93, 0.12, 200.0, gap=150.0),
        t_after=300.0,
    )


def pair_phase_sweep() -> SweepRecipe:
    return SweepRecipe(
        "pair_phase_sweep", "two_pulse_phase", "first_pulse_phase", Grid.linear(0.0, 360.0, 37),
        ensemble=_phase_pair_ensemble(),
        pulse=PulseConfig(3.93, 0.12, 200.0, gap=150.0),
        t_after=300.0,
    )


def pair_duration_sweep() -> SweepRecipe:
    return SweepRecipe(
        "pair_duration_sweep", "duration_sweep", "pulse_duration", Grid.explicit((20.0, 112.0, 300.0)),
        ensemble=EnsembleConfig((4.0, 4.1), 0.05, 0.002),
        pulse=PulseConfig(4.05, 0.1, 100.0),
        drive_grid=Grid.linear(3.8, 4.3),
        t_after=300.0,
        analysis=AnalysisConfig(min_separation=0.05),
    )


def coupling_strength_study() -> SweepRecipe:
    return SweepRecipe(
        "coupling_strength_study", "interaction_study", "coupling", Grid.explicit((0.005, 0.05, 0.5)),
        ensemble=EnsembleConfig((3.0, 3.5, 4.0, 4.5), 0.0, 0.001, freq_range=(3.0, 5.0)),
        pulse=PulseConfig(4.0, 0.1, 400.0),
        drive_grid=Grid.linear(3.0, 5.0),
        t_after=300.0, seed=9,
    )


def detuning_beat() -> SweepRecipe:
    return SweepRecipe(
        "detuning_beat", "detuning_study", "detuning", Grid.explicit((4.0, 4.12)),
        ensemble=EnsembleConfig((4.0, 4.12), 0.01, 0.002),
        pulse=PulseConfig(4.06, 0.1, 100.0),
        t_after=400.0,
    )


def amp_sweep() -> SweepRecipe:
    return SweepRecipe(
        "amp_sweep", "amplitude_sweep", "pulse_amplitude", Grid.linear(0.0, 30000.0, 31),
        ensemble=EnsembleConfig((4.0, 4.1), 0.05, 0.002),
        pulse=PulseConfig(4.0, 0.0, 20.0),
        drive_grid=Grid.linear(3.9, 4.2, 31),
        t_after=200.0,
        amplitude_scale=2e-3 / 3000.0,
        cut_freq=4.12,
    )


def density() -> SweepRecipe:
    return SweepRecipe(
        "density", "density", "drive_freq", Grid.linear(4.1, 4.6, 501, fixed=True),
        analysis=AnalysisConfig(min_separation=0.007, threshold=2.0),
        seed=42,
    )


RECIPES: dict[str, Callable[[], SweepRecipe]] = {
    "pair_drive_map": pair_drive_map,
    "analytic_pair_map": analytic_pair_map,
    "quad_drive_map": quad_drive_map,
    "quad_two_pulse_amplitude": quad_two_pulse_amplitude,
    "pair_gap_sweep": pair_gap_sweep,
    "pair_phase_sweep": pair_phase_sweep,
    "pair_duration_sweep": pair_duration_sweep,
    "coupling_strength_study": coupling_strength_study,
    "detuning_beat": detuning_beat,
    "amp_sweep": amp_sweep,
    "density": density,
}


def get_recipe(name: str) -> SweepRecipe:
    try:
        return RECIPES[name]()
    except KeyError:
        raise KeyError(f"unknown recipe {name!r}; known: {', '.join(sorted(RECIPES))}") from None
