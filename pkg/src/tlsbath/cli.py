"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .artifacts import (
    ArtifactError,
    emit_grid,
    emit_peaks,
    emit_series,
    emit_slice,
    emit_table,
    read_series,
    sha256_file,
)
from .config import (
    COMMANDS,
    ConfigError,
    RunConfig,
    apply_to_recipe,
    density_recipe,
    dump_config,
    grid_values,
    parse_config,
)
from .evolve import (
    Diagnostics,
    EvolveRequest,
    IntegrationError,
    Observable,
    evolve_detailed,
    post_pulse_slice,
)
from .floquet import FloquetError, match_branches, quasi_energy_sweep
from .model import DriveProtocol, EnsembleSpec, PulseSpec
from .perturb import DegenerateDetuningError, PerturbParams, QuadratureError
from .signal import (
    AliasingError,
    Emitter,
    EmitterSet,
    amp_phase,
    demodulate,
    detect_peaks,
    phase_fft,
    relative_phase,
    synth_emitters,
    zero_frequency_slice,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
MANIFEST_NAME = "manifest.json"
RESOLVED_CONFIG_NAME = "config.resolved.yaml"

NUMERICAL_ERRORS = (IntegrationError, ex.RecipeError, FloquetError, QuadratureError,
                    DegenerateDetuningError, AliasingError, ArtifactError, FloatingPointError,
                    np.linalg.LinAlgError)


@dataclass
class ArtifactRecord:
    path: str
    sha256: str
    n_bytes: int


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    seed: int
    command: str
    recipe: str | None
    started: str
    finished: str
    artifacts: list[ArtifactRecord] = field(default_factory=list)
    physicality: dict | None = None
    config: dict | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["artifacts"] = [a.__dict__ for a in self.artifacts]
        return d

    def verify(self, out_dir) -> list[str]:
        """Paths whose current checksum differs from the recorded one."""
        bad = []
        for a in self.artifacts:
            p = Path(out_dir) / a.path
            if not p.is_file() or sha256_file(p) != a.sha256:
                bad.append(a.path)
        return bad


class _Writer:
    """Single writer for one run; remembers every file it creates."""

    def __init__(self, out: Path, header: dict[str, str]):
        self.out = out
        self.header = header
        self.paths: list[Path] = []

    def _path(self, sub: str, name: str) -> Path:
        d = self.out / sub if sub else self.out
        d.mkdir(parents=True, exist_ok=True)
        p = d / name
        self.paths.append(p)
        return p

    def hdr(self, **extra) -> dict[str, str]:
        h = dict(self.header)
        h.update({k: str(v) for k, v in extra.items()})
        return h

    def grid(self, name, obj, value_label="value"):
        emit_grid(obj, self._path("grids", f"{name}.tlsg"), value_label)

    def table(self, name, columns, data, **extra):
        emit_table(columns, data, self._path("tables", f"{name}.csv"), self.hdr(kind="table", **extra))

    def series(self, name, series, unit=""):
        emit_series(series, self._path("series", f"{name}.csv"), self.hdr(), unit)

    def slice(self, name, sl):
        emit_slice(sl, self._path("slices", f"{name}.csv"), self.hdr())

    def peaks(self, name, pk):
        emit_peaks(pk, self._path("peaks", f"{name}.csv"), self.hdr())

    def text(self, name, text):
        p = self._path("", name)
        p.write_text(text, encoding="utf-8")


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _prepare_out(out: Path) -> None:
    """Create ``out``; files recorded by an earlier manifest are replaced, anything else
    left in the directory is an error (the manifest must list every file)."""
    out.mkdir(parents=True, exist_ok=True)
    old = out / MANIFEST_NAME
    if old.is_file():
        try:
            listed = json.loads(old.read_text(encoding="utf-8")).get("artifacts", [])
        except ValueError:
            listed = []
        for a in listed:
            p = out / a.get("path", "")
            if p.is_file():
                p.unlink()
        old.unlink()
    leftovers = [p for p in out.rglob("*") if p.is_file()]
    if leftovers:
        raise OSError(f"output directory {out} contains files not produced by this tool "
                      f"(e.g. {leftovers[0]}); choose an empty directory")


def _emit_result(w: _Writer, res: ex.RecipeResult) -> None:
    for name, g in res.time_grids.items():
        w.grid(f"time_{name}", g, "collective_population")
    for name, m in res.maps.items():
        w.grid(f"map_{name}", m)
    for name, s in res.slices.items():
        w.slice(name, s)
    for name, p in res.peaks.items():
        w.peaks(name, p)
    for name, (cols, data) in res.tables.items():
        w.table(name, cols, data)
    if res.scalars:
        names = tuple(res.scalars)
        w.table("scalars", names, np.array([[res.scalars[k] for k in names]]))


def _diag_dict(d: Diagnostics | None) -> dict | None:
    if d is None:
        return None
    return {"max_trace_error": d.max_trace_error, "max_hermiticity_error": d.max_hermiticity_error,
            "min_eigenvalue": d.min_eigenvalue, "refinements": d.refinements, "ok": d.ok()}


# ---------------------------------------------------------------------------
# commands


def _ensemble(cfg: RunConfig, default: EnsembleSpec | None = None) -> EnsembleSpec:
    if cfg.ensemble is None:
        if default is None:
            raise ConfigError("this command needs an 'ensemble' section")
        return default
    e = cfg.ensemble
    coupling = np.array(e.coupling) if isinstance(e.coupling, list) else e.coupling
    try:
        return EnsembleSpec.from_frequencies(e.frequencies, coupling, e.gamma, e.dipole_scales)
    except ValueError as exc:
        raise ConfigError(f"ensemble: {exc}") from exc


def _protocol(cfg: RunConfig) -> DriveProtocol:
    p = cfg.protocol
    try:
        pulses = tuple(PulseSpec(q.amplitude, q.carrier_freq, q.duration, q.start, q.phase,
                                 q.envelope, q.ramp_fraction) for q in p.pulses)
        return DriveProtocol(pulses, p.t_end, p.sample_step)
    except ValueError as exc:
        raise ConfigError(f"protocol: {exc}") from exc


def _cmd_simulate(cfg: RunConfig, w: _Writer) -> Diagnostics:
    ens = _ensemble(cfg)
    proto = _protocol(cfg)
    obs = (Observable.collective_population(),) + tuple(
        Observable.site_coherence(j) for j in range(ens.n_sites))
    req = EvolveRequest(ens, proto, obs, cfg.solver.rtol, cfg.solver.atol,
                        free_evolution=cfg.solver.free_evolution)
    res = evolve_detailed(req)
    pop = res.series["collective_population"]
    w.series("collective_population", pop)
    w.series("site_coherences", [res.series[f"coherence_{j}"] for j in range(ens.n_sites)])
    lowering = pop.with_samples(
        sum(np.conj(res.series[f"coherence_{j}"].samples) for j in range(ens.n_sites)), "lowering")
    post = post_pulse_slice(lowering, proto)
    cutoff = cfg.signal.lowpass_cutoff
    trace = demodulate(post, proto.lo_freq, proto.lo_phase, cutoff)
    amp, ph = amp_phase(trace)
    w.series("post_pulse_quadratures",
             [post.with_samples(trace.i_samples, "I"), post.with_samples(trace.q_samples, "Q"),
              amp, ph])
    window = cfg.signal.window or "rect"
    pad = cfg.signal.zero_pad_factor or 4
    bins, mags = phase_fft(ph, window, pad)
    w.table("post_pulse_phase_fft", ("freq_MHz", "magnitude_au"), np.column_stack([bins, mags]))
    if ens.n_sites >= 2:
        rel = relative_phase(res.series["coherence_0"], res.series["coherence_1"])
        w.series("relative_phase", rel, "rad")
        bins, mags = phase_fft(rel, window, pad)
        w.table("relative_phase_fft", ("freq_MHz", "magnitude_au"), np.column_stack([bins, mags]))
    return res.diagnostics


def _cmd_floquet(cfg: RunConfig, w: _Writer) -> None:
    pair_drive_map = ex.pair_drive_map()
    default = pair_drive_map.ensemble.build(cfg.seed)
    ens = _ensemble(cfg, default)
    freqs = grid_values(cfg.floquet.drive_freqs)
    amp = cfg.floquet.amplitude
    mono = quasi_energy_sweep(ens, freqs, amp, "monodromy")
    ext = quasi_energy_sweep(ens, freqs, amp, "extended", cfg.floquet.harmonic_cutoff)
    worst = np.array([float(np.max(match_branches(a, b, f))) for a, b, f in zip(mono, ext, freqs)])
    cols = ("drive_freq_GHz",) + tuple(f"branch_{k}_GHz" for k in range(mono.shape[1]))
    w.table("quasi_energies_monodromy", cols, np.column_stack([freqs, mono]))
    w.table("quasi_energies_extended", cols, np.column_stack([freqs, ext]),
            harmonic_cutoff=cfg.floquet.harmonic_cutoff)
    w.table("method_disagreement", ("drive_freq_GHz", "max_branch_gap_GHz"),
            np.column_stack([freqs, worst]))


def _cmd_perturb(cfg: RunConfig, w: _Writer) -> None:
    p = cfg.perturb
    freqs = grid_values(p.drive_freqs)
    base = PerturbParams(p.omega1, p.omega2, float(freqs[0]) + 1e-3, p.drive_amp, p.coupling)
    n = int(round(p.t_max / p.dt))
    t = p.dt * np.arange(n + 1)
    window = cfg.signal.window or "rect"
    pad = cfg.signal.zero_pad_factor or 4
    smap = ex.analytic_map(base, freqs, t, window, pad)
    w.grid("map_analytic_phase_fft", smap)
    sl = zero_frequency_slice(smap, cfg.signal.dc_bin_tolerance or 1.0)
    w.slice("dc_analytic", sl)
    thr = cfg.signal.threshold or 2.0
    if (cfg.signal.threshold_mode or "median") == "median":
        thr = thr * float(np.median(sl.values)) or thr
    w.peaks("dc_analytic", detect_peaks(sl, thr, cfg.signal.min_separation or 0.02))


def _cmd_synth(cfg: RunConfig, w: _Writer) -> None:
    s = cfg.synth
    em = EmitterSet(tuple(Emitter(complex(e.weight_re, e.weight_im), e.freq, e.decay, e.onset)
                          for e in s.emitters))
    tr = synth_emitters(em, s.lo_freq, s.lo_phase, 0.0, s.dt, s.n_samples)
    amp, ph = amp_phase(tr)
    w.series("quadratures", [amp.with_samples(tr.i_samples, "I"), amp.with_samples(tr.q_samples, "Q"),
                             amp, ph])
    bins, mags = phase_fft(ph, cfg.signal.window or "rect", cfg.signal.zero_pad_factor or 4)
    w.table("phase_fft", ("freq_MHz", "magnitude_au"), np.column_stack([bins, mags]))


def _cmd_analyze(cfg: RunConfig, w: _Writer) -> None:
    a = cfg.analyze
    series = read_series(a.input)
    if a.column is not None:
        match = [s for s in series if s.label == a.column]
        if not match:
            raise ConfigError(f"analyze.column: no column {a.column!r} in {a.input}")
        sig = match[0]
    else:
        sig = series[0]
    tr = demodulate(sig, a.lo_freq, a.lo_phase, cfg.signal.lowpass_cutoff)
    amp, ph = amp_phase(tr)
    w.series("quadratures", [amp.with_samples(tr.i_samples, "I"), amp.with_samples(tr.q_samples, "Q"),
                             amp, ph])
    bins, mags = phase_fft(ph, cfg.signal.window or "rect", cfg.signal.zero_pad_factor or 4)
    w.table("phase_fft", ("freq_MHz", "magnitude_au"), np.column_stack([bins, mags]))


def run(cfg: RunConfig) -> RunManifest:
    started = _timestamp()
    out = Path(cfg.out)
    _prepare_out(out)
    chash = cfg.config_hash()
    header = {"tool": f"tlsbath {__version__}", "config_sha256": chash, "command": cfg.command,
              "recipe": cfg.recipe or "-", "seed": str(cfg.seed),
              "frequency_unit": "GHz (ordinary, not angular) unless a column says MHz"}
    w = _Writer(out, header)
    try:
        diag = _execute(cfg, w)
    except BaseException:
        # leave no partial, unlisted output behind
        for p in w.paths:
            if p.is_file():
                p.unlink()
        raise
    records = []
    for p in sorted(w.paths, key=lambda q: q.relative_to(out).as_posix()):
        records.append(ArtifactRecord(p.relative_to(out).as_posix(), sha256_file(p), p.stat().st_size))
    man = RunManifest(chash, __version__, cfg.seed, cfg.command, cfg.recipe, started, _timestamp(),
                      records, _diag_dict(diag), cfg.resolved())
    (out / MANIFEST_NAME).write_text(json.dumps(man.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    bad = man.verify(out)
    if bad:
        raise OSError(f"checksum mismatch after writing: {', '.join(bad)}")
    return man


def _execute(cfg: RunConfig, w: _Writer) -> Diagnostics | None:
    # execution-only settings are left out so artifacts do not depend on them
    w.text(RESOLVED_CONFIG_NAME, dump_config(cfg, include_execution=False))
    diag = None
    if cfg.command == "sweep":
        recipe = apply_to_recipe(cfg, ex.get_recipe(cfg.recipe))
        res = ex.run_recipe(recipe, cfg.workers, cfg.grid_scale)
        _emit_result(w, res)
        diag = res.physicality
    elif cfg.command == "density":
        res = ex.run_recipe(density_recipe(cfg), cfg.workers, 1.0)
        _emit_result(w, res)
    elif cfg.command == "simulate":
        diag = _cmd_simulate(cfg, w)
    elif cfg.command == "floquet":
        _cmd_floquet(cfg, w)
    elif cfg.command == "perturb":
        _cmd_perturb(cfg, w)
    elif cfg.command == "synth":
        _cmd_synth(cfg, w)
    elif cfg.command == "analyze":
        _cmd_analyze(cfg, w)
    return diag


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker processes for sweep points")
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid-scale", type=float, dest="grid_scale",
                        help="multiply sweep grid densities (e.g. 0.1 for quick runs)")
    p = argparse.ArgumentParser(prog="tlsbath", description="Driven TLS ensemble simulator")
    p.add_argument("--version", action="version", version=f"tlsbath {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="evolve one protocol from a config")
    sw = sub.add_parser("sweep", parents=[common], help="run a named recipe")
    sw.add_argument("recipe", help=f"one of: {', '.join(sorted(ex.RECIPES))}")
    sub.add_parser("floquet", parents=[common], help="quasi-energy tables over drive frequency")
    sub.add_parser("perturb", parents=[common], help="analytic weak-drive phase spectrum")
    sub.add_parser("synth", parents=[common], help="synthesize an emitter-set baseband trace")
    sub.add_parser("analyze", parents=[common], help="run the signal chain on a trace file")
    sub.add_parser("density", parents=[common], help="synthetic spectral-density estimate")
    sub.add_parser("recipes", help="list recipe names")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "recipes":
        for name in sorted(ex.RECIPES):
            r = ex.get_recipe(name)
            print(f"{name}\t{r.kind}\tsweeps {r.swept}")
        return EXIT_OK
    assert args.command in COMMANDS
    try:
        cfg = parse_config(args.config, command=args.command,
                           recipe=getattr(args, "recipe", None), seed=args.seed,
                           workers=args.workers, out=args.out, grid_scale=args.grid_scale)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        man = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(man.artifacts)} artifacts to {cfg.out} (config {man.config_hash[:12]})")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
