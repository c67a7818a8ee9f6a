from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from tlsbath import cli
from tlsbath import experiments as ex
from tlsbath.artifacts import read_grid, read_table, sha256_file
from tlsbath.evolve import IntegrationError

GOLDEN = Path(__file__).parent / "golden" / "pair_drive_map_coarse.json"


def _write(tmp_path: Path, name: str, data: dict) -> str:
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def _manifest(out: Path) -> dict:
    return json.loads((out / cli.MANIFEST_NAME).read_text())


def _checksums(out: Path) -> dict[str, str]:
    return {a["path"]: a["sha256"] for a in _manifest(out)["artifacts"]}


def _assert_manifest_complete(out: Path) -> None:
    listed = _checksums(out)
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()}
    assert on_disk - {cli.MANIFEST_NAME} == set(listed)
    for path, digest in listed.items():
        assert sha256_file(out / path) == digest


SIMULATE = {
    "command": "simulate",
    "ensemble": {"frequencies": [3.95, 4.05], "coupling": 0.02, "gamma": 0.002},
    "protocol": {"pulses": [{"amplitude": 0.05, "carrier_freq": 4.0, "duration": 20.0}],
                 "t_end": 60.0},
}


def test_coarse_drive_map_run_matches_golden_checksums(tmp_path: Path):
    golden = json.loads(GOLDEN.read_text())
    out = tmp_path / "coarse"
    assert cli.main(golden["command"] + ["--out", str(out)]) == cli.EXIT_OK
    _assert_manifest_complete(out)
    sums = _checksums(out)
    assert "grids/time_population.tlsg" in sums
    assert "grids/map_relative_phase_fft.tlsg" in sums
    assert "tables/quasi_energies.csv" in sums
    assert read_grid(out / "grids/time_population.tlsg").col_label == "t_ns"
    assert sums == golden["artifacts"]


def test_same_config_twice_is_identical_and_reuses_directory(tmp_path: Path):
    args = ["sweep", "pair_phase_sweep", "--grid-scale", "0.1", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert _checksums(a) == _checksums(b)
    # rerunning into a directory the tool already owns replaces its files
    assert cli.main(args + ["--out", str(a)]) == 0
    assert _checksums(a) == _checksums(b)
    _assert_manifest_complete(a)


def test_manifest_records_run_metadata(tmp_path: Path):
    out = tmp_path / "o"
    assert cli.main(["sweep", "pair_phase_sweep", "--grid-scale", "0.1", "--seed", "5", "--out", str(out)]) == 0
    m = _manifest(out)
    assert m["seed"] == 5 and m["recipe"] == "pair_phase_sweep" and m["command"] == "sweep"
    assert len(m["config_hash"]) == 64 and m["started"] and m["finished"]
    assert m["physicality"]["ok"] is True
    man = cli.RunManifest(**{**m, "artifacts": [cli.ArtifactRecord(**a) for a in m["artifacts"]]})
    assert man.verify(out) == []
    target = out / m["artifacts"][0]["path"]
    target.write_bytes(target.read_bytes() + b"\n")
    assert man.verify(out) == [m["artifacts"][0]["path"]]


def test_config_errors_exit_2(tmp_path: Path, capsys):
    bad_key = _write(tmp_path, "a.yaml", {"recipe": "pair_drive_map", "bogus": 1})
    assert cli.main(["sweep", "pair_drive_map", "--config", bad_key, "--out", str(tmp_path / "x")]) == 2
    bad_num = _write(tmp_path, "b.yaml", {"recipe": "pair_drive_map", "solver": {"rtol": "tight"}})
    assert cli.main(["sweep", "pair_drive_map", "--config", bad_num, "--out", str(tmp_path / "y")]) == 2
    assert cli.main(["sweep", "no_such_recipe", "--out", str(tmp_path / "z")]) == 2
    assert cli.main(["simulate", "--out", str(tmp_path / "w")]) == 2
    assert "config error" in capsys.readouterr().err


def test_numerical_failure_exits_3_and_leaves_no_artifacts(tmp_path: Path, monkeypatch):
    def boom(*_a, **_k):
        raise IntegrationError("step size underflow", 1.0)

    monkeypatch.setattr(cli, "evolve_detailed", boom)
    cfg = _write(tmp_path, "s.yaml", SIMULATE)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 3
    assert not [p for p in out.rglob("*") if p.is_file()]


def test_io_failures_exit_4(tmp_path: Path):
    occupied = tmp_path / "occupied"
    occupied.mkdir()
    (occupied / "notes.txt").write_text("keep me")
    assert cli.main(["sweep", "pair_phase_sweep", "--grid-scale", "0.1", "--out", str(occupied)]) == 4
    assert (occupied / "notes.txt").read_text() == "keep me"
    a_file = tmp_path / "file"
    a_file.write_text("")
    assert cli.main(["sweep", "pair_phase_sweep", "--grid-scale", "0.1", "--out", str(a_file)]) == 4


def test_simulate_emits_series_and_spectra(tmp_path: Path):
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", _write(tmp_path, "s.yaml", SIMULATE), "--out", str(out)]) == 0
    _assert_manifest_complete(out)
    sums = _checksums(out)
    for name in ("collective_population", "site_coherences", "post_pulse_quadratures",
                 "post_pulse_phase_fft", "relative_phase", "relative_phase_fft"):
        assert any(name in p for p in sums), name
    m = _manifest(out)
    assert m["physicality"]["ok"] is True


def test_floquet_tables_agree_between_methods(tmp_path: Path):
    cfg = _write(tmp_path, "f.yaml", {
        "command": "floquet",
        "ensemble": {"frequencies": [3.0, 4.0], "coupling": 0.05, "gamma": 0.0},
        "floquet": {"drive_freqs": {"start": 3.2, "stop": 4.8, "n": 5}, "amplitude": 0.05},
    })
    out = tmp_path / "o"
    assert cli.main(["floquet", "--config", cfg, "--out", str(out)]) == 0
    _assert_manifest_complete(out)
    gap = [p for p in _checksums(out) if "method_disagreement" in p][0]
    tab = read_table(out / gap)
    assert np.all(tab.data[:, 1] <= 1e-6 * tab.data[:, 0])


def test_perturb_synth_and_analyze_round_trip(tmp_path: Path):
    cfg = _write(tmp_path, "p.yaml", {
        "command": "perturb",
        "perturb": {"drive_freqs": {"start": 2.8, "stop": 4.2, "n": 15}, "t_max": 100.0},
    })
    assert cli.main(["perturb", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    _assert_manifest_complete(tmp_path / "p")

    syn = _write(tmp_path, "s.yaml", {
        "command": "synth",
        "synth": {"emitters": [{"freq": 4.02}], "lo_freq": 4.0, "n_samples": 800},
    })
    assert cli.main(["synth", "--config", syn, "--out", str(tmp_path / "s")]) == 0
    fft = [p for p in _checksums(tmp_path / "s") if "phase_fft" in p][0]
    tab = read_table(tmp_path / "s" / fft)
    k = int(np.argmax(tab.data[1:, 1])) + 1
    assert abs(tab.data[k, 0] - 20.0) <= tab.data[1, 0] - tab.data[0, 0]

    sim_out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", _write(tmp_path, "sim.yaml", SIMULATE),
                     "--out", str(sim_out)]) == 0
    series = [p for p in _checksums(sim_out) if "site_coherences" in p][0]
    ana = _write(tmp_path, "a.yaml", {
        "command": "analyze",
        "analyze": {"input": str(sim_out / series), "lo_freq": 4.0, "column": "coherence_0"},
    })
    assert cli.main(["analyze", "--config", ana, "--out", str(tmp_path / "a")]) == 0
    _assert_manifest_complete(tmp_path / "a")
    missing = _write(tmp_path, "m.yaml", {
        "command": "analyze",
        "analyze": {"input": str(sim_out / series), "lo_freq": 4.0, "column": "nope"},
    })
    assert cli.main(["analyze", "--config", missing, "--out", str(tmp_path / "m")]) == 2


def test_density_command_reports_count(tmp_path: Path):
    out = tmp_path / "d"
    assert cli.main(["density", "--out", str(out)]) == 0
    _assert_manifest_complete(out)
    scalars = [p for p in _checksums(out) if p.endswith("scalars.csv")][0]
    tab = read_table(out / scalars)
    row = dict(zip(tab.columns, tab.data[0]))
    assert row["n_peaks"] == 42 and row["spectral_density_per_GHz"] == 84.0


def test_recipes_listing(capsys):
    assert cli.main(["recipes"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == sorted(ex.RECIPES)


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["transmogrify"])
    assert exc.value.code == 2
