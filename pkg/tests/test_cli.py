import hashlib
import json
import textwrap

import numpy as np
import pytest
from click.testing import CliRunner

from twinpix.cli import main
from twinpix.correlator import CorrMap
from twinpix.source import Plane
from twinpix.stackio import (HEADER_SIZE, read_corrmap_bin, read_corrmap_csv,
                             read_mask_csv, read_stack, write_corrmap_bin,
                             write_corrmap_csv)

from oracles import gaussian_map

MINI = textwrap.dedent("""\
    [geometry]
    pixel_pitch_m = 16e-6
    focal_length_m = 37e-3
    wavelength_m = 710e-9
    sensor_width = 64
    sensor_height = 64

    [source]
    nf_pair_sigma = 1.2, 1.5
    ff_sum_sigma = 1.1, 0.9
    ff_marginal_sigma = 7, 7
    pump_sigma = 7, 7
    mean_pairs_per_frame = 260
    unpaired_fraction = 0.2

    [near]
    beam_center_1 = 15.5, 31.5
    beam_center_2 = 47.5, 31.5
    roi1 = 0, 16, 32, 32
    roi2 = 32, 16, 32, 32

    [far]
    beam_center_1 = 15.5, 31.5
    beam_center_2 = 47.5, 31.5
    roi1 = 0, 16, 32, 32
    roi2 = 32, 16, 32, 32

    [detector]
    quantum_efficiency = 0.8
    false_count_prob = 0.03
    smear_prob = 0.01

    [run]
    n_frames = {n_frames}
    seed = 99

    [analysis]
    fit_window = 15
    bin_size = 8
    n_resamples = 50
""")


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def mini_config(tmp_path):
    path = tmp_path / "mini.ini"
    path.write_text(MINI.format(n_frames=200))
    return path


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_simulate_empty_container(runner, tmp_path):
    config = tmp_path / "empty.ini"
    config.write_text(MINI.format(n_frames=0))
    out = tmp_path / "empty.bpi1"
    result = runner.invoke(main, ["simulate", "--config", str(config),
                                  "--plane", "near", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.stat().st_size == HEADER_SIZE
    assert read_stack(out).n_frames == 0


def test_simulate_deterministic_and_sized(runner, tmp_path):
    config = tmp_path / "c.ini"
    config.write_text(MINI.format(n_frames=40))
    out1, out2 = tmp_path / "a.bpi1", tmp_path / "b.bpi1"
    for out in (out1, out2):
        result = runner.invoke(main, ["simulate", "--config", str(config),
                                      "--plane", "far", "--out", str(out)])
        assert result.exit_code == 0, result.output
    assert _sha(out1) == _sha(out2)
    assert out1.stat().st_size == HEADER_SIZE + 40 * 64 * 8
    stack = read_stack(out1)
    assert stack.plane == Plane.FAR and stack.seed == 99


def test_simulate_seed_override_changes_bytes(runner, tmp_path):
    config = tmp_path / "c.ini"
    config.write_text(MINI.format(n_frames=10))
    base, other = tmp_path / "s0.bpi1", tmp_path / "s1.bpi1"
    runner.invoke(main, ["simulate", "--config", str(config), "--plane", "near",
                         "--out", str(base)])
    runner.invoke(main, ["simulate", "--config", str(config), "--plane", "near",
                         "--out", str(other), "--seed", "7"])
    assert _sha(base) != _sha(other)
    assert read_stack(other).seed == 7


def test_correlate_writes_all_artifacts(runner, tmp_path, mini_config):
    stack_path = tmp_path / "near.bpi1"
    result = runner.invoke(main, ["simulate", "--config", str(mini_config),
                                  "--plane", "near", "--out", str(stack_path)])
    assert result.exit_code == 0, result.output
    prefix = tmp_path / "out" / "near_corr"
    result = runner.invoke(main, ["correlate", "--config", str(mini_config),
                                  "--stack", str(stack_path),
                                  "--out-prefix", str(prefix)])
    assert result.exit_code == 0, result.output
    csv_map = read_corrmap_csv(prefix.with_suffix(".csv"))
    bin_map = read_corrmap_bin(prefix.with_suffix(".f64"))
    assert np.array_equal(csv_map.values, bin_map.values)
    mask = read_mask_csv(tmp_path / "out" / "near_corr_mask.csv")
    assert mask.shape == csv_map.values.shape
    assert (tmp_path / "out" / "near_corr_witness.csv").exists()
    assert (tmp_path / "out" / "near_corr_witness.f64").exists()
    assert (tmp_path / "out" / "near_corr.png").exists()
    assert "witness" in result.output


def _write_synthetic_maps(tmp_path, nf_sigma, ff_sigma, amplitude=0.01):
    nf = CorrMap(values=gaussian_map((41, 41), amplitude, (0, 0), nf_sigma),
                 mask=np.zeros((41, 41), bool), n_frames=5000,
                 mean_counts=(0.15, 0.15), plane=Plane.NEAR)
    ff = CorrMap(values=gaussian_map((41, 41), amplitude, (0, 0), ff_sigma),
                 mask=np.zeros((41, 41), bool), n_frames=5000,
                 mean_counts=(0.15, 0.15), plane=Plane.FAR)
    write_corrmap_bin(nf, tmp_path / "nf.f64")
    write_corrmap_bin(ff, tmp_path / "ff.f64")
    return tmp_path / "nf.f64", tmp_path / "ff.f64"


def test_report_exit_zero_on_published_widths(runner, tmp_path, mini_config):
    nf_path, ff_path = _write_synthetic_maps(tmp_path, (1.53, 2.2), (2.35, 1.85))
    out = tmp_path / "report.json"
    result = runner.invoke(main, ["report", "--config", str(mini_config),
                                  "--nf", str(nf_path), "--ff", str(ff_path),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["factors"]["x"] == pytest.approx(5.16, abs=0.01)
    assert doc["factors"]["y"] == pytest.approx(4.03, abs=0.01)
    assert doc["factors"]["iso"] == pytest.approx(4.15, abs=0.01)
    assert doc["verdict"] is True
    assert out.with_suffix(".txt").exists()
    assert (tmp_path / "report_products.png").exists()


def test_report_exit_one_without_violation(runner, tmp_path, mini_config):
    # wide widths: products far above the bound
    nf_path, ff_path = _write_synthetic_maps(tmp_path, (4.0, 5.5), (3.0, 2.2))
    out = tmp_path / "report.json"
    result = runner.invoke(main, ["report", "--config", str(mini_config),
                                  "--nf", str(nf_path), "--ff", str(ff_path),
                                  "--out", str(out), "--no-figures"])
    assert result.exit_code == 1, result.output
    assert json.loads(out.read_text())["verdict"] is False


def test_report_exit_two_on_flat_maps(runner, tmp_path, mini_config):
    flat = CorrMap(values=np.zeros((41, 41)), mask=np.zeros((41, 41), bool),
                   n_frames=100, mean_counts=(0.1, 0.1), plane=Plane.NEAR)
    write_corrmap_bin(flat, tmp_path / "nf.f64")
    write_corrmap_bin(flat, tmp_path / "ff.f64")
    out = tmp_path / "report.json"
    result = runner.invoke(main, ["report", "--config", str(mini_config),
                                  "--nf", str(tmp_path / "nf.f64"),
                                  "--ff", str(tmp_path / "ff.f64"),
                                  "--out", str(out)])
    assert result.exit_code == 2
    assert "error" in json.loads(out.read_text())  # partial output on failure


def test_report_respects_mask_sidecar(runner, tmp_path, mini_config):
    nf_path, ff_path = _write_synthetic_maps(tmp_path, (1.53, 2.2), (2.35, 1.85))
    # spoil one displacement and mask it out via the sidecar
    cmap = read_corrmap_bin(nf_path)
    cmap.values[30, 30] = 1e6
    write_corrmap_bin(cmap, nf_path)
    mask = np.zeros((41, 41), np.uint8)
    mask[30, 30] = 1
    np.savetxt(tmp_path / "nf_mask.csv", mask, fmt="%d", delimiter=",")
    out = tmp_path / "report.json"
    result = runner.invoke(main, ["report", "--config", str(mini_config),
                                  "--nf", str(nf_path), "--ff", str(ff_path),
                                  "--out", str(out), "--no-figures"])
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["factors"]["x"] == pytest.approx(5.16, abs=0.01)


def test_pipeline_end_to_end_mini(runner, tmp_path, mini_config):
    out_dir = tmp_path / "run"
    result = runner.invoke(main, ["pipeline", "--config", str(mini_config),
                                  "--out", str(out_dir), "--workers", "2"])
    assert result.exit_code in (0, 1), result.output
    manifest = json.loads((out_dir / "manifest.json").read_text())
    names = {entry["path"] for entry in manifest["outputs"]}
    assert {"near.bpi1", "far.bpi1", "near_corr.csv", "near_corr.f64",
            "near_corr_mask.csv", "far_corr_witness.f64", "report.json",
            "report.txt", "report_products.png"} <= names
    doc = json.loads((out_dir / "report.json").read_text())
    assert "diagnostics" in doc and "bootstrap" in doc
    for entry in manifest["outputs"]:
        assert (out_dir / entry["path"]).stat().st_size == entry["bytes"]


def test_pipeline_zero_frames_fails_cleanly(runner, tmp_path):
    config = tmp_path / "z.ini"
    config.write_text(MINI.format(n_frames=0))
    result = runner.invoke(main, ["pipeline", "--config", str(config),
                                  "--out", str(tmp_path / "zr")])
    assert result.exit_code == 2
    assert "simulate" in result.output or "simulate" in (result.stderr or "")


def test_bad_config_reports_field(runner, tmp_path):
    config = tmp_path / "bad.ini"
    config.write_text(MINI.format(n_frames=10).replace("quantum_efficiency = 0.8",
                                                       "quantum_efficiency = high"))
    result = runner.invoke(main, ["simulate", "--config", str(config),
                                  "--plane", "near", "--out", str(tmp_path / "x.bpi1")])
    assert result.exit_code == 2
    combined = result.output + (result.stderr or "")
    assert "quantum_efficiency" in combined
