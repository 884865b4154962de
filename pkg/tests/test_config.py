import textwrap

import pytest

from twinpix.config import load_config
from twinpix.source import ConfigError, Plane, expected_violation

MINIMAL = textwrap.dedent("""\
    [geometry]
    pixel_pitch_m = 16e-6
    focal_length_m = 37e-3
    wavelength_m = 710e-9
    sensor_width = 64
    sensor_height = 64

    [source]
    nf_pair_sigma = 1.5, 2.0
    ff_sum_sigma = 1.2, 0.9
    ff_marginal_sigma = 7, 7
    pump_sigma = 7, 7
    mean_pairs_per_frame = 100
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
    false_count_prob = 0.02

    [run]
    n_frames = 50
    seed = 123
""")


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_parses(tmp_path):
    config = load_config(_write(tmp_path, MINIMAL))
    assert config.geometry.sensor_width == 64
    assert config.source.nf_pair_sigma == (1.5, 2.0)
    assert config.detector.quantum_efficiency == 0.8
    assert config.detector.width == 64
    assert config.n_frames == 50 and config.seed == 123
    assert config.analysis.fit_window == 15  # defaults apply
    assert config.rois_nf.plane == Plane.NEAR
    nf_src = config.source_for(Plane.NEAR)
    assert nf_src.beam_center_1 == (15.5, 31.5)


def test_committed_desk_config_loads():
    config = load_config("configs/desk128.ini")
    assert config.geometry.sensor_width == 128
    assert expected_violation(config.source, config.geometry) == pytest.approx(5.16, rel=1e-9)
    assert config.analysis.pixel_variance == pytest.approx(1 / 6)
    assert config.n_frames == 2000


def test_committed_null_and_paper_configs_load():
    null = load_config("configs/null128.ini")
    assert expected_violation(null.source, null.geometry) == pytest.approx(0.5, rel=1e-9)
    paper = load_config("configs/paper512.ini")
    assert paper.geometry.sensor_width == 512
    assert paper.n_frames == 10000
    # widths were chosen to land the *fitted* peaks on the published values
    assert paper.source.nf_pair_sigma[0] ** 2 + 1 / 6 == pytest.approx(1.53**2, abs=1e-4)
    assert paper.source.ff_sum_sigma[0] ** 2 + 1 / 6 == pytest.approx(2.35**2, abs=1e-4)
    uncorr = load_config("configs/uncorrelated128.ini")
    assert uncorr.source.mean_pairs_per_frame == 0.0


def test_violation_target_resolved_at_load(tmp_path):
    text = MINIMAL.replace(
        "nf_pair_sigma = 1.5, 2.0\nff_sum_sigma = 1.2, 0.9\nff_marginal_sigma = 7, 7",
        "violation_target = 4.0\nanisotropy = 1.53, 2.2\nff_sum_scale = 1.2",
    )
    config = load_config(_write(tmp_path, text))
    assert expected_violation(config.source, config.geometry) == pytest.approx(4.0, rel=1e-6)


def test_missing_section_and_key_diagnostics(tmp_path):
    text = MINIMAL.replace("[detector]\nquantum_efficiency = 0.8\nfalse_count_prob = 0.02\n\n", "")
    with pytest.raises(ConfigError, match=r"\[detector\]"):
        load_config(_write(tmp_path, text))
    text = MINIMAL.replace("seed = 123", "")
    with pytest.raises(ConfigError, match="seed"):
        load_config(_write(tmp_path, text))


def test_bad_values_name_section_and_key(tmp_path):
    text = MINIMAL.replace("mean_pairs_per_frame = 100", "mean_pairs_per_frame = lots")
    with pytest.raises(ConfigError, match=r"\[source\] mean_pairs_per_frame"):
        load_config(_write(tmp_path, text))
    text = MINIMAL.replace("roi1 = 0, 16, 32, 32", "roi1 = 0, 16, 32", 1)
    with pytest.raises(ConfigError, match="roi1"):
        load_config(_write(tmp_path, text))


def test_cross_validation_roi_and_bin(tmp_path):
    text = MINIMAL.replace("roi2 = 32, 16, 32, 32\n\n[detector]",
                           "roi2 = 40, 16, 32, 32\n\n[detector]", 1)
    with pytest.raises(ConfigError, match="exceeds the sensor"):
        load_config(_write(tmp_path, text))
    text = MINIMAL + "\n[analysis]\nbin_size = 7\n"
    with pytest.raises(ConfigError, match="bin_size"):
        load_config(_write(tmp_path, text))


def test_source_needs_widths_or_target(tmp_path):
    text = MINIMAL.replace("nf_pair_sigma = 1.5, 2.0\n", "")
    with pytest.raises(ConfigError, match="violation_target"):
        load_config(_write(tmp_path, text))


def test_missing_file_raises_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")
