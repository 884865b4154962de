import numpy as np
import pytest
from scipy import stats

from twinpix import rng
from twinpix.optics import OpticalGeometry
from twinpix.source import (Arm, ConfigError, Plane, SourceParams,
                            calibrate_to_violation, expected_violation,
                            sample_frame, schmidt_number)

PAPER_GEO = OpticalGeometry(16e-6, 37e-3, 710e-9, 128, 128)


def _params(**over):
    base = dict(
        pump_sigma=(10.0, 10.0),
        nf_pair_sigma=(1.5, 2.2),
        ff_sum_sigma=(1.4, 1.0),
        ff_marginal_sigma=(9.0, 9.0),
        mean_pairs_per_frame=100.0,
        unpaired_fraction=0.0,
        beam_center_1=(32.0, 64.0),
        beam_center_2=(96.0, 64.0),
    )
    base.update(over)
    return SourceParams(**base)


def _all_pairs(params, plane, n_frames, seed=0):
    r1, r2 = [], []
    for i in range(n_frames):
        ev = sample_frame(params, plane, rng.stream(seed, 1, i))
        r1.append(np.column_stack([ev.x[0::2], ev.y[0::2]]))
        r2.append(np.column_stack([ev.x[1::2], ev.y[1::2]]))
    return np.concatenate(r1), np.concatenate(r2)


def test_zero_rate_gives_empty_frame():
    ev = sample_frame(_params(mean_pairs_per_frame=0.0), Plane.NEAR, rng.stream(0, 1, 0))
    assert len(ev) == 0


def test_perfect_correlation_limit():
    p = _params(nf_pair_sigma=(1e-9, 1e-9))
    ev = sample_frame(p, Plane.NEAR, rng.stream(0, 1, 0))
    r1 = np.column_stack([ev.x[0::2], ev.y[0::2]])
    r2 = np.column_stack([ev.x[1::2], ev.y[1::2]])
    mirrored = r1 - np.array(p.beam_center_1) + np.array(p.beam_center_2)
    assert np.allclose(r2, mirrored, atol=1e-6)
    assert set(ev.arm[0::2]) <= {int(Arm.SIGNAL)}
    assert set(ev.arm[1::2]) <= {int(Arm.IDLER)}


def test_conditional_width_matches_configured_sigma():
    p = calibrate_to_violation(5.16, (1.53, 2.2), PAPER_GEO,
                               mean_pairs_per_frame=1000.0)
    r1, r2 = _all_pairs(p, Plane.NEAR, 100)  # ~1e5 pairs
    assert len(r1) >= 9e4
    delta = r2 - (r1 - np.array(p.beam_center_1) + np.array(p.beam_center_2))
    for axis in (0, 1):
        assert delta[:, axis].std() == pytest.approx(p.nf_pair_sigma[axis], rel=0.02)


def test_far_field_conditional_width_and_sign():
    p = _params()
    r1, r2 = _all_pairs(p, Plane.FAR, 300)
    c1, c2 = np.array(p.beam_center_1), np.array(p.beam_center_2)
    eta = (r2 - c2) + (r1 - c1)
    for axis in (0, 1):
        assert eta[:, axis].std() == pytest.approx(p.ff_sum_sigma[axis], rel=0.03)
        assert np.cov(r1[:, axis], r2[:, axis])[0, 1] < 0  # anti-correlated
    nf1, nf2 = _all_pairs(p, Plane.NEAR, 300)
    for axis in (0, 1):
        assert np.cov(nf1[:, axis], nf2[:, axis])[0, 1] > 0  # correlated


def test_marginal_invariance_under_unpaired_fraction():
    paired = _params(mean_pairs_per_frame=500.0)
    broken = _params(mean_pairs_per_frame=500.0, unpaired_fraction=0.5)
    a1, _ = _all_pairs(paired, Plane.FAR, 200, seed=3)
    b1, _ = _all_pairs(broken, Plane.FAR, 200, seed=4)
    for axis in (0, 1):
        result = stats.ks_2samp(a1[:, axis], b1[:, axis])
        assert result.pvalue > 0.01


def test_unpaired_fraction_degrades_pairing():
    tight = _params(nf_pair_sigma=(0.5, 0.5), mean_pairs_per_frame=300.0)
    broken = _params(nf_pair_sigma=(0.5, 0.5), mean_pairs_per_frame=300.0,
                     unpaired_fraction=0.8)
    r1, r2 = _all_pairs(broken, Plane.NEAR, 100, seed=5)
    delta = r2 - (r1 - np.array(tight.beam_center_1) + np.array(tight.beam_center_2))
    # kept pairs sit in a narrow core; broken ones spread over the envelope
    frac_close = (np.abs(delta[:, 0]) < 2.0).mean()
    assert 0.25 < frac_close < 0.65  # (1 - u/2)^2 = 0.36 of pairs survive


def test_poisson_frame_statistics():
    p = _params(mean_pairs_per_frame=50.0)
    counts = [len(sample_frame(p, Plane.NEAR, rng.stream(7, 1, i))) // 2
              for i in range(1500)]
    counts = np.asarray(counts, dtype=float)
    assert counts.mean() == pytest.approx(50.0, rel=0.03)
    assert counts.var() == pytest.approx(counts.mean(), rel=0.15)


def test_param_validation():
    with pytest.raises(ConfigError):
        _params(nf_pair_sigma=(0.0, 1.0))
    with pytest.raises(ConfigError):
        _params(ff_marginal_sigma=(1.0, 1.0))  # below ff_sum_sigma
    with pytest.raises(ConfigError):
        _params(mean_pairs_per_frame=-1.0)
    with pytest.raises(ConfigError):
        _params(unpaired_fraction=1.0)


# ---------------------------------------------------------------------------
# Violation-factor arithmetic
# ---------------------------------------------------------------------------
def test_expected_violation_paper_widths():
    p = _params(nf_pair_sigma=(1.53, 2.2), ff_sum_sigma=(2.35, 1.85),
                ff_marginal_sigma=(9.0, 9.0))
    unit = PAPER_GEO.product_unit
    product = 0.25 * (1.53**2 + 2.2**2) * (2.35**2 + 1.85**2) * unit**2
    v = expected_violation(p, PAPER_GEO)
    assert v == pytest.approx(0.25 / product, rel=1e-12)
    assert product == pytest.approx(0.0602, abs=1e-3)
    assert v == pytest.approx(4.15, abs=0.01)


def test_expected_violation_quadratic_scaling():
    p = _params()
    v = expected_violation(p, PAPER_GEO)
    doubled = _params(nf_pair_sigma=(3.0, 4.4))
    base = _params(nf_pair_sigma=(1.5, 2.2))
    assert expected_violation(doubled, PAPER_GEO) == \
        pytest.approx(expected_violation(base, PAPER_GEO) / 4, rel=1e-12)


@pytest.mark.parametrize("v_target", [0.5, 1.0, 4.0, 5.16, 20.0])
def test_calibration_round_trip(v_target):
    p = calibrate_to_violation(v_target, (1.53, 2.2), PAPER_GEO)
    assert expected_violation(p, PAPER_GEO) == pytest.approx(v_target, rel=1e-9)


def test_calibration_boundary_case_isotropic():
    p = calibrate_to_violation(1.0, (1.0, 1.0), PAPER_GEO)
    unit = PAPER_GEO.product_unit
    product = 0.25 * (2 * p.nf_pair_sigma[0] ** 2) * (2 * p.ff_sum_sigma[0] ** 2) * unit**2
    assert product == pytest.approx(0.25, rel=1e-9)
    assert p.nf_pair_sigma[0] == pytest.approx(p.nf_pair_sigma[1])


def test_calibration_applies_anisotropy_ratio():
    p = calibrate_to_violation(5.16, (1.53, 2.2), PAPER_GEO)
    assert p.nf_pair_sigma[0] / p.nf_pair_sigma[1] == pytest.approx(1.53 / 2.2, rel=1e-9)
    assert p.ff_sum_sigma[0] / p.ff_sum_sigma[1] == pytest.approx(2.2 / 1.53, rel=1e-9)
    # per-axis width products are balanced by construction
    x = p.nf_pair_sigma[0] * p.ff_sum_sigma[0]
    y = p.nf_pair_sigma[1] * p.ff_sum_sigma[1]
    assert x == pytest.approx(y, rel=1e-9)


def test_calibration_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        calibrate_to_violation(0.0, (1.0, 1.0), PAPER_GEO)
    with pytest.raises(ConfigError):
        calibrate_to_violation(5.0, (-1.0, 1.0), PAPER_GEO)


def test_schmidt_number_scales_with_mode_content():
    few = _params(ff_sum_sigma=(4.0, 4.0), ff_marginal_sigma=(4.0, 4.0))
    many = _params(ff_sum_sigma=(0.5, 0.5), ff_marginal_sigma=(10.0, 10.0))
    assert schmidt_number(few) >= 1.0
    assert schmidt_number(many) > 100 * schmidt_number(few)
    # highly multimode limit: K per axis ~ (marginal / sum)^2
    assert schmidt_number(many) == pytest.approx((2 * 10.0 / 0.5 / 2) ** 4, rel=0.01)
