"""Emission model: analytic correlations and Monte-Carlo event generation."""

import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from qdlink import cascade, coincidence, presets
from qdlink.cascade import (
    CH_X,
    CH_XX,
    DetectionConfig,
    QDParams,
    beat_period_ps,
    co_polarized_probability,
    conditional_x_state,
)
from qdlink.errors import ConfigError
from qdlink.polmath import (
    D,
    H,
    MuellerRotation,
    PoincareAngles,
    angles_to_stokes,
    projection_probability,
    stokes_to_angles,
)

HBAR_PS = cascade.HBAR_UEV_NS * 1e3


def test_co_probability_eigenbasis_never_beats():
    t = np.linspace(0, 5000, 11)
    assert co_polarized_probability(0.0, 1.3, 5.6, t) == pytest.approx(np.ones(11))


def test_co_probability_superposition_values():
    assert co_polarized_probability(math.pi / 2, 0.0, 5.6, 0.0) == pytest.approx(1.0)
    t_half = math.pi * HBAR_PS / 5.6
    assert co_polarized_probability(math.pi / 2, 0.0, 5.6, t_half) == pytest.approx(
        0.0, abs=1e-12
    )


def test_beat_period_from_planck_constant():
    # independent derivation from CODATA h: 4.135667696e-15 eV s
    h_uev_ps = 4.135667696e-15 * 1e6 * 1e12
    assert beat_period_ps(5.6) == pytest.approx(h_uev_ps / 5.6, rel=1e-12)
    assert beat_period_ps(5.6) == pytest.approx(738.512, abs=0.01)


def test_time_average_over_full_beat():
    # averaging the beat over one period leaves 1 - sin^2(theta)/2
    theta = 1.1
    period = beat_period_ps(5.6)
    t = np.linspace(0.0, period, 20001)
    avg = np.trapezoid(
        co_polarized_probability(theta, 0.7, 5.6, t), t
    ) / period
    assert avg == pytest.approx(1.0 - math.sin(theta) ** 2 / 2.0, abs=1e-6)


def test_conditional_state_examples():
    assert conditional_x_state(0.0, 0.0, 5.6, 100.0).as_array() == pytest.approx(
        [1, 0, 0]
    )
    assert conditional_x_state(math.pi / 2, 0.0, 5.6, 0.0).as_array() == pytest.approx(
        [0, 1, 0], abs=1e-12
    )
    t_quarter = 0.5 * math.pi * HBAR_PS / 5.6
    assert conditional_x_state(
        math.pi / 2, 0.0, 5.6, t_quarter
    ).as_array() == pytest.approx([0, 0, 1], abs=1e-12)


@given(
    st.floats(min_value=0.01, max_value=math.pi - 0.01),
    st.floats(min_value=0.0, max_value=2 * math.pi),
    st.floats(min_value=0.0, max_value=5000.0),
)
def test_conditional_state_reproduces_co_probability(theta, phi, t_ps):
    # projecting the conditional state onto the same analyzer must give the
    # closed-form coincidence probability
    analyzer = angles_to_stokes(PoincareAngles(theta, phi))
    cond = conditional_x_state(theta, phi, 5.6, t_ps)
    assert projection_probability(analyzer, cond) == pytest.approx(
        float(co_polarized_probability(theta, phi, 5.6, t_ps)), abs=1e-9
    )


def test_qdparams_validation():
    with pytest.raises(ConfigError):
        QDParams(fss_uev=-1.0)
    with pytest.raises(ConfigError):
        QDParams(tau_corr_ns=2.0, tau_x_ns=1.5)  # correlation outliving exciton
    with pytest.raises(ConfigError):
        QDParams(lambda_xx_nm=1321.0, lambda_x_nm=1310.0)
    with pytest.raises(ConfigError):
        QDParams(pair_rate_hz=1e9, tau_xx_ns=0.6, tau_x_ns=1.5)  # beyond dead time


def test_detection_validation():
    with pytest.raises(ConfigError):
        DetectionConfig(analyzer_x=H, analyzer_xx=H, efficiency_x=1.5)
    with pytest.raises(ConfigError):
        DetectionConfig(analyzer_x=H, analyzer_xx=H, background_rate_x_hz=-1.0)


def test_simulation_is_deterministic():
    qd = presets.demo_dot(pair_rate_hz=1e6)
    det = presets.ideal_detection(H, H)
    a = cascade.simulate_pairs(qd, det, duration_s=0.05, seed=9)
    b = cascade.simulate_pairs(qd, det, duration_s=0.05, seed=9)
    assert a.records.tobytes() == b.records.tobytes()
    c = cascade.simulate_pairs(qd, det, duration_s=0.05, seed=10)
    assert a.records.tobytes() != c.records.tobytes()


def test_records_sorted_and_labelled():
    qd = presets.demo_dot(pair_rate_hz=1e6)
    sched = presets.standard_schedule(dwell_s=0.02)
    det = presets.ideal_detection(H, H)
    stream = cascade.simulate_run(qd, det, sched, duration_s=0.12, seed=3)
    t = stream.records["t_ps"].astype(np.int64)
    assert np.all(np.diff(t) >= 0)
    assert set(np.unique(stream.records["basis_id"])) == {0, 1, 2, 3, 4, 5}
    assert set(np.unique(stream.records["channel"])) <= {CH_X, CH_XX}


def test_ideal_co_cross_contrast_is_unity():
    # aligned analyzers, no splitting, no background: every exciton that a
    # recorded biexciton heralds shares its polarization; only rare
    # adjacent-cycle accidentals enter the cross counts
    qd = QDParams(fss_uev=0.0, tau_corr_ns=1.5, tau_xx_ns=0.6, tau_x_ns=1.5,
                  pair_rate_hz=1e6)
    det = presets.ideal_detection(H, H)
    co = cascade.simulate_pairs(qd, det, duration_s=0.2, seed=11, basis_id=0)
    det_cross = presets.ideal_detection(H, H.negated())
    cross = cascade.simulate_pairs(qd, det_cross, duration_s=0.2, seed=11, basis_id=0)

    def coincidences(stream):
        h = coincidence.build_histogram(stream, CH_XX, CH_X, 48, 1200)
        return int(h.counts.sum())

    n_co = coincidences(co)
    n_cross = coincidences(cross)
    assert n_co > 10_000
    contrast = (n_co - n_cross) / (n_co + n_cross)
    assert contrast > 0.99


def test_efficiency_thinning_scales_rates():
    qd = presets.demo_dot(pair_rate_hz=2e6)
    full = presets.ideal_detection(H, H)
    half = DetectionConfig(analyzer_x=H, analyzer_xx=H, jitter_ps=0.0,
                           efficiency_x=0.5, efficiency_xx=0.5)
    s_full = cascade.simulate_pairs(qd, full, duration_s=0.3, seed=21)
    s_half = cascade.simulate_pairs(qd, half, duration_s=0.3, seed=21)

    def singles(stream, ch):
        return stream.channel_times(ch).size

    def pairs(stream):
        h = coincidence.build_histogram(stream, CH_XX, CH_X, 48, 4800)
        return h.counts.sum()

    for ch in (CH_X, CH_XX):
        ratio = singles(s_half, ch) / singles(s_full, ch)
        assert ratio == pytest.approx(0.5, abs=5 * 0.5 / math.sqrt(singles(s_full, ch)))
    pair_ratio = pairs(s_half) / pairs(s_full)
    assert pair_ratio == pytest.approx(0.25, abs=5 * 0.25 / math.sqrt(pairs(s_full)))


def test_monte_carlo_matches_analytic_beat():
    # co-polarized fraction per delay bin against the closed form, in the
    # diagonal basis where the beat has full contrast
    qd = presets.demo_dot(pair_rate_hz=2e6)  # tau_corr 1.4, tau_x 1.5
    det_co = presets.ideal_detection(D, D)
    det_cross = presets.ideal_detection(D, D.negated())
    co = cascade.simulate_pairs(qd, det_co, duration_s=0.35, seed=31)
    cross = cascade.simulate_pairs(qd, det_cross, duration_s=0.35, seed=32)
    h_co = coincidence.build_histogram(co, CH_XX, CH_X, 24, 3600)
    h_cross = coincidence.build_histogram(cross, CH_XX, CH_X, 24, 3600)
    centers = h_co.bin_centers_ps
    pos = centers > 24
    n_co = h_co.counts[pos].astype(float)
    n_cross = h_cross.counts[pos].astype(float)
    total = n_co + n_cross
    usable = total >= 50
    t = centers[pos][usable]
    frac = n_co[pos.size * 0:][usable] / total[usable]
    # dephasing mixes in a flat 1/2 with weight 1 - exp(-t/tau_deph)
    tau_deph_ps = qd.dephasing_time_ns * 1e3
    p_coh = np.exp(-t / tau_deph_ps)
    expect = p_coh * co_polarized_probability(math.pi / 2, 0.0, qd.fss_uev, t) + (
        1 - p_coh
    ) * 0.5
    sigma = np.sqrt(expect * (1 - expect) / total[usable]) + 3.0 / total[usable]
    ok = np.abs(frac - expect) <= 5 * sigma
    assert ok.mean() >= 0.95


def test_antibunching_of_biexciton_channel():
    qd = presets.demo_dot(pair_rate_hz=4e6)
    det = presets.ideal_detection(H, H)
    stream = cascade.simulate_pairs(qd, det, duration_s=0.5, seed=41)
    hist = coincidence.build_histogram(stream, CH_XX, CH_XX, 500, 50000)
    floor = hist.counts[np.abs(hist.bin_centers_ps) > 30000].mean()
    dip = hist.counts[np.abs(hist.bin_centers_ps) < 500].mean()
    assert dip < 0.2 * floor


def test_unpaired_singles_remain():
    qd = presets.demo_dot(pair_rate_hz=1e6)
    det = DetectionConfig(analyzer_x=H, analyzer_xx=H, jitter_ps=0.0,
                          efficiency_x=1.0, efficiency_xx=0.0)
    stream = cascade.simulate_pairs(qd, det, duration_s=0.05, seed=51)
    assert stream.channel_times(CH_XX).size == 0
    assert stream.channel_times(CH_X).size > 10_000


def test_background_rate_calibration():
    # configured background rate is the detected rate after the analyzer
    qd = presets.demo_dot(pair_rate_hz=1e6)
    det = DetectionConfig(analyzer_x=H, analyzer_xx=H, jitter_ps=0.0,
                          efficiency_x=0.0, efficiency_xx=0.0,
                          background_rate_x_hz=5e5, background_rate_xx_hz=2e5)
    stream = cascade.simulate_pairs(qd, det, duration_s=0.4, seed=61)
    nx = stream.channel_times(CH_X).size
    nxx = stream.channel_times(CH_XX).size
    assert nx == pytest.approx(2e5, abs=5 * math.sqrt(2e5))
    assert nxx == pytest.approx(8e4, abs=5 * math.sqrt(8e4))


def test_record_budget_guard():
    qd = presets.demo_dot(pair_rate_hz=5e6)
    det = presets.ideal_detection(H, H)
    with pytest.raises(ConfigError):
        cascade.simulate_pairs(qd, det, duration_s=1e4, seed=0)


def test_mueller_rotation_moves_analyzer_frame():
    # rotating both arms by the map that sends H to D makes an H/H setting
    # behave like a D/D one: the beat appears
    qd = presets.demo_dot(pair_rate_hz=2e6)
    rot = MuellerRotation.from_axis_angle((0, 0, 1), math.pi / 2)
    det = presets.ideal_detection(H, H)
    stream = cascade.simulate_pairs(
        qd, det, mueller_x=rot, mueller_xx=rot, duration_s=0.25, seed=71
    )
    hist = coincidence.build_histogram(stream, CH_XX, CH_X, 48, 3600)
    t = hist.bin_centers_ps
    pos = t > 0
    counts = hist.counts[pos].astype(float)
    # coincidences should dip near half a beat period
    period = beat_period_ps(qd.fss_uev)
    near_null = (np.abs(t[pos] - period / 2) < 50)
    near_peak = (np.abs(t[pos] - period) < 50)
    assert counts[near_null].mean() < 0.35 * counts[near_peak].mean()
