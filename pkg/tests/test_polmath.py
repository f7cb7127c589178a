"""Stokes algebra, angle charts, rotations and analyzer conventions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from qdlink import polmath as pm
from qdlink.errors import ConfigError, NormalizationError, RotationError


def test_angle_chart_poles_and_equator():
    assert pm.angles_to_stokes(pm.PoincareAngles(0.0, 1.23)).as_array() == pytest.approx(
        [1, 0, 0]
    )
    assert pm.angles_to_stokes(
        pm.PoincareAngles(math.pi / 2, 0.0)
    ).as_array() == pytest.approx([0, 1, 0])
    assert pm.angles_to_stokes(
        pm.PoincareAngles(math.pi / 2, math.pi / 2)
    ).as_array() == pytest.approx([0, 0, 1])


def test_stokes_to_angles_known_points():
    a = pm.stokes_to_angles(pm.H)
    assert (a.theta, a.phi) == pytest.approx((0.0, 0.0))
    a = pm.stokes_to_angles(pm.R)
    assert (a.theta, a.phi) == pytest.approx((math.pi / 2, math.pi / 2))
    # the lower pole maps to phi = 0 by convention
    a = pm.stokes_to_angles(pm.V)
    assert (a.theta, a.phi) == pytest.approx((math.pi, 0.0))


def test_stokes_to_angles_rejects_non_unit():
    with pytest.raises(NormalizationError):
        pm.StokesVector(0.5, 0.0, 0.0)


@given(
    st.floats(min_value=1e-3, max_value=math.pi - 1e-3),
    st.floats(min_value=0.0, max_value=2 * math.pi - 1e-9),
)
def test_angle_round_trip(theta, phi):
    a = pm.PoincareAngles(theta, phi)
    s = pm.angles_to_stokes(a)
    back = pm.stokes_to_angles(s)
    assert back.theta == pytest.approx(theta, abs=1e-9)
    assert math.cos(back.phi) == pytest.approx(math.cos(phi), abs=1e-9)
    assert math.sin(back.phi) == pytest.approx(math.sin(phi), abs=1e-9)


def test_rotation_rejects_bad_matrices():
    with pytest.raises(RotationError):
        pm.MuellerRotation(np.eye(3) * 1.1)
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(RotationError):
        pm.MuellerRotation(reflection)


def test_apply_rotation_examples():
    ident = pm.MuellerRotation.identity()
    assert ident.apply(pm.D).as_array() == pytest.approx([0, 1, 0])
    flip = pm.MuellerRotation.from_axis_angle((1, 0, 0), math.pi)
    assert flip.apply(pm.D).as_array() == pytest.approx([0, -1, 0], abs=1e-12)
    # quarter turn about the circular axis, checked against the hand matrix
    quarter = pm.MuellerRotation.from_axis_angle((0, 0, 1), math.pi / 2)
    hand = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert quarter.matrix == pytest.approx(hand, abs=1e-12)
    assert quarter.apply(pm.H).as_array() == pytest.approx([0, 1, 0], abs=1e-12)


def test_rotations_preserve_norm_and_dots():
    rng = np.random.default_rng(5)
    for _ in range(200):
        m = pm.MuellerRotation.random(rng)
        v = rng.normal(size=(50, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        w = v @ m.matrix.T
        assert np.linalg.norm(w, axis=1) == pytest.approx(np.ones(50), abs=1e-9)
        assert w @ w.T == pytest.approx(v @ v.T, abs=1e-9)


def test_projection_probability_extremes():
    assert pm.projection_probability(pm.H, pm.H) == 1.0
    assert pm.projection_probability(pm.H, pm.V) == 0.0
    assert pm.projection_probability(pm.H, pm.D) == 0.5


@given(st.integers(min_value=0, max_value=10_000))
def test_projection_complement_sums_to_one(i):
    rng = np.random.default_rng(i)
    a = pm.StokesVector.from_array(_unit(rng))
    p = pm.StokesVector.from_array(_unit(rng))
    assert pm.projection_probability(a, p) + pm.projection_probability(
        a.negated(), p
    ) == pytest.approx(1.0, abs=1e-15)


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


# --- analyzer train ---------------------------------------------------------


def test_analyzer_golden_conventions():
    # all elements aligned to H
    s = pm.analyzer_to_stokes(pm.AnalyzerSetting.standard(0.0, 0.0, 0.0))
    assert s.as_array() == pytest.approx([1, 0, 0], abs=1e-12)
    # half-wave plate at 22.5 degrees selects D
    s = pm.analyzer_to_stokes(pm.AnalyzerSetting.standard(math.radians(22.5), 0.0, 0.0))
    assert s.as_array() == pytest.approx([0, 1, 0], abs=1e-12)
    # quarter-wave plate at 45 degrees selects right circular: this pins the
    # package handedness convention
    s = pm.analyzer_to_stokes(pm.AnalyzerSetting.standard(0.0, math.radians(45), 0.0))
    assert s.as_array() == pytest.approx([0, 0, 1], abs=1e-12)


@given(st.floats(min_value=-math.pi, max_value=math.pi))
def test_lp_only_sweeps_linear_equator(angle):
    s = pm.analyzer_to_stokes(pm.AnalyzerSetting.lp_only(angle))
    assert s.s3 == pytest.approx(0.0, abs=1e-12)
    assert s.s1 == pytest.approx(math.cos(2 * angle), abs=1e-12)
    assert s.s2 == pytest.approx(math.sin(2 * angle), abs=1e-12)


def test_analyzer_setting_validation():
    with pytest.raises(ConfigError):
        pm.AnalyzerSetting((("lp", 0.0), ("hwp", 0.1)))  # polarizer not last
    with pytest.raises(ConfigError):
        pm.AnalyzerSetting((("hwp", 0.1),))  # no polarizer


# Independent cross-check of the analyzer model through Jones calculus. The
# retarder adds a phase on its slow axis; the one free sign (which circular
# pole the QWP selects) is set once to the package convention, after which
# every composed setting must agree between the two formalisms.


def _jones_rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _jones_waveplate(fast_axis, retardance):
    d = np.diag([1.0, np.exp(1j * retardance)])
    r = _jones_rot(fast_axis)
    return r @ d @ r.T


def _jones_to_stokes(v):
    ch, cv = v
    return np.array(
        [
            (abs(ch) ** 2 - abs(cv) ** 2),
            2 * (ch.conjugate() * cv).real,
            -2 * (ch.conjugate() * cv).imag,
        ]
    ) / (abs(ch) ** 2 + abs(cv) ** 2)


def _jones_analyzer_state(setting):
    lp_angle = setting.elements[-1][1]
    v = np.array([math.cos(lp_angle), math.sin(lp_angle)], dtype=complex)
    for kind, angle in reversed(setting.elements[:-1]):
        ret = math.pi if kind == "hwp" else math.pi / 2
        w = _jones_waveplate(angle, ret)
        v = w.conjugate().T @ v
    return _jones_to_stokes(v)


@settings(max_examples=200)
@given(
    st.floats(min_value=-math.pi, max_value=math.pi),
    st.floats(min_value=-math.pi, max_value=math.pi),
    st.floats(min_value=-math.pi, max_value=math.pi),
)
def test_analyzer_matches_jones_calculus(hwp, qwp, lp):
    setting = pm.AnalyzerSetting.standard(hwp, qwp, lp)
    ours = pm.analyzer_to_stokes(setting).as_array()
    jones = _jones_analyzer_state(setting)
    assert ours == pytest.approx(jones, abs=1e-9)


def test_rotation_angle_metric():
    a = pm.MuellerRotation.from_axis_angle((0, 0, 1), 0.3)
    b = pm.MuellerRotation.from_axis_angle((0, 0, 1), 0.5)
    assert a.angle_to(b) == pytest.approx(0.2, abs=1e-12)
    assert a.angle_to(a) == pytest.approx(0.0, abs=1e-7)
