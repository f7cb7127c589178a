"""Ready-made emitter, schedule and link scenarios.

These mirror a telecom O-band entangled-pair source on a metropolitan
fiber link: the dot is biased for a 5.6 ueV splitting with biexciton
emission at 1310.00 nm, and the deployed arm sees 11.8 dB of loss with a
1550 nm classical channel multiplexed alongside.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

from .calib import DEFAULT_REF_LABELS, DEFAULT_REFS
from .cascade import DetectionConfig, QDParams, ScheduleEntry
from .polmath import D, H, MuellerRotation, R, StokesVector

DEMO_BIAS_V = -2.6
DEMO_FSS_UEV = 5.6


def demo_dot(pair_rate_hz: float = 2.0e6, fss_uev: float = DEMO_FSS_UEV) -> QDParams:
    """The demo emitter at its operating bias."""
    return QDParams(
        fss_uev=fss_uev,
        tau_corr_ns=1.4,
        tau_xx_ns=0.6,
        tau_x_ns=1.5,
        lambda_xx_nm=1310.0,
        lambda_x_nm=1321.45,
        pair_rate_hz=pair_rate_hz,
    )


def standard_schedule(
    dwell_s: float,
    compensation: Optional[dict] = None,
) -> Tuple[ScheduleEntry, ...]:
    """Co/cross entries for the three principal bases.

    With a compensation mapping (eigenstate label -> lab-frame setting,
    as produced by calibration) the analyzers are set to the compensated
    states instead of the bare eigenstates.
    """
    states = {"H": H, "D": D, "R": R}
    if compensation is not None:
        states = {k: compensation[k] for k in ("H", "D", "R")}
    entries = []
    for i, (name, state) in enumerate(
        (("hv", states["H"]), ("da", states["D"]), ("rl", states["R"]))
    ):
        entries.append(
            ScheduleEntry(2 * i, f"{name}_co", state, state, dwell_s)
        )
        entries.append(
            ScheduleEntry(2 * i + 1, f"{name}_cross", state, state.negated(), dwell_s)
        )
    return tuple(entries)


def calibration_schedule(
    dwell_s: float,
    refs: Sequence[StokesVector] = DEFAULT_REFS,
    labels: Sequence[str] = DEFAULT_REF_LABELS,
) -> Tuple[ScheduleEntry, ...]:
    """Co/cross entries for the calibration reference states."""
    entries = []
    for i, (label, ref) in enumerate(zip(labels, refs)):
        entries.append(
            ScheduleEntry(2 * i, f"cal_co:{label}", ref, ref, dwell_s)
        )
        entries.append(
            ScheduleEntry(2 * i + 1, f"cal_cross:{label}", ref, ref.negated(), dwell_s)
        )
    return tuple(entries)


def ideal_detection(analyzer_x: StokesVector, analyzer_xx: StokesVector) -> DetectionConfig:
    """Lossless, jitter-free, background-free detection."""
    return DetectionConfig(
        analyzer_x=analyzer_x,
        analyzer_xx=analyzer_xx,
        jitter_ps=0.0,
        efficiency_x=1.0,
        efficiency_xx=1.0,
        background_rate_x_hz=0.0,
        background_rate_xx_hz=0.0,
    )


# Scenario matched to the deployed-link measurements: unpolarized
# background (classical-channel leakage plus detector darks) and
# superconducting-detector jitter pull the peak fidelity to about 0.95
# and the error rate to about 3.4 percent at a 48 ps analysis window.
FIELD_PAIR_RATE_HZ = 8.0e6
FIELD_BACKGROUND_HZ = 3.2e6
FIELD_JITTER_PS = 35.0


def field_dot() -> QDParams:
    return demo_dot(pair_rate_hz=FIELD_PAIR_RATE_HZ)


def field_detection(
    analyzer_x: StokesVector, analyzer_xx: StokesVector
) -> DetectionConfig:
    return DetectionConfig(
        analyzer_x=analyzer_x,
        analyzer_xx=analyzer_xx,
        jitter_ps=FIELD_JITTER_PS,
        efficiency_x=1.0,
        efficiency_xx=1.0,
        background_rate_x_hz=FIELD_BACKGROUND_HZ,
        background_rate_xx_hz=FIELD_BACKGROUND_HZ,
    )


def tilted_fiber(angle_deg: float = 35.0) -> MuellerRotation:
    """A representative static fiber rotation for demonstrations."""
    return MuellerRotation.from_axis_angle(
        (0.3, -0.5, 0.81), math.radians(angle_deg)
    )
