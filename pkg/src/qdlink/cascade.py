"""Two-photon cascade model and Monte-Carlo time-tag generation.

The emitter produces polarization-entangled photon pairs whose relative
phase precesses at a rate set by the fine-structure splitting delta: a
pair detected with an exciton/biexciton delay t carries phase
delta * t / hbar between its H/H and V/V components. Measuring both
photons along an analyzer direction with polar angles (theta, phi) gives
the co-polarized probability

    p_co = 1 - 2 sin^2(theta/2) cos^2(theta/2) (1 - cos(delta t / hbar - 2 phi))

which is what the analysis and calibration modules fit against.

Event generation uses a renewal model: an excitation waits an exponential
time, then the biexciton photon is emitted (lifetime tau_xx), then the
exciton photon (lifetime tau_x), and the cycle restarts. The mean cycle
time equals 1 / pair_rate_hz, and the dead time of the cascade itself
produces the anti-bunching dip seen in autocorrelation measurements.
Correlation contrast decays with the pair delay at the configured
tau_corr_ns, which combines the exciton lifetime with any additional
spin-scrambling processes, so tau_corr_ns <= tau_x_ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .polmath import MuellerRotation, PoincareAngles, StokesVector, angles_to_stokes

HBAR_UEV_NS = 0.6582119569
PLANCK_UEV_PS = 4135.667696
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

CH_X = 0
CH_XX = 1
CH_BACKGROUND = 2

RECORD_DTYPE = np.dtype(
    [("channel", "<u1"), ("basis_id", "<u1"), ("reserved", "<u2"), ("t_ps", "<u8")]
)

MAX_RECORDS = 2 ** 31


def beat_period_ps(delta_uev: float) -> float:
    """Period of the correlation beat, h / delta, in picoseconds."""
    if delta_uev <= 0:
        raise ConfigError("beat period requires a positive splitting")
    return PLANCK_UEV_PS / delta_uev


def phase_rad(delta_uev, t_ps):
    """Accumulated pair phase delta * t / hbar for t in ps, delta in ueV."""
    return np.asarray(delta_uev) * np.asarray(t_ps) / (HBAR_UEV_NS * 1e3)


def co_polarized_probability(theta, phi, delta_uev, t_ps):
    """Probability of a co-polarized coincidence at pair delay t_ps.

    Both analyzers point along (theta, phi) in the emitter eigenframe.
    Broadcasts over any argument.
    """
    th = np.asarray(theta, dtype=float)
    bracket = 1.0 - np.cos(phase_rad(delta_uev, t_ps) - 2.0 * np.asarray(phi))
    p = 1.0 - 2.0 * np.sin(th / 2.0) ** 2 * np.cos(th / 2.0) ** 2 * bracket
    return np.clip(p, 0.0, 1.0) if p.ndim else float(min(1.0, max(0.0, p)))


def conditional_x_state(
    theta: float, phi: float, delta_uev: float, t_ps: float
) -> StokesVector:
    """Exciton state after the biexciton is projected onto (theta, phi).

    The projection transfers the analyzer polar angle and reflects its
    azimuth through half the accumulated pair phase, giving angles
    (theta, delta t / hbar - phi).
    """
    ph = float(phase_rad(delta_uev, t_ps)) - phi
    return angles_to_stokes(PoincareAngles(theta, ph % (2.0 * math.pi)))


@dataclass(frozen=True)
class QDParams:
    """Emitter physics: splitting, lifetimes, wavelengths, pair rate."""

    fss_uev: float = 5.6
    tau_corr_ns: float = 1.4
    tau_xx_ns: float = 0.6
    tau_x_ns: float = 1.5
    lambda_xx_nm: float = 1310.0
    lambda_x_nm: float = 1321.45
    pair_rate_hz: float = 2.0e6

    def __post_init__(self):
        if self.fss_uev < 0 or not math.isfinite(self.fss_uev):
            raise ConfigError("fss_uev must be finite and nonnegative")
        for name in ("tau_corr_ns", "tau_xx_ns", "tau_x_ns", "pair_rate_hz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive")
        if self.lambda_x_nm <= self.lambda_xx_nm:
            raise ConfigError(
                "exciton wavelength must exceed biexciton wavelength for this device"
            )
        if self.tau_corr_ns > self.tau_x_ns * (1.0 + 1e-12):
            raise ConfigError(
                "tau_corr_ns cannot exceed tau_x_ns; the correlation cannot "
                "outlive the exciton"
            )
        cascade_ns = self.tau_xx_ns + self.tau_x_ns
        if self.pair_rate_hz * cascade_ns * 1e-9 >= 1.0:
            raise ConfigError("pair rate too high for the cascade lifetimes")

    @property
    def excitation_rate_hz(self) -> float:
        """Excitation rate giving a mean cycle time of 1 / pair_rate_hz."""
        wait_s = 1.0 / self.pair_rate_hz - (self.tau_xx_ns + self.tau_x_ns) * 1e-9
        return 1.0 / wait_s

    @property
    def dephasing_time_ns(self) -> float:
        """Spin-scrambling timescale implied by tau_corr and tau_x (inf if none)."""
        inv = 1.0 / self.tau_corr_ns - 1.0 / self.tau_x_ns
        return math.inf if inv <= 0 else 1.0 / inv


@dataclass(frozen=True)
class DetectionConfig:
    """Analyzers, timing jitter, end-to-end efficiencies and backgrounds.

    Background rates are the mean detected unpolarized rates per channel;
    each background event carries an isotropic random polarization and is
    filtered by the analyzer, which is folded into the rate definition.
    """

    analyzer_x: StokesVector
    analyzer_xx: StokesVector
    jitter_ps: float = 60.0
    efficiency_x: float = 1.0
    efficiency_xx: float = 1.0
    background_rate_x_hz: float = 0.0
    background_rate_xx_hz: float = 0.0

    def __post_init__(self):
        for name in ("efficiency_x", "efficiency_xx"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1]")
        for name in ("jitter_ps", "background_rate_x_hz", "background_rate_xx_hz"):
            v = getattr(self, name)
            if v < 0 or not math.isfinite(v):
                raise ConfigError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class ScheduleEntry:
    """One detection-basis setting held for dwell_s seconds."""

    basis_id: int
    role: str
    analyzer_x: StokesVector
    analyzer_xx: StokesVector
    dwell_s: float

    def __post_init__(self):
        if not 0 <= self.basis_id < 256:
            raise ConfigError("basis_id must fit in one byte")
        if self.dwell_s <= 0:
            raise ConfigError("dwell_s must be positive")


@dataclass(frozen=True)
class StreamHeader:
    schedule: tuple
    qd: Optional[QDParams]
    seed: Optional[int]
    duration_s: float
    resolution_ps: int = 1


@dataclass(eq=False)
class TimeTagStream:
    """Time-ordered detection records with acquisition metadata."""

    header: StreamHeader
    records: np.ndarray

    def __post_init__(self):
        if self.records.dtype != RECORD_DTYPE:
            self.records = self.records.astype(RECORD_DTYPE)

    @property
    def n_records(self) -> int:
        return int(self.records.size)

    def channel_times(self, channel: int, basis_ids=None) -> np.ndarray:
        """Sorted int64 timestamps for one channel, optionally basis-filtered."""
        mask = self.records["channel"] == channel
        if basis_ids is not None:
            mask &= np.isin(self.records["basis_id"], np.asarray(list(basis_ids)))
        return np.sort(self.records["t_ps"][mask].astype(np.int64))

    def basis_dwell_s(self, basis_ids) -> float:
        """Total wall time spent in the given schedule entries."""
        segs = schedule_segments(self.header.schedule, self.header.duration_s)
        wanted = set(basis_ids)
        return sum(d for e, _, d in segs if e.basis_id in wanted)


def schedule_segments(schedule: Sequence[ScheduleEntry], duration_s: float):
    """Cycle through schedule entries until duration_s is filled.

    Returns (entry, start_s, dwell_s) triples; the final segment is
    truncated so total dwell equals duration_s.
    """
    if not schedule:
        raise ConfigError("schedule must contain at least one entry")
    ids = [e.basis_id for e in schedule]
    if len(set(ids)) != len(ids):
        raise ConfigError("schedule basis ids must be unique")
    segments = []
    t = 0.0
    i = 0
    while t < duration_s - 1e-12:
        entry = schedule[i % len(schedule)]
        dwell = min(entry.dwell_s, duration_s - t)
        segments.append((entry, t, dwell))
        t += dwell
        i += 1
    return segments


def _unit_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    norm = np.maximum(np.linalg.norm(v, axis=1), 1e-300)
    return v / norm[:, None]


def _draw_cycles(qd: QDParams, dwell_s: float, rng: np.random.Generator):
    """Renewal emission times within [0, dwell): returns (t_xx_s, delay_s)."""
    wait_s = 1.0 / qd.excitation_rate_hz
    tau_xx_s = qd.tau_xx_ns * 1e-9
    tau_x_s = qd.tau_x_ns * 1e-9
    chunk = max(int(dwell_s * qd.pair_rate_hz * 1.05) + 64, 64)
    ends, delays = [], []
    total = 0.0
    while total < dwell_s:
        w = rng.exponential(wait_s, chunk)
        b = rng.exponential(tau_xx_s, chunk)
        c = rng.exponential(tau_x_s, chunk)
        cyc = w + b + c
        ends.append(cyc)
        delays.append(c)
        total += float(np.sum(cyc))
    end = np.cumsum(np.concatenate(ends))
    delay = np.concatenate(delays)
    t_xx = end - delay
    keep = t_xx < dwell_s
    return t_xx[keep], delay[keep]


def _simulate_segment(
    qd: QDParams,
    det: DetectionConfig,
    ax_eff: np.ndarray,
    axx_eff: np.ndarray,
    dwell_s: float,
    rng: np.random.Generator,
    basis_id: int,
    t_offset_ps: float,
) -> np.ndarray:
    t_xx_s, delay_s = _draw_cycles(qd, dwell_s, rng)
    n = t_xx_s.size
    t_x_s = t_xx_s + delay_s

    # Polarization correlation of each pair at its actual delay.
    ph = phase_rad(qd.fss_uev, delay_s * 1e12)
    tau_deph = qd.dephasing_time_ns
    if math.isfinite(tau_deph):
        p_coherent = np.exp(-delay_s / (tau_deph * 1e-9))
    else:
        p_coherent = np.ones(n)
    coherent = rng.random(n) < p_coherent

    # The biexciton analyzer is projective: half the pairs collapse onto
    # the monitored state, half onto its antipode (and go unrecorded).
    monitored = rng.random(n) < 0.5
    sign = np.where(monitored, 1.0, -1.0)
    v = sign[:, None] * axx_eff[None, :]
    cosd = np.cos(ph)
    sind = np.sin(ph)
    s_cond = np.column_stack(
        [v[:, 0], cosd * v[:, 1] + sind * v[:, 2], sind * v[:, 1] - cosd * v[:, 2]]
    )
    scrambled = _unit_rows(rng, n)
    s_cond = np.where(coherent[:, None], s_cond, scrambled)

    p_x = 0.5 * (1.0 + s_cond @ ax_eff)
    x_pass = rng.random(n) < p_x
    xx_rec = monitored & (rng.random(n) < det.efficiency_xx)
    x_rec = x_pass & (rng.random(n) < det.efficiency_x) & (t_x_s < dwell_s)

    def background(rate_hz, analyzer):
        n_inc = rng.poisson(2.0 * rate_hz * dwell_s)
        t = rng.uniform(0.0, dwell_s, n_inc)
        dirs = _unit_rows(rng, n_inc)
        keep = rng.random(n_inc) < 0.5 * (1.0 + dirs @ analyzer)
        return t[keep]

    bg_x = background(det.background_rate_x_hz, ax_eff)
    bg_xx = background(det.background_rate_xx_hz, axx_eff)

    sigma_ps = det.jitter_ps * _FWHM_TO_SIGMA
    t_x_ps = np.concatenate([t_x_s[x_rec], bg_x]) * 1e12
    t_x_ps = t_x_ps + rng.normal(0.0, sigma_ps, t_x_ps.size)
    t_xx_ps = np.concatenate([t_xx_s[xx_rec], bg_xx]) * 1e12
    t_xx_ps = t_xx_ps + rng.normal(0.0, sigma_ps, t_xx_ps.size)

    out = np.empty(t_x_ps.size + t_xx_ps.size, dtype=RECORD_DTYPE)
    out["channel"][: t_x_ps.size] = CH_X
    out["channel"][t_x_ps.size:] = CH_XX
    out["basis_id"] = basis_id
    out["reserved"] = 0
    stamps = np.rint(np.concatenate([t_x_ps, t_xx_ps]) + t_offset_ps)
    out = out[stamps >= 0]
    out["t_ps"] = stamps[stamps >= 0].astype(np.int64).astype(np.uint64)
    return out


def _check_record_budget(qd, det, duration_s):
    expected = duration_s * (
        2.0 * qd.pair_rate_hz
        + 2.0 * (det.background_rate_x_hz + det.background_rate_xx_hz)
    )
    if expected >= MAX_RECORDS:
        raise ConfigError("configuration would exceed the record budget")


def simulate_pairs(
    qd: QDParams,
    det: DetectionConfig,
    mueller_x: Optional[MuellerRotation] = None,
    mueller_xx: Optional[MuellerRotation] = None,
    duration_s: float = 1.0,
    seed: int = 0,
    basis_id: int = 0,
    role: str = "single",
) -> TimeTagStream:
    """Simulate one fixed detection setting for duration_s seconds.

    The fiber rotations are applied to the analyzers, so the effective
    projection direction seen in the emitter frame is M . analyzer.
    Deterministic for a fixed seed.
    """
    entry = ScheduleEntry(basis_id, role, det.analyzer_x, det.analyzer_xx, duration_s)
    return simulate_run(qd, det, [entry], mueller_x, mueller_xx, duration_s, seed)


def simulate_run(
    qd: QDParams,
    det_template: DetectionConfig,
    schedule: Sequence[ScheduleEntry],
    mueller_x: Optional[MuellerRotation] = None,
    mueller_xx: Optional[MuellerRotation] = None,
    duration_s: float = 1.0,
    seed: int = 0,
    drift_per_segment: Optional[Sequence[MuellerRotation]] = None,
) -> TimeTagStream:
    """Cycle through a basis schedule and merge the segment streams.

    Each segment gets an independent child seed, so the output is
    deterministic and segments could be generated in any order.
    drift_per_segment, when given, left-composes an extra rotation onto
    the biexciton-arm fiber for each segment.
    """
    if duration_s <= 0:
        raise ConfigError("duration_s must be positive")
    _check_record_budget(qd, det_template, duration_s)
    mx = (mueller_x or MuellerRotation.identity()).matrix
    mxx = (mueller_xx or MuellerRotation.identity()).matrix
    segments = schedule_segments(schedule, duration_s)
    if drift_per_segment is not None and len(drift_per_segment) < len(segments):
        raise ConfigError("drift_per_segment shorter than the segment table")
    children = np.random.SeedSequence(seed).spawn(len(segments))
    parts = []
    for i, (entry, start_s, dwell) in enumerate(segments):
        rng = np.random.default_rng(children[i])
        seg_mxx = mxx if drift_per_segment is None else (
            drift_per_segment[i].matrix @ mxx
        )
        det = replace(
            det_template, analyzer_x=entry.analyzer_x, analyzer_xx=entry.analyzer_xx
        )
        ax_eff = mx @ entry.analyzer_x.as_array()
        axx_eff = seg_mxx @ entry.analyzer_xx.as_array()
        parts.append(
            _simulate_segment(
                qd, det, ax_eff, axx_eff, dwell, rng, entry.basis_id, start_s * 1e12
            )
        )
    records = np.concatenate(parts) if parts else np.empty(0, dtype=RECORD_DTYPE)
    records = records[np.argsort(records["t_ps"], kind="stable")]
    header = StreamHeader(
        schedule=tuple(schedule), qd=qd, seed=seed, duration_s=duration_s
    )
    return TimeTagStream(header=header, records=records)
