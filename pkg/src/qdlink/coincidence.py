"""Coincidence histograms, correlation coefficients, fidelity and g2 fits.

Delays are signed (t_b - t_a) and binned on an inclusive-left,
exclusive-right grid. Correlation contrasts are computed from raw co- and
cross-polarized counts with no background subtraction, matching how the
deployed system is analyzed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import lsq
from .cascade import CH_X, CH_XX, TimeTagStream
from .errors import (
    BinningMismatchError,
    ConfigError,
    UndefinedCoefficientError,
)

STANDARD_ROLES = ("hv_co", "hv_cross", "da_co", "da_cross", "rl_co", "rl_cross")

_MAX_PAIRS = 500_000_000


@dataclass(eq=False)
class CoincidenceHistogram:
    """Binned coincidence delays between two channels."""

    bin_width_ps: int
    t_min_ps: int
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise ConfigError("bin_width_ps must be positive")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise ConfigError("counts must be nonnegative")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def bin_centers_ps(self) -> np.ndarray:
        return self.t_min_ps + (np.arange(self.n_bins) + 0.5) * self.bin_width_ps

    def same_binning(self, other: "CoincidenceHistogram") -> bool:
        return (
            self.bin_width_ps == other.bin_width_ps
            and self.t_min_ps == other.t_min_ps
            and self.n_bins == other.n_bins
        )


def _pair_delays(ta: np.ndarray, tb: np.ndarray, range_ps: int, same: bool):
    """All signed delays tb[j] - ta[i] in [-range, +range); self-pairs excluded."""
    lo = np.searchsorted(tb, ta - range_ps, side="left")
    hi = np.searchsorted(tb, ta + range_ps, side="left")
    per = hi - lo
    total = int(per.sum())
    if total > _MAX_PAIRS:
        raise ConfigError("histogram would enumerate too many pairs")
    i = np.repeat(np.arange(ta.size), per)
    starts = np.concatenate([[0], np.cumsum(per)[:-1]])
    j = np.arange(total) - np.repeat(starts, per) + np.repeat(lo, per)
    if same:
        keep = i != j
        i, j = i[keep], j[keep]
    return tb[j] - ta[i]


def build_histogram(
    stream: TimeTagStream,
    ch_a: int,
    ch_b: int,
    bin_width_ps: int,
    range_ps: int,
    basis_ids=None,
    meta: Optional[dict] = None,
) -> CoincidenceHistogram:
    """Start-stop cross-correlation of two channels of a time-tag stream.

    Counts every ordered pair whose delay falls in [-range_ps, range_ps);
    for ch_a == ch_b this is the autocorrelation with self-pairs removed.
    An empty selection produces an all-zero histogram.
    """
    bin_width_ps = int(bin_width_ps)
    range_ps = int(range_ps)
    if range_ps <= 0 or range_ps % bin_width_ps != 0:
        raise BinningMismatchError("bin width must divide the delay range")
    ta = stream.channel_times(ch_a, basis_ids)
    tb = stream.channel_times(ch_b, basis_ids)
    n_bins = 2 * range_ps // bin_width_ps
    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size and tb.size:
        delays = _pair_delays(ta, tb, range_ps, same=(ch_a == ch_b))
        idx = (delays + range_ps) // bin_width_ps
        counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    full_meta = {
        "channel_a": ch_a,
        "channel_b": ch_b,
        "basis_ids": None if basis_ids is None else sorted(basis_ids),
        "n_a": int(ta.size),
        "n_b": int(tb.size),
    }
    if basis_ids is not None and stream.header.schedule:
        full_meta["acquisition_s"] = stream.basis_dwell_s(basis_ids)
    if meta:
        full_meta.update(meta)
    return CoincidenceHistogram(bin_width_ps, -range_ps, counts, full_meta)


def roles_to_basis_ids(stream: TimeTagStream) -> Dict[str, List[int]]:
    out: Dict[str, List[int]] = {}
    for entry in stream.header.schedule:
        out.setdefault(entry.role, []).append(entry.basis_id)
    return out


def standard_histograms(
    stream: TimeTagStream, bin_width_ps: int, range_ps: int
) -> Dict[str, CoincidenceHistogram]:
    """Six biexciton->exciton histograms keyed by the standard basis roles.

    The stream's schedule must label entries with the roles hv_co,
    hv_cross, da_co, da_cross, rl_co and rl_cross.
    """
    roles = roles_to_basis_ids(stream)
    missing = [r for r in STANDARD_ROLES if r not in roles]
    if missing:
        raise ConfigError(f"schedule is missing roles: {', '.join(missing)}")
    return {
        role: build_histogram(
            stream, CH_XX, CH_X, bin_width_ps, range_ps, basis_ids=roles[role],
            meta={"role": role},
        )
        for role in STANDARD_ROLES
    }


def correlation_coefficient(c_pp, c_pq) -> float:
    """Basis contrast (c_pp - c_pq) / (c_pp + c_pq)."""
    c_pp = float(c_pp)
    c_pq = float(c_pq)
    if c_pp < 0 or c_pq < 0:
        raise ConfigError("counts must be nonnegative")
    total = c_pp + c_pq
    if total <= 0:
        raise UndefinedCoefficientError("zero total counts")
    return (c_pp - c_pq) / total


def fidelity_from_coefficients(c_hv: float, c_da: float, c_rl: float) -> float:
    """Overlap with the maximally entangled target state."""
    return (1.0 + c_hv + c_da - c_rl) / 4.0


def qber_from_coefficients(c_hv: float, c_da: float, c_rl: float) -> float:
    """Mean error rate over the three measurement bases."""
    return (1.0 - (c_hv + c_da - c_rl) / 3.0) / 2.0


@dataclass(frozen=True)
class FidelityPoint:
    t_ps: float
    c_hv: float
    c_da: float
    c_rl: float
    fidelity: float
    qber: float


def _windowed(counts: np.ndarray, window_bins: int) -> np.ndarray:
    if window_bins == 1:
        return counts.astype(float)
    kernel = np.ones(window_bins)
    return np.convolve(counts.astype(float), kernel, mode="same")


def fidelity_timeseries(
    hists: Dict[str, CoincidenceHistogram], window_ps: int
) -> List[FidelityPoint]:
    """Per-delay-bin correlation coefficients, fidelity and error rate.

    Counts are integrated over a sliding window of window_ps centered on
    each bin. Bins where any basis has zero total counts in the window
    are skipped.
    """
    missing = [r for r in STANDARD_ROLES if r not in hists]
    if missing:
        raise ConfigError(f"missing histograms: {', '.join(missing)}")
    ref = hists["hv_co"]
    for role in STANDARD_ROLES:
        if not hists[role].same_binning(ref):
            raise BinningMismatchError(f"histogram {role} binning differs")
    if window_ps <= 0 or window_ps % ref.bin_width_ps != 0:
        raise BinningMismatchError("window must be a positive multiple of bin width")
    window_bins = window_ps // ref.bin_width_ps

    w = {role: _windowed(hists[role].counts, window_bins) for role in STANDARD_ROLES}
    centers = ref.bin_centers_ps
    points = []
    for k in range(ref.n_bins):
        totals = {
            b: w[f"{b}_co"][k] + w[f"{b}_cross"][k] for b in ("hv", "da", "rl")
        }
        if any(t <= 0 for t in totals.values()):
            continue
        c = {
            b: (w[f"{b}_co"][k] - w[f"{b}_cross"][k]) / totals[b]
            for b in ("hv", "da", "rl")
        }
        points.append(
            FidelityPoint(
                t_ps=float(centers[k]),
                c_hv=c["hv"],
                c_da=c["da"],
                c_rl=c["rl"],
                fidelity=fidelity_from_coefficients(c["hv"], c["da"], c["rl"]),
                qber=qber_from_coefficients(c["hv"], c["da"], c["rl"]),
            )
        )
    return points


def peak_fidelity(points: List[FidelityPoint]) -> FidelityPoint:
    if not points:
        raise ConfigError("no usable delay bins")
    return max(points, key=lambda p: p.fidelity)


@dataclass
class G2Result:
    """Autocorrelation dip fit: g2(0), background fraction and fit params."""

    g2_zero: float
    background_fraction: float
    dip_tau_ps: float
    amplitude: float
    t0_ps: float
    residual_norm: float
    converged: bool
    signal_fraction: float

    def __post_init__(self):
        if self.g2_zero < 0:
            raise ConfigError("g2_zero cannot be negative")
        if not 0.0 <= self.background_fraction <= 1.0:
            raise ConfigError("background_fraction must be in [0, 1]")


def _g2_model(source_g2: float, bin_width_ps: float, t0_ps: float):
    """Dip model averaged over each histogram bin.

    Counts are integrals over bins, so the exponential recovery is
    integrated across each bin too; evaluating at bin centers instead
    biases the extrapolated dip minimum whenever the kink falls inside a
    bin.
    """

    def signed_integral(x, tau):
        return np.sign(x) * tau * (1.0 - np.exp(-np.abs(x) / tau))

    def model(params, t):
        amp, rho, tau = params
        depth = rho * rho * (1.0 - source_g2)
        a = t - t0_ps - 0.5 * bin_width_ps
        b = t - t0_ps + 0.5 * bin_width_ps
        avg = (signed_integral(b, tau) - signed_integral(a, tau)) / bin_width_ps
        return amp * (1.0 - depth * avg)

    return model


def fit_g2(
    hist: CoincidenceHistogram,
    source_g2: float = 0.0,
    t0_ps: float = 0.0,
    init: Optional[dict] = None,
) -> G2Result:
    """Fit the antibunching dip of an autocorrelation histogram.

    The measured correlation is modelled as a perfect-signal dip diluted
    by uncorrelated background: g2_meas(t) = 1 - rho^2 (1 - g2_src(t))
    with g2_src(t) = 1 - (1 - source_g2) exp(-|t - t0| / tau). rho is the
    signal fraction of the detected rate. source_g2 is held fixed because
    only rho^2 (1 - source_g2) is identifiable from a single histogram,
    and the dip position t0 is an input (zero delay is defined by the
    channel pairing, and letting it float would chase noise on featureless
    histograms). Weights are iterated once so the Poisson variance comes
    from the model rather than the noisy counts.
    """
    t = hist.bin_centers_ps.astype(float)
    y = hist.counts.astype(float)
    if y.sum() <= 0:
        raise ConfigError("empty histogram")
    n_edge = max(hist.n_bins // 10, 2)
    amp0 = float(np.mean(np.concatenate([y[:n_edge], y[-n_edge:]])))
    amp0 = max(amp0, 1.0)
    init = init or {}
    k0 = int(np.argmin(np.abs(t - t0_ps)))
    dip = max(0.0, 1.0 - float(y[k0]) / amp0)
    p0 = np.array(
        [
            init.get("amplitude", amp0),
            init.get("rho", math.sqrt(min(max(dip, 1e-3), 1.0 - 1e-6))),
            init.get("dip_tau_ps", (t[-1] - t[0]) / 10.0),
        ]
    )
    model = _g2_model(source_g2, float(hist.bin_width_ps), float(t0_ps))
    lower = np.array([0.0, 0.0, hist.bin_width_ps * 0.5])
    upper = np.array([np.inf, 1.0, (t[-1] - t[0]) * 100.0])
    weights = lsq.poisson_weights(y)
    result = None
    for _ in range(2):
        result = lsq.lm_fit(
            lsq.FitProblem(
                model=model, x=t, y=y, p0=p0, weights=weights,
                lower=lower, upper=upper,
            )
        )
        weights = lsq.poisson_weights(model(result.params, t))
        p0 = result.params
    amp, rho, tau = result.params
    depth = rho * rho * (1.0 - source_g2)
    return G2Result(
        g2_zero=1.0 - depth,
        background_fraction=1.0 - rho,
        dip_tau_ps=float(tau),
        amplitude=float(amp),
        t0_ps=float(t0_ps),
        residual_norm=result.residual_norm,
        converged=result.converged,
        signal_fraction=float(rho),
    )
