"""Detection-basis calibration from time-resolved pair correlations.

Correlation measurements in a handful of known reference settings are fit
against the beating cascade model, which recovers where each reference
state lands in the emitter eigenframe. A proper rotation mapping the
reference triple onto the fitted triple is then reconstructed, and its
inverse generates compensation states that align the detection system
with the emitter.

Each per-basis fit determines its orientation only up to a four-fold
branch ambiguity (theta mirrors through the equator, phi shifts by pi,
and the combination), because the fitted curve depends on theta only
through sin^2 and on phi only through 2 phi. Branches are resolved
globally by enumerating all combinations and keeping the one whose
induced reference-to-measured map is closest to a proper rotation.

Two limits of that resolution are inherent to the measurement, not to
this implementation:

* A global flip of the equatorial components (phi -> phi + pi in every
  basis) survives exactly. It corresponds to a half-turn of the
  eigenframe about its own polar axis, relabelling D with A and R with L
  simultaneously; no pair-correlation observable distinguishes the two,
  and compensation built from either rotation yields identical
  correlation and fidelity measurements. Callers comparing against a
  known rotation should therefore compare modulo this flip
  (rotation_distance_mod_flip).
* Mutually orthogonal reference states (for example H, D, R) make whole
  sign flips of individual fitted vectors rotation-consistent as well,
  leaving additional half-turn impostors that DO change downstream
  results. The default reference triple is therefore non-orthogonal
  (pairwise overlaps of 60 degrees on the sphere); orthogonal triples are
  accepted but flagged.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import lsq
from .cascade import HBAR_UEV_NS, PLANCK_UEV_PS
from .coincidence import CoincidenceHistogram
from .errors import BinningMismatchError, CalibrationError, ConfigError
from .polmath import D, H, MuellerRotation, R, StokesVector

# Non-orthogonal reference triple: pairwise dot products 1/2, determinant
# 1/sqrt(2). Realizable as one linear, one diagonal-ish linear and one
# elliptical analyzer setting.
DEFAULT_REFS: Tuple[StokesVector, ...] = (
    StokesVector(1.0, 0.0, 0.0),
    StokesVector(0.5, math.sqrt(3.0) / 2.0, 0.0),
    StokesVector(0.5, math.sqrt(3.0) / 6.0, math.sqrt(6.0) / 3.0),
)
DEFAULT_REF_LABELS = ("B1", "B2", "B3")

# Equatorial-flip gauge: half turn about the eigenframe polar axis.
_GAUGE_FLIP = np.diag([1.0, -1.0, -1.0])

_PHI_IDENTIFIABLE_MIN_SIN2 = 0.02


@dataclass
class BasisFit:
    """Fitted orientation of one reference state in the emitter frame."""

    label: str
    s_r: Optional[StokesVector]
    theta_rad: float
    phi_rad: float
    delta_uev: float
    tau_ns: float
    amplitude: float
    covariance: Optional[np.ndarray]
    residual_norm: float
    converged: bool
    phi_identifiable: bool
    n_beat_periods: float

    def __post_init__(self):
        if self.delta_uev <= 0 or self.tau_ns <= 0:
            raise CalibrationError("fitted delta and tau must be positive")
        if not 0.0 <= self.theta_rad <= math.pi:
            raise CalibrationError("theta must lie in [0, pi]")

    def s_m_candidates(self) -> List[StokesVector]:
        """The four branch-equivalent measured vectors, in tie-break order.

        Order: as fitted, phi + pi, theta mirrored, both.
        """
        s1 = math.cos(self.theta_rad)
        st = math.sin(self.theta_rad)
        s2 = st * math.cos(self.phi_rad)
        s3 = st * math.sin(self.phi_rad)
        vecs = [(s1, s2, s3), (s1, -s2, -s3), (-s1, s2, s3), (-s1, -s2, -s3)]
        return [StokesVector.normalized(*v) for v in vecs]

    def delta_variance(self) -> float:
        if self.covariance is None:
            return math.inf
        var = float(self.covariance[3, 3])
        return var if var > 0 and math.isfinite(var) else math.inf


def normalized_difference(
    co: CoincidenceHistogram, cross: CoincidenceHistogram
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-bin co-minus-cross counts on the positive-delay side.

    Returns (t_ps, difference, sigma) with sigma the Poisson uncertainty
    sqrt(co + cross), floored at one count for empty bins. The overall
    normalization is left to the fit.
    """
    if not co.same_binning(cross):
        raise BinningMismatchError("co and cross histograms must share binning")
    centers = co.bin_centers_ps
    edges_left = co.t_min_ps + np.arange(co.n_bins) * co.bin_width_ps
    keep = edges_left >= 0
    d = (co.counts - cross.counts).astype(float)[keep]
    sigma = np.sqrt((co.counts + cross.counts).astype(float)[keep])
    return centers[keep], d, np.maximum(sigma, 1.0)


def _difference_model(params, t_ps):
    amp, theta, phi, delta_uev, tau_ns = params
    beat = np.cos(delta_uev * t_ps / (HBAR_UEV_NS * 1e3) - 2.0 * phi)
    contrast = 1.0 - np.sin(theta) ** 2 * (1.0 - beat)
    return amp * contrast * np.exp(-t_ps / (tau_ns * 1e3))


def _linear_difference_model(params, t_ps):
    """Same curve with degeneracy-free coefficients.

    (c0, ca, cb, delta, tau) with c0 = A (1 - sin^2 theta),
    ca = A sin^2 theta cos 2 phi, cb = A sin^2 theta sin 2 phi. The three
    amplitudes enter linearly, so the Jacobian stays well conditioned at
    the equator and poles where the angle parametrization degenerates.
    """
    c0, ca, cb, delta_uev, tau_ns = params
    ph = delta_uev * t_ps / (HBAR_UEV_NS * 1e3)
    return (c0 + ca * np.cos(ph) + cb * np.sin(ph)) * np.exp(-t_ps / (tau_ns * 1e3))


def _frequency_scan(t, d, sigma, tau_ps, envelope_correction, delta_max_uev=40.0):
    """Best beat frequency for a fixed envelope timescale.

    Solves the linear amplitudes on a frequency grid finer than the
    Fourier resolution of the span. With envelope_correction an extra
    column absorbs first-order error in tau_ps, so a slightly wrong
    envelope cannot outbid a weak beat.
    """
    span = float(t[-1] - t[0])
    env = np.exp(-np.minimum(t / tau_ps, 700.0))
    base = [env, env * (t / span)] if envelope_correction else [env]
    step = 0.35 * PLANCK_UEV_PS / max(span, 1.0)
    best = None
    for delta_try in np.arange(max(step, 0.05), delta_max_uev, step):
        ph = delta_try * t / (HBAR_UEV_NS * 1e3)
        basis = np.column_stack(base + [env * np.cos(ph), env * np.sin(ph)])
        bw = basis / sigma[:, None]
        coef, *_ = np.linalg.lstsq(bw, d / sigma, rcond=None)
        cost = float(np.sum((d / sigma - bw @ coef) ** 2))
        if best is None or cost < best[0]:
            best = (cost, delta_try, coef)
    cost, delta0, coef = best
    return cost, delta0, (max(float(coef[0]), 0.0), float(coef[-2]), float(coef[-1]))


def _envelope_tau_ps(t, d, sigma, tau0_ps):
    """Timescale of a single-exponential fit through the difference series."""
    def model(p, x):
        return p[0] * np.exp(-np.minimum(x / p[1], 700.0))

    amp0 = max(float(np.max(np.abs(d))), 1e-12)
    try:
        res = lsq.lm_fit(
            lsq.FitProblem(
                model=model,
                x=t,
                y=d,
                p0=np.array([amp0, tau0_ps]),
                weights=1.0 / sigma**2,
                lower=np.array([0.0, 1.0]),
                upper=np.array([np.inf, 1e8]),
                max_iter=100,
            )
        )
        return float(res.params[1])
    except lsq.FitFailureError:
        return tau0_ps


def fit_basis_orientation(
    t_ps: np.ndarray,
    d: np.ndarray,
    sigma: np.ndarray,
    init: Optional[Sequence[float]] = None,
    label: str = "",
    s_r: Optional[StokesVector] = None,
    min_beat_periods: float = 2.0,
) -> BasisFit:
    """Fit the beating-difference model to one basis' series.

    Internally the curve is fit with linear amplitude coefficients plus
    (delta, tau); see _linear_difference_model. Without an explicit init
    in (amplitude, theta, phi, delta_uev, tau_ns) form, two starting
    strategies are tried (a joint envelope/frequency grid and an
    envelope-first fit) followed by polish restarts, which keeps the fit
    out of low-frequency local minima even when the beat amplitude is a
    fraction of a percent. The result reports theta in [0, pi/2] and phi
    in [0, 2 pi); the caller resolves the remaining branch ambiguity.
    When the beat amplitude is statistically consistent with zero, phi is
    flagged unidentifiable.
    """
    t_ps = np.asarray(t_ps, dtype=float)
    d = np.asarray(d, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if t_ps.size < 8:
        raise ConfigError("too few bins to fit a basis orientation")
    span = float(t_ps[-1] - t_ps[0])

    def refine(p0):
        problem = lsq.FitProblem(
            model=_linear_difference_model,
            x=t_ps,
            y=d,
            p0=np.asarray(p0, dtype=float),
            weights=1.0 / sigma**2,
            lower=np.array([0.0, -np.inf, -np.inf, 1e-4, 1e-3]),
            upper=np.array([np.inf, np.inf, np.inf, 1e4, 1e4]),
            gtol=1e-13,
            xtol=1e-15,
            ftol=1e-15,
            max_iter=400,
        )
        return lsq.lm_fit(problem)

    if init is not None:
        amp0, theta0, phi0, delta0, tau0 = [float(v) for v in init]
        k0 = math.sin(theta0) ** 2
        p0 = [
            amp0 * (1.0 - k0),
            amp0 * k0 * math.cos(2.0 * phi0),
            amp0 * k0 * math.sin(2.0 * phi0),
            delta0,
            tau0,
        ]
        result = refine(p0)
    else:
        starts = []
        for tau_ps in np.exp(np.linspace(math.log(span / 30.0),
                                         math.log(span * 1.5), 8)):
            cost, delta0, (c0, ca, cb) = _frequency_scan(
                t_ps, d, sigma, tau_ps, envelope_correction=True
            )
            starts.append((cost, [c0, ca, cb, delta0, tau_ps / 1e3]))
        starts.sort(key=lambda s: s[0])
        result = refine(starts[0][1])
        tau_env_ps = _envelope_tau_ps(t_ps, d, sigma, span / 3.0)
        _, delta0, (c0, ca, cb) = _frequency_scan(
            t_ps, d, sigma, tau_env_ps, envelope_correction=False
        )
        alt = refine([c0, ca, cb, delta0, tau_env_ps / 1e3])
        if alt.cost < result.cost:
            result = alt
        for _ in range(2):
            tau_ps = float(result.params[4]) * 1e3
            _, delta0, (c0, ca, cb) = _frequency_scan(
                t_ps, d, sigma, tau_ps, envelope_correction=False
            )
            again = refine([c0, ca, cb, delta0, tau_ps / 1e3])
            if again.cost < result.cost * (1.0 - 1e-12):
                result = again
            else:
                break

    c0, ca, cb, delta, tau = result.params
    osc = math.hypot(ca, cb)
    amp = c0 + osc
    if amp <= 0:
        raise CalibrationError("difference series carries no signal")
    sin2 = min(osc / amp, 1.0)
    theta = math.asin(math.sqrt(sin2))

    # The azimuth is meaningful only if the beat amplitude is resolved.
    phi_ok = sin2 > 1e-12
    if result.covariance is not None and osc > 0:
        ja, jb = ca / osc, cb / osc
        cov = result.covariance
        var_osc = (
            ja * ja * cov[1, 1] + jb * jb * cov[2, 2] + 2.0 * ja * jb * cov[1, 2]
        )
        if var_osc > 0:
            phi_ok = phi_ok and osc > 3.0 * math.sqrt(var_osc)
    else:
        phi_ok = sin2 >= _PHI_IDENTIFIABLE_MIN_SIN2
    phi = (0.5 * math.atan2(cb, ca)) % (2.0 * math.pi) if phi_ok else 0.0
    span_periods = span * delta / PLANCK_UEV_PS
    return BasisFit(
        label=label,
        s_r=s_r,
        theta_rad=theta,
        phi_rad=phi,
        delta_uev=float(delta),
        tau_ns=float(tau),
        amplitude=float(amp),
        covariance=result.covariance,
        residual_norm=result.residual_norm,
        converged=result.converged,
        phi_identifiable=phi_ok,
        n_beat_periods=float(span_periods),
    )


def _kabsch(refs: np.ndarray, meas: np.ndarray) -> Tuple[np.ndarray, float]:
    """Best proper rotation mapping ref rows onto measured rows."""
    h = meas.T @ refs
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, sign]) @ vt
    resid = float(np.linalg.norm(refs @ rot.T - meas))
    return rot, resid


@dataclass
class ResolveResult:
    s_m: Tuple[StokesVector, StokesVector, StokesVector]
    rotation: MuellerRotation
    branches: Tuple[int, int, int]
    residual: float
    n_ties: int
    tied_branches: List[Tuple[int, int, int]]


def resolve_ambiguities(
    fits: Sequence[BasisFit],
    refs: Optional[Sequence[StokesVector]] = None,
    prior: Optional[MuellerRotation] = None,
    tol: float = 0.35,
) -> ResolveResult:
    """Pick the branch combination most consistent with a proper rotation.

    All 4^3 branch combinations are scored by the residual of the best
    proper rotation mapping the references onto the candidate vectors.
    Ties within numerical noise are broken toward a given prior rotation
    when available, otherwise deterministically by branch order. A best
    residual above tol means no combination is rotation-consistent.
    """
    if len(fits) != 3:
        raise CalibrationError("exactly three basis fits are required")
    if refs is None:
        refs = [f.s_r for f in fits]
    if any(r is None for r in refs):
        raise CalibrationError("reference states are required")
    ref_mat = np.array([r.as_array() for r in refs])
    if abs(np.linalg.det(ref_mat)) < 1e-6:
        raise CalibrationError("reference states must be linearly independent")

    candidates = [f.s_m_candidates() for f in fits]
    scored = []
    for combo in itertools.product(range(4), repeat=3):
        meas = np.array(
            [candidates[i][c].as_array() for i, c in enumerate(combo)]
        )
        rot, resid = _kabsch(ref_mat, meas)
        scored.append((resid, combo, rot, meas))
    scored.sort(key=lambda s: (s[0], s[1]))
    best_resid = scored[0][0]
    if best_resid > tol:
        raise CalibrationError(
            f"no branch combination is rotation-consistent "
            f"(best residual {best_resid:.3g} exceeds {tol:.3g})"
        )
    tie_eps = max(1e-7, best_resid * 0.25)
    ties = [s for s in scored if s[0] <= best_resid + tie_eps]
    chosen = ties[0]
    if prior is not None and len(ties) > 1:
        chosen = min(
            ties, key=lambda s: MuellerRotation(s[2]).angle_to(prior)
        )
    resid, combo, rot, meas = chosen
    return ResolveResult(
        s_m=tuple(StokesVector.from_array(m / np.linalg.norm(m)) for m in meas),
        rotation=MuellerRotation(rot),
        branches=combo,
        residual=resid,
        n_ties=len(ties),
        tied_branches=[s[1] for s in ties],
    )


def reconstruct_mueller(
    pairs: Sequence[Tuple[StokesVector, StokesVector]]
) -> MuellerRotation:
    """Least-squares proper rotation sending each reference to its measurement."""
    refs = np.array([p[0].as_array() for p in pairs])
    meas = np.array([p[1].as_array() for p in pairs])
    if refs.shape[0] < 3 or abs(np.linalg.det(refs)) < 1e-6:
        raise CalibrationError("need three linearly independent reference states")
    rot, _ = _kabsch(refs, meas)
    return MuellerRotation(rot)


def reference_states(
    m: MuellerRotation, eigen: Sequence[StokesVector]
) -> List[StokesVector]:
    """Compensation settings: the inverse rotation applied to each eigenstate.

    Applying m to any returned state reproduces the corresponding
    eigenstate, so analyzers set to these states probe the emitter along
    its own axes.
    """
    inv = m.matrix.T
    return [StokesVector.from_array(inv @ e.as_array()) for e in eigen]


def rotation_distance_mod_flip(a: MuellerRotation, b: MuellerRotation) -> float:
    """Geodesic distance on SO(3) modulo the unobservable equatorial flip."""
    flipped = MuellerRotation(_GAUGE_FLIP @ b.matrix)
    return min(a.angle_to(b), a.angle_to(flipped))


def consensus_delta(fits: Sequence[BasisFit]) -> Tuple[float, float, float]:
    """Inverse-variance weighted splitting and a chi-square consistency value."""
    deltas = np.array([f.delta_uev for f in fits])
    variances = np.array([f.delta_variance() for f in fits])
    finite = np.all(np.isfinite(variances))
    w = 1.0 / variances if finite else np.ones_like(deltas)
    mean = float(np.sum(w * deltas) / np.sum(w))
    if finite:
        err = float(1.0 / math.sqrt(np.sum(w)))
    else:
        err = float(np.std(deltas) / math.sqrt(len(fits)))
    chi2 = float(np.sum(w * (deltas - mean) ** 2))
    return mean, err, chi2


@dataclass
class CalibrationResult:
    mueller: MuellerRotation
    basis_fits: List[BasisFit]
    s_m: Tuple[StokesVector, ...]
    delta_uev: float
    delta_uev_err: float
    delta_chi2: float
    tau_ns: float
    residual: float
    branches: Tuple[int, int, int]
    n_ties: int
    reference_states: dict
    warnings: List[str]


def calibrate(
    basis_data: Sequence[Tuple[str, StokesVector, CoincidenceHistogram,
                               CoincidenceHistogram]],
    prior: Optional[MuellerRotation] = None,
    skip_bins_after_peak: int = 1,
    eigen_labels: Tuple[str, ...] = ("H", "D", "R"),
) -> CalibrationResult:
    """Run the full calibration from three (label, ref, co, cross) triples.

    The fit window starts skip_bins_after_peak bins after the coincidence
    peak of each basis to keep jitter-dominated bins out of the fit.
    """
    if len(basis_data) != 3:
        raise CalibrationError("calibration expects exactly three reference bases")
    eigen_map = {"H": H, "D": D, "R": R}
    warnings: List[str] = []
    fits = []
    for label, s_r, co, cross in basis_data:
        t, d, sigma = normalized_difference(co, cross)
        total = co.counts + cross.counts
        edges_left = co.t_min_ps + np.arange(co.n_bins) * co.bin_width_ps
        pos = edges_left >= 0
        peak = int(np.argmax(total[pos]))
        start = peak + max(int(skip_bins_after_peak), 0) + 1
        if t.size - start < 16:
            start = max(t.size - 16, 0)
        fit = fit_basis_orientation(
            t[start:], d[start:], sigma[start:], label=label, s_r=s_r
        )
        if fit.n_beat_periods < 2.0 and fit.phi_identifiable:
            warnings.append(
                f"basis {label}: only {fit.n_beat_periods:.2f} beat periods of data"
            )
        if not fit.converged:
            warnings.append(f"basis {label}: fit did not fully converge")
        fits.append(fit)

    refs = [f.s_r for f in fits]
    dots = [abs(refs[i].dot(refs[j])) for i in range(3) for j in range(i + 1, 3)]
    if min(dots) < 0.05:
        warnings.append(
            "reference states are nearly orthogonal; the rotation is only "
            "determined up to axis half-turns, prefer a non-orthogonal triple"
        )
    resolved = resolve_ambiguities(fits, refs=refs, prior=prior)
    mueller = reconstruct_mueller(list(zip(refs, resolved.s_m)))
    delta, delta_err, chi2 = consensus_delta(fits)
    tau = float(np.mean([f.tau_ns for f in fits]))
    comp = reference_states(mueller, [eigen_map[l] for l in eigen_labels])
    return CalibrationResult(
        mueller=mueller,
        basis_fits=fits,
        s_m=resolved.s_m,
        delta_uev=delta,
        delta_uev_err=delta_err,
        delta_chi2=chi2,
        tau_ns=tau,
        residual=resolved.residual,
        branches=resolved.branches,
        n_ties=resolved.n_ties,
        reference_states=dict(zip(eigen_labels, comp)),
        warnings=warnings,
    )
