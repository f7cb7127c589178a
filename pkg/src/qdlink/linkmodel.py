"""Parametric models of the deployed fiber link.

Covers the loss budget, the static fiber rotation and an optional slow
drift, the classical-channel crosstalk background, electric-field tuning
of the emission wavelength and splitting, and assignment to the coarse
WDM grid (ITU G.694.2, 18 channels from 1271 nm to 1611 nm on a 20 nm
pitch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import lsq
from .errors import ConfigError, GridRangeError, StarkRangeError
from .polmath import MuellerRotation

HC_UEV_NM = 1.2398419843320026e9 / 1e3  # h*c in ueV nm

CWDM_CENTERS_NM: Tuple[int, ...] = tuple(range(1271, 1612, 20))
_GRID_MARGIN_NM = 10.0


def db_to_efficiency(loss_db: float) -> float:
    if loss_db < 0:
        raise ConfigError("loss must be nonnegative")
    return 10.0 ** (-loss_db / 10.0)


def efficiency_to_db(efficiency: float) -> float:
    if not 0.0 < efficiency <= 1.0:
        raise ConfigError("efficiency must be in (0, 1]")
    return -10.0 * math.log10(efficiency)


def crosstalk_background(
    launch_power_uw: float, isolation_db: float, counts_per_uw_hz: float
) -> float:
    """Detected background rate leaking from the classical channel.

    Linear in launch power, suppressed by the filter isolation; the
    proportionality constant absorbs detector efficiency and spectral
    overlap and is supplied by the user.
    """
    if launch_power_uw < 0 or counts_per_uw_hz < 0:
        raise ConfigError("power and proportionality must be nonnegative")
    return counts_per_uw_hz * launch_power_uw * db_to_efficiency(isolation_db)


@dataclass(frozen=True)
class LinkConfig:
    """Deployed-fiber parameters for one transmission arm."""

    length_km: float = 15.0
    loss_db: float = 11.8
    mueller: MuellerRotation = field(default_factory=MuellerRotation.identity)
    drift_rate_deg_per_hr: float = 0.0
    launch_power_uw: float = 0.0
    isolation_db: float = 0.0
    background_rate_hz: float = 0.0

    def __post_init__(self):
        if self.loss_db < 0 or self.length_km < 0:
            raise ConfigError("length and loss must be nonnegative")
        if self.launch_power_uw < 0 or self.background_rate_hz < 0:
            raise ConfigError("powers and rates must be nonnegative")

    @property
    def efficiency(self) -> float:
        return db_to_efficiency(self.loss_db)


def drift_walk(
    rate_deg_per_hr: float,
    duration_hr: float,
    n_steps: int,
    rng: np.random.Generator,
) -> list:
    """Random-walk rotation drift sampled at n_steps points.

    Each step composes a rotation about a random axis with angle drawn
    from a zero-mean normal whose standard deviation scales with the
    drift rate and the step duration. A zero rate returns identities.
    """
    if n_steps <= 0:
        raise ConfigError("n_steps must be positive")
    out = []
    current = MuellerRotation.identity()
    step_hr = duration_hr / n_steps
    sigma_rad = math.radians(rate_deg_per_hr) * step_hr
    for _ in range(n_steps):
        if sigma_rad > 0:
            axis = rng.normal(size=3)
            angle = rng.normal(0.0, sigma_rad)
            current = MuellerRotation.from_axis_angle(axis, angle).compose(current)
        out.append(current)
    return out


@dataclass(frozen=True)
class StarkParams:
    """Quadratic field-tuning model, valid over [v_min, v_max] only.

    Transition energy: E(V) = e0 - dipole * V - polarizability * V^2.
    Splitting: fss(V) = sqrt(fss_min^2 + fss_slope^2 (V - fss_v0)^2), the
    avoided-crossing form, never below fss_min.
    """

    e0_uev: float
    dipole_uev_per_v: float
    polarizability_uev_per_v2: float
    fss_min_uev: float
    fss_slope_uev_per_v: float
    fss_v0_v: float
    v_min: float = -3.8
    v_max: float = 0.0

    def __post_init__(self):
        if self.v_min >= self.v_max:
            raise ConfigError("v_min must be below v_max")
        if self.fss_min_uev < 0:
            raise ConfigError("fss_min_uev must be nonnegative")
        if self.e0_uev <= 0:
            raise ConfigError("e0_uev must be positive")

    def energy_uev(self, v: float) -> float:
        return (
            self.e0_uev
            - self.dipole_uev_per_v * v
            - self.polarizability_uev_per_v2 * v * v
        )

    def in_range(self, v: float) -> bool:
        return self.v_min - 1e-9 <= v <= self.v_max + 1e-9


def stark_shift(
    v: float, params: StarkParams, allow_extrapolation: bool = False
) -> float:
    """Emission wavelength in nm at bias v volts."""
    if not params.in_range(v) and not allow_extrapolation:
        raise StarkRangeError(
            f"bias {v} V outside calibrated range "
            f"[{params.v_min}, {params.v_max}] V"
        )
    e = params.energy_uev(v)
    if e <= 0:
        raise StarkRangeError("model energy is non-positive at this bias")
    return HC_UEV_NM / e


def fss_vs_bias(
    v: float, params: StarkParams, allow_extrapolation: bool = False
) -> float:
    """Fine-structure splitting in ueV at bias v volts."""
    if not params.in_range(v) and not allow_extrapolation:
        raise StarkRangeError(
            f"bias {v} V outside calibrated range "
            f"[{params.v_min}, {params.v_max}] V"
        )
    return math.hypot(
        params.fss_min_uev, params.fss_slope_uev_per_v * (v - params.fss_v0_v)
    )


@dataclass(frozen=True)
class CwdmChannel:
    center_nm: int
    index: int


def nearest_cwdm_channel(lambda_nm: float) -> CwdmChannel:
    """Nearest coarse-WDM grid center; exact ties round to the lower channel."""
    lo = CWDM_CENTERS_NM[0] - _GRID_MARGIN_NM
    hi = CWDM_CENTERS_NM[-1] + _GRID_MARGIN_NM
    if not lo <= lambda_nm <= hi:
        raise GridRangeError(
            f"{lambda_nm} nm outside the CWDM grid ({lo:.0f}-{hi:.0f} nm)"
        )
    k = math.ceil((lambda_nm - CWDM_CENTERS_NM[0] - _GRID_MARGIN_NM) / 20.0)
    k = min(max(k, 0), len(CWDM_CENTERS_NM) - 1)
    return CwdmChannel(center_nm=CWDM_CENTERS_NM[k], index=k)


def _energy_model(params, v):
    e0, p, beta = params
    return e0 - p * v - beta * v * v


def _fss_model(params, v):
    s_min, slope, v0 = params
    return np.sqrt(s_min**2 + (slope * (v - v0)) ** 2)


def fit_stark_params(
    bias_v: Sequence[float],
    lambda_nm: Sequence[float],
    fss_uev: Sequence[float],
    v_range: Optional[Tuple[float, float]] = None,
) -> StarkParams:
    """Fit the quadratic energy model and the splitting model to data rows."""
    v = np.asarray(bias_v, dtype=float)
    lam = np.asarray(lambda_nm, dtype=float)
    fss = np.asarray(fss_uev, dtype=float)
    if v.size < 4:
        raise ConfigError("need at least four bias points to fit the Stark model")
    energies = HC_UEV_NM / lam
    quad = np.polyfit(v, energies, 2)  # initial guess from plain polynomial
    p0_energy = np.array([quad[2], -quad[1], -quad[0]])
    e_fit = lsq.lm_fit(
        lsq.FitProblem(model=_energy_model, x=v, y=energies, p0=p0_energy)
    )
    slope0 = (fss.max() - fss.min()) / max(np.ptp(v) / 2.0, 1e-6)
    p0_fss = np.array([max(fss.min(), 1e-3), max(slope0, 1e-3), v[np.argmin(fss)]])
    fss_fit = lsq.lm_fit(
        lsq.FitProblem(
            model=_fss_model,
            x=v,
            y=fss,
            p0=p0_fss,
            lower=np.array([0.0, 0.0, v.min() - 10.0]),
            upper=np.array([fss.max() * 2.0 + 1.0, np.inf, v.max() + 10.0]),
        )
    )
    lo, hi = v_range if v_range is not None else (float(v.min()), float(v.max()))
    return StarkParams(
        e0_uev=float(e_fit.params[0]),
        dipole_uev_per_v=float(e_fit.params[1]),
        polarizability_uev_per_v2=float(e_fit.params[2]),
        fss_min_uev=float(fss_fit.params[0]),
        fss_slope_uev_per_v=float(fss_fit.params[1]),
        fss_v0_v=float(fss_fit.params[2]),
        v_min=lo,
        v_max=hi,
    )


@dataclass(frozen=True)
class TunePlan:
    feasible: bool
    target_nm: float
    fss_limit_uev: float
    bias_v: Optional[float] = None
    achieved_nm: Optional[float] = None
    fss_uev: Optional[float] = None
    reason: Optional[str] = None


def tune_plan(
    params: StarkParams,
    target_nm: float,
    fss_limit_uev: float,
    tol_nm: float = 0.01,
) -> TunePlan:
    """Find a bias that reaches target_nm without violating the FSS limit.

    Bisects the calibrated bias range; reports structured infeasibility
    when the target lies outside the tuning range or the solution bias
    would exceed the splitting limit. Never returns a silent violation.
    """
    grid = np.linspace(params.v_min, params.v_max, 257)
    lams = np.array([stark_shift(float(g), params) for g in grid])
    lo, hi = float(lams.min()), float(lams.max())
    if not lo - tol_nm <= target_nm <= hi + tol_nm:
        return TunePlan(
            feasible=False,
            target_nm=target_nm,
            fss_limit_uev=fss_limit_uev,
            reason=(
                f"target outside tuning range "
                f"[{lo:.2f}, {hi:.2f}] nm"
            ),
        )
    diffs = lams - target_nm
    k = int(np.argmin(np.abs(diffs)))
    # Bracket a sign change around the closest grid point, then bisect.
    a, b = None, None
    for j in range(len(grid) - 1):
        if diffs[j] == 0.0:
            a = b = grid[j]
            break
        if diffs[j] * diffs[j + 1] < 0:
            a, b = grid[j], grid[j + 1]
            break
    if a is None:
        a = b = grid[k]
    va, vb = float(a), float(b)
    for _ in range(200):
        vm = 0.5 * (va + vb)
        lam_m = stark_shift(vm, params)
        if abs(lam_m - target_nm) <= tol_nm * 0.5:
            break
        if (stark_shift(va, params) - target_nm) * (lam_m - target_nm) <= 0:
            vb = vm
        else:
            va = vm
    else:
        vm = 0.5 * (va + vb)
        lam_m = stark_shift(vm, params)
    if abs(lam_m - target_nm) > tol_nm:
        return TunePlan(
            feasible=False,
            target_nm=target_nm,
            fss_limit_uev=fss_limit_uev,
            reason="bisection could not reach the target within tolerance",
        )
    fss = fss_vs_bias(vm, params)
    if fss > fss_limit_uev:
        return TunePlan(
            feasible=False,
            target_nm=target_nm,
            fss_limit_uev=fss_limit_uev,
            bias_v=vm,
            achieved_nm=lam_m,
            fss_uev=fss,
            reason=(
                f"splitting {fss:.2f} ueV at the required bias exceeds the "
                f"{fss_limit_uev:.2f} ueV limit"
            ),
        )
    return TunePlan(
        feasible=True,
        target_nm=target_nm,
        fss_limit_uev=fss_limit_uev,
        bias_v=vm,
        achieved_nm=lam_m,
        fss_uev=fss,
    )
