"""Entangled photon-pair link simulator and analysis toolkit."""

from . import calib, cascade, cli, coincidence, linkmodel, lsq, polmath, presets, qtg
from .cascade import (
    DetectionConfig,
    QDParams,
    ScheduleEntry,
    TimeTagStream,
    beat_period_ps,
    co_polarized_probability,
    conditional_x_state,
    simulate_pairs,
    simulate_run,
)
from .coincidence import (
    CoincidenceHistogram,
    FidelityPoint,
    G2Result,
    build_histogram,
    correlation_coefficient,
    fidelity_from_coefficients,
    fidelity_timeseries,
    fit_g2,
)
from .calib import (
    BasisFit,
    CalibrationResult,
    calibrate,
    fit_basis_orientation,
    normalized_difference,
    reconstruct_mueller,
    reference_states,
    resolve_ambiguities,
)
from .polmath import (
    AnalyzerSetting,
    MuellerRotation,
    PoincareAngles,
    StokesVector,
    analyzer_to_stokes,
    angles_to_stokes,
    apply_rotation,
    projection_probability,
    stokes_to_angles,
)
from .lsq import FitProblem, FitResult, lm_fit, numeric_jacobian

__version__ = "0.1.0"
