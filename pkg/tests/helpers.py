"""Shared test utilities: analytic curve generation and gauge handling."""

import numpy as np

from qdlink import calib
from qdlink.cascade import HBAR_UEV_NS
from qdlink.polmath import MuellerRotation, stokes_to_angles

# Half turn about the emitter polar axis: relabels D<->A and R<->L.
# Pair-correlation data cannot distinguish a rotation from its composition
# with this flip, so recovered rotations are compared modulo it.
GAUGE_FLIP = np.diag([1.0, -1.0, -1.0])


def analytic_difference(ref, rotation, t_ps, delta_uev=5.6, tau_ns=1.4, amp=1.0):
    """Noiseless co-minus-cross curve for a reference state seen through a rotation."""
    ang = stokes_to_angles(rotation.apply(ref))
    return calib._difference_model([amp, ang.theta, ang.phi, delta_uev, tau_ns], t_ps)


def analytic_cocross(ref, rotation, t_ps, delta_uev, tau_x_ns, total_counts, rng):
    """Poisson co/cross count series for one reference basis."""
    ang = stokes_to_angles(rotation.apply(ref))
    env = np.exp(-t_ps / (tau_x_ns * 1e3))
    ph = delta_uev * t_ps / (HBAR_UEV_NS * 1e3) - 2.0 * ang.phi
    p_co = 1.0 - 2.0 * np.sin(ang.theta / 2.0) ** 2 * np.cos(ang.theta / 2.0) ** 2 * (
        1.0 - np.cos(ph)
    )
    norm = total_counts / env.sum()
    co = rng.poisson(norm * env * p_co)
    cross = rng.poisson(norm * env * (1.0 - p_co))
    return co, cross


def gauge_distance(recovered: MuellerRotation, truth: MuellerRotation) -> float:
    return calib.rotation_distance_mod_flip(recovered, truth)


def gauge_aligned_truth(recovered: MuellerRotation, truth: MuellerRotation):
    """The member of {truth, flip . truth} closest to the recovered rotation."""
    flipped = MuellerRotation(GAUGE_FLIP @ truth.matrix)
    if recovered.angle_to(flipped) < recovered.angle_to(truth):
        return flipped
    return truth


def random_rotation(seed: int) -> MuellerRotation:
    return MuellerRotation.random(np.random.default_rng(seed))
