"""Stokes-vector algebra on the Poincare sphere.

Conventions used by every module in this package:

* Axes: s1 is the H/V axis, s2 the D/A axis, s3 the R/L axis, so
  H = (1, 0, 0), D = (0, 1, 0), R = (0, 0, 1).
* Angle chart: theta is the polar angle measured from the H axis and phi
  the azimuth from D toward R, giving the unit vector
  (cos theta, sin theta cos phi, sin theta sin phi).
* Circular handedness: s3 = +1 is right-circular. The retarder sign below
  is chosen so that an analyzer built from HWP 0 / QWP 45 deg / LP 0
  projects onto (0, 0, +1); a golden test pins this down. Flipping the
  choice would only flip the sign of every R/L quantity consistently.
* Rotations act on column Stokes vectors by the right-hand rule.

Only the rotation part of the Mueller calculus is modelled: lossless,
non-depolarizing elements acting on fully polarized light.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NormalizationError, RotationError

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class StokesVector:
    """Unit vector on the Poincare sphere (pure polarization state)."""

    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.s1, self.s2, self.s3)):
            raise NormalizationError("Stokes components must be finite")
        norm = math.sqrt(self.s1 ** 2 + self.s2 ** 2 + self.s3 ** 2)
        if abs(norm - 1.0) > 1e-6:
            raise NormalizationError(f"Stokes vector has norm {norm!r}, expected 1")

    @classmethod
    def normalized(cls, s1: float, s2: float, s3: float) -> "StokesVector":
        norm = math.sqrt(s1 * s1 + s2 * s2 + s3 * s3)
        if norm == 0.0 or not math.isfinite(norm):
            raise NormalizationError("cannot normalize a zero or non-finite vector")
        return cls(s1 / norm, s2 / norm, s3 / norm)

    @classmethod
    def from_array(cls, arr) -> "StokesVector":
        a = np.asarray(arr, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    def dot(self, other: "StokesVector") -> float:
        return self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3

    def negated(self) -> "StokesVector":
        """Orthogonal polarization state (antipode on the sphere)."""
        return StokesVector(-self.s1, -self.s2, -self.s3)


H = StokesVector(1.0, 0.0, 0.0)
V = StokesVector(-1.0, 0.0, 0.0)
D = StokesVector(0.0, 1.0, 0.0)
A = StokesVector(0.0, -1.0, 0.0)
R = StokesVector(0.0, 0.0, 1.0)
L = StokesVector(0.0, 0.0, -1.0)

NAMED_STATES = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}


@dataclass(frozen=True)
class PoincareAngles:
    """(theta, phi) chart of the sphere; theta in [0, pi], phi stored mod 2pi."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ConfigError("angles must be finite")
        if not -1e-12 <= self.theta <= math.pi + 1e-12:
            raise ConfigError(f"theta {self.theta!r} outside [0, pi]")
        object.__setattr__(self, "theta", min(max(self.theta, 0.0), math.pi))
        object.__setattr__(self, "phi", self.phi % (2.0 * math.pi))


@dataclass(frozen=True, eq=False)
class MuellerRotation:
    """Proper rotation acting on Stokes vectors (birefringence without loss)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise RotationError("rotation must be a finite 3x3 matrix")
        if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHO_TOL:
            raise RotationError("matrix is not orthogonal within 1e-9")
        if abs(np.linalg.det(m) - 1.0) > ORTHO_TOL:
            raise RotationError("matrix determinant is not +1 within 1e-9")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "MuellerRotation":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float) -> "MuellerRotation":
        """Rodrigues rotation by angle_rad about axis (right-hand rule)."""
        a = np.asarray(axis, dtype=float).reshape(3)
        norm = np.linalg.norm(a)
        if norm == 0.0:
            raise RotationError("rotation axis must be nonzero")
        a = a / norm
        k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
        m = np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)
        return cls(m)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "MuellerRotation":
        """Haar-uniform random rotation via a normalized quaternion."""
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(m)

    def apply(self, s: StokesVector) -> StokesVector:
        out = self.matrix @ s.as_array()
        return StokesVector.from_array(out / np.linalg.norm(out))

    def compose(self, other: "MuellerRotation") -> "MuellerRotation":
        """Rotation equal to applying `other` first, then this one."""
        return MuellerRotation(self.matrix @ other.matrix)

    def inverse(self) -> "MuellerRotation":
        return MuellerRotation(self.matrix.T)

    def angle_to(self, other: "MuellerRotation") -> float:
        """Geodesic distance on SO(3): angle of the relative rotation, in rad."""
        rel = self.matrix.T @ other.matrix
        c = (np.trace(rel) - 1.0) / 2.0
        return math.acos(min(1.0, max(-1.0, c)))


def angles_to_stokes(a: PoincareAngles) -> StokesVector:
    """Map (theta, phi) to (cos t, sin t cos p, sin t sin p)."""
    st = math.sin(a.theta)
    return StokesVector(math.cos(a.theta), st * math.cos(a.phi), st * math.sin(a.phi))


def stokes_to_angles(s: StokesVector) -> PoincareAngles:
    """Inverse chart. At the poles (theta 0 or pi) phi is set to 0."""
    norm = math.sqrt(s.s1 ** 2 + s.s2 ** 2 + s.s3 ** 2)
    if abs(norm - 1.0) > UNIT_TOL:
        raise NormalizationError(f"norm {norm!r} violates unit constraint")
    theta = math.acos(min(1.0, max(-1.0, s.s1)))
    if math.hypot(s.s2, s.s3) < UNIT_TOL:
        return PoincareAngles(theta, 0.0)
    return PoincareAngles(theta, math.atan2(s.s3, s.s2) % (2.0 * math.pi))


def apply_rotation(m: MuellerRotation, s: StokesVector) -> StokesVector:
    return m.apply(s)


def projection_probability(analyzer: StokesVector, photon: StokesVector) -> float:
    """Malus law on the sphere: (1 + analyzer . photon) / 2."""
    d = min(1.0, max(-1.0, analyzer.dot(photon)))
    return 0.5 * (1.0 + d)


def linear_state(polarizer_angle_rad: float) -> StokesVector:
    """Linear polarization at a physical angle from H (equator of the sphere)."""
    return StokesVector(
        math.cos(2.0 * polarizer_angle_rad), math.sin(2.0 * polarizer_angle_rad), 0.0
    )


def waveplate_rotation(fast_axis_rad: float, retardance_rad: float) -> MuellerRotation:
    """Poincare rotation of a waveplate with the given fast-axis angle.

    The rotation axis is the linear state at twice the physical fast-axis
    angle; the rotation angle is the retardance. The sense of rotation is
    the package handedness convention (see module docstring).
    """
    a = np.array(
        [math.cos(2.0 * fast_axis_rad), math.sin(2.0 * fast_axis_rad), 0.0]
    )
    return MuellerRotation.from_axis_angle(a, -retardance_rad)


def hwp_rotation(fast_axis_rad: float) -> MuellerRotation:
    return waveplate_rotation(fast_axis_rad, math.pi)


def qwp_rotation(fast_axis_rad: float) -> MuellerRotation:
    return waveplate_rotation(fast_axis_rad, math.pi / 2.0)


_ELEMENT_KINDS = ("hwp", "qwp", "lp")


@dataclass(frozen=True)
class AnalyzerSetting:
    """Ordered optical train of waveplates terminated by a linear polarizer.

    elements is a tuple of (kind, angle_rad) with kind one of 'hwp', 'qwp'
    or 'lp'; light traverses the elements in order and exactly one 'lp'
    must come last.
    """

    elements: tuple

    def __post_init__(self):
        elems = tuple((str(k), float(a)) for k, a in self.elements)
        if not elems:
            raise ConfigError("analyzer needs at least a linear polarizer")
        for kind, angle in elems:
            if kind not in _ELEMENT_KINDS:
                raise ConfigError(f"unknown analyzer element {kind!r}")
            if not math.isfinite(angle):
                raise ConfigError("analyzer angles must be finite")
        kinds = [k for k, _ in elems]
        if kinds.count("lp") != 1 or kinds[-1] != "lp":
            raise ConfigError("analyzer must end with exactly one linear polarizer")
        object.__setattr__(self, "elements", elems)

    @classmethod
    def standard(cls, hwp_rad: float, qwp_rad: float, lp_rad: float) -> "AnalyzerSetting":
        """HWP then QWP then LP, the usual projection train."""
        return cls((("hwp", hwp_rad), ("qwp", qwp_rad), ("lp", lp_rad)))

    @classmethod
    def lp_only(cls, lp_rad: float) -> "AnalyzerSetting":
        return cls((("lp", lp_rad),))


def analyzer_to_stokes(setting: AnalyzerSetting) -> StokesVector:
    """Projection state selected by the analyzer train, in its input space.

    A photon in state s is transmitted with probability
    projection_probability(analyzer_to_stokes(setting), s).
    """
    lp_angle = setting.elements[-1][1]
    vec = linear_state(lp_angle).as_array()
    # Back-propagate the polarizer state through the retarders.
    for kind, angle in reversed(setting.elements[:-1]):
        rot = hwp_rotation(angle) if kind == "hwp" else qwp_rotation(angle)
        vec = rot.matrix.T @ vec
    return StokesVector.from_array(vec / np.linalg.norm(vec))
