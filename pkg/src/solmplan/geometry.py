"""Planar rigid-body poses, twists and the SE(2) exponential/logarithm maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Rotation/translation mixing length used when a twist norm combines meters and radians.
CHARACTERISTIC_LENGTH = 1.0


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    wrapped -= math.pi
    # fmod can round 2*pi - tiny up to exactly pi
    if wrapped >= math.pi:
        wrapped = -math.pi
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized ``wrap_angle``."""
    out = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out >= np.pi, -np.pi, out)


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rot2_derivative(theta: float) -> np.ndarray:
    """d/dtheta of ``rot2(theta)``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class PlanarPose:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "PlanarPose":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, v) -> "PlanarPose":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def parse(cls, text: str) -> "PlanarPose":
        """Parse ``"x,y,theta"``."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 3:
            raise ValueError(f"pose must be 'x,y,theta', got {text!r}")
        return cls(*(float(p) for p in parts))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rot2(self.theta)

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 transform."""
        m = np.eye(3)
        m[:2, :2] = self.rotation()
        m[:2, 2] = self.translation
        return m

    def lift(self, z: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """3-D rotation (about z) and translation of the pose raised to height ``z``."""
        r = np.eye(3)
        r[:2, :2] = self.rotation()
        return r, np.array([self.x, self.y, z])

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map (n, 2) body-frame points to the world frame."""
        return np.asarray(pts) @ self.rotation().T + self.translation


def compose(a: PlanarPose, b: PlanarPose) -> PlanarPose:
    """Return ``a * b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return PlanarPose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: PlanarPose) -> PlanarPose:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return PlanarPose(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def between(a: PlanarPose, b: PlanarPose) -> PlanarPose:
    """Relative pose ``a^-1 * b``."""
    return compose(inverse(a), b)


@dataclass(frozen=True)
class PlanarTwist:
    rho_x: float = 0.0
    rho_y: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_x, self.rho_y, self.omega])

    def norm(self, length: float = CHARACTERISTIC_LENGTH) -> float:
        """Euclidean norm with rotation scaled by ``length``."""
        return math.sqrt(self.rho_x**2 + self.rho_y**2 + (length * self.omega) ** 2)


def _v_coeffs(omega: float) -> tuple[float, float]:
    # a = sin(w)/w, b = (1 - cos(w))/w, series near zero
    if abs(omega) < 1e-6:
        w2 = omega * omega
        return 1.0 - w2 / 6.0, omega / 2.0 - omega * w2 / 24.0
    return math.sin(omega) / omega, (1.0 - math.cos(omega)) / omega


def exp_se2(t: PlanarTwist) -> PlanarPose:
    a, b = _v_coeffs(t.omega)
    return PlanarPose(a * t.rho_x - b * t.rho_y, b * t.rho_x + a * t.rho_y, t.omega)


class AngleBoundaryWarning(UserWarning):
    """Raised as a warning when ``log_se2`` is evaluated at theta = -pi."""


def log_se2(p: PlanarPose) -> PlanarTwist:
    """Inverse of ``exp_se2`` for |theta| < pi.

    At theta == -pi the rotation angle is ambiguous; the -pi branch is returned
    and ``AngleBoundaryWarning`` is emitted so callers can choose a convention.
    """
    w = p.theta
    if w == -math.pi:
        import warnings

        warnings.warn("log_se2 evaluated on the theta = -pi boundary", AngleBoundaryWarning, stacklevel=2)
    a, b = _v_coeffs(w)
    det = a * a + b * b
    # V^-1 = [[a, b], [-b, a]] / det
    rho_x = (a * p.x + b * p.y) / det
    rho_y = (-b * p.x + a * p.y) / det
    return PlanarTwist(rho_x, rho_y, w)
