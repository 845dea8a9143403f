"""Sim(3) group arithmetic and its Lie algebra.

A similarity transform acts on points as ``p -> s * R @ p + t`` and is stored
as the triple (scale, rotation matrix, translation).  The exp/log maps follow
the standard closed forms for the similarity group (see e.g. Ethan Eade,
"Lie groups for 2D and 3D transformations", ethaneade.com/lie.pdf), with the
coupled translation matrix

    W(sigma, phi) = C*I + A*hat(phi) + B*hat(phi)^2,
    C = int_0^1 e^(sigma*u) du,
    A = int_0^1 e^(sigma*u) sin(u*theta)/theta du,
    B = int_0^1 e^(sigma*u) (1 - cos(u*theta))/theta^2 du,

evaluated via Taylor series when |sigma| or theta = |phi| drops below 1e-6.
All values are immutable and every function is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleAtPi

_EPS = 1e-6
_ORTHO_DRIFT = 1e-7  # re-orthonormalize composed rotations past this drift


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ p == cross(v, p)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a series branch below theta = 1e-6."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    if theta < _EPS:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = hat(phi)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix.

    Raises AngleAtPi when the angle is within 1e-6 of pi, where the log is
    not unique.
    """
    r = np.asarray(r, dtype=float)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) * 0.5
    sin_theta = float(np.linalg.norm(w))
    cos_theta = (float(np.trace(r)) - 1.0) * 0.5
    theta = float(np.arctan2(sin_theta, cos_theta))
    if np.pi - theta < _EPS:
        raise AngleAtPi(f"rotation angle {theta:.9f} within 1e-6 of pi")
    if theta < _EPS:
        # w = sin(theta) * axis, and theta/sin(theta) ~ 1 + theta^2/6
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / sin_theta)


def project_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (SVD projection, det +1)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    ortho = np.abs(m.T @ m - np.eye(3)).max() <= tol
    return bool(ortho and abs(np.linalg.det(m) - 1.0) <= tol)


@dataclass(frozen=True)
class Sim3:
    """Similarity transform: p -> scale * rotation @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix [[s*R, t], [0, 1]]."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Sim3":
        m = np.asarray(m, dtype=float)
        sr = m[:3, :3]
        scale = float(np.cbrt(np.linalg.det(sr)))
        return Sim3(scale, sr / scale, m[:3, 3])


@dataclass(frozen=True)
class Sim3Tangent:
    """Tangent-space element: translation part rho, rotation vector phi, log-scale sigma."""

    rho: np.ndarray
    phi: np.ndarray
    sigma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", np.array(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.array(self.phi, dtype=float).reshape(3))
        object.__setattr__(self, "sigma", float(self.sigma))

    def as_vector(self) -> np.ndarray:
        """Pack into a 7-vector [rho, phi, sigma]."""
        return np.concatenate([self.rho, self.phi, [self.sigma]])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Sim3Tangent":
        v = np.asarray(v, dtype=float).reshape(7)
        return Sim3Tangent(v[:3], v[3:6], v[6])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


def compose(a: Sim3, b: Sim3) -> Sim3:
    """Transform equal to applying b first, then a."""
    r = a.rotation @ b.rotation
    # long composition chains accumulate orthogonality drift
    if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_DRIFT:
        r = project_rotation(r)
    return Sim3(
        a.scale * b.scale,
        r,
        a.scale * (a.rotation @ b.translation) + a.translation,
    )


def inverse(s: Sim3) -> Sim3:
    inv_scale = 1.0 / s.scale
    rt = s.rotation.T
    return Sim3(inv_scale, rt, -inv_scale * (rt @ s.translation))


def apply(s: Sim3, p: np.ndarray) -> np.ndarray:
    """Transform a single 3-vector."""
    return s.scale * (s.rotation @ np.asarray(p, dtype=float)) + s.translation


def transform_points(s: Sim3, pts: np.ndarray) -> np.ndarray:
    """Transform an (N, 3) array of points."""
    pts = np.asarray(pts, dtype=float)
    return s.scale * (pts @ s.rotation.T) + s.translation


def _w_coefficients(sigma: float, theta: float) -> tuple[float, float, float]:
    """(C, A, B) coefficients of W(sigma, phi); see module docstring."""
    small_sigma = abs(sigma) < _EPS
    small_theta = theta < _EPS
    theta2 = theta * theta
    sigma2 = sigma * sigma
    es = np.exp(sigma)

    if small_sigma:
        c = 1.0 + sigma / 2.0 + sigma2 / 6.0
    else:
        c = np.expm1(sigma) / sigma

    if small_sigma and small_theta:
        a = 0.5 + sigma / 3.0 - theta2 / 24.0
        b = 1.0 / 6.0 + sigma / 8.0 - theta2 / 120.0
    elif small_sigma:
        a = (1.0 - np.cos(theta)) / theta2 + sigma * (np.sin(theta) - theta * np.cos(theta)) / (theta2 * theta)
        b = (1.0 - np.sin(theta) / theta) / theta2 + sigma * (
            0.5 - (np.cos(theta) + theta * np.sin(theta) - 1.0) / theta2
        ) / theta2
    elif small_theta:
        i1 = ((sigma - 1.0) * es + 1.0) / sigma2
        i3 = (es * (sigma2 * sigma - 3.0 * sigma2 + 6.0 * sigma - 6.0) + 6.0) / (sigma2 * sigma2)
        a = i1 - theta2 * i3 / 6.0
        i2 = (es * (sigma2 - 2.0 * sigma + 2.0) - 2.0) / (sigma2 * sigma)
        i4 = (es * (sigma2 * sigma2 - 4.0 * sigma2 * sigma + 12.0 * sigma2 - 24.0 * sigma + 24.0) - 24.0) / (
            sigma2 * sigma2 * sigma
        )
        b = i2 / 2.0 - theta2 * i4 / 24.0
    else:
        denom = sigma2 + theta2
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        a = (es * (sigma * sin_t - theta * cos_t) + theta) / (theta * denom)
        b = (c - (sigma * (es * cos_t - 1.0) + es * theta * sin_t) / denom) / theta2

    return float(c), float(a), float(b)


def _w_matrix(sigma: float, phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    c, a, b = _w_coefficients(sigma, theta)
    k = hat(phi)
    return c * np.eye(3) + a * k + b * (k @ k)


def exp_map(tau: Sim3Tangent) -> Sim3:
    """Exponential map from the tangent space to the group."""
    return Sim3(
        float(np.exp(tau.sigma)),
        rotation_exp(tau.phi),
        _w_matrix(tau.sigma, tau.phi) @ tau.rho,
    )


def log_map(s: Sim3) -> Sim3Tangent:
    """Logarithm map; inverse of exp_map for rotation angles below pi.

    Raises AngleAtPi (from the rotation log) when the angle is within
    1e-6 of pi.
    """
    sigma = float(np.log(s.scale))
    phi = rotation_log(s.rotation)
    rho = np.linalg.solve(_w_matrix(sigma, phi), s.translation)
    return Sim3Tangent(rho, phi, sigma)


def random_sim3(rng: np.random.Generator, max_angle: float = np.pi - 1e-2,
                scale_range: tuple[float, float] = (0.5, 2.0),
                translation_scale: float = 5.0) -> Sim3:
    """Seeded random transform, used by tests and the synthetic harness."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0.0, max_angle)
    return Sim3(
        float(rng.uniform(*scale_range)),
        rotation_exp(phi),
        rng.normal(scale=translation_scale, size=3),
    )


def random_tangent(rng: np.random.Generator, max_angle: float = np.pi - 1e-3,
                   rho_scale: float = 2.0, sigma_scale: float = 1.0) -> Sim3Tangent:
    """Seeded random tangent with rotation magnitude below max_angle."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Sim3Tangent(
        rng.normal(scale=rho_scale, size=3),
        axis * rng.uniform(0.0, max_angle),
        float(rng.normal(scale=sigma_scale)),
    )
