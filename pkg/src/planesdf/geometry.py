"""Geometric primitives shared across the pipeline: planes, poses, boxes."""

from __future__ import annotations

import numpy as np

Array = np.ndarray

UNIT_NORM_TOL = 1e-9


class Plane:
    """Oriented plane in Hessian normal form (unit normal ``n``, offset ``d``).

    The signed distance of a point ``x`` is ``n . x + d``; it is positive on
    the side the normal points to.  Construction normalizes the raw
    coefficients, so ``abs(|n| - 1) <= 1e-9`` always holds afterwards.
    """

    __slots__ = ("n", "d")

    def __init__(self, n, d: float, normalize: bool = True):
        n = np.asarray(n, dtype=np.float64).reshape(3).copy()
        d = float(d)
        if normalize:
            norm = float(np.linalg.norm(n))
            if norm < 1e-12:
                raise ValueError("plane normal must be non-zero")
            n = n / norm
            d = d / norm
        self.n = n
        self.d = d
        if abs(float(np.linalg.norm(self.n)) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("plane normal failed to normalize")

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        normal = np.asarray(normal, dtype=np.float64)
        normal = normal / np.linalg.norm(normal)
        return cls(normal, -float(np.dot(normal, np.asarray(point, dtype=np.float64))))

    def signed_distance(self, x) -> float:
        # Kept as explicit scalar arithmetic so the vectorized form in
        # signed_distances() is bit-identical per element.
        return float(
            self.n[0] * x[0] + self.n[1] * x[1] + self.n[2] * x[2] + self.d
        )

    def signed_distances(self, points: Array) -> Array:
        p = np.asarray(points, dtype=np.float64)
        return p[..., 0] * self.n[0] + p[..., 1] * self.n[1] + p[..., 2] * self.n[2] + self.d

    def project(self, x) -> Array:
        """Orthogonal projection of a point onto the plane."""
        x = np.asarray(x, dtype=np.float64)
        return x - self.signed_distance(x) * self.n

    def flipped(self) -> "Plane":
        return Plane(-self.n, -self.d, normalize=False)

    def coefficients(self) -> Array:
        return np.array([self.n[0], self.n[1], self.n[2], self.d])

    def angle_to(self, other: "Plane") -> float:
        return angle_between(self.n, other.n)

    def basis(self) -> tuple[Array, Array]:
        """Deterministic in-plane orthonormal axes (u, v) with (n, u, v) right-handed."""
        return plane_basis(self.n)

    def __repr__(self) -> str:
        return f"Plane(n=({self.n[0]:.6g}, {self.n[1]:.6g}, {self.n[2]:.6g}), d={self.d:.6g})"


def angle_between(a: Array, b: Array) -> float:
    """Angle in radians between two vectors, accurate near 0 and pi."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b))
    dot = float(np.dot(a, b))
    return float(np.arctan2(cross, dot))


def plane_basis(normal: Array) -> tuple[Array, Array]:
    """In-plane axes chosen from the smallest normal component (stable under
    small normal perturbations away from axis switches)."""
    n = np.asarray(normal, dtype=np.float64)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(n, helper)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def make_pose(rotation: Array, translation: Array) -> Array:
    pose = np.eye(4)
    pose[:3, :3] = rotation
    pose[:3, 3] = np.asarray(translation, dtype=np.float64)
    return pose


def invert_pose(pose: Array) -> Array:
    r = pose[:3, :3]
    t = pose[:3, 3]
    inv = np.eye(4)
    inv[:3, :3] = r.T
    inv[:3, 3] = -r.T @ t
    return inv


def transform_points(pose: Array, points: Array) -> Array:
    points = np.asarray(points, dtype=np.float64)
    return points @ pose[:3, :3].T + pose[:3, 3]


def rotation_is_orthonormal(rotation: Array, tol: float = 1e-6) -> bool:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        return False
    err = np.max(np.abs(r @ r.T - np.eye(3)))
    return bool(err <= tol) and abs(float(np.linalg.det(r)) - 1.0) <= 10 * tol


def look_at(eye, target, up_hint=(0.0, 0.0, 1.0)) -> Array:
    """Camera-to-world pose with +z forward, +x right, +y down in the image."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("look_at target coincides with eye")
    forward = forward / norm
    hint = np.asarray(up_hint, dtype=np.float64)
    right = np.cross(forward, hint)
    if np.linalg.norm(right) < 1e-8:
        hint = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, hint)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    # Re-orthonormalize to keep pose checks well under the 1e-6 gate.
    u, _, vt = np.linalg.svd(rotation)
    return make_pose(u @ vt, eye)


def aabb_corners(lo: Array, hi: Array) -> Array:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.empty((8, 3))
    idx = 0
    for x in (lo[0], hi[0]):
        for y in (lo[1], hi[1]):
            for z in (lo[2], hi[2]):
                corners[idx] = (x, y, z)
                idx += 1
    return corners


def triangle_areas(positions: Array, triangles: Array) -> Array:
    if len(triangles) == 0:
        return np.zeros(0)
    a = positions[triangles[:, 0]]
    b = positions[triangles[:, 1]]
    c = positions[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
