"""Bravais-lattice geometry: unit cells, cell projection, radii, cost regularizer.

Conventions used throughout the package:

* A lattice is given by a ``d x d`` basis matrix whose *rows* are the basis
  vectors ``a_1..a_d``.  The reciprocal rows ``b_i`` satisfy
  ``b_i . a_j = 2*pi*delta_ij``.
* The unit cell is the half-open parallelepiped
  ``{sum_j t_j a_j : t_j in [-1/2, 1/2)}`` in lattice coordinates.  Fractional
  coordinates exactly at ``+1/2`` wrap to ``-1/2``, so the cell projection is
  a plain rounding operation and is deterministic on the (measure-zero)
  boundary set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LatticeSpec:
    """Full-rank Bravais lattice of R^d.

    Parameters
    ----------
    basis : (d, d) array
        Row ``j`` is the basis vector ``a_j``.  Must be nonsingular.
    """

    basis: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise ValueError("lattice basis must be a square matrix")
        if abs(np.linalg.det(basis)) < 1e-14:
            raise ValueError("lattice basis is singular")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def cubic(cls, dimension: int, a: float = 1.0) -> "LatticeSpec":
        return cls(a * np.eye(dimension))

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def inverse_basis(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    @property
    def reciprocal(self) -> np.ndarray:
        """Rows are the reciprocal vectors b_i, with b_i . a_j = 2 pi delta_ij."""
        return 2.0 * np.pi * np.linalg.inv(self.basis).T

    @property
    def cell_volume(self) -> float:
        return abs(np.linalg.det(self.basis))

    def to_fractional(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.inverse_basis

    def from_fractional(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(t, dtype=float) @ self.basis

    def lattice_vector(self, n: np.ndarray) -> np.ndarray:
        return np.asarray(n, dtype=float) @ self.basis


def project_to_cell(z: np.ndarray, lat: LatticeSpec):
    """Split ``z = p + ell`` with ``p`` in the half-open unit cell, ``ell`` in the lattice.

    Accepts any batch shape ``(..., d)``.  Returns ``(p, ell)``; ``ell`` is an
    exact integer combination of the basis rows, so ``z - p == ell`` holds to
    roundoff.  Raises on non-finite input.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("project_to_cell: input must be finite")
    t = lat.to_fractional(z)
    # floor(t + 1/2) sends t = +1/2 to the next cell, i.e. ties round half-down.
    n = np.floor(t + 0.5)
    p = lat.from_fractional(t - n)
    return p, lat.lattice_vector(n)


def reduce_to_cell(z: np.ndarray, lat: LatticeSpec) -> np.ndarray:
    """Cell projection without the lattice-vector part (hot-loop variant)."""
    t = np.asarray(z, dtype=float) @ lat.inverse_basis
    return (t - np.floor(t + 0.5)) @ lat.basis


@dataclass(frozen=True)
class CellGeometry:
    """Inner/outer radii of the unit-cell boundary, ``0 < gamma_minus <= gamma_plus``."""

    gamma_minus: float
    gamma_plus: float
    parent: LatticeSpec

    def __post_init__(self):
        if not (0.0 < self.gamma_minus <= self.gamma_plus):
            raise ValueError("require 0 < gamma_minus <= gamma_plus")


def _face_samples(d: int, samples_per_face: int) -> np.ndarray:
    """Fractional coordinates of boundary sample points (includes vertices)."""
    if d == 1:
        return np.array([[-0.5], [0.5]])
    # odd per-axis count so face centers and edge midpoints are sampled exactly
    m = max(3, int(np.ceil(samples_per_face ** (1.0 / (d - 1)))))
    if m % 2 == 0:
        m += 1
    axis = np.linspace(-0.5, 0.5, m)
    free = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    faces = []
    for i in range(d):
        for s in (-0.5, 0.5):
            t = np.empty((free.shape[0], d))
            t[:, i] = s
            t[:, [j for j in range(d) if j != i]] = free
            faces.append(t)
    return np.concatenate(faces, axis=0)


def gamma_bounds(lat: LatticeSpec, samples_per_face: int = 10_000) -> CellGeometry:
    """Compute (gamma_minus, gamma_plus) for the parallelepiped cell.

    gamma_plus is exact (the norm maximum over the cell is attained at a
    vertex); gamma_minus comes from dense sampling of the boundary faces and
    is accurate to ~1e-4 relative for skew bases, exact for orthogonal ones.
    """
    d = lat.dimension
    corners = np.stack(np.meshgrid(*([[-0.5, 0.5]] * d), indexing="ij"), axis=-1).reshape(-1, d)
    gamma_plus = float(np.max(np.linalg.norm(lat.from_fractional(corners), axis=-1)))
    boundary = lat.from_fractional(_face_samples(d, samples_per_face))
    gamma_minus = float(np.min(np.linalg.norm(boundary, axis=-1)))
    return CellGeometry(gamma_minus=gamma_minus, gamma_plus=gamma_plus, parent=lat)


def theta(r, geom: CellGeometry):
    """Cost regularizer: integral of (1 - s/gamma_minus)_+ from 0 to r.

    Closed form: ``r - r^2/(2 gamma_minus)`` for ``r <= gamma_minus``, else
    ``gamma_minus / 2``.  Nondecreasing, theta(r) <= r, theta' in [0, 1].
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("theta: argument must be nonnegative")
    g = geom.gamma_minus
    out = np.where(r <= g, r - r * r / (2.0 * g), g / 2.0)
    return out if out.ndim else float(out)


def theta_cost_weights(xs: np.ndarray, ygrid: np.ndarray, geom: CellGeometry) -> np.ndarray:
    """theta(|P_Gamma(x - y)|^2) for every pair of a batch of x's and grid y's.

    Returns shape ``(len(xs), len(ygrid))``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    diff = xs[:, None, :] - ygrid[None, :, :]
    red = reduce_to_cell(diff.reshape(-1, xs.shape[-1]), geom.parent)
    r2 = np.sum(red * red, axis=-1).reshape(xs.shape[0], ygrid.shape[0])
    return theta(r2, geom)


@dataclass(frozen=True)
class Region:
    """Union of open axis-aligned boxes inside the unit cell, understood periodically.

    ``boxes`` has shape ``(nb, 2, d)`` with rows ``(lo, hi)``.  Membership and
    distance are evaluated modulo the lattice: a point belongs to the region
    if one of its near translates falls in a box, which also handles boxes
    that spill over the cell edge after a dilation.
    """

    boxes: np.ndarray
    lat: LatticeSpec
    _shifts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=float)
        if boxes.size == 0:
            boxes = boxes.reshape(0, 2, self.lat.dimension)
        if boxes.ndim != 3 or boxes.shape[1] != 2:
            raise ValueError("boxes must have shape (nb, 2, d)")
        object.__setattr__(self, "boxes", boxes)
        d = self.lat.dimension
        offs = np.stack(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij"), axis=-1).reshape(-1, d)
        object.__setattr__(self, "_shifts", self.lat.lattice_vector(offs))

    @classmethod
    def interval(cls, lo, hi, lat: LatticeSpec) -> "Region":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return cls(np.stack([lo, hi])[None, :, :], lat)

    @property
    def is_empty(self) -> bool:
        return self.boxes.shape[0] == 0

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask over points (..., d), periodic membership.

        Boxes are half-open (lo <= x < hi), matching the cell convention, so a
        box equal to the whole cell contains every grid point exactly once.
        """
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        p = pts.reshape(-1, pts.shape[-1])
        out = np.zeros(p.shape[0], dtype=bool)
        for lo, hi in self.boxes:
            for s in self._shifts:
                q = p + s
                out |= np.all((q >= lo) & (q < hi), axis=-1)
        return out.reshape(shape)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance to the periodized region (0 inside)."""
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        p = pts.reshape(-1, pts.shape[-1])
        best = np.full(p.shape[0], np.inf)
        for lo, hi in self.boxes:
            for s in self._shifts:
                q = p + s
                delta = q - np.clip(q, lo, hi)
                best = np.minimum(best, np.linalg.norm(delta, axis=-1))
        return best.reshape(shape)

    def contains_dilated(self, points: np.ndarray, delta: float) -> np.ndarray:
        """Membership in the region enlarged by a Euclidean ball of radius delta."""
        return self.distance(points) < delta
