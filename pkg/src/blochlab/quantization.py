"""Periodic trace, Toeplitz quantization, Husimi transform, and cell observation.

Quantum densities are kept in low-rank form throughout: each fiber is a
nonnegative combination of projectors onto periodic fields.  Toeplitz
quantization produces exactly that shape (one projector per phase-space
quadrature node) and unitary evolution preserves it, so dense fiber matrices
only ever appear inside small test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bloch import KGrid, coeffs_to_values, grid_weight, position_grid
from .lattice import LatticeSpec, Region
from .states import coherent_coeff_batch


@dataclass(frozen=True)
class PhaseBoxSet:
    """Union of closed boxes in phase space Gamma x R^d (the compact set K)."""

    q_bounds: np.ndarray   # (nb, 2, d)
    p_bounds: np.ndarray   # (nb, 2, d)

    def __post_init__(self):
        qb = np.asarray(self.q_bounds, dtype=float)
        pb = np.asarray(self.p_bounds, dtype=float)
        if qb.shape != pb.shape or qb.ndim != 3 or qb.shape[1] != 2:
            raise ValueError("q_bounds/p_bounds must both have shape (nb, 2, d)")
        object.__setattr__(self, "q_bounds", qb)
        object.__setattr__(self, "p_bounds", pb)

    @classmethod
    def single(cls, qlo, qhi, plo, phi) -> "PhaseBoxSet":
        qlo, qhi = np.atleast_1d(qlo), np.atleast_1d(qhi)
        plo, phi = np.atleast_1d(plo), np.atleast_1d(phi)
        return cls(np.stack([qlo, qhi])[None], np.stack([plo, phi])[None])

    @property
    def n_boxes(self) -> int:
        return self.q_bounds.shape[0]

    def contains(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        p = np.atleast_2d(p)
        out = np.zeros(q.shape[0], dtype=bool)
        for (qlo, qhi), (plo, phi) in zip(self.q_bounds, self.p_bounds):
            out |= (np.all((q >= qlo) & (q <= qhi), axis=-1)
                    & np.all((p >= plo) & (p <= phi), axis=-1))
        return out

    def grid_samples(self, per_axis: int = 32):
        """Tensor grid over each box; returns (q, p) arrays stacked over boxes."""
        qs, ps = [], []
        d = self.q_bounds.shape[2]
        for (qlo, qhi), (plo, phi) in zip(self.q_bounds, self.p_bounds):
            axes = [np.linspace(qlo[i], qhi[i], per_axis) for i in range(d)]
            axes += [np.linspace(plo[i], phi[i], per_axis) for i in range(d)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * d)
            qs.append(mesh[:, :d])
            ps.append(mesh[:, d:])
        return np.concatenate(qs), np.concatenate(ps)

    def quasi_samples(self, n: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        d = self.q_bounds.shape[2]
        qs, ps = [], []
        for (qlo, qhi), (plo, phi) in zip(self.q_bounds, self.p_bounds):
            u = rng.random((n, 2 * d))
            qs.append(qlo + u[:, :d] * (qhi - qlo))
            ps.append(plo + u[:, d:] * (phi - plo))
        return np.concatenate(qs), np.concatenate(ps)


@dataclass
class PhaseSpaceDensity:
    """Weighted quadrature nodes representing a periodized probability density."""

    nodes_q: np.ndarray
    nodes_p: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    grid_shape: tuple | None = None
    p_max: float | None = None

    def __post_init__(self):
        self.nodes_q = np.atleast_2d(np.asarray(self.nodes_q, dtype=float))
        self.nodes_p = np.atleast_2d(np.asarray(self.nodes_p, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n = self.nodes_q.shape[0]
        if not (self.nodes_p.shape[0] == self.weights.shape[0] == self.values.shape[0] == n):
            raise ValueError("node arrays must have matching lengths")
        if np.any(self.weights < 0):
            raise ValueError("quadrature weights must be nonnegative")
        if np.any(self.values < -1e-12):
            raise ValueError("density values must be nonnegative")

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights * self.values))

    def normalized(self) -> "PhaseSpaceDensity":
        total = self.mass
        if total <= 0:
            raise ValueError("cannot normalize a zero-mass density")
        return PhaseSpaceDensity(self.nodes_q, self.nodes_p, self.weights,
                                 self.values / total, self.grid_shape, self.p_max)

    def mass_in(self, region: PhaseBoxSet) -> float:
        mask = region.contains(self.nodes_q, self.nodes_p)
        return float(np.sum(self.weights[mask] * self.values[mask]))

    def pruned(self, tol: float = 1e-12) -> "PhaseSpaceDensity":
        """Drop the lightest nodes whose combined mass is below tol * mass."""
        contrib = self.weights * self.values
        order = np.argsort(contrib, kind="stable")
        cum = np.cumsum(contrib[order])
        drop = cum <= tol * self.mass
        keep = np.ones(self.size, dtype=bool)
        keep[order[drop]] = False
        return PhaseSpaceDensity(self.nodes_q[keep], self.nodes_p[keep],
                                 self.weights[keep], self.values[keep], None, self.p_max)

    @classmethod
    def from_function(cls, fn: Callable, lat: LatticeSpec, nq: int, np_per_dim: int,
                      p_max: float, p_center=None, normalize: bool = True
                      ) -> "PhaseSpaceDensity":
        """Sample fn(q, p) on the tensor grid over cell x [-p_max, p_max]^d."""
        qs, ps, w = phase_grid_nodes(lat, nq, np_per_dim, p_max, p_center)
        vals = np.asarray(fn(qs, ps), dtype=float)
        dens = cls(qs, ps, np.full(qs.shape[0], w), vals,
                   grid_shape=(nq, np_per_dim), p_max=p_max)
        return dens.normalized() if normalize else dens


def phase_grid_nodes(lat: LatticeSpec, nq: int, np_per_dim: int, p_max: float,
                     p_center=None):
    """Product nodes of the uniform cell grid and a midpoint momentum grid.

    Returns (q, p, weight) with q, p of shape (nq^d * np^d, d) and a scalar
    weight; the momentum grid is midpoint on [-p_max, p_max]^d shifted by
    p_center, so smooth decaying integrands are integrated spectrally.
    """
    d = lat.dimension
    if p_center is None:
        p_center = np.zeros(d)
    p_center = np.atleast_1d(np.asarray(p_center, dtype=float))
    qs = position_grid(lat, nq)
    dp = 2.0 * p_max / np_per_dim
    axis = -p_max + (np.arange(np_per_dim) + 0.5) * dp
    pmesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pmesh = pmesh + p_center
    nqt, npt = qs.shape[0], pmesh.shape[0]
    q_full = np.repeat(qs, npt, axis=0)
    p_full = np.tile(pmesh, (nqt, 1))
    weight = grid_weight(lat, nq) * dp ** d
    return q_full, p_full, weight


@dataclass
class FiberedDensity:
    """Low-rank fibered density operator: per fiber sum_m lambda_m |v_m><v_m|."""

    kgrid: KGrid
    lat: LatticeSpec
    m: int
    hbar: float
    lambdas: np.ndarray   # (n_k, rank) nonnegative
    vectors: np.ndarray   # (n_k, rank, (2m+1)^d) flat coefficients

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.vectors = np.asarray(self.vectors, dtype=complex)
        n_g = (2 * self.m + 1) ** self.lat.dimension
        if self.lambdas.ndim != 2 or self.lambdas.shape[0] != self.kgrid.size:
            raise ValueError("lambdas must have shape (n_k, rank)")
        if self.vectors.shape != (*self.lambdas.shape, n_g):
            raise ValueError("vectors must have shape (n_k, rank, n_coeff)")
        if np.any(self.lambdas < -1e-14):
            raise ValueError("fiber weights must be nonnegative")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @property
    def rank(self) -> int:
        return self.lambdas.shape[1]

    @property
    def coeff_shape(self) -> tuple:
        return (2 * self.m + 1,) * self.lat.dimension

    def fiber_traces(self) -> np.ndarray:
        norms = np.sum(np.abs(self.vectors) ** 2, axis=2)
        return np.sum(self.lambdas * norms, axis=1)

    def scaled(self, c: float) -> "FiberedDensity":
        return FiberedDensity(self.kgrid, self.lat, self.m, self.hbar,
                              c * self.lambdas, self.vectors)

    def dense_fiber(self, i: int) -> np.ndarray:
        """Assembled fiber matrix (test oracle only; O(n_coeff^2) memory)."""
        v = self.vectors[i]
        return (v.conj().T * self.lambdas[i]) @ v


def periodic_trace(rho: FiberedDensity) -> float:
    """Normalized fiber average of the fiber traces (electrons per unit cell)."""
    return float(np.mean(rho.fiber_traces()))


def toeplitz_quantize(f: PhaseSpaceDensity, lat: LatticeSpec, kgrid: KGrid, m: int,
                      hbar: float, mass_tol: float = 1e-8) -> FiberedDensity:
    """Quantize a phase-space density into a low-rank fibered operator.

    Fiber k collects one projector per quadrature node, onto the periodized
    packet centered at (q_j, p_j - hbar*k), weighted by w_j f_j.  The result
    has unit periodic trace up to the packet-normalization error, which is
    spectrally small once the plane-wave order resolves the packets.
    """
    if abs(f.mass - 1.0) > mass_tol:
        raise ValueError(f"density mass {f.mass:.3e} is not 1 (tol {mass_tol:g})")
    n_k = kgrid.size
    lam = np.broadcast_to((f.weights * f.values)[None, :], (n_k, f.size)).copy()
    vecs = np.empty((n_k, f.size, (2 * m + 1) ** lat.dimension), dtype=complex)
    for ik in range(n_k):
        vecs[ik] = coherent_coeff_batch(f.nodes_q, f.nodes_p - hbar * kgrid.points[ik],
                                        hbar, lat, m)
    return FiberedDensity(kgrid, lat, m, hbar, lam, vecs)


def husimi(rho: FiberedDensity, qs: np.ndarray, ps: np.ndarray,
           weight: float, grid_shape: tuple | None = None) -> PhaseSpaceDensity:
    """Husimi density of a fibered operator on given phase-space nodes.

    Evaluates the fiber average of the coherent-state expectations
    ``(2 pi hbar)^-d <packet(q, p - hbar k)| R_k |packet(q, p - hbar k)>``
    at all product nodes (qs x ps); the scalar ``weight`` is the per-node
    quadrature weight of that product grid.
    """
    lat, m, hbar = rho.lat, rho.m, rho.hbar
    d = lat.dimension
    qs = np.atleast_2d(qs)
    ps = np.atleast_2d(ps)
    g = (np.stack(np.meshgrid(*([np.arange(-m, m + 1)] * d), indexing="ij"),
                  axis=-1).reshape(-1, d) @ lat.reciprocal)
    phase_q = np.exp(1j * qs @ g.T)                                     # (Nq, nG)
    amp_sq = (4.0 * np.pi * hbar) ** (d / 2.0) / lat.cell_volume
    pref = (2.0 * np.pi * hbar) ** (-d) * amp_sq
    acc = np.zeros((qs.shape[0], ps.shape[0]))
    for ik in range(rho.kgrid.size):
        shifted = ps - hbar * rho.kgrid.points[ik]                      # (Np, d)
        diff = shifted[:, None, :] - hbar * g[None, :, :]
        gauss = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * hbar))    # (Np, nG)
        windowed = gauss[None, :, :] * rho.vectors[ik][:, None, :]      # (r, Np, nG)
        t = np.einsum("qg,rpg->rpq", phase_q, windowed)
        acc += pref * np.einsum("r,rpq->qp", rho.lambdas[ik], np.abs(t) ** 2)
    acc /= rho.kgrid.size
    n_q, n_p = qs.shape[0], ps.shape[0]
    q_full = np.repeat(qs, n_p, axis=0)
    p_full = np.tile(ps, (n_q, 1))
    return PhaseSpaceDensity(q_full, p_full, np.full(n_q * n_p, weight),
                             acc.reshape(-1), grid_shape=grid_shape)


def husimi_mass_on_boxes(rho: FiberedDensity, k_set: PhaseBoxSet,
                         dq: float | None = None, dp: float | None = None) -> float:
    """Husimi mass on a union of phase-space boxes, resolved at the hbar scale.

    Midpoint tensor grids are laid over each box with spacings ``dq``/``dp``
    (defaults sqrt(hbar)/3 and pi*sqrt(hbar)/8, fine enough for the
    packet-width structure of the density).  Boxes are assumed disjoint.
    """
    s = np.sqrt(rho.hbar)
    dq = s / 3.0 if dq is None else dq
    dp = np.pi * s / 8.0 if dp is None else dp
    total = 0.0
    for (qlo, qhi), (plo, phi) in zip(k_set.q_bounds, k_set.p_bounds):
        q_axes = [_midpoint_axis(qlo[i], qhi[i], dq) for i in range(qlo.shape[0])]
        p_axes = [_midpoint_axis(plo[i], phi[i], dp) for i in range(plo.shape[0])]
        qs = np.stack(np.meshgrid(*q_axes, indexing="ij"), axis=-1).reshape(-1, qlo.shape[0])
        ps = np.stack(np.meshgrid(*p_axes, indexing="ij"), axis=-1).reshape(-1, plo.shape[0])
        w = float(np.prod([(qhi[i] - qlo[i]) / len(q_axes[i]) for i in range(len(q_axes))])
                  * np.prod([(phi[i] - plo[i]) / len(p_axes[i]) for i in range(len(p_axes))]))
        total += husimi(rho, qs, ps, w).mass
    return total


def _midpoint_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(2, int(np.ceil((hi - lo) / step)))
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def observe(rho: FiberedDensity, region: Region) -> float:
    """Fiber-averaged trace of the density masked to a cell region.

    Position-grid quadrature of the fiber densities over the region; a grid
    point contributes when its center lies in the (periodized) region.
    """
    if region.is_empty:
        return 0.0
    n = 2 * rho.m + 1
    pts = position_grid(rho.lat, n)
    mask = region.contains(pts).astype(float) * grid_weight(rho.lat, n)
    total = 0.0
    for ik in range(rho.kgrid.size):
        vals = coeffs_to_values(rho.vectors[ik].reshape((-1,) + rho.coeff_shape), rho.lat, n)
        dens = np.abs(vals.reshape(rho.rank, -1)) ** 2
        total += float(np.sum(rho.lambdas[ik] @ dens * mask))
    return total / rho.kgrid.size
