"""Hamiltonian flows, Liouville transport, and the geometric-control constant.

The integrator is Stoermer-Verlet (order 2, symplectic); trajectories are
batched over initial conditions, so the geometric-control sampler and the
transport of quadrature nodes run as single vectorized sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .lattice import LatticeSpec, Region, reduce_to_cell
from .quantization import PhaseBoxSet, PhaseSpaceDensity


@dataclass(frozen=True)
class TrigPotential:
    """Lattice-periodic potential given as a finite cosine series.

    ``terms`` is a sequence of ``(n, amplitude, phase)`` with ``n`` the integer
    lattice coordinates of a reciprocal vector; the potential is
    ``V(x) = sum_t c_t cos(G_t . x + phi_t)``, periodic by construction.
    """

    lat: LatticeSpec
    terms: tuple

    def __post_init__(self):
        norm = []
        d = self.lat.dimension
        for n, c, phi in self.terms:
            n = tuple(int(v) for v in np.atleast_1d(n))
            if len(n) != d:
                raise ValueError("reciprocal index has wrong dimension")
            norm.append((n, float(c), float(phi)))
        object.__setattr__(self, "terms", tuple(norm))

    @classmethod
    def zero(cls, lat: LatticeSpec) -> "TrigPotential":
        return cls(lat, ())

    @classmethod
    def cosine(cls, lat: LatticeSpec, n, amplitude: float, phase: float = 0.0) -> "TrigPotential":
        return cls(lat, ((n, amplitude, phase),))

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0 or all(c == 0.0 for _, c, _ in self.terms)

    @property
    def bandwidth(self) -> int:
        """Largest |n|_inf among the reciprocal indices."""
        if not self.terms:
            return 0
        return max(max(abs(v) for v in n) for n, _, _ in self.terms)

    def g_vectors(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.lat.dimension))
        return np.array([n for n, _, _ in self.terms], dtype=float) @ self.lat.reciprocal

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for (g, (_, c, phi)) in zip(self.g_vectors(), self.terms):
            out = out + c * np.cos(x @ g + phi)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for (g, (_, c, phi)) in zip(self.g_vectors(), self.terms):
            out = out - (c * np.sin(x @ g + phi))[..., None] * g
        return out

    def hessian_norm(self, x: np.ndarray) -> np.ndarray:
        """Spectral norm of the Hessian at each point of a batch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = np.zeros((x.shape[0], self.lat.dimension, self.lat.dimension))
        for (g, (_, c, phi)) in zip(self.g_vectors(), self.terms):
            h -= (c * np.cos(x @ g + phi))[:, None, None] * np.outer(g, g)[None]
        return np.linalg.norm(h, ord=2, axis=(1, 2))

    def lipschitz_gradient(self, grid_per_dim: int = 512) -> "LipschitzBound":
        """Two Lipschitz bounds for grad V: the analytic series bound and a
        dense-grid Hessian maximum inflated by 1e-3; ``value`` is their min."""
        analytic = sum(abs(c) * float(np.dot(g, g))
                       for (g, (_, c, _)) in zip(self.g_vectors(), self.terms))
        if self.is_zero:
            return LipschitzBound(0.0, 0.0, 0.0)
        d = self.lat.dimension
        axis = np.arange(grid_per_dim) / grid_per_dim - 0.5
        t = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        grid = float(np.max(self.hessian_norm(self.lat.from_fractional(t)))) * (1.0 + 1e-3)
        return LipschitzBound(min(analytic, grid), analytic, grid)


class LipschitzBound(NamedTuple):
    value: float
    analytic: float
    grid: float


class PhasePoint(NamedTuple):
    """Phase-space point(s); fields broadcast over batch shapes (..., d)."""

    x: np.ndarray
    xi: np.ndarray


def hamiltonian(x: np.ndarray, xi: np.ndarray, potential: TrigPotential) -> np.ndarray:
    return 0.5 * np.sum(np.asarray(xi) ** 2, axis=-1) + potential.value(x)


def _verlet(x, xi, t, potential: TrigPotential, dt, vel_offset=None):
    x = np.array(x, dtype=float, copy=True)
    xi = np.array(xi, dtype=float, copy=True)
    if t == 0.0:
        return PhasePoint(x, xi)
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = max(1, int(np.ceil(abs(t) / dt)))
    h = t / n_steps
    off = 0.0 if vel_offset is None else np.asarray(vel_offset, dtype=float)
    force = -potential.gradient(x)
    for _ in range(n_steps):
        x = x + h * (xi + off) + 0.5 * h * h * force
        new_force = -potential.gradient(x)
        xi = xi + 0.5 * h * (force + new_force)
        force = new_force
    return PhasePoint(x, xi)


def flow(x, xi, t: float, potential: TrigPotential, dt: float = 1e-3) -> PhasePoint:
    """Stoermer-Verlet approximation of the Hamiltonian flow; negative t reverses."""
    return _verlet(x, xi, t, potential, dt)


def k_flow(x, xi, k, t: float, potential: TrigPotential, hbar: float,
           dt: float = 1e-3) -> PhasePoint:
    """Fiber flow: the plain flow started at momentum xi + hbar*k, shifted back."""
    k = np.asarray(k, dtype=float)
    shifted = _verlet(x, np.asarray(xi, dtype=float) + hbar * k, t, potential, dt)
    return PhasePoint(shifted.x, shifted.xi - hbar * k)


def k_flow_direct(x, xi, k, t: float, potential: TrigPotential, hbar: float,
                  dt: float = 1e-3) -> PhasePoint:
    """Fiber flow by integrating the offset system directly (consistency oracle)."""
    return _verlet(x, xi, t, potential, dt, vel_offset=hbar * np.asarray(k, dtype=float))


def transport_density(f: PhaseSpaceDensity, t: float, potential: TrigPotential,
                      lat: LatticeSpec, dt: float = 1e-3) -> PhaseSpaceDensity:
    """Push the quadrature nodes forward along the flow; weights and values ride along.

    Measure preservation of the flow makes this the transported density; node
    positions are reduced back to the unit cell (the density is periodic in x).
    """
    moved = flow(f.nodes_q, f.nodes_p, t, potential, dt)
    return PhaseSpaceDensity(reduce_to_cell(moved.x, lat), moved.xi,
                             f.weights.copy(), f.values.copy(), None, f.p_max)


def sample_trajectory(x, xi, horizon: float, potential: TrigPotential,
                      dt: float = 1e-3, n_samples: int = 100):
    """Times and phase-space states along one (or a batch of) trajectories."""
    times = np.linspace(0.0, horizon, n_samples + 1)
    xs = [np.array(x, dtype=float, copy=True)]
    xis = [np.array(xi, dtype=float, copy=True)]
    step = horizon / n_samples
    for _ in range(n_samples):
        out = _verlet(xs[-1], xis[-1], step, potential, dt)
        xs.append(out.x)
        xis.append(out.xi)
    return times, np.stack(xs), np.stack(xis)


def dump_trajectory_csv(path, x, xi, horizon: float, potential: TrigPotential,
                        dt: float = 1e-3, n_samples: int = 100) -> None:
    """Write one trajectory as CSV rows (t, x..., xi...)."""
    times, xs, xis = sample_trajectory(x, xi, horizon, potential, dt, n_samples)
    d = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1).shape[0]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"x{i}" for i in range(d))
                 + "," + ",".join(f"xi{i}" for i in range(d)) + "\n")
        for t, xv, xiv in zip(times, xs.reshape(len(times), -1),
                              xis.reshape(len(times), -1)):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in xv] + [f"{v:.17g}" for v in xiv]
            fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class GCEstimate:
    """Sampled lower estimate of the geometric-control observability constant."""

    value: float
    satisfied: bool      # False when some sampled trajectory never meets the region
    n_samples: int
    time_step: float

    def __float__(self):
        return self.value


def gc_constant(horizon: float, k_set: PhaseBoxSet, omega: Region,
                potential: TrigPotential, lat: LatticeSpec,
                n_time: int = 2000, per_axis: int = 32, n_quasi: int = 1000,
                seed: int = 0) -> GCEstimate:
    """Minimum over sampled starts in K of the time the trajectory spends in omega.

    The position is reduced to the cell before the region test, so the
    indicator sees the periodized region.  Midpoint time sampling on a uniform
    grid; the result is an estimate (finer-than-grid grazing passes are
    invisible), reported with the time resolution used.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    qg, pg = k_set.grid_samples(per_axis)
    qq, pq = k_set.quasi_samples(n_quasi, seed)
    x = np.concatenate([qg, qq])
    xi = np.concatenate([pg, pq])
    if x.shape[0] == 0:
        raise ValueError("empty sample set for K")
    h = horizon / n_time
    inside = np.zeros(x.shape[0])
    force = -potential.gradient(x)
    for _ in range(n_time):
        x_mid = x + 0.5 * h * xi + 0.125 * h * h * force
        inside += omega.contains(reduce_to_cell(x_mid, lat))
        x = x + h * xi + 0.5 * h * h * force
        new_force = -potential.gradient(x)
        xi = xi + 0.5 * h * (force + new_force)
        force = new_force
    occupation = inside * h
    value = float(np.min(occupation))
    return GCEstimate(value=value, satisfied=value > 0.0,
                      n_samples=x.shape[0], time_step=h)
