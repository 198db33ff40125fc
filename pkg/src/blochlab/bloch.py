"""Discrete Bloch transform between wave packets on R^d and fibered periodic fields.

A periodic field is stored by its plane-wave coefficients ``c_n`` on the
centered index grid ``n in [-M..M]^d`` for the orthonormal basis
``e_G(y) = exp(i G . y) / sqrt(|cell|)`` with ``G = n @ B``.  Position-space
values live on the uniform fractional grid ``t_j = j/N - 1/2`` (N odd), so
coefficient/value conversion is an FFT with an alternating-sign twist.

The quasimomentum grid is a Monkhorst-Pack-style uniform grid shifted off the
reciprocal-cell boundary; the normalized cell average over k becomes a plain
mean over grid points.  With that pairing the transform is exactly unitary on
functions supported inside the N_k-cell window (the discrete k average kills
all cross terms between distinct translates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import AccuracyError
from .lattice import LatticeSpec

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Set the worker count used by batched FFTs (CLI --threads)."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def centered_indices(m: int, d: int) -> np.ndarray:
    """Integer index grid, shape ((2m+1)^d, d), in C order of the coefficient array."""
    axis = np.arange(-m, m + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def g_vectors(lat: LatticeSpec, m: int) -> np.ndarray:
    """Reciprocal vectors G = n @ B on the centered index grid, shape ((2m+1)^d, d)."""
    return centered_indices(m, lat.dimension) @ lat.reciprocal


def _alt_sign(n: int, d: int) -> np.ndarray:
    """(-1)^(sum n_i) over the centered index grid -m..m, outer product over d axes."""
    m = (n - 1) // 2
    one = np.where(np.arange(-m, m + 1) % 2 == 0, 1.0, -1.0)
    out = one
    for _ in range(d - 1):
        out = np.multiply.outer(out, one)
    return out


def position_grid(lat: LatticeSpec, n: int) -> np.ndarray:
    """Uniform grid of n^d points on the half-open cell, fractional t = j/n - 1/2."""
    d = lat.dimension
    axis = np.arange(n) / n - 0.5
    t = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return lat.from_fractional(t)


def grid_weight(lat: LatticeSpec, n: int) -> float:
    """Quadrature weight |cell| / n^d of the uniform position grid."""
    return lat.cell_volume / n ** lat.dimension


def coeffs_to_values(coeffs: np.ndarray, lat: LatticeSpec, nout: int | None = None) -> np.ndarray:
    """Evaluate plane-wave coefficients on the position grid (batched over leading axes).

    ``coeffs`` has shape ``(..., 2M+1, ..., 2M+1)`` with d trailing axes; the
    result replaces them with ``(nout,)*d``.  ``nout`` must be odd and at
    least ``2M+1`` (zero padding gives anti-aliased evaluation).
    """
    d = lat.dimension
    nin = coeffs.shape[-1]
    if nout is None:
        nout = nin
    if nout % 2 == 0 or nout < nin:
        raise ValueError("nout must be odd and >= 2M+1")
    pad = (nout - nin) // 2
    if pad:
        width = [(0, 0)] * (coeffs.ndim - d) + [(pad, pad)] * d
        coeffs = np.pad(coeffs, width)
    axes = tuple(range(coeffs.ndim - d, coeffs.ndim))
    signed = coeffs * _alt_sign(nout, d)
    vals = sfft.ifftn(sfft.ifftshift(signed, axes=axes), axes=axes, workers=_FFT_WORKERS)
    return vals * (nout ** d / np.sqrt(lat.cell_volume))


def values_to_coeffs(values: np.ndarray, lat: LatticeSpec, m: int) -> np.ndarray:
    """Inverse of coeffs_to_values; truncates to order m (exact for band-limited data)."""
    d = lat.dimension
    n = values.shape[-1]
    if n % 2 == 0 or n < 2 * m + 1:
        raise ValueError("value grid must be odd and >= 2m+1")
    axes = tuple(range(values.ndim - d, values.ndim))
    spec = sfft.fftshift(sfft.fftn(values, axes=axes, workers=_FFT_WORKERS), axes=axes)
    spec = spec * (np.sqrt(lat.cell_volume) / n ** d) * _alt_sign(n, d)
    if n > 2 * m + 1:
        cut = (n - (2 * m + 1)) // 2
        sl = [slice(None)] * (values.ndim - d) + [slice(cut, n - cut)] * d
        spec = spec[tuple(sl)]
    return spec


@dataclass
class PeriodicField:
    """One periodic function as plane-wave coefficients of order m."""

    lat: LatticeSpec
    m: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        want = (2 * self.m + 1,) * self.lat.dimension
        if self.coeffs.shape != want:
            raise ValueError(f"coefficient array must have shape {want}")

    @classmethod
    def from_values(cls, values: np.ndarray, lat: LatticeSpec, m: int) -> "PeriodicField":
        return cls(lat, m, values_to_coeffs(np.asarray(values, dtype=complex), lat, m))

    def values(self, nout: int | None = None) -> np.ndarray:
        return coeffs_to_values(self.coeffs, self.lat, nout)

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def inner(self, other: "PeriodicField") -> complex:
        return complex(np.vdot(self.coeffs, other.coeffs))

    def g_vectors(self) -> np.ndarray:
        return g_vectors(self.lat, self.m)


@dataclass(frozen=True)
class KGrid:
    """Quasimomentum sample points in the reciprocal cell with uniform weights."""

    points: np.ndarray
    lat: LatticeSpec

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("k-grid must be nonempty")
        frac = pts @ np.linalg.inv(self.lat.reciprocal)
        if np.any(np.abs(frac) > 0.5 + 1e-12):
            raise ValueError("k-grid points must lie in the reciprocal cell")
        object.__setattr__(self, "points", pts)

    @classmethod
    def monkhorst_pack(cls, lat: LatticeSpec, nk: int) -> "KGrid":
        """Uniform nk^d grid, shifted half a step so the cell boundary is avoided."""
        d = lat.dimension
        axis = (np.arange(nk) + 0.5) / nk - 0.5
        u = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        return cls(u @ lat.reciprocal, lat)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)


def fiber_average(values: np.ndarray) -> np.ndarray:
    """Normalized average over the fiber axis (axis 0), deterministic reduction."""
    values = np.asarray(values)
    if values.shape[0] == 0:
        raise ValueError("fiber_average: empty grid")
    return np.add.reduce(values, axis=0) / values.shape[0]


@dataclass
class FiberedState:
    """One periodic field per k-grid point, stored as a stacked coefficient array."""

    kgrid: KGrid
    lat: LatticeSpec
    m: int
    coeffs: np.ndarray  # shape (n_k,) + (2m+1,)*d

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        want = (self.kgrid.size,) + (2 * self.m + 1,) * self.lat.dimension
        if self.coeffs.shape != want:
            raise ValueError(f"fibered coefficients must have shape {want}")

    def fiber(self, i: int) -> PeriodicField:
        return PeriodicField(self.lat, self.m, self.coeffs[i])

    def fiber_norms_sq(self) -> np.ndarray:
        return np.sum(np.abs(self.coeffs.reshape(self.kgrid.size, -1)) ** 2, axis=1)

    def dump_csv(self, path) -> None:
        """Flat debug dump: one row (k_index, flat G index, re, im) per coefficient."""
        flat = self.coeffs.reshape(self.kgrid.size, -1)
        with open(path, "w") as fh:
            fh.write("k_index,g_index,re,im\n")
            for ik in range(flat.shape[0]):
                for ig in range(flat.shape[1]):
                    c = flat[ik, ig]
                    fh.write(f"{ik},{ig},{c.real:.17g},{c.imag:.17g}\n")


def translate_window(l_cut: int, d: int) -> np.ndarray:
    """Integer translates n with |n|_inf <= l_cut, shape ((2l_cut+1)^d, d)."""
    axis = np.arange(-l_cut, l_cut + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def default_window(lat: LatticeSpec, hbar: float, gamma_minus: float, tol: float = 1e-14) -> int:
    """Smallest l_cut with exp(-(l_cut*gamma_minus)^2 / (2 hbar)) below tol."""
    l_cut = int(np.ceil(np.sqrt(2.0 * hbar * np.log(1.0 / tol)) / gamma_minus))
    return max(1, l_cut)


def bloch_transform(u, lat: LatticeSpec, kgrid: KGrid, m: int, l_cut: int,
                    tail_tol: float = 1e-10) -> FiberedState:
    """Discrete Bloch transform of a decaying function on R^d.

    Parameters
    ----------
    u : callable
        Vectorized wave packet, maps an array of points (..., d) to complex
        amplitudes (...,).
    l_cut : int
        Lattice-sum window; translates with |n|_inf <= l_cut are summed.  The
        window should fit inside the k-grid supercell (2*l_cut+1 <= n_k per
        axis) or cross terms between far translates alias.
    tail_tol : float
        Relative L2 mass allowed on the outermost translate shell; exceeding
        it raises AccuracyError (window too small).

    The fiber at k holds the coefficients of
    ``x -> sum_ell u(x + ell) exp(-i k . (x + ell))`` on the cell grid.
    """
    d = lat.dimension
    n = 2 * m + 1
    x = position_grid(lat, n)
    window = translate_window(l_cut, d)
    shifts = lat.lattice_vector(window)
    pts = x[None, :, :] + shifts[:, None, :]
    uvals = np.asarray(u(pts), dtype=complex)

    mass = np.sum(np.abs(uvals) ** 2, axis=1)
    shell = np.max(np.abs(window), axis=1) == l_cut
    total = float(np.sum(mass))
    if total > 0 and float(np.sum(mass[shell])) > tail_tol ** 2 * total:
        raise AccuracyError(
            f"translate window l_cut={l_cut} too small: outer-shell mass "
            f"{np.sum(mass[shell]) / total:.3e} of total exceeds tol^2")

    phase_shift = np.exp(-1j * kgrid.points @ shifts.T)          # (n_k, n_window)
    summed = phase_shift @ uvals                                 # (n_k, n_grid)
    fiber_vals = summed * np.exp(-1j * kgrid.points @ x.T)       # times e^{-ik.x}
    fiber_vals = fiber_vals.reshape((kgrid.size,) + (n,) * d)
    coeffs = values_to_coeffs(fiber_vals, lat, m)
    return FiberedState(kgrid, lat, m, coeffs)


def inverse_bloch(state: FiberedState, l_cut: int) -> np.ndarray:
    """Reconstruct the wave packet on the translate-window grid.

    Returns values of shape ``(n_window, n^d...)`` matching the point layout
    ``position_grid + translate``; the average over fibers implements the
    normalized-cell-average inversion formula.
    """
    lat, m = state.lat, state.m
    n = 2 * m + 1
    x = position_grid(lat, n)
    shifts = lat.lattice_vector(translate_window(l_cut, lat.dimension))
    vals = coeffs_to_values(state.coeffs, lat, n).reshape(state.kgrid.size, -1)
    phase_x = np.exp(1j * state.kgrid.points @ x.T)              # (n_k, n_grid)
    phase_shift = np.exp(1j * state.kgrid.points @ shifts.T)     # (n_k, n_window)
    out = np.einsum("kw,kg->wg", phase_shift, vals * phase_x) / state.kgrid.size
    return out.reshape((shifts.shape[0],) + (n,) * lat.dimension)
