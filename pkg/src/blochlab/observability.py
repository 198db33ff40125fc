"""Explicit observability constants and the end-to-end inequality verifier.

Everything here evaluates the two-sided inequality

    time-integrated observation over the enlarged region
        >=  control constant * initial mass on K  -  penalty(hbar) / delta

for the two admissible initial-data families (quantized classical densities
and fibered pure states).  The verifier computes both sides from first
principles on the configured discretization and reports the margin together
with every intermediate constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import KGrid, centered_indices, coeffs_to_values, grid_weight, position_grid
from .classical_dynamics import GCEstimate, TrigPotential, gc_constant
from .lattice import CellGeometry, LatticeSpec, Region, reduce_to_cell
from .quantization import FiberedDensity, PhaseBoxSet, PhaseSpaceDensity, \
    husimi_mass_on_boxes, toeplitz_quantize
from .quantum_dynamics import FiberHamiltonian, kinetic_phase, propagate_batch
from .states import coherent_coeff_batch
from .transport_metric import gronwall_rate


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def _toeplitz_objective(log_lam: np.ndarray, geom: CellGeometry, horizon: float,
                        lip: float) -> np.ndarray:
    lam = np.exp(log_lam)
    a = 2.0 * geom.gamma_plus / geom.gamma_minus
    with np.errstate(over="ignore"):
        num = np.expm1(a * (lam + lip ** 2 / lam) * horizon)
    return num / (lam ** 2 + lip ** 2) * np.sqrt((1.0 + lam ** 2) / 2.0)


def constant_toeplitz(geom: CellGeometry, horizon: float, lip: float,
                      coarse: int = 2001, tol: float = 1e-8) -> float:
    """Quantized-density penalty constant: prefactor times the minimized rate factor.

    The inner minimum over the cost scale is bracketed on a coarse grid in
    log-lambda over [-8, 8] and refined by golden-section search to ``tol``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if lip < 0:
        raise ValueError("Lipschitz bound must be nonnegative")
    grid = np.linspace(-8.0, 8.0, coarse)
    vals = _toeplitz_objective(grid, geom, horizon, lip)
    i = int(np.argmin(vals))
    lo = grid[max(0, i - 1)]
    hi = grid[min(coarse - 1, i + 1)]
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d_ = a + inv_phi * (b - a)
    fc = _toeplitz_objective(np.array([c]), geom, horizon, lip)[0]
    fd = _toeplitz_objective(np.array([d_]), geom, horizon, lip)[0]
    while b - a > tol:
        if fc < fd:
            b, d_, fd = d_, c, fc
            c = b - inv_phi * (b - a)
            fc = _toeplitz_objective(np.array([c]), geom, horizon, lip)[0]
        else:
            a, c, fc = c, d_, fd
            d_ = a + inv_phi * (b - a)
            fd = _toeplitz_objective(np.array([d_]), geom, horizon, lip)[0]
    best = min(fc, fd)
    return float(np.sqrt(geom.gamma_minus / (2.0 * geom.gamma_plus)) * best)


def argmin_lambda_toeplitz(geom: CellGeometry, horizon: float, lip: float) -> float:
    """Cost scale achieving (numerically) the inner minimum of the penalty constant."""
    grid = np.linspace(-8.0, 8.0, 20001)
    vals = _toeplitz_objective(grid, geom, horizon, lip)
    return float(np.exp(grid[int(np.argmin(vals))]))


def constant_pure(geom: CellGeometry, horizon: float, lip: float) -> float:
    """Pure-state penalty constant, closed form (cost scale pinned to 1)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    a = 2.0 * geom.gamma_plus / geom.gamma_minus
    return float(np.sqrt(geom.gamma_minus / (2.0 * geom.gamma_plus))
                 * np.expm1(a * (1.0 + lip ** 2) * horizon) / (1.0 + lip ** 2))


def hbar_threshold(c_gc: float, c_toeplitz: float, delta: float, dimension: int) -> float:
    """Largest hbar for which the quantized-density bound stays strictly positive."""
    if c_toeplitz <= 0:
        raise ValueError("penalty constant must be positive")
    return (delta ** 2 / dimension) * (c_gc / c_toeplitz) ** 2


# ---------------------------------------------------------------------------
# state functionals
# ---------------------------------------------------------------------------

def c_bold(rho: FiberedDensity) -> float:
    """Fiber average of the fourth power of the fiber norms (rank-1 densities)."""
    if rho.rank != 1:
        raise ValueError("requires rank-1 fibers")
    norms = np.sum(np.abs(rho.vectors[:, 0, :]) ** 2, axis=1)
    return float(np.mean(norms ** 2))


def std_dev(rho: FiberedDensity) -> float:
    """Spread functional Delta of a rank-1 fibered density.

    Per fiber: half the second periodized moment of the pair density plus the
    momentum variance (norm^2 * grad-norm^2 minus squared mean momentum);
    returns the square root of the fiber average.
    """
    if rho.rank != 1:
        raise ValueError("requires rank-1 fibers")
    lat, m, hbar = rho.lat, rho.m, rho.hbar
    d = lat.dimension
    n = 2 * m + 1
    pts = position_grid(lat, n)
    diff = pts[:, None, :] - pts[None, :, :]
    red = reduce_to_cell(diff.reshape(-1, d), lat)
    dist_sq = np.sum(red * red, axis=-1).reshape(pts.shape[0], pts.shape[0])
    w = grid_weight(lat, n)
    g = centered_indices(m, d) @ lat.reciprocal
    total = 0.0
    for ik in range(rho.kgrid.size):
        psi = rho.vectors[ik, 0]
        dens = np.abs(coeffs_to_values(psi.reshape((n,) * d), lat, n).reshape(-1)) ** 2
        pos = 0.5 * float(dens @ dist_sq @ dens) * w * w
        norm_sq = float(np.sum(np.abs(psi) ** 2))
        hg = hbar * g
        grad_sq = float(np.sum(np.sum(hg * hg, axis=-1) * np.abs(psi) ** 2))
        mean_p = (hg * np.abs(psi[:, None]) ** 2).sum(axis=0)
        total += pos + norm_sq * grad_sq - float(mean_p @ mean_p)
    return float(np.sqrt(total / rho.kgrid.size))


def chi_cutoff(region: Region, delta: float):
    """Lipschitz cell cutoff (1 - dist(x, periodized region)/delta)_+ as a callable."""
    if delta <= 0:
        raise ValueError("delta must be positive")

    def chi(points):
        return np.clip(1.0 - region.distance(points) / delta, 0.0, None)

    return chi


# ---------------------------------------------------------------------------
# scenario and report
# ---------------------------------------------------------------------------

@dataclass
class Discretization:
    """Numerical knobs for a verification run."""

    m: int = 64
    n_k: int = 32
    n_q: int = 16
    n_p: int = 24
    p_max: float | None = None
    n_time_obs: int = 200
    n_time_gc: int = 2000
    gc_per_axis: int = 32
    gc_quasi: int = 1000
    dt: float = 1e-3
    seed: int = 0
    prune_tol: float = 1e-10


@dataclass
class ObservabilityScenario:
    """Everything needed to run the inequality check once."""

    lat: LatticeSpec
    geom: CellGeometry
    potential: TrigPotential
    hbar: float
    horizon: float
    delta: float
    omega: Region
    k_set: PhaseBoxSet
    disc: Discretization = field(default_factory=Discretization)
    lam: float | None = None
    initial_kind: str = "toeplitz"          # "toeplitz" | "pure"
    center_q: np.ndarray | None = None      # bump / packet center
    center_p: np.ndarray | None = None
    sigma_q: float = 0.1
    sigma_p: float = 0.15
    tolerance_scale: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.k_set.n_boxes == 0:
            raise ValueError("K must be nonempty")


@dataclass
class TheoremReport:
    """Both sides of the observability inequality plus all auxiliary constants."""

    kind: str
    lhs: float
    classical_term: float
    penalty: float
    rhs: float
    margin: float
    error_budget: float
    passed: bool
    c_gc: GCEstimate
    c_constant: float            # penalty constant used (quantized or pure family)
    mass_on_k: float
    hbar: float
    delta: float
    horizon: float
    lipschitz: float
    eta: float                   # transport rate at the reporting cost scale
    lambda_star: float           # cost scale used in the penalty assembly
    gronwall_factor: float       # sqrt(2 g+/g-) / (delta * lambda) * (e^{eta T}-1)/eta
    energy_bound: float          # initial coupling-energy bound entering the penalty
    threshold: float | None
    threshold_ok: bool
    lhs_quad_error: float
    std_dev: float | None = None
    c_bold: float | None = None
    observation_series: np.ndarray | None = None
    times: np.ndarray | None = None
    warnings: tuple = ()


def observed_time_integral(rho: FiberedDensity, region: Region, delta: float,
                           potential: TrigPotential, horizon: float,
                           n_samples: int, dt: float):
    """Trapezoid time integral of the masked fiber-average trace along the evolution.

    The density is evolved incrementally (no restart per sample).  Returns the
    integral, the sample values, the times, and a quadrature-error estimate
    from comparing with the half-resolution trapezoid rule.
    """
    if n_samples % 2 == 1:
        n_samples += 1
    lat, m = rho.lat, rho.m
    n = 2 * m + 1
    pts = position_grid(lat, n)
    mask = (region.contains_dilated(pts, delta) if delta > 0
            else region.contains(pts)).astype(float) * grid_weight(lat, n)
    n_k, rank = rho.kgrid.size, rho.rank
    coeffs = rho.vectors.copy()
    hams = [FiberHamiltonian(lat, m, rho.kgrid.points[ik], potential, rho.hbar)
            for ik in range(n_k)]
    sample_dt = horizon / n_samples

    def observe_now():
        vals = coeffs_to_values(coeffs.reshape((-1,) + (n,) * lat.dimension), lat, n)
        dens = np.abs(vals.reshape(n_k, rank, -1)) ** 2
        per_fiber = np.einsum("kr,krg,g->k", rho.lambdas, dens, mask)
        return float(np.mean(per_fiber))

    series = np.empty(n_samples + 1)
    series[0] = observe_now()
    for i in range(1, n_samples + 1):
        if potential.is_zero:
            for ik in range(n_k):
                coeffs[ik] *= kinetic_phase(hams[ik], sample_dt).reshape(1, -1)
        else:
            for ik in range(n_k):
                coeffs[ik] = propagate_batch(
                    coeffs[ik].reshape((rank,) + (n,) * lat.dimension),
                    hams[ik], sample_dt, dt).reshape(rank, -1)
        series[i] = observe_now()
    times = np.linspace(0.0, horizon, n_samples + 1)
    trapz = getattr(np, "trapezoid", None) or np.trapz
    integral = float(trapz(series, times))
    coarse = float(trapz(series[::2], times[::2]))
    return integral, series, times, abs(integral - coarse)


def gaussian_bump_on_k(scn: ObservabilityScenario):
    q0 = np.zeros(scn.lat.dimension) if scn.center_q is None else np.atleast_1d(scn.center_q)
    p0 = np.zeros(scn.lat.dimension) if scn.center_p is None else np.atleast_1d(scn.center_p)

    def fn(q, p):
        val = np.exp(-np.sum((q - q0) ** 2, axis=-1) / (2 * scn.sigma_q ** 2)
                     - np.sum((p - p0) ** 2, axis=-1) / (2 * scn.sigma_p ** 2))
        val[~scn.k_set.contains(q, p)] = 0.0    # supported in K by construction
        return val

    return fn


def default_p_max(scn: ObservabilityScenario) -> float:
    if scn.disc.p_max is not None:
        return scn.disc.p_max
    p0 = 0.0 if scn.center_p is None else float(np.max(np.abs(scn.center_p)))
    reach = float(np.max(np.abs(scn.k_set.p_bounds)))
    return max(p0, reach) + 6.0 * np.sqrt(scn.hbar)


def _assemble_report(scn: ObservabilityScenario, kind: str, lhs: float, series, times,
                     quad_err: float, gc: GCEstimate, mass_k: float, c_const: float,
                     lam_star: float, penalty_scale: float, energy_bound: float,
                     extra: dict) -> TheoremReport:
    lip = scn.potential.lipschitz_gradient().value
    penalty = c_const * penalty_scale / scn.delta
    classical = gc.value * mass_k
    rhs = classical - penalty
    margin = lhs - rhs
    budget = 5e-3 * abs(classical) * scn.tolerance_scale
    eta = gronwall_rate(scn.geom, lam_star, lip)
    gfac = (np.sqrt(2.0 * scn.geom.gamma_plus / scn.geom.gamma_minus)
            / (scn.delta * lam_star) * np.expm1(eta * scn.horizon) / eta)
    warnings = []
    thr = None
    thr_ok = True
    if kind == "toeplitz":
        thr = hbar_threshold(gc.value, c_const, scn.delta, scn.lat.dimension)
        thr_ok = scn.hbar < thr
        if not thr_ok:
            warnings.append(
                f"hbar={scn.hbar:g} exceeds the uniform-positivity threshold {thr:.3e}; "
                "the inequality is still checked but its right side need not be positive")
    if not gc.satisfied:
        warnings.append("geometric-control estimate is zero at sample resolution")
    return TheoremReport(
        kind=kind, lhs=lhs, classical_term=classical, penalty=penalty, rhs=rhs,
        margin=margin, error_budget=budget, passed=margin >= -budget, c_gc=gc,
        c_constant=c_const, mass_on_k=mass_k, hbar=scn.hbar, delta=scn.delta,
        horizon=scn.horizon, lipschitz=lip, eta=eta, lambda_star=lam_star,
        gronwall_factor=float(gfac), energy_bound=energy_bound, threshold=thr,
        threshold_ok=thr_ok, lhs_quad_error=quad_err,
        observation_series=series, times=times, warnings=tuple(warnings), **extra)


def verify_toeplitz_theorem(scn: ObservabilityScenario) -> TheoremReport:
    """Run the inequality check for a quantized Gaussian-bump density."""
    d = scn.lat.dimension
    p_max = default_p_max(scn)
    f = PhaseSpaceDensity.from_function(gaussian_bump_on_k(scn), scn.lat, scn.disc.n_q,
                                        scn.disc.n_p, p_max)
    f = f.pruned(scn.disc.prune_tol).normalized()
    rho = toeplitz_quantize(f, scn.lat, KGrid.monkhorst_pack(scn.lat, scn.disc.n_k),
                            scn.disc.m, scn.hbar)
    lhs, series, times, quad_err = observed_time_integral(
        rho, scn.omega, scn.delta, scn.potential, scn.horizon,
        scn.disc.n_time_obs, scn.disc.dt)
    gc = gc_constant(scn.horizon, scn.k_set, scn.omega, scn.potential, scn.lat,
                     n_time=scn.disc.n_time_gc, per_axis=scn.disc.gc_per_axis,
                     n_quasi=scn.disc.gc_quasi, seed=scn.disc.seed)
    mass_k = f.mass_in(scn.k_set)
    lip = scn.potential.lipschitz_gradient().value
    c_t = constant_toeplitz(scn.geom, scn.horizon, lip)
    lam_star = argmin_lambda_toeplitz(scn.geom, scn.horizon, lip)
    # penalty is C * sqrt(d hbar)/delta; the Groenwall assembly carries the
    # coupling-energy bound sqrt((1+lam^2) d hbar / 2) at the minimizing scale
    energy_bound = float(np.sqrt((1.0 + lam_star ** 2) * d * scn.hbar / 2.0))
    return _assemble_report(scn, "toeplitz", lhs, series, times, quad_err, gc, mass_k,
                            c_t, lam_star, float(np.sqrt(d * scn.hbar)), energy_bound, {})


def verify_pure_theorem(scn: ObservabilityScenario) -> TheoremReport:
    """Run the inequality check for a coherent-family pure fibered density."""
    d = scn.lat.dimension
    kgrid = KGrid.monkhorst_pack(scn.lat, scn.disc.n_k)
    q0 = np.zeros(d) if scn.center_q is None else np.atleast_1d(scn.center_q)
    p0 = np.zeros(d) if scn.center_p is None else np.atleast_1d(scn.center_p)
    n_g = (2 * scn.disc.m + 1) ** d
    vecs = np.empty((kgrid.size, 1, n_g), dtype=complex)
    for ik in range(kgrid.size):
        vecs[ik, 0] = coherent_coeff_batch(q0[None, :], (p0 - scn.hbar * kgrid.points[ik])[None, :],
                                           scn.hbar, scn.lat, scn.disc.m)[0]
    rho = FiberedDensity(kgrid, scn.lat, scn.disc.m, scn.hbar,
                         np.ones((kgrid.size, 1)), vecs)
    lhs, series, times, quad_err = observed_time_integral(
        rho, scn.omega, scn.delta, scn.potential, scn.horizon,
        scn.disc.n_time_obs, scn.disc.dt)
    gc = gc_constant(scn.horizon, scn.k_set, scn.omega, scn.potential, scn.lat,
                     n_time=scn.disc.n_time_gc, per_axis=scn.disc.gc_per_axis,
                     n_quasi=scn.disc.gc_quasi, seed=scn.disc.seed)
    mass_k = husimi_mass_on_boxes(rho, scn.k_set)
    lip = scn.potential.lipschitz_gradient().value
    c_p = constant_pure(scn.geom, scn.horizon, lip)
    cb = c_bold(rho)
    dev = std_dev(rho)
    energy_bound = float(np.sqrt(d * scn.hbar * cb + 2.0 * dev ** 2))
    return _assemble_report(scn, "pure", lhs, series, times, quad_err, gc, mass_k,
                            c_p, 1.0, energy_bound, energy_bound,
                            {"std_dev": dev, "c_bold": cb})
