"""Configuration-driven experiment runner.

Subcommands: ``bloch-check``, ``evolve``, ``husimi``, ``metric``, ``stability``,
``constants``, ``verify``.  Each reads one config file, writes CSV artifacts
with a provenance comment, and uses exit codes

    0  success (for ``verify``: margin within the error budget)
    1  verify margin below the budget
    2  config parse error
    3  config validation error
    4  numerical accuracy error (tail or aliasing beyond tolerance)

Deterministic by construction: reductions run in fixed order and the only
randomness (quasi-random sampling of K) is seeded from the config hash.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import __version__
from .bloch import KGrid, bloch_transform, grid_weight, inverse_bloch, position_grid, \
    set_fft_workers, translate_window
from .config import load_config
from .errors import AccuracyError, ConfigParseError, ConfigValidationError
from .observability import (constant_pure, constant_toeplitz, c_bold, default_p_max,
                            gaussian_bump_on_k, hbar_threshold, observed_time_integral,
                            std_dev, verify_pure_theorem, verify_toeplitz_theorem)
from .quantization import FiberedDensity, PhaseSpaceDensity, husimi, periodic_trace, \
    toeplitz_quantize
from .states import CoherentParams, coherent_state, coherent_coeff_batch
from .transport_metric import CostParams, coupling_energy_husimi, coupling_energy_toeplitz, \
    gronwall_rate, stability_envelope
from .classical_dynamics import gc_constant


def _provenance(cfg_hash: str) -> str:
    return f"# blochlab {__version__} config={cfg_hash}"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _write_csv(path, header, rows, cfg_hash):
    with open(path, "w") as fh:
        fh.write(_provenance(cfg_hash) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _build_density(cfg, scn) -> PhaseSpaceDensity:
    f = PhaseSpaceDensity.from_function(gaussian_bump_on_k(scn), scn.lat, scn.disc.n_q,
                                        scn.disc.n_p, default_p_max(scn))
    return f.pruned(scn.disc.prune_tol).normalized()


def _build_fibered(cfg, scn) -> FiberedDensity:
    kgrid = KGrid.monkhorst_pack(scn.lat, scn.disc.n_k)
    if scn.initial_kind == "pure":
        d = scn.lat.dimension
        q0 = np.zeros(d) if scn.center_q is None else scn.center_q
        p0 = np.zeros(d) if scn.center_p is None else scn.center_p
        vecs = np.empty((kgrid.size, 1, (2 * scn.disc.m + 1) ** d), dtype=complex)
        for ik in range(kgrid.size):
            vecs[ik, 0] = coherent_coeff_batch(
                q0[None, :], (p0 - scn.hbar * kgrid.points[ik])[None, :],
                scn.hbar, scn.lat, scn.disc.m)[0]
        return FiberedDensity(kgrid, scn.lat, scn.disc.m, scn.hbar,
                              np.ones((kgrid.size, 1)), vecs)
    f = _build_density(cfg, scn)
    return toeplitz_quantize(f, scn.lat, kgrid, scn.disc.m, scn.hbar)


def _cmd_bloch_check(cfg, scn, out, cfg_hash) -> int:
    """Isometry and round-trip self-checks at the configured sizes."""
    lat = scn.lat
    kgrid = KGrid.monkhorst_pack(lat, scn.disc.n_k)
    rng = np.random.default_rng(scn.disc.seed)
    rows = []
    ok = True
    for trial in range(5):
        n_pkts = 3
        qs = rng.uniform(-0.4, 0.4, (n_pkts, lat.dimension))
        ps = rng.uniform(-0.8, 0.8, (n_pkts, lat.dimension))
        amps = rng.standard_normal(n_pkts) + 1j * rng.standard_normal(n_pkts)
        packets = [CoherentParams(qs[i], ps[i], scn.hbar) for i in range(n_pkts)]

        def u(pts):
            return sum(a * coherent_state(c, pts) for a, c in zip(amps, packets))

        state = bloch_transform(u, lat, kgrid, scn.disc.m, cfg.l_cut)
        avg = float(np.mean(state.fiber_norms_sq()))
        # independent norm via the packet overlap formula
        total = 0.0
        for i in range(n_pkts):
            for j in range(n_pkts):
                dq = qs[i] - qs[j]
                dp = ps[i] - ps[j]
                ov = np.exp(-(dq @ dq + dp @ dp) / (4 * scn.hbar)
                            + 1j * (ps[j] - ps[i]) @ (qs[i] + qs[j]) / (2 * scn.hbar))
                total += (np.conj(amps[i]) * amps[j] * ov).real
        iso_err = abs(avg - total) / total
        back = inverse_bloch(state, cfg.l_cut)
        shifts = lat.lattice_vector(translate_window(cfg.l_cut, lat.dimension))
        pts = position_grid(lat, 2 * scn.disc.m + 1)[None, :, :] + shifts[:, None, :]
        rt_err = float(np.max(np.abs(back.reshape(pts.shape[:-1]) - u(pts))))
        rows.append((trial, "isometry_rel_err", iso_err, 1e-10, iso_err <= 1e-10))
        rows.append((trial, "roundtrip_max_err", rt_err, 1e-8, rt_err <= 1e-8))
        ok = ok and iso_err <= 1e-10 and rt_err <= 1e-8
    _write_csv(os.path.join(out, f"{cfg.prefix}_bloch_check.csv"),
               ("trial", "check", "value", "tolerance", "pass"), rows, cfg_hash)
    if not ok:
        raise AccuracyError("bloch transform self-checks failed at configured sizes")
    return 0


def _cmd_evolve(cfg, scn, out, cfg_hash) -> int:
    rho = _build_fibered(cfg, scn)
    integral, series, times, quad_err = observed_time_integral(
        rho, scn.omega, scn.delta, scn.potential, scn.horizon,
        scn.disc.n_time_obs, scn.disc.dt)
    rows = list(zip(times, series))
    _write_csv(os.path.join(out, f"{cfg.prefix}_evolve.csv"),
               ("t", "observed"), rows, cfg_hash)
    print(f"time integral = {integral:.12g}  (quad err est {quad_err:.3g})")
    print(f"initial periodic trace = {periodic_trace(rho):.12g}")
    return 0


def _cmd_husimi(cfg, scn, out, cfg_hash) -> int:
    rho = _build_fibered(cfg, scn)
    d = scn.lat.dimension
    p_max = default_p_max(scn)
    qs = position_grid(scn.lat, scn.disc.n_q)
    dp = 2.0 * p_max / scn.disc.n_p
    axis = -p_max + (np.arange(scn.disc.n_p) + 0.5) * dp
    ps = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w = husimi(rho, qs, ps, grid_weight(scn.lat, scn.disc.n_q) * dp ** d)
    header = tuple(f"q{i}" for i in range(d)) + tuple(f"p{i}" for i in range(d)) + ("value",)
    rows = [tuple(q) + tuple(p) + (v,)
            for q, p, v in zip(w.nodes_q, w.nodes_p, w.values)]
    _write_csv(os.path.join(out, f"{cfg.prefix}_husimi.csv"), header, rows, cfg_hash)
    print(f"husimi mass = {w.mass:.12g}")
    return 0


def _cmd_metric(cfg, scn, out, cfg_hash) -> int:
    kgrid = KGrid.monkhorst_pack(scn.lat, scn.disc.n_k)
    rows = []
    if scn.initial_kind == "toeplitz":
        lam = scn.lam if scn.lam is not None else 1.0
        cost = CostParams(lam, scn.hbar, scn.geom)
        f = _build_density(cfg, scn)
        ce = coupling_energy_toeplitz(f, cost, scn.lat, kgrid, scn.disc.m)
        rows += [("coupling_energy_sq", ce.total), ("bound_sq", ce.bound),
                 ("position_part", ce.position_part), ("momentum_part", ce.momentum_part),
                 ("lambda", lam)]
    else:
        rho = _build_fibered(cfg, scn)
        ce = coupling_energy_husimi(rho, scn.disc.n_q, scn.disc.n_p, default_p_max(scn))
        rows += [("coupling_energy_sq", ce.total), ("bound_sq", ce.bound),
                 ("position_part", ce.position_part), ("momentum_part", ce.momentum_part),
                 ("std_dev", std_dev(rho)), ("c_bold", c_bold(rho))]
    _write_csv(os.path.join(out, f"{cfg.prefix}_metric.csv"),
               ("quantity", "value"), rows, cfg_hash)
    for name, value in rows:
        print(f"{name} = {value:.12g}")
    return 0


def _cmd_stability(cfg, scn, out, cfg_hash) -> int:
    if scn.initial_kind != "toeplitz":
        raise ConfigValidationError("initial.kind",
                                    "stability envelope requires a toeplitz datum")
    lam = scn.lam if scn.lam is not None else max(scn.potential.lipschitz_gradient().value, 1.0)
    cost = CostParams(lam, scn.hbar, scn.geom)
    f = _build_density(cfg, scn)
    kgrid = KGrid.monkhorst_pack(scn.lat, scn.disc.n_k)
    env = stability_envelope(f, cost, scn.potential, scn.lat, kgrid, scn.disc.m,
                             scn.horizon, n_times=20, dt=scn.disc.dt)
    rows = list(zip(env.times, env.energies, env.bounds))
    _write_csv(os.path.join(out, f"{cfg.prefix}_stability.csv"),
               ("t", "energy", "bound"), rows, cfg_hash)
    print(f"eta = {env.eta:.12g}, max energy/bound = {env.max_ratio():.12g}")
    return 0


def _cmd_constants(cfg, scn, out, cfg_hash) -> int:
    lip = scn.potential.lipschitz_gradient()
    gc = gc_constant(scn.horizon, scn.k_set, scn.omega, scn.potential, scn.lat,
                     n_time=scn.disc.n_time_gc, per_axis=scn.disc.gc_per_axis,
                     n_quasi=scn.disc.gc_quasi, seed=scn.disc.seed)
    c_t = constant_toeplitz(scn.geom, scn.horizon, lip.value)
    c_p = constant_pure(scn.geom, scn.horizon, lip.value)
    lam = scn.lam if scn.lam is not None else 1.0
    rows = [
        ("gamma_minus", scn.geom.gamma_minus),
        ("gamma_plus", scn.geom.gamma_plus),
        ("lip_grad_V", lip.value),
        ("lip_grad_V_analytic", lip.analytic),
        ("lip_grad_V_grid", lip.grid),
        ("C_GC", gc.value),
        ("GC_satisfied", int(gc.satisfied)),
        ("C_toeplitz", c_t),
        ("C_pure", c_p),
        ("eta_at_lambda", gronwall_rate(scn.geom, lam, lip.value)),
        ("hbar_threshold", hbar_threshold(gc.value, c_t, scn.delta, scn.lat.dimension)),
    ]
    _write_csv(os.path.join(out, f"{cfg.prefix}_constants.csv"),
               ("constant", "value"), rows, cfg_hash)
    for name, value in rows:
        print(f"{name} = {value:.12g}" if isinstance(value, float) else f"{name} = {value}")
    return 0


def _cmd_verify(cfg, scn, out, cfg_hash) -> int:
    report = (verify_toeplitz_theorem(scn) if scn.initial_kind == "toeplitz"
              else verify_pure_theorem(scn))
    rows = [
        ("kind", report.kind), ("lhs", report.lhs),
        ("classical_term", report.classical_term), ("penalty", report.penalty),
        ("rhs", report.rhs), ("margin", report.margin),
        ("error_budget", report.error_budget), ("passed", int(report.passed)),
        ("C_GC", report.c_gc.value), ("penalty_constant", report.c_constant),
        ("mass_on_K", report.mass_on_k), ("hbar", report.hbar),
        ("delta", report.delta), ("T", report.horizon),
        ("lip_grad_V", report.lipschitz), ("eta", report.eta),
        ("lambda_star", report.lambda_star),
        ("gronwall_factor", report.gronwall_factor),
        ("energy_bound", report.energy_bound),
        ("lhs_quad_error", report.lhs_quad_error),
    ]
    if report.threshold is not None:
        rows.append(("hbar_threshold", report.threshold))
    if report.std_dev is not None:
        rows += [("std_dev", report.std_dev), ("c_bold", report.c_bold)]
    _write_csv(os.path.join(out, f"{cfg.prefix}_verify.csv"),
               ("quantity", "value"), rows, cfg_hash)
    _write_csv(os.path.join(out, f"{cfg.prefix}_observation.csv"), ("t", "observed"),
               list(zip(report.times, report.observation_series)), cfg_hash)
    print(f"{report.kind} case: lhs = {report.lhs:.6g}, rhs = {report.rhs:.6g}, "
          f"margin = {report.margin:.6g} (budget {report.error_budget:.2g})")
    for w in report.warnings:
        print(f"warning: {w}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


_COMMANDS = {
    "bloch-check": _cmd_bloch_check,
    "evolve": _cmd_evolve,
    "husimi": _cmd_husimi,
    "metric": _cmd_metric,
    "stability": _cmd_stability,
    "constants": _cmd_constants,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blochlab",
        description="Periodic semiclassical dynamics and observability experiments.")
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=os.environ.get("BLOCHLAB_CONFIG"),
                        help="path to the experiment config (env BLOCHLAB_CONFIG)")
    parser.add_argument("--out", default=os.environ.get("BLOCHLAB_OUT", "."),
                        help="output directory for CSV artifacts (env BLOCHLAB_OUT)")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("BLOCHLAB_THREADS", "1")),
                        help="FFT worker threads (env BLOCHLAB_THREADS)")
    parser.add_argument("--tolerance-scale", type=float,
                        default=float(os.environ.get("BLOCHLAB_TOLERANCE_SCALE", "1.0")),
                        help="scales the verify error budget (env BLOCHLAB_TOLERANCE_SCALE)")
    args = parser.parse_args(argv)

    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        with open(args.config, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    cfg_hash = hashlib.sha256(raw).hexdigest()[:12]
    set_fft_workers(args.threads)
    try:
        cfg = load_config(raw.decode("utf-8"))
        scn = cfg.scenario(tolerance_scale=args.tolerance_scale)
        scn.disc.seed = int(cfg_hash, 16) % (2 ** 31)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.subcommand](cfg, scn, args.out, cfg_hash)
    except ConfigParseError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 2
    except ConfigValidationError as exc:
        print(f"config validation error: {exc}", file=sys.stderr)
        return 3
    except AccuracyError as exc:
        print(f"accuracy error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
