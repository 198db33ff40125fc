"""Line-oriented experiment configuration: parsing, validation, scenario assembly.

Format: ``[section]`` headers and ``key = value`` pairs; values are Python
literals (numbers, tuples, nested lists), comments start with ``#``.  Parsing
errors carry line/column information; validation errors name the offending
``section.key``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np

from .classical_dynamics import TrigPotential
from .errors import ConfigParseError, ConfigValidationError
from .lattice import LatticeSpec, Region, gamma_bounds
from .observability import Discretization, ObservabilityScenario
from .quantization import PhaseBoxSet

_KNOWN_SECTIONS = ("lattice", "potential", "physics", "discretization",
                   "scenario", "initial", "output")


def parse_config(text: str) -> dict:
    """Parse the config text into {section: {key: value}} with literal values."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigParseError("unterminated section header", lineno,
                                       len(line))
            name = stripped[1:-1].strip()
            if name not in _KNOWN_SECTIONS:
                raise ConfigParseError(f"unknown section [{name}]", lineno, 1)
            current = sections.setdefault(name, {})
            continue
        if current is None:
            raise ConfigParseError("key outside any [section]", lineno, 1)
        if "=" not in stripped:
            raise ConfigParseError("expected 'key = value'", lineno, 1)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigParseError("empty key", lineno, 1)
        try:
            parsed = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            parsed = value  # bare word, kept as string
        current[key] = parsed
    return sections


@dataclass
class ExperimentConfig:
    """Validated experiment description, ready to build library objects."""

    basis: np.ndarray
    terms: tuple
    hbar: float
    lam: float | None
    horizon: float
    dt: float
    disc: Discretization
    k_boxes: list
    omega_boxes: list
    delta: float
    initial_kind: str
    center_q: np.ndarray | None
    center_p: np.ndarray | None
    sigma_q: float
    sigma_p: float
    l_cut: int
    prefix: str = "out"
    raw: dict = field(default_factory=dict)

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.basis)

    def potential(self) -> TrigPotential:
        return TrigPotential(self.lattice, self.terms)

    def omega_region(self) -> Region:
        lat = self.lattice
        if not self.omega_boxes:
            return Region(np.zeros((0, 2, lat.dimension)), lat)
        boxes = np.array([[np.atleast_1d(lo), np.atleast_1d(hi)]
                          for lo, hi in self.omega_boxes], dtype=float)
        return Region(boxes, lat)

    def k_set(self) -> PhaseBoxSet:
        qb = np.array([[np.atleast_1d(a), np.atleast_1d(b)]
                       for a, b, _, _ in self.k_boxes], dtype=float)
        pb = np.array([[np.atleast_1d(c), np.atleast_1d(d)]
                       for _, _, c, d in self.k_boxes], dtype=float)
        return PhaseBoxSet(qb, pb)

    def scenario(self, tolerance_scale: float = 1.0) -> ObservabilityScenario:
        lat = self.lattice
        return ObservabilityScenario(
            lat=lat, geom=gamma_bounds(lat), potential=self.potential(),
            hbar=self.hbar, horizon=self.horizon, delta=self.delta,
            omega=self.omega_region(), k_set=self.k_set(), disc=self.disc,
            lam=self.lam, initial_kind=self.initial_kind,
            center_q=self.center_q, center_p=self.center_p,
            sigma_q=self.sigma_q, sigma_p=self.sigma_p,
            tolerance_scale=tolerance_scale)


def _require(sections: dict, section: str, key: str):
    if section not in sections or key not in sections[section]:
        raise ConfigValidationError(f"{section}.{key}", "required key is missing")
    return sections[section][key]


def _get(sections: dict, section: str, key: str, default):
    return sections.get(section, {}).get(key, default)


def load_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigParseError / ConfigValidationError."""
    sections = parse_config(text)

    basis = np.asarray(_require(sections, "lattice", "basis"), dtype=float)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise ConfigValidationError("lattice.basis", "must be a square matrix")
    d = basis.shape[0]

    raw_terms = _get(sections, "potential", "terms", [])
    terms = []
    for item in raw_terms:
        try:
            n, c, phi = item
        except (TypeError, ValueError):
            raise ConfigValidationError("potential.terms",
                                        "each term must be (index, amplitude, phase)")
        terms.append((tuple(np.atleast_1d(n).astype(int)), float(c), float(phi)))

    hbar = float(_require(sections, "physics", "hbar"))
    if not (1e-4 <= hbar <= 1.0):
        raise ConfigValidationError("physics.hbar", "supported range is [1e-4, 1]")
    horizon = float(_require(sections, "physics", "T"))
    if horizon <= 0:
        raise ConfigValidationError("physics.T", "must be positive")
    dt = float(_get(sections, "physics", "dt", 1e-3))
    if dt <= 0:
        raise ConfigValidationError("physics.dt", "must be positive")
    lam = _get(sections, "physics", "lambda", None)
    lam = float(lam) if lam is not None else None
    if lam is not None and lam <= 0:
        raise ConfigValidationError("physics.lambda", "must be positive")

    m = int(_get(sections, "discretization", "m", 64 if d == 1 else 24))
    n_k = int(_get(sections, "discretization", "n_k", 32 if d == 1 else 4))
    n_q = int(_get(sections, "discretization", "n_q", 16))
    n_p = int(_get(sections, "discretization", "n_p", 24))
    p_max = _get(sections, "discretization", "p_max", None)
    p_max = float(p_max) if p_max is not None else None
    disc = Discretization(
        m=m, n_k=n_k, n_q=n_q, n_p=n_p, p_max=p_max,
        n_time_obs=int(_get(sections, "discretization", "n_time_obs", 200)),
        n_time_gc=int(_get(sections, "discretization", "n_time_gc", 2000)),
        gc_per_axis=int(_get(sections, "discretization", "gc_per_axis", 32)),
        gc_quasi=int(_get(sections, "discretization", "gc_quasi", 1000)),
        dt=dt)
    for name, val in (("m", m), ("n_k", n_k), ("n_q", n_q), ("n_p", n_p)):
        if val < 2:
            raise ConfigValidationError(f"discretization.{name}", "must be at least 2")
    if m * np.sqrt(hbar) < 4.0:
        raise ConfigValidationError(
            "discretization.m", f"m*sqrt(hbar) = {m * np.sqrt(hbar):.2f} < 4; "
            "the packet width is unresolved")
    bw = max((max(abs(v) for v in n) for n, _, _ in terms), default=0)
    if bw and m < 2 * bw:
        raise ConfigValidationError(
            "discretization.m", f"m = {m} must be at least twice the potential "
            f"bandwidth {bw} (anti-aliasing)")

    delta = float(_require(sections, "scenario", "delta"))
    if delta <= 0:
        raise ConfigValidationError("scenario.delta", "must be positive")
    k_boxes = _require(sections, "scenario", "K")
    if not k_boxes:
        raise ConfigValidationError("scenario.K", "must be nonempty")
    for box in k_boxes:
        if len(box) != 4:
            raise ConfigValidationError("scenario.K",
                                        "each box is (q_lo, q_hi, p_lo, p_hi)")
    omega_boxes = _get(sections, "scenario", "omega", [])

    kind = str(_get(sections, "initial", "kind", "toeplitz"))
    if kind not in ("toeplitz", "pure"):
        raise ConfigValidationError("initial.kind", "must be 'toeplitz' or 'pure'")
    center_q = _get(sections, "initial", "center_q", None)
    center_p = _get(sections, "initial", "center_p", None)
    center_q = np.atleast_1d(np.asarray(center_q, dtype=float)) if center_q is not None else None
    center_p = np.atleast_1d(np.asarray(center_p, dtype=float)) if center_p is not None else None
    sigma_q = float(_get(sections, "initial", "sigma_q", 0.1))
    sigma_p = float(_get(sections, "initial", "sigma_p", 0.15))

    # momentum coverage: the plane-wave band must reach the data's momenta
    lat = LatticeSpec(basis)
    b_min = float(np.min(np.linalg.norm(lat.reciprocal, axis=1)))
    reach = hbar * m * b_min
    p_need = 6.0 * np.sqrt(hbar)
    if center_p is not None:
        p_need += float(np.max(np.abs(center_p)))
    elif k_boxes:
        p_need += float(max(np.max(np.abs(np.atleast_1d(b[2]))) for b in k_boxes)
                        + max(np.max(np.abs(np.atleast_1d(b[3]))) for b in k_boxes))
    if reach < p_need:
        raise ConfigValidationError(
            "discretization.m", f"momentum coverage hbar*m*|b| = {reach:.3f} "
            f"is below the data's requirement {p_need:.3f}")

    l_cut = int(_get(sections, "discretization", "l_cut",
                     max(1, int(np.ceil(np.sqrt(2 * hbar * 32.3) / 0.5)))))

    return ExperimentConfig(
        basis=basis, terms=tuple(terms), hbar=hbar, lam=lam, horizon=horizon, dt=dt,
        disc=disc, k_boxes=list(k_boxes), omega_boxes=list(omega_boxes), delta=delta,
        initial_kind=kind, center_q=center_q, center_p=center_p,
        sigma_q=sigma_q, sigma_p=sigma_p, l_cut=l_cut,
        prefix=str(_get(sections, "output", "prefix", "out")), raw=sections)
