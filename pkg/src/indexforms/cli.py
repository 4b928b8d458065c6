"""Experiment runner: ``indexforms <experiment> --config FILE [--seed K] [--out DIR] [--format ...]``.

Every experiment returns a ``Report`` with named assertions.  Reports are
rendered with 17 significant digits so identical configurations produce
byte-identical files; wall-clock time is only recorded with ``--timing``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .base_forms import BaseGrid, exterior_derivative, integrate_over_base
from .bloch import fhs_chern_number, qwz_projection
from .boundary_family import (
    PotentialSpec,
    assemble_boundary_family,
    bloch_twisted_section,
    eta_invariant,
    perturbed_section,
    relative_eta_form,
    relative_eta_pointwise,
    relative_index,
    shift_section,
    spectral_projection,
)
from .cylinder_aps import (
    CylinderProblem,
    aps_blocks,
    aps_index,
    aps_problem,
    calderon_problem,
    calderon_projector,
    calderon_trace_difference,
    commutator_trace_defect,
    domain_projection,
    flipped_problem,
    gaussian_bump_kernel,
    kernel_dimensions,
    mode_decompose,
    periodic_kernel,
    random_flips,
    relative_index_identity,
    relative_interior_chern_form,
)
from .errors import ConfigError
from .superconnection import (
    fitted_rate,
    model_triple,
    relative_chern_form,
    relative_pairs,
    schatten_relative_chern,
    small_ladder,
    time_limit_probe,
    transgression_form,
)
from .zeta_traces import (
    HurwitzRegulator,
    ModeSymbol,
    geometric_grid,
    heat_trace_expansion_fit,
    heat_trace_samples,
    hurwitz_zeta,
    power_menu,
    pseudo_trace,
    relative_pseudo_trace,
    theorem2_rhs,
    wodzicki_residue,
)

FORMATS = ("json", "csv", "markdown")
# integrated degree-2 values match the lattice Chern number with this sign
CHERN_SIGN = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    N: int = 4
    base: Dict[str, object] = field(default_factory=lambda: {"dim": 0, "points": 8, "stencil": "centered"})
    potential: Dict[str, float] = field(default_factory=lambda: {"constant": 0.25, "theta_cos": 0.0, "base_amplitude": 0.0})
    trials: int = 1
    ladder: Dict[str, float] = field(default_factory=dict)
    tolerances: Dict[str, float] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)
    out: str = "reports"
    format: str = "json"
    timing: bool = False

    def grid(self) -> BaseGrid:
        return BaseGrid(int(self.base["dim"]), int(self.base.get("points", 8)), str(self.base.get("stencil", "centered")))

    def potential_spec(self) -> PotentialSpec:
        p = self.potential
        return PotentialSpec(float(p.get("constant", 0.25)), float(p.get("theta_cos", 0.0)),
                             float(p.get("base_amplitude", 0.0)))

    def tol(self, name: str) -> float:
        return float(self.tolerances[name])

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment, "seed": self.seed, "N": self.N, "base": dict(self.base),
            "potential": dict(self.potential), "trials": self.trials, "ladder": dict(self.ladder),
            "tolerances": dict(self.tolerances), "params": dict(self.params),
        }


@dataclass
class Assertion:
    name: str
    paper_ref: str
    lhs: object
    rhs: object
    tol: float
    comparison: str = "abs"  # abs | greater | equal

    @property
    def passed(self) -> bool:
        lhs, rhs = np.asarray(self.lhs, dtype=complex), np.asarray(self.rhs, dtype=complex)
        if self.comparison == "equal":
            return bool(np.all(lhs == rhs))
        if self.comparison == "greater":
            return bool(np.all(np.abs(lhs) > self.tol))
        diff = np.abs(lhs - rhs)
        return bool(np.all(np.isfinite(diff)) and np.all(diff <= self.tol))


@dataclass
class Report:
    experiment: str
    config: dict
    seed: int
    assertions: List[Assertion]
    series: Dict[str, list] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)
    runtime_ms: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


EXPERIMENT_DEFAULTS: Dict[str, dict] = {
    "eta": {"N": 32, "params": {"shifts": [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9]}, "tolerances": {"eta": 1e-4}},
    "relative-eta": {"N": 64, "trials": 50, "tolerances": {"additivity": 1e-12}},
    "theorem1-deg0": {"N": 16, "trials": 20, "tolerances": {"index": 0.0}},
    "theorem1-deg2": {"N": 6, "base": {"dim": 2, "points": 24, "stencil": "centered"},
                      "params": {"mass": 1.0}, "tolerances": {"chern": 0.05}},
    "aps-index": {"N": 32, "trials": 20, "tolerances": {"index": 0.0}},
    "calderon": {"N": 8, "tolerances": {"block": 1e-14}},
    "transgression": {"N": 4, "base": {"dim": 2, "points": 32, "stencil": "spectral"},
                      "ladder": {"start": 1e-3, "count": 10, "ratio": 2.0},
                      "params": {"equal_sections": False, "step": 1e-4, "strengths": [0.1, 0.05], "triple_seed": 3},
                      "tolerances": {"relative": 1e-3, "exponent": 0.1}},
    "time-limits": {"N": 4, "base": {"dim": 2, "points": 24, "stencil": "spectral"},
                    "params": {"strengths": [0.1, 0.05], "triple_seed": 3, "zero_points": 16},
                    "tolerances": {"zero": 1e-4, "rate": 0.25, "infinity": 1e-3}},
    "schatten": {"N": 6, "base": {"dim": 2, "points": 24, "stencil": "centered"}, "tolerances": {"chern": 0.05}},
    "theorem2-deg0": {"N": 4, "trials": 10, "base": {"dim": 1, "points": 8, "stencil": "centered"},
                      "potential": {"constant": 0.25, "theta_cos": 0.0, "base_amplitude": 0.2},
                      "tolerances": {"index": 1e-3}},
    "theorem2-deg2": {"N": 4, "base": {"dim": 1, "points": 8, "stencil": "centered"},
                      "potential": {"constant": 0.25, "theta_cos": 0.0, "base_amplitude": 0.2},
                      "params": {"flips": {"4": "free", "2": "free"}},
                      "tolerances": {"degree0": 1e-3, "degree2": 1e-2}},
    "commutator-defect": {"N": 4, "params": {"points": 64}, "tolerances": {"parametrix": 1e-8, "green": 1e-6, "nonzero": 1e-2}},
    "closedness": {"N": 4, "base": {"dim": 2, "points": 12, "stencil": "centered"},
                   "params": {"refinements": [12, 24, 48], "t": 1.0, "strengths": [0.1, 0.05], "triple_seed": 3},
                   "tolerances": {"order": 1.8, "floor": 1e-12}},
    "residue": {"tolerances": {"residue": 1e-6, "trace": 1e-5, "theta": 1e-6}},
}

_TOP_KEYS = {"experiment", "seed", "N", "base", "potential", "trials", "ladder", "tolerances", "params", "out", "format", "timing"}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def build_config(experiment: str, raw: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the TOML table, then command-line overrides; validated before use."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    raw = dict(raw or {})
    if "experiment" in raw and raw["experiment"] != experiment:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = _merge(_merge(ExperimentConfig(experiment).as_dict(), EXPERIMENT_DEFAULTS[experiment]), raw)
    merged = _merge(merged, {k: v for k, v in (overrides or {}).items() if v is not None})
    merged["experiment"] = experiment
    cfg = ExperimentConfig(**merged)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg.N, int) or cfg.N < 4:
        raise ConfigError("N must be an integer >= 4")
    if not isinstance(cfg.trials, int) or cfg.trials < 1:
        raise ConfigError("trials must be a positive integer")
    if cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    try:
        cfg.grid()
        cfg.potential_spec()
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid base or potential: {exc}") from exc
    for name, value in cfg.tolerances.items():
        if not isinstance(value, (int, float)) or value < 0:
            raise ConfigError(f"tolerance {name!r} must be a non-negative number")
    for name in EXPERIMENT_DEFAULTS[cfg.experiment].get("tolerances", {}):
        if name not in cfg.tolerances:
            raise ConfigError(f"missing tolerance {name!r}")
    if cfg.ladder:
        if cfg.ladder.get("start", 1) <= 0 or cfg.ladder.get("ratio", 2) <= 1 or cfg.ladder.get("count", 2) < 2:
            raise ConfigError("ladder needs start > 0, ratio > 1 and count >= 2")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# experiments


def _family(cfg: ExperimentConfig, grid: Optional[BaseGrid] = None):
    return assemble_boundary_family(grid or cfg.grid(), cfg.N, cfg.potential_spec())


def _chern_number(value: complex, degree: int = 1) -> complex:
    return CHERN_SIGN * value / ((2j * np.pi) ** degree * math.factorial(degree))


def run_eta(cfg):
    tol = cfg.tol("eta")
    out = []
    for a in cfg.params["shifts"]:
        f = assemble_boundary_family(BaseGrid(0), cfg.N, float(a))
        fit = float(np.real(eta_invariant(f, "heat_fit").component(())))
        oracle = hurwitz_zeta(0.0, a) - hurwitz_zeta(0.0, 1.0 - a)
        out.append(Assertion(f"eta a={a:g}", "eta invariant of the shifted circle operator", fit, oracle, tol))
    return out, {"a": list(cfg.params["shifts"]), "eta": [a.lhs for a in out]}, {}


def run_relative_eta(cfg):
    rng = np.random.default_rng(cfg.seed)
    f = assemble_boundary_family(BaseGrid(0), cfg.N, cfg.potential_spec())
    worst = 0.0
    for _ in range(cfg.trials):
        p1, p2, p3 = (perturbed_section(f, rng, modes=2, scale=2.0) for _ in range(3))
        lhs = relative_eta_pointwise(p1, p2) + relative_eta_pointwise(p2, p3)
        worst = max(worst, (lhs - relative_eta_pointwise(p1, p3)).max_abs())
    return [Assertion("relative eta additivity", "additivity of relative eta invariants", worst, 0.0,
                      cfg.tol("additivity"))], {}, {}


def run_theorem1_deg0(cfg):
    rng = np.random.default_rng(cfg.seed)
    f = _family(cfg)
    trace, svd = [], []
    for _ in range(cfg.trials):
        p1 = perturbed_section(f, rng, modes=2, scale=2.0)
        p2 = perturbed_section(f, rng, modes=2, scale=2.0)
        trace.append(int(np.ravel(relative_index(p1, p2, "trace"))[0]))
        svd.append(int(np.ravel(relative_index(p1, p2, "svd"))[0]))
    a = Assertion(f"trace vs SVD index over {cfg.trials} pairs", "relative index theorem, degree 0", trace, svd,
                  cfg.tol("index"), "equal")
    return [a], {"trial": list(range(cfg.trials)), "trace": trace, "svd": svd}, {}


def run_theorem1_deg2(cfg):
    grid = cfg.grid()
    f = _family(cfg, grid)
    mass = float(cfg.params["mass"])
    p1 = bloch_twisted_section(f, mass)
    p2 = spectral_projection(f)
    eta = relative_eta_form(p2, p1)
    number = _chern_number(integrate_over_base(eta.part(2)))
    oracle = fhs_chern_number(qwz_projection(grid, mass))
    tol = cfg.tol("chern")
    return [
        Assertion("integrated degree-2 eta form", "relative index theorem, degree 2", number, oracle, tol),
        Assertion("rounded Chern number", "relative index theorem, degree 2", round(float(np.real(number))),
                  round(oracle), 0.0, "equal"),
        Assertion("degree-0 part", "relative index theorem, degree 0", float(np.real(eta.component(()).mean())),
                  float(np.ravel(relative_index(p2, p1))[0]), 1e-10),
    ], {}, {"chern_sign": CHERN_SIGN}


def run_aps_index(cfg):
    rng = np.random.default_rng(cfg.seed)
    p = CylinderProblem(assemble_boundary_family(BaseGrid(0), cfg.N, cfg.potential_spec()))
    modes = mode_decompose(p)
    traces, indices, identity = [], [], []
    previous = aps_problem(p)
    for _ in range(cfg.trials):
        b = flipped_problem(p, random_flips(modes, rng, count=5, window=8), modes)
        traces.append(float(calderon_trace_difference(b)))
        indices.append(int(aps_index(b)))
        identity.append(bool(relative_index_identity(b, previous, strict=False).holds))
        previous = b
    rounded = [int(round(t)) for t in traces]
    return [
        Assertion(f"Tr(P(D) - P) vs index over {cfg.trials} sections", "index theorem on the cylinder, degree 0",
                  rounded, indices, cfg.tol("index"), "equal"),
        Assertion("trace is integral", "index theorem on the cylinder, degree 0",
                  max(abs(t - r) for t, r in zip(traces, rounded)), 0.0, 1e-8),
        Assertion("relative index identity", "index difference equals the relative index of sections",
                  identity, [True] * cfg.trials, 0.0, "equal"),
    ], {"trial": list(range(cfg.trials)), "trace": traces, "index": indices}, {"u1_boundary_operator": "-A"}


def run_calderon(cfg):
    p = CylinderProblem(assemble_boundary_family(BaseGrid(0), cfg.N, cfg.potential_spec()))
    cal = calderon_projector(p)
    lam = cal.modes.eigenvalues
    k = int(np.argmin(np.abs(lam - cfg.potential_spec().constant)))
    l0 = lam[k]
    expected = np.array([[1, np.exp(-l0)], [np.exp(-l0), np.exp(-2 * l0)]]) / (1 + np.exp(-2 * l0))
    limits = aps_blocks(cal.modes)
    err = np.linalg.norm(cal.blocks - limits, axis=(-2, -1), ord=2)
    far = np.abs(lam) >= 5
    ker, coker = kernel_dimensions(calderon_problem(p))
    return [
        Assertion("closed-form block", "Calderon projector onto Cauchy data", np.max(np.abs(cal.blocks[k] - expected)),
                  0.0, cfg.tol("block")),
        Assertion("exponential approach to APS blocks", "Calderon projector onto Cauchy data",
                  bool(np.all(err[far] <= np.exp(-np.abs(lam[far])))), True, 0.0, "equal"),
        Assertion("Calderon condition index", "index of the Calderon boundary problem", [int(ker), int(coker)], [0, 0],
                  0.0, "equal"),
    ], {"lambda": lam.tolist(), "block_error": err.tolist()}, {}


def _triple(cfg, grid):
    strengths = tuple(cfg.params.get("strengths", (0.1, 0.05)))
    return model_triple(grid, cfg.N, strengths, int(cfg.params.get("triple_seed", 3)), cfg.potential_spec().constant)


def _ladder(cfg):
    lad = cfg.ladder
    return small_ladder(float(lad.get("start", 1e-3)), int(lad.get("count", 12)), float(lad.get("ratio", 2.0)))


def run_transgression(cfg):
    grid = cfg.grid()
    p1, p2, p3 = _triple(cfg, grid)
    if cfg.params.get("equal_sections"):
        p3 = p1
    a, b = relative_pairs(p1, p2, p3)
    ladder = _ladder(cfg)
    step = float(cfg.params["step"])
    rel, dch_norm, tau_norm = [], [], []
    for t in ladder:
        h = step * t
        dch = (relative_chern_form(a, b, t + h) - relative_chern_form(a, b, t - h)) * (1 / (2 * h))
        tau = transgression_form(a, b, t)
        defect = (dch + exterior_derivative(tau)).max_abs()
        scale = dch.max_abs()
        rel.append(defect / scale if scale > 0 else defect)
        dch_norm.append(scale)
        tau_norm.append(tau.max_abs())
    tol = cfg.tol("relative")
    assertions = [Assertion(f"transgression t={t:.6g}", "transgression formula", r, 0.0, tol)
                  for t, r in zip(ladder, rel)]
    if cfg.params.get("equal_sections"):
        assertions.append(Assertion("equal sections give zero forms", "transgression formula",
                                    max(dch_norm + tau_norm), 0.0, 0.0))
    else:
        order = np.argsort(ladder)[:6]
        exponent = fitted_rate(ladder[order], np.array(tau_norm)[order])
        assertions.append(Assertion("leading exponent of the transgression form", "small-time asymptotics of the transgression form",
                                    exponent, -0.5, cfg.tol("exponent")))
    return assertions, {"t": ladder.tolist(), "relative_defect": rel, "dch_dt": dch_norm, "tau": tau_norm}, {}


def run_time_limits(cfg):
    grid = cfg.grid()
    p1, p2, p3 = _triple(cfg, grid)
    a, b = relative_pairs(p1, p2, p3)
    infinity = time_limit_probe(a, b, "infinity", sections=(p1, p2, p3))
    zgrid = BaseGrid(2, int(cfg.params["zero_points"]), grid.stencil)
    q1, q2, q3 = _triple(cfg, zgrid)
    za, zb = relative_pairs(q1, q2, q3)
    zero = time_limit_probe(za, zb, "zero", sections=(q1, q2, q3))
    tol_rate = cfg.tol("rate")
    return [
        Assertion("zero limit equals eta form", "small-time limit of the relative Chern form",
                  (zero.limit - zero.reference).max_abs(), 0.0, cfg.tol("zero")),
        Assertion("zero-limit convergence rate", "small-time limit of the relative Chern form", zero.rate,
                  zero.expected_rate, tol_rate * abs(zero.expected_rate)),
        Assertion("infinity limit equals kernel bundle Chern difference", "large-time limit of the relative Chern form",
                  (infinity.limit - infinity.reference).max_abs(), 0.0, cfg.tol("infinity")),
        Assertion("infinity residual rate", "large-time limit of the relative Chern form", infinity.rate,
                  infinity.expected_rate, tol_rate * abs(infinity.expected_rate)),
    ], {"t_zero": zero.ladder.tolist(), "residual_zero": zero.residuals.tolist(),
        "t_infinity": infinity.ladder.tolist(), "residual_infinity": infinity.residuals.tolist()}, {}


def run_closedness(cfg):
    """``d_B`` of the eta and relative Chern forms under grid refinement.

    Both forms are closed exactly in the discrete calculus, so the norms sit at
    roundoff; a convergence order is only demanded above the floor.
    """
    sizes = [int(n) for n in cfg.params["refinements"]]
    eta, chern = [], []
    for n in sizes:
        grid = BaseGrid(2, n, str(cfg.base.get("stencil", "centered")))
        p1, p2, p3 = _triple(cfg, grid)
        a, b = relative_pairs(p1, p2, p3)
        eta.append(exterior_derivative(relative_eta_form(p1, p2)).max_abs())
        chern.append(exterior_derivative(relative_chern_form(a, b, float(cfg.params["t"]))).max_abs())
    h = 1.0 / np.array(sizes, dtype=float)
    floor, order = cfg.tol("floor"), cfg.tol("order")
    out = []
    for label, norms in (("eta form", eta), ("relative Chern form", chern)):
        observed = fitted_rate(h, np.array(norms))
        ok = max(norms) <= floor or observed >= order
        out.append(Assertion(f"d_B of the {label}: at roundoff or order >= {order:g}", "closedness of the relative forms",
                             ok, True, 0.0, "equal"))
    return out, {"points": sizes, "d_eta": eta, "d_chern": chern}, {"floor": floor}


def run_schatten(cfg):
    grid = cfg.grid()
    f = _family(cfg, grid)
    shifted = schatten_relative_chern(shift_section(spectral_projection(f), 1))
    twisted = schatten_relative_chern(bloch_twisted_section(f))
    number = _chern_number(integrate_over_base(twisted.omegas[1]))
    oracle = fhs_chern_number(qwz_projection(grid))
    return [
        Assertion("shift index", "Schatten-class Grassmannian Chern character", np.unique(shifted.index).tolist(), [-1],
                  0.0, "equal"),
        Assertion("degree-0 part", "Schatten-class Grassmannian Chern character",
                  float(np.max(np.abs(shifted.form.component(()) + 1.0))), 0.0, 1e-12),
        Assertion("omega_1 quantization", "Schatten-class Grassmannian Chern character", number, oracle, cfg.tol("chern")),
    ], {}, {"chern_sign": CHERN_SIGN}


def _circle_problem(cfg):
    return CylinderProblem(_family(cfg))


def run_theorem2_deg0(cfg):
    rng = np.random.default_rng(cfg.seed)
    p = _circle_problem(cfg)
    modes = mode_decompose(p)
    out, values, indices = [], [], []
    point = (0,) * p.base.dim
    for trial in range(cfg.trials):
        b1 = flipped_problem(p, random_flips(modes, rng, 4), modes)
        b2 = flipped_problem(p, random_flips(modes, rng, 4), modes)
        value = relative_pseudo_trace(None, b1, b2, point=point).value
        index = int(np.ravel(aps_index(b1) - aps_index(b2))[0])
        values.append(value)
        indices.append(index)
        out.append(Assertion(f"relative heat constant term, pair {trial}", "relative heat trace limit is the relative index",
                             value, index, cfg.tol("index")))
    return out, {"trial": list(range(cfg.trials)), "constant_term": values, "index": indices}, {}


def run_theorem2_deg2(cfg):
    p = _circle_problem(cfg)
    a = aps_problem(p)
    flips = {int(k): str(v) for k, v in cfg.params["flips"].items()}
    b = flipped_problem(p, flips, a.modes)
    rhs = theorem2_rhs(domain_projection(b, p), domain_projection(a, p))
    t = geometric_grid()
    lhs0 = np.array([np.real(relative_interior_chern_form(b, a, x).component(())) for x in t])
    limits = np.array([heat_trace_expansion_fit(t, lhs0[:, i], power_menu(-1.0, 0.5, 6)).constant_term
                       for i in range(lhs0.shape[1])])
    lhs2 = relative_interior_chern_form(b, a, t[0]).part(2)
    return [
        Assertion("degree 0", "generalized relative index theorem", np.real(limits).tolist(),
                  np.real(rhs.component(())).tolist(), cfg.tol("degree0")),
        Assertion("degree 2", "generalized relative index theorem", (rhs.part(2) - lhs2).max_abs(), 0.0, cfg.tol("degree2")),
    ], {"t": t.tolist(), "relative_heat_trace": lhs0[:, 0].tolist()}, {"base_dim": p.base.dim}


def run_commutator_defect(cfg):
    p = CylinderProblem(assemble_boundary_family(BaseGrid(0), cfg.N, cfg.potential_spec()))
    n = int(cfg.params["points"])
    rng = np.random.default_rng(cfg.seed)
    weights = rng.normal(size=3) + 1j * rng.normal(size=3)
    par = commutator_trace_defect(p, periodic_kernel(weights, [0, 1, -2]), points=n)
    bump = commutator_trace_defect(p, gaussian_bump_kernel((0.0, 0.05), 0.2), points=n)
    return [
        Assertion("range-compatible kernel", "trace of commutators with parametrices", par.direct, 0.0, cfg.tol("parametrix")),
        Assertion("boundary kernel is nonzero", "commutator trace boundary term", bump.direct, 0.0, cfg.tol("nonzero"),
                  "greater"),
        Assertion("direct vs Green formula", "commutator trace boundary term", bump.direct, bump.boundary_formula,
                  cfg.tol("green")),
    ], {}, {}


def run_residue(cfg):
    delta = HurwitzRegulator(0.25, 1.0)
    lap = HurwitzRegulator(0.25, 2.0)
    t = geometric_grid()
    small = t[t <= 0.5]
    fit = heat_trace_expansion_fit(small, heat_trace_samples(ModeSymbol(), lap, small), power_menu(-0.5, 0.5, 6))
    return [
        Assertion("res |d|^-1", "Wodzicki residue", wodzicki_residue(ModeSymbol(abs_power=-1.0), delta), 2.0,
                  cfg.tol("residue")),
        Assertion("res |d|^-1 from heat", "Wodzicki residue",
                  wodzicki_residue(ModeSymbol(abs_power=-1.0), delta, "heat_fit"), 2.0, cfg.tol("residue")),
        Assertion("res I", "Wodzicki residue", wodzicki_residue(ModeSymbol(), delta), 0.0, cfg.tol("residue")),
        Assertion("tau(I) for the Laplacian", "zeta-regularized trace", pseudo_trace(ModeSymbol(), lap, "heat_fit").value,
                  0.0, cfg.tol("trace")),
        Assertion("theta coefficient", "heat trace expansion", float(np.real(fit.coefficient(-0.5))), math.sqrt(math.pi),
                  cfg.tol("theta")),
    ], {}, {}


EXPERIMENTS: Dict[str, Callable] = {
    "eta": run_eta,
    "relative-eta": run_relative_eta,
    "theorem1-deg0": run_theorem1_deg0,
    "theorem1-deg2": run_theorem1_deg2,
    "aps-index": run_aps_index,
    "calderon": run_calderon,
    "transgression": run_transgression,
    "time-limits": run_time_limits,
    "closedness": run_closedness,
    "schatten": run_schatten,
    "theorem2-deg0": run_theorem2_deg0,
    "theorem2-deg2": run_theorem2_deg2,
    "commutator-defect": run_commutator_defect,
    "residue": run_residue,
}


def run_experiment(cfg: ExperimentConfig) -> Report:
    start = time.perf_counter()
    assertions, series, metadata = EXPERIMENTS[cfg.experiment](cfg)
    runtime = (time.perf_counter() - start) * 1e3 if cfg.timing else None
    return Report(cfg.experiment, cfg.as_dict(), cfg.seed, assertions, series, metadata, runtime)


# ---------------------------------------------------------------------------
# rendering


def _number(x) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return '"' + repr(x) + '"'
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return format(x, ".17g")


def _plain(value):
    """Numpy and complex values to JSON-ready Python objects."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        z = complex(value)
        return z.real if abs(z.imag) <= 1e-12 * max(1.0, abs(z.real)) else {"re": z.real, "im": z.imag}
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _json(value, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _number(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        if not value:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in value):
            return "[" + ", ".join(_json(v) for v in value) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in value) + "\n" + "  " * indent + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [pad + _json(str(k)) + ": " + _json(v, indent + 1) for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def report_dict(report: Report) -> dict:
    return _plain({
        "experiment": report.experiment,
        "config": report.config,
        "seed": report.seed,
        "assertions": [{"name": a.name, "paper_ref": a.paper_ref, "lhs": a.lhs, "rhs": a.rhs, "tol": a.tol,
                        "comparison": a.comparison, "pass": a.passed} for a in report.assertions],
        "metadata": report.metadata,
        "runtime_ms": report.runtime_ms,
    })


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        return _json(report_dict(report)) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = list(report.series)
        if cols:
            writer.writerow(cols)
            length = max(len(v) for v in report.series.values())
            for i in range(length):
                row = []
                for c in cols:
                    v = report.series[c][i] if i < len(report.series[c]) else ""
                    row.append(_number(v) if isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) else v)
                writer.writerow(row)
        else:
            writer.writerow(["name", "lhs", "rhs", "tol", "pass"])
            for a in report_dict(report)["assertions"]:
                writer.writerow([a["name"], _json(a["lhs"]), _json(a["rhs"]), _number(a["tol"]), a["pass"]])
        return buf.getvalue()
    if fmt == "markdown":
        lines = [f"# {report.experiment}", "", f"seed: {report.seed}", "",
                 "| assertion | reference | lhs | rhs | tol | pass |", "|---|---|---|---|---|---|"]
        for a in report_dict(report)["assertions"]:
            lines.append(f"| {a['name']} | {a['paper_ref']} | {_json(a['lhs'])} | {_json(a['rhs'])} | "
                         f"{_number(a['tol'])} | {'yes' if a['pass'] else 'NO'} |")
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown format {fmt!r}")


def emit_report(report: Report, fmt: str, out_dir: str) -> List[Path]:
    """Write the report (and the CSV series alongside JSON) atomically; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = {"json": ".json", "csv": ".csv", "markdown": ".md"}
    formats = [fmt] + (["csv"] if fmt == "json" and report.series else [])
    paths = []
    for f in formats:
        path = out / f"{report.experiment}{suffix[f]}"
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(render(report, f))
        os.replace(tmp, path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# entry point


def parse_args(argv=None):
    parser = argparse.ArgumentParser(prog="indexforms", description="Run a numerical verification experiment.")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=FORMATS)
    parser.add_argument("--N", type=int, help="Fourier truncation")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--points", type=int, help="base grid points per axis")
    parser.add_argument("--timing", action="store_true", help="record wall-clock runtime in the report")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        raw = load_config(args.config)
        overrides = {"seed": args.seed, "out": args.out, "format": args.format, "N": args.N, "trials": args.trials,
                     "timing": True if args.timing else None}
        if args.points is not None:
            overrides["base"] = {"points": args.points}
        cfg = build_config(args.experiment, raw, overrides)
        report = run_experiment(cfg)
        paths = emit_report(report, cfg.format, cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for a in report.assertions:
        status = "PASS" if a.passed else "FAIL"
        line = f"{status} {a.name}"
        if not a.passed:
            line += f": lhs={_json(_plain(a.lhs))} rhs={_json(_plain(a.rhs))} tol={_number(a.tol)} [{a.paper_ref}]"
        print(line)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
