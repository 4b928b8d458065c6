"""Zeta-regularised traces: Hurwitz oracle, heat-expansion fits, pseudo-traces and residues."""

from __future__ import annotations

import math
from decimal import Decimal, localcontext
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import FitDivergenceError

FIT_TOL = 1e-8
CROSS_TOL = 1e-4
CONDITION_LIMIT = 1e12

def _bernoulli_coefficients(count: int) -> list:
    """``B_{2p}/(2p)!`` for ``p = 1..count`` as exact fractions (Akiyama–Tanigawa)."""
    n = 2 * count
    row = [Fraction(0)] * (n + 1)
    numbers = []
    for m in range(n + 1):
        row[m] = Fraction(1, m + 1)
        for j in range(m, 0, -1):
            row[j - 1] = j * (row[j - 1] - row[j])
        numbers.append(row[0])
    return [numbers[2 * p] / math.factorial(2 * p) for p in range(1, count + 1)]


def _to_longdouble(x: Fraction) -> np.longdouble:
    with localcontext() as ctx:
        ctx.prec = 40
        return np.longdouble(str(Decimal(x.numerator) / Decimal(x.denominator)))


_EM_TERMS = 40
_BERNOULLI_EXACT = _bernoulli_coefficients(_EM_TERMS)
_BERNOULLI_LONG = [_to_longdouble(c) for c in _BERNOULLI_EXACT]


def _rising(s, k: int):
    out = s * 0 + 1
    for j in range(k):
        out *= s + j
    return out


def hurwitz_zeta(s, q: float, tol: float = 1e-12):
    """``ζ_H(s, q) = Σ_{n≥0} (n + q)^{-s}`` continued to ``s ≠ 1``.

    Euler–Maclaurin summation: ``M`` explicit terms, the integral and boundary
    term, and Bernoulli corrections until the remainder bound

        |R| ≤ 2 |B_{2p}|/(2p)! · |(s)_{2p}| · (M+q)^{1-σ-2p} / (σ+2p-1)

    falls below ``tol`` (relative to the value when that exceeds one).
    Returns a real float for real ``s``.  Supported for ``Re s >= -6``.  For
    ``Re s < 0`` the explicit terms and the integral cancel heavily, so that
    branch runs in extended precision.  Any ``q > 0`` is accepted.
    """
    if not q > 0.0:
        raise ValueError(f"q must be positive, got {q}")
    s = complex(s)
    if abs(s - 1.0) < 1e-15:
        raise ValueError("ζ_H(s, q) has a pole at s = 1")
    sigma = s.real
    if sigma < -6:
        raise ValueError(f"Re s = {sigma} is outside the supported range Re s >= -6")
    if sigma >= 0:
        M = max(12, int(math.ceil(abs(s))) + 12)
        sc, qc, coeffs = s, float(q), [float(c) for c in _BERNOULLI_EXACT]
    else:
        M = max(8, int(math.ceil(abs(s.imag))) + 8)
        sc, qc, coeffs = np.clongdouble(s.real) + 1j * np.clongdouble(s.imag), np.longdouble(q), _BERNOULLI_LONG
    x = M + qc
    head = sum((n + qc) ** (-sc) for n in range(M))
    total = head + x ** (1 - sc) / (sc - 1) + x ** (-sc) / 2
    for p in range(1, _EM_TERMS + 1):
        coeff = coeffs[p - 1]
        total += coeff * _rising(sc, 2 * p - 1) * x ** (-sc - 2 * p + 1)
        expo = sigma + 2 * p - 1
        if expo <= 0:
            continue
        bound = 2.0 * abs(float(coeff)) * abs(complex(_rising(s, 2 * p))) * float(x) ** (1.0 - sigma - 2 * p) / expo
        if bound <= tol * max(1.0, abs(complex(total))):
            break
    else:
        raise FitDivergenceError(f"Euler–Maclaurin remainder did not reach {tol:g} for s={s}")
    total = complex(total)
    if s.imag == 0.0:
        return float(total.real)
    return total


def geometric_grid(lo: float = 1e-4, hi: float = 1.0, count: int = 24) -> np.ndarray:
    return np.geomspace(lo, hi, count)


def power_menu(first: float, step: float, count: int) -> list:
    """Exponents ``first, first + step, ...`` (``count`` of them)."""
    return [first + j * step for j in range(count)]


@dataclass
class HeatExpansionFit:
    """Least-squares fit ``Σ c_α t^α + Σ c'_β t^β log t`` on a sampled grid."""

    t: np.ndarray
    values: np.ndarray
    exponents: list
    log_exponents: list
    coefficients: Dict[float, complex]
    log_coefficients: Dict[float, complex]
    residual: float
    condition: float

    def coefficient(self, power: float) -> complex:
        for p, c in self.coefficients.items():
            if abs(p - power) < 1e-12:
                return c
        return 0.0

    def log_coefficient(self, power: float = 0.0) -> complex:
        for p, c in self.log_coefficients.items():
            if abs(p - power) < 1e-12:
                return c
        return 0.0

    @property
    def constant_term(self) -> complex:
        return self.coefficient(0.0)


def heat_trace_expansion_fit(t, values, exponent_menu: Sequence[float], with_log: bool = False,
                             log_menu: Optional[Sequence[float]] = None, fit_tol: float = FIT_TOL) -> HeatExpansionFit:
    """Fit sampled heat-trace values by powers of ``t`` (and optionally ``t^β log t``).

    Raises ``FitDivergenceError`` when the maximal absolute residual exceeds
    ``fit_tol`` or the column-scaled design matrix has condition number above
    1e12.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values)
    exponents = list(exponent_menu)
    log_exponents = list(log_menu if log_menu is not None else ([0.0] if with_log else []))
    n_terms = len(exponents) + len(log_exponents)
    if len(t) < 2 * n_terms:
        raise ValueError(f"need at least {2 * n_terms} samples for {n_terms} terms, got {len(t)}")
    if np.any(t <= 0):
        raise ValueError("sample times must be positive")
    cols = [t ** a for a in exponents] + [t ** b * np.log(t) for b in log_exponents]
    design = np.stack(cols, axis=1)
    scale = np.linalg.norm(design, axis=0)
    scaled = design / scale
    condition = float(np.linalg.cond(scaled))
    if condition > CONDITION_LIMIT:
        raise FitDivergenceError(f"design matrix condition number {condition:.2e} exceeds {CONDITION_LIMIT:g}")
    sol, *_ = np.linalg.lstsq(scaled, values, rcond=None)
    sol = sol / scale
    residual = float(np.max(np.abs(design @ sol - values)))
    if residual > fit_tol:
        raise FitDivergenceError(f"heat expansion fit residual {residual:.3e} exceeds {fit_tol:g}")
    k = len(exponents)
    return HeatExpansionFit(t, values, exponents, log_exponents,
                            dict(zip(exponents, sol[:k])), dict(zip(log_exponents, sol[k:])),
                            residual, condition)


@dataclass(frozen=True)
class HurwitzRegulator:
    """``Δ = |∂|^power`` for ``∂ = diag(n + shift)``, ``n ∈ Z``, ``0 < shift < 1``."""

    shift: float
    power: float = 1.0

    @property
    def order(self) -> float:
        return self.power

    def eigenvalues(self, n: np.ndarray) -> np.ndarray:
        return np.abs(n + self.shift) ** self.power

    def describe(self) -> str:
        return f"|∂_a|^{self.power:g} with a={self.shift:g}"


@dataclass(frozen=True)
class ModeSymbol:
    """Mode-diagonal operator ``coefficient · sign(λ)^sign_power · |λ|^abs_power`` plus finite rank.

    ``finite_rank`` maps a mode ``n`` to an additional diagonal entry; off-diagonal
    entries of a finite-rank term never contribute to a trace against a
    mode-diagonal regulator, so only its diagonal is stored.
    """

    sign_power: int = 0
    abs_power: float = 0.0
    coefficient: float = 1.0
    finite_rank: Dict[int, float] = field(default_factory=dict)

    @classmethod
    def finite(cls, entries: Dict[int, float]) -> "ModeSymbol":
        return cls(coefficient=0.0, finite_rank=dict(entries))

    def weights(self, n: np.ndarray, shift: float) -> np.ndarray:
        lam = n + shift
        out = self.coefficient * np.sign(lam) ** self.sign_power * np.abs(lam) ** self.abs_power
        if self.finite_rank:
            out = out.astype(float).copy()
            for mode, value in self.finite_rank.items():
                out[n == mode] += value
        return out

    def describe(self) -> str:
        parts = []
        if self.coefficient:
            parts.append(f"{self.coefficient:g}·sign^{self.sign_power}·|∂|^{self.abs_power:g}")
        if self.finite_rank:
            parts.append(f"finite rank on modes {sorted(self.finite_rank)}")
        return " + ".join(parts) or "0"


@dataclass
class PseudoTraceResult:
    value: float
    method: str
    regulator: str
    residue_part: Optional[float] = None
    fit: Optional[HeatExpansionFit] = None


def _zeta_function(F: ModeSymbol, delta: HurwitzRegulator) -> Callable[[float], complex]:
    """``s ↦ Σ_n F_n Δ_n^{-s}`` via Hurwitz zeta functions (finite-rank part added exactly)."""
    a = delta.shift % 1.0
    if a == 0.0:
        raise ValueError("regulator has a zero mode")

    def zeta(s):
        total = 0.0
        if F.coefficient:
            arg = delta.power * s - F.abs_power
            pos = hurwitz_zeta(arg, a)
            neg = hurwitz_zeta(arg, 1.0 - a)
            total += F.coefficient * (pos + (-1) ** F.sign_power * neg)
        for mode, value in F.finite_rank.items():
            lam = abs(mode + delta.shift)
            total += value * lam ** (-delta.power * s)
        return total

    return zeta


def _laurent_at_zero(zeta: Callable[[float], complex], eps: float = 1e-4):
    """Constant term and residue of a function with at most a simple pole at 0.

    Symmetric evaluation at ``±ε`` and ``±ε/2`` with one Richardson step, so the
    error is ``O(ε^4)``.
    """

    def parts(e):
        plus, minus = zeta(e), zeta(-e)
        return 0.5 * (plus + minus), 0.5 * e * (plus - minus)

    c1, r1 = parts(eps)
    c2, r2 = parts(0.5 * eps)
    return (4.0 * c2 - c1) / 3.0, (4.0 * r2 - r1) / 3.0


def heat_trace_samples(F: ModeSymbol, delta: HurwitzRegulator, t: np.ndarray, tail: float = 1e-18) -> np.ndarray:
    """``Σ_n F_n e^{-t Δ_n}`` summed until the Gaussian/exponential tail drops below ``tail``."""
    out = np.empty(len(t))
    for i, ti in enumerate(t):
        # smallest |λ| with e^{-t |λ|^p} (1 + |λ|)^{|m|} < tail, with a generous margin
        cutoff = (np.log(1.0 / tail) / ti) ** (1.0 / delta.power)
        cutoff = cutoff * 1.5 + 10
        n = np.arange(-int(cutoff) - 1, int(cutoff) + 2)
        out[i] = float(np.sum(F.weights(n, delta.shift) * np.exp(-ti * delta.eigenvalues(n))))
    return out


def _heat_menu(F: ModeSymbol, delta: HurwitzRegulator, terms: int) -> list:
    """Singular power ``t^{-(m+1)/p}`` plus the regular integer powers ``t^k``."""
    lead = round(-(F.abs_power + 1.0) / delta.power, 12)
    menu = [lead] + [float(k) for k in range(terms) if abs(k - lead) > 1e-12]
    return sorted(menu[:terms])


def pseudo_trace(F: ModeSymbol, delta: HurwitzRegulator, method: str = "closed_form",
                 t_grid: Optional[np.ndarray] = None, terms: Optional[int] = None,
                 with_log: Optional[bool] = None) -> PseudoTraceResult:
    """``LIM_{s→0} Tr(F(Δ^{-s} + Π₀(Δ)))`` for mode-diagonal model operators.

    ``closed_form`` evaluates the Hurwitz representation on both sides of
    ``s = 0`` and keeps the constant Laurent term.  ``heat_fit`` fits the
    small-``t`` expansion of ``Tr(F e^{-tΔ})``; with a ``log t`` coefficient
    ``c'`` the constant term is ``c_0 - γ c'`` (Mellin transform of
    ``t^0 log t``).  The finite-rank part of ``F`` is fitted separately on
    ``t ≤ 1/max Δ_n`` where its heat trace is a convergent power series.
    """
    if method == "closed_form":
        const, res = _laurent_at_zero(_zeta_function(F, delta))
        residue = float(np.real(res)) * delta.order
        return PseudoTraceResult(float(np.real(const)), method, delta.describe(), residue)
    if method != "heat_fit":
        raise ValueError(f"unknown method {method!r}")
    value = 0.0
    residue = 0.0
    fit = None
    if F.coefficient:
        main = ModeSymbol(F.sign_power, F.abs_power, F.coefficient)
        t = geometric_grid() if t_grid is None else np.asarray(t_grid)
        log = _has_pole(F, delta) if with_log is None else with_log
        menu = _heat_menu(F, delta, terms or _default_terms(delta, log))
        fit = heat_trace_expansion_fit(t, heat_trace_samples(main, delta, t), menu, with_log=log)
        c_log = float(np.real(fit.log_coefficient(0.0)))
        value += float(np.real(fit.constant_term)) - np.euler_gamma * c_log
        residue += -c_log * delta.order
    if F.finite_rank:
        finite = ModeSymbol.finite(F.finite_rank)
        top = max(delta.eigenvalues(np.array([m]))[0] for m in F.finite_rank)
        t = geometric_grid(1e-4, min(1.0, 1.0 / max(top, 1e-300)), 24)
        finite_fit = heat_trace_expansion_fit(t, heat_trace_samples(finite, delta, t), power_menu(0.0, 1.0, 12))
        value += float(np.real(finite_fit.constant_term))
        fit = fit or finite_fit
    return PseudoTraceResult(value, method, delta.describe(), residue, fit)


def _has_pole(F: ModeSymbol, delta: HurwitzRegulator) -> bool:
    # Hurwitz pole at delta.power*s - abs_power = 1 hits s = 0 iff abs_power = -1
    return abs(F.abs_power + 1.0) < 1e-12


def _default_terms(delta: HurwitzRegulator, with_log: bool) -> int:
    return (12 if delta.power == 1 else 8) - (1 if with_log else 0)


def wodzicki_residue(F: ModeSymbol, delta: HurwitzRegulator, method: str = "closed_form") -> float:
    """``res(F) = ord(Δ) · Res_{s=0} Tr(F Δ^{-s})``; minus ``ord(Δ)`` times the ``log t`` coefficient on the heat side."""
    if method == "closed_form":
        return pseudo_trace(F, delta, "closed_form").residue_part
    return pseudo_trace(F, delta, "heat_fit", with_log=True).residue_part


# ---------------------------------------------------------------------------
# cylinder pseudo-traces


@dataclass(frozen=True)
class CylinderModeOperator:
    """Multiplier ``weights[k]`` on mode ``k`` of the cylinder (eigenbasis of ``A``, constant in ``u``)."""

    weights: np.ndarray

    @classmethod
    def identity(cls, size: int) -> "CylinderModeOperator":
        return cls(np.ones(size))

    @classmethod
    def finite(cls, size: int, entries: Dict[int, float]) -> "CylinderModeOperator":
        w = np.zeros(size)
        for k, v in entries.items():
            w[k] = v
        return cls(w)

    def __add__(self, other: "CylinderModeOperator") -> "CylinderModeOperator":
        return CylinderModeOperator(np.asarray(self.weights) + np.asarray(other.weights))


def _point(b, point):
    return (0,) * b.problem.base.dim if point is None else tuple(point)


def relative_pseudo_trace(F: Optional[CylinderModeOperator], b1, b2, t_grid: Optional[np.ndarray] = None,
                          point=None, with_log: bool = False, fit_tol: float = FIT_TOL) -> PseudoTraceResult:
    """``τ_{Δ₁,Δ₂}(F)``: constant term of ``Str(F(e^{-tΔ₁} - e^{-tΔ₂}))`` as ``t → 0``.

    ``b1``, ``b2`` are boundary value problems on one cylinder; ``F = None``
    means the identity.  Only modes where the two conditions differ enter.
    Fitted in ``t^{j/2}``, ``j ≥ -2``, on a geometric grid over ``[1e-4, 1]``.
    """
    from .cylinder_aps import relative_mode_spectra

    t = geometric_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    point = _point(b1, point)
    s1, s2, modes = relative_mode_spectra(b1, b2, float(t.min()), point)
    w = None if F is None else np.asarray(F.weights)[modes]
    chir = b1.problem.chirality
    values = np.array([chir * (s1.supertrace(x, w) - s2.supertrace(x, w)) for x in t])
    terms = min(8, len(t) // 2 - (1 if with_log else 0))
    fit = heat_trace_expansion_fit(t, values, power_menu(-1.0, 0.5, terms), with_log=with_log, fit_tol=fit_tol)
    value = float(np.real(fit.constant_term)) - np.euler_gamma * float(np.real(fit.log_coefficient(0.0)))
    return PseudoTraceResult(value, "heat_fit", "relative pair Δ₁, Δ₂", fit=fit)


def kernel_supertrace_shift(S: CylinderModeOperator, b1, b2, point=None) -> float:
    """``Str(S(Π₀(Δ₁) - Π₀(Δ₂)))`` for a mode multiplier ``S``, from exact kernel counts."""
    from .cylinder_aps import _mode_kernel_counts

    point = _point(b1, point)
    lam = b1.modes.eigenvalues[point]
    k1, k2 = b1.blocks()[point], b2.blocks()[point]
    total = 0.0
    for k, s in enumerate(np.asarray(S.weights)):
        if s:
            a1, c1 = _mode_kernel_counts(k1[k], lam[k])
            a2, c2 = _mode_kernel_counts(k2[k], lam[k])
            total += s * ((a1 - c1) - (a2 - c2))
    return float(b1.problem.chirality * total)


def theorem2_rhs(d1, d2, c=None, t_grid: Optional[np.ndarray] = None):
    """``η^{[M]}(𝖯₁, 𝖯₂) + Σ_{k≥0} (k+1)/k! · τ_{Δ₁,Δ₂}(𝖱^k)`` with ``2k ≤ dim B``.

    The ``k = 0`` term is evaluated pointwise by ``relative_pseudo_trace``.
    Terms with ``k ≥ 1`` need the interior heat kernels paired against the
    boundary-supported curvature ``𝖱``; they are only required on bases of
    dimension at least two, which this routine does not cover.
    """
    from .base_forms import FormField
    from .cylinder_aps import BoundaryValueProblem, relative_interior_eta_form

    base = d1.problem.base
    if base.dim > 1:
        raise NotImplementedError("τ(𝖱^k) with k ≥ 1 is not assembled; use a base of dimension at most one")
    b1 = BoundaryValueProblem(d1.problem, d1.section)
    b2 = BoundaryValueProblem(d2.problem, d2.section, b1.modes)
    eta = relative_interior_eta_form(d1, d2, c)
    deg0 = np.zeros(base.shape)
    for point in (np.ndindex(*base.shape) if base.shape else [()]):
        deg0[point] = relative_pseudo_trace(None, b1, b2, t_grid, point).value
    return eta + FormField(base, {(): deg0})
