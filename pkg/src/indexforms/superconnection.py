"""Superconnections on graded finite-rank families, heat exponentials and Chern/transgression forms.

A superconnection is ``∇ + Σ_i A_i`` with ``A_0 = L`` odd and Hermitian and
``A_i`` (``i ≥ 2``) odd forms of degree ``i``.  When a projection ``𝒫`` is
attached, every term lives on ``ran 𝒫`` and the connection is the
compression ``𝒫∇𝒫``; heat operators are then extended by zero off ``ran 𝒫``.

The heat exponential is the finite Duhamel series: in the eigenbasis of the
degree-0 part ``F_0`` the ``k``-fold term has entries

    (e^{-F})^{(k)}_{ab} = Σ N_{a c_1} ∧ N_{c_1 c_2} ∧ ... ∧ N_{c_{k-1} b} · f[λ_a, λ_{c_1}, ..., λ_b]

with ``f(x) = e^{-x}`` and ``f[...]`` its divided differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .base_forms import (
    BaseGrid,
    ConnectionData,
    FormField,
    OperatorForm,
    covariant_derivative,
    merge_indices,
    nilpotent_exponential,
    supertrace,
    wedge_multiply,
)
from .boundary_family import (
    GrassmannSection,
    ToeplitzFamily,
    decay_test,
    flat_connection,
    assemble_boundary_family,
    bloch_twisted_section,
    conjugated_section,
    eigen_flip_section,
    kernel_bundle_chern,
    projected_curvature,
    relative_index,
    smooth_generator,
    spectral_projection,
)
from .errors import ExtrapolationError, NotRelativelySmoothingError

SERIES_SWITCH = 1e-4


# ---------------------------------------------------------------------------
# divided differences of e^{-x}


def divided_difference_1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``f[a, b]`` for ``f = e^{-x}``, stable for nearby and for widely separated nodes."""
    lo = np.minimum(a, b)
    h = 0.5 * np.abs(a - b)
    small = h < 1e-3
    safe_h = np.where(small, 1.0, h)
    wide = np.exp(-lo) * np.expm1(-2.0 * safe_h) / (2.0 * safe_h)
    h2 = h * h
    mid = 0.5 * (a + b)
    series = -np.exp(-mid) * (1.0 + h2 / 6.0 + h2 * h2 / 120.0 + h2 ** 3 / 5040.0)
    return np.where(small, series, wide)


def divided_difference_2(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``f[a, b, c]`` for ``f = e^{-x}`` (symmetric in its arguments)."""
    a, b, c = np.broadcast_arrays(a, b, c)
    return _second_differences(a, b, c, divided_difference_1(a, b), divided_difference_1(b, c),
                               divided_difference_1(a, c))


def _second_differences(a, b, c, dab, dbc, dac):
    # pick the widest pair as denominator; Taylor about the mean when all nodes nearly coincide
    sab, sbc, sac = np.abs(a - b), np.abs(b - c), np.abs(a - c)
    out = np.where(sac >= np.maximum(sab, sbc), (dab - dbc) / np.where(sac > 0, a - c, 1.0),
                   np.where(sab >= sbc, (dac - dbc) / np.where(sab > 0, a - b, 1.0),
                            (dab - dac) / np.where(sbc > 0, b - c, 1.0)))
    close = np.maximum(np.maximum(sab, sbc), sac) < SERIES_SWITCH
    if np.any(close):
        x, y, z = a[close], b[close], c[close]
        m = (x + y + z) / 3.0
        dx, dy, dz = x - m, y - m, z - m
        h2 = dx * dx + dy * dy + dz * dz + dx * dy + dx * dz + dy * dz
        h3 = (dx ** 3 + dy ** 3 + dz ** 3 + dx * dx * (dy + dz) + dy * dy * (dx + dz) + dz * dz * (dx + dy)
              + dx * dy * dz)
        out[close] = np.exp(-m) * (0.5 + h2 / 24.0 - h3 / 120.0)
    return out


def _second_difference_table(w: np.ndarray) -> np.ndarray:
    """``f[w_a, w_c, w_b]`` indexed ``[..., a, c, b]`` from the pointwise first-difference table."""
    d1 = divided_difference_1(w[..., :, None], w[..., None, :])
    a = np.broadcast_to(w[..., :, None, None], w.shape + (w.shape[-1],) * 2)
    c = np.broadcast_to(w[..., None, :, None], a.shape)
    b = np.broadcast_to(w[..., None, None, :], a.shape)
    dac = d1[..., :, :, None]
    dcb = d1[..., None, :, :]
    dab = d1[..., :, None, :]
    return _second_differences(a, c, b, dac, dcb, dab)


# ---------------------------------------------------------------------------
# data types


@dataclass
class Superconnection:
    """``𝒫∇𝒫 + t^{1/2} L + Σ_{i≥2} t^{(1-i)/2} A_i`` on a graded bundle."""

    L: OperatorForm
    connection: ConnectionData
    higher: Optional[OperatorForm] = None
    scale: float = 1.0
    projection: Optional[np.ndarray] = None
    N: Optional[int] = None

    def __post_init__(self):
        if self.L.parity != 1 or any(len(i) != 0 for i in self.L.blocks):
            raise ValueError("L must be an odd degree-0 operator form")
        for v in self.L.blocks.values():
            if np.max(np.abs(v - np.conj(np.swapaxes(v, -1, -2)))) > 1e-10:
                raise ValueError("L must be Hermitian")
        if self.higher is not None:
            if self.higher.parity != 1 or any(len(i) < 2 for i in self.higher.blocks):
                raise ValueError("higher terms must be odd forms of degree >= 2")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def grid(self) -> BaseGrid:
        return self.L.grid

    @property
    def graded_dims(self) -> Tuple[int, int]:
        return self.L.graded_dims

    @property
    def unit(self) -> np.ndarray:
        if self.projection is None:
            return np.broadcast_to(np.eye(self.L.n), self.grid.shape + (self.L.n, self.L.n))
        return self.projection

    def at(self, t: float) -> "Superconnection":
        """The same superconnection with scale ``t``."""
        return replace(self, scale=float(t))

    def scaled_terms(self) -> OperatorForm:
        """``t^{1/2} L + Σ t^{(1-i)/2} A_i``."""
        t = self.scale
        out = self.L * np.sqrt(t)
        if self.higher is not None:
            for idx, v in self.higher.blocks.items():
                piece = OperatorForm(self.grid, self.graded_dims, {idx: v * t ** ((1 - len(idx)) / 2.0)}, parity=1)
                out = out + piece
        return out


@dataclass
class CurvatureForm:
    body: OperatorForm

    @property
    def degree0(self) -> OperatorForm:
        return self.body.part(0)

    @property
    def nilpotent(self) -> OperatorForm:
        return self.body.without_part(0)


def scale_superconnection(A: Superconnection, t: float) -> Superconnection:
    """``𝔸_t = t^{1/2} δ_t(𝔸)``: the degree-``i`` term is multiplied by ``t^{(1-i)/2}``."""
    if t <= 0:
        raise ValueError("t must be positive")
    return A.at(A.scale * t)


def _compressed_bracket(A: Superconnection, x: OperatorForm) -> OperatorForm:
    out = covariant_derivative(A.connection, x)
    if A.projection is not None:
        out = out.sandwich(A.projection)
    return out


def curvature(A: Superconnection) -> CurvatureForm:
    """``F = R_𝒫 + [𝒫∇𝒫, X] + X ∧ X`` with ``X`` the scaled non-connection terms.

    ``R_𝒫 = 𝒫(Ω + ∇𝒫 ∧ ∇𝒫)𝒫`` is evaluated in closed form, so the degree-0 part
    is exactly ``t L²`` and the degree-1 part ``t^{1/2} 𝒫(∇L)𝒫``.
    """
    grid = A.grid
    if A.projection is None:
        conn_curv = A.connection.curvature() if A.connection.connection_one_form.blocks else None
    else:
        conn_curv = projected_curvature(A.projection, grid, A.connection, A.graded_dims)
    x = A.scaled_terms()
    body = _compressed_bracket(A, x) + wedge_multiply(x, x)
    if conn_curv is not None and conn_curv.blocks:
        body = body + conn_curv
    return CurvatureForm(body)


# ---------------------------------------------------------------------------
# heat exponential


def _graded_eigh(f0: np.ndarray, p: int):
    """Eigen-decomposition of an even Hermitian matrix field, block by block."""
    n = f0.shape[-1]
    w = np.zeros(f0.shape[:-1])
    u = np.zeros(f0.shape, dtype=complex)
    for lo, hi in ((0, p), (p, n)):
        if hi > lo:
            blk = f0[..., lo:hi, lo:hi]
            blk = 0.5 * (blk + np.conj(np.swapaxes(blk, -1, -2)))
            wb, ub = np.linalg.eigh(blk)
            w[..., lo:hi] = wb
            u[..., lo:hi, lo:hi] = ub
    return w, u


def heat_exponential(F) -> OperatorForm:
    """``e^{-F}`` by the finite Duhamel series with divided-difference weights."""
    body = F.body if isinstance(F, CurvatureForm) else F
    grid = body.grid
    dims = body.graded_dims
    n = body.n
    f0 = body.component(())
    w, u = _graded_eigh(f0, dims[0])
    if np.min(w) < -1e-8 * max(1.0, float(np.max(np.abs(w)))):
        raise ValueError("degree-0 curvature is not positive semidefinite")
    uh = np.conj(np.swapaxes(u, -1, -2))
    nil = {idx: uh @ v @ u for idx, v in body.blocks.items() if len(idx) > 0}
    wa = w[..., :, None]
    wb = w[..., None, :]
    blocks: Dict[tuple, np.ndarray] = {(): np.exp(-w)[..., None] * np.eye(n)}
    dd1 = divided_difference_1(wa, wb)
    for idx, v in nil.items():
        blocks[idx] = v * dd1
    if grid.dim >= 2 and nil:
        dd2 = _second_difference_table(w)
        matrix_parity = {idx: len(idx) % 2 for idx in nil}  # body is even
        for i, x in nil.items():
            for j, y in nil.items():
                merged = merge_indices(i, j)
                if merged is None:
                    continue
                sign, target = merged
                if matrix_parity[i] and len(j) % 2:
                    sign = -sign
                term = sign * np.einsum("...ac,...cb,...acb->...ab", x, y, dd2)
                blocks[target] = blocks[target] + term if target in blocks else term
    out = {idx: u @ v @ uh for idx, v in blocks.items()}
    return OperatorForm(grid, dims, out, parity=0)


# ---------------------------------------------------------------------------
# Chern and transgression forms


def _range_frames(projection: np.ndarray, dims: Tuple[int, int]):
    """Pointwise orthonormal frames of ``ran 𝒫`` inside each graded block."""
    frames = []
    for lo, hi in ((0, dims[0]), (dims[0], dims[0] + dims[1])):
        blk = projection[..., lo:hi, lo:hi]
        w, v = np.linalg.eigh(0.5 * (blk + np.conj(np.swapaxes(blk, -1, -2))))
        ranks = np.sum(w > 0.5, axis=-1)
        if np.any(ranks != ranks.flat[0]):
            raise ValueError("projection rank varies over the base")
        r = int(ranks.flat[0])
        frame = np.zeros(projection.shape[:-2] + (projection.shape[-1], r), dtype=complex)
        frame[..., lo:hi, :] = v[..., hi - lo - r:]
        frames.append(frame)
    return np.concatenate(frames, axis=-1), (frames[0].shape[-1], frames[1].shape[-1])


def _restricted_heat(A: Superconnection, extra: Optional[OperatorForm] = None) -> FormField:
    """``Str(X 𝒫 e^{-F} 𝒫)`` computed on ``ran 𝒫`` (``X`` defaults to the identity)."""
    F = curvature(A).body
    if A.projection is None:
        heat = heat_exponential(F)
        return supertrace(heat if extra is None else wedge_multiply(extra, heat))
    frame, dims = _range_frames(A.projection, A.graded_dims)
    fh = np.conj(np.swapaxes(frame, -1, -2))

    def compress(x: OperatorForm) -> OperatorForm:
        return OperatorForm(x.grid, dims, {k: fh @ v @ frame for k, v in x.blocks.items()}, parity=x.parity)

    heat = heat_exponential(compress(F))
    if extra is not None:
        heat = wedge_multiply(compress(extra), heat)
    return supertrace(heat)


def chern_form(A: Superconnection) -> FormField:
    """``Str(𝒫 e^{-F} 𝒫)``."""
    return _restricted_heat(A)


def chern_weil_form(A: Superconnection) -> FormField:
    """``Σ_k (1/k!) Str((-R)^k)`` for the connection part alone (the ``t → 0`` value when ``L`` is absent)."""
    grid = A.grid
    if A.projection is None:
        curv = A.connection.curvature()
        unit = OperatorForm.identity(grid, A.graded_dims)
    else:
        curv = projected_curvature(A.projection, grid, A.connection, A.graded_dims)
        unit = OperatorForm.from_matrices(grid, A.graded_dims, A.projection)
    if not curv.blocks:
        return supertrace(unit)
    return supertrace(nilpotent_exponential(unit, curv))


def pair_superconnection(pi: GrassmannSection, pj: GrassmannSection, c: Optional[ConnectionData] = None) -> Superconnection:
    """``∇^i ⊕ ∇^j + [[0, P_i P_j], [P_j P_i, 0]]`` on ``W_i ⊕ W_j`` (``W_i`` even)."""
    if pi.size != pj.size or pi.base != pj.base:
        raise ValueError("sections must share base and fibre")
    n = pi.size
    c = c or flat_connection(pi)
    grid = pi.base
    proj = np.zeros(grid.shape + (2 * n, 2 * n), dtype=complex)
    proj[..., :n, :n] = pi.projection
    proj[..., n:, n:] = pj.projection
    lmat = np.zeros_like(proj)
    lmat[..., :n, n:] = pi.projection @ pj.projection
    lmat[..., n:, :n] = pj.projection @ pi.projection
    L = OperatorForm.from_matrices(grid, (n, n), lmat, parity=1)
    return Superconnection(L, c.doubled(), projection=proj, N=pi.N)


def model_triple(grid: BaseGrid, N: int = 4, strengths: Tuple[float, float] = (0.1, 0.05), seed: int = 3,
                 potential: float = 0.25):
    """Seeded sections ``(P1, P2, P3)`` over a 2-torus with ``ind(P1, P3) = 2``.

    ``P1`` is Bloch-twisted, ``P2`` and ``P3`` are smooth conjugations of the
    spectral projection and of a one-line flip.  The conjugation strengths
    keep the kernel bundles resolved on 24² grids.
    """
    rng = np.random.default_rng(seed)
    f = assemble_boundary_family(grid, N, potential)
    p1 = bloch_twisted_section(f)
    p2 = conjugated_section(spectral_projection(f), smooth_generator(grid, N, 2, rng), strengths[0])
    p3 = conjugated_section(eigen_flip_section(f, remove=[0]), smooth_generator(grid, N, 2, rng), strengths[1])
    return p1, p2, p3


def relative_pairs(p1: GrassmannSection, p2: GrassmannSection, p3: GrassmannSection,
                   c: Optional[ConnectionData] = None) -> Tuple[Superconnection, Superconnection]:
    """The superconnections ``B^{1,2}`` and ``B^{3,2}``; the shared section sits in the odd slot of both."""
    return pair_superconnection(p1, p2, c), pair_superconnection(p3, p2, c)


def _check_relatively_smoothing(a: Superconnection, b: Superconnection):
    if a.N is None:
        return
    n = a.L.n // 2
    la = a.L.component(())
    lb = b.L.component(())
    for blk in ((slice(0, n), slice(n, None)), (slice(n, None), slice(0, n))):
        decay_test(la[(...,) + blk] - lb[(...,) + blk], a.N)
    pa = a.unit
    pb = b.unit
    decay_test(pa[..., :n, :n] - pb[..., :n, :n], a.N)


def relative_chern_form(a: Superconnection, b: Superconnection, t: Optional[float] = None) -> FormField:
    """``Str(e^{-F_a}) - Str(e^{-F_b})`` at scale ``t`` (heat operators extended by zero off the subbundles)."""
    _check_relatively_smoothing(a, b)
    if t is not None:
        a, b = a.at(t), b.at(t)
    return chern_form(a) - chern_form(b)


def _transgression_single(A: Superconnection) -> FormField:
    return _restricted_heat(A, A.L * (0.5 / np.sqrt(A.scale)))


def transgression_form(a: Superconnection, b: Superconnection, t: float) -> FormField:
    """``Str(Ḃ_a e^{-F_a}) - Str(Ḃ_b e^{-F_b})`` with ``Ḃ = ½ t^{-1/2} L``."""
    _check_relatively_smoothing(a, b)
    return _transgression_single(a.at(t)) - _transgression_single(b.at(t))


# ---------------------------------------------------------------------------
# t-ladders and limits


def small_ladder(start: float = 1e-3, count: int = 12, ratio: float = 2.0) -> np.ndarray:
    return start * ratio ** np.arange(count)


def large_ladder(end: float = 4e3, count: int = 12, ratio: float = 2.0) -> np.ndarray:
    return end / ratio ** np.arange(count)[::-1]


def fitted_rate(t: np.ndarray, residual: np.ndarray) -> float:
    """Least-squares slope of ``log residual`` against ``log t``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(residual, dtype=float)
    keep = r > 0
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(t[keep]), np.log(r[keep]), 1)
    return float(slope)


@dataclass
class LimitProbe:
    direction: str
    ladder: np.ndarray
    values: list
    limit: FormField
    reference: FormField
    residuals: np.ndarray
    rate: float
    expected_rate: float
    extra: dict = field(default_factory=dict)

    @property
    def rate_ok(self) -> bool:
        if not np.isfinite(self.rate):
            return True
        return abs(self.rate - self.expected_rate) <= 0.25 * abs(self.expected_rate)


def _form_distance(a: FormField, b: FormField) -> float:
    return (a - b).max_abs()


def richardson_zero_limit(ladder: np.ndarray, values: list, exponents=(1.0, 2.0), points: int = 4) -> FormField:
    """Extrapolate form values to ``t = 0`` assuming ``v(t) = v_0 + Σ c_j t^{e_j}``."""
    order = np.argsort(ladder)[:points]
    t = ladder[order]
    design = np.stack([np.ones_like(t)] + [t ** e for e in exponents], axis=1)
    grid = values[0].grid
    keys = sorted({k for v in values for k in v.coefficients})
    out = {}
    for key in keys:
        stack = np.stack([values[i].component(key) for i in order], axis=0)
        flat = stack.reshape(len(order), -1)
        sol, *_ = np.linalg.lstsq(design, flat, rcond=None)
        out[key] = sol[0].reshape(stack.shape[1:])
    return FormField(grid, out)


def time_limit_probe(a: Superconnection, b: Superconnection, direction: str, ladder: Optional[np.ndarray] = None,
                     reference: Optional[FormField] = None, strict: bool = False,
                     sections: Optional[Tuple[GrassmannSection, GrassmannSection, GrassmannSection]] = None) -> LimitProbe:
    """Relative Chern form along a geometric ladder and its ``t → 0`` or ``t → ∞`` limit.

    ``zero``: Richardson extrapolation in integer powers of ``t`` (odd powers
    of ``t^{1/2}`` carry an odd number of odd-parity factors and have zero
    supertrace), compared with ``η(𝒫₁, 𝒫₃)``; expected decay rate 1.
    ``infinity``: the largest-``t`` value is compared with the kernel-bundle
    Chern difference; the residual decay is fitted against the expected
    ``t^{-1/2}``.
    """
    if direction not in ("zero", "infinity"):
        raise ValueError("direction must be 'zero' or 'infinity'")
    if ladder is None:
        ladder = small_ladder() if direction == "zero" else large_ladder()
    ladder = np.asarray(ladder, dtype=float)
    values = [relative_chern_form(a, b, t) for t in ladder]
    if reference is None and sections is not None:
        p1, p2, p3 = sections
        c = _base_connection(a)
        if direction == "zero":
            from .boundary_family import relative_eta_form

            reference = relative_eta_form(p1, p3, c)
        else:
            reference = kernel_bundle_chern(ToeplitzFamily(p1, p2), c) - kernel_bundle_chern(ToeplitzFamily(p3, p2), c)
    if direction == "zero":
        limit = richardson_zero_limit(ladder, values)
        expected = 1.0
    else:
        limit = values[int(np.argmax(ladder))]
        expected = -0.5
    if reference is None:
        reference = limit
    residuals = np.array([_form_distance(v, reference) for v in values])
    if direction == "zero":
        order = np.argsort(ladder)[:6]
        rate = fitted_rate(ladder[order], residuals[order]) if np.max(residuals[order]) > 1e-12 else float("nan")
    else:
        order = np.argsort(ladder)[-6:]
        rate = fitted_rate(ladder[order], residuals[order]) if np.max(residuals[order]) > 1e-12 else float("nan")
    probe = LimitProbe(direction, ladder, values, limit, reference, residuals, rate, expected)
    if strict and not probe.rate_ok:
        raise ExtrapolationError(f"observed rate {rate:.3f} differs from expected {expected} by more than 25%")
    return probe


def _base_connection(A: Superconnection) -> ConnectionData:
    n = A.L.n // 2
    omega = A.connection.connection_one_form
    blocks = {idx: v[..., :n, :n] for idx, v in omega.blocks.items()}
    return ConnectionData(A.grid, OperatorForm(A.grid, (n, 0), blocks, parity=1))


# ---------------------------------------------------------------------------
# Gr_1 model


@dataclass
class SchattenResult:
    form: FormField
    index: np.ndarray
    omegas: Dict[int, FormField]


def schatten_relative_chern(p: GrassmannSection, c: Optional[ConnectionData] = None) -> SchattenResult:
    """``Tr(e^{-R} - Π₊) = index(Π₊∘P) + Σ_k (-1)^k/k! ω_k`` with ``ω_k = Tr(P (∇P)^{2k})``.

    ``Π₊`` is the section's reference projection.  The index is the SVD count
    for the compression ``Π₊ P : ran P → ran Π₊``.
    """
    ref = GrassmannSection(p.base, p.reference, p.reference, p.N, 0)
    try:
        decay_test(p.projection - p.reference, p.N)
    except NotRelativelySmoothingError:
        raise
    c = c or flat_connection(p)
    index = relative_index(p, ref, "svd")
    pform = p.as_operator_form()
    grad = covariant_derivative(c, pform)
    omegas = {}
    total = FormField(p.base, {(): index.astype(complex)})
    power = pform
    k = 1
    while 2 * k <= p.base.dim:
        power = wedge_multiply(wedge_multiply(power, grad), grad)
        omega_k = supertrace(power)
        omegas[k] = omega_k
        total = total + ((-1) ** k / float(np.prod(np.arange(1, k + 1)))) * omega_k
        k += 1
    return SchattenResult(total, index, omegas)


def rescale_degrees(x: OperatorForm, t: float) -> OperatorForm:
    """``δ_t``: multiply the degree-``i`` part by ``t^{-i/2}``."""
    return OperatorForm(x.grid, x.graded_dims, {k: v * t ** (-len(k) / 2.0) for k, v in x.blocks.items()}, x.parity)
