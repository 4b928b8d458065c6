"""Model cylinder ``X = [0,1] × S¹`` with ``D⁺ = ∂_u + A(z)`` and two boundary circles.

Boundary data live in ``H = C^M ⊕ C^M`` (traces at ``u = 0`` and ``u = 1`` in
the Fourier basis, ``M = 2N + 1``).  In the eigenbasis of ``A`` every object
is mode-diagonal: the solutions of ``D⁺f = 0`` in mode ``k`` are
``c·e^{-λ_k u}``, so their Cauchy data span ``(1, e^{-λ_k})``.  Green's
formula ``⟨D⁺f, g⟩ - ⟨f, D⁻g⟩ = ⟨γf, Jγg⟩`` with ``J = diag(-1, 1)`` fixes
the adjoint boundary condition ``J(I - 𝒫)J``.  At ``u = 1`` the induced
boundary operator is ``-A``, so the APS condition there is ``Π_>(-A) = Π_<(A)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .base_forms import BaseGrid, ConnectionData, FormField, OperatorForm, nilpotent_exponential, supertrace
from .boundary_family import (
    GAP_TOL,
    BoundaryOperatorFamily,
    GrassmannSection,
    _svd_index,
    decay_test,
    projected_curvature,
    spectral_decomposition,
)
from .errors import (
    CutoffError,
    DegenerateBCError,
    IdentityViolationError,
    KernelGapError,
    NotRelativelySmoothingError,
    RootFinderStallError,
)

NULL_TOL = 1e-13
DEGENERATE_TOL = 1e-10
MODE_DIAGONAL_TOL = 1e-10
TAIL_TOL = 1e-12


# ---------------------------------------------------------------------------
# problem and modes


@dataclass
class CylinderProblem:
    boundary: BoundaryOperatorFamily
    chirality: int = 1
    length: float = 1.0

    def __post_init__(self):
        if self.chirality not in (1, -1):
            raise ValueError("chirality must be +1 or -1")
        if self.length != 1.0:
            raise ValueError("only the unit collar is modelled")

    @property
    def base(self) -> BaseGrid:
        return self.boundary.base

    @property
    def N(self) -> int:
        return self.boundary.N

    @property
    def size(self) -> int:
        return self.boundary.size


@dataclass
class ModeData:
    eigenvalues: np.ndarray  # (..., M)
    vectors: np.ndarray  # (..., M, M), columns are modes

    def frame(self) -> np.ndarray:
        """Columns ``(φ_k, 0)`` then ``(0, φ_k)`` of ``H``."""
        v = self.vectors
        m = v.shape[-1]
        out = np.zeros(v.shape[:-2] + (2 * m, 2 * m), dtype=complex)
        out[..., :m, :m] = v
        out[..., m:, m:] = v
        return out


def mode_decompose(p: CylinderProblem, gap_tol: float = GAP_TOL) -> ModeData:
    """Eigenvalues ``λ_k(z)`` and modes of the boundary operator; mode ``k`` carries ``∂_u ± λ_k``."""
    dec = spectral_decomposition(p.boundary, gap_tol)
    return ModeData(dec.eigenvalues, dec.eigenvectors)


def _unit_data(lam: np.ndarray, sign: float) -> np.ndarray:
    """Normalized ``(1, e^{-sign·λ})`` without overflow; shape ``(..., 2)``."""
    x = -sign * lam
    big = x > 0
    first = np.where(big, np.exp(-np.where(big, x, 0.0)), 1.0)
    second = np.where(big, 1.0, np.exp(np.where(big, 0.0, x)))
    v = np.stack([first, second], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Calderon projector


@dataclass
class CalderonData:
    directions: np.ndarray  # (..., M, 2)
    blocks: np.ndarray  # (..., M, 2, 2)
    projection: np.ndarray  # (..., 2M, 2M) in the Fourier basis
    modes: ModeData


def assemble_blocks(modes: ModeData, blocks: np.ndarray) -> np.ndarray:
    """Projection on ``H`` from per-mode ``2×2`` blocks in the eigenbasis."""
    m = blocks.shape[-3]
    eig = np.zeros(blocks.shape[:-3] + (2 * m, 2 * m), dtype=complex)
    idx = np.arange(m)
    for a in range(2):
        for b in range(2):
            eig[..., a * m + idx, b * m + idx] = blocks[..., a, b]
    w = modes.frame()
    return w @ eig @ np.conj(np.swapaxes(w, -1, -2))


def mode_blocks(modes: ModeData, projection: np.ndarray, tol: float = MODE_DIAGONAL_TOL) -> np.ndarray:
    """Per-mode blocks of a projection on ``H``; raises if it couples different modes."""
    w = modes.frame()
    eig = np.conj(np.swapaxes(w, -1, -2)) @ projection @ w
    m = modes.eigenvalues.shape[-1]
    idx = np.arange(m)
    blocks = np.zeros(eig.shape[:-2] + (m, 2, 2), dtype=complex)
    for a in range(2):
        for b in range(2):
            blocks[..., a, b] = eig[..., a * m + idx, b * m + idx]
    if np.max(np.abs(assemble_blocks(modes, blocks) - projection)) > tol:
        raise ValueError("boundary condition is not mode-diagonal")
    return blocks


def calderon_projector(p: CylinderProblem) -> CalderonData:
    """Orthogonal projection onto the Cauchy data ``span{(1, e^{-λ_k})}`` of ``ker D⁺``."""
    modes = mode_decompose(p)
    lam = modes.eigenvalues
    if np.any(np.abs(lam) < GAP_TOL):
        raise KernelGapError("boundary operator has a zero eigenvalue")
    d = _unit_data(lam, 1.0)
    blocks = d[..., :, None] * d[..., None, :]
    return CalderonData(d, blocks.astype(complex), assemble_blocks(modes, blocks), modes)


def aps_blocks(modes: ModeData) -> np.ndarray:
    """``Π_>(A)`` at ``u = 0`` and ``Π_>(-A)`` at ``u = 1``, per mode."""
    lam = modes.eigenvalues
    blocks = np.zeros(lam.shape + (2, 2), dtype=complex)
    blocks[..., 0, 0] = lam > 0
    blocks[..., 1, 1] = lam < 0
    return blocks


# ---------------------------------------------------------------------------
# boundary value problems and indices


@dataclass
class BoundaryValueProblem:
    """``D⁺`` on the cylinder with domain ``{f : 𝒫 γ f = 0}``."""

    problem: CylinderProblem
    projection: np.ndarray  # (..., 2M, 2M)
    modes: ModeData = field(default=None, repr=False)

    def __post_init__(self):
        if self.modes is None:
            self.modes = mode_decompose(self.problem)
        p = self.projection
        if p.shape[-1] != 2 * self.problem.size:
            raise ValueError("projection must act on both boundary circles")
        if np.max(np.abs(p @ p - p)) > 1e-10 or np.max(np.abs(p - np.conj(np.swapaxes(p, -1, -2)))) > 1e-10:
            raise ValueError("boundary condition must be an orthogonal projection")

    @property
    def adjoint_projection(self) -> np.ndarray:
        """``J(I - 𝒫)J``: the boundary condition of the adjoint problem."""
        m = self.problem.size
        j = np.concatenate([-np.ones(m), np.ones(m)])
        comp = np.eye(2 * m) - self.projection
        return j[:, None] * comp * j[None, :]

    def blocks(self) -> np.ndarray:
        return mode_blocks(self.modes, self.projection)

    def with_projection(self, projection: np.ndarray) -> "BoundaryValueProblem":
        return BoundaryValueProblem(self.problem, projection, self.modes)


def block_problem(p: CylinderProblem, blocks: np.ndarray, modes: Optional[ModeData] = None) -> BoundaryValueProblem:
    modes = modes or mode_decompose(p)
    return BoundaryValueProblem(p, assemble_blocks(modes, blocks), modes)


def aps_problem(p: CylinderProblem) -> BoundaryValueProblem:
    modes = mode_decompose(p)
    return block_problem(p, aps_blocks(modes), modes)


def calderon_problem(p: CylinderProblem) -> BoundaryValueProblem:
    cal = calderon_projector(p)
    return BoundaryValueProblem(p, cal.projection, cal.modes)


def sections_problem(p: CylinderProblem, q0: GrassmannSection, q1: GrassmannSection) -> BoundaryValueProblem:
    """Separated condition ``q0`` at ``u = 0`` and ``q1`` at ``u = 1``."""
    m = p.size
    proj = np.zeros(q0.projection.shape[:-2] + (2 * m, 2 * m), dtype=complex)
    proj[..., :m, :m] = q0.projection
    proj[..., m:, m:] = q1.projection
    return BoundaryValueProblem(p, proj)


FLIP_BLOCKS = {
    "free": np.zeros((2, 2)),
    "full": np.eye(2),
    "swap": None,
}


def flipped_problem(p: CylinderProblem, flips: Dict[int, str], modes: Optional[ModeData] = None) -> BoundaryValueProblem:
    """APS condition with the blocks of the listed modes replaced.

    Modes are indexed by position in the sorted spectrum of ``A``.  ``free``
    removes both conditions, ``full`` imposes both, ``swap`` exchanges the two
    boundary circles.
    """
    modes = modes or mode_decompose(p)
    blocks = aps_blocks(modes)
    for k, kind in flips.items():
        if kind == "swap":
            blocks[..., k, :, :] = blocks[..., k, ::-1, ::-1]
        elif kind in FLIP_BLOCKS:
            blocks[..., k, :, :] = FLIP_BLOCKS[kind]
        else:
            raise ValueError(f"unknown flip {kind!r}")
    return block_problem(p, blocks, modes)


def random_flips(modes: ModeData, rng: np.random.Generator, count: int = 3, window: int = 6) -> Dict[int, str]:
    """Random flips among the ``window`` modes nearest to zero (mode index from the bottom)."""
    lam = modes.eigenvalues.reshape(-1, modes.eigenvalues.shape[-1])[0]
    near = np.argsort(np.abs(lam))[:window]
    chosen = rng.choice(near, size=min(count, window), replace=False)
    kinds = rng.choice(list(FLIP_BLOCKS), size=len(chosen))
    return {int(k): str(s) for k, s in zip(chosen, kinds)}


def _cauchy_matrix(modes: ModeData, sign: float) -> np.ndarray:
    """Orthonormal columns: Cauchy data of ``c e^{-sign λ u}`` per mode, in the Fourier basis."""
    d = _unit_data(modes.eigenvalues, sign)
    v = modes.vectors
    return np.concatenate([v * d[..., None, :, 0], v * d[..., None, :, 1]], axis=-2)


def _nullity(matrix: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(matrix, compute_uv=False)
    if np.any((s > NULL_TOL) & (s <= DEGENERATE_TOL)):
        raise DegenerateBCError("boundary condition nearly annihilates Cauchy data")
    return np.sum(s <= NULL_TOL, axis=-1) + (matrix.shape[-1] - s.shape[-1])


def kernel_dimensions(b: BoundaryValueProblem) -> Tuple[np.ndarray, np.ndarray]:
    """``dim ker D⁺_𝒫`` and ``dim ker (D⁺_𝒫)*`` by exact solution counting."""
    ker = _nullity(b.projection @ _cauchy_matrix(b.modes, 1.0))
    coker = _nullity(b.adjoint_projection @ _cauchy_matrix(b.modes, -1.0))
    return ker, coker


def aps_index(b: BoundaryValueProblem) -> np.ndarray:
    """Integer index field of ``D⁺_𝒫`` (sign flipped for chirality ``-1``)."""
    ker, coker = kernel_dimensions(b)
    return b.problem.chirality * (ker - coker)


def calderon_trace_difference(b: BoundaryValueProblem) -> np.ndarray:
    """``Tr(P(𝖣) - 𝒫)`` pointwise."""
    cal = calderon_projector(b.problem)
    return np.real(np.trace(cal.projection - b.projection, axis1=-2, axis2=-1))


@dataclass
class IndexIdentityReport:
    lhs: np.ndarray
    rhs: np.ndarray
    trace_rhs: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs == self.rhs) and np.all(np.rint(self.trace_rhs) == self.rhs))


def relative_index_identity(b1: BoundaryValueProblem, b2: BoundaryValueProblem, strict: bool = True) -> IndexIdentityReport:
    """``ind D_{𝒫₁} - ind D_{𝒫₂} = ind(𝒫₂, 𝒫₁)`` with the Toeplitz index of ``𝒫₁𝒫₂ : ran 𝒫₂ → ran 𝒫₁``."""
    lhs = (aps_index(b1) - aps_index(b2)) * b1.problem.chirality
    rhs = _svd_index(b2.projection, b1.projection)
    trace_rhs = np.real(np.trace(b2.projection - b1.projection, axis1=-2, axis2=-1))
    report = IndexIdentityReport(lhs, rhs, trace_rhs)
    if strict and not report.holds:
        raise IdentityViolationError("relative index identity fails")
    return report


# ---------------------------------------------------------------------------
# u-grids and the Poisson extension


def smoothstep_cutoff(u: np.ndarray) -> np.ndarray:
    """``χ``: 1 on ``[0, ¼]``, 0 on ``[¾, 1]``, quintic smoothstep between."""
    s = np.clip((np.asarray(u, dtype=float) - 0.25) / 0.5, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def clenshaw_curtis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Chebyshev–Lobatto nodes on ``[0, 1]`` (increasing) and Clenshaw–Curtis weights."""
    theta = np.pi * np.arange(n + 1) / n
    x = -np.cos(theta)
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    inner = theta[1:-1]
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(n * inner) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / n
    return 0.5 * (x + 1.0), 0.5 * w


def chebyshev_differentiation(n: int) -> np.ndarray:
    """Spectral differentiation matrix on the increasing Lobatto nodes of ``[0, 1]``."""
    x = -np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    return 2.0 * d


@dataclass
class UGrid:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str


def u_grid(points: int = 64, kind: str = "uniform") -> UGrid:
    if points < 8:
        raise ValueError("u-grid needs at least 8 points")
    if kind == "uniform":
        u = np.linspace(0.0, 1.0, points)
        w = np.full(points, 1.0 / (points - 1))
        w[[0, -1]] *= 0.5
        return UGrid(u, w, kind)
    if kind == "chebyshev":
        u, w = clenshaw_curtis(points - 1)
        return UGrid(u, w, kind)
    raise ValueError(f"unknown u-grid {kind!r}")


@dataclass
class DomainProjection:
    """``𝖯 = I - K𝒫γ`` acting on sections sampled on ``grid × C^M``.

    ``poisson[..., i, :, :]`` is the ``M × 2M`` matrix of ``K`` at node
    ``u_i``; ``γ`` evaluates at the first and last node.
    """

    problem: CylinderProblem
    section: np.ndarray
    grid: UGrid
    poisson: np.ndarray

    @property
    def size(self) -> int:
        return self.problem.size

    def restrict(self, f: np.ndarray) -> np.ndarray:
        return np.concatenate([f[..., 0, :], f[..., -1, :]], axis=-1)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``𝖯 f`` for ``f`` of shape ``(..., nodes, M)``."""
        h = np.einsum("...ab,...b->...a", self.section, self.restrict(f))
        return f - np.einsum("...iab,...b->...ia", self.poisson, h)

    def kp(self) -> np.ndarray:
        """``K𝒫`` as ``(..., nodes, M, 2M)``."""
        return self.poisson @ self.section[..., None, :, :]

    def dense(self) -> np.ndarray:
        """``𝖯`` as a ``(nodes·M) × (nodes·M)`` matrix field (small problems only)."""
        nodes = len(self.grid.nodes)
        m = self.size
        kp = self.kp().reshape(self.section.shape[:-2] + (nodes * m, 2 * m))
        gamma = np.zeros((2 * m, nodes * m))
        gamma[:m, :m] = np.eye(m)
        gamma[m:, (nodes - 1) * m:] = np.eye(m)
        return np.eye(nodes * m) - kp @ gamma

    def identity_defects(self) -> Tuple[float, float]:
        """``‖𝖯² - 𝖯‖`` and ``‖𝒫γ𝖯‖`` through the boundary-sized factors.

        ``𝖯² - 𝖯 = K𝒫(γK - I)𝒫γ`` and ``𝒫γ𝖯 = 𝒫(I - γK𝒫)γ``.
        """
        gk = self.restrict_matrix()
        eye = np.eye(2 * self.size)
        p = self.section
        kscale = max(1.0, float(np.max(np.abs(self.poisson))))
        idem = float(np.max(np.abs(p @ (gk - eye) @ p))) * kscale
        annihil = float(np.max(np.abs(p @ (eye - gk @ p))))
        return idem, annihil

    def restrict_matrix(self) -> np.ndarray:
        """``γK`` as a ``2M × 2M`` matrix field (the identity up to roundoff)."""
        return np.concatenate([self.poisson[..., 0, :, :], self.poisson[..., -1, :, :]], axis=-2)


def domain_projection(section, p: CylinderProblem, grid: Optional[UGrid] = None) -> DomainProjection:
    """``𝖯 = I - K𝒫γ`` with ``K h = χ(u)e^{-uA²}h₀ + χ(1-u)e^{-(1-u)A²}h₁``."""
    proj = section.projection if isinstance(section, BoundaryValueProblem) else np.asarray(section)
    grid = grid or u_grid()
    modes = section.modes if isinstance(section, BoundaryValueProblem) else mode_decompose(p)
    lam2 = modes.eigenvalues ** 2
    v = modes.vectors
    vh = np.conj(np.swapaxes(v, -1, -2))
    u = grid.nodes
    m = p.size
    poisson = np.zeros(proj.shape[:-2] + (len(u), m, 2 * m), dtype=complex)
    for i, ui in enumerate(u):
        left = smoothstep_cutoff(ui)
        right = smoothstep_cutoff(1.0 - ui)
        if left:
            poisson[..., i, :, :m] = left * (v * np.exp(-ui * lam2)[..., None, :]) @ vh
        if right:
            poisson[..., i, :, m:] = right * (v * np.exp(-(1.0 - ui) * lam2)[..., None, :]) @ vh
    return DomainProjection(p, proj, grid, poisson)


# ---------------------------------------------------------------------------
# interior curvature and relative eta form


def _boundary_connection(c: Optional[ConnectionData], base: BaseGrid, m: int) -> ConnectionData:
    if c is None:
        return ConnectionData.flat(base, (2 * m, 0))
    if c.graded_dims == (m, 0):
        return ConnectionData(base, OperatorForm(base, (2 * m, 0), c.doubled().connection_one_form.blocks, parity=1))
    return c


def interior_curvature(d: DomainProjection, c: Optional[ConnectionData] = None) -> OperatorForm:
    """``𝖱 = (𝖯∇𝖯)²`` as a dense ``(nodes·M)``-square 2-form.

    Computed as ``𝖯(∇𝖯 ∧ ∇𝖯)𝖯``; for an idempotent ``𝖯`` this equals the
    compressed curvature with the second-fundamental-form correction
    ``-II* ∧ II`` folded in.  Only for small problems.
    """
    base = d.problem.base
    dense = d.dense()
    n = dense.shape[-1]
    if c is not None and c.connection_one_form.blocks:
        nodes = len(d.grid.nodes)
        blocks = {k: _kron_field(nodes, v) for k, v in c.connection_one_form.blocks.items()}
        c = ConnectionData(base, OperatorForm(base, (n, 0), blocks, parity=1))
    else:
        c = ConnectionData.flat(base, (n, 0))
    return projected_curvature(dense, base, c)


def _kron_field(nodes: int, v: np.ndarray) -> np.ndarray:
    m = v.shape[-1]
    out = np.zeros(v.shape[:-2] + (nodes * m, nodes * m), dtype=v.dtype)
    for i in range(nodes):
        out[..., i * m:(i + 1) * m, i * m:(i + 1) * m] = v
    return out


def interior_curvature_traces(d: DomainProjection, c: Optional[ConnectionData] = None, dense: bool = False) -> Dict[int, FormField]:
    """``Tr(𝖱^k)`` for ``2k ≤ dim B``.

    Default route: since ``γK = I`` identically, ``Tr 𝖱^k = Tr(R_{I-𝒫}^k)``
    with ``R_{I-𝒫}`` the compressed boundary curvature of ``I - 𝒫``.
    ``dense=True`` evaluates the interior operator directly instead.
    """
    base = d.problem.base
    out = {}
    if dense:
        r = interior_curvature(d, c)
        unit = OperatorForm.from_matrices(base, r.graded_dims, d.dense())
    else:
        m = d.size
        comp = np.eye(2 * m) - d.section
        r = projected_curvature(comp, base, _boundary_connection(c, base, m))
        unit = OperatorForm.from_matrices(base, r.graded_dims, comp)
    power = unit
    k = 1
    while 2 * k <= base.dim:
        power = power @ r
        out[k] = supertrace(power)
        k += 1
    return out


def relative_interior_eta_form(d1: DomainProjection, d2: DomainProjection, c: Optional[ConnectionData] = None,
                               dense: bool = False) -> FormField:
    """``η^{[M]}(𝖯₁, 𝖯₂) = Σ_{k≥1} (-1)^k/k! Str(𝖱₁^k - 𝖱₂^k)``; no degree-0 term."""
    m = d1.size
    mask = np.ones((2 * m, 2 * m), dtype=bool)
    n = d1.problem.N
    if n is not None:
        diff = d1.section - d2.section
        # both circles are checked against the high-mode band
        for a in (slice(0, m), slice(m, None)):
            for b in (slice(0, m), slice(m, None)):
                decay_test(diff[(...,) + (a, b)], n)
    t1 = interior_curvature_traces(d1, c, dense)
    t2 = interior_curvature_traces(d2, c, dense)
    out = FormField.zero(d1.problem.base)
    for k in t1:
        out = out + (t1[k] - t2[k]) * ((-1) ** k / float(np.prod(np.arange(1, k + 1))))
    return out


# ---------------------------------------------------------------------------
# Laplacian spectra per mode


def _rows(block: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh(block)
    return np.conj(v[:, w > 0.5].T)


def _basis_values(mu: np.ndarray, lam: float):
    """Values and derivatives at ``u = 0, 1`` of a solution basis of ``-f'' + λ²f = μf``.

    Oscillatory side (``μ > λ²``): ``cos κu``, ``sin κu``.  Evanescent side:
    ``e^{-ρu}``, ``e^{-ρ(1-u)}``.  Returned arrays have shape ``(..., 2 ends, 2 basis)``.
    """
    nu = mu - lam * lam
    osc = nu > 0
    kappa = np.sqrt(np.where(osc, nu, 0.0))
    rho = np.sqrt(np.where(osc, 0.0, -nu))
    val = np.zeros(mu.shape + (2, 2))
    der = np.zeros_like(val)
    ck, sk = np.cos(kappa), np.sin(kappa)
    er = np.exp(-rho)
    val[..., 0, 0] = np.where(osc, 1.0, 1.0)
    val[..., 0, 1] = np.where(osc, 0.0, er)
    val[..., 1, 0] = np.where(osc, ck, er)
    val[..., 1, 1] = np.where(osc, sk, 1.0)
    der[..., 0, 0] = np.where(osc, 0.0, -rho)
    der[..., 0, 1] = np.where(osc, kappa, rho * er)
    der[..., 1, 0] = np.where(osc, -kappa * sk, -rho * er)
    der[..., 1, 1] = np.where(osc, kappa * ck, rho)
    return val, der


def characteristic_function(block: np.ndarray, lam: float, kind: str = "plus"):
    """Real characteristic determinant ``μ ↦ det M(μ)`` for one mode.

    ``plus``: ``Δ₊ = D⁻D⁺`` with ``Bγf = 0`` and ``B^adj γ(D⁺f) = 0``.
    ``minus``: ``Δ₋ = D⁺D⁻`` with ``B^adj γg = 0`` and ``B γ(D⁻g) = 0``.
    Here ``D⁺ = ∂_u + λ``, ``D⁻ = -∂_u + λ`` and ``B^adj = J(I - B)J``.
    """
    block = np.asarray(block)
    if np.max(np.abs(np.imag(block))) > 1e-12:
        raise ValueError("characteristic determinants need real mode blocks")
    block = np.real(block)
    j = np.diag([-1.0, 1.0])
    adj = j @ (np.eye(2) - block) @ j
    if kind == "plus":
        value_rows, derivative_rows, sign = _rows(block).real, _rows(adj).real, 1.0
    elif kind == "minus":
        value_rows, derivative_rows, sign = _rows(adj).real, _rows(block).real, -1.0
    else:
        raise ValueError("kind must be 'plus' or 'minus'")
    if len(value_rows) + len(derivative_rows) != 2:
        raise ValueError("boundary block must be a projection")

    def det(mu):
        mu = np.asarray(mu, dtype=float)
        val, der = _basis_values(mu, lam)
        d_apply = sign * der + lam * val
        rows = []
        for r in value_rows:
            rows.append(np.einsum("e,...eb->...b", r, val))
        for r in derivative_rows:
            rows.append(np.einsum("e,...eb->...b", r, d_apply))
        m = np.stack(rows, axis=-2)
        scale = 1.0 + abs(lam) + np.sqrt(np.abs(mu))
        return (m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]) / scale
    return det


def _bisect(f, lo: np.ndarray, hi: np.ndarray, iterations: int = 80):
    flo = f(lo)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _golden_minimum(g, lo, hi, iterations: int = 80):
    r = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c = b - r * (b - a)
    d = a + r * (b - a)
    for _ in range(iterations):
        left = g(c) < g(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - r * (b - a)
        d = a + r * (b - a)
    return 0.5 * (a + b)


def _roots_on(f, x: np.ndarray, to_mu: Callable) -> list:
    """Simple roots by sign change, double roots by near-zero local minima of ``|f|``."""
    fx = f(to_mu(x))
    roots = []
    sign_change = np.nonzero(np.sign(fx[:-1]) * np.sign(fx[1:]) < 0)[0]
    if len(sign_change):
        r = _bisect(lambda y: f(to_mu(y)), x[sign_change], x[sign_change + 1])
        roots.extend(r.tolist())
    exact = np.nonzero(fx == 0)[0]
    roots.extend(x[exact].tolist())
    a = np.abs(fx)
    interior = np.arange(1, len(x) - 1)
    minima = interior[(a[interior] < a[interior - 1]) & (a[interior] < a[interior + 1])]
    minima = [i for i in minima if not (np.sign(fx[i - 1]) * np.sign(fx[i + 1]) < 0) and fx[i] != 0]
    if minima:
        idx = np.array(minima)
        xm = _golden_minimum(lambda y: np.abs(f(to_mu(y))), x[idx - 1], x[idx + 1])
        fm = np.abs(f(to_mu(xm)))
        scale = np.max(a) if len(a) else 1.0
        for xv, fv in zip(xm, fm):
            if fv <= 1e-10 * max(scale, 1.0):
                roots.extend([xv, xv])
    return roots


def mode_laplacian_eigenvalues(block: np.ndarray, lam: float, cutoff: float, kind: str = "plus",
                               zero_modes: int = 0) -> np.ndarray:
    """Eigenvalues ``≤ cutoff`` of one mode problem (``zero_modes`` zeros inserted exactly)."""
    f = characteristic_function(block, lam, kind)
    a = abs(lam)
    eps = 1e-9 * max(1.0, a * a)
    found = []
    if a > 0:
        rho = np.linspace(0.0, a, 4001)[1:]
        rho = rho[lam * lam - rho * rho > eps]
        found += [lam * lam - r * r for r in _roots_on(f, rho, lambda r: lam * lam - r * r)]
    kmax = np.sqrt(max(cutoff - lam * lam, 0.0))
    if kmax > 0:
        steps = int(np.ceil(kmax / (np.pi / 32))) + 2
        kappa = np.linspace(0.0, kmax, steps)[1:]
        osc = _roots_on(f, kappa, lambda k: lam * lam + k * k)
        count = len(osc)
        if abs(count - kmax / np.pi) > 3:
            raise RootFinderStallError(f"Weyl count mismatch: {count} roots below κ = {kmax:.3f}")
        found += [lam * lam + k * k for k in osc]
    found = [m for m in found if m > eps and m <= cutoff]
    return np.sort(np.concatenate([np.zeros(zero_modes), np.array(found, dtype=float)]))


def _mode_kernel_counts(block: np.ndarray, lam: float) -> Tuple[int, int]:
    b = np.asarray(block)
    j = np.diag([-1.0, 1.0])
    ker = int(np.linalg.norm(b @ _unit_data(np.array(lam), 1.0)) <= 1e-12)
    coker = int(np.linalg.norm(j @ (np.eye(2) - b) @ j @ _unit_data(np.array(lam), -1.0)) <= 1e-12)
    return ker, coker


def laplacian_eigenvalues(b: BoundaryValueProblem, mode: int, count: int, kind: str = "plus",
                          point: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """First ``count`` eigenvalues of mode ``mode`` of ``Δ₊`` (or ``Δ₋``) at one base point (default the first)."""
    if count == 0:
        return np.zeros(0)
    point = (0,) * b.problem.base.dim if point is None else tuple(point)
    blocks = b.blocks()[point]
    lam = float(b.modes.eigenvalues[point][mode])
    ker, coker = _mode_kernel_counts(blocks[mode], lam)
    zeros = ker if kind == "plus" else coker
    cutoff = lam * lam + (np.pi * (count + 3)) ** 2
    values = mode_laplacian_eigenvalues(blocks[mode], lam, cutoff, kind, zeros)
    if len(values) < count:
        raise RootFinderStallError("not enough eigenvalues below the cutoff")
    return values[:count]


# ---------------------------------------------------------------------------
# relative heat traces


def differing_modes(b1: BoundaryValueProblem, b2: BoundaryValueProblem, point: Tuple[int, ...] = ()) -> np.ndarray:
    d = np.abs(b1.blocks()[point] - b2.blocks()[point]).reshape(-1, 4).max(axis=1)
    return np.nonzero(d > 1e-12)[0]


def required_cutoff(t: float) -> float:
    """Smallest cutoff with ``e^{-tΛ}(1 + t^{-1/2}) ≤ 1e-12`` (Gaussian tail bound of a mode family)."""
    return (np.log(1.0 / TAIL_TOL) + np.log1p(1.0 / np.sqrt(t))) / t + 1.0


class ModeSpectra:
    """Cached per-mode ``Δ±`` spectra for a list of blocks."""

    def __init__(self, blocks: Sequence[np.ndarray], lams: Sequence[float], cutoff: float):
        self.cutoff = cutoff
        self.plus, self.minus = [], []
        for blk, lam in zip(blocks, lams):
            ker, coker = _mode_kernel_counts(blk, lam)
            self.plus.append(mode_laplacian_eigenvalues(blk, lam, cutoff, "plus", ker))
            self.minus.append(mode_laplacian_eigenvalues(blk, lam, cutoff, "minus", coker))

    def supertrace(self, t: float, weights: Optional[Sequence[float]] = None) -> float:
        if np.exp(-t * self.cutoff) * (1.0 + 1.0 / np.sqrt(t)) > TAIL_TOL:
            raise CutoffError(f"cutoff {self.cutoff:.3g} too small for t = {t:.3g}")
        weights = np.ones(len(self.plus)) if weights is None else np.asarray(weights)
        total = 0.0
        for w, p, m in zip(weights, self.plus, self.minus):
            total += w * (np.sum(np.exp(-t * p)) - np.sum(np.exp(-t * m)))
        return float(total)


def relative_mode_spectra(b1: BoundaryValueProblem, b2: BoundaryValueProblem, t_min: float,
                          point: Tuple[int, ...] = ()) -> Tuple[ModeSpectra, ModeSpectra, np.ndarray]:
    """Spectra of both problems on the modes where their blocks differ (the rest cancel exactly)."""
    modes = differing_modes(b1, b2, point)
    lam = b1.modes.eigenvalues[point]
    cutoff = required_cutoff(t_min)
    s1 = ModeSpectra([b1.blocks()[point][k] for k in modes], [lam[k] for k in modes], cutoff)
    s2 = ModeSpectra([b2.blocks()[point][k] for k in modes], [lam[k] for k in modes], cutoff)
    return s1, s2, modes


def relative_heat_trace(b1: BoundaryValueProblem, b2: BoundaryValueProblem, t) -> np.ndarray:
    """``Str e^{-tΔ₁} - Str e^{-tΔ₂}`` per base point (array over ``t`` if ``t`` is a sequence)."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    shape = b1.problem.base.shape
    out = np.zeros(shape + ts.shape)
    for point in np.ndindex(*shape) if shape else [()]:
        s1, s2, _ = relative_mode_spectra(b1, b2, float(ts.min()), point)
        out[point] = [s1.supertrace(x) - s2.supertrace(x) for x in ts]
    out = out * b1.problem.chirality
    return out if np.ndim(t) else out[..., 0]


# ---------------------------------------------------------------------------
# commutator trace defect


@dataclass
class CommutatorDefect:
    direct: float
    boundary_formula: float


def _one_sided_value(x: np.ndarray, y: np.ndarray, target: float, order: int = 4) -> float:
    """Polynomial extrapolation of ``y`` to ``target`` from the ``order`` nearest interior nodes."""
    interior = np.arange(1, len(x) - 1)
    nearest = interior[np.argsort(np.abs(x[interior] - target))[:order]]
    xs, ys = x[nearest], y[nearest]
    total = 0.0
    for i in range(order):
        li = 1.0
        for j in range(order):
            if j != i:
                li *= (target - xs[j]) / (xs[i] - xs[j])
        total += li * ys[i]
    return total


def commutator_trace_defect(p: CylinderProblem, kernel: Callable, mode: int = 0, points: int = 64) -> CommutatorDefect:
    """``Tr(D K) - Tr(K D)`` for ``D = ∂_u + λ`` in one mode and a smooth kernel ``k(u, v)``.

    ``direct`` integrates ``(∂_u + ∂_v)k`` on the diagonal with spectral
    differentiation and Clenshaw–Curtis quadrature; ``boundary_formula`` is
    Green's boundary term ``k(1,1) - k(0,0)`` with the corner values
    extrapolated from interior diagonal nodes.  ``λ`` cancels in the
    commutator, but is read from the problem so the mode is well defined.
    """
    _ = mode_decompose(p).eigenvalues[..., mode]
    u, w = clenshaw_curtis(points)
    dmat = chebyshev_differentiation(points)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    k = np.asarray(kernel(uu, vv))
    du = dmat @ k
    dv = k @ dmat.T
    direct = float(np.real(np.sum(w * np.diag(du + dv))))
    diag = np.real(np.diag(k))
    boundary = _one_sided_value(u, diag, 1.0) - _one_sided_value(u, diag, 0.0)
    return CommutatorDefect(direct, float(boundary))


def periodic_kernel(weights: Sequence[complex], frequencies: Sequence[int]) -> Callable:
    """``Σ w_j φ_j(u) conj(φ_j(v))`` with 1-periodic ``φ_j = e^{2πi n_j u}``: every ``D^j``-image is periodic."""
    weights = np.asarray(weights)
    freqs = np.asarray(frequencies)

    def k(u, v):
        out = np.zeros(np.broadcast(u, v).shape, dtype=complex)
        for wj, nj in zip(weights, freqs):
            out += wj * np.exp(2j * np.pi * nj * u) * np.exp(-2j * np.pi * nj * v)
        return out
    return k


def periodic_boundary_projection() -> np.ndarray:
    """Rank-1 block onto ``(1, -1)/√2``: annihilates exactly the data with ``f(0) = f(1)``."""
    v = np.array([1.0, -1.0]) / np.sqrt(2.0)
    return np.outer(v, v)


def gaussian_bump_kernel(center: Tuple[float, float], width: float) -> Callable:
    cu, cv = center

    def k(u, v):
        return np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * width * width))
    return k


def relative_interior_chern_form(b1: BoundaryValueProblem, b2: BoundaryValueProblem, t) -> FormField:
    """``ch(𝔸_{t,𝒫₁}) - ch(𝔸_{t,𝒫₂})`` for bases of dimension at most one.

    On such bases only the degree-0 part survives: it is the relative heat
    supertrace.  The odd part ``t^{1/2}[∇, 𝖣]`` contributes to degree one
    only through a supertrace of an odd operator, which vanishes.
    """
    base = b1.problem.base
    if base.dim > 1:
        raise NotImplementedError("interior heat forms are assembled on bases of dimension at most one")
    return FormField(base, {(): relative_heat_trace(b1, b2, float(t))})
