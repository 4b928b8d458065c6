"""Self-adjoint first-order operator families on the circle and their Grassmann sections.

The boundary operator at a base point ``z`` is ``-i d/dθ + a(z, θ)`` truncated
to Fourier modes ``-N..N``.  Row/column ``i`` of every matrix corresponds to
the mode ``i - N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm

from .base_forms import (
    BaseGrid,
    ConnectionData,
    FormField,
    OperatorForm,
    covariant_derivative,
    nilpotent_exponential,
    operator_derivative,
    supertrace,
    wedge_multiply,
)
from .bloch import qwz_projection
from .errors import KernelGapError, MethodsDisagreeError, NotRelativelySmoothingError, RankJumpError

GAP_TOL = 1e-6
RANK_TOL = 1e-8
DECAY_TOL = 1e-8
PROJECTION_TOL = 1e-10


@dataclass(frozen=True)
class PotentialSpec:
    """``a(z, θ) = constant + theta_cos·cos θ + base_amplitude·sin z_0``."""

    constant: float = 0.25
    theta_cos: float = 0.0
    base_amplitude: float = 0.0

    def __call__(self, coords, theta):
        a = self.constant + self.theta_cos * np.cos(theta)
        if self.base_amplitude and coords:
            a = a + self.base_amplitude * np.sin(coords[0])[..., None]
        return a


PotentialLike = Union[float, PotentialSpec, Callable]


@dataclass
class BoundaryOperatorFamily:
    base: BaseGrid
    N: int
    fourier_coefficients: np.ndarray  # grid.shape + (4N+1,), index m + 2N
    matrices: np.ndarray  # grid.shape + (2N+1, 2N+1)

    @property
    def size(self) -> int:
        return 2 * self.N + 1

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def shifted(self, amount: float) -> "BoundaryOperatorFamily":
        """The family ``∂ + amount``."""
        coeffs = self.fourier_coefficients.copy()
        coeffs[..., 2 * self.N] += amount
        return BoundaryOperatorFamily(self.base, self.N, coeffs, self.matrices + amount * np.eye(self.size))

    def with_matrices(self, matrices: np.ndarray) -> "BoundaryOperatorFamily":
        return BoundaryOperatorFamily(self.base, self.N, self.fourier_coefficients, matrices)


def assemble_boundary_family(base: BaseGrid, N: int, potential: PotentialLike = 0.25) -> BoundaryOperatorFamily:
    """Matrix of ``-i d/dθ + a`` in the Fourier basis at every base point."""
    if N < 4:
        raise ValueError("Fourier cutoff N must be at least 4")
    if isinstance(potential, (int, float)):
        potential = PotentialSpec(constant=float(potential))
    samples = max(64, 8 * N)
    theta = 2.0 * np.pi * np.arange(samples) / samples
    values = np.asarray(potential(base.coordinates(), theta), dtype=float)
    values = np.broadcast_to(values, base.shape + (samples,))
    spectrum = np.fft.fft(values, axis=-1) / samples
    m = np.arange(-2 * N, 2 * N + 1)
    coeffs = spectrum[..., m % samples]
    modes = np.arange(-N, N + 1)
    diff = modes[:, None] - modes[None, :]
    toeplitz = coeffs[..., diff + 2 * N]
    matrices = toeplitz + np.diag(modes.astype(float))
    matrices = 0.5 * (matrices + np.conj(np.swapaxes(matrices, -1, -2)))
    return BoundaryOperatorFamily(base, N, coeffs, matrices)


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gap: float


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of each column real and positive."""
    idx = np.argmax(np.abs(vectors), axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * (np.abs(pivot) / pivot)


def spectral_decomposition(f: BoundaryOperatorFamily, gap_tol: float = GAP_TOL) -> SpectralDecomposition:
    w, v = np.linalg.eigh(f.matrices)
    gap = float(np.min(np.abs(w)))
    if gap <= gap_tol:
        raise KernelGapError(f"boundary operator has |eigenvalue| = {gap:.3e} <= gap_tol = {gap_tol:g}")
    return SpectralDecomposition(w, fix_phases(v), gap)


@dataclass
class GrassmannSection:
    """Projection field ``P(z)`` together with the spectral projection it perturbs."""

    base: BaseGrid
    projection: np.ndarray
    reference: np.ndarray
    N: int
    perturbation_rank: Union[int, str] = 0

    def __post_init__(self):
        p = self.projection
        herm = np.max(np.abs(p - np.conj(np.swapaxes(p, -1, -2))))
        idem = np.max(np.abs(p @ p - p))
        if herm > PROJECTION_TOL or idem > PROJECTION_TOL:
            raise ValueError(f"not an orthogonal projection (hermiticity {herm:.1e}, idempotence {idem:.1e})")

    @property
    def size(self) -> int:
        return self.projection.shape[-1]

    def rank_field(self) -> np.ndarray:
        return np.rint(np.real(np.trace(self.projection, axis1=-2, axis2=-1))).astype(int)

    def as_operator_form(self) -> OperatorForm:
        return OperatorForm.from_matrices(self.base, (self.size, 0), self.projection)

    def with_projection(self, projection: np.ndarray, perturbation_rank="dense-smoothing") -> "GrassmannSection":
        return GrassmannSection(self.base, projection, self.reference, self.N, perturbation_rank)


def _high_mode_mask(N: int) -> np.ndarray:
    modes = np.abs(np.arange(-N, N + 1))
    high = modes > N / 2
    return high[:, None] | high[None, :]


def decay_test(difference: np.ndarray, N: int, tol: float = DECAY_TOL) -> float:
    """Largest entry of a matrix field on rows or columns with mode ``|k| > N/2``."""
    mask = _high_mode_mask(N)
    worst = float(np.max(np.abs(difference[..., mask]))) if mask.any() else 0.0
    if worst > tol:
        raise NotRelativelySmoothingError(f"projection difference has entry {worst:.2e} at modes |k| > N/2")
    return worst


def spectral_projection(f: BoundaryOperatorFamily, gap_tol: float = GAP_TOL) -> GrassmannSection:
    """Projection onto the positive eigenspaces of the family."""
    dec = spectral_decomposition(f, gap_tol)
    v = dec.eigenvectors
    pos = (dec.eigenvalues > 0).astype(float)
    proj = np.einsum("...ia,...a,...ja->...ij", v, pos, np.conj(v))
    proj = 0.5 * (proj + np.conj(np.swapaxes(proj, -1, -2)))
    return GrassmannSection(f.base, proj, proj.copy(), f.N, 0)


def eigen_flip_section(f: BoundaryOperatorFamily, add: Sequence[int] = (), remove: Sequence[int] = (),
                       gap_tol: float = GAP_TOL) -> GrassmannSection:
    """Spectral projection with eigenlines flipped.

    ``add=[j]`` adds the ``j``-th negative eigenvector counted from zero;
    ``remove=[j]`` removes the ``j``-th positive one.  This is the projection of
    ``∂ - 2 Σ λ v v*`` over the flipped eigenpairs.
    """
    dec = spectral_decomposition(f, gap_tol)
    ref = spectral_projection(f, gap_tol).projection
    w, v = dec.eigenvalues, dec.eigenvectors
    n_neg = np.sum(w < 0, axis=-1)
    if np.any(n_neg != n_neg.ravel()[0]):
        raise RankJumpError("number of negative eigenvalues varies over the base")
    n_neg = int(n_neg.ravel()[0])
    weights = (w > 0).astype(float)
    for j in add:
        weights[..., n_neg - 1 - j] = 1.0
    for j in remove:
        weights[..., n_neg + j] = 0.0
    proj = np.einsum("...ia,...a,...ja->...ij", v, weights, np.conj(v))
    proj = 0.5 * (proj + np.conj(np.swapaxes(proj, -1, -2)))
    return GrassmannSection(f.base, proj, ref, f.N, len(add) + len(remove))


def sign_flipped_family(f: BoundaryOperatorFamily, add: Sequence[int] = (), remove: Sequence[int] = ()) -> BoundaryOperatorFamily:
    """``∂ - 2 Σ λ_j v_j v_j*`` for the same eigenpairs as ``eigen_flip_section``."""
    dec = spectral_decomposition(f)
    w, v = dec.eigenvalues, dec.eigenvectors
    n_neg = int(np.sum(w < 0, axis=-1).ravel()[0])
    idx = [n_neg - 1 - j for j in add] + [n_neg + j for j in remove]
    mats = f.matrices.copy()
    for i in idx:
        vi = v[..., :, i]
        mats = mats - 2.0 * w[..., i, None, None] * vi[..., :, None] * np.conj(vi[..., None, :])
    return f.with_matrices(mats)


def low_mode_hermitian(N: int, modes: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Gaussian Hermitian matrix supported on Fourier modes ``|k| <= modes``."""
    size = 2 * N + 1
    k = 2 * modes + 1
    g = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    h = np.zeros((size, size), dtype=complex)
    lo = N - modes
    h[lo:lo + k, lo:lo + k] = scale * 0.5 * (g + np.conj(g.T))
    return h


def perturbed_section(f: BoundaryOperatorFamily, rng: np.random.Generator, modes: int = 2,
                      scale: float = 1.0, gap_tol: float = GAP_TOL) -> GrassmannSection:
    """Positive spectral projection of ``∂ + H`` with a seeded low-mode Hermitian ``H``."""
    ref = spectral_projection(f, gap_tol).projection
    h = low_mode_hermitian(f.N, modes, rng, scale)
    pert = spectral_projection(f.with_matrices(f.matrices + h), gap_tol)
    return GrassmannSection(f.base, pert.projection, ref, f.N, 2 * modes + 1)


def shift_section(section: GrassmannSection, steps: int = 1) -> GrassmannSection:
    """``S^k P S*^k`` with ``S`` the truncated shift ``e_n -> e_{n+1}``."""
    size = section.size
    shift = np.eye(size, k=-steps)
    proj = shift @ section.projection @ shift.T
    proj = 0.5 * (proj + np.conj(np.swapaxes(proj, -1, -2)))
    return GrassmannSection(section.base, proj, section.reference, section.N, abs(steps))


def bloch_twisted_section(f: BoundaryOperatorFamily, mass: float = 1.0, negative_slots: Tuple[int, int] = (0, 1),
                          gap_tol: float = GAP_TOL) -> GrassmannSection:
    """``Π_> + V p(z) V*`` with ``p`` the two-band Bloch projection.

    ``V`` spans the two negative eigenvectors selected by ``negative_slots``
    (counted from zero).  The added line bundle over the 2-torus has Chern
    number ``±1`` for ``|mass| < 2``.
    """
    dec = spectral_decomposition(f, gap_tol)
    ref = spectral_projection(f, gap_tol).projection
    w, v = dec.eigenvalues, dec.eigenvectors
    n_neg = int(np.sum(w < 0, axis=-1).ravel()[0])
    cols = [n_neg - 1 - j for j in negative_slots]
    frame = v[..., :, cols]
    p = qwz_projection(f.base, mass)
    proj = ref + frame @ p @ np.conj(np.swapaxes(frame, -1, -2))
    proj = 0.5 * (proj + np.conj(np.swapaxes(proj, -1, -2)))
    return GrassmannSection(f.base, proj, ref, f.N, 1)


def smooth_generator(base: BaseGrid, N: int, modes: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian low-mode matrix field depending smoothly (first harmonics) on the base."""
    coords = base.coordinates()
    h = low_mode_hermitian(N, modes, rng)
    field = np.broadcast_to(h, base.shape + h.shape).astype(complex).copy()
    for c in coords:
        for trig in (np.cos, np.sin):
            field = field + trig(c)[..., None, None] * low_mode_hermitian(N, modes, rng)
    return field


def conjugated_section(section: GrassmannSection, generator: np.ndarray, strength: float) -> GrassmannSection:
    """``U P U*`` with ``U = exp(i·strength·H(z))`` and ``H`` a low-mode Hermitian field."""
    flat_gen = generator.reshape((-1,) + generator.shape[-2:])
    unitaries = np.stack([expm(1j * strength * g) for g in flat_gen]).reshape(generator.shape)
    proj = unitaries @ section.projection @ np.conj(np.swapaxes(unitaries, -1, -2))
    proj = 0.5 * (proj + np.conj(np.swapaxes(proj, -1, -2)))
    return GrassmannSection(section.base, proj, section.reference, section.N, "dense-smoothing")


def _same_family(p1: GrassmannSection, p2: GrassmannSection):
    if p1.base != p2.base or p1.size != p2.size:
        raise ValueError("sections live on different bases or fibres")


def relative_eta_pointwise(p1: GrassmannSection, p2: GrassmannSection) -> FormField:
    """``Tr((P1 - P1^⊥) - (P2 - P2^⊥)) = 2 Tr(P1 - P2)``."""
    _same_family(p1, p2)
    value = 2.0 * np.trace(p1.projection - p2.projection, axis1=-2, axis2=-1)
    return FormField(p1.base, {(): value})


def _range_frame(projection: np.ndarray, rank: int) -> np.ndarray:
    _, v = np.linalg.eigh(projection)
    return v[:, -rank:] if rank else v[:, :0]


def relative_index(p1: GrassmannSection, p2: GrassmannSection, method: str = "both") -> np.ndarray:
    """Index of ``P2 P1 : ran P1 -> ran P2`` at every base point.

    ``method="trace"`` rounds ``Tr(P1 - P2)``; ``"svd"`` counts kernel and
    cokernel from the singular values of the compressed map.  ``"both"``
    evaluates the two and insists that they agree.
    """
    _same_family(p1, p2)
    out = {}
    if method in ("trace", "both"):
        tr = np.real(np.trace(p1.projection - p2.projection, axis1=-2, axis2=-1))
        if np.max(np.abs(tr - np.rint(tr))) > 1e-6:
            raise MethodsDisagreeError(f"Tr(P1 - P2) is not an integer: deviation {np.max(np.abs(tr - np.rint(tr))):.2e}")
        out["trace"] = np.rint(tr).astype(int)
    if method in ("svd", "both"):
        out["svd"] = _svd_index(p1.projection, p2.projection)
    if method not in ("trace", "svd", "both"):
        raise ValueError(f"unknown method {method!r}")
    if method == "both":
        if np.any(out["trace"] != out["svd"]):
            raise MethodsDisagreeError("trace and SVD relative indices differ")
        return out["trace"]
    return out[method]


def _svd_index(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    flat1 = p1.reshape((-1,) + p1.shape[-2:])
    flat2 = p2.reshape((-1,) + p2.shape[-2:])
    result = np.empty(len(flat1), dtype=int)
    for i, (a, b) in enumerate(zip(flat1, flat2)):
        r1 = _numerical_rank(a)
        r2 = _numerical_rank(b)
        v1 = _range_frame(a, r1)
        v2 = _range_frame(b, r2)
        sv = np.linalg.svd(np.conj(v2.T) @ v1, compute_uv=False) if r1 and r2 else np.zeros(0)
        rank = int(np.sum(sv > RANK_TOL))
        result[i] = (r1 - rank) - (r2 - rank)
    return result.reshape(p1.shape[:-2])


def _numerical_rank(projection: np.ndarray) -> int:
    return int(np.sum(np.linalg.eigvalsh(projection) > 0.5))


@dataclass
class ToeplitzFamily:
    source: GrassmannSection
    target: GrassmannSection

    @property
    def operator(self) -> np.ndarray:
        """``P2 P1`` as an operator on the ambient space (zero off ran P1)."""
        return self.target.projection @ self.source.projection


def flat_connection(section: GrassmannSection) -> ConnectionData:
    return ConnectionData.flat(section.base, (section.size, 0))


def projected_curvature(projection: np.ndarray, base: BaseGrid, c: ConnectionData, graded_dims=None) -> OperatorForm:
    """``P (Ω + ∇P ∧ ∇P) P`` for a projection field ``P`` and ambient connection ``c``."""
    dims = tuple(graded_dims) if graded_dims is not None else (projection.shape[-1], 0)
    pform = OperatorForm.from_matrices(base, dims, projection)
    grad = covariant_derivative(c, pform)
    body = wedge_multiply(grad, grad)
    omega = c.connection_one_form
    if omega.blocks:
        body = body + c.curvature()
    return body.sandwich(projection)


def induced_connection_and_curvature(p: GrassmannSection, c: ConnectionData | None = None):
    """Compressed connection ``P∇P ⊕ P^⊥∇P^⊥`` and the curvature of ``P∇P``.

    The connection one-form is ``PωP + P^⊥ωP^⊥ + [P, dP]``; the curvature is
    returned in closed form ``P(Ω + ∇P ∧ ∇P)P`` so that it is supported on
    ``ran P`` exactly.
    """
    c = c or flat_connection(p)
    proj = p.projection
    comp = np.eye(p.size) - proj
    pform = p.as_operator_form()
    dp = operator_derivative(pform)
    omega = c.connection_one_form
    blocks = {}
    for idx in p.base.multi_indices(1):
        w = omega.component(idx)
        d = dp.component(idx)
        blocks[idx] = proj @ w @ proj + comp @ w @ comp + (proj @ d - d @ proj)
    induced = ConnectionData(p.base, OperatorForm(p.base, (p.size, 0), blocks, parity=1))
    return induced, projected_curvature(proj, p.base, c)


def relative_eta_form(p1: GrassmannSection, p2: GrassmannSection, c: ConnectionData | None = None) -> FormField:
    """``Tr(P1 - P2) + Σ_k (-1)^k/k! Tr(R1^k - R2^k)`` with finitely many terms."""
    _same_family(p1, p2)
    decay_test(p1.projection - p2.projection, p1.N)
    c = c or flat_connection(p1)
    _, r1 = induced_connection_and_curvature(p1, c)
    _, r2 = induced_connection_and_curvature(p2, c)
    e1 = nilpotent_exponential(p1.as_operator_form(), r1)
    e2 = nilpotent_exponential(p2.as_operator_form(), r2)
    return supertrace(e1 - e2)


def kernel_projections(t: ToeplitzFamily, rank_tol: float = RANK_TOL):
    """Projections onto ``ker(P2P1|ran P1)`` and ``ker(P1P2|ran P2)`` with constant-rank check."""
    p1 = t.source.projection
    p2 = t.target.projection
    r1 = int(t.source.rank_field().ravel()[0])
    r2 = int(t.target.rank_field().ravel()[0])
    if np.any(t.source.rank_field() != r1) or np.any(t.target.rank_field() != r2):
        raise RankJumpError("section rank varies over the base")
    flat1 = p1.reshape((-1,) + p1.shape[-2:])
    flat2 = p2.reshape((-1,) + p2.shape[-2:])
    n = p1.shape[-1]
    plus = np.zeros((len(flat1), n, n), dtype=complex)
    minus = np.zeros_like(plus)
    dims = set()
    for i, (a, b) in enumerate(zip(flat1, flat2)):
        v1 = _range_frame(a, r1)
        v2 = _range_frame(b, r2)
        m = np.conj(v2.T) @ v1
        u, s, vh = np.linalg.svd(m, full_matrices=True)
        rank = int(np.sum(s > rank_tol))
        ker1 = v1 @ np.conj(vh[rank:].T)
        ker2 = v2 @ u[:, rank:]
        plus[i] = ker1 @ np.conj(ker1.T)
        minus[i] = ker2 @ np.conj(ker2.T)
        dims.add((r1 - rank, r2 - rank))
    if len(dims) > 1:
        raise RankJumpError(f"kernel dimensions vary over the base: {sorted(dims)}")
    shape = p1.shape
    return plus.reshape(shape), minus.reshape(shape), dims.pop()


def kernel_bundle_chern(t: ToeplitzFamily, c: ConnectionData | None = None) -> FormField:
    """Chern form ``Str(e^{-(∇⁰)²})`` of the kernel superbundle of ``P2 P1``."""
    base = t.source.base
    n = t.source.size
    c = c or flat_connection(t.source)
    plus, minus, _ = kernel_projections(t)
    big = np.zeros(plus.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    big[..., :n, :n] = plus
    big[..., n:, n:] = minus
    doubled = c.doubled()
    curv = projected_curvature(big, base, doubled, graded_dims=(n, n))
    unit = OperatorForm.from_matrices(base, (n, n), big)
    return supertrace(nilpotent_exponential(unit, curv))


ETA_SPLIT_TIME = 1e-2


def _truncation_corrected_spectrum(matrix: np.ndarray, mean: float, N: int, cutoff: float) -> np.ndarray:
    """Galerkin eigenvalues with ``|λ| < N/2`` plus the asymptotic tail ``n + mean`` up to ``|λ| ≤ cutoff``.

    The circle operator is gauge equivalent to ``-i d/dθ + mean``, so the
    eigenvalues beyond the reliable window are exactly ``n + mean``; the
    window count is cross-checked against that model.
    """
    w = np.linalg.eigvalsh(matrix)
    window = N / 2.0
    inner = w[np.abs(w) < window]
    n_lo = int(np.floor(-cutoff - mean)) - 1
    n_hi = int(np.ceil(cutoff - mean)) + 1
    model = np.arange(n_lo, n_hi + 1) + mean
    if np.sum(np.abs(model) < window) != len(inner):
        raise KernelGapError("Galerkin window does not match the asymptotic eigenvalue count")
    tail = model[(np.abs(model) >= window) & (np.abs(model) <= cutoff)]
    return np.concatenate([inner, tail])


def _eta_heat_fit(matrix: np.ndarray, mean: float, N: int, split: float = ETA_SPLIT_TIME) -> float:
    """η = Σ sign(λ) erfc(|λ|√T) + π^{-1/2} ∫_0^T t^{-1/2} Tr(∂ e^{-t∂²}) dt.

    The large-time piece integrates each eigenvalue exactly.  The small-time
    piece fits ``Tr(∂ e^{-t∂²})`` on ``[1e-4, T]`` by powers ``t^{j/2}`` and
    integrates the fit term by term.
    """
    from scipy.special import erfc

    t = np.geomspace(1e-4, split, 24)
    cutoff = np.sqrt(np.log(1e20) / t[0]) + 2.0
    lam = _truncation_corrected_spectrum(matrix, mean, N, cutoff)
    samples = np.array([np.sum(lam * np.exp(-ti * lam * lam)) for ti in t])
    from .zeta_traces import heat_trace_expansion_fit, power_menu

    fit = heat_trace_expansion_fit(t, samples, power_menu(0.0, 0.5, 8), fit_tol=1e-6)
    small = sum(c * split ** (p + 0.5) / (p + 0.5) for p, c in fit.coefficients.items()) / np.sqrt(np.pi)
    large = np.sum(np.sign(lam) * erfc(np.abs(lam) * np.sqrt(split)))
    return float(np.real(small) + large)


def eta_invariant(f: BoundaryOperatorFamily, method: str = "closed_form", gap_tol: float = GAP_TOL) -> FormField:
    """Eta invariant of the circle operator at every base point.

    ``closed_form`` needs a θ-independent potential and returns
    ``ζ_H(0, {a}) - ζ_H(0, 1 - {a})``; ``heat_fit`` works for any potential.
    """
    from .zeta_traces import hurwitz_zeta

    spectral_decomposition(f, gap_tol)
    coeffs = f.fourier_coefficients
    mean = np.real(coeffs[..., 2 * f.N])
    flat_mean = mean.reshape(-1)
    values = np.empty(flat_mean.shape)
    if method == "closed_form":
        others = np.delete(coeffs, 2 * f.N, axis=-1)
        if np.max(np.abs(others)) > 1e-12:
            raise ValueError("closed_form eta needs a θ-independent potential")
        for i, a in enumerate(flat_mean):
            q = a % 1.0
            if min(q, 1.0 - q) <= gap_tol:
                raise KernelGapError(f"potential {a} gives a zero mode")
            values[i] = hurwitz_zeta(0.0, q) - hurwitz_zeta(0.0, 1.0 - q)
    elif method == "heat_fit":
        mats = f.matrices.reshape((-1,) + f.matrices.shape[-2:])
        for i, (m, a) in enumerate(zip(mats, flat_mean)):
            values[i] = _eta_heat_fit(m, float(a), f.N)
    else:
        raise ValueError(f"unknown method {method!r}")
    return FormField(f.base, {(): values.reshape(mean.shape)})
