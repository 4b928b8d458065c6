import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from indexforms.base_forms import BaseGrid, OperatorForm, exterior_derivative, supertrace
from indexforms.boundary_family import (
    GrassmannSection,
    PotentialSpec,
    assemble_boundary_family,
    conjugated_section,
    eigen_flip_section,
    projected_curvature,
    relative_index,
    smooth_generator,
    spectral_projection,
)
from indexforms.base_forms import ConnectionData
from indexforms.cylinder_aps import (
    FLIP_BLOCKS,
    BoundaryValueProblem,
    CylinderProblem,
    ModeSpectra,
    aps_blocks,
    aps_index,
    aps_problem,
    block_problem,
    calderon_problem,
    calderon_projector,
    calderon_trace_difference,
    commutator_trace_defect,
    domain_projection,
    flipped_problem,
    gaussian_bump_kernel,
    interior_curvature,
    interior_curvature_traces,
    kernel_dimensions,
    laplacian_eigenvalues,
    mode_decompose,
    periodic_boundary_projection,
    periodic_kernel,
    random_flips,
    relative_heat_trace,
    relative_index_identity,
    relative_interior_chern_form,
    relative_interior_eta_form,
    required_cutoff,
    sections_problem,
    smoothstep_cutoff,
    u_grid,
)
from indexforms.errors import CutoffError, DegenerateBCError, IdentityViolationError, KernelGapError

POINT = BaseGrid(0)
CIRCLE = BaseGrid(1, 8)


def constant_problem(a=0.25, N=4, chirality=1):
    return CylinderProblem(assemble_boundary_family(POINT, N, a), chirality)


def circle_problem(N=4, theta_cos=0.3):
    return CylinderProblem(assemble_boundary_family(CIRCLE, N, PotentialSpec(0.25, theta_cos, 0.2)))


def zero_mode(p):
    """Position of ``λ = 0.25`` in the sorted spectrum of the constant family."""
    return p.N


# ---------------------------------------------------------------------------
# modes and Calderon data


def test_constant_potential_modes():
    modes = mode_decompose(constant_problem())
    assert np.allclose(modes.eigenvalues, np.arange(-4, 5) + 0.25, atol=1e-14)


def test_z_dependent_modes_are_smooth():
    p = circle_problem()
    lam = mode_decompose(p).eigenvalues
    jumps = np.abs(np.diff(np.concatenate([lam, lam[:1]]), axis=0))
    # base amplitude 0.2 over 8 points: increments bounded by the derivative bound
    assert np.max(jumps) <= 0.2 * (2 * np.pi / 8) + 1e-12


def test_calderon_block_closed_form():
    cal = calderon_projector(constant_problem())
    block = cal.blocks[zero_mode(constant_problem())]
    expected = np.array([[1, np.exp(-0.25)], [np.exp(-0.25), np.exp(-0.5)]]) / (1 + np.exp(-0.5))
    assert np.allclose(block, expected, atol=1e-15)
    b = cal.blocks
    assert np.allclose(b @ b, b, atol=1e-15)
    assert np.allclose(np.trace(b, axis1=-2, axis2=-1), 1.0)


def test_calderon_projection_contains_cauchy_data():
    p = circle_problem()
    cal = calderon_projector(p)
    lam, v = cal.modes.eigenvalues, cal.modes.vectors
    k = 2
    data = np.concatenate([v[..., :, k], np.exp(-lam[..., None, k]) * v[..., :, k]], axis=-1)
    assert np.allclose(np.einsum("...ij,...j->...i", cal.projection, data), data, atol=1e-13)


def test_calderon_blocks_decay_to_aps_limits():
    lams = np.array([5.0, 6.5, 8.0, -5.0, -7.0, 12.0])
    p = CylinderProblem(assemble_boundary_family(POINT, 4, 0.25))
    modes = mode_decompose(p)
    from indexforms.cylinder_aps import ModeData, _unit_data

    d = _unit_data(lams, 1.0)
    blocks = d[:, :, None] * d[:, None, :]
    limits = aps_blocks(ModeData(lams, np.eye(len(lams))))
    err = np.linalg.norm(blocks - limits, axis=(-2, -1), ord=2)
    assert np.all(err <= np.exp(-np.abs(lams)))
    # fitted decay rate under λ → sλ
    s = np.linspace(1.0, 3.0, 9)
    for lam in (5.0, -7.0):
        dd = _unit_data(s * lam, 1.0)
        e = np.abs(dd[:, 0] * dd[:, 1])
        rate = -np.polyfit(s, np.log(e), 1)[0]
        assert abs(rate - abs(lam)) <= 0.1 * abs(lam)
    assert modes.eigenvalues.shape == (9,)


def test_calderon_gap_error():
    p = CylinderProblem(assemble_boundary_family(POINT, 4, 0.0))
    with pytest.raises(KernelGapError):
        calderon_projector(p)


# ---------------------------------------------------------------------------
# indices


def test_aps_index_zero_and_flip_examples():
    p = constant_problem()
    k = zero_mode(p)
    assert aps_index(aps_problem(p)) == 0
    b = flipped_problem(p, {k: "free"})
    assert aps_index(b) == 1
    ker, coker = kernel_dimensions(b)
    assert (ker, coker) == (1, 0)
    # the kernel is e^{-0.25u}: its Cauchy data survive the condition
    assert aps_index(flipped_problem(p, {k: "full"})) == -1
    assert aps_index(flipped_problem(p, {k: "swap"})) == 0


def test_flip_at_u0_only_adds_kernel():
    p = constant_problem()
    modes = mode_decompose(p)
    blocks = aps_blocks(modes)
    blocks[zero_mode(p), 0, 0] = 0.0
    assert aps_index(block_problem(p, blocks, modes)) == 1


def test_calderon_condition_index_zero():
    b = calderon_problem(circle_problem())
    ker, coker = kernel_dimensions(b)
    assert np.all(ker == 0) and np.all(coker == 0)


def test_chirality_flips_index_sign():
    p = constant_problem(chirality=-1)
    assert aps_index(flipped_problem(p, {zero_mode(p): "free"})) == -1


def test_degenerate_condition_raises():
    p = constant_problem()
    modes = mode_decompose(p)
    blocks = aps_blocks(modes)
    lam = 0.25
    d = np.array([1.0, np.exp(-lam)]) / np.hypot(1.0, np.exp(-lam))
    perp = np.array([-d[1], d[0]])
    angle = 1e-11
    v = np.cos(angle) * perp + np.sin(angle) * d
    blocks[zero_mode(p)] = np.outer(v, v)
    with pytest.raises(DegenerateBCError):
        aps_index(block_problem(p, blocks, modes))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_relative_index_identity_random_flips(seed):
    rng = np.random.default_rng(seed)
    p = circle_problem()
    modes = mode_decompose(p)
    b1 = flipped_problem(p, random_flips(modes, rng, count=5, window=7), modes)
    b2 = flipped_problem(p, random_flips(modes, rng, count=5, window=7), modes)
    report = relative_index_identity(b1, b2)
    assert report.holds
    trace = calderon_trace_difference(b1)
    assert np.max(np.abs(trace - np.rint(trace))) < 1e-10
    assert np.all(np.rint(trace) == aps_index(b1))


def test_relative_index_identity_for_grassmann_sections():
    f = assemble_boundary_family(CIRCLE, 4, PotentialSpec(0.25, 0.3, 0.2))
    p = CylinderProblem(f)
    outer = spectral_projection(f.with_matrices(-f.matrices))
    b1 = sections_problem(p, eigen_flip_section(f, remove=[0]), outer)
    b2 = sections_problem(p, spectral_projection(f), outer)
    assert np.all(aps_index(b1) == 1)
    assert np.all(aps_index(b2) == 0)
    assert relative_index_identity(b1, b2).holds
    assert np.all(relative_index_identity(b1, b1).lhs == 0)
    # with -A at u = 1 the cylinder index agrees with the boundary Toeplitz index
    toeplitz = relative_index(spectral_projection(f), eigen_flip_section(f, remove=[0]), "svd")
    assert np.all(aps_index(b1) - aps_index(b2) == toeplitz)


def test_identity_violation_is_reported():
    p = constant_problem()
    b1 = flipped_problem(p, {zero_mode(p): "free"})
    b2 = flipped_problem(p, {zero_mode(p): "full"}, b1.modes)
    # opposite chiralities on the two sides break the comparison
    p_neg = constant_problem(chirality=-1)
    b_neg = BoundaryValueProblem(p_neg, b1.projection, b1.modes)
    report = relative_index_identity(b_neg, b2, strict=False)
    assert not report.holds
    with pytest.raises(IdentityViolationError):
        relative_index_identity(b_neg, b2)


# ---------------------------------------------------------------------------
# Laplacian spectra


def cheb(n):
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.hstack([2.0, np.ones(n - 1), 2.0]) * (-1.0) ** np.arange(n + 1)
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    # map [-1, 1] → [0, 1] with u = (1 - x)/2 so node 0 is u = 0
    return (1 - x) / 2, -2.0 * D


def collocation_spectrum(block, lam, kind, n=64):
    """Generalized eigenproblem with boundary rows replacing the end-point equations."""
    u, D = cheb(n)
    eye = np.eye(n + 1)
    A = -D @ D + lam * lam * eye
    B = eye.copy()
    J = np.diag([-1.0, 1.0])
    adj = J @ (np.eye(2) - block) @ J
    value_b, deriv_b = (block, adj) if kind == "plus" else (adj, block)
    op = D + lam * eye if kind == "plus" else -D + lam * eye
    rows = []
    for proj, mat in ((value_b, eye), (deriv_b, op)):
        w, v = np.linalg.eigh(proj)
        for r in v[:, w > 0.5].T:
            rows.append(r[0] * mat[0] + r[1] * mat[n])
    assert len(rows) == 2
    A[0], A[n] = rows
    B[0] = B[n] = 0.0
    mu = scipy.linalg.eig(A, B, right=False)
    mu = mu[np.isfinite(mu)]
    return np.sort(mu.real)


@pytest.mark.parametrize("kind", ["plus", "minus"])
@pytest.mark.parametrize("flip", [None, "free", "full", "swap", "calderon"])
def test_laplacian_eigenvalues_against_collocation(flip, kind):
    p = constant_problem()
    k = zero_mode(p)
    modes = mode_decompose(p)
    if flip == "calderon":
        b = calderon_problem(p)
    elif flip is None:
        b = aps_problem(p)
    else:
        b = flipped_problem(p, {k: flip}, modes)
    for mode in (k, k + 2, k - 3):
        got = laplacian_eigenvalues(b, mode, 5, kind)
        block = np.real(b.blocks()[mode])
        ref = collocation_spectrum(block, modes.eigenvalues[mode], kind)[:5]
        assert np.allclose(got, ref, rtol=1e-8, atol=1e-7)


def test_laplacian_aps_large_lambda_family():
    p = constant_problem(a=0.25, N=12)
    b = aps_problem(p)
    mode = 24  # λ = 12.25
    lam = mode_decompose(p).eigenvalues[mode]
    mu = laplacian_eigenvalues(b, mode, 6, "plus")
    assert mu[0] >= lam * lam
    kappa = np.sqrt(mu - lam * lam)
    # Dirichlet at u = 0 and a Robin condition with large λ at u = 1: κ_j → jπ
    j = np.arange(1, 7)
    assert np.all(np.abs(kappa - j * np.pi) < np.pi / 2)
    assert np.all(np.diff(kappa) > 0)


def test_flip_changes_spectrum_by_at_most_one_bound_state():
    p = constant_problem()
    k = zero_mode(p)
    a = laplacian_eigenvalues(aps_problem(p), k, 8, "plus")
    b = laplacian_eigenvalues(flipped_problem(p, {k: "free"}), k, 8, "plus")
    lam2 = 0.25 ** 2
    assert abs(np.sum(a <= lam2) - np.sum(b <= lam2)) <= 1
    assert len(laplacian_eigenvalues(aps_problem(p), k, 0)) == 0


def test_plus_minus_nonzero_spectra_coincide():
    p = circle_problem()
    b = flipped_problem(p, {3: "free", 5: "swap"})
    for mode in (3, 4, 5):
        plus = laplacian_eigenvalues(b, mode, 10, "plus")
        minus = laplacian_eigenvalues(b, mode, 10, "minus")
        assert np.allclose(plus[plus > 1e-9][:8], minus[minus > 1e-9][:8], rtol=1e-10)


def test_weyl_count_per_mode():
    p = constant_problem()
    k = zero_mode(p)
    mu = laplacian_eigenvalues(aps_problem(p), k, 60, "plus")
    cut = [400.0, 1600.0, 6400.0, 25600.0]
    counts = np.array([np.sum(mu <= c) for c in cut])
    kmax = np.sqrt(np.array(cut) - 0.25 ** 2)
    assert np.all(np.abs(counts - kmax / np.pi) <= 2)


# ---------------------------------------------------------------------------
# heat traces


def test_relative_heat_trace_one_mode_flip():
    p = circle_problem(theta_cos=0.0)
    k = zero_mode(p)
    a = aps_problem(p)
    for flip, expected in (("free", 1), ("full", -1)):
        b = flipped_problem(p, {k: flip}, a.modes)
        values = relative_heat_trace(b, a, [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0])
        assert np.max(np.abs(values - expected)) < 1e-10
    assert np.max(np.abs(relative_heat_trace(a, a, 1e-3))) == 0.0


def test_mckean_singer_single_problem():
    p = constant_problem()
    k = zero_mode(p)
    b = flipped_problem(p, {k: "free", k + 1: "full", k - 1: "swap"})
    blocks = b.blocks()
    lam = b.modes.eigenvalues
    spectra = ModeSpectra([blocks[j] for j in range(p.size)], lam, required_cutoff(1e-4))
    values = [spectra.supertrace(t) for t in (1e-4, 1e-3, 0.1, 1.0)]
    assert np.allclose(values, aps_index(b), atol=1e-10)


def test_cutoff_error():
    p = constant_problem()
    b = flipped_problem(p, {zero_mode(p): "free"})
    spectra = ModeSpectra([b.blocks()[zero_mode(p)]], [0.25], 100.0)
    with pytest.raises(CutoffError):
        spectra.supertrace(1e-3)


def test_interior_chern_form_is_closed_constant_on_circle():
    p = circle_problem(theta_cos=0.0)
    a = aps_problem(p)
    b = flipped_problem(p, {zero_mode(p): "free"}, a.modes)
    ch = relative_interior_chern_form(b, a, 1e-2)
    assert np.allclose(ch.component(()), 1.0, atol=1e-10)
    assert exterior_derivative(ch).max_abs() < 1e-10
    assert ch.part(2).max_abs() == 0.0


# ---------------------------------------------------------------------------
# domain projection and interior curvature


def test_cutoff_function():
    u = np.linspace(0, 1, 101)
    chi = smoothstep_cutoff(u)
    assert np.all(chi[u <= 0.25] == 1.0) and np.all(chi[u >= 0.75] == 0.0)
    assert np.all(np.diff(chi) <= 0)


@pytest.mark.parametrize("kind", ["uniform", "chebyshev"])
def test_domain_projection_identities(kind):
    p = circle_problem()
    rng = np.random.default_rng(4)
    b = flipped_problem(p, random_flips(mode_decompose(p), rng, 4))
    d = domain_projection(b, p, u_grid(64, kind))
    idem, annihil = d.identity_defects()
    assert idem <= 1e-8 and annihil <= 1e-8
    f = rng.normal(size=(8, 64, p.size)) + 1j * rng.normal(size=(8, 64, p.size))
    pf = d.apply(f)
    assert np.max(np.abs(d.apply(pf) - pf)) <= 1e-8 * np.max(np.abs(f))
    gamma = np.einsum("...ab,...b->...a", b.projection, d.restrict(pf))
    assert np.max(np.abs(gamma)) <= 1e-8 * np.max(np.abs(f))


def test_domain_projection_trivial_and_low_rank_difference():
    p = constant_problem()
    zero = np.zeros((2 * p.size, 2 * p.size))
    d0 = domain_projection(zero, p, u_grid(16))
    assert np.allclose(d0.dense(), np.eye(16 * p.size))
    a = aps_problem(p)
    b = flipped_problem(p, {zero_mode(p): "free", zero_mode(p) + 2: "full"}, a.modes)
    diff = domain_projection(b, p, u_grid(16)).dense() - domain_projection(a, p, u_grid(16)).dense()
    s = np.linalg.svd(diff, compute_uv=False)
    assert np.sum(s > 1e-10 * s[0]) == np.linalg.matrix_rank(b.projection - a.projection)


@pytest.fixture(scope="module")
def torus_pair():
    base = BaseGrid(2, 8, "spectral")
    f = assemble_boundary_family(base, 4, 0.25)
    p = CylinderProblem(f)
    g = smooth_generator(base, 4, 2, np.random.default_rng(1))
    outer = spectral_projection(f.with_matrices(-f.matrices))
    q0 = conjugated_section(spectral_projection(f), g, 0.3)
    q1 = conjugated_section(outer, g, 0.2)
    b1 = sections_problem(p, q0, q1)
    b2 = aps_problem(p)
    grid = u_grid(16)
    return p, b1, b2, domain_projection(b1, p, grid), domain_projection(b2, p, grid)


def test_interior_curvature_is_supported_on_domain(torus_pair):
    p, b1, b2, d1, d2 = torus_pair
    r = interior_curvature(d1)
    P = d1.dense()
    sandwiched = r.sandwich(P)
    assert (sandwiched - r).max_abs() <= 1e-8 * max(1.0, r.max_abs())
    assert r.max_abs() > 1e-3
    assert interior_curvature(d2).max_abs() < 1e-12


def test_interior_curvature_difference_is_low_mode(torus_pair):
    p, b1, b2, d1, d2 = torus_pair
    diff = interior_curvature(d1).component((0, 1)) - interior_curvature(d2).component((0, 1))
    nodes = len(d1.grid.nodes)
    m = p.size
    shaped = diff.reshape(diff.shape[:2] + (nodes, m, nodes, m))
    high = np.abs(np.arange(-p.N, p.N + 1)) > p.N / 2
    assert np.max(np.abs(shaped[..., high, :, :])) <= 1e-8
    assert np.max(np.abs(shaped[..., :, :, high])) <= 1e-8


def test_interior_eta_dense_route_matches_boundary_reduction(torus_pair):
    p, b1, b2, d1, d2 = torus_pair
    fast = relative_interior_eta_form(d1, d2)
    dense = relative_interior_eta_form(d1, d2, dense=True)
    assert (fast - dense).max_abs() <= 1e-10
    assert fast.component(()).size == 0 or np.max(np.abs(fast.component(()))) == 0.0
    assert fast.max_abs() > 1e-2


def test_interior_eta_matches_boundary_curvature_difference(torus_pair):
    p, b1, b2, d1, d2 = torus_pair
    base = p.base
    c = ConnectionData.flat(base, (2 * p.size, 0))
    r1 = supertrace(projected_curvature(b1.projection, base, c))
    r2 = supertrace(projected_curvature(b2.projection, base, c))
    eta = relative_interior_eta_form(d1, d2)
    assert (eta.part(2) - (r1 - r2)).max_abs() <= 1e-10


def test_interior_eta_trivial_cases(torus_pair):
    p, b1, b2, d1, d2 = torus_pair
    assert relative_interior_eta_form(d1, d1).max_abs() == 0.0
    traces = interior_curvature_traces(d1)
    assert list(traces) == [1]


# ---------------------------------------------------------------------------
# commutator defect


def test_commutator_defect_interior_kernel_vanishes():
    p = constant_problem()
    k = gaussian_bump_kernel((0.5, 0.5), 0.05)
    res = commutator_trace_defect(p, k)
    assert abs(res.direct) < 1e-10 and abs(res.boundary_formula) < 1e-10


def test_commutator_defect_parametrix_kernel_vanishes():
    p = constant_problem()
    proj = periodic_boundary_projection()
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    assert np.allclose(proj @ v, v)
    k = periodic_kernel([0.3, 1.0, -0.5j], [0, 1, -2])
    # periodic data lie in ker 𝒫 for every derivative
    u = np.array([0.0, 1.0])
    for n in (0, 1, -2):
        vals = np.exp(2j * np.pi * n * u) * (2j * np.pi * n) ** 3
        assert np.allclose(proj @ vals, 0)
    res = commutator_trace_defect(p, k)
    assert abs(res.direct) < 1e-8


def test_commutator_defect_boundary_bump():
    res = commutator_trace_defect(constant_problem(), gaussian_bump_kernel((0.0, 0.05), 0.2))
    assert abs(res.direct) > 1e-2
    assert abs(res.direct - res.boundary_formula) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 2.0), st.floats(-2, 2))
def test_commutator_defect_green_formula(a, b, c, e):
    def k(u, v):
        return (1 + a * u + b * v * v) * np.exp(-c * (u - 0.3) ** 2 - 0.5 * v) * np.cos(e * (u - v))

    res = commutator_trace_defect(constant_problem(), k)
    assert abs(res.direct - res.boundary_formula) < 1e-6
