import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indexforms.base_forms import BaseGrid, FormField, exterior_derivative, integrate_over_base
from indexforms.bloch import fhs_chern_number, qwz_projection
from indexforms.boundary_family import (
    GrassmannSection,
    PotentialSpec,
    ToeplitzFamily,
    assemble_boundary_family,
    bloch_twisted_section,
    conjugated_section,
    decay_test,
    eigen_flip_section,
    induced_connection_and_curvature,
    kernel_bundle_chern,
    perturbed_section,
    relative_eta_form,
    relative_eta_pointwise,
    relative_index,
    shift_section,
    sign_flipped_family,
    smooth_generator,
    spectral_projection,
)
from indexforms.errors import KernelGapError, NotRelativelySmoothingError, RankJumpError
from indexforms.zeta_traces import hurwitz_zeta

POINT = BaseGrid(0)


def test_constant_potential_spectrum():
    f = assemble_boundary_family(POINT, 4, 0.25)
    w = np.linalg.eigvalsh(f.matrices)
    assert np.allclose(w, np.arange(-4, 5) + 0.25, atol=1e-14)
    # the N = 2 example restricted to the central modes
    assert np.allclose(w[2:7], [-1.75, -0.75, 0.25, 1.25, 2.25])


def test_cos_potential_is_hermitian_tridiagonal():
    f = assemble_boundary_family(POINT, 6, PotentialSpec(constant=0.3, theta_cos=1.0))
    m = f.matrices
    assert np.max(np.abs(m - m.conj().T)) < 1e-14
    off = m - np.diag(np.diag(m))
    assert np.allclose(np.diag(off, 1), 0.5) and np.allclose(np.diag(off, -1), 0.5)
    assert np.max(np.abs(np.triu(off, 2))) < 1e-14


def test_gauge_invariance_of_spectrum():
    # -i d/dθ + a(θ) is unitarily equivalent to -i d/dθ + mean(a); low eigenvalues converge
    f = assemble_boundary_family(POINT, 40, PotentialSpec(constant=0.3, theta_cos=0.7))
    w = np.linalg.eigvalsh(f.matrices)
    central = w[np.abs(w) < 10]
    assert np.allclose(central, np.round(central - 0.3) + 0.3, atol=1e-10)


def test_spectral_projection_rank_and_errors():
    p = spectral_projection(assemble_boundary_family(POINT, 4, 0.25))
    assert p.rank_field() == 5
    full = spectral_projection(assemble_boundary_family(POINT, 4, 10.25))
    assert np.allclose(full.projection, np.eye(9))
    with pytest.raises(KernelGapError):
        spectral_projection(assemble_boundary_family(POINT, 4, 0.0))


def test_projection_invariants_over_base():
    grid = BaseGrid(2, 12)
    f = assemble_boundary_family(grid, 8, PotentialSpec(0.25, 0.4, 0.1))
    p = spectral_projection(f).projection
    assert np.max(np.abs(p @ p - p)) < 1e-10
    assert np.max(np.abs(p - np.conj(np.swapaxes(p, -1, -2)))) < 1e-10


@pytest.mark.parametrize("a", [0.25, 0.75])
def test_eta_closed_form_matches_hurwitz(a):
    from indexforms.boundary_family import eta_invariant

    f = assemble_boundary_family(POINT, 16, a)
    value = eta_invariant(f, "closed_form").component(())
    oracle = hurwitz_zeta(0, a) - hurwitz_zeta(0, 1 - a)
    assert abs(value - oracle) < 1e-12
    assert abs(value - (1 - 2 * a)) < 1e-12


def test_eta_symmetric_spectrum():
    from indexforms.boundary_family import eta_invariant

    f = assemble_boundary_family(POINT, 16, 0.5)
    assert abs(eta_invariant(f, "closed_form").component(())) < 1e-14
    assert abs(eta_invariant(f, "heat_fit").component(())) < 1e-8


def test_relative_eta_pointwise_examples():
    f = assemble_boundary_family(POINT, 8, 0.25)
    p = spectral_projection(f)
    assert relative_eta_pointwise(p, p).max_abs() == 0
    removed = eigen_flip_section(f, remove=[0])
    assert np.isclose(relative_eta_pointwise(p, removed).component(()), 2.0)


def test_sign_flip_changes_eta_by_two():
    from indexforms.boundary_family import eta_invariant

    f1 = assemble_boundary_family(POINT, 16, 0.25)
    f2 = sign_flipped_family(f1, remove=[0])
    p1, p2 = spectral_projection(f1), spectral_projection(f2)
    rel = relative_eta_pointwise(p1, p2).component(())
    # the flipped family has eigenvalue -0.25 in place of 0.25
    e1 = eta_invariant(f1, "heat_fit").component(())
    e2 = eta_invariant(f2, "heat_fit").component(())
    assert np.isclose(rel, 2.0)
    assert abs((e1 - e2) - rel) < 1e-6


def test_relative_index_examples():
    f = assemble_boundary_family(POINT, 8, 0.25)
    p = spectral_projection(f)
    assert relative_index(p, p) == 0
    assert relative_index(eigen_flip_section(f, add=[0]), p) == 1
    assert relative_index(eigen_flip_section(f, remove=[0]), p) == -1
    # shifted section: inclusion of modes >= 1 into modes >= 0 has cokernel e_0
    assert relative_index(shift_section(p, 1), p, "svd") == -1
    assert relative_index(shift_section(p, 1), p, "trace") == -1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_relative_eta_is_twice_trace_index(seed):
    rng = np.random.default_rng(seed)
    f = assemble_boundary_family(POINT, 12, 0.25)
    p1 = perturbed_section(f, rng, modes=2, scale=2.0)
    p2 = perturbed_section(f, rng, modes=2, scale=2.0)
    rel = relative_eta_pointwise(p1, p2).component(())
    assert np.isclose(rel, 2 * relative_index(p1, p2, "trace"), atol=1e-10)
    assert relative_index(p1, p2, "trace") == relative_index(p1, p2, "svd")


def test_relative_index_constant_along_homotopy():
    rng = np.random.default_rng(11)
    f = assemble_boundary_family(POINT, 10, 0.25)
    p1 = eigen_flip_section(f, add=[0, 1])
    p2 = spectral_projection(f)
    gen = smooth_generator(POINT, 10, 3, rng)
    values = set()
    for s in np.linspace(0, 1, 20):
        q = conjugated_section(p2, gen, 0.4 * s)
        decay_test(q.projection - p2.projection, q.N)
        values.add(int(relative_index(p1, q)))
    assert values == {2}


def test_decay_test_rejects_high_mode_difference():
    f = assemble_boundary_family(POINT, 8, 0.25)
    p = spectral_projection(f)
    q = p.projection.copy()
    q[-1, -1] = 0.0  # drop the top mode
    with pytest.raises(NotRelativelySmoothingError):
        relative_eta_form(p.with_projection(q), p)


def test_flat_constant_section_has_zero_curvature():
    grid = BaseGrid(2, 8)
    p = spectral_projection(assemble_boundary_family(grid, 4, 0.25))
    _, r = induced_connection_and_curvature(p)
    assert r.max_abs() < 1e-14


def test_curvature_is_supported_on_range():
    grid = BaseGrid(2, 12)
    p = bloch_twisted_section(assemble_boundary_family(grid, 6, 0.25))
    conn, r = induced_connection_and_curvature(p)
    proj = p.projection
    assert (r.sandwich(proj) - r).max_abs() < 1e-10
    for v in conn.connection_one_form.blocks.values():
        assert np.max(np.abs(v + np.conj(np.swapaxes(v, -1, -2)))) < 1e-12


@pytest.mark.parametrize("mass", [1.0, -1.0])
def test_degree_two_quantization_against_lattice_chern(mass):
    grid = BaseGrid(2, 24)
    f = assemble_boundary_family(grid, 6, 0.25)
    p1 = bloch_twisted_section(f, mass)
    p2 = spectral_projection(f)
    eta = relative_eta_form(p2, p1)
    chern = integrate_over_base(eta.part(2)) / (2j * np.pi)
    oracle = fhs_chern_number(qwz_projection(grid, mass))
    assert abs(chern - oracle) < 0.05
    assert np.allclose(eta.part(0).component(()), -1.0)


def test_relative_eta_form_degree_zero_is_index():
    grid = BaseGrid(2, 12)
    f = assemble_boundary_family(grid, 6, 0.25)
    p1 = bloch_twisted_section(f)
    p2 = spectral_projection(f)
    eta = relative_eta_form(p1, p2)
    assert np.allclose(eta.part(0).component(()), relative_index(p1, p2))
    assert relative_eta_form(p1, p1).max_abs() == 0.0


def test_relative_eta_form_additivity():
    rng = np.random.default_rng(12)
    grid = BaseGrid(2, 12)
    f = assemble_boundary_family(grid, 6, 0.25)
    base_sec = spectral_projection(f)
    p1 = bloch_twisted_section(f)
    p2 = conjugated_section(base_sec, smooth_generator(grid, 6, 2, rng), 0.3)
    p3 = conjugated_section(p1, smooth_generator(grid, 6, 2, rng), 0.2)
    lhs = relative_eta_form(p1, p2) + relative_eta_form(p2, p3)
    rhs = relative_eta_form(p1, p3)
    assert (lhs - rhs).max_abs() < 1e-12


def test_relative_eta_form_closed():
    grid = BaseGrid(2, 16)
    f = assemble_boundary_family(grid, 6, 0.25)
    eta = relative_eta_form(bloch_twisted_section(f), spectral_projection(f))
    assert exterior_derivative(eta).max_abs() < 1e-12


def test_kernel_bundle_examples():
    grid = BaseGrid(2, 24)
    f = assemble_boundary_family(grid, 6, 0.25)
    p = spectral_projection(f)
    assert kernel_bundle_chern(ToeplitzFamily(p, p)).max_abs() < 1e-12
    flip = eigen_flip_section(f, add=[0])
    ch = kernel_bundle_chern(ToeplitzFamily(flip, p))
    assert np.allclose(ch.part(0).component(()), 1.0)
    assert ch.part(2).max_abs() < 1e-12
    twisted = bloch_twisted_section(f)
    ch = kernel_bundle_chern(ToeplitzFamily(twisted, p))
    assert np.allclose(ch.part(0).component(()), relative_index(twisted, p))
    number = integrate_over_base(ch.part(2)) / (2j * np.pi)
    assert abs(-number - fhs_chern_number(qwz_projection(grid))) < 0.05


def test_kernel_bundle_rank_jump():
    grid = BaseGrid(1, 8)
    f = assemble_boundary_family(grid, 4, 0.25)
    p = spectral_projection(f)
    (s,) = grid.coordinates()
    proj = p.projection.copy()
    # rotate the mode-0 line into mode -1 halfway round: kernel jumps where they coincide
    c, sn = np.cos(s / 2), np.sin(s / 2)
    vec = np.zeros(grid.shape + (9,), dtype=complex)
    vec[..., 4] = c
    vec[..., 3] = sn
    q = proj - proj[..., :, 4:5] @ proj[..., 4:5, :] + vec[..., :, None] * vec[..., None, :].conj()
    q = GrassmannSection(grid, q, p.projection, 4, 1)
    with pytest.raises(RankJumpError):
        kernel_bundle_chern(ToeplitzFamily(q, p))
