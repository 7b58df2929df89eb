import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from degsing.fem import (
    assemble_jacobian,
    assemble_residual,
    discretize,
    energy,
    load_vector,
    stiffness_matrix,
)
from degsing.mesh import Disk, Interval, build_mesh
from degsing.weights import WeightSpec


@pytest.fixture(scope="module")
def line():
    m = build_mesh(Interval(0, 1), 16)
    return discretize(m, WeightSpec.constant(1.0, 1))


def test_zero_residual(line):
    n = line.mesh.num_vertices
    assert np.all(assemble_residual(np.zeros(n), line, 3.0, np.zeros(n)) == 0)


def test_pure_load(line):
    n = line.mesh.num_vertices
    g = np.linspace(1, 2, n)
    b = load_vector(line.mesh, g)
    R = assemble_residual(np.zeros(n), line, 2.0, b)
    I = line.mesh.interior
    assert np.allclose(R[I], -b[I])
    assert np.all(R[line.mesh.boundary] == 0)


def test_tridiagonal_stiffness(line):
    h = 1 / 16
    K = stiffness_matrix(line).toarray()
    for i in range(1, 16):
        assert K[i, i] == pytest.approx(2 / h)
        assert K[i, i - 1] == pytest.approx(-1 / h)
        assert K[i, i + 1] == pytest.approx(-1 / h)


def test_exact_discrete_solution(line):
    mesh = line.mesh
    I = mesh.interior
    b = load_vector(mesh, np.full(mesh.num_vertices, 2.0))
    K = stiffness_matrix(line).tocsc()[I][:, I]
    u = np.zeros(mesh.num_vertices)
    u[I] = spla.spsolve(K, b[I])
    assert np.abs(assemble_residual(u, line, 2.0, b)).max() <= 1e-12
    # lumped P1 for -u''=2 is exact at the nodes
    x = mesh.vertices[:, 0]
    assert np.allclose(u, x * (1 - x), atol=1e-13)


def test_weighted_stiffness_1d():
    m = build_mesh(Interval(0, 1), 8)
    alpha = 0.5
    disc = discretize(m, WeightSpec.power(alpha, 1))
    K = stiffness_matrix(disc).toarray()
    h = 1 / 8
    # each cell contributes (∫_cell x^alpha dx) / h^2 with alternating signs
    cellint = [((k + 1) * h) ** 1.5 / 1.5 - (k * h) ** 1.5 / 1.5 for k in range(8)]
    # fixed Gauss rules on cells close to the singularity are good to ~1e-7
    for k in range(1, 8):
        assert K[k, k] == pytest.approx((cellint[k - 1] + cellint[k]) / h**2, rel=1e-6)
        assert K[k, k + 1] == pytest.approx(-cellint[k] / h**2, rel=1e-6)


def test_flat_gradient_jacobian_degenerates(line):
    n = line.mesh.num_vertices
    J, note = assemble_jacobian(np.zeros(n), line, 3.0)
    # entries scale like eps^{p-2}
    assert np.abs(J.toarray()).max() <= 2 * line.eps * 2 * 16
    assert "eps" in note


def test_p_must_exceed_one(line):
    n = line.mesh.num_vertices
    with pytest.raises(ValueError):
        assemble_residual(np.zeros(n), line, 1.0, np.zeros(n))


def _fd_check(disc, p, seed):
    rng = np.random.default_rng(seed)
    mesh = disc.mesh
    u = rng.uniform(0.1, 1.0, mesh.num_vertices)
    u[mesh.boundary] = 0
    d = rng.standard_normal(mesh.num_vertices)
    d[mesh.boundary] = 0
    b = load_vector(mesh, rng.uniform(0, 1, mesh.num_vertices))
    R = assemble_residual(u, disc, p, b)
    h = 1e-6
    fd = (energy(u + h * d, disc, p, b) - energy(u - h * d, disc, p, b)) / (2 * h)
    return fd, float(np.dot(R, d)), u, d, b


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([1.5, 2.0, 3.0, 4.5]), st.integers(0, 1000))
def test_residual_is_energy_gradient(p, seed):
    for disc in (discretize(build_mesh(Interval(0, 1), 12), WeightSpec.power(-0.5, 1)),
                 discretize(build_mesh(Disk(1.0), 4), WeightSpec.power(0.5, 2))):
        fd, an, *_ = _fd_check(disc, p, seed)
        assert fd == pytest.approx(an, rel=1e-6, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([1.5, 2.0, 3.0]), st.integers(0, 1000))
def test_jacobian_symmetric_and_consistent(p, seed):
    disc = discretize(build_mesh(Disk(1.0), 4), WeightSpec.constant(1.0, 2))
    _, _, u, d, b = _fd_check(disc, p, seed)
    J, _ = assemble_jacobian(u, disc, p)
    A = J.toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    h = 1e-6
    fd = (assemble_residual(u + h * d, disc, p, b) - assemble_residual(u - h * d, disc, p, b)) / (2 * h)
    I = disc.mesh.interior
    assert np.allclose((A @ d)[I], fd[I], rtol=1e-5, atol=1e-6 * np.abs(fd).max())
