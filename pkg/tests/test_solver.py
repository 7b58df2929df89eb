import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degsing.fem import assemble_residual, discretize, load_vector
from degsing.mesh import Disk, Interval, build_mesh
from degsing.solver import (
    ContinuationSchedule,
    ProblemSpec,
    T_eta,
    continuation_solve,
    fixed_point_map,
    frozen_rhs,
    g_k,
    monotonicity_check,
    picard_iterate,
    solve_frozen,
    strong_monotonicity_probe,
    truncate_f,
    uniqueness_probe,
)
from degsing.weights import WeightSpec

W1 = WeightSpec.constant(1.0, 1)


@pytest.fixture(scope="module")
def line64():
    return discretize(build_mesh(Interval(0, 1), 64), W1)


def test_truncations():
    assert truncate_f(10.0, 3) == 3
    x = np.linspace(0, 1, 11)
    f = 2 * x * (1 - x)
    assert np.array_equal(truncate_f(f, 1), f)
    assert np.array_equal(truncate_f(f, 5), f)
    assert np.array_equal(T_eta(np.array([0.5, 2.0]), 1.0), [0.5, 1.0])
    assert np.allclose(g_k(np.array([-1.0, 0.0, 0.25, 4.0]), 1.0, 2.0), [2.0, 2.0, 2.0, 0.25])


def test_problem_validation():
    with pytest.raises(ValueError):
        ProblemSpec(1.0, 0.5, 1.0, W1)
    with pytest.raises(ValueError):
        ProblemSpec(2.0, 0.0, 1.0, W1)
    mesh = build_mesh(Interval(0, 1), 8)
    with pytest.raises(ValueError):
        ProblemSpec(2.0, 1.0, 0.0, W1).f_nodal(mesh)
    with pytest.raises(ValueError):
        ProblemSpec(2.0, 1.0, -1.0, W1).f_nodal(mesh)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ContinuationSchedule(n_values=(1, 4, 2))
    with pytest.raises(ValueError):
        ContinuationSchedule(n_values=())


def test_frozen_solve_quadratic(line64):
    mesh = line64.mesh
    load = load_vector(mesh, np.full(mesh.num_vertices, 2.0))
    u, info = solve_frozen(line64, 2.0, load)
    x = mesh.vertices[:, 0]
    assert np.abs(u - x * (1 - x)).max() < 1e-12
    assert info["residual"] <= 1e-10


def test_zero_rhs_gives_zero(line64):
    u, _ = solve_frozen(line64, 3.0, np.zeros(line64.mesh.num_vertices))
    assert np.all(u == 0)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_energy_descent(p):
    disc = discretize(build_mesh(Disk(1.0), 8), WeightSpec.power(0.5, 2))
    load = load_vector(disc.mesh, np.ones(disc.mesh.num_vertices))
    u, info = solve_frozen(disc, p, load)
    E = np.asarray(info["energies"])
    # allow only roundoff increases
    assert np.all(np.diff(E) <= 1e-13 * np.abs(E[:-1]).max())
    assert info["residual"] <= 1e-10 or "roundoff" in info.get("note", "")


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_frozen_scaling(p):
    disc = discretize(build_mesh(Interval(0, 1), 32), WeightSpec.power(0.5, 1))
    load = load_vector(disc.mesh, np.ones(disc.mesh.num_vertices))
    u1, _ = solve_frozen(disc, p, load)
    lam = 3.7
    u2, _ = solve_frozen(disc, p, lam * load)
    assert np.allclose(u2, lam ** (1 / (p - 1)) * u1, rtol=1e-8, atol=1e-12)


def test_manufactured_n100(line64):
    x = line64.mesh.vertices[:, 0]
    prob = ProblemSpec(2.0, 1.0, lambda pts: 2 * pts[:, 0] * (1 - pts[:, 0]), W1)
    u, info = picard_iterate(prob, line64, 100)
    assert np.abs(u - x * (1 - x)).max() <= 2 / 100 + 1e-3


def test_fixed_point_self_consistency(line64):
    prob = ProblemSpec(3.0, 0.5, 1.0, W1)
    sched = ContinuationSchedule()
    u, info = picard_iterate(prob, line64, 16, sched=sched)
    A = fixed_point_map(prob, line64, 16)
    assert np.abs(A(u) - u).max() <= sched.picard_tol * (1 + np.abs(u).max()) * 1.01
    # frozen residual of the image is at the inner tolerance
    load = load_vector(line64.mesh, frozen_rhs(np.ones_like(u), u, 16, 0.5))
    assert np.abs(assemble_residual(info["image"], line64, 3.0, load)).max() <= 1e-10


def test_monotonicity_check_examples():
    a = np.array([0.0, 0.3, 0.5])
    assert monotonicity_check(a, a) == 0
    assert monotonicity_check(a, a + 0.1) == 0
    assert monotonicity_check(a, a - 0.1) == pytest.approx(0.1)


def test_continuation_delta_half(line64):
    prob = ProblemSpec(2.0, 0.5, 1.0, W1)
    sols, rep = continuation_solve(prob, line64, early_stop=False)
    assert rep.executed == list(ContinuationSchedule().n_values)
    diffs = rep.series("successive_diff")[1:]
    # geometric decay of successive differences
    assert np.all(diffs[1:] < diffs[:-1])
    assert rep.cauchy_rate < 0.75
    assert all(r["monotonicity_violation"] <= 10 * (1e-10 + 1e-8) for r in rep.records)
    assert all(r["min_u"] > 0 for r in rep.records)
    assert all(v > 0 for v in rep.positivity.values())


def test_delta2_power_norm_stabilises(line64):
    prob = ProblemSpec(2.0, 2.0, 1.0, W1)
    sols, rep = continuation_solve(prob, line64, early_stop=False)
    pn = rep.series("power_x_norm")
    excess = pn[1:] / pn[:-1] - 1
    # ratios approach 1 like C/n, so the norms converge
    assert np.all(excess[3:] / excess[2:-1] < 0.6)


def test_uniqueness_duplicate_init_is_zero(line64):
    prob = ProblemSpec(2.0, 0.5, 1.0, W1)
    sched = ContinuationSchedule(n_values=(1, 2, 4))
    assert uniqueness_probe(prob, line64, sched, [None, None]) == 0.0
    with pytest.raises(ValueError):
        uniqueness_probe(prob, line64, sched, [None])


def test_uniqueness_three_inits(line64):
    prob = ProblemSpec(2.0, 0.5, 1.0, W1)
    rng = np.random.default_rng(3)
    n = line64.mesh.num_vertices
    inits = [None, np.ones(n), rng.uniform(0, 1, n)]
    assert uniqueness_probe(prob, line64, ContinuationSchedule(), inits) <= 1e-6


def test_strong_monotonicity_p2_is_identity():
    out = strong_monotonicity_probe(2.0, 500, seed=1)
    assert out["min_ratio"] == pytest.approx(1.0, rel=1e-10)
    # an explicit identity flux gives the same
    out = strong_monotonicity_probe(2.0, 10, seed=2, flux=lambda v: v)
    assert out["min_ratio"] == pytest.approx(1.0, rel=1e-10)


def test_strong_monotonicity_p4():
    out = strong_monotonicity_probe(4.0, 10**5, seed=0)
    assert out["min_ratio"] > 0 and out["sign_ok"]


@settings(max_examples=10, deadline=None)
@given(st.floats(1.2, 5.0), st.integers(0, 10**6))
def test_strong_monotonicity_positive(p, seed):
    assert strong_monotonicity_probe(p, 200, seed=seed)["min_ratio"] > 0
