"""Acceptance criteria, one test each, at the stated tolerances.

A PASS/FAIL line per criterion (with the measured values) is printed in
the pytest terminal summary by ``conftest.py``.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from degsing.embedding import ExponentContext, holder_embedding_bound, regularity_report
from degsing.estimates import StampacchiaData, stampacchia_bound, stampacchia_selftest
from degsing.fem import discretize, load_vector
from degsing.mesh import Disk, FemFunction, Interval, build_mesh
from degsing.oracle import first_integral_solve, fit_boundary_exponent
from degsing.solver import (
    ContinuationSchedule,
    ProblemSpec,
    continuation_solve,
    monotonicity_check,
    solve_frozen,
    uniqueness_probe,
)
from degsing.weights import (
    Ball,
    WeightSpec,
    doubling_check,
    estimate_ap_constant,
    power_weight_ap_range,
    random_balls,
)

DELTAS = (0.5, 1.0, 2.0)
ALPHAS = (0.0, 0.5, -0.5)  # w = 1, |x|^0.5, |x|^-0.5 on (0, 1)
PS = (2.0, 3.0)
SUITE = list(itertools.product(DELTAS, ALPHAS, PS))
SUITE_RES = 128


def weight_1d(alpha):
    return WeightSpec.constant(1.0, 1) if alpha == 0 else WeightSpec.power(alpha, 1)


@pytest.fixture(scope="module")
def suite_runs():
    """Continuation over the full default schedule for every suite case."""
    mesh = build_mesh(Interval(0, 1), SUITE_RES)
    runs = {}
    for delta, alpha, p in SUITE:
        disc = discretize(mesh, weight_1d(alpha))
        prob = ProblemSpec(p, delta, 1.0, disc.weight)
        sols, rep = continuation_solve(prob, disc, early_stop=False)
        runs[(delta, alpha, p)] = (disc, prob, sols, rep)
    return runs


def test_criterion_01_manufactured_convergence(criterion):
    t0 = time.perf_counter()
    hs, errs = [], []
    for res in (16, 32, 64, 128):
        disc = discretize(build_mesh(Interval(0, 1), res), WeightSpec.constant(1.0, 1))
        prob = ProblemSpec(2.0, 1.0, lambda x: 2 * x[:, 0] * (1 - x[:, 0]), disc.weight)
        sols, rep = continuation_solve(prob, disc, ContinuationSchedule(), early_stop=False)
        assert rep.executed[-1] == 256
        x = disc.mesh.vertices[:, 0]
        hs.append(1 / res)
        errs.append(float(np.abs(sols[-1] - x * (1 - x)).max()))
    runtime = time.perf_counter() - t0
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    criterion(errors=errs, observed_order=order, runtime_s=runtime)
    assert runtime < 10
    assert errs[-1] < 1e-3
    assert order >= 1.9


def test_criterion_02_p_laplace_disk(criterion):
    t0 = time.perf_counter()
    mesh = build_mesh(Disk(1.0), 64)
    disc = discretize(mesh, WeightSpec.constant(1.0, 2))
    u, info = solve_frozen(disc, 3.0, load_vector(mesh, np.ones(mesh.num_vertices)))
    runtime = time.perf_counter() - t0
    r = np.linalg.norm(mesh.vertices, axis=1)
    exact = (2 / 3) * 2**-0.5 * (1 - r**1.5)
    err = float(np.abs(u - exact).max())
    criterion(max_error=err, newton_iters=info["newton_iters"], runtime_s=runtime)
    assert err <= 2e-3
    assert runtime < 60


def test_criterion_03_monotone_continuation(suite_runs, criterion):
    worst = 0.0
    for disc, prob, sols, rep in suite_runs.values():
        assert len(sols) == 9
        for a, b in zip(sols, sols[1:]):
            worst = max(worst, monotonicity_check(a, b))
    criterion(cases=len(suite_runs), max_violation=worst)
    assert worst <= 1e-7


def test_criterion_04_uniqueness(suite_runs, criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for disc, prob, _, _ in suite_runs.values():
        n = disc.mesh.num_vertices
        ones = np.ones(n)
        ones[disc.mesh.boundary] = 0
        rnd = rng.uniform(0, 1, n)
        rnd[disc.mesh.boundary] = 0
        worst = max(worst, uniqueness_probe(prob, disc, ContinuationSchedule(), [None, ones, rnd]))
    criterion(cases=len(suite_runs), max_relative_distance=worst)
    assert worst <= 1e-6


def test_criterion_05_uniform_norm_bounds(suite_runs, criterion):
    worst = {}
    for (delta, alpha, p), (_, _, _, rep) in suite_runs.items():
        n = np.array(rep.executed)
        key = "x_norm" if delta <= 1 else "power_x_norm"
        v = rep.series(key)
        ratios = v[1:] / v[:-1]
        past = ratios[n[:-1] >= 16]  # ratios ||u_2n|| / ||u_n|| with n >= 16
        worst[(delta, alpha, p)] = float(past.max())
    by_delta = {d: max(v for k, v in worst.items() if k[0] == d) for d in DELTAS}
    criterion(max_ratio_delta_0_5=by_delta[0.5], max_ratio_delta_1=by_delta[1.0],
              max_ratio_delta_2_power=by_delta[2.0])
    assert max(worst.values()) <= 1.01


def test_criterion_06_exponent_calculus(criterion):
    ctx = dict(p=2, s=3, N=2, delta=Fraction(1, 2))
    a = regularity_report(ExponentContext(m=Fraction(12, 11), **ctx))
    b = regularity_report(ExponentContext(m=Fraction(6, 5), **ctx))
    c = regularity_report(ExponentContext(m=2, **ctx))
    criterion(first=(str(a.gamma), str(a.t)), second=(str(b.gamma), str(b.t)), third=c.space)
    assert (a.space, a.gamma, a.t) == ("L_t", Fraction(1), Fraction(6))
    assert (b.space, b.gamma, b.t) == ("L_t", Fraction(3, 2), Fraction(9))
    assert c.space == "L_infinity"
    # float inputs go through the same rational arithmetic
    assert regularity_report(ExponentContext(m=1.2, p=2.0, s=3.0, N=2, delta=0.5)).t == 9


def test_criterion_07_ap_toolkit(criterion):
    rng = np.random.default_rng(7)
    balls = random_balls(100, 2, rng)
    est = estimate_ap_constant(WeightSpec.constant(1.0, 2), 2.0, balls)
    const_err = abs(est.constant_estimate - 1.0)

    N, p = 2, 2.0
    lo, hi = -N, N * (p - 1)
    alphas = np.concatenate([np.linspace(lo - 1.5, lo - 0.2, 4),
                             np.linspace(lo + 0.2, hi - 0.2, 12),
                             np.linspace(hi + 0.2, hi + 1.5, 4)])
    family = [Ball((0.0, 0.0), r) for r in (0.01, 0.1, 1.0)] + random_balls(10, 2, rng)
    mismatches = []
    for a in alphas:
        member = estimate_ap_constant(WeightSpec.power(float(a), N), p, family).member
        if member != power_weight_ap_range(float(a), N, p):
            mismatches.append(float(a))
    dbl = doubling_check(WeightSpec.constant(1.0, 2), 2.0, random_balls(50, 2, rng))["max_ratio"]
    criterion(ap_const_error=const_err, alpha_grid=len(alphas), mismatches=len(mismatches),
              doubling_ratio=dbl)
    assert const_err <= 1e-10
    assert not mismatches, mismatches
    assert abs(dbl - 4.0) <= 1e-10


def _random_field(mesh, rng, kind):
    n = mesh.num_vertices
    if kind == 0:
        v = rng.uniform(0, 1, n)
    elif kind == 1:
        v = rng.normal(size=n)
    elif kind == 2:
        v = np.zeros(n)
        v[rng.integers(0, n, 3)] = rng.uniform(1, 100, 3)  # spikes
    else:
        x = mesh.vertices
        k = rng.uniform(1, 8, mesh.dimension)
        v = np.cos(x @ k + rng.uniform(0, 6))
    if rng.uniform() < 0.5:
        v[mesh.boundary] = 0
    return FemFunction(mesh, v)


def test_criterion_08_holder_embedding(criterion):
    rng = np.random.default_rng(8)
    meshes = [build_mesh(Interval(0, 1), 64), build_mesh(Disk(1.0), 12)]
    s = 1.5
    combos = []
    for mesh in meshes:
        N = mesh.dimension
        for w in (WeightSpec.constant(1.0, N), WeightSpec.power(0.5, N), WeightSpec.power(-0.5, N)):
            for p in PS:
                combos.append((mesh, w, p))
    violations, worst = 0, 0.0
    for i in range(200):
        mesh, w, p = combos[i % len(combos)]
        u = _random_field(mesh, rng, i % 4)
        try:
            out = holder_embedding_bound(u, w, s, p, rtol=1e-12)
        except AssertionError:
            violations += 1
            continue
        if out["rhs"] > 0:
            worst = max(worst, out["lhs"] / out["rhs"])
    criterion(functions=200, violations=violations, max_lhs_over_rhs=worst)
    assert violations == 0


def test_criterion_09_stampacchia(criterion):
    d1 = stampacchia_bound(StampacchiaData(c=1, l=1, m=2, phi_k0=1))
    d2 = stampacchia_bound(StampacchiaData(c=2, l=2, m=3, phi_k0=1))
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(100):
        data = StampacchiaData(
            c=float(rng.uniform(0.1, 10)), l=float(rng.uniform(0.2, 4)),
            m=float(1 + rng.uniform(1e-3, 3)), k0=float(rng.uniform(-10, 10)),
            phi_k0=float(10 ** rng.uniform(-6, 2)),
        )
        failures += not stampacchia_selftest(data)
    criterion(d_first=d1, d_second=d2, selftest_failures=failures)
    assert d1 == 4.0 and d2 == 4.0
    assert failures == 0


def test_criterion_10_singular_boundary(criterion):
    res = 1024
    h = 1 / res
    window = (4 * h, 1 / 32)
    disc = discretize(build_mesh(Interval(0, 1), res), WeightSpec.constant(1.0, 1))
    prob = ProblemSpec(2.0, 2.0, 1.0, disc.weight)
    sols, rep = continuation_solve(prob, disc, early_stop=False)
    x = disc.mesh.vertices[:, 0]
    dist = np.minimum(x, 1 - x)
    fem_fit = fit_boundary_exponent(dist, sols[-1], window)
    u_oracle, _ = first_integral_solve(2.0, 2.0)
    d = dist[(dist >= window[0]) & (dist <= window[1])]
    oracle_fit = fit_boundary_exponent(d, u_oracle(d), window)
    criterion(fem_exponent=fem_fit, oracle_exponent=oracle_fit,
              x_norm_last=float(rep.series("x_norm")[-1]),
              power_x_norm_last=float(rep.series("power_x_norm")[-1]))
    assert abs(fem_fit - oracle_fit) <= 0.05
    assert abs(fem_fit - 2 / 3) <= 0.05
