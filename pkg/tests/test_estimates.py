import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degsing.embedding import ExponentContext, RegularityPrediction, regularity_report
from degsing.estimates import (
    LevelSetProfile,
    StampacchiaData,
    level_set_profile,
    regularity_verdict,
    stampacchia_bound,
    stampacchia_selftest,
    verify_regularity,
)
from degsing.fem import discretize
from degsing.mesh import FemFunction, Interval, Polygon, build_mesh
from degsing.solver import ContinuationSchedule, ProblemSpec, continuation_solve
from degsing.weights import WeightSpec


@pytest.fixture(scope="module")
def line():
    return build_mesh(Interval(0, 1), 64)


def test_level_sets_linear(line):
    u = FemFunction.interpolate(line, lambda x: x)
    prof = level_set_profile(u, [0.0, 0.5, 1.5])
    assert np.allclose(prof.measures, [1.0, 0.5, 0.0])


def test_level_sets_quadratic(line):
    u = FemFunction.interpolate(line, lambda x: x * (1 - x))
    # 1/4 and 3/4 are nodes, so the P1 level set is exact
    assert level_set_profile(u, [3 / 16]).measures[0] == pytest.approx(0.5, abs=1e-14)


def test_level_sets_square():
    m = build_mesh(Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]), 8)
    u = FemFunction.interpolate(m, lambda x: x[:, 0])
    assert np.allclose(level_set_profile(u, [0, 0.5, 0.75, 1.0]).measures, [1, 0.5, 0.25, 0], atol=1e-14)


def test_profile_rejects_increase():
    with pytest.raises(AssertionError):
        LevelSetProfile(np.array([0.0, 1.0]), np.array([0.5, 0.6]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_level_sets_monotone(seed):
    m = build_mesh(Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]), 6)
    u = FemFunction(m, np.random.default_rng(seed).normal(size=m.num_vertices))
    k = np.linspace(u.values.min() - 1, u.values.max() + 1, 25)
    prof = level_set_profile(u, k)
    assert np.all(np.diff(prof.measures) <= 0)
    assert prof.measures[0] == pytest.approx(m.measure, rel=1e-14)
    assert prof.measures[-1] == 0


def test_stampacchia_examples():
    assert stampacchia_bound(StampacchiaData(1, 1, 2)) == 4.0
    assert stampacchia_bound(StampacchiaData(2, 2, 3)) == 4.0
    assert stampacchia_bound(StampacchiaData(1, 1, 2, phi_k0=0)) == 0.0
    with pytest.raises(ValueError):
        StampacchiaData(1, 1, 1.0)


def test_selftest_examples():
    assert stampacchia_selftest(StampacchiaData(1, 1, 2))
    assert stampacchia_selftest(StampacchiaData(1, 1, 1.0001, phi_k0=1e-6))


@settings(max_examples=50)
@given(st.floats(0.1, 10), st.floats(0.1, 5), st.floats(1.05, 4), st.floats(1e-3, 10), st.floats(1.0, 2.0))
def test_bound_monotone(c, l, m, phi, factor):
    d0 = stampacchia_bound(StampacchiaData(c, l, m, phi_k0=phi))
    assert stampacchia_bound(StampacchiaData(c * factor, l, m, phi_k0=phi)) >= d0 * (1 - 1e-12)
    assert stampacchia_bound(StampacchiaData(c, l, m, phi_k0=phi * factor)) >= d0 * (1 - 1e-12)
    # d/dm log d has the sign of log(phi) - l log(2)/(m-1)^2
    if math.log(phi) >= l * math.log(2) / (m - 1) ** 2:
        assert stampacchia_bound(StampacchiaData(c, l, m * factor, phi_k0=phi)) >= d0 * (1 - 1e-12)


def test_bound_not_monotone_in_m_for_small_phi():
    assert stampacchia_bound(StampacchiaData(1, 1, 3)) < stampacchia_bound(StampacchiaData(1, 1, 2))


def test_verdict_rule():
    assert regularity_verdict([1, 1.5, 1.8, 1.805, 1.806])["verdict"] == "consistent"
    assert regularity_verdict([1, 2, 4, 8])["verdict"] == "inconsistent"
    assert regularity_verdict([1, 1, math.inf, 1])["verdict"] == "inconsistent"


@pytest.fixture(scope="module")
def half_sequence(line):
    disc = discretize(line, WeightSpec.constant(1.0, 1))
    # norms approach their limit like 1 + C/n; the midpoint must be past n ~ 128
    sched = ContinuationSchedule(n_values=tuple(2**k for k in range(17)))
    sols, _ = continuation_solve(ProblemSpec(2.0, 0.5, 1.0, disc.weight), disc, sched, early_stop=False)
    return disc, sols


def test_verify_linf_branch(half_sequence):
    disc, sols = half_sequence
    pred = regularity_report(ExponentContext(p=2, s=3, N=2, delta=0.5, m=2))
    out = verify_regularity(sols, pred, disc)
    assert out["verdict"] == "consistent"
    assert out["space"] == "L_infinity"


def test_verify_lt_branch(half_sequence):
    disc, sols = half_sequence
    pred = regularity_report(ExponentContext(p=2, s=3, N=2, delta=0.5, m=1.2))
    out = verify_regularity(sols, pred, disc)
    assert out["t"] == 9.0 and out["verdict"] == "consistent"


def test_verify_no_prediction(half_sequence):
    disc, sols = half_sequence
    pred = regularity_report(ExponentContext(p=2, s=3, N=2, delta=0.5, m=1))
    assert verify_regularity(sols, pred, disc)["verdict"] == "no prediction"


def test_verify_mesh_mismatch(half_sequence):
    disc, _ = half_sequence
    pred = RegularityPrediction("subcritical", "L_infinity")
    with pytest.raises(ValueError):
        verify_regularity([np.zeros(3)], pred, disc)


def test_manufactured_level_sets_order_h():
    errs = []
    for res in (16, 32, 64):
        disc = discretize(build_mesh(Interval(0, 1), res), WeightSpec.constant(1.0, 1))
        prob = ProblemSpec(2.0, 1.0, lambda x: 2 * x[:, 0] * (1 - x[:, 0]), disc.weight)
        sols, _ = continuation_solve(prob, disc, early_stop=False)
        k = np.array([0.05, 0.1, 0.15, 0.2])
        exact = np.sqrt(1 - 4 * k)  # {x(1-x) >= k}
        meas = level_set_profile(FemFunction(disc.mesh, sols[-1]), k).measures
        errs.append(np.abs(meas - exact).max())
    # regularisation shifts the limit by about 1/n, so the bound is h + 2/n
    assert all(e <= 1 / r + 2 / 256 for e, r in zip(errs, (16, 32, 64)))
