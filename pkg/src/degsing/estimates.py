"""Level-set measures, the Stampacchia iteration lemma, and regularity verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np

from .embedding import RegularityPrediction
from .mesh import FemFunction, Mesh

__all__ = [
    "LevelSetProfile",
    "StampacchiaData",
    "level_set_profile",
    "stampacchia_bound",
    "stampacchia_sequence",
    "stampacchia_selftest",
    "regularity_verdict",
    "verify_regularity",
]

RATIO_BOUND = 1.01


@dataclass
class LevelSetProfile:
    thresholds: np.ndarray
    measures: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.measures) > 1e-12 * max(1.0, float(self.measures.max(initial=0)))):
            raise AssertionError("level-set measures must be nonincreasing")


def _cell_fraction_above(vals: np.ndarray, k: float) -> np.ndarray:
    """Fraction of each cell where the P1 field is >= k (exact)."""
    v = np.sort(vals, axis=1)
    if v.shape[1] == 2:
        lo, hi = v[:, 0], v[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(hi > lo, (hi - k) / (hi - lo), 1.0)
        out = np.clip(frac, 0.0, 1.0)
        out[k <= lo] = 1.0
        out[k > hi] = 0.0
        return out
    a, b, c = v[:, 0], v[:, 1], v[:, 2]
    out = np.zeros(len(v))
    out[k <= a] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        low = (a < k) & (k <= b)
        out[low] = 1.0 - (k - a[low]) ** 2 / ((b[low] - a[low]) * (c[low] - a[low]))
        high = (b < k) & (k <= c)
        out[high] = (c[high] - k) ** 2 / ((c[high] - a[high]) * (c[high] - b[high]))
    return np.clip(out, 0.0, 1.0)


def level_set_profile(u: FemFunction, thresholds: Sequence[float]) -> LevelSetProfile:
    """Measures of ``{u >= k}`` for increasing thresholds, from exact P1 geometry."""
    k = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(k) < 0):
        raise ValueError("thresholds must be increasing")
    mesh: Mesh = u.mesh
    vals = u.values[mesh.cells]
    meas = np.array([float(np.dot(mesh.volumes, _cell_fraction_above(vals, kk))) for kk in k])
    # clip rounding so the profile is monotone and within [0, |Ω|]
    meas = np.minimum.accumulate(np.clip(meas, 0.0, mesh.measure))
    return LevelSetProfile(k, meas)


@dataclass(frozen=True)
class StampacchiaData:
    """Constants of the recursive decay ``φ(h) <= c/(h-k)^l · φ(k)^m``."""

    c: float
    l: float
    m: float
    k0: float = 0.0
    phi_k0: float = 1.0

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError("the Stampacchia lemma needs m > 1")
        if not (self.c > 0 and self.l > 0 and self.phi_k0 >= 0):
            raise ValueError("need c > 0, l > 0 and phi(k0) >= 0")


def stampacchia_bound(d: StampacchiaData) -> float:
    """``d = (c φ(k0)^{m-1} 2^{lm/(m-1)})^{1/l}``; φ vanishes beyond ``k0 + d``."""
    if d.phi_k0 == 0:
        return 0.0
    if d.phi_k0 == 1 and float(d.m - 1).is_integer():
        # plain power arithmetic keeps small textbook cases exact
        return (d.c * 2.0 ** (d.l * d.m / (d.m - 1))) ** (1.0 / d.l)
    log_d = (math.log(d.c) + (d.m - 1) * math.log(d.phi_k0) + d.l * d.m / (d.m - 1) * math.log(2.0)) / d.l
    try:
        return math.exp(log_d)
    except OverflowError:
        return math.inf


def stampacchia_sequence(d: StampacchiaData, levels: int, dps: int = None):
    """Extremal sequence on the ladder ``k_s = k0 + d(1 - 2^{-s})``.

    Each term saturates the hypothesis, ``φ_{s+1} = c/(k_{s+1}-k_s)^l φ_s^m``.
    The recursion multiplies relative errors by ``m`` per level, so it is
    run in extended precision. Returns ``(ladder, log_phi)`` as mpmath numbers.
    """
    if dps is None:
        dps = 40 + int(math.ceil(levels * math.log10(max(d.m, 1.0 + 1e-12)))) + 10
    with mpmath.workdps(dps):
        c, l, m = mpmath.mpf(d.c), mpmath.mpf(d.l), mpmath.mpf(d.m)
        phi0 = mpmath.mpf(d.phi_k0)
        dd = (c * phi0 ** (m - 1) * mpmath.mpf(2) ** (l * m / (m - 1))) ** (1 / l)
        ladder = [d.k0 + dd * (1 - mpmath.mpf(2) ** (-s)) for s in range(levels + 1)]
        logs = [mpmath.log(phi0)]
        for s in range(levels):
            # k_{s+1} - k_s taken in closed form; differencing the ladder cancels when |k0| >> d
            step = dd * mpmath.mpf(2) ** (-(s + 1))
            logs.append(mpmath.log(c) - l * mpmath.log(step) + m * logs[-1])
        return ladder, logs


def stampacchia_selftest(d: StampacchiaData, levels: int = 20, rtol: float = 1e-12) -> bool:
    """Brute-force check of the lemma on its extremal sequence.

    The saturated sequence must decay exactly like ``φ(k0) 2^{-s l/(m-1)}``
    (so it tends to zero at the level ``k0 + d`` given by
    :func:`stampacchia_bound`); agreement is required to ``rtol`` at every
    level, and the sequence must be strictly decreasing.
    """
    if levels < 10:
        raise ValueError("use at least 10 levels")
    if d.phi_k0 == 0:
        return stampacchia_bound(d) == 0.0
    ladder, logs = stampacchia_sequence(d, levels)
    d_float = stampacchia_bound(d)
    if math.isfinite(d_float):
        with mpmath.workdps(60):
            c, l, m = mpmath.mpf(d.c), mpmath.mpf(d.l), mpmath.mpf(d.m)
            dd = (c * mpmath.mpf(d.phi_k0) ** (m - 1) * mpmath.mpf(2) ** (l * m / (m - 1))) ** (1 / l)
        if not math.isclose(float(dd), d_float, rel_tol=1e-12):
            return False
    with mpmath.workdps(60):
        mu = mpmath.mpf(d.l) / (mpmath.mpf(d.m) - 1)
        log0 = logs[0]
        for s, lg in enumerate(logs):
            expected = log0 - s * mu * mpmath.log(2)
            # relative error of φ_s itself is the absolute error of its log
            if abs(lg - expected) > rtol:
                return False
            if s and not lg < logs[s - 1]:
                return False
    return True


def regularity_verdict(norms: Sequence[float], ratio_bound: float = RATIO_BOUND,
                       start: int = None) -> dict:
    """Bounded-sequence test: every successive ratio past ``start`` is <= ``ratio_bound``.

    ``start`` defaults to the midpoint index of the sequence.
    """
    norms = np.asarray(norms, dtype=float)
    if start is None:
        start = len(norms) // 2
    ratios = norms[1:] / norms[:-1]
    tail = ratios[max(start, 0):]
    ok = bool(np.all(np.isfinite(norms)) and np.all(tail <= ratio_bound))
    return {
        "verdict": "consistent" if ok else "inconsistent",
        "norms": norms.tolist(),
        "ratios": ratios.tolist(),
        "checked_from_index": int(start),
        "max_tail_ratio": float(tail.max()) if len(tail) else float("nan"),
    }


def verify_regularity(u_seq: Sequence, prediction: RegularityPrediction, disc) -> dict:
    """Measure the predicted norm along the continuation sequence and judge boundedness.

    ``L^t`` predictions use the unweighted ``L^t`` norm, ``L^∞`` the nodal
    maximum. A ``none_predicted`` prediction yields the verdict
    ``"no prediction"``.
    """
    from .solver import lt_norm

    arrays = []
    for u in u_seq:
        if isinstance(u, FemFunction):
            if u.mesh is not disc.mesh:
                raise ValueError("sequence and discretisation use different meshes")
            arrays.append(u.values)
        else:
            a = np.asarray(u, dtype=float)
            if a.shape != (disc.mesh.num_vertices,):
                raise ValueError("sequence and discretisation use different meshes")
            arrays.append(a)
    if prediction.space == "none_predicted":
        return {"verdict": "no prediction", "threshold": prediction.threshold}
    t = math.inf if prediction.space == "L_infinity" else float(prediction.t)
    norms = [lt_norm(a, disc, t) for a in arrays]
    out = regularity_verdict(norms)
    out["t"] = "inf" if math.isinf(t) else t
    out["space"] = prediction.space
    return out
