"""Exponent calculus for the A_s embedding and the regularity case analysis.

Exponents are carried as :class:`fractions.Fraction` whenever the inputs
are rational (floats are read through their shortest decimal repr), so the
predicted ``t`` and ``γ`` come out exactly, e.g. ``γ = 1`` at the lower end
of the δ < 1 range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from . import quadrature as qd
from .mesh import FemFunction
from .weights import WeightSpec, check_as_membership, levels_for_exponent

__all__ = [
    "EmbeddingMarker",
    "ExponentContext",
    "RegularityPrediction",
    "as_exact",
    "conjugate",
    "ps_exponent",
    "sobolev_conjugate",
    "regularity_report",
    "weighted_norms",
    "holder_embedding_bound",
]

Number = Union[int, float, Fraction]
CRITICAL_TOL = 1e-9


class EmbeddingMarker(str, Enum):
    CRITICAL = "all q in [1, inf)"
    SUPERCRITICAL = "L_infinity"


def as_exact(x) -> Union[Fraction, float]:
    """Rational view of a number; infinities stay floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    x = float(x)
    if math.isinf(x):
        return x
    return Fraction(repr(x))


def conjugate(m):
    """Hölder conjugate ``m/(m-1)`` (``inf`` for m = 1, 1 for m = inf)."""
    m = as_exact(m)
    if m == math.inf:
        return Fraction(1)
    if m == 1:
        return math.inf
    return m / (m - 1)


def ps_exponent(p: Number, s: Number):
    """Reduced exponent ``p_s = ps/(s+1)``."""
    p, s = as_exact(p), as_exact(s)
    if not s > 0:
        raise ValueError("s must be positive")
    if not p > 1:
        raise ValueError("p must exceed 1")
    ps = p * s / (s + 1)
    if s >= 1 / (p - 1):
        assert 1 <= ps < p, (ps, p)
    return ps


def sobolev_conjugate(ps: Number, N: int):
    """``N p_s/(N - p_s)`` below N, otherwise a critical/supercritical marker."""
    ps = as_exact(ps)
    if ps < 1:
        raise ValueError("p_s must be >= 1")
    if abs(float(ps) - N) <= CRITICAL_TOL:
        return EmbeddingMarker.CRITICAL
    if ps > N:
        return EmbeddingMarker.SUPERCRITICAL
    return N * ps / (N - ps)


@dataclass
class ExponentContext:
    p: Number
    s: Number
    N: int
    delta: Number
    m: Number
    q: Optional[Number] = None  # embedding exponent in the critical case (default 2p)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.m >= 1:
            raise ValueError("m must be >= 1")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @property
    def s_valid(self) -> bool:
        p, s = as_exact(self.p), as_exact(self.s)
        return s >= 1 / (p - 1) and s > Fraction(self.N) / p


@dataclass
class RegularityPrediction:
    case: str  # subcritical | critical | supercritical
    space: str  # L_t | L_infinity | none_predicted
    t: Optional[Union[Fraction, float]] = None
    gamma: Optional[Union[Fraction, float]] = None
    solution_class: str = "X"  # X | X_loc_with_power
    power_exponent: Optional[Fraction] = None
    existence: bool = True
    threshold: str = ""
    branch: str = ""
    ps: Optional[Fraction] = None
    ps_star: Optional[Union[Fraction, float]] = None
    q: Optional[Fraction] = None

    def __post_init__(self):
        if self.space == "L_t":
            assert self.t > 0 and self.gamma >= 1, (self.t, self.gamma)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(v)

        def exact(v):
            return None if v is None or isinstance(v, float) else str(v)

        return {
            "case": self.case,
            "space": self.space,
            "t": num(self.t),
            "t_exact": exact(self.t),
            "gamma": num(self.gamma),
            "gamma_exact": exact(self.gamma),
            "solution_class": self.solution_class,
            "power_exponent": num(self.power_exponent),
            "existence": self.existence,
            "threshold": self.threshold,
            "branch": self.branch,
            "ps": num(self.ps),
            "ps_star": None if self.ps_star is None or isinstance(self.ps_star, EmbeddingMarker)
            else float(self.ps_star),
            "q": num(self.q),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegularityPrediction":
        def val(key):
            ex = d.get(key + "_exact")
            if ex is not None:
                return Fraction(ex)
            return d.get(key)

        return cls(
            case=d["case"], space=d["space"], t=val("t"), gamma=val("gamma"),
            solution_class=d.get("solution_class", "X"),
            power_exponent=d.get("power_exponent"), existence=d.get("existence", True),
            threshold=d.get("threshold", ""), branch=d.get("branch", ""),
        )


def regularity_report(ctx: ExponentContext) -> RegularityPrediction:
    """Case-classified existence/regularity prediction for ``ctx``.

    Branches on δ (< 1, = 1, > 1) and on ``p_s`` versus ``N``. Intervals for
    ``m`` follow the theorem statements literally, with the lower end closed
    only in the δ < 1 subcritical branch; an ``m`` outside every interval
    yields ``none_predicted`` with the violated threshold named.
    """
    p, s, delta, m = (as_exact(v) for v in (ctx.p, ctx.s, ctx.delta, ctx.m))
    N = ctx.N
    ps = ps_exponent(p, s)
    conj = sobolev_conjugate(ps, N)
    mp = conjugate(m)
    num = delta + p - 1  # numerator factor (δ+p-1); equals p at δ = 1
    cls = "X_loc_with_power" if delta > 1 else "X"
    power = num / p if delta > 1 else None
    dlabel = "delta<1" if delta < 1 else ("delta=1" if delta == 1 else "delta>1")

    def pred(case, space, t=None, gamma=None, existence=True, threshold="", branch="", **kw):
        return RegularityPrediction(
            case, space, t, gamma, cls, power, existence, threshold,
            f"{dlabel}, {case}" + (f", {branch}" if branch else ""), ps, **kw,
        )

    if conj is EmbeddingMarker.SUPERCRITICAL:
        return pred("supercritical", "L_infinity", branch="f in L^1")

    if conj is EmbeddingMarker.CRITICAL:
        q = as_exact(ctx.q) if ctx.q is not None else 2 * p
        if not q > p:
            raise ValueError("the critical case needs q > p")
        upper = q / (q - p)
        if delta < 1:
            lower = conjugate(q / (1 - delta))
            existence = m > 1
            if not existence:
                return pred("critical", "none_predicted", existence=False,
                            threshold="m must exceed 1", q=q)
            if not lower < m < upper:
                return pred("critical", "none_predicted",
                            threshold=f"m must lie in ((q/(1-delta))', q/(q-p)) = ({lower}, {upper})", q=q)
        elif not 1 < m < upper:
            return pred("critical", "none_predicted",
                        threshold=f"m must lie in (1, q/(q-p)) = (1, {upper})", q=q)
        gamma = num * mp / (p * mp - q)
        return pred("critical", "L_t", t=q * gamma, gamma=gamma, branch="L^t", q=q)

    pstar = conj
    upper = pstar / (pstar - p)
    if delta < 1:
        lower = conjugate(pstar / (1 - delta))
        if m < lower:
            return pred("subcritical", "none_predicted", existence=False, ps_star=pstar,
                        threshold=f"m >= (p_s*/(1-delta))' = {lower}")
        in_range = lower <= m < upper
    else:
        if m <= 1 and m < upper:
            return pred("subcritical", "none_predicted", ps_star=pstar,
                        threshold=f"m must exceed 1 for an L^t prediction")
        in_range = 1 < m < upper
    if m > upper:
        return pred("subcritical", "L_infinity", branch="(ii)", ps_star=pstar)
    if not in_range:
        return pred("subcritical", "none_predicted", ps_star=pstar,
                    threshold=f"m = p_s*/(p_s*-p) = {upper} is excluded")
    gamma = num * mp / (p * mp - pstar)
    return pred("subcritical", "L_t", t=pstar * gamma, gamma=gamma, branch="(i)", ps_star=pstar)


# ---------------------------------------------------------------------------
# norms and the Hölder bound


def weighted_norms(u: FemFunction, w: WeightSpec, p: float, quad: qd.QuadratureRule = None) -> dict:
    """Weighted L^p norm of u and of its gradient, their sum, and the gradient-only norm."""
    if quad is None:
        L = levels_for_exponent(w.singular_exponent(1.0), u.mesh.dimension) if w.singular_points else 0
        quad = qd.build_quadrature(u.mesh, w.singular_points, levels=L)
    wq = w.eval_power(quad.points, 1.0)
    lp = quad.integrate(np.abs(quad.evaluate(u.values)) ** p * wq) ** (1.0 / p)
    G = u.mesh.gradients(u.values)
    gmag = np.sqrt((G * G).sum(1))
    grad_lp = quad.integrate(gmag[quad.cell] ** p * wq) ** (1.0 / p)
    return {"lp": float(lp), "grad_lp": float(grad_lp), "sobolev": float(lp + grad_lp),
            "x_norm": float(grad_lp)}


def holder_embedding_bound(u: FemFunction, w: WeightSpec, s: float, p: float,
                           quad: qd.QuadratureRule = None, rtol: float = 1e-12) -> dict:
    """Unweighted ``L^{p_s}`` norm of u against the explicit bound.

    ``rhs = (∫ w^{-s})^{1/(ps)} (∫ |u|^p w)^{1/p}``. All three integrals use
    one quadrature rule, so the discrete inequality is Hölder's inequality
    for that rule and must hold up to rounding.
    """
    mesh = u.mesh
    chk = check_as_membership(w, s, p, mesh.dimension, mesh)
    if not np.isfinite(chk["integral"]):
        raise ValueError(f"w^(-s) is not integrable over the domain ({chk['diagnostic']})")
    if quad is None:
        L = levels_for_exponent(w.singular_exponent(-s), mesh.dimension) if w.singular_points else 0
        quad = qd.build_quadrature(mesh, w.singular_points, levels=L)
    ps = float(ps_exponent(p, s))
    uq = np.abs(quad.evaluate(u.values))
    lhs = quad.integrate(uq**ps) ** (1.0 / ps)
    i_neg = quad.integrate(w.eval_power(quad.points, -s))
    i_pos = quad.integrate(uq**p * w.eval_power(quad.points, 1.0))
    rhs = i_neg ** (1.0 / (p * s)) * i_pos ** (1.0 / p)
    if lhs > rhs * (1.0 + rtol):
        raise AssertionError(f"Hölder bound violated: {lhs} > {rhs}")
    return {"lhs": float(lhs), "rhs": float(rhs), "ps": ps, "integral_w_minus_s": float(i_neg)}
