"""Muckenhoupt weights: evaluation, A_p ratios, doubling, A_s membership, Morrey norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import quadrature as qd
from .mesh import FemFunction, Mesh, p1_interpolator

__all__ = [
    "WeightSpec",
    "Ball",
    "ApEstimate",
    "NotApError",
    "eval_weight",
    "weighted_measure",
    "ap_ratio",
    "estimate_ap_constant",
    "power_weight_ap_range",
    "check_as_membership",
    "doubling_check",
    "morrey_norm",
    "default_ball_family",
    "random_balls",
    "levels_for_exponent",
]


class NotApError(ValueError):
    """Raised when a weight fails the A_p test numerically."""


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def dimension(self) -> int:
        return len(self.center)

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center, self.radius * factor)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class WeightSpec:
    """A weight on R^N.

    ``kind`` is ``"constant"`` (``value``), ``"power"`` (``|x - center|^alpha``)
    or ``"tabulated"`` (positive nodal values on ``mesh``, interpolated P1).
    """

    kind: str
    dimension: int
    value: float = 1.0
    center: tuple = None
    alpha: float = 0.0
    mesh: Mesh = field(default=None, compare=False, repr=False)
    nodal: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "constant":
            if not (self.value > 0 and np.isfinite(self.value)):
                raise ValueError("constant weight must be finite and positive")
        elif self.kind == "power":
            c = (0.0,) * self.dimension if self.center is None else tuple(
                float(v) for v in np.atleast_1d(self.center)
            )
            if len(c) != self.dimension:
                raise ValueError("power weight center has the wrong dimension")
            object.__setattr__(self, "center", c)
        elif self.kind == "tabulated":
            if self.mesh is None or self.nodal is None:
                raise ValueError("tabulated weight needs a mesh and nodal values")
            vals = np.asarray(self.nodal, dtype=float)
            if vals.shape != (self.mesh.num_vertices,) or not np.all(vals > 0):
                raise ValueError("tabulated weight values must be positive, one per vertex")
            vals.setflags(write=False)
            object.__setattr__(self, "nodal", vals)
            object.__setattr__(self, "_interp", p1_interpolator(self.mesh, vals))
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float = 1.0, dimension: int = 1) -> "WeightSpec":
        return cls("constant", dimension, value=float(value))

    @classmethod
    def power(cls, alpha: float, dimension: int, center=None) -> "WeightSpec":
        return cls("power", dimension, center=center, alpha=float(alpha))

    @classmethod
    def tabulated(cls, mesh: Mesh, values) -> "WeightSpec":
        return cls("tabulated", mesh.dimension, mesh=mesh, nodal=np.asarray(values, dtype=float))

    @property
    def singular_points(self) -> tuple:
        if self.kind == "power" and self.alpha != 0.0:
            return (self.center,)
        return ()

    @property
    def certified(self) -> bool:
        """False for tabulated data, whose A_p membership is assumed, not checked."""
        return self.kind != "tabulated"

    def __call__(self, x) -> np.ndarray:
        return self.eval_power(x, 1.0)

    def eval_power(self, x, beta: float) -> np.ndarray:
        """``w(x)**beta`` for points of shape (k, N)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        if self.kind == "constant":
            return np.full(len(x), self.value**beta)
        if self.kind == "power":
            r = np.linalg.norm(x - np.asarray(self.center), axis=1)
            e = self.alpha * beta
            if e < 0 and np.any(r == 0.0):
                raise ZeroDivisionError("weight evaluated at its singular point")
            with np.errstate(divide="ignore"):
                return np.where(r == 0.0, 0.0 if e > 0 else 1.0, r**e) if e != 0 else np.ones(len(x))
        return self._interp(x) ** beta

    def singular_exponent(self, beta: float = 1.0) -> float:
        """Exponent of the power singularity of ``w**beta`` (0 when smooth)."""
        return self.alpha * beta if self.kind == "power" else 0.0

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value, "N": self.dimension}
        if self.kind == "power":
            return {"kind": "power", "alpha": self.alpha, "center": list(self.center), "N": self.dimension}
        return {"kind": "tabulated", "N": self.dimension, "values": self.nodal.tolist()}


def eval_weight(w: WeightSpec, x) -> float:
    """Value of ``w`` at a single point; the singular point of a negative power is an error."""
    x = np.asarray(x, dtype=float).reshape(1, w.dimension)
    try:
        return float(w.eval_power(x, 1.0)[0])
    except ZeroDivisionError as exc:
        raise ValueError(f"weight undefined at {x.ravel().tolist()}") from exc


def levels_for_exponent(e: float, dimension: int, tol: float = 1e-12) -> int:
    """Graded levels needed so the unresolved core around a ``rho^e`` singularity is below ``tol``."""
    total = e + dimension
    if total <= 0:
        return qd.MAX_LEVELS
    L = math.ceil(-math.log(tol) / (total * math.log(qd.GRADING)))
    return int(min(max(L, 2), qd.MAX_LEVELS))


def _ball_integral(w: WeightSpec, beta: float, ball: Ball) -> qd.LevelResult:
    if w.kind == "constant":
        return qd.LevelResult(w.value**beta * qd.ball_volume(ball.radius, w.dimension), True, 0, [])
    sing = w.center if (w.kind == "power" and w.alpha * beta != 0.0) else None
    return qd.ball_integral(lambda x: w.eval_power(x, beta), ball.center, ball.radius, w.dimension, sing)


def weighted_measure(w: WeightSpec, region, beta: float = 1.0, quad=None) -> float:
    """``∫_region w^beta dx`` for a :class:`Ball` or a :class:`Mesh`.

    Divergent integrals are reported as ``inf``.
    """
    if isinstance(region, Ball):
        return _ball_integral(w, beta, region).value
    if isinstance(region, Mesh):
        if quad is not None:
            return quad.integrate(w.eval_power(quad.points, beta))
        return _mesh_integral(w, beta, region).value
    raise TypeError("region must be a Ball or a Mesh")


def _mesh_integral(w: WeightSpec, beta: float, mesh: Mesh) -> qd.LevelResult:
    sing = w.singular_points if w.singular_exponent(beta) != 0.0 else ()
    return qd.mesh_integral(mesh, lambda x: w.eval_power(x, beta), sing)


def ap_ratio(w: WeightSpec, p: float, ball: Ball) -> float:
    """A_p ratio of ``w`` on one ball (``inf`` when the dual weight is not integrable)."""
    vol = qd.ball_volume(ball.radius, w.dimension)
    if w.kind == "constant":
        return 1.0
    iw = _ball_integral(w, 1.0, ball)
    idual = _ball_integral(w, -1.0 / (p - 1.0), ball)
    if not (iw.finite and idual.finite):
        return np.inf
    return (iw.value / vol) * (idual.value / vol) ** (p - 1.0)


@dataclass
class ApEstimate:
    constant_estimate: float
    worst_ball: Ball
    balls_tested: int
    member: bool = True
    diagnostic: str = ""
    certified: bool = True

    def to_dict(self) -> dict:
        return {
            "constant_estimate": self.constant_estimate,
            "worst_ball": self.worst_ball.to_dict(),
            "balls_tested": self.balls_tested,
            "member": self.member,
            "diagnostic": self.diagnostic,
            "certified": self.certified,
        }


def estimate_ap_constant(
    w: WeightSpec, p: float, balls: Sequence[Ball], tol: float = 1e-9
) -> ApEstimate:
    """Largest A_p ratio over ``balls``; a lower bound for the A_p constant.

    Every finite ratio is checked to be at least ``1 - tol`` (Hölder). A ball
    on which ``w`` or ``w^{-1/(p-1)}`` fails to integrate marks the weight as
    not in A_p.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    balls = list(balls)
    if not balls:
        raise ValueError("no balls supplied")
    worst, worst_ball = -np.inf, balls[0]
    for ball in balls:
        r = ap_ratio(w, p, ball)
        if not np.isfinite(r):
            return ApEstimate(
                np.inf, ball, len(balls), member=False,
                diagnostic="not in A_p (numerical)", certified=w.certified,
            )
        if r < 1.0 - tol:
            raise AssertionError(f"A_p ratio {r} < 1 on {ball}: quadrature failure")
        if r > worst:
            worst, worst_ball = r, ball
    return ApEstimate(worst, worst_ball, len(balls), certified=w.certified)


def power_weight_ap_range(alpha: float, N: int, p: float) -> bool:
    """|x|^alpha is an A_p weight on R^N iff -N < alpha < N(p-1)."""
    if N < 1 or not p > 1:
        raise ValueError("need N >= 1 and p > 1")
    return -N < alpha < N * (p - 1)


def check_as_membership(w: WeightSpec, s: float, p: float, N: int, domain) -> dict:
    """Test whether ``w^{-s}`` is integrable over ``domain`` (a Ball or a Mesh)."""
    if isinstance(domain, Ball):
        res = _ball_integral(w, -s, domain)
    else:
        res = _mesh_integral(w, -s, domain)
    s_valid = bool(s >= 1.0 / (p - 1.0) and s > N / p)
    member = bool(res.finite)
    if member and w.kind == "power":
        member = power_weight_ap_range(w.alpha, N, p)
    return {
        "member": member,
        "integral": float(res.value),
        "s_valid": s_valid,
        "levels": res.levels,
        "diagnostic": res.diagnostic,
    }


def doubling_check(w: WeightSpec, p: float, balls: Sequence[Ball], tol: float = 1e-9) -> dict:
    """Largest ``w(2B)/w(B)`` over ``balls`` against the bound ``2^{Np} c_{p,w}``."""
    balls = list(balls)
    ratios = []
    for b in balls:
        wb = _ball_integral(w, 1.0, b).value
        w2b = _ball_integral(w, 1.0, b.scaled(2.0)).value
        ratios.append(w2b / wb)
    est = estimate_ap_constant(w, p, balls + [b.scaled(2.0) for b in balls])
    bound = 2.0 ** (w.dimension * p) * est.constant_estimate
    max_ratio = float(max(ratios))
    if max_ratio > bound * (1 + tol):
        raise AssertionError(f"doubling ratio {max_ratio} exceeds bound {bound}")
    return {"max_ratio": max_ratio, "bound": float(bound), "ratios": ratios}


def morrey_norm(
    u: FemFunction,
    w: WeightSpec,
    p: float,
    t: float,
    sampler: Iterable,
    quad: qd.QuadratureRule = None,
) -> float:
    """Largest Morrey quotient ``(r^t / w(Ω∩B) ∫_{Ω∩B} |u|^p w)^{1/p}`` over sampled (x, r)."""
    samples = list(sampler)
    if not samples:
        raise ValueError("empty sampler")
    if quad is None:
        quad = qd.build_quadrature(u.mesh, w.singular_points)
    wq = w.eval_power(quad.points, 1.0)
    uq = np.abs(quad.evaluate(u.values)) ** p
    best = 0.0
    for x, r in samples:
        x = np.asarray(x, dtype=float).reshape(u.mesh.dimension)
        inside = np.linalg.norm(quad.points - x, axis=1) < r
        wm = np.dot(quad.weights[inside], wq[inside])
        if wm <= 0:
            continue
        val = (r**t / wm * np.dot(quad.weights[inside], uq[inside] * wq[inside])) ** (1.0 / p)
        best = max(best, float(val))
    return best


def default_ball_family(w: WeightSpec, diameter: float, n_radii: int = 8, lattice: int = 2) -> list:
    """Log-spaced radii crossed with lattice centres around the singular point.

    Radii run from ``diameter/2^10`` to ``diameter/2``; centres are the
    singular point (or origin) plus offsets of ``{-1, 0, 1} * k * r`` for
    ``k`` up to ``lattice``.
    """
    N = w.dimension
    x0 = np.asarray(w.center if w.kind == "power" else (0.0,) * N, dtype=float)
    radii = diameter * np.logspace(-10, -1, n_radii, base=2.0)
    offsets = np.arange(-lattice, lattice + 1) / 2.0
    grids = np.meshgrid(*([offsets] * N), indexing="ij")
    rel = np.stack([g.ravel() for g in grids], axis=1)
    balls = []
    for r in radii:
        for o in rel:
            balls.append(Ball(tuple(x0 + o * r), float(r)))
    return balls


def random_balls(n: int, dimension: int, rng, extent: float = 1.0) -> list:
    """``n`` balls with centres uniform in ``[-extent, extent]^N`` and log-uniform radii."""
    centers = rng.uniform(-extent, extent, size=(n, dimension))
    radii = extent * 10.0 ** rng.uniform(-3, 0, size=n)
    return [Ball(tuple(c), float(r)) for c, r in zip(centers, radii)]
