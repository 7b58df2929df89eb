"""Reference solutions that do not go through the finite element path.

* :func:`manufactured_rhs` turns a chosen exact solution into data ``f``.
* :func:`radial_solve` integrates the radial ODE
  ``(r^{N-1} w |u'|^{p-2} u')' = -r^{N-1} f / u^δ`` by shooting on the
  centre value ``u(0)``. Near the boundary, where the singular term takes
  over, the integration switches to ``σ = ln u`` as independent variable so
  the blow-up of the flux is integrated in logarithmic variables.
* :func:`first_integral_solve` handles the autonomous 1D case exactly by
  quadrature of the first integral.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

__all__ = [
    "RadialProblem",
    "RadialProfile",
    "ShootingError",
    "manufactured_rhs",
    "radial_solve",
    "radial_residual",
    "first_integral_solve",
    "fit_boundary_exponent",
]


class ShootingError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# manufactured solutions


def manufactured_rhs(u_star, w, p, delta, variables=None, sample_box=None, samples=41):
    """Data ``f = u*^δ · (-div(w |∇u*|^{p-2} ∇u*))`` for an exact solution ``u*``.

    ``u_star`` and ``w`` are sympy expressions (or strings) in ``variables``
    (default ``x`` in 1D, ``x, y`` when ``y`` appears). Returns
    ``(f_expr, f_callable)`` where the callable takes points of shape (k, N).
    If ``sample_box`` (a list of ``(lo, hi)`` per variable) is given, ``f`` is
    sampled strictly inside the box and rejected if it takes negative values.
    """
    u_star = sympy.sympify(u_star)
    w = sympy.sympify(w)
    if variables is None:
        free = sorted((u_star.free_symbols | w.free_symbols), key=lambda s: s.name)
        names = [s.name for s in free]
        variables = sympy.symbols("x y") if "y" in names else (sympy.Symbol("x"),)
    variables = tuple(variables)
    grad = [sympy.diff(u_star, v) for v in variables]
    mag2 = sum(g**2 for g in grad)
    p = sympy.nsimplify(p)
    delta = sympy.nsimplify(delta)
    coef = w * mag2 ** ((p - 2) / 2) if p != 2 else w
    div = sum(sympy.diff(coef * g, v) for g, v in zip(grad, variables))
    f_expr = sympy.simplify(-div * u_star**delta)
    func = sympy.lambdify(variables, f_expr, "numpy")

    def f_callable(points):
        pts = np.asarray(points, dtype=float).reshape(-1, len(variables))
        out = func(*[pts[:, i] for i in range(len(variables))])
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()

    if sample_box is not None:
        axes = [np.linspace(lo, hi, samples)[1:-1] for lo, hi in sample_box]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        with np.errstate(all="ignore"):
            vals = f_callable(grid)
        vals = vals[np.isfinite(vals)]
        scale = max(1.0, float(np.abs(vals).max())) if len(vals) else 1.0
        if np.any(vals < -1e-12 * scale):
            raise ValueError("manufactured f changes sign; data must be nonnegative")
    return f_expr, f_callable


# ---------------------------------------------------------------------------
# radial shooting


@dataclass
class RadialProblem:
    """Radial form of the problem on the ball of radius ``R`` in R^N.

    ``frozen`` drops the ``u^{-δ}`` factor (the right-hand side is just
    ``f``); ``n`` selects the regularised problem with ``min(f, n)`` and
    denominator ``(u + 1/n)^δ``.
    """

    N: int
    p: float
    delta: float
    R: float = 1.0
    w: Callable = None
    f: Callable = None
    frozen: bool = False
    n: float = None

    def __post_init__(self):
        if self.w is None:
            self.w = lambda r: np.ones_like(np.asarray(r, dtype=float))
        if self.f is None:
            self.f = lambda r: np.ones_like(np.asarray(r, dtype=float))
        if not self.p > 1 or self.N < 1 or not self.R > 0:
            raise ValueError("need p > 1, N >= 1, R > 0")

    def source(self, r, u):
        f = self.f(r)
        if self.n is not None:
            f = np.minimum(f, self.n)
        if self.frozen:
            return f
        shift = 0.0 if self.n is None else 1.0 / self.n
        return f / (u + shift) ** self.delta

    @property
    def singular(self) -> bool:
        return not self.frozen and self.n is None


@dataclass
class RadialProfile:
    r: np.ndarray
    u: np.ndarray
    center_value: float
    hit_radius: float
    trace: list

    def __call__(self, r):
        return np.interp(np.asarray(r, dtype=float), self.r, self.u)


def _shoot(rp: RadialProblem, a: float, method: str, rtol: float, dense: bool = False):
    """Integrate outward from u(0) = a; return hitting radius and pieces."""
    N, p = rp.N, rp.p
    pm1 = p - 1.0
    r0 = 1e-9 * rp.R
    # flux q = r^{N-1} w |u'|^{p-2} u' (nonpositive); leading-order start
    q0 = -(r0**N) / N * float(rp.source(r0, a))
    y0 = [a, q0]

    def rhs_r(r, y):
        u, q = y
        rho = r ** (N - 1) * rp.w(r)
        du = -((abs(q) / rho) ** (1.0 / pm1))
        dq = -(r ** (N - 1)) * rp.source(r, max(u, 0.0) if not rp.singular else u)
        return [du, dq]

    switch = 0.5 * a if rp.singular else 0.0

    def ev(r, y):
        return y[0] - switch

    ev.terminal = True
    ev.direction = -1
    r_max = 50.0 * rp.R
    sol1 = solve_ivp(rhs_r, (r0, r_max), y0, method=method, rtol=rtol, atol=1e-14 * a,
                     events=ev, dense_output=dense)
    if sol1.status != 1:
        return np.inf, (sol1, None)
    r1, (u1, q1) = sol1.t_events[0][0], sol1.y_events[0][0]
    if not rp.singular:
        return r1, (sol1, None)

    # phase 2: independent variable s = ln u, state (r, L = ln|q|)
    def rhs_s(s, y):
        r, L = y
        u = np.exp(s)
        rho = r ** (N - 1) * rp.w(r)
        dr = -u * (rho * np.exp(-L)) ** (1.0 / pm1)
        dL = -(r ** (N - 1)) * rp.source(r, u) * u * (rho) ** (1.0 / pm1) * np.exp(-L * (1.0 + 1.0 / pm1))
        return [dr, dL]

    s0 = np.log(u1)
    s_end = s0 - 80.0
    sol2 = solve_ivp(rhs_s, (s0, s_end), [r1, np.log(abs(q1))], method=method, rtol=rtol,
                     atol=1e-14, dense_output=dense)
    if not sol2.success:
        return np.inf, (sol1, sol2)
    return float(sol2.y[0, -1]), (sol1, sol2)


def radial_solve(rp: RadialProblem, tol: float = 1e-10, method: str = "DOP853",
                 points: int = 2001) -> RadialProfile:
    """Shoot on ``a = u(0)`` until the solution vanishes exactly at ``r = R``.

    The hitting radius is increasing in ``a``; a geometric search brackets
    the root and Brent's method (bisection safeguarded secant) refines it.
    Returns the profile sampled on ``points`` radii, clustered toward ``R``.
    """
    trace = []
    # global error of the integrators runs well above their local rtol
    rtol = max(tol * 1e-2, 1e-13)

    def miss(a):
        r_hit, _ = _shoot(rp, a, method, rtol)
        trace.append((a, r_hit))
        return (r_hit if np.isfinite(r_hit) else 50.0 * rp.R) - rp.R

    lo, hi = 1.0, 1.0
    f_lo = f_hi = miss(1.0)
    for _ in range(200):
        if f_lo < 0:
            break
        lo /= 2.0
        f_lo = miss(lo)
    for _ in range(200):
        if f_hi > 0:
            break
        hi *= 2.0
        f_hi = miss(hi)
    if not (f_lo < 0 < f_hi):
        raise ShootingError("could not bracket the centre value", trace)
    a = brentq(miss, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    r_hit, (sol1, sol2) = _shoot(rp, a, method, rtol, dense=True)
    r = rp.R * (1.0 - (1.0 - np.linspace(0.0, 1.0, points)) ** 4)
    u = np.empty_like(r)
    if sol2 is None:
        u = np.maximum(sol1.sol(np.minimum(r, sol1.t[-1]))[0], 0.0)
        u[r >= r_hit] = 0.0
    else:
        r1 = sol1.t[-1]
        in1 = r <= r1
        u[in1] = sol1.sol(np.maximum(r[in1], sol1.t[0]))[0]
        # invert r(s) on the phase-2 branch
        s_grid = np.linspace(sol2.t[0], sol2.t[-1], 40000)
        r_of_s = sol2.sol(s_grid)[0]
        order = np.argsort(r_of_s)
        rr, ss = r_of_s[order], s_grid[order]
        keep = np.concatenate([[True], np.diff(rr) > 0])
        u[~in1] = np.exp(CubicSpline(rr[keep], ss[keep])(np.minimum(r[~in1], rr[keep][-1])))
        u[r >= rp.R] = 0.0
    u[0] = a
    return RadialProfile(r, u, a, r_hit, trace)


def radial_residual(rp: RadialProblem, profile: RadialProfile, tol=1e-10, method="RK45") -> float:
    """Largest difference to the same problem integrated with another scheme."""
    other = radial_solve(rp, tol=tol, method=method, points=len(profile.r))
    return float(np.abs(other(profile.r) - profile.u).max())


# ---------------------------------------------------------------------------
# autonomous 1D case


def first_integral_solve(p: float, delta: float, length: float = 1.0, f: float = 1.0,
                         n: float = None):
    """Symmetric solution of ``-(|u'|^{p-2}u')' = f/u^δ`` on an interval (w, f constant).

    The first integral ``(p-1)/p |u'|^p = G(a) - G(u)`` with ``G' = f/u^δ``
    (or the regularised ``min(f,n)/(u+1/n)^δ``) gives the half-length as an
    integral in ``u``; the maximum ``a`` is found by root-finding. Returns a
    callable ``u(x)`` on ``[0, length]`` and ``a``.
    """
    fn = f if n is None else min(f, n)
    shift = 0.0 if n is None else 1.0 / n

    def gap(a, s):
        # G(a) - G(s) with G' = fn/(s+shift)^δ, free of cancellation near s = a
        base = s + shift
        if base <= 0.0:
            return fn * a ** (1.0 - delta) / (1.0 - delta) if delta < 1.0 else np.inf
        rel = (a - s) / base
        if delta == 1.0:
            return fn * np.log1p(rel)
        return fn * base ** (1.0 - delta) * np.expm1((1.0 - delta) * np.log1p(rel)) / (1.0 - delta)

    cp = (p - 1.0) / p

    def dxdu(s, a):
        return (max(gap(a, s), 0.0) / cp) ** (-1.0 / p)

    def smooth_part(s, a):
        # dxdu with the (a - s)^{-1/p} endpoint behaviour taken out
        dist = a - s
        if dist <= 0:
            return (float(fn / (a + shift) ** delta) / cp) ** (-1.0 / p)
        return dxdu(s, a) * dist ** (1.0 / p)

    def partial_length(s_hi, a):
        mid = min(0.5 * a, s_hi)
        v1 = quad(dxdu, 0.0, mid, args=(a,), limit=200, epsabs=0, epsrel=1e-13)[0]
        if s_hi <= mid:
            return v1
        if s_hi < a:
            return v1 + quad(dxdu, mid, s_hi, args=(a,), limit=200, epsabs=0, epsrel=1e-13)[0]
        v2 = quad(smooth_part, mid, a, args=(a,), weight="alg", wvar=(0.0, -1.0 / p),
                  limit=200, epsabs=0, epsrel=1e-13)[0]
        return v1 + v2

    def half_length(a):
        return partial_length(a, a)

    target = 0.5 * length
    lo, hi = 1e-6, 1.0
    while half_length(hi) < target:
        hi *= 2.0
    while half_length(lo) > target:
        lo /= 2.0
    a = brentq(lambda t: half_length(t) - target, lo, hi, xtol=1e-15, rtol=1e-14)

    # geometric toward s = 0 (the boundary layer), quadratic toward the maximum
    s_lo = a * np.geomspace(1e-14, 0.5, 1200)
    s_hi = a * (1.0 - 0.5 * np.linspace(1.0, 0.0, 801) ** 2)[1:]
    s_grid = np.concatenate([s_lo, s_hi])
    steps = [partial_length(s_grid[0], a)]
    for s0, s1 in zip(s_grid[:-2], s_grid[1:-1]):
        steps.append(quad(dxdu, s0, s1, args=(a,), epsabs=0, epsrel=1e-13)[0])
    x_grid = np.cumsum(steps)
    x_grid = np.append(x_grid, 0.5 * length)
    edge = min(1.0, p / (delta + p - 1.0)) if n is None else 1.0
    # x(s) and s(x) are smooth and monotone in log-log coordinates
    interp = CubicSpline(np.log(x_grid), np.log(s_grid))

    def u(x):
        x = np.asarray(x, dtype=float)
        d = np.clip(np.minimum(x, length - x), 0.0, 0.5 * length)
        out = np.zeros_like(d)
        pos = d > 0
        out[pos] = np.exp(interp(np.log(np.maximum(d[pos], x_grid[0]))))
        small = pos & (d < x_grid[0])
        out[small] *= (d[small] / x_grid[0]) ** edge
        return out

    return u, a


# ---------------------------------------------------------------------------


def fit_boundary_exponent(dist, u, window) -> float:
    """Least-squares slope of ``log u`` against ``log dist`` for ``dist`` in ``window``."""
    dist = np.asarray(dist, dtype=float)
    u = np.asarray(u, dtype=float)
    lo, hi = window
    sel = (dist >= lo) & (dist <= hi) & (u > 0)
    if sel.sum() < 2:
        raise ValueError("fewer than two samples in the fit window")
    slope, _ = np.polyfit(np.log(dist[sel]), np.log(u[sel]), 1)
    return float(slope)
