"""Regularisation-and-continuation solver for ``-div(w|∇u|^{p-2}∇u) = f/u^δ``.

For each level ``n`` the singular problem is replaced by

    -div(w|∇u|^{p-2}∇u) = f_n / (|u| + 1/n)^δ,   f_n = min(f, n),

whose solution ``u_n`` is the fixed point of the map ``A`` sending ``v`` to
the solution of the same equation with the denominator frozen at ``v``.
``A`` is evaluated by a damped Newton method on the p-Laplace energy and
its fixed point is found by Anderson-accelerated Picard iteration.
Continuation in ``n`` (warm-started) approximates the limit ``u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    Discretization,
    assemble_jacobian,
    assemble_residual,
    energy,
    load_vector,
    stiffness_matrix,
)
from .mesh import FemFunction
from .weights import WeightSpec

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec",
    "ContinuationSchedule",
    "SolverReport",
    "NewtonError",
    "PicardError",
    "ContinuationError",
    "truncate_f",
    "frozen_rhs",
    "solve_frozen",
    "solve_inner",
    "fixed_point_map",
    "picard_iterate",
    "continuation_solve",
    "monotonicity_check",
    "uniqueness_probe",
    "strong_monotonicity_probe",
    "x_norm",
    "power_x_norm",
    "lt_norm",
    "T_eta",
    "g_k",
]


class NewtonError(RuntimeError):
    def __init__(self, msg, best=None, history=None):
        super().__init__(msg)
        self.best = best
        self.history = history or []


class PicardError(RuntimeError):
    def __init__(self, msg, history=None, last=None):
        super().__init__(msg)
        self.history = history or []
        self.last = last


class ContinuationError(RuntimeError):
    def __init__(self, msg, report=None, cause=None):
        super().__init__(msg)
        self.report = report
        self.cause = cause


@dataclass
class ProblemSpec:
    """One instance of the singular problem.

    ``f`` is a nonnegative constant, a callable on points of shape (k, N),
    or an array of nodal values.
    """

    p: float
    delta: float
    f: object
    weight: WeightSpec
    domain: object = None
    m_claimed: float = np.inf

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def f_nodal(self, mesh) -> np.ndarray:
        if callable(self.f):
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.asarray(self.f(mesh.vertices), dtype=float)
        elif np.ndim(self.f) == 0:
            vals = np.full(mesh.num_vertices, float(self.f))
        else:
            vals = np.asarray(self.f, dtype=float)
        vals = np.broadcast_to(vals, (mesh.num_vertices,)).copy()
        vals[np.isnan(vals)] = 0.0
        if np.any(vals < 0):
            raise ValueError("f must be nonnegative")
        if not np.any(vals[mesh.interior] > 0):
            raise ValueError("f vanishes identically on the interior nodes")
        return vals

    @property
    def power_exponent(self) -> float:
        """Exponent (δ+p-1)/p of the power of u that lies in the energy space."""
        return (self.delta + self.p - 1.0) / self.p


@dataclass
class ContinuationSchedule:
    n_values: Sequence[int] = tuple(2**k for k in range(9))
    inner_tol: float = 1e-10
    picard_tol: float = 1e-8
    max_picard: int = 200
    max_newton: int = 100
    early_stop: float = 1e-6
    anderson_depth: int = 5
    mixing: float = 0.5

    def __post_init__(self):
        n = list(self.n_values)
        if not n:
            raise ValueError("empty schedule")
        if any(int(v) != v or v < 1 for v in n) or any(b <= a for a, b in zip(n, n[1:])):
            raise ValueError("n_values must be strictly increasing positive integers")
        self.n_values = tuple(int(v) for v in n)


@dataclass
class SolverReport:
    records: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    cauchy_rate: float = float("nan")
    positivity: dict = field(default_factory=dict)
    eps_note: str = ""
    status: str = "ok"
    error: str = ""

    def series(self, key) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.records], dtype=float)

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "executed_schedule": self.executed,
            "cauchy_rate": self.cauchy_rate,
            "positivity": self.positivity,
            "regularisation": self.eps_note,
            "status": self.status,
            "error": self.error,
        }


# ---------------------------------------------------------------------------
# truncations and data


def truncate_f(f, n):
    """``min(f, n)``, pointwise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.minimum(f, n)


def T_eta(s, eta):
    """Truncation at height ``eta``: ``min(eta, s)``."""
    return np.minimum(eta, s)


def g_k(s, delta, k):
    """``min(s^{-δ}, k)`` for s > 0 and ``k`` for s <= 0."""
    s = np.asarray(s, dtype=float)
    out = np.full(s.shape, float(k))
    pos = s > 0
    out[pos] = np.minimum(s[pos] ** (-delta), k)
    return out


def frozen_rhs(f_n: np.ndarray, v: np.ndarray, n: int, delta: float) -> np.ndarray:
    """Right-hand side of the frozen problem, ``f_n / (|v| + 1/n)^δ``."""
    return f_n / (np.abs(v) + 1.0 / n) ** delta


# ---------------------------------------------------------------------------
# norms


def x_norm(u: np.ndarray, disc: Discretization, p: float) -> float:
    """``(∫ w |∇u|^p)^{1/p}`` for a P1 field."""
    G = disc.mesh.gradients(u)
    return float(np.dot(disc.cell_w, np.sqrt((G * G).sum(1)) ** p) ** (1.0 / p))


def power_x_norm(u: np.ndarray, disc: Discretization, p: float, exponent: float) -> float:
    """:func:`x_norm` of the nodal interpolant of ``|u|^exponent``."""
    return x_norm(np.abs(u) ** exponent, disc, p)


def lt_norm(u: np.ndarray, disc: Discretization, t) -> float:
    """Unweighted L^t norm of the P1 field (``t = inf`` gives the nodal max)."""
    if np.isinf(t):
        return float(np.abs(u).max())
    q = disc.quad
    return float(q.integrate(np.abs(q.evaluate(u)) ** t) ** (1.0 / t))


# ---------------------------------------------------------------------------
# inner solve


def _restrict(M, idx):
    return M[idx][:, idx].tocsc()


def _scaled_guess(u, disc, p, load):
    """Best multiple of ``u`` for the energy ``t^p a/p - t c`` (None if unusable)."""
    G = disc.mesh.gradients(u)
    a = float(np.dot(disc.cell_w, np.sqrt((G * G).sum(1)) ** p))
    c = float(np.dot(load, u))
    if a <= 0 or c <= 0:
        return None
    return (c / a) ** (1.0 / (p - 1.0)) * u


def solve_frozen(
    disc: Discretization,
    p: float,
    load: np.ndarray,
    init: np.ndarray = None,
    tol: float = 1e-10,
    max_newton: int = 100,
):
    """Minimise the p-Laplace energy for a fixed load vector.

    Damped Newton with Armijo backtracking on the energy; after three line
    searches that find no admissible step, fixed-step preconditioned gradient
    steps take over. Returns ``(u, info)`` where ``info`` holds the energy
    trace and iteration counts.
    """
    mesh = disc.mesh
    I = mesh.interior
    u = np.zeros(mesh.num_vertices)
    info = {"newton_iters": 0, "energies": [], "gradient_steps": 0}
    if np.all(load[I] == 0):
        return u, info
    K2 = None
    if p == 2.0:
        K2 = _restrict(stiffness_matrix(disc), I)
        u[I] = spla.spsolve(K2, load[I])
        info["newton_iters"] = 1
        R = assemble_residual(u, disc, p, load)
        info["residual"] = float(np.abs(R[I]).max())
        info["energies"] = [energy(u, disc, p, load)]
        if info["residual"] > tol:
            # one refinement step absorbs the solve's roundoff
            u[I] -= spla.spsolve(K2, R[I])
            R = assemble_residual(u, disc, p, load)
            info["residual"] = float(np.abs(R[I]).max())
        if info["residual"] > tol and info["residual"] > _roundoff_floor(u, disc, p, load):
            raise NewtonError(f"linear solve residual {info['residual']:.3e} above {tol}", best=u)
        return u, info

    candidates = []
    if init is not None:
        cand = _scaled_guess(np.asarray(init, dtype=float), disc, p, load)
        if cand is not None:
            candidates.append(cand)
    if not candidates:
        K2 = _restrict(stiffness_matrix(disc), I)
        z = np.zeros(mesh.num_vertices)
        z[I] = spla.spsolve(K2, load[I])
        cand = _scaled_guess(z, disc, p, load)
        candidates.append(cand if cand is not None else z)
    u = min(candidates, key=lambda v: energy(v, disc, p, load)).copy()
    u[mesh.boundary] = 0.0

    E = energy(u, disc, p, load)
    info["energies"].append(E)
    R = assemble_residual(u, disc, p, load)
    r = float(np.abs(R[I]).max())
    best = (r, u.copy())
    failures = 0
    for it in range(max_newton):
        if r <= tol:
            break
        J, _ = assemble_jacobian(u, disc, p)
        du = np.zeros_like(u)
        if failures < 3:
            du[I] = -spla.spsolve(_restrict(J, I), R[I])
        else:
            if K2 is None:
                K2 = _restrict(stiffness_matrix(disc), I)
            du[I] = -spla.spsolve(K2, R[I])
        slope = float(np.dot(R[I], du[I]))
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = u + t * du
            E1 = energy(trial, disc, p, load)
            if E1 <= E + 1e-4 * t * slope:
                accepted = True
                break
            # energy differences are lost to roundoff near the minimiser; the
            # residual still decides there
            if abs(E1 - E) <= 1e-13 * (abs(E) + 1.0):
                R1 = assemble_residual(trial, disc, p, load)
                if np.abs(R1[I]).max() < r:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            failures += 1
            if failures >= 3 and np.abs(du).max() == 0:
                break
            if failures > 3:
                # fixed-step gradient flow in the energy-space metric
                trial = u + 0.5 * du
                E1 = energy(trial, disc, p, load)
                info["gradient_steps"] += 1
            else:
                continue
        u = trial
        E = E1
        info["energies"].append(E)
        R = assemble_residual(u, disc, p, load)
        r = float(np.abs(R[I]).max())
        info["newton_iters"] = it + 1
        if r < best[0]:
            best = (r, u.copy())
        if not accepted and r <= _roundoff_floor(u, disc, p, load):
            break
    info["residual"] = r
    if r > tol:
        floor = _roundoff_floor(u, disc, p, load)
        if r > floor:
            raise NewtonError(
                f"Newton stagnated at residual {r:.3e} (tol {tol:.1e})",
                best=best[1],
                history=info["energies"],
            )
        info["note"] = f"residual {r:.3e} at roundoff floor {floor:.3e}"
    return u, info


def _roundoff_floor(u, disc, p, load):
    # size of the individual terms summed into a residual entry, times a few ulps
    G = disc.mesh.gradients(u)
    mag = np.sqrt((G * G).sum(1))
    scale = (disc.cell_w * mag ** (p - 1.0))[:, None] * np.abs(disc.mesh.grad_basis).max(2)
    big = max(float(scale.max()), float(np.abs(load).max()))
    return 64 * np.finfo(float).eps * big


def solve_inner(v, n: int, prob: ProblemSpec, disc: Discretization, tol: float = 1e-10,
                max_newton: int = 100, init=None, f_nodal=None):
    """Evaluate the map ``A``: solve the problem with denominator frozen at ``v``.

    Returns a :class:`FemFunction` with zero trace.
    """
    vals = v.values if isinstance(v, FemFunction) else np.asarray(v, dtype=float)
    fn = truncate_f(prob.f_nodal(disc.mesh) if f_nodal is None else f_nodal, n)
    load = load_vector(disc.mesh, frozen_rhs(fn, vals, n, prob.delta))
    u, _ = solve_frozen(disc, prob.p, load, init=init, tol=tol, max_newton=max_newton)
    return FemFunction(disc.mesh, u)


def fixed_point_map(prob: ProblemSpec, disc: Discretization, n: int, tol=1e-10, max_newton=100):
    """Return a callable ``v -> A(v)`` on nodal arrays, warm-starting each solve."""
    fn = truncate_f(prob.f_nodal(disc.mesh), n)
    state = {"last": None, "newton": 0}

    def A(v):
        load = load_vector(disc.mesh, frozen_rhs(fn, v, n, prob.delta))
        u, info = solve_frozen(disc, prob.p, load, init=state["last"], tol=tol, max_newton=max_newton)
        state["last"] = u
        state["newton"] += info["newton_iters"]
        return u

    A.state = state
    return A


def picard_iterate(prob: ProblemSpec, disc: Discretization, n: int, init=None,
                   sched: ContinuationSchedule = None):
    """Fixed point ``u_n = A(u_n)`` by Anderson-accelerated Picard iteration.

    Stops when ``‖A(u) - u‖_∞ <= picard_tol (1 + ‖u‖_∞)`` and returns
    ``(u, info)`` with the iterate that satisfied the test.
    """
    sched = sched or ContinuationSchedule()
    mesh = disc.mesh
    I = mesh.interior
    A = fixed_point_map(prob, disc, n, sched.inner_tol, sched.max_newton)
    x = np.zeros(mesh.num_vertices) if init is None else np.array(
        init.values if isinstance(init, FemFunction) else init, dtype=float
    )
    x[mesh.boundary] = 0.0
    m, beta = sched.anderson_depth, sched.mixing
    dX, dG = [], []
    history = []
    best = (np.inf, x.copy(), None)
    prev_x = prev_g = None
    for k in range(1, sched.max_picard + 1):
        try:
            ax = A(x)
        except NewtonError as exc:
            raise PicardError(f"inner solve failed at sweep {k}: {exc}", history, x) from exc
        g = ax - x
        res = float(np.abs(g).max())
        history.append(res)
        if res <= sched.picard_tol * (1.0 + np.abs(x).max()):
            return x, {"picard_iters": k, "residual": res, "history": history,
                       "newton_iters": A.state["newton"], "image": ax}
        if res < best[0]:
            best = (res, x.copy(), g.copy())
        elif res > 100 * best[0]:
            # Anderson wandered off: restart the memory from the best iterate
            dX.clear()
            dG.clear()
            prev_x = prev_g = None
            x = best[1] + beta * best[2]
            continue
        if prev_x is not None:
            dX.append(x[I] - prev_x[I])
            dG.append(g[I] - prev_g[I])
            if len(dX) > m:
                dX.pop(0)
                dG.pop(0)
        prev_x, prev_g = x.copy(), g.copy()
        x_new = x + beta * g
        if dX:
            Gm = np.stack(dG, axis=1)
            Xm = np.stack(dX, axis=1)
            gamma, *_ = np.linalg.lstsq(Gm, g[I], rcond=None)
            x_new[I] = x[I] + beta * g[I] - (Xm + beta * Gm) @ gamma
        x = x_new
    raise PicardError(
        f"no fixed point after {sched.max_picard} sweeps (last residual {history[-1]:.3e})",
        history,
        x,
    )


# ---------------------------------------------------------------------------
# continuation


def monotonicity_check(u_a, u_b) -> float:
    """Violation of ``u_b >= u_a``: ``max(0, max_i (u_a[i] - u_b[i]))``."""
    if isinstance(u_a, FemFunction) and isinstance(u_b, FemFunction) and u_a.mesh is not u_b.mesh:
        raise ValueError("fields live on different meshes")
    a = u_a.values if isinstance(u_a, FemFunction) else np.asarray(u_a)
    b = u_b.values if isinstance(u_b, FemFunction) else np.asarray(u_b)
    if a.shape != b.shape:
        raise ValueError("fields live on different meshes")
    return float(max(0.0, np.max(a - b)))


def _positivity(u, mesh, fractions=(0.05, 0.1, 0.2)):
    dist = mesh.boundary_distance()
    out = {}
    for frac in fractions:
        d = frac * mesh.diameter
        sel = dist >= d
        if np.any(sel):
            out[f"{frac:g}"] = float(u[sel].min())
    return out


def continuation_solve(
    prob: ProblemSpec,
    disc: Discretization,
    sched: ContinuationSchedule = None,
    init=None,
    lt_exponents: Sequence = (),
    early_stop: bool = True,
    restart_from_init: bool = False,
):
    """Solve for every ``n`` in the schedule, warm-starting from the previous ``n``.

    With ``restart_from_init`` every level starts from ``init`` instead.

    Returns ``(solutions, report)``: one nodal array per executed ``n`` and a
    :class:`SolverReport`. Errors are re-raised as :class:`ContinuationError`
    carrying the partial report.
    """
    sched = sched or ContinuationSchedule()
    mesh = disc.mesh
    I = mesh.interior
    report = SolverReport(eps_note=f"gradient regularisation eps = {disc.eps:.3g} (Jacobian only)")
    sols = []
    x = init
    for n in sched.n_values:
        try:
            u, info = picard_iterate(prob, disc, n, init=x, sched=sched)
        except (PicardError, NewtonError) as exc:
            report.status = "failed"
            report.error = f"n={n}: {exc}"
            raise ContinuationError(report.error, report, exc) from exc
        viol = monotonicity_check(sols[-1], u) if sols else 0.0
        rec = {
            "n": n,
            "picard_iters": info["picard_iters"],
            "newton_iters": info["newton_iters"],
            "final_residual": info["residual"],
            "min_u": float(u[I].min()),
            "max_u": float(u.max()),
            "x_norm": x_norm(u, disc, prob.p),
            "power_x_norm": power_x_norm(u, disc, prob.p, prob.power_exponent),
            "lt_norms": {_tkey(t): lt_norm(u, disc, t) for t in lt_exponents},
            "monotonicity_violation": viol,
        }
        if sols:
            rec["successive_diff"] = float(np.abs(u - sols[-1]).max())
        report.records.append(rec)
        report.executed.append(n)
        sols.append(u)
        x = init if restart_from_init else u
        if early_stop and len(sols) > 1 and rec["successive_diff"] < sched.early_stop * np.abs(sols[-2]).max():
            break
    diffs = [r["successive_diff"] for r in report.records[1:]]
    if len(diffs) >= 2 and all(d > 0 for d in diffs):
        report.cauchy_rate = float(np.exp(np.mean(np.diff(np.log(diffs)))))
    report.positivity = _positivity(sols[-1], mesh)
    return sols, report


def _tkey(t):
    return "inf" if np.isinf(t) else f"{float(t):g}"


def uniqueness_probe(prob: ProblemSpec, disc: Discretization, sched: ContinuationSchedule,
                     inits: Sequence, cold: bool = True) -> float:
    """Largest pairwise relative max-norm distance between continuation results.

    With ``cold`` (default) every level of every branch restarts from that
    branch's own initial field, so no branch inherits another's history.
    """
    if len(inits) < 2:
        raise ValueError("need at least two initial fields")
    finals = []
    for i, init in enumerate(inits):
        try:
            sols, _ = continuation_solve(
                prob, disc, sched, init=init, early_stop=False, restart_from_init=cold
            )
        except ContinuationError as exc:
            raise ContinuationError(f"init #{i}: {exc}", exc.report, exc) from exc
        finals.append(sols[-1])
    scale = max(np.abs(f).max() for f in finals)
    return float(
        max(np.abs(a - b).max() for i, a in enumerate(finals) for b in finals[i + 1:]) / scale
    )


def strong_monotonicity_probe(p: float, samples: int, seed: int = 0, dimension: int = 2,
                              flux: Callable = None) -> dict:
    """Sample ``<A(ζ1)-A(ζ2), ζ1-ζ2>`` against ``|ζ1-ζ2|^γ (|ζ1|^p+|ζ2|^p)^{1-γ/p}``.

    ``flux`` maps arrays of vectors (k, d) to (k, d); the default is the
    model ``|ζ|^{p-2} ζ``. ``γ = max(p, 2)``.
    """
    if not p > 1 or samples < 1:
        raise ValueError("need p > 1 and samples >= 1")
    rng = np.random.default_rng(seed)
    if flux is None:
        def flux(z):
            mag = np.linalg.norm(z, axis=1, keepdims=True)
            return np.where(mag > 0, mag ** (p - 2.0), 0.0) * z
    z1 = rng.standard_normal((samples, dimension)) * np.exp(rng.uniform(-3, 3, (samples, 1)))
    z2 = rng.standard_normal((samples, dimension)) * np.exp(rng.uniform(-3, 3, (samples, 1)))
    same = np.all(z1 == z2, axis=1)
    z1, z2 = z1[~same], z2[~same]
    gamma = max(p, 2.0)
    lhs = ((flux(z1) - flux(z2)) * (z1 - z2)).sum(1)
    diff = np.linalg.norm(z1 - z2, axis=1)
    abar = np.linalg.norm(z1, axis=1) ** p + np.linalg.norm(z2, axis=1) ** p
    ratio = lhs / (diff**gamma * abar ** (1.0 - gamma / p))
    out = {"min_ratio": float(ratio.min()), "sign_ok": bool(np.all(lhs > 0)), "samples": int(len(lhs))}
    if not out["min_ratio"] > 0:
        raise AssertionError("strong monotonicity ratio is not positive")
    return out
