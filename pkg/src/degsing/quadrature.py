"""Quadrature for integrands with isolated point singularities.

Two families of rules live here:

* ball rules, polar about a singular point, used for A_p ratios and doubling
  checks over balls of R^N;
* mesh rules (:class:`QuadratureRule`), used by assembly and weighted norms.
  Cells that contain a flagged singular point are split into Duffy sub-cells
  with apex at the singular point and graded toward it; cells nearby are
  uniformly subdivided; all other cells get a degree-4 Gauss rule.

Integrability of a singular integrand is decided from a sequence of
geometrically graded levels: level L adds the band of radii
``[R Q^-L, R Q^-(L-1)]`` around the singular point. The sequence of band
increments is geometric with ratio ``Q^-e`` for an integrand behaving like
``rho^(e - N)``, so the integral is declared finite when the increment ratio
falls below :data:`RATIO_CAP`, and its value is the partial sum plus the
geometric tail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh

__all__ = [
    "GRADING",
    "MAX_LEVELS",
    "RATIO_CAP",
    "LevelResult",
    "QuadratureRule",
    "refine_levels",
    "ball_volume",
    "ball_integral",
    "mesh_integral",
    "build_quadrature",
]

#: Radius ratio between successive refinement levels.
GRADING = 2.0**12
#: Dyadic panels per level (so each panel spans a factor 2 in radius).
PANELS_PER_LEVEL = 12
GAUSS_ORDER = 8
MAX_LEVELS = 12
RATIO_CAP = 0.5
AGREEMENT_RTOL = 1e-8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_ORDER)
_GL01_X = 0.5 * (_GL_X + 1.0)
_GL01_W = 0.5 * _GL_W

# Dunavant degree-4 rule on the reference triangle (weights sum to 1).
_DUNAVANT4 = np.array(
    [
        [0.445948490915965, 0.445948490915965, 0.108103018168070, 0.223381589678011],
        [0.445948490915965, 0.108103018168070, 0.445948490915965, 0.223381589678011],
        [0.108103018168070, 0.445948490915965, 0.445948490915965, 0.223381589678011],
        [0.091576213509771, 0.091576213509771, 0.816847572980459, 0.109951743655322],
        [0.091576213509771, 0.816847572980459, 0.091576213509771, 0.109951743655322],
        [0.816847572980459, 0.091576213509771, 0.091576213509771, 0.109951743655322],
    ]
)
_GAUSS3_X, _GAUSS3_W = np.polynomial.legendre.leggauss(3)


@dataclass
class LevelResult:
    """Outcome of a level-refinement sequence."""

    value: float
    finite: bool
    levels: int
    increments: list
    diagnostic: str = ""


def refine_levels(
    band: Callable[[int], float],
    base: float = 0.0,
    max_levels: int = MAX_LEVELS,
    rtol: float = AGREEMENT_RTOL,
    ratio_cap: float = RATIO_CAP,
) -> LevelResult:
    """Sum ``base + band(1) + band(2) + ...`` and decide whether it converges.

    The sequence is accepted as finite when the ratio of successive band
    increments is below ``ratio_cap`` and two successive tail-extrapolated
    values agree to ``rtol``. Three consecutive ratios at or above the cap,
    or exhausting ``max_levels``, declare divergence.
    """
    total = float(base)
    incs: list = []
    prev_val = None
    bad = 0
    for level in range(1, max_levels + 1):
        inc = float(band(level))
        total += inc
        incs.append(inc)
        if not np.isfinite(total):
            return LevelResult(np.inf, False, level, incs, "non-finite partial sum")
        if len(incs) < 2:
            continue
        prev = incs[-2]
        if inc == 0.0:
            if prev == 0.0:
                return LevelResult(total, True, level, incs)
            ratio = 0.0
        elif prev == 0.0:
            ratio = np.inf
        else:
            ratio = abs(inc / prev)
        if ratio >= ratio_cap:
            bad += 1
            prev_val = None
            if bad >= 3:
                return LevelResult(
                    np.inf, False, level, incs, f"increment ratio {ratio:.3g} >= {ratio_cap}"
                )
            continue
        bad = 0
        val = total + inc * ratio / (1.0 - ratio)
        if prev_val is not None and abs(val - prev_val) <= rtol * abs(val):
            return LevelResult(val, True, level, incs)
        prev_val = val
    return LevelResult(np.inf, False, max_levels, incs, "no agreement within level budget")


def ball_volume(radius: float, dim: int) -> float:
    if dim == 1:
        return 2.0 * radius
    if dim == 2:
        return np.pi * radius**2
    raise ValueError("only dimensions 1 and 2 are supported")


def _band_nodes(lo: float, hi: float):
    """Radial nodes/weights for [lo, hi] split into dyadic panels (lo > 0)."""
    edges = lo * (hi / lo) ** (np.arange(PANELS_PER_LEVEL + 1) / PANELS_PER_LEVEL)
    a, b = edges[:-1, None], edges[1:, None]
    return (a + (b - a) * _GL01_X).ravel(), ((b - a) * _GL01_W).ravel()


def _graded_nodes(a: float, b: float, gap: float):
    """Nodes on [a, b] graded toward ``a``, where the singularity sits ``gap`` before ``a``."""
    length = b - a
    if length <= 0:
        return np.empty(0), np.empty(0)
    if gap <= 0:
        raise ValueError("graded rule needs a positive gap")
    k = int(np.clip(np.ceil(np.log2(length / gap)), 0, 60))
    edges = np.concatenate([[0.0], gap * 2.0 ** np.arange(k), [length]])
    edges = np.unique(np.clip(edges, 0.0, length))
    lo, hi = edges[:-1, None], edges[1:, None]
    return (a + lo + (hi - lo) * _GL01_X).ravel(), ((hi - lo) * _GL01_W).ravel()


def _polar_setup(center, radius, x0, dim):
    """Directions from x0 with angular weights and the exit radius along each.

    Returns (dirs, ang_w, rho_lo, rho_hi, singular) where ``singular`` tells
    whether x0 lies in the closed ball (so rho_lo == 0).
    """
    c = np.asarray(center, dtype=float).reshape(dim)
    x0 = np.asarray(x0, dtype=float).reshape(dim)
    d_vec = c - x0
    d = float(np.linalg.norm(d_vec))
    R = float(radius)
    on_sphere = abs(d - R) <= 1e-13 * R
    if dim == 1:
        lo_end, hi_end = c[0] - R, c[0] + R
        dirs, ang_w, rlo, rhi = [], [], [], []
        for s in (-1.0, 1.0):
            end = hi_end if s > 0 else lo_end
            near = lo_end if s > 0 else hi_end
            far_dist = s * (end - x0[0])
            near_dist = s * (near - x0[0])
            if far_dist <= 0:
                continue
            dirs.append([s])
            ang_w.append(1.0)
            rlo.append(max(near_dist, 0.0))
            rhi.append(far_dist)
        inside = x0[0] >= lo_end - 1e-13 * R and x0[0] <= hi_end + 1e-13 * R
        return np.array(dirs), np.array(ang_w), np.array(rlo), np.array(rhi), inside
    if d < R and not on_sphere:
        # x0 strictly inside: full circle; resolve the near-kink of the exit
        # radius when x0 approaches the sphere
        gap = np.sqrt(max(R * R - d * d, 0.0)) / R
        n = int(np.clip(np.ceil(48.0 / max(gap, 1e-12)), 128, 8192))
        theta = 2 * np.pi * np.arange(n) / n
        ang_w = np.full(n, 2 * np.pi / n)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        b = dirs @ d_vec
        rhi = b + np.sqrt(b * b + R * R - d * d)
        return dirs, ang_w, np.zeros(n), rhi, True
    theta_c = np.arctan2(d_vec[1], d_vec[0])
    if on_sphere:
        phi = 0.5 * np.pi * _GL_X_64
        ang_w = 0.5 * np.pi * _GL_W_64
        theta = theta_c + phi
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        rhi = 2 * R * np.cos(phi)
        return dirs, ang_w, np.zeros_like(rhi), rhi, True
    # x0 outside: sweep the cone of directions hitting the ball; the sine
    # substitution removes the square-root behaviour at the tangent rays
    half = np.arcsin(R / d)
    phi = 0.5 * np.pi * _GL_X_64
    theta = theta_c + half * np.sin(phi)
    ang_w = half * np.cos(phi) * 0.5 * np.pi * _GL_W_64
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    b = dirs @ d_vec
    disc = np.sqrt(np.maximum(b * b - (d * d - R * R), 0.0))
    return dirs, ang_w, b - disc, b + disc, False


_GL_X_64, _GL_W_64 = np.polynomial.legendre.leggauss(64)


def ball_integral(
    func: Callable[[np.ndarray], np.ndarray],
    center,
    radius: float,
    dim: int,
    singular_point=None,
    max_levels: int = MAX_LEVELS,
) -> LevelResult:
    """Integrate ``func`` (vectorised over points of shape (k, dim)) over a ball.

    Without a singular point a polar Gauss rule about the centre is used.
    With one, the rule is polar about the singular point and, when the point
    lies in the closed ball, the radial direction is refined level by level.
    """
    R = float(radius)
    if R <= 0:
        raise ValueError("ball radius must be positive")
    c = np.asarray(center, dtype=float).reshape(dim)
    if singular_point is None:
        singular_point = c
        smooth = True
    else:
        smooth = False
    dirs, ang_w, rlo, rhi, singular = _polar_setup(c, R, singular_point, dim)
    x0 = np.asarray(singular_point, dtype=float).reshape(dim)

    def radial_sum(nodes_per_dir):
        total = 0.0
        for j in range(len(dirs)):
            rho, wts = nodes_per_dir(j)
            if len(rho) == 0:
                continue
            pts = x0 + rho[:, None] * dirs[j]
            vals = np.asarray(func(pts), dtype=float)
            total += ang_w[j] * np.dot(wts * rho ** (dim - 1), vals)
        return total

    if smooth or not singular:
        def nodes(j):
            if smooth:
                return _fixed_radial(rlo[j], rhi[j])
            return _graded_nodes(rlo[j], rhi[j], rlo[j])

        val = radial_sum(nodes)
        return LevelResult(val, bool(np.isfinite(val)), 0, [])

    rref = float(rhi.max())

    def band(level):
        lo_b = rref * GRADING ** (-level)
        hi_b = rref * GRADING ** (-(level - 1))
        rho_b, w_b = _band_nodes(lo_b, hi_b)

        def nodes(j):
            top = rhi[j]
            if top <= lo_b:
                return np.empty(0), np.empty(0)
            if top >= hi_b:
                return rho_b, w_b
            return _clipped_band(lo_b, top)

        return radial_sum(nodes)

    return refine_levels(band, max_levels=max_levels)


def _fixed_radial(a, b):
    if b <= a:
        return np.empty(0), np.empty(0)
    n = 4
    edges = np.linspace(a, b, n + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    return (lo + (hi - lo) * _GL01_X).ravel(), ((hi - lo) * _GL01_W).ravel()


def _clipped_band(lo, top):
    # part of a band cut by the ball boundary; dyadic panels up to ``top``
    k = max(1, int(np.ceil(np.log2(top / lo))))
    edges = lo * (top / lo) ** (np.arange(k + 1) / k)
    a, b = edges[:-1, None], edges[1:, None]
    return (a + (b - a) * _GL01_X).ravel(), ((b - a) * _GL01_W).ravel()


# ---------------------------------------------------------------------------
# mesh rules


@dataclass(eq=False)
class QuadratureRule:
    """Flat list of quadrature nodes over a mesh.

    ``cell`` gives the owning cell of each node and ``bary`` its barycentric
    coordinates there, so P1 fields are evaluated exactly at the nodes.
    """

    mesh: Mesh
    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    bary: np.ndarray
    singular_points: tuple = ()
    levels: int = 0

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """Values of the P1 field with nodal ``values`` at the quadrature nodes."""
        return np.einsum("qa,qa->q", self.bary, values[self.mesh.cells[self.cell]])

    def integrate(self, q_values: np.ndarray) -> float:
        return float(np.dot(self.weights, q_values))

    def cell_integrals(self, q_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell, self.weights * q_values, minlength=self.mesh.num_cells)


def _as_points(singular_points, dim):
    pts = []
    for s in singular_points or ():
        s = np.asarray(s, dtype=float).reshape(dim)
        pts.append(s)
    return pts


def _cells_containing(mesh: Mesh, x0: np.ndarray, tol: float = 1e-12):
    """Cells whose closure contains x0, with barycentric coordinates of x0."""
    out = []
    P = mesh.vertices[mesh.cells]
    scale = mesh.diameter
    if mesh.dimension == 1:
        a, b = P[:, 0, 0], P[:, 1, 0]
        hits = np.nonzero((x0[0] >= a - tol * scale) & (x0[0] <= b + tol * scale))[0]
        for c in hits:
            lam1 = (x0[0] - a[c]) / (b[c] - a[c])
            out.append((c, np.clip(np.array([1 - lam1, lam1]), 0, 1)))
        return out
    grads = mesh.grad_basis
    lam = np.einsum("cad,cd->ca", grads, x0 - P[:, 0, :])
    lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
    # grad_basis dotted with (x - p0) gives lambda_a(x) - lambda_a(p0)
    hits = np.nonzero(np.all(lam >= -tol * 10, axis=1))[0]
    for c in hits:
        out.append((c, np.clip(lam[c], 0.0, 1.0)))
    return out


def _duffy_bands_2d(apex_bary, level_lo, level_hi, tgl):
    """Reference-triangle nodes (as barycentrics) of Duffy sub-triangles.

    For every edge of the reference triangle not containing the apex, the
    sub-triangle (apex, A, B) is mapped as x = apex + u((A-apex) + t(B-A)),
    with u in [level_lo, level_hi] (graded dyadic panels) and t Gauss.
    Returns (bary, ref_weight) where ref_weight integrates over a reference
    triangle of unit *measure*.
    """
    corners = np.eye(3)
    apex = np.asarray(apex_bary, dtype=float)
    bary_all, w_all = [], []
    if level_lo == 0.0:
        u, wu = level_hi * _GL01_X, level_hi * _GL01_W
    else:
        u, wu = _band_nodes(level_lo, level_hi)
    t, wt = tgl
    for k in range(3):
        A, B = corners[(k + 1) % 3], corners[(k + 2) % 3]
        # area of sub-triangle relative to the whole cell equals the apex's
        # barycentric weight on the opposite vertex k
        frac = apex[k]
        if frac <= 1e-14:
            continue
        U, T = np.meshgrid(u, t, indexing="ij")
        WU, WT = np.meshgrid(wu, wt, indexing="ij")
        pts = apex + U.ravel()[:, None] * ((A - apex) + T.ravel()[:, None] * (B - A))
        # Duffy Jacobian 2|sub| u, normalised by |cell|
        w = 2.0 * frac * U.ravel() * WU.ravel() * WT.ravel()
        bary_all.append(pts)
        w_all.append(w)
    if not bary_all:
        return np.empty((0, 3)), np.empty(0)
    return np.concatenate(bary_all), np.concatenate(w_all)


def _duffy_bands_1d(apex_bary, level_lo, level_hi):
    apex = float(apex_bary[1])  # position in [0,1] along the segment
    bary_all, w_all = [], []
    if level_lo == 0.0:
        u, wu = level_hi * _GL01_X, level_hi * _GL01_W
    else:
        u, wu = _band_nodes(level_lo, level_hi)
    for end, frac in ((1.0, 1.0 - apex), (0.0, apex)):
        if frac <= 1e-14:
            continue
        s = apex + u * (end - apex)
        bary_all.append(np.stack([1 - s, s], axis=1))
        w_all.append(frac * wu)
    if not bary_all:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(bary_all), np.concatenate(w_all)


def _singular_cell_nodes(dim, apex_bary, levels, tgl):
    """Graded rule on one cell about a point given in barycentrics."""
    bary, w = [], []
    for level in range(1, levels + 1):
        lo, hi = GRADING ** (-level), GRADING ** (-(level - 1))
        if dim == 1:
            b, ww = _duffy_bands_1d(apex_bary, lo, hi)
        else:
            b, ww = _duffy_bands_2d(apex_bary, lo, hi, tgl)
        bary.append(b)
        w.append(ww)
    core = GRADING ** (-levels)
    if dim == 1:
        b, ww = _duffy_bands_1d(apex_bary, 0.0, core)
    else:
        b, ww = _duffy_bands_2d(apex_bary, 0.0, core, tgl)
    bary.append(b)
    w.append(ww)
    return np.concatenate(bary), np.concatenate(w)


def _subdivided_nodes(dim, k):
    """Reference rule: the cell split uniformly into k^dim pieces, Gauss on each."""
    if dim == 1:
        edges = np.linspace(0.0, 1.0, k + 1)
        x = ((edges[:-1, None] + edges[1:, None]) / 2 + (edges[1:, None] - edges[:-1, None]) / 2 * _GAUSS3_X).ravel()
        w = np.tile(_GAUSS3_W / 2 / k, k)
        return np.stack([1 - x, x], axis=1), w
    base = _DUNAVANT4[:, :3]
    bw = _DUNAVANT4[:, 3]
    bary, w = [], []
    h = 1.0 / k
    for i in range(k):
        for j in range(k - i):
            # upward sub-triangle with corners (i,j),(i+1,j),(i,j+1) in (l1,l2)
            tris = [((i, j), (i + 1, j), (i, j + 1))]
            if i + j < k - 1:
                tris.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
            for tri in tris:
                corners = np.array([[1 - (a + b) * h, a * h, b * h] for a, b in tri])
                bary.append(base @ corners)
                w.append(bw / (k * k))
    return np.concatenate(bary), np.concatenate(w)


def _regular_nodes(dim):
    if dim == 1:
        x = 0.5 * (_GAUSS3_X + 1)
        return np.stack([1 - x, x], axis=1), _GAUSS3_W / 2
    return _DUNAVANT4[:, :3].copy(), _DUNAVANT4[:, 3].copy()


def build_quadrature(
    mesh: Mesh,
    singular_points=(),
    levels: int = 4,
    near_subdivision: int = 4,
) -> QuadratureRule:
    """Quadrature rule over ``mesh`` graded toward ``singular_points``.

    Cells whose closure contains a singular point get ``levels`` graded
    bands plus a Gauss core panel; cells sharing a vertex with those cells
    are subdivided ``near_subdivision`` times per direction. Weights are
    positive and sum to each cell's measure.
    """
    dim = mesh.dimension
    nc = mesh.num_cells
    sing = _as_points(singular_points, dim)
    kind = np.zeros(nc, dtype=np.int8)  # 0 regular, 1 near, 2 singular
    apex = {}
    for x0 in sing:
        for c, lam in _cells_containing(mesh, x0):
            kind[c] = 2
            apex.setdefault(c, lam)
    if apex:
        touched = np.zeros(mesh.num_vertices, dtype=bool)
        touched[mesh.cells[list(apex)].ravel()] = True
        near = np.any(touched[mesh.cells], axis=1) & (kind == 0)
        kind[near] = 1
    # cells not containing a singular point but close to one relative to their size
    for x0 in sing:
        P = mesh.vertices[mesh.cells]
        cen = P.mean(1)
        size = np.sqrt(((P - cen[:, None, :]) ** 2).sum(-1)).max(1)
        close = (np.linalg.norm(cen - x0, axis=1) < 2.5 * size) & (kind == 0)
        kind[close] = 1

    tgl = (_GL01_X, _GL01_W)
    pieces_bary, pieces_w, pieces_cell = [], [], []

    reg_b, reg_w = _regular_nodes(dim)
    reg_cells = np.nonzero(kind == 0)[0]
    if len(reg_cells):
        pieces_bary.append(np.tile(reg_b, (len(reg_cells), 1)))
        pieces_w.append(np.tile(reg_w, len(reg_cells)))
        pieces_cell.append(np.repeat(reg_cells, len(reg_w)))
    near_cells = np.nonzero(kind == 1)[0]
    if len(near_cells):
        nb, nw = _subdivided_nodes(dim, near_subdivision)
        pieces_bary.append(np.tile(nb, (len(near_cells), 1)))
        pieces_w.append(np.tile(nw, len(near_cells)))
        pieces_cell.append(np.repeat(near_cells, len(nw)))
    for c, lam in apex.items():
        sb, sw = _singular_cell_nodes(dim, lam, levels, tgl)
        pieces_bary.append(sb)
        pieces_w.append(sw)
        pieces_cell.append(np.full(len(sw), c))

    bary = np.concatenate(pieces_bary)
    wref = np.concatenate(pieces_w)
    cell = np.concatenate(pieces_cell)
    # normalise each cell's reference weights to sum exactly to one
    sums = np.bincount(cell, wref, minlength=nc)
    wref = wref / sums[cell]
    weights = wref * mesh.volumes[cell]
    points = np.einsum("qa,qad->qd", bary, mesh.vertices[mesh.cells[cell]])
    order = np.argsort(cell, kind="stable")
    return QuadratureRule(
        mesh,
        points[order],
        weights[order],
        cell[order],
        bary[order],
        tuple(tuple(s) for s in sing),
        levels,
    )


def mesh_integral(
    mesh: Mesh,
    func: Callable[[np.ndarray], np.ndarray],
    singular_points=(),
    max_levels: int = MAX_LEVELS,
) -> LevelResult:
    """Integrate ``func`` over the mesh domain, deciding integrability.

    Cells away from the singular points contribute a fixed base value; the
    cells containing a singular point are refined level by level with the
    same decision rule as :func:`ball_integral`.
    """
    dim = mesh.dimension
    sing = _as_points(singular_points, dim)
    base_rule = build_quadrature(mesh, sing, levels=0)
    apex_cells = {}
    for x0 in sing:
        for c, lam in _cells_containing(mesh, x0):
            apex_cells.setdefault(c, lam)
    regular = ~np.isin(base_rule.cell, list(apex_cells))
    base = float(np.dot(base_rule.weights[regular], func(base_rule.points[regular])))
    if not apex_cells:
        return LevelResult(base, bool(np.isfinite(base)), 0, [])
    tgl = (_GL01_X, _GL01_W)

    def band(level):
        total = 0.0
        lo, hi = GRADING ** (-level), GRADING ** (-(level - 1))
        for c, lam in apex_cells.items():
            if dim == 1:
                b, w = _duffy_bands_1d(lam, lo, hi)
            else:
                b, w = _duffy_bands_2d(lam, lo, hi, tgl)
            if len(w) == 0:
                continue
            pts = b @ mesh.vertices[mesh.cells[c]]
            total += mesh.volumes[c] * np.dot(w, func(pts))
        return total

    return refine_levels(band, base=base, max_levels=max_levels)
