"""Assembly of the weighted p-Laplace energy, residual and Jacobian on P1 elements.

The gradient of a P1 field is constant on each cell, so the weight enters
only through the cell integrals ``W_c = ∫_c w dx``. The load ``∫ g φ_i`` is
lumped to ``m_i g_i`` with ``m_i`` the lumped mass, which keeps the discrete
maximum principle for nonnegative data on the meshes used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import FemFunction, Mesh
from .quadrature import QuadratureRule, build_quadrature
from .weights import WeightSpec, levels_for_exponent

__all__ = [
    "Discretization",
    "discretize",
    "cell_weights",
    "load_vector",
    "energy",
    "assemble_residual",
    "assemble_jacobian",
    "stiffness_matrix",
]


def cell_weights(w: WeightSpec, quad: QuadratureRule) -> np.ndarray:
    """Per-cell integrals of the weight."""
    return quad.cell_integrals(w.eval_power(quad.points, 1.0))


@dataclass(eq=False)
class Discretization:
    """Mesh, weight, quadrature and the derived per-cell weight integrals."""

    mesh: Mesh
    weight: WeightSpec
    quad: QuadratureRule
    cell_w: np.ndarray
    eps: float

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior


def discretize(mesh: Mesh, w: WeightSpec, eps_scale: float = 1e-8, levels=None) -> Discretization:
    """Build the quadrature for ``w`` on ``mesh`` and cache the cell weights.

    ``eps`` (the gradient regularisation used by the Jacobian) is
    ``eps_scale`` times the mesh diameter.
    """
    if levels is None:
        levels = levels_for_exponent(w.singular_exponent(1.0), mesh.dimension) if w.singular_points else 0
    quad = build_quadrature(mesh, w.singular_points, levels=levels)
    return Discretization(mesh, w, quad, cell_weights(w, quad), eps_scale * mesh.diameter)


def load_vector(mesh: Mesh, g: np.ndarray) -> np.ndarray:
    """Lumped load ``m_i g_i``."""
    return mesh.lumped_mass * np.asarray(g, dtype=float)


def _check_p(p):
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")


def _flux_factor(G, p):
    # |G|^{p-2}, with the convention |G|^{p-2} G = 0 at G = 0
    mag = np.sqrt((G * G).sum(1))
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(mag > 0, mag ** (p - 2.0), 0.0)
    return mag, f


def energy(u: np.ndarray, disc: Discretization, p: float, load: np.ndarray) -> float:
    """Discrete energy ``(1/p) Σ_c W_c |∇u|_c^p - load·u``."""
    _check_p(p)
    G = disc.mesh.gradients(u)
    mag = np.sqrt((G * G).sum(1))
    return float(np.dot(disc.cell_w, mag**p) / p - np.dot(load, u))


def assemble_residual(u, disc: Discretization, p: float, load: np.ndarray) -> np.ndarray:
    """Nodal residual ``Σ_c W_c |∇u|^{p-2} ∇u·∇φ_i - load_i`` with zero boundary rows.

    ``u`` may be a :class:`FemFunction` or an array of nodal values; ``load``
    is the already-integrated load vector (see :func:`load_vector`).
    """
    _check_p(p)
    vals = u.values if isinstance(u, FemFunction) else np.asarray(u, dtype=float)
    mesh = disc.mesh
    G = mesh.gradients(vals)
    _, fac = _flux_factor(G, p)
    flux = (disc.cell_w * fac)[:, None] * G
    contrib = np.einsum("cad,cd->ca", mesh.grad_basis, flux)
    R = np.bincount(mesh.cells.ravel(), contrib.ravel(), minlength=mesh.num_vertices)
    R -= load
    R[mesh.boundary] = 0.0
    return R


def stiffness_matrix(disc: Discretization, coef: np.ndarray = None) -> sp.csr_matrix:
    """Weighted stiffness matrix ``Σ_c coef_c W_c ∇φ_i·∇φ_j`` (all nodes)."""
    mesh = disc.mesh
    c = disc.cell_w if coef is None else disc.cell_w * coef
    B = mesh.grad_basis
    local = c[:, None, None] * np.einsum("cid,cjd->cij", B, B)
    return _scatter(mesh, local)


def _scatter(mesh, local):
    k = mesh.cells.shape[1]
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    n = mesh.num_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_jacobian(u, disc: Discretization, p: float):
    """Jacobian of :func:`assemble_residual` with respect to all nodal values.

    Gradient magnitudes are regularised as ``sqrt(|∇u|^2 + eps^2)`` so the
    matrix stays finite for p < 2 and nonzero for p > 2 at flat gradients;
    for p = 2 it is the weighted stiffness matrix exactly. Returns
    ``(matrix, note)``; rows and columns of boundary nodes are left in, the
    caller restricts to the interior.
    """
    _check_p(p)
    vals = u.values if isinstance(u, FemFunction) else np.asarray(u, dtype=float)
    mesh = disc.mesh
    if p == 2.0:
        return stiffness_matrix(disc), "p = 2: weighted stiffness matrix, no regularisation"
    G = mesh.gradients(vals)
    mag2 = (G * G).sum(1) + disc.eps**2
    a = mag2 ** ((p - 2.0) / 2.0)
    b = (p - 2.0) * mag2 ** ((p - 4.0) / 2.0)
    B = mesh.grad_basis
    BG = np.einsum("cid,cd->ci", B, G)
    local = disc.cell_w[:, None, None] * (
        a[:, None, None] * np.einsum("cid,cjd->cij", B, B) + b[:, None, None] * BG[:, :, None] * BG[:, None, :]
    )
    note = f"|grad u| regularised as sqrt(|grad u|^2 + eps^2), eps = {disc.eps:.3g}"
    return _scatter(mesh, local), note
