"""Simplicial meshes (segments in 1D, triangles in 2D) and P1 fields on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from matplotlib.path import Path
from scipy.spatial import Delaunay

__all__ = [
    "Interval",
    "Disk",
    "Polygon",
    "Mesh",
    "FemFunction",
    "build_mesh",
    "domain_from_dict",
]


@dataclass(frozen=True)
class Interval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"degenerate interval ({self.a}, {self.b})")

    @property
    def dimension(self) -> int:
        return 1

    @property
    def diameter(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class Disk:
    radius: float = 1.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    @property
    def dimension(self) -> int:
        return 2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three 2D vertices")
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if abs(area) < 1e-14:
            raise ValueError("degenerate polygon (zero area)")

    @property
    def dimension(self) -> int:
        return 2

    @property
    def diameter(self) -> float:
        v = np.asarray(self.vertices, dtype=float)
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())


def domain_from_dict(spec: dict):
    """Build a domain from its JSON form, e.g. ``{"kind": "disk", "radius": 1}``."""
    kind = spec["kind"]
    if kind == "interval":
        return Interval(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
    if kind == "disk":
        return Disk(float(spec.get("radius", 1.0)), tuple(spec.get("center", (0.0, 0.0))))
    if kind == "polygon":
        return Polygon(tuple(tuple(map(float, v)) for v in spec["vertices"]))
    raise ValueError(f"unknown domain kind {kind!r}")


@dataclass(eq=False)
class Mesh:
    """Conforming simplicial mesh.

    ``vertices`` has shape (nv, dim) and ``cells`` shape (nc, dim + 1).
    Geometric quantities (cell volumes, basis gradients, lumped mass) are
    computed once at construction.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices[:, None]
        self.cells = np.asarray(self.cells, dtype=np.int64)
        dim = self.vertices.shape[1]
        if dim not in (1, 2) or self.cells.shape[1] != dim + 1:
            raise ValueError("only 1D segment and 2D triangle meshes are supported")
        self._orient()
        self.volumes, self.grad_basis = _cell_geometry(self.vertices, self.cells)
        if np.any(self.volumes <= 0):
            raise ValueError("mesh has degenerate cells")
        if self.boundary is None:
            self.boundary = topological_boundary(self.cells, dim)
        self.boundary = np.unique(np.asarray(self.boundary, dtype=np.int64))
        self.interior = np.setdiff1d(np.arange(self.num_vertices), self.boundary)
        mass = np.zeros(self.num_vertices)
        np.add.at(mass, self.cells.ravel(), np.repeat(self.volumes / (dim + 1), dim + 1))
        self.lumped_mass = mass

    def _orient(self):
        if self.dimension == 2:
            p = self.vertices[self.cells]
            det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
                p[:, 2, 0] - p[:, 0, 0]
            ) * (p[:, 1, 1] - p[:, 0, 1])
            flip = det < 0
            self.cells[flip] = self.cells[flip][:, [0, 2, 1]]
        else:
            p = self.vertices[self.cells, 0]
            flip = p[:, 1] < p[:, 0]
            self.cells[flip] = self.cells[flip][:, ::-1]

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def measure(self) -> float:
        return float(self.volumes.sum())

    @property
    def diameter(self) -> float:
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        return float(np.linalg.norm(hi - lo))

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """Cellwise constant gradient of the P1 field with nodal ``values``."""
        return np.einsum("ca,cad->cd", values[self.cells], self.grad_basis)

    def boundary_distance(self) -> np.ndarray:
        """Distance of every vertex to the nearest boundary vertex."""
        from scipy.spatial import cKDTree

        tree = cKDTree(self.vertices[self.boundary])
        d, _ = tree.query(self.vertices)
        return d

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees (2D only)."""
        if self.dimension != 2:
            raise ValueError("angles are defined for triangle meshes")
        p = self.vertices[self.cells]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cosang = (a * b).sum(1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
        return float(np.min(angles))

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "vertices": self.vertices.tolist(),
            "cells": self.cells.tolist(),
            "boundary": self.boundary.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        vertices = np.asarray(data["vertices"], dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        if vertices.shape[1] != int(data["dimension"]):
            raise ValueError("vertex coordinates do not match the declared dimension")
        return cls(vertices, np.asarray(data["cells"]), np.asarray(data["boundary"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _cell_geometry(vertices, cells):
    p = vertices[cells]
    dim = vertices.shape[1]
    if dim == 1:
        h = p[:, 1, 0] - p[:, 0, 0]
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        return h, grads
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    # rows of inv(B)^T give gradients of lambda_1, lambda_2
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -g1 - g2
    return area, np.stack([g0, g1, g2], axis=1)


def topological_boundary(cells: np.ndarray, dim: int) -> np.ndarray:
    """Vertices on facets that belong to exactly one cell."""
    if dim == 1:
        ids, counts = np.unique(cells.ravel(), return_counts=True)
        return ids[counts == 1]
    edges = np.sort(np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1].ravel())


def build_mesh(domain, resolution: int) -> Mesh:
    """Mesh an interval, a disk or a polygon.

    ``resolution`` is the number of cells per unit direction: segments of the
    interval, rings of the disk, or subdivisions along the longest side of
    the polygon's bounding box.
    """
    if int(resolution) != resolution or resolution < 2:
        raise ValueError("resolution must be an integer >= 2")
    resolution = int(resolution)
    if isinstance(domain, dict):
        domain = domain_from_dict(domain)
    if isinstance(domain, Interval):
        x = np.linspace(domain.a, domain.b, resolution + 1)
        cells = np.stack([np.arange(resolution), np.arange(1, resolution + 1)], axis=1)
        return Mesh(x[:, None], cells, np.array([0, resolution]))
    if isinstance(domain, Disk):
        return _disk_mesh(domain, resolution)
    if isinstance(domain, Polygon):
        return _polygon_mesh(domain, resolution)
    raise TypeError(f"unsupported domain {domain!r}")


def _disk_mesh(disk: Disk, rings: int) -> Mesh:
    pts = [np.zeros((1, 2))]
    for k in range(1, rings + 1):
        # 6k nodes per ring, staggered between rings, gives near-equilateral cells
        theta = 2 * np.pi * (np.arange(6 * k) + 0.5 * (k % 2)) / (6 * k)
        r = disk.radius * k / rings
        pts.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
    pts = np.concatenate(pts) + np.asarray(disk.center, dtype=float)
    tri = Delaunay(pts)
    return Mesh(pts, tri.simplices)


def _is_axis_rectangle(v: np.ndarray) -> bool:
    if len(v) != 4:
        return False
    xs, ys = np.unique(v[:, 0]), np.unique(v[:, 1])
    return len(xs) == 2 and len(ys) == 2


def _polygon_mesh(poly: Polygon, resolution: int) -> Mesh:
    v = np.asarray(poly.vertices, dtype=float)
    if _is_axis_rectangle(v):
        (x0, x1), (y0, y1) = np.unique(v[:, 0]), np.unique(v[:, 1])
        nx = ny = resolution
        xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        cells = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
        return Mesh(pts, cells)
    extent = (v.max(0) - v.min(0)).max()
    h = extent / resolution
    boundary_pts = []
    for p0, p1 in zip(v, np.roll(v, -1, axis=0)):
        k = max(1, int(np.ceil(np.linalg.norm(p1 - p0) / h)))
        t = np.arange(k)[:, None] / k
        boundary_pts.append(p0 + t * (p1 - p0))
    boundary_pts = np.concatenate(boundary_pts)
    path = Path(v)
    lo, hi = v.min(0), v.max(0)
    gx = np.arange(lo[0] + h, hi[0], h)
    gy = np.arange(lo[1] + h, hi[1], h)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    grid = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = path.contains_points(grid)
    grid = grid[inside]
    if len(grid):
        seg_d = _distance_to_segments(grid, v)
        grid = grid[seg_d > 0.5 * h]
    pts = np.concatenate([boundary_pts, grid])
    tri = Delaunay(pts)
    centroids = pts[tri.simplices].mean(1)
    keep = path.contains_points(centroids)
    cells = tri.simplices[keep]
    used = np.unique(cells)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(pts[used], remap[cells])


def _distance_to_segments(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    best = np.full(len(x), np.inf)
    for p0, p1 in zip(v, np.roll(v, -1, axis=0)):
        e = p1 - p0
        t = np.clip(((x - p0) @ e) / (e @ e), 0.0, 1.0)
        d = np.linalg.norm(x - (p0 + t[:, None] * e), axis=1)
        best = np.minimum(best, d)
    return best


@dataclass(eq=False)
class FemFunction:
    """Continuous piecewise-linear field given by its nodal values."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise ValueError(
                f"expected {self.mesh.num_vertices} nodal values, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FemFunction":
        return cls(mesh, np.zeros(mesh.num_vertices))

    @classmethod
    def interpolate(cls, mesh: Mesh, func, zero_trace: bool = False) -> "FemFunction":
        x = mesh.vertices
        vals = np.asarray(func(x[:, 0]) if mesh.dimension == 1 else func(x), dtype=float)
        vals = np.broadcast_to(vals, (mesh.num_vertices,)).copy()
        if zero_trace:
            vals[mesh.boundary] = 0.0
        return cls(mesh, vals)

    @property
    def gradients(self) -> np.ndarray:
        return self.mesh.gradients(self.values)

    def is_zero_trace(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values[self.mesh.boundary]) <= tol))

    def copy(self) -> "FemFunction":
        return FemFunction(self.mesh, self.values.copy())

    def max_norm(self) -> float:
        return float(np.abs(self.values).max())

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Point evaluation (P1 interpolation); points outside the mesh raise."""
        return p1_interpolator(self.mesh, self.values)(points)


def p1_interpolator(mesh: Mesh, values: np.ndarray):
    """Return a callable evaluating the P1 interpolant of nodal ``values``."""
    if mesh.dimension == 1:
        order = np.argsort(mesh.vertices[:, 0])
        xs, ys = mesh.vertices[order, 0], values[order]

        def interp1(points):
            pts = np.asarray(points, dtype=float).reshape(-1)
            if np.any(pts < xs[0] - 1e-14) or np.any(pts > xs[-1] + 1e-14):
                raise ValueError("evaluation point outside the mesh")
            return np.interp(pts, xs, ys)

        return interp1

    from matplotlib.tri import LinearTriInterpolator, Triangulation

    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.cells)
    interp = LinearTriInterpolator(tri, values)

    def interp2(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = interp(pts[:, 0], pts[:, 1])
        if np.ma.is_masked(out):
            raise ValueError("evaluation point outside the mesh")
        return np.asarray(out, dtype=float)

    return interp2


def lattice_points(mesh: Mesh, spacing: float) -> Sequence:
    """Regular lattice of points inside the mesh bounding box."""
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    axes = [np.arange(a, b + 0.5 * spacing, spacing) for a, b in zip(lo, hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)
