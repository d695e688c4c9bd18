"""Lagrange P1/P2 spaces on triangle meshes: dof maps, quadrature, basis evaluation.

Analytic fields passed to interpolation and load assembly are numpy-vectorized
callables f(x, y) taking coordinate arrays; vector fields return shape (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import BoundaryTag, TriangleMesh

SCALAR = "scalar"
VECTOR2 = "vector2"

# symmetric rules on the reference triangle (0,0)-(1,0)-(0,1); weights sum to 1/2
_S15 = np.sqrt(15.0)
_TABULATED = {
    1: (np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    2: (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.full(3, 1 / 6)),
    4: (np.array([
        [0.445948490915965, 0.445948490915965],
        [0.108103018168070, 0.445948490915965],
        [0.445948490915965, 0.108103018168070],
        [0.091576213509771, 0.091576213509771],
        [0.816847572980459, 0.091576213509771],
        [0.091576213509771, 0.816847572980459]]),
        0.5 * np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)),
    5: (np.array([
        [1 / 3, 1 / 3],
        [(6 - _S15) / 21, (6 - _S15) / 21],
        [(9 + 2 * _S15) / 21, (6 - _S15) / 21],
        [(6 - _S15) / 21, (9 + 2 * _S15) / 21],
        [(6 + _S15) / 21, (6 + _S15) / 21],
        [(9 - 2 * _S15) / 21, (6 + _S15) / 21],
        [(6 + _S15) / 21, (9 - 2 * _S15) / 21]]),
        0.5 * np.array([9 / 40] + [(155 - _S15) / 1200] * 3 + [(155 + _S15) / 1200] * 3)),
}


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates with weights summing to the reference area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    strength: int

    @classmethod
    def for_strength(cls, strength: int) -> "QuadratureRule":
        for q in sorted(_TABULATED):
            if q >= strength:
                pts, w = _TABULATED[q]
                return cls(points=pts, weights=w, strength=q)
        return _conical_rule(strength)


def _conical_rule(strength: int) -> QuadratureRule:
    # Duffy map x = xi*(1-eta), y = eta; the (1-eta) Jacobian is absorbed
    # into a Gauss-Jacobi rule, so n points give strength 2n-1.
    n = (strength + 2) // 2
    xg, wg = roots_legendre(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xi, eta = (xg + 1) / 2, (xj + 1) / 2
    pts = np.empty((n * n, 2))
    w = np.empty(n * n)
    k = 0
    for j in range(n):
        for i in range(n):
            pts[k] = (xi[i] * (1 - eta[j]), eta[j])
            w[k] = (wg[i] / 2) * (wj[j] / 4)
            k += 1
    return QuadratureRule(points=pts, weights=w, strength=2 * n - 1)


def ref_basis(degree: int, points: np.ndarray):
    """Reference-triangle basis values (nq, nloc) and gradients (nq, nloc, 2)."""
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        vals = lam
        grads = np.broadcast_to(dlam, (len(points), 3, 2)).copy()
    elif degree == 2:
        nq = len(points)
        vals = np.empty((nq, 6))
        grads = np.empty((nq, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
            grads[:, i] = (4 * lam[:, i] - 1)[:, None] * dlam[i]
        # local nodes 3,4,5 sit on the edge opposite vertex 0,1,2
        for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
            vals[:, 3 + k] = 4 * lam[:, i] * lam[:, j]
            grads[:, 3 + k] = 4 * (lam[:, j, None] * dlam[i] + lam[:, i, None] * dlam[j])
    else:
        raise ValueError(f"unsupported degree {degree}")
    return vals, grads


class FiniteElementSpace:
    """Lagrange space of degree 1 or 2, scalar or 2-vector valued.

    Vector dofs are interleaved: node n owns dofs (2n, 2n+1).
    Node numbering is vertices first, then (for P2) global edge midpoints,
    so it is deterministic given the mesh.
    """

    def __init__(self, mesh: TriangleMesh, degree: int, value_rank: str = SCALAR):
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree}")
        if value_rank not in (SCALAR, VECTOR2):
            raise ValueError(f"unsupported value_rank {value_rank!r}")
        self.mesh = mesh
        self.degree = degree
        self.value_rank = value_rank
        self.num_components = 1 if value_rank == SCALAR else 2

        nv = mesh.num_vertices
        if degree == 1:
            self.node_coords = mesh.vertices.copy()
            self.cell_nodes = mesh.triangles.copy()
        else:
            edge_map, edge_arr = mesh.edges()
            mid = 0.5 * (mesh.vertices[edge_arr[:, 0]] + mesh.vertices[edge_arr[:, 1]])
            self.node_coords = np.vstack([mesh.vertices, mid])
            cells = np.empty((mesh.num_triangles, 6), dtype=np.int64)
            cells[:, :3] = mesh.triangles
            for t, tri in enumerate(mesh.triangles):
                for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
                    a, b = int(tri[i]), int(tri[j])
                    cells[t, 3 + k] = nv + edge_map[(a, b) if a < b else (b, a)]
            self.cell_nodes = cells

        self.num_nodes = len(self.node_coords)
        self.dof_count = self.num_nodes * self.num_components
        if self.num_components == 1:
            self.cell_dofs = self.cell_nodes
            self.dof_coordinates = self.node_coords
        else:
            nloc = self.cell_nodes.shape[1]
            cd = np.empty((mesh.num_triangles, 2 * nloc), dtype=np.int64)
            cd[:, 0::2] = 2 * self.cell_nodes
            cd[:, 1::2] = 2 * self.cell_nodes + 1
            self.cell_dofs = cd
            self.dof_coordinates = np.repeat(self.node_coords, 2, axis=0)

        self._geom = None
        self._basis_cache = {}

    # -- geometry -------------------------------------------------------

    def geometry(self):
        """Per-triangle affine map data: (detJ, Jinv) with J = [v1-v0, v2-v0]."""
        if self._geom is None:
            p = self.mesh.vertices[self.mesh.triangles]
            j11 = p[:, 1, 0] - p[:, 0, 0]
            j21 = p[:, 1, 1] - p[:, 0, 1]
            j12 = p[:, 2, 0] - p[:, 0, 0]
            j22 = p[:, 2, 1] - p[:, 0, 1]
            det = j11 * j22 - j12 * j21
            if np.any(det <= 0):
                raise ValueError("degenerate or inverted triangle in mesh")
            inv = np.empty((len(det), 2, 2))
            inv[:, 0, 0] = j22 / det
            inv[:, 0, 1] = -j12 / det
            inv[:, 1, 0] = -j21 / det
            inv[:, 1, 1] = j11 / det
            self._geom = (det, inv)
        return self._geom

    def basis(self, quad: QuadratureRule):
        """Reference values (nq, nloc) and physical gradients (nt, nq, nloc, 2)."""
        key = id(quad)
        if key not in self._basis_cache:
            vals, rgrads = ref_basis(self.degree, quad.points)
            det, jinv = self.geometry()
            # dphi/dx = dphi/dxi . Jinv
            pgrads = np.einsum("qid,tde->tqie", rgrads, jinv)
            self._basis_cache[key] = (vals, pgrads)
        return self._basis_cache[key]

    def physical_points(self, quad: QuadratureRule) -> np.ndarray:
        """Quadrature point coordinates per triangle, shape (nt, nq, 2)."""
        p = self.mesh.vertices[self.mesh.triangles]
        lam = np.stack([1 - quad.points[:, 0] - quad.points[:, 1],
                        quad.points[:, 0], quad.points[:, 1]], axis=1)
        return np.einsum("ql,tld->tqd", lam, p)

    # -- boundary dofs ---------------------------------------------------

    def boundary_nodes_by_tag(self) -> dict:
        """Node sets per wall tag; corner nodes belong to the vertical walls."""
        sets = {tag: set() for tag in BoundaryTag}
        nv = self.mesh.num_vertices
        edge_map = self.mesh.edges()[0] if self.degree == 2 else None
        for (a, b), tag in zip(self.mesh.boundary_edges, self.mesh.boundary_tags):
            sets[tag].update((int(a), int(b)))
            if self.degree == 2:
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                sets[tag].add(nv + edge_map[key])
        vertical = sets[BoundaryTag.LEFT] | sets[BoundaryTag.RIGHT]
        sets[BoundaryTag.BOTTOM] -= vertical
        sets[BoundaryTag.TOP] -= vertical
        return sets

    def boundary_nodes(self, tags=None) -> np.ndarray:
        """Sorted nodes lying on boundary edges with the given tags (default: all)."""
        by_tag = {tag: set() for tag in BoundaryTag}
        nv = self.mesh.num_vertices
        edge_map = self.mesh.edges()[0] if self.degree == 2 else None
        for (a, b), tag in zip(self.mesh.boundary_edges, self.mesh.boundary_tags):
            by_tag[tag].update((int(a), int(b)))
            if self.degree == 2:
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                by_tag[tag].add(nv + edge_map[key])
        if tags is None:
            tags = list(BoundaryTag)
        out = set()
        for tag in tags:
            out |= by_tag[tag]
        return np.array(sorted(out), dtype=np.int64)

    def boundary_dofs(self, tags=None) -> np.ndarray:
        nodes = self.boundary_nodes(tags)
        if self.num_components == 1:
            return nodes
        return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def build_space(mesh: TriangleMesh, degree: int, value_rank: str = SCALAR) -> FiniteElementSpace:
    return FiniteElementSpace(mesh, degree, value_rank)


def interpolate(space: FiniteElementSpace, f) -> np.ndarray:
    """Nodal interpolant coefficients of an analytic field."""
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    vals = np.asarray(f(x, y), dtype=float)
    if space.num_components == 1:
        if vals.shape != x.shape:
            vals = np.broadcast_to(vals, x.shape)
        return vals.copy()
    if vals.shape != (len(x), 2):
        raise ValueError(f"vector field returned shape {vals.shape}, expected {(len(x), 2)}")
    return vals.reshape(-1)


def evaluate_basis(space: FiniteElementSpace, tri_index: int, point):
    """Scalar basis values and physical gradients at one reference point."""
    pts = np.asarray(point, dtype=float).reshape(1, 2)
    vals, rgrads = ref_basis(space.degree, pts)
    det, jinv = space.geometry()
    return vals[0], rgrads[0] @ jinv[tri_index]


def field_values(space: FiniteElementSpace, coeffs: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    """Field values at quadrature points: (nt, nq) scalar or (nt, nq, 2) vector."""
    vals, _ = space.basis(quad)
    if space.num_components == 1:
        return np.einsum("qi,ti->tq", vals, coeffs[space.cell_nodes])
    c = coeffs.reshape(-1, 2)[space.cell_nodes]
    return np.einsum("qi,tid->tqd", vals, c)


def field_gradients(space: FiniteElementSpace, coeffs: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    """Field gradients at quadrature points: (nt, nq, 2) scalar or (nt, nq, 2, 2) vector
    with entry [..., d, e] = d(component d)/dx_e."""
    _, pgrads = space.basis(quad)
    if space.num_components == 1:
        return np.einsum("tqie,ti->tqe", pgrads, coeffs[space.cell_nodes])
    c = coeffs.reshape(-1, 2)[space.cell_nodes]
    return np.einsum("tqie,tid->tqde", pgrads, c)
