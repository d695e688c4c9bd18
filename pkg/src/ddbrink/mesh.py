"""Structured triangulations of axis-aligned rectangles.

Cells are split along the lower-left to upper-right diagonal so meshes are
deterministic; boundary edges carry wall tags used for boundary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class BoundaryTag(Enum):
    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"
    TOP = "top"


@dataclass(frozen=True)
class TriangleMesh:
    """Conforming triangulation of a rectangle.

    vertices: (nv, 2) coordinates.
    triangles: (nt, 3) vertex indices, counterclockwise.
    boundary_edges: (nb, 2) vertex index pairs lying on the rectangle perimeter.
    boundary_tags: (nb,) BoundaryTag per boundary edge.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    width: float
    height: float
    _edge_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def edges(self):
        """Unique edges as a dict {(vmin, vmax): edge_index} plus the (ne, 2) array."""
        if "map" not in self._edge_cache:
            pairs = {}
            order = []
            for tri in self.triangles:
                for k in range(3):
                    a, b = int(tri[k]), int(tri[(k + 1) % 3])
                    key = (a, b) if a < b else (b, a)
                    if key not in pairs:
                        pairs[key] = len(order)
                        order.append(key)
            self._edge_cache["map"] = pairs
            self._edge_cache["array"] = np.array(order, dtype=np.int64)
        return self._edge_cache["map"], self._edge_cache["array"]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def build_structured_rect(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> TriangleMesh:
    """Triangulate a width x height rectangle into 2*nx*ny triangles.

    Vertices form an (nx+1) x (ny+1) lattice indexed row-major by y-level;
    each cell is split along its lower-left to upper-right diagonal.
    Corner vertices belong to the vertical-wall (left/right) tag.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {width} x {height}")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    xg, yg = np.meshgrid(xs, ys)
    vertices = np.column_stack([xg.ravel(), yg.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris[k] = (v00, v10, v11)
            tris[k + 1] = (v00, v11, v01)
            k += 2

    bedges = []
    btags = []
    for j in range(ny):
        bedges.append((vid(0, j), vid(0, j + 1)))
        btags.append(BoundaryTag.LEFT)
        bedges.append((vid(nx, j), vid(nx, j + 1)))
        btags.append(BoundaryTag.RIGHT)
    for i in range(nx):
        bedges.append((vid(i, 0), vid(i + 1, 0)))
        btags.append(BoundaryTag.BOTTOM)
        bedges.append((vid(i, ny), vid(i + 1, ny)))
        btags.append(BoundaryTag.TOP)

    return TriangleMesh(vertices=vertices, triangles=tris,
                        boundary_edges=np.array(bedges, dtype=np.int64),
                        boundary_tags=tuple(btags), width=float(width), height=float(height))


def mesh_size(mesh: TriangleMesh) -> float:
    """Maximum edge length over all triangles."""
    if mesh.num_triangles == 0:
        raise ValueError("empty mesh")
    p = mesh.vertices[mesh.triangles]
    h = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        h = max(h, float(np.max(np.linalg.norm(p[:, a] - p[:, b], axis=1))))
    return h


def boundary_vertices_by_tag(mesh: TriangleMesh) -> dict:
    """Vertex index sets per tag; corner vertices go to the vertical-wall tags only."""
    sets = {tag: set() for tag in BoundaryTag}
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        sets[tag].update((int(a), int(b)))
    vertical = sets[BoundaryTag.LEFT] | sets[BoundaryTag.RIGHT]
    sets[BoundaryTag.BOTTOM] -= vertical
    sets[BoundaryTag.TOP] -= vertical
    return sets


def write_vtk(path, mesh: TriangleMesh, point_data: dict | None = None) -> None:
    """Dump the mesh (and optional vertex fields) as legacy ASCII VTK.

    point_data maps names to per-vertex arrays: shape (nv,) written as SCALARS,
    shape (nv, 2) padded with z=0 and written as VECTORS.
    """
    lines = ["# vtk DataFile Version 2.0", "ddbrink mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.num_vertices} double"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    nt = mesh.num_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in values)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
