"""Sparse operator and load assembly for the mixed weak form.

All element loops are vectorized over triangles; the default quadrature is
exact to degree 5, enough for P2*P2*grad(P2) convection integrands, so the
skew form is antisymmetric up to roundoff and not just up to quadrature.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fespace import FiniteElementSpace, QuadratureRule, field_values

DEFAULT_QUAD = QuadratureRule.for_strength(5)


def _scatter(rows_dofs, cols_dofs, local, shape) -> sp.csr_matrix:
    """Accumulate (nt, nr, nc) local blocks into a CSR matrix."""
    nt, nr, nc = local.shape
    rows = np.repeat(rows_dofs, nc, axis=1).ravel()
    cols = np.tile(cols_dofs, (1, nr)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _vector_expand(local: np.ndarray) -> np.ndarray:
    """Blow up scalar local blocks to interleaved 2-vector blocks (no coupling)."""
    nt, n, m = local.shape
    out = np.zeros((nt, 2 * n, 2 * m))
    out[:, 0::2, 0::2] = local
    out[:, 1::2, 1::2] = local
    return out


def assemble_mass(space: FiniteElementSpace, quad: QuadratureRule = DEFAULT_QUAD) -> sp.csr_matrix:
    """M_ij = integral of phi_j phi_i; SPD."""
    vals, _ = space.basis(quad)
    det, _ = space.geometry()
    ref = np.einsum("q,qi,qj->ij", quad.weights, vals, vals)
    local = ref[None, :, :] * det[:, None, None]
    if space.num_components == 2:
        local = _vector_expand(local)
    n = space.dof_count
    return _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))


def assemble_stiffness(space: FiniteElementSpace, quad: QuadratureRule = DEFAULT_QUAD) -> sp.csr_matrix:
    """A_ij = integral of grad(phi_j) . grad(phi_i); symmetric PSD with constants in the nullspace."""
    _, pg = space.basis(quad)
    det, _ = space.geometry()
    local = np.einsum("q,tqie,tqje,t->tij", quad.weights, pg, pg, det)
    if space.num_components == 2:
        local = _vector_expand(local)
    n = space.dof_count
    return _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))


def assemble_divergence(vel_space: FiniteElementSpace, pres_space: FiniteElementSpace,
                        quad: QuadratureRule = DEFAULT_QUAD) -> sp.csr_matrix:
    """B_ij = integral of q_i div(phi_j), shape (pressure dofs, velocity dofs)."""
    if vel_space.mesh is not pres_space.mesh:
        raise ValueError("velocity and pressure spaces must share a mesh")
    if vel_space.num_components != 2 or pres_space.num_components != 1:
        raise ValueError("expected vector velocity and scalar pressure spaces")
    pvals, _ = pres_space.basis(quad)
    _, vg = vel_space.basis(quad)
    det, _ = vel_space.geometry()
    nt = vel_space.mesh.num_triangles
    nv = vel_space.cell_nodes.shape[1]
    local = np.zeros((nt, pvals.shape[1], 2 * nv))
    for c in range(2):
        local[:, :, c::2] = np.einsum("q,qi,tqj,t->tij", quad.weights, pvals, vg[:, :, :, c], det)
    return _scatter(pres_space.cell_nodes, vel_space.cell_dofs, local,
                    (pres_space.dof_count, vel_space.dof_count))


def assemble_convection_skew(space: FiniteElementSpace, wind: np.ndarray,
                             wind_space: FiniteElementSpace | None = None,
                             quad: QuadratureRule = DEFAULT_QUAD) -> sp.csr_matrix:
    """Skew-symmetrized convection N(w)_ij = 1/2 (w.grad(phi_j), phi_i) - 1/2 (w.grad(phi_i), phi_j).

    The two-term integrand is formed element by element, so N is antisymmetric
    for any quadrature. `space` is the transported field's space (scalar for the
    temperature/concentration forms, vector for momentum); `wind` lives in
    `wind_space` (defaults to `space`, which must then be the velocity space).
    """
    if wind_space is None:
        wind_space = space
    if wind_space.num_components != 2:
        raise ValueError("wind must live in a 2-vector space")
    if wind_space.mesh is not space.mesh:
        raise ValueError("wind and target spaces must share a mesh")
    w_q = field_values(wind_space, wind, quad)  # (nt, nq, 2)
    vals, pg = space.basis(quad)  # components share the scalar nodal basis
    det, _ = space.geometry()
    conv = np.einsum("q,tqd,tqjd,qi,t->tij", quad.weights, w_q, pg, vals, det)
    local = 0.5 * (conv - conv.transpose(0, 2, 1))
    if space.num_components == 2:
        local = _vector_expand(local)
    n = space.dof_count
    return _scatter(space.cell_dofs, space.cell_dofs, local, (n, n))


def assemble_buoyancy(vel_space: FiniteElementSpace, scalar_space: FiniteElementSpace,
                      g, coefficient: float, field: np.ndarray,
                      quad: QuadratureRule = DEFAULT_QUAD) -> np.ndarray:
    """Load vector r_i = coefficient * integral of (g . phi_i) * field."""
    if vel_space.mesh is not scalar_space.mesh:
        raise ValueError("spaces must share a mesh")
    f_q = field_values(scalar_space, field, quad)  # (nt, nq)
    vals, _ = vel_space.basis(quad)
    det, _ = vel_space.geometry()
    node_loc = np.einsum("q,tq,qi,t->ti", quad.weights, f_q, vals, det)
    r = np.zeros(vel_space.dof_count)
    g = np.asarray(g, dtype=float)
    for c in range(2):
        np.add.at(r, vel_space.cell_dofs[:, c::2].ravel(),
                  (coefficient * g[c]) * node_loc.ravel())
    return r


def assemble_load(space: FiniteElementSpace, f, quad: QuadratureRule = DEFAULT_QUAD) -> np.ndarray:
    """Load vector b_i = integral of f phi_i for an analytic field f(x, y)."""
    pts = space.physical_points(quad)
    fv = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    det, _ = space.geometry()
    vals, _ = space.basis(quad)
    b = np.zeros(space.dof_count)
    if space.num_components == 1:
        local = np.einsum("q,tq,qi,t->ti", quad.weights, fv, vals, det)
        np.add.at(b, space.cell_nodes.ravel(), local.ravel())
    else:
        for c in range(2):
            local = np.einsum("q,tq,qi,t->ti", quad.weights, fv[..., c], vals, det)
            np.add.at(b, space.cell_dofs[:, c::2].ravel(), local.ravel())
    return b


def apply_dirichlet(matrix: sp.spmatrix, rhs: np.ndarray, dofs, values):
    """Impose matrix[d] = e_d, rhs[d] = value by symmetric row/column elimination.

    Eliminated columns are folded into the rhs so symmetry and conditioning are
    preserved. Repeating a constraint with the same value is idempotent;
    conflicting values raise.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    n = matrix.shape[0]
    if len(dofs) and (dofs.min() < 0 or dofs.max() >= n):
        raise IndexError("constrained dof out of range")

    uniq, first = np.unique(dofs, return_index=True)
    if len(uniq) != len(dofs):
        per_dof = {}
        for d, v in zip(dofs, values):
            if d in per_dof and per_dof[d] != v:
                raise ValueError(f"conflicting Dirichlet values for dof {d}: {per_dof[d]} vs {v}")
            per_dof[d] = v
        dofs, values = uniq, values[first]

    x_d = np.zeros(n)
    x_d[dofs] = values
    keep = np.ones(n)
    keep[dofs] = 0.0
    matrix = matrix.tocsr()
    b = keep * (rhs - matrix @ x_d) + x_d
    keep_d = sp.diags(keep)
    pin_d = sp.diags(1.0 - keep)
    a = (keep_d @ matrix @ keep_d + pin_d).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a, b
