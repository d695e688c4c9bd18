"""Sparse direct solves: generic LU and the velocity-pressure saddle point.

Desk-scale meshes make monolithic sparse LU the simplest reliable route;
the saddle point is regularized by pinning one pressure dof and the returned
pressure is shifted to zero mean (it is only defined up to a constant when
the velocity is Dirichlet on the whole boundary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import apply_dirichlet

RESIDUAL_RTOL = 1e-10


class SingularMatrixError(RuntimeError):
    pass


def solve_sparse(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve matrix @ x = rhs by sparse LU with partial pivoting."""
    n, m = matrix.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {matrix.shape}")
    if rhs.shape != (n,):
        raise ValueError(f"rhs length {rhs.shape} does not match matrix size {n}")
    try:
        lu = splu(matrix.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        diag = np.abs(lu.U.diagonal())
        raise SingularMatrixError(f"singular matrix: smallest pivot {diag.min():.3e} at index {int(diag.argmin())}")
    anorm = np.abs(matrix).sum(axis=1).max() if matrix.nnz else 0.0
    resid = np.linalg.norm(matrix @ x - rhs)
    bound = RESIDUAL_RTOL * (anorm * np.linalg.norm(x) + np.linalg.norm(rhs))
    if resid > max(bound, 1e-300):
        diag = np.abs(lu.U.diagonal())
        raise SingularMatrixError(
            f"solve residual {resid:.3e} exceeds {bound:.3e}; smallest pivot "
            f"{diag.min():.3e} at index {int(diag.argmin())}")
    return x


@dataclass
class BlockSystem:
    """Monolithic form of [[K, grad_coeff*B^T], [B, 0]] with its rhs.

    K couples velocity dofs, B is the (pressure x velocity) divergence
    operator, and grad_coeff carries the implicit-level weight on the
    pressure gradient.
    """

    velocity_block: sp.spmatrix
    divergence: sp.spmatrix
    grad_coeff: float
    rhs: np.ndarray
    matrix: sp.csr_matrix

    @property
    def n_velocity(self) -> int:
        return self.velocity_block.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.divergence.shape[0]


def build_block_system(velocity_block: sp.spmatrix, divergence: sp.spmatrix,
                       grad_coeff: float, rhs_velocity: np.ndarray,
                       rhs_pressure: np.ndarray | None = None) -> BlockSystem:
    nu = velocity_block.shape[0]
    npres = divergence.shape[0]
    if divergence.shape[1] != nu:
        raise ValueError("divergence block does not match velocity dofs")
    matrix = sp.bmat([[velocity_block, grad_coeff * divergence.T],
                      [divergence, None]], format="csr")
    rhs = np.concatenate([rhs_velocity,
                          np.zeros(npres) if rhs_pressure is None else rhs_pressure])
    return BlockSystem(velocity_block=velocity_block, divergence=divergence,
                       grad_coeff=grad_coeff, rhs=rhs, matrix=matrix)


def solve_saddle_point(system: BlockSystem, gauge_weights: np.ndarray,
                       bc_dofs=(), bc_values=(), pin_dof: int = 0):
    """Solve for (velocity, pressure) with Dirichlet velocity constraints.

    gauge_weights[i] = integral of the i-th pressure basis function; the
    returned pressure has zero weighted mean. One pressure dof is pinned to
    make the matrix nonsingular before the mean shift.
    """
    nu = system.n_velocity
    dofs = np.concatenate([np.asarray(bc_dofs, dtype=np.int64),
                           [nu + pin_dof]])
    values = np.concatenate([np.asarray(bc_values, dtype=float), [0.0]])
    a, b = apply_dirichlet(system.matrix, system.rhs, dofs, values)
    x = solve_sparse(a, b)
    u, p = x[:nu], x[nu:]
    p = p - (gauge_weights @ p) / gauge_weights.sum()
    return u, p
