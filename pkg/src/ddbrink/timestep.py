"""The curvature-stabilized second-order IMEX scheme family and its time loop.

Each step solves three mutually independent linear systems (temperature,
concentration, velocity-pressure): the convecting wind and the buoyancy fields
are extrapolated from the two previous levels, the implicit level carries the
over-weighted diffusion of the stabilization, and the resulting curvature
damping gives unconditional stability without losing second-order accuracy.
With theta=1 and zero stabilization the scheme is plain BDF2 with linear
extrapolation; theta=1/2 gives the Crank-Nicolson variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import norms
from .assembly import (apply_dirichlet, assemble_buoyancy, assemble_convection_skew,
                       assemble_divergence, assemble_load, assemble_mass,
                       assemble_stiffness)
from .fespace import SCALAR, VECTOR2, FiniteElementSpace, interpolate
from .mesh import TriangleMesh
from .solver import build_block_system, solve_saddle_point, solve_sparse

OVERFLOW_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, step: int, time: float, what: str):
        super().__init__(f"solution diverged at step {step} (t={time:.6g}): {what}")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SchemeParams:
    """Scheme and physics constants.

    theta in [1/2, 1]; eps/eps1/eps2 are the curvature stabilizations of the
    velocity, temperature and concentration equations (units of nu, gamma, dc).
    """

    theta: float
    dt: float
    nu: float
    gamma: float
    dc: float
    eps: float = 0.0
    eps1: float = 0.0
    eps2: float = 0.0
    da_inv: float = 0.0
    beta_t: float = 0.0
    beta_s: float = 0.0
    g: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [1/2, 1], got {self.theta}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name in ("nu", "gamma", "dc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("eps", "eps1", "eps2", "da_inv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


def d_coeffs(theta: float):
    """Second-difference time-derivative weights (theta+1/2, -2theta, theta-1/2)/dt implied."""
    return norms.d_stencil(theta)


def f_coeffs(theta: float, delta: float, mu: float):
    """Diffusion-level weights; delta=0 gives (theta, 1-theta, 0)."""
    return norms.f_stencil(theta, delta, mu)


def h_coeffs(theta: float):
    """Wind/buoyancy extrapolation weights (theta+1, -theta)."""
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"theta must be in [1/2, 1], got {theta}")
    return theta + 1.0, -theta


@dataclass
class SimState:
    """Coefficient vectors at levels n and n-1 plus the current time t_n."""

    u_n: np.ndarray
    u_nm1: np.ndarray
    p_n: np.ndarray
    p_nm1: np.ndarray
    t_n: np.ndarray
    t_nm1: np.ndarray
    s_n: np.ndarray
    s_nm1: np.ndarray
    time: float

    def copy(self) -> "SimState":
        return SimState(*(v.copy() for v in (self.u_n, self.u_nm1, self.p_n, self.p_nm1,
                                             self.t_n, self.t_nm1, self.s_n, self.s_nm1)),
                        time=self.time)


class DirichletBC:
    """Boundary values for one field on a set of wall tags.

    `value` is a constant or a callable f(x, y, t) returning per-node values
    (shape (n,) scalar spaces, (n, 2) vector spaces).
    """

    def __init__(self, space: FiniteElementSpace, tags, value=0.0):
        self.space = space
        self.tags = tuple(tags)
        self.value = value
        self.nodes = space.boundary_nodes(self.tags)
        if space.num_components == 1:
            self.dofs = self.nodes
        else:
            self.dofs = np.empty(2 * len(self.nodes), dtype=np.int64)
            self.dofs[0::2] = 2 * self.nodes
            self.dofs[1::2] = 2 * self.nodes + 1

    def values(self, t: float) -> np.ndarray:
        n = len(self.nodes)
        width = self.space.num_components
        if callable(self.value):
            x = self.space.node_coords[self.nodes, 0]
            y = self.space.node_coords[self.nodes, 1]
            vals = np.asarray(self.value(x, y, t), dtype=float)
        else:
            vals = np.full((n, width) if width == 2 else n, float(self.value))
        return vals.reshape(-1)


def _collect_bc(bcs) -> tuple:
    dofs = [bc.dofs for bc in bcs]
    if not dofs:
        return np.empty(0, dtype=np.int64), lambda t: np.empty(0)
    alldofs = np.concatenate(dofs)
    return alldofs, lambda t: np.concatenate([bc.values(t) for bc in bcs])


class DiscreteProblem:
    """Taylor-Hood + P2 scalar spaces on one mesh with the time-independent operators."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        self.vel_space = FiniteElementSpace(mesh, 2, VECTOR2)
        self.pres_space = FiniteElementSpace(mesh, 1, SCALAR)
        self.scalar_space = FiniteElementSpace(mesh, 2, SCALAR)
        self.mass_v = assemble_mass(self.vel_space)
        self.stiff_v = assemble_stiffness(self.vel_space)
        self.mass_s = assemble_mass(self.scalar_space)
        self.stiff_s = assemble_stiffness(self.scalar_space)
        self.div = assemble_divergence(self.vel_space, self.pres_space)
        self.gauge_weights = assemble_load(self.pres_space, lambda x, y: np.ones_like(x))

    def zero_state(self) -> SimState:
        z = np.zeros
        return SimState(u_n=z(self.vel_space.dof_count), u_nm1=z(self.vel_space.dof_count),
                        p_n=z(self.pres_space.dof_count), p_nm1=z(self.pres_space.dof_count),
                        t_n=z(self.scalar_space.dof_count), t_nm1=z(self.scalar_space.dof_count),
                        s_n=z(self.scalar_space.dof_count), s_nm1=z(self.scalar_space.dof_count),
                        time=0.0)


@dataclass
class Forcing:
    """Optional body forces f(x, y, t)->(.., 2), phi(x, y, t), psi(x, y, t)."""

    f: object = None
    phi: object = None
    psi: object = None


def initialize(problem: DiscreteProblem, u0=None, t0=None, s0=None) -> SimState:
    """Both levels set to the nodal interpolants of the initial data; time = 0."""
    state = problem.zero_state()
    if u0 is not None:
        state.u_n = interpolate(problem.vel_space, u0)
        state.u_nm1 = state.u_n.copy()
    if t0 is not None:
        state.t_n = interpolate(problem.scalar_space, t0)
        state.t_nm1 = state.t_n.copy()
    if s0 is not None:
        state.s_n = interpolate(problem.scalar_space, s0)
        state.s_nm1 = state.s_n.copy()
    return state


def initialize_exact(problem: DiscreteProblem, sol, dt: float) -> SimState:
    """Two-level start from a time-dependent analytic solution: levels at t=0 and t=-dt.

    Removes the first-order startup perturbation of the single-level start, which
    matters in temporal convergence studies at coarse dt.
    """
    def at(f, t):
        return lambda x, y: f(x, y, t)

    return SimState(
        u_n=interpolate(problem.vel_space, at(sol.u, 0.0)),
        u_nm1=interpolate(problem.vel_space, at(sol.u, -dt)),
        p_n=interpolate(problem.pres_space, at(sol.p, 0.0)),
        p_nm1=interpolate(problem.pres_space, at(sol.p, -dt)),
        t_n=interpolate(problem.scalar_space, at(sol.T, 0.0)),
        t_nm1=interpolate(problem.scalar_space, at(sol.T, -dt)),
        s_n=interpolate(problem.scalar_space, at(sol.S, 0.0)),
        s_nm1=interpolate(problem.scalar_space, at(sol.S, -dt)),
        time=0.0)


def _check_finite(name, vec, step, time):
    if not np.all(np.isfinite(vec)) or np.abs(vec).max() > OVERFLOW_LIMIT:
        raise DivergenceError(step, time, f"non-finite or overflowing {name} field")


def advance(state: SimState, params: SchemeParams, problem: DiscreteProblem,
            bcs: dict, forcing: Forcing | None = None, step: int = 0) -> SimState:
    """One step of the scheme: solve T, S, then (u, p), all from the old levels.

    Temperature:    (D(T), chi) + gamma (F^{e1,g}(grad T), grad chi)
                    + c*(H(u), F^{e1,g}(T), chi) = (phi(t_{n+theta}), chi)
    Concentration:  same with (eps2, dc) and psi.
    Momentum:       (D(u), v) + nu (F^{e,nu}(grad u), grad v) + b*(H(u), F^{e,nu}(u), v)
                    + Da^{-1} (F^{e,nu}(u), v) - (F^{e,nu}(p), div v)
                    = beta_T (g H(T), v) + beta_S (g H(S), v) + (f(t_{n+theta}), v),
                    with (div u_{n+1}, q) = 0.
    The buoyancy uses the extrapolated old T, S, so the three solves are
    mutually independent; T and S are solved first only for reproducibility.
    """
    dt = params.dt
    t_new = state.time + dt
    t_theta = state.time + params.theta * dt
    cp, cm, cn = d_coeffs(params.theta)
    hb, hbm = h_coeffs(params.theta)

    wind = hb * state.u_n + hbm * state.u_nm1
    conv_s = assemble_convection_skew(problem.scalar_space, wind, problem.vel_space)
    conv_v = assemble_convection_skew(problem.vel_space, wind)

    def scalar_solve(w_n, w_nm1, diffusivity, stab, load_fn, field_bcs):
        ap, am, an = f_coeffs(params.theta, stab, diffusivity)
        op = diffusivity * problem.stiff_s + conv_s
        lhs = (cp / dt) * problem.mass_s + ap * op
        hist = am * w_n + an * w_nm1
        rhs = -problem.mass_s @ ((cm * w_n + cn * w_nm1) / dt) - op @ hist
        if load_fn is not None:
            rhs = rhs + assemble_load(problem.scalar_space,
                                      lambda x, y: load_fn(x, y, t_theta))
        dofs, values_fn = _collect_bc(field_bcs)
        lhs, rhs = apply_dirichlet(lhs, rhs, dofs, values_fn(t_new))
        return solve_sparse(lhs, rhs)

    t_new_vec = scalar_solve(state.t_n, state.t_nm1, params.gamma, params.eps1,
                             forcing.phi if forcing else None, bcs.get("T", ()))
    _check_finite("temperature", t_new_vec, step, t_new)
    s_new_vec = scalar_solve(state.s_n, state.s_nm1, params.dc, params.eps2,
                             forcing.psi if forcing else None, bcs.get("S", ()))
    _check_finite("concentration", s_new_vec, step, t_new)

    ap, am, an = f_coeffs(params.theta, params.eps, params.nu)
    op_v = params.nu * problem.stiff_v + conv_v + params.da_inv * problem.mass_v
    lhs_v = (cp / dt) * problem.mass_v + ap * op_v
    hist_u = am * state.u_n + an * state.u_nm1
    rhs_v = -problem.mass_v @ ((cm * state.u_n + cn * state.u_nm1) / dt) - op_v @ hist_u
    rhs_v = rhs_v + problem.div.T @ (am * state.p_n + an * state.p_nm1)
    if params.beta_t:
        rhs_v = rhs_v + assemble_buoyancy(problem.vel_space, problem.scalar_space,
                                          params.g, params.beta_t,
                                          hb * state.t_n + hbm * state.t_nm1)
    if params.beta_s:
        rhs_v = rhs_v + assemble_buoyancy(problem.vel_space, problem.scalar_space,
                                          params.g, params.beta_s,
                                          hb * state.s_n + hbm * state.s_nm1)
    if forcing and forcing.f is not None:
        rhs_v = rhs_v + assemble_load(problem.vel_space,
                                      lambda x, y: forcing.f(x, y, t_theta))

    dofs, values_fn = _collect_bc(bcs.get("u", ()))
    system = build_block_system(lhs_v, problem.div, -ap, rhs_v)
    u_new, p_new = solve_saddle_point(system, problem.gauge_weights,
                                      bc_dofs=dofs, bc_values=values_fn(t_new))
    _check_finite("velocity", u_new, step, t_new)

    return SimState(u_n=u_new, u_nm1=state.u_n, p_n=p_new, p_nm1=state.p_n,
                    t_n=t_new_vec, t_nm1=state.t_n, s_n=s_new_vec, s_nm1=state.s_n,
                    time=t_new)


@dataclass
class RunResult:
    state: SimState
    n_steps: int
    snapshots: list = field(default_factory=list)
    diagnostics: dict | None = None
    stopped_early: bool = False


def run(problem: DiscreteProblem, state: SimState, params: SchemeParams, n_steps: int,
        bcs: dict, forcing: Forcing | None = None, on_step=None, snapshot_every: int = 0,
        collect_diagnostics: bool = False) -> RunResult:
    """Fixed-step loop. `on_step(state, k)` runs after step k and may return
    truthy to stop early; diagnostics feed the stability ledger."""
    diag = None
    if collect_diagnostics:
        diag = {k: [0.0] * (n_steps + 1) for k in
                ("time", "uu", "TT", "SS", "curv_u", "curv_T", "curv_S",
                 "fgrad_u", "fl2_u", "fgrad_T", "fgrad_S")}
        diag["time"][0] = state.time
        diag["uu"][0] = state.u_n @ (problem.mass_v @ state.u_n)
        diag["TT"][0] = state.t_n @ (problem.mass_s @ state.t_n)
        diag["SS"][0] = state.s_n @ (problem.mass_s @ state.s_n)
        diag["g_u10"] = diag["g_T10"] = diag["g_S10"] = 0.0

    snapshots = []
    stopped = False
    prev = None
    for k in range(1, n_steps + 1):
        prev = state
        state = advance(state, params, problem, bcs, forcing, step=k)
        if diag is not None:
            _record_diagnostics(diag, k, state, prev, params, problem)
        if snapshot_every and (k % snapshot_every == 0 or k == n_steps):
            snapshots.append(state.copy())
        if on_step is not None and on_step(state, k):
            stopped = True
            break

    if diag is not None and stopped:
        taken = k
        for key in ("time", "uu", "TT", "SS", "curv_u", "curv_T", "curv_S",
                    "fgrad_u", "fl2_u", "fgrad_T", "fgrad_S"):
            diag[key] = diag[key][:taken + 1]
    return RunResult(state=state, n_steps=k if n_steps else 0, snapshots=snapshots,
                     diagnostics=diag, stopped_early=stopped)


def _record_diagnostics(diag, k, state, prev, params, problem):
    pu = norms.GNormParams(params.theta, params.eps, params.nu)
    pt = norms.GNormParams(params.theta, params.eps1, params.gamma)
    ps = norms.GNormParams(params.theta, params.eps2, params.dc)
    mv, ms = problem.mass_v, problem.mass_s
    diag["time"][k] = state.time
    diag["uu"][k] = state.u_n @ (mv @ state.u_n)
    diag["TT"][k] = state.t_n @ (ms @ state.t_n)
    diag["SS"][k] = state.s_n @ (ms @ state.s_n)
    if k == 1:
        diag["g_u10"] = norms.g_norm_sq(state.u_n, state.u_nm1, mv, pu)
        diag["g_T10"] = norms.g_norm_sq(state.t_n, state.t_nm1, ms, pt)
        diag["g_S10"] = norms.g_norm_sq(state.s_n, state.s_nm1, ms, ps)
        return
    # triples (w_k, w_{k-1}, w_{k-2}); prev still holds level k-2 in *_nm1
    for key_curv, key_grad, pw, mass, stiff, w2, w1, w0 in (
            ("curv_u", "fgrad_u", pu, mv, problem.stiff_v, state.u_n, state.u_nm1, prev.u_nm1),
            ("curv_T", "fgrad_T", pt, ms, problem.stiff_s, state.t_n, state.t_nm1, prev.t_nm1),
            ("curv_S", "fgrad_S", ps, ms, problem.stiff_s, state.s_n, state.s_nm1, prev.s_nm1)):
        diag[key_curv][k] = norms.f_norm_sq(w2 - 2 * w1 + w0, mass, pw)
        astar, amid, aold = f_coeffs(pw.theta, pw.eps, pw.mu)
        z = astar * w2 + amid * w1 + aold * w0
        diag[key_grad][k] = z @ (stiff @ z)
        if key_curv == "curv_u":
            diag["fl2_u"][k] = z @ (mass @ z)
