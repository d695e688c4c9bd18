"""Energy norms of the two-level time stencil, discrete space-time error norms,
and the per-step stability ledger.

The two-level quadratic form (the "G-norm") and the curvature weight (the
"F-norm") satisfy a telescoping identity that turns each time step's inner
product into an energy difference plus curvature dissipation; the identity and
its companion bounds are implemented here as executable checks. The quadratic
forms act on coefficient vectors through the mass matrix so they realize the
L2 norms of the underlying fields.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fespace import FiniteElementSpace, QuadratureRule, field_gradients, field_values

ERROR_QUAD = QuadratureRule.for_strength(9)


@dataclass(frozen=True)
class GNormParams:
    """theta plus the (stabilization, diffusivity) pair of the measured field."""

    theta: float
    eps: float
    mu: float

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [1/2, 1], got {self.theta}")
        if self.eps < 0 or self.mu <= 0:
            raise ValueError(f"need eps >= 0 and mu > 0, got eps={self.eps}, mu={self.mu}")


def g_blocks(p: GNormParams):
    """Scalar block weights (g11, g12, g22) of the two-level energy form.

    Reconstructed from the norm-equivalence expansion
      G(u, v) = (2θ+1)/4 |u|^2 + (1-2θ)/4 |v|^2 + [(θ+1)(2θ-1)/4 + θε/(2μ)] |u-v|^2,
    which is the unique form satisfying the telescoping identity checked by
    check_gf_identity (g11 matches the usual BDF2-family weights; at θ=1, ε=0
    the blocks are the classical 5/4, -1/2, 1/4).
    """
    th, r = p.theta, p.eps / p.mu
    g11 = th * (2 * th + 3) / 4 + th * r / 2
    g12 = -((th + 1) * (2 * th - 1) / 4 + th * r / 2)
    g22 = th * (2 * th - 1) / 4 + th * r / 2
    return g11, g12, g22


def g_norm_sq(w_a: np.ndarray, w_b: np.ndarray, mass, p: GNormParams) -> float:
    """Quadratic form ([w_a; w_b], G [w_a; w_b]) in the mass inner product; may be negative."""
    g11, g12, g22 = g_blocks(p)
    ma, mb = mass @ w_a, mass @ w_b
    return g11 * (w_a @ ma) + 2 * g12 * (w_a @ mb) + g22 * (w_b @ mb)


def f_matrix_coeff(p: GNormParams) -> float:
    return p.theta * (2 * p.theta - 1) + 4 * p.theta**2 * p.eps / p.mu


def f_norm_sq(w: np.ndarray, mass, p: GNormParams) -> float:
    """Curvature weight times |w|_L2^2; zero exactly when θ=1/2, ε=0 or w=0."""
    return f_matrix_coeff(p) * (w @ (mass @ w))


def d_stencil(theta: float):
    """Time-derivative stencil weights on (w_{n+1}, w_n, w_{n-1}); sums to 0."""
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"theta must be in [1/2, 1], got {theta}")
    return theta + 0.5, -2.0 * theta, theta - 0.5


def f_stencil(theta: float, delta: float, mu: float):
    """Diffusion-level stencil weights on (w_{n+1}, w_n, w_{n-1}); sums to 1."""
    if mu <= 0:
        raise ValueError(f"diffusivity must be positive, got {mu}")
    if delta < 0:
        raise ValueError(f"stabilization must be nonnegative, got {delta}")
    return theta * (mu + delta) / mu, 1.0 - theta * (mu + 2 * delta) / mu, theta * delta / mu


def check_gf_identity(w_np1, w_n, w_nm1, dt: float, p: GNormParams, mass) -> float:
    """|LHS - RHS| of the telescoping identity
        (D(w), F(w)) = [G(w_{n+1}, w_n) - G(w_n, w_{n-1})]/dt + |curv|_F^2 / (4 dt),
    where both sides are evaluated independently (stencils vs block forms)."""
    cp, cm, cn = d_stencil(p.theta)
    ap, am, an = f_stencil(p.theta, p.eps, p.mu)
    d = (cp * w_np1 + cm * w_n + cn * w_nm1) / dt
    f = ap * w_np1 + am * w_n + an * w_nm1
    lhs = d @ (mass @ f)
    curv = w_np1 - 2 * w_n + w_nm1
    rhs = (g_norm_sq(w_np1, w_n, mass, p) - g_norm_sq(w_n, w_nm1, mass, p)) / dt \
        + f_norm_sq(curv, mass, p) / (4 * dt)
    return abs(lhs - rhs)


def g_norm_lower_bound(w_a, w_b, mass, p: GNormParams) -> float:
    """Lower bound (2θ+1)/4 |w_a|^2 - (2θ-1)/4 |w_b|^2 on the two-level form."""
    th = p.theta
    na = w_a @ (mass @ w_a)
    nb = w_b @ (mass @ w_b)
    return (2 * th + 1) / 4 * na - (2 * th - 1) / 4 * nb


def g_norm_upper_bound(w_a, w_b, mass, p: GNormParams) -> float:
    """Upper bound with the curvature weight folded into both levels."""
    th, r = p.theta, p.eps / p.mu
    cross = (th + 1) * (2 * th - 1) / 4 + th * r / 2
    na = w_a @ (mass @ w_a)
    nb = w_b @ (mass @ w_b)
    return ((2 * th + 1) / 4 + cross) * na + cross * nb


# -- space-time error norms -------------------------------------------------


def field_error(space: FiniteElementSpace, coeffs: np.ndarray, exact, exact_grad=None,
                quad: QuadratureRule = ERROR_QUAD):
    """(L2, H1-seminorm) error of a coefficient field against an analytic one."""
    pts = space.physical_points(quad)
    det, _ = space.geometry()
    uh = field_values(space, coeffs, quad)
    ue = np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float)
    diff = ue - uh
    if space.num_components == 1:
        l2sq = np.einsum("q,tq,t->", quad.weights, diff**2, det)
    else:
        l2sq = np.einsum("q,tqd,t->", quad.weights, diff**2, det)
    if exact_grad is None:
        return float(np.sqrt(l2sq)), None
    gh = field_gradients(space, coeffs, quad)
    ge = np.asarray(exact_grad(pts[..., 0], pts[..., 1]), dtype=float)
    gdiff = ge - gh
    if space.num_components == 1:
        h1sq = np.einsum("q,tqe,t->", quad.weights, gdiff**2, det)
    else:
        h1sq = np.einsum("q,tqde,t->", quad.weights, gdiff**2, det)
    return float(np.sqrt(l2sq)), float(np.sqrt(h1sq))


def discrete_norm(values, m, dt: float) -> float:
    """Space-time norm of per-step spatial norms: (dt * sum v^m)^(1/m), or max for m=inf."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty trajectory")
    if np.isinf(m):
        return float(values.max())
    return float((dt * np.sum(values**m)) ** (1.0 / m))


# -- stability ledger ---------------------------------------------------------

LEDGER_COLUMNS = ["step", "time", "uu", "TT", "SS", "curv_u", "curv_T", "curv_S",
                  "bound_u", "bound_T", "bound_S", "violated"]


def poincare_constant(width: float, height: float) -> float:
    """Sharp H1_0 Poincare constant of the rectangle: 1/sqrt(first Dirichlet eigenvalue)."""
    return 1.0 / (np.pi * np.sqrt(1.0 / width**2 + 1.0 / height**2))


def scalar_bound(n, q, sq0, g10, theta):
    """Decay envelope q^n |w_0|^2 + 4n/(2θ+1) G(w_1, w_0) for the transported scalars."""
    return q**n * sq0 + 4.0 * n / (2 * theta + 1) * g10


def stability_energy_report(diag: dict, params, width: float, height: float,
                            rtol: float = 1e-9) -> list:
    """Per-step energy ledger with the unconditional-stability bounds.

    `diag` is the diagnostics dict collected by the time loop (squared L2
    norms, accumulated curvature and dissipation sums, and the level-(1,0)
    two-level energies). The scalar bounds are the literal decay envelopes;
    the velocity bound is the fully explicit variant

        |u_N|^2 + 1/(2θ+1) Σ|curv|_F^2 + 4ΔtDa^{-1}/(2θ+1) Σ|F(u)|^2
                + 2Δtν/(2θ+1) Σ|F(∇u)|^2
        <= q^N |u_0|^2 + min(N, (2θ+3)/2) * max(0, 4/(2θ+1) (G_u(1,0) + Δt Σ c_n))

    with q = (2θ-1)/(2θ+1) and the buoyancy forcing bounded through the
    rectangle Poincare constant and Young's inequality:

        c_n = (2 C_P^2 |g|_inf^2 / ν) [β_T^2 ((θ+1)^2 B_T(n) + θ^2 B_T(n-1))
                                      + β_S^2 ((θ+1)^2 B_S(n) + θ^2 B_S(n-1))],

    where B_T, B_S are the scalar decay envelopes, so the right-hand side is
    computable from levels 0 and 1 alone. Valid for homogeneous Dirichlet
    data, no forcing, and weakly divergence-free initial velocity.
    """
    th = params.theta
    dt = params.dt
    q = (2 * th - 1) / (2 * th + 1)
    cp2 = poincare_constant(width, height) ** 2
    ginf2 = float(np.max(np.abs(params.g))) ** 2

    uu0, tt0, ss0 = diag["uu"][0], diag["TT"][0], diag["SS"][0]
    g_u10, g_t10, g_s10 = diag["g_u10"], diag["g_T10"], diag["g_S10"]

    n_steps = len(diag["uu"]) - 1
    rows = []
    curv_u = curv_t = curv_s = 0.0
    diss_u_grad = diss_u_l2 = diss_t = diss_s = 0.0
    csum = 0.0
    for n in range(1, n_steps + 1):
        time = diag["time"][n]
        uu, tt, ss = diag["uu"][n], diag["TT"][n], diag["SS"][n]
        if n >= 2:
            # curvature and dissipation sums run over interior steps only
            curv_u += diag["curv_u"][n]
            curv_t += diag["curv_T"][n]
            curv_s += diag["curv_S"][n]
            diss_u_grad += diag["fgrad_u"][n]
            diss_u_l2 += diag["fl2_u"][n]
            diss_t += diag["fgrad_T"][n]
            diss_s += diag["fgrad_S"][n]
            k = n - 1  # the step just absorbed into the sums uses levels (k-1, k)
            bt_k = scalar_bound(k, q, tt0, max(g_t10, 0.0), th)
            bt_km1 = scalar_bound(k - 1, q, tt0, max(g_t10, 0.0), th)
            bs_k = scalar_bound(k, q, ss0, max(g_s10, 0.0), th)
            bs_km1 = scalar_bound(k - 1, q, ss0, max(g_s10, 0.0), th)
            csum += (2 * cp2 * ginf2 / params.nu) * (
                params.beta_t**2 * ((th + 1) ** 2 * bt_k + th**2 * bt_km1)
                + params.beta_s**2 * ((th + 1) ** 2 * bs_k + th**2 * bs_km1))

        lhs_t = tt + curv_t / (2 * th + 1) + 4 * dt * params.gamma / (2 * th + 1) * diss_t
        rhs_t = scalar_bound(n, q, tt0, g_t10, th)
        lhs_s = ss + curv_s / (2 * th + 1) + 4 * dt * params.dc / (2 * th + 1) * diss_s
        rhs_s = scalar_bound(n, q, ss0, g_s10, th)
        lhs_u = uu + curv_u / (2 * th + 1) + 4 * dt * params.da_inv / (2 * th + 1) * diss_u_l2 \
            + 2 * dt * params.nu / (2 * th + 1) * diss_u_grad
        rhs_u = q**n * uu0 + min(n, (2 * th + 3) / 2) * max(
            0.0, 4.0 / (2 * th + 1) * (g_u10 + dt * csum))

        scale_t = max(tt0, tt, 1e-30)
        scale_s = max(ss0, ss, 1e-30)
        scale_u = max(uu0, uu, rhs_u, 1e-30)
        violated = int(lhs_t > rhs_t + rtol * scale_t
                       or lhs_s > rhs_s + rtol * scale_s
                       or lhs_u > rhs_u + rtol * scale_u)
        rows.append({"step": n, "time": time, "uu": uu, "TT": tt, "SS": ss,
                     "curv_u": curv_u, "curv_T": curv_t, "curv_S": curv_s,
                     "bound_u": rhs_u, "bound_T": rhs_t, "bound_S": rhs_s,
                     "violated": violated})
    return rows


def write_ledger_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_COLUMNS)
        for row in rows:
            writer.writerow([row["step"], f"{row['time']:.17g}"]
                            + [f"{row[c]:.17g}" for c in LEDGER_COLUMNS[2:-1]]
                            + [row["violated"]])
