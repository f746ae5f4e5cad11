"""Convex QP solver: quadratic cost, linear equalities, box bounds.

Operator splitting (ADMM with over-relaxation, adaptive penalty, and an
active-set polish pass), in the style of OSQP. Problem sizes here are tens
to low hundreds of variables, so the KKT system is factored densely and
cached across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = ["QpProblem", "QpSolution", "QpInfeasibleError", "solve"]


class QpInfeasibleError(RuntimeError):
    """Raised by callers that treat infeasibility as a hard error."""


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Px + q'x  s.t.  A_eq x = b_eq,  lower <= x <= upper.

    ``lower``/``upper`` may contain +-inf for unbounded coordinates;
    either may be None (no bounds at all on that side).
    """

    p: np.ndarray
    q: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        if p.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {p.shape}")
        scale = max(np.linalg.norm(p), 1.0)
        if np.linalg.norm(p - p.T) > 1e-10 * scale:
            raise ValueError("P must be symmetric within 1e-10")
        object.__setattr__(self, "p", 0.5 * (p + p.T))
        object.__setattr__(self, "q", q)
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must be given together")
        if self.a_eq is not None:
            a = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            b = np.asarray(self.b_eq, dtype=float).ravel()
            if a.shape != (b.size, n):
                raise ValueError(
                    f"equality system shape mismatch: A {a.shape}, b {b.size}, n {n}"
                )
            object.__setattr__(self, "a_eq", a)
            object.__setattr__(self, "b_eq", b)
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.size != n:
                    raise ValueError(f"{name} must have length {n}")
                object.__setattr__(self, name, v)
        if self.lower is not None and self.upper is not None:
            both = np.isfinite(self.lower) & np.isfinite(self.upper)
            if np.any(self.lower[both] > self.upper[both]):
                raise ValueError("lower > upper for some variable")

    @property
    def n(self) -> int:
        return self.q.size


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # "optimal" | "max-iter" | "infeasible"
    primal_residual: float
    dual_residual: float
    iterations: int
    objective: float
    y: np.ndarray = field(default=None, repr=False)  # duals, for warm starts
    z: np.ndarray = field(default=None, repr=False)


def _constraints(prob: QpProblem):
    """Stack equalities and finite box rows into l <= A x <= u."""
    n = prob.n
    rows, lo, hi = [], [], []
    if prob.a_eq is not None:
        rows.append(prob.a_eq)
        lo.append(prob.b_eq)
        hi.append(prob.b_eq)
    lower = prob.lower if prob.lower is not None else np.full(n, -np.inf)
    upper = prob.upper if prob.upper is not None else np.full(n, np.inf)
    boxed = np.isfinite(lower) | np.isfinite(upper)
    if np.any(boxed):
        eye = np.eye(n)[boxed]
        rows.append(eye)
        lo.append(lower[boxed])
        hi.append(upper[boxed])
    if not rows:
        return None, None, None
    return np.vstack(rows), np.concatenate(lo), np.concatenate(hi)


def _polish(prob, a, lo, hi, x, y, z, tol):
    """Solve the KKT system of the detected active set for full precision."""
    n = prob.n
    act_lo = (z - lo <= 1e-7 * (1 + np.abs(lo))) & (y < 0)
    act_hi = (hi - z <= 1e-7 * (1 + np.abs(hi))) & (y > 0)
    eq = lo == hi
    active = act_lo | act_hi | eq
    g = a[active]
    rhs_g = np.where(act_lo[active], lo[active], hi[active])
    rhs_g[eq[active]] = lo[active][eq[active]]
    m = g.shape[0]
    kkt = np.block([[prob.p, g.T], [g, np.zeros((m, m))]])
    rhs = np.concatenate([-prob.q, rhs_g])
    try:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    x_pol = sol[:n]
    ax = a @ x_pol
    if np.any(ax < lo - tol * 10) or np.any(ax > hi + tol * 10):
        return None
    y_pol = np.zeros_like(y)
    y_pol[active] = sol[n:]
    return x_pol, y_pol, ax


def solve(
    prob: QpProblem,
    tol_primal: float = 1e-8,
    tol_dual: float = 1e-8,
    max_iter: int = 20000,
    warm: QpSolution | None = None,
    polish: bool = True,
) -> QpSolution:
    """Solve the QP to first-order optimality.

    Detected primal infeasibility is reported as status "infeasible" with
    the diverging dual direction as certificate; it is never silently
    relaxed.
    """
    n = prob.n
    a, lo, hi = _constraints(prob)

    if a is None:
        # Unconstrained: P x = -q (minimum-norm if P is singular).
        x, *_ = np.linalg.lstsq(prob.p, -prob.q, rcond=None)
        obj = 0.5 * x @ prob.p @ x + prob.q @ x
        grad = float(np.linalg.norm(prob.p @ x + prob.q, np.inf))
        return QpSolution(x, "optimal", 0.0, grad, 0, obj, np.zeros(0), np.zeros(0))

    m = a.shape[0]
    sigma = 1e-6
    p_scale = max(np.linalg.norm(prob.p, np.inf), np.linalg.norm(prob.q, np.inf), 1.0)
    a_scale = max(np.linalg.norm(a, np.inf), 1.0)
    rho = 0.1 * p_scale / a_scale
    rho_vec = np.full(m, rho)
    rho_vec[lo == hi] = rho * 1e3

    def factor(rv):
        kkt = np.block(
            [[prob.p + sigma * np.eye(n), a.T], [a, -np.diag(1.0 / rv)]]
        )
        return lu_factor(kkt)

    lu = factor(rho_vec)

    if warm is not None and warm.x is not None and warm.x.size == n:
        x = warm.x.copy()
        y = warm.y.copy() if warm.y is not None and warm.y.size == m else np.zeros(m)
        z = np.clip(a @ x, lo, hi)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.clip(np.zeros(m), lo, hi)

    alpha = 1.6
    status = "max-iter"
    it = 0
    r_prim = r_dual = np.inf
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        ax = a @ x
        r_prim = float(np.linalg.norm(ax - z, np.inf))
        r_dual = float(np.linalg.norm(prob.p @ x + prob.q + a.T @ y, np.inf))
        eps_p = tol_primal * (1 + max(np.linalg.norm(ax, np.inf), np.linalg.norm(z, np.inf)))
        eps_d = tol_dual * (
            1
            + max(
                np.linalg.norm(prob.p @ x, np.inf),
                np.linalg.norm(prob.q, np.inf),
                np.linalg.norm(a.T @ y, np.inf),
            )
        )
        if r_prim <= eps_p and r_dual <= eps_d:
            status = "optimal"
            break

        rhs = np.concatenate([sigma * x - prob.q, z - y / rho_vec])
        sol = lu_solve(lu, rhs)
        x_tld, nu = sol[:n], sol[n:]
        z_tld = z + (nu - y) / rho_vec
        x = alpha * x_tld + (1 - alpha) * x
        z_pre = alpha * z_tld + (1 - alpha) * z + y / rho_vec
        z = np.clip(z_pre, lo, hi)
        y = rho_vec * (z_pre - z)

        if it % 50 == 0:
            # Primal infeasibility certificate on the dual increment.
            dy = y - y_prev
            y_prev = y.copy()
            dn = np.linalg.norm(dy, np.inf)
            if dn > 1e-12:
                atdy = np.linalg.norm(a.T @ dy, np.inf)
                gap = float(
                    np.sum(hi[np.isfinite(hi)] * np.maximum(dy[np.isfinite(hi)], 0))
                    + np.sum(lo[np.isfinite(lo)] * np.minimum(dy[np.isfinite(lo)], 0))
                )
                if atdy <= 1e-10 * a_scale * dn and gap < -1e-10 * dn:
                    obj = 0.5 * x @ prob.p @ x + prob.q @ x
                    return QpSolution(
                        x, "infeasible", r_prim, r_dual, it, obj, y, z
                    )
            # Penalty rebalancing on residual imbalance.
            ratio = (r_prim / max(eps_p, 1e-30)) / max(r_dual / max(eps_d, 1e-30), 1e-30)
            scalef = np.sqrt(max(min(ratio, 1e4), 1e-4))
            if scalef > 5 or scalef < 0.2:
                rho_vec = np.clip(rho_vec * scalef, rho * 1e-6, rho * 1e6)
                lu = factor(rho_vec)

    if status == "optimal" and polish:
        pol = _polish(prob, a, lo, hi, x, y, z, tol_primal)
        if pol is not None:
            x_pol, y_pol, ax_pol = pol
            rp = float(np.linalg.norm(np.clip(ax_pol, lo, hi) - ax_pol, np.inf))
            rd = float(np.linalg.norm(prob.p @ x_pol + prob.q + a.T @ y_pol, np.inf))
            if max(rp, rd) <= max(r_prim, r_dual) + tol_primal:
                x, y, z = x_pol, y_pol, np.clip(ax_pol, lo, hi)
                r_prim, r_dual = rp, rd

    obj = float(0.5 * x @ prob.p @ x + prob.q @ x)
    return QpSolution(x, status, r_prim, r_dual, it, obj, y, z)
