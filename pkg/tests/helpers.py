"""Shared test utilities: independent oracles and random problem factories.

The oracles here deliberately avoid the package's own solvers so the tests
compare two unrelated computations: exhaustive active-set enumeration for
the QP, and the discrete Lyapunov fixed point (scipy) for the SDP.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ddmhe.behavioral import TrajectoryDataset
from ddmhe.sdp import DecisionLayout, LmiBlock, SdpProblem, affine_block


# -- random systems ----------------------------------------------------------


def random_offset_system(rng, n, p, spectral_radius=0.9, offset_scale=0.1):
    """Observable affine system x+ = A x + e, y = C x + r (resampled until
    the observability matrix has full rank)."""
    for _ in range(64):
        a = rng.standard_normal((n, n))
        a *= spectral_radius / max(np.abs(np.linalg.eigvals(a)).max(), 1e-12)
        c = rng.standard_normal((p, n))
        obs = np.vstack([c @ np.linalg.matrix_power(a, k) for k in range(n)])
        if np.linalg.matrix_rank(obs) == n:
            e = offset_scale * rng.standard_normal(n)
            r = offset_scale * rng.standard_normal(p)
            return a, e, c, r
    raise RuntimeError("failed to draw an observable system")


def simulate_affine(a, e, c, r, x0, steps, ts=0.01, w=None, v=None,
                    start_index=0):
    """Roll the affine system forward; optional per-step w/v arrays."""
    n, p = a.shape[0], c.shape[0]
    w = np.zeros((steps, n)) if w is None else np.asarray(w, dtype=float)
    v = np.zeros((steps, p)) if v is None else np.asarray(v, dtype=float)
    states = np.empty((steps + 1, n))
    outputs = np.empty((steps, p))
    states[0] = np.asarray(x0, dtype=float).ravel()
    for k in range(steps):
        outputs[k] = c @ states[k] + r + v[k]
        states[k + 1] = a @ states[k] + e + w[k]
    return TrajectoryDataset(
        sample_interval=ts, states=states, outputs=outputs,
        start_index=start_index,
    )


# -- QP oracle: exhaustive active-set enumeration ----------------------------


def active_set_oracle(p, q, a_eq=None, b_eq=None, lower=None, upper=None,
                      dual_tol=1e-8):
    """Unique minimizer of a strictly convex box/equality QP by trying every
    assignment of the bounded variables to {free, at-lower, at-upper}.

    For each candidate active set the KKT equalities are solved exactly and
    the primal (free variables inside their boxes) and dual (multiplier
    signs) conditions are checked; strict convexity makes the surviving
    point unique. Exponential in the number of bounded variables -- test
    sizes only.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    n = q.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    if a_eq is None:
        a_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.asarray(b_eq, dtype=float).ravel()

    boxed = [i for i in range(n) if np.isfinite(lower[i]) or np.isfinite(upper[i])]
    best = None
    for combo in itertools.product((0, -1, 1), repeat=len(boxed)):
        fix_idx, fix_val = [], []
        skip = False
        for i, side in zip(boxed, combo):
            if side == -1:
                if not np.isfinite(lower[i]):
                    skip = True
                    break
                fix_idx.append(i)
                fix_val.append(lower[i])
            elif side == 1:
                if not np.isfinite(upper[i]):
                    skip = True
                    break
                fix_idx.append(i)
                fix_val.append(upper[i])
        if skip:
            continue
        m_eq = a_eq.shape[0]
        k = len(fix_idx)
        g = np.zeros((k, n))
        for row, i in enumerate(fix_idx):
            g[row, i] = 1.0
        kkt = np.block([
            [p, a_eq.T, g.T],
            [a_eq, np.zeros((m_eq, m_eq + k))],
            [g, np.zeros((k, m_eq + k))],
        ])
        rhs = np.concatenate([-q, b_eq, fix_val])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        # primal feasibility of the free variables
        if np.any(x < lower - 1e-9) or np.any(x > upper + 1e-9):
            continue
        # dual feasibility: sign of the bound multipliers
        grad = p @ x + q + a_eq.T @ sol[n:n + m_eq]
        ok = True
        for i, side in zip(boxed, combo):
            if side == -1 and grad[i] < -dual_tol:
                ok = False
            elif side == 1 and grad[i] > dual_tol:
                ok = False
        if not ok:
            continue
        obj = 0.5 * x @ p @ x + q @ x
        if best is None or obj < best[1] - 1e-12:
            best = (x, obj)
    if best is None:
        return None
    return best[0]


def random_box_qp(rng, n_max=8, boxed_max=5):
    """Strictly convex random QP with equalities and a feasible box."""
    n = int(rng.integers(2, n_max + 1))
    m = rng.standard_normal((n, n))
    p = m @ m.T + n * np.eye(n)
    q = rng.standard_normal(n)
    x_feas = rng.uniform(-1.0, 1.0, n)
    m_eq = int(rng.integers(0, n // 2 + 1))
    a_eq = rng.standard_normal((m_eq, n)) if m_eq else None
    b_eq = a_eq @ x_feas if m_eq else None
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    boxed = rng.permutation(n)[: int(rng.integers(0, min(boxed_max, n) + 1))]
    for i in boxed:
        lower[i] = x_feas[i] - rng.uniform(0.05, 1.0)
        upper[i] = x_feas[i] + rng.uniform(0.05, 1.0)
    return p, q, a_eq, b_eq, lower, upper


# -- SDP oracle: discrete Lyapunov fixed point -------------------------------


def lyapunov_feasibility_problem(a, floor=1e-2, cap=1e2, decay=1e-3):
    """SDP feasibility: find P with floor*I <= P <= cap*I and
    A' P A - P <= -decay * I. Feasible iff the spectral radius of A is
    below 1 (with margin room for the caps)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    layout = DecisionLayout()
    layout.add_symmetric("p", n)

    def p_of(z):
        return layout.get(z, "p")

    blocks = [
        affine_block(
            "p-floor", lambda z: p_of(z) - floor * np.eye(n), layout.dim,
            "psd", 0.0,
        ),
        affine_block(
            "p-cap", lambda z: p_of(z) - cap * np.eye(n), layout.dim,
            "nsd", 0.0,
        ),
        affine_block(
            "decrease",
            lambda z: a.T @ p_of(z) @ a - p_of(z) + decay * np.eye(n),
            layout.dim, "nsd", 0.0,
        ),
    ]
    return SdpProblem(c=np.zeros(layout.dim), blocks=blocks, layout=layout)


def lyapunov_fixed_point(a):
    """P solving A' P A - P = -I (exists and is PD iff A is Schur)."""
    return solve_discrete_lyapunov(np.asarray(a, dtype=float).T, np.eye(a.shape[0]))
