"""Comparison estimators: an error-state Kalman filter on an identified
affine model, and a Koopman-lifted moving-horizon estimator (EDMD with
thin-plate-spline features).

Both consume the same historical TrajectoryDataset as the data-driven
estimator and emit the same estimate-history layout, so runs compare
column-for-column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp
from .behavioral import RankConditionError, TrajectoryDataset, check_rank_condition

__all__ = [
    "IdentifiedModel",
    "EskfParams",
    "KoopmanLift",
    "identify_model",
    "eskf_run",
    "edmd_fit",
    "lift_state",
    "kmhe_run",
]


@dataclass(frozen=True)
class IdentifiedModel:
    """Least-squares affine fit x+ = A x + e, y = C x + r."""

    a: np.ndarray
    c: np.ndarray
    e: np.ndarray
    r: np.ndarray
    state_residual: float
    output_residual: float


def identify_model(ds: TrajectoryDataset) -> IdentifiedModel:
    ok, rank, _ = check_rank_condition(ds, 1)
    if not ok:
        raise RankConditionError(
            f"identification needs rank n+1 = {ds.n + 1} on [H1(x); 1], got {rank}"
        )
    t_len = ds.length
    reg = np.hstack([ds.states[:t_len], np.ones((t_len, 1))])  # (T, n+1)
    sol_x, *_ = np.linalg.lstsq(reg, ds.states[1 : t_len + 1], rcond=None)
    a, e = sol_x[:-1].T, sol_x[-1]
    sol_y, *_ = np.linalg.lstsq(reg, ds.outputs, rcond=None)
    c, r = sol_y[:-1].T, sol_y[-1]
    res_x = float(np.linalg.norm(ds.states[1 : t_len + 1] - reg @ sol_x))
    res_y = float(np.linalg.norm(ds.outputs - reg @ sol_y))
    return IdentifiedModel(
        a=a, c=c, e=e, r=r, state_residual=res_x, output_residual=res_y
    )


@dataclass(frozen=True)
class EskfParams:
    """Isotropic covariance scales (scalars expand to Q·I_n etc.)."""

    q: float = 0.9
    r: float = 1e5
    p0: float = 1.0

    def __post_init__(self):
        for name in ("q", "r", "p0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def eskf_run(
    model: IdentifiedModel, params: EskfParams, outputs, x0_hat
) -> np.ndarray:
    """Predict/update Kalman loop on the identified affine model.

    Publishes the one-step-ahead prediction after each measurement update,
    aligning index t with "all measurements up to t-1" like the
    moving-horizon estimators. Joseph-form covariance update; positive
    definiteness is asserted each step.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    n, p = model.a.shape[0], model.c.shape[0]
    q_cov = params.q * np.eye(n)
    r_cov = params.r * np.eye(p)
    x = np.asarray(x0_hat, dtype=float).ravel().copy()
    cov = params.p0 * np.eye(n)
    history = [x.copy()]
    for y in outputs:
        innov = y - (model.c @ x + model.r)
        s = model.c @ cov @ model.c.T + r_cov
        gain = np.linalg.solve(s.T, (cov @ model.c.T).T).T
        x = x + gain @ innov
        ikc = np.eye(n) - gain @ model.c
        cov = ikc @ cov @ ikc.T + gain @ r_cov @ gain.T
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise FloatingPointError(
                "error covariance lost positive definiteness"
            )
        # publish the prediction, then roll the covariance forward
        x = model.a @ x + model.e
        cov = model.a @ cov @ model.a.T + q_cov
        history.append(x.copy())
    return np.asarray(history)


@dataclass(frozen=True)
class KoopmanLift:
    """EDMD lift: z = [x; 1; phi_1..phi_{dim-n-1}(x)] with thin-plate-spline
    features phi_i(x) = s^2 log s, s = ||x - c_i||. The constant coordinate
    makes affine dynamics exactly representable inside the lift."""

    dim: int
    centers: np.ndarray
    seed: int
    a_lift: np.ndarray
    c_lift: np.ndarray
    residual: float
    # Per-feature standardization (a diagonal similarity of the lifted
    # system); the leading state coordinates are never scaled.
    feature_scale: np.ndarray | None = None


def _tps(states: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Thin-plate spline features; value 0 at the centers by continuity."""
    d = np.linalg.norm(states[:, None, :] - centers[None, :, :], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        feats = np.where(d > 0, d**2 * np.log(d, where=d > 0), 0.0)
    return feats


def lift_state(states, centers, feature_scale=None) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    feats = _tps(states, centers)
    if feature_scale is not None:
        feats = feats / feature_scale
    ones = np.ones((states.shape[0], 1))
    return np.hstack([states, ones, feats])


def edmd_fit(
    ds: TrajectoryDataset, dim: int = 20, seed: int = 0
) -> KoopmanLift:
    n = ds.n
    if dim < n + 1:
        raise ValueError(
            f"lift dimension {dim} below state dimension + 1 = {n + 1}"
        )
    t_len = ds.length
    if t_len < dim + 1:
        raise ValueError(
            f"need at least {dim + 1} samples to fit a {dim}-dim lift"
        )
    rng = np.random.default_rng(seed)
    lo = ds.states.min(axis=0)
    hi = ds.states.max(axis=0)
    centers = rng.uniform(lo, hi, size=(dim - n - 1, n))
    raw = _tps(ds.states[:t_len], centers)
    scale = raw.std(axis=0)
    scale[scale < 1e-300] = 1.0
    z0 = lift_state(ds.states[:t_len], centers, scale)  # (T, dim)
    z1 = lift_state(ds.states[1 : t_len + 1], centers, scale)
    # Smooth RBFs sampled along a low-dimensional trajectory are heavily
    # collinear, so the Gram's conditioning is its square: gate on the
    # snapshot matrix itself and solve by orthogonal factorization.
    cond = np.linalg.cond(z0)
    if cond > 1e12:
        raise ValueError(
            f"snapshot conditioning {cond:.3e} exceeds 1e12 (Gram "
            f"{cond**2:.3e}); try a different center seed"
        )
    a_lift = np.linalg.lstsq(z0, z1, rcond=None)[0].T
    c_lift = np.linalg.lstsq(z0, ds.outputs, rcond=None)[0].T
    residual = float(np.linalg.norm(z1 - z0 @ a_lift.T))
    return KoopmanLift(
        dim=dim, centers=centers, seed=seed,
        a_lift=a_lift, c_lift=c_lift, residual=residual,
        feature_scale=scale,
    )


def kmhe_run(lift: KoopmanLift, outputs, params) -> np.ndarray:
    """Moving-horizon estimation over the lifted linear model.

    Uses the same discounted cost as the data-driven estimator (params is
    an MheParams); the published estimate is the leading-n slice of the
    lifted window end. State boxes apply to the leading coordinates.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    t_f = params.final_time if params.final_time is not None else len(outputs)
    n_l = lift.dim
    n = params.prior.size
    p = lift.c_lift.shape[0]
    z_prior = lift_state(params.prior, lift.centers, lift.feature_scale)[0]
    published = [z_prior.copy()]
    warm = None
    for t in range(1, t_f + 1):
        m_t = min(t, params.horizon)
        anchor = z_prior if t <= params.horizon else published[t - m_t]
        y_window = outputs[t - m_t : t]

        nz, nv = n_l * (m_t + 1), p * m_t
        dim = nz + nv
        prior_w = 2.0 * params.rho**m_t
        noise_w = params.mu * params.rho ** np.arange(
            m_t - 1, -1, -1, dtype=float
        )
        diag = np.zeros(dim)
        diag[:n_l] = 2.0 * prior_w
        diag[nz:] = 2.0 * np.repeat(noise_w, p)
        q_vec = np.zeros(dim)
        q_vec[:n_l] = -2.0 * prior_w * anchor

        a_eq = np.zeros((n_l * m_t + nv, dim))
        b_eq = np.zeros(n_l * m_t + nv)
        for k in range(m_t):
            rows = slice(k * n_l, (k + 1) * n_l)
            a_eq[rows, (k + 1) * n_l : (k + 2) * n_l] = np.eye(n_l)
            a_eq[rows, k * n_l : (k + 1) * n_l] = -lift.a_lift
        for k in range(m_t):
            rows = slice(n_l * m_t + k * p, n_l * m_t + (k + 1) * p)
            a_eq[rows, k * n_l : (k + 1) * n_l] = lift.c_lift
            a_eq[rows, nz + k * p : nz + (k + 1) * p] = np.eye(p)
            b_eq[rows] = y_window[k]

        lower = np.full(dim, -np.inf)
        upper = np.full(dim, np.inf)
        if params.state_constraint is not None and params.state_constraint[0] == "fixed-box":
            _, lo, hi = params.state_constraint
            for k in range(m_t + 1):
                lower[k * n_l : k * n_l + n] = lo
                upper[k * n_l : k * n_l + n] = hi
        if params.noise_constraint is not None:
            _, lo, hi = params.noise_constraint
            lower[nz:] = np.tile(np.asarray(lo, dtype=float), m_t)
            upper[nz:] = np.tile(np.asarray(hi, dtype=float), m_t)

        prob = qp.QpProblem(
            p=np.diag(diag), q=q_vec, a_eq=a_eq, b_eq=b_eq,
            lower=lower, upper=upper,
        )
        sol = qp.solve(prob, warm=warm if t > params.horizon else None)
        warm = sol
        published.append(sol.x[m_t * n_l : (m_t + 1) * n_l].copy())
    return np.asarray([z[:n] for z in published])
