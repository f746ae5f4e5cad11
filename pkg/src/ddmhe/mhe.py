"""Receding-horizon state estimation over recorded trajectory data.

Each step solves a small convex QP whose equality constraints force the
optimized window to be a trajectory of the data-implied system: the window
is written as a combination of Hankel-matrix columns built from a recorded
(historical) trajectory, with a ones-row handling constant offsets. The
cost discounts a prior-anchor term and the fitted measurement noise
geometrically, which yields an M-step contraction and a robust global
exponential stability bound evaluated alongside the estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .behavioral import HankelStack, TrajectoryDataset, build_stack
from .linalg import pinv
from .stability import SynthesisResult, verify_constraints

__all__ = [
    "MheParams",
    "MheStepResult",
    "MheInfeasibleError",
    "Estimator",
    "assemble",
    "step",
    "run",
    "rges_bound",
    "lyapunov_check",
]


class MheInfeasibleError(RuntimeError):
    """A window QP admitted no feasible trajectory (in practice: the state
    constraint set is too tight for the data-consistent trajectories)."""


@dataclass(frozen=True)
class MheParams:
    """Estimator weights and constraint sets.

    ``state_constraint``: None, ("fixed-box", lower, upper) with n-vectors,
    or ("data-centered-box", halfwidth) which recenters a +-halfwidth box on
    the data-predicted window at every step.
    ``noise_constraint``: None or ("box", lower, upper) with p-vectors.
    ``synthesis``: optional pole-placement certificate; when attached the
    weights must clear its lower bounds (rho > rho0, mu > mu0).
    """

    rho: float
    mu: float
    horizon: int
    prior: np.ndarray
    final_time: int | None = None
    state_constraint: tuple | None = None
    noise_constraint: tuple | None = None
    synthesis: SynthesisResult | None = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.mu <= 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.kappa >= 1.0:
            raise ValueError(
                f"contraction gate failed: 4*rho^M = {self.kappa:.6g} >= 1 "
                f"(rho={self.rho}, M={self.horizon})"
            )
        object.__setattr__(
            self, "prior", np.asarray(self.prior, dtype=float).ravel()
        )
        if self.state_constraint is not None:
            kind = self.state_constraint[0]
            if kind not in ("fixed-box", "data-centered-box"):
                raise ValueError(f"unknown state constraint {kind!r}")
        if self.noise_constraint is not None and self.noise_constraint[0] != "box":
            raise ValueError(
                f"unknown noise constraint {self.noise_constraint[0]!r}"
            )
        if self.synthesis is not None and not verify_constraints(
            self.synthesis, self.rho, self.mu
        ):
            raise ValueError(
                f"weights below the synthesized stability floor: need "
                f"rho > {self.synthesis.rho0:.6g} and mu > "
                f"{self.synthesis.mu0:.6g}, got rho={self.rho}, mu={self.mu}"
            )

    @property
    def kappa(self) -> float:
        return 4.0 * self.rho**self.horizon


@dataclass(frozen=True)
class MheStepResult:
    t: int
    x_hat: np.ndarray
    x_window: np.ndarray  # (M_t + 1, n) optimized window, last row published
    v_window: np.ndarray  # (M_t, p) fitted measurement noise
    alpha: np.ndarray
    objective: float
    qp_status: str
    qp_iterations: int
    lyap_lhs: float | None = None
    lyap_rhs: float | None = None


def _window_weights(params: MheParams, m_t: int):
    """Per-slot quadratic weights: prior coefficient and the noise-weight
    ladder ordered oldest-to-newest (slot k holds v(t - m_t + k))."""
    prior_w = 2.0 * params.rho**m_t
    noise_w = params.mu * params.rho ** np.arange(m_t - 1, -1, -1, dtype=float)
    return prior_w, noise_w


def _window_boxes(params: MheParams, m_t: int, n: int, p: int, center):
    """Stacked bounds for the x-window and v-window decision slices."""
    nx, nv = n * (m_t + 1), p * m_t
    x_lo = np.full(nx, -np.inf)
    x_hi = np.full(nx, np.inf)
    if params.state_constraint is not None:
        kind = params.state_constraint[0]
        if kind == "fixed-box":
            _, lo, hi = params.state_constraint
            x_lo = np.tile(np.asarray(lo, dtype=float), m_t + 1)
            x_hi = np.tile(np.asarray(hi, dtype=float), m_t + 1)
        else:  # data-centered-box
            half = np.tile(
                np.asarray(params.state_constraint[1], dtype=float), m_t + 1
            )
            x_lo = center - half
            x_hi = center + half
    v_lo = np.full(nv, -np.inf)
    v_hi = np.full(nv, np.inf)
    if params.noise_constraint is not None:
        _, lo, hi = params.noise_constraint
        v_lo = np.tile(np.asarray(lo, dtype=float), m_t)
        v_hi = np.tile(np.asarray(hi, dtype=float), m_t)
    return x_lo, x_hi, v_lo, v_hi


def assemble(
    stack: HankelStack,
    y_window: np.ndarray,
    x_bar_anchor: np.ndarray,
    params: MheParams,
    t: int,
    eps_alpha: float = 1e-9,
) -> qp.QpProblem:
    """Pose one window as a QP over (alpha, x-window, v-window).

    Equality rows bind, in order, y_block·alpha + v = y_window,
    x_block·alpha - x = 0, and ones·alpha = 1. The tiny Tikhonov term on
    alpha breaks ties among combiners reproducing the same window, so the
    returned minimizer is deterministic.
    """
    m_t = min(t, params.horizon)
    if m_t < 1:
        raise ValueError("window requires t >= 1")
    if stack.depth != m_t:
        raise ValueError(
            f"stack depth {stack.depth} does not match window length {m_t}"
        )
    y_window = np.asarray(y_window, dtype=float).ravel()
    p = stack.y_block.shape[0] // m_t
    n = stack.x_block.shape[0] // (m_t + 1)
    if y_window.size != m_t * p:
        raise ValueError(
            f"y_window has {y_window.size} entries, expected {m_t * p}"
        )
    width = stack.width
    nx, nv = n * (m_t + 1), p * m_t
    dim = width + nx + nv
    sl_a = slice(0, width)
    sl_x = slice(width, width + nx)
    sl_v = slice(width + nx, dim)

    prior_w, noise_w = _window_weights(params, m_t)
    diag = np.zeros(dim)
    diag[sl_a] = 2.0 * eps_alpha
    diag[width : width + n] = 2.0 * prior_w
    diag[sl_v] = 2.0 * np.repeat(noise_w, p)
    q = np.zeros(dim)
    anchor = np.asarray(x_bar_anchor, dtype=float).ravel()
    q[width : width + n] = -2.0 * prior_w * anchor

    a_eq = np.zeros((nv + nx + 1, dim))
    b_eq = np.zeros(nv + nx + 1)
    a_eq[:nv, sl_a] = stack.y_block
    a_eq[:nv, sl_v] = np.eye(nv)
    b_eq[:nv] = y_window
    a_eq[nv : nv + nx, sl_a] = stack.x_block
    a_eq[nv : nv + nx, sl_x] = -np.eye(nx)
    a_eq[-1, sl_a] = stack.ones_row[0]
    b_eq[-1] = 1.0

    center = None
    if params.state_constraint is not None and params.state_constraint[0] == (
        "data-centered-box"
    ):
        center = stack.x_block @ (pinv(stack.y_block) @ y_window)
    x_lo, x_hi, v_lo, v_hi = _window_boxes(params, m_t, n, p, center)
    lower = np.full(dim, -np.inf)
    upper = np.full(dim, np.inf)
    lower[sl_x], upper[sl_x] = x_lo, x_hi
    lower[sl_v], upper[sl_v] = v_lo, v_hi
    return qp.QpProblem(
        p=np.diag(diag), q=q, a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper
    )


class _WindowCache:
    """Per-window-length immutable pieces: the Hankel stack, a column-space
    basis of it (U * sigma from the thin SVD), and the data predictor used
    by the recentered state box.

    The QP each step is solved over combination *coordinates* c with
    alpha = V diag(1/sigma) c, which is lossless for the constraints
    (stack @ alpha = U @ c) and turns the alpha-Tikhonov term into
    diag(eps/sigma^2) on c; the recovered alpha is the minimum-norm one.
    """

    def __init__(self, ds: TrajectoryDataset, depth: int, n: int, p: int,
                 eps_alpha: float, needs_center: bool):
        self.stack = build_stack(ds, depth)
        full = self.stack.full()
        u, s, vt = np.linalg.svd(full, full_matrices=False)
        keep = s > 1e-12 * s[0]
        self.sigma = s[keep]
        self.v = vt[keep].T
        u = u[:, keep]
        nv, nx = p * depth, n * (depth + 1)
        self.u_y = u[:nv]
        self.u_x = u[nv : nv + nx]
        self.u_one = u[nv + nx]
        self.c_dim = int(keep.sum())
        self.tikhonov = eps_alpha / self.sigma**2
        self.center_map = (
            self.stack.x_block @ pinv(self.stack.y_block)
            if needs_center
            else None
        )
        self.warm: qp.QpSolution | None = None


class Estimator:
    """Sequential receding-horizon estimator (Algorithm-style loop).

    ``truth`` is optional ground-truth context for the certificate columns:
    a tuple (states, w_seq, v_seq) aligned with the online steps, where
    w/v are the (linearization-residual) disturbance and noise sequences.
    """

    def __init__(
        self,
        hist: TrajectoryDataset,
        params: MheParams,
        truth: tuple | None = None,
        eps_alpha: float = 1e-9,
    ):
        self.params = params
        self.n, self.p = hist.n, hist.p
        if params.prior.size != self.n:
            raise ValueError(
                f"prior has {params.prior.size} entries, state dim is {self.n}"
            )
        needs_center = (
            params.state_constraint is not None
            and params.state_constraint[0] == "data-centered-box"
        )
        self._caches = {
            depth: _WindowCache(hist, depth, self.n, self.p, eps_alpha,
                                needs_center)
            for depth in range(1, params.horizon + 1)
        }
        self.t = 0
        self.published = [params.prior.copy()]
        self._y_buffer: list[np.ndarray] = []
        self.results: list[MheStepResult] = []
        self._truth = None
        if truth is not None:
            states, w_seq, v_seq = truth
            self._truth = (
                np.asarray(states, dtype=float),
                np.asarray(w_seq, dtype=float),
                np.asarray(v_seq, dtype=float),
            )

    def prior_anchor(self, m_t: int) -> np.ndarray:
        """x-bar(t - M_t): the initial prior while the window still touches
        time zero, afterwards the estimate published M steps ago."""
        if self.t <= self.params.horizon:
            return self.params.prior
        return self.published[self.t - m_t]

    def step(self, y_new) -> MheStepResult:
        params = self.params
        self._y_buffer.append(np.asarray(y_new, dtype=float).ravel())
        self.t += 1
        t = self.t
        m_t = min(t, params.horizon)
        cache = self._caches[m_t]
        y_window = np.concatenate(self._y_buffer[t - m_t : t])
        anchor = self.prior_anchor(m_t)

        r, nx, nv = cache.c_dim, self.n * (m_t + 1), self.p * m_t
        dim = r + nx + nv
        sl_x = slice(r, r + nx)
        sl_v = slice(r + nx, dim)
        prior_w, noise_w = _window_weights(params, m_t)
        diag = np.zeros(dim)
        diag[:r] = 2.0 * cache.tikhonov
        diag[r : r + self.n] = 2.0 * prior_w
        diag[sl_v] = 2.0 * np.repeat(noise_w, self.p)
        q = np.zeros(dim)
        q[r : r + self.n] = -2.0 * prior_w * anchor

        a_eq = np.zeros((nv + nx + 1, dim))
        b_eq = np.zeros(nv + nx + 1)
        a_eq[:nv, :r] = cache.u_y
        a_eq[:nv, sl_v] = np.eye(nv)
        b_eq[:nv] = y_window
        a_eq[nv : nv + nx, :r] = cache.u_x
        a_eq[nv : nv + nx, sl_x] = -np.eye(nx)
        a_eq[-1, :r] = cache.u_one
        b_eq[-1] = 1.0

        center = (
            cache.center_map @ y_window if cache.center_map is not None else None
        )
        x_lo, x_hi, v_lo, v_hi = _window_boxes(
            params, m_t, self.n, self.p, center
        )
        lower = np.full(dim, -np.inf)
        upper = np.full(dim, np.inf)
        lower[sl_x], upper[sl_x] = x_lo, x_hi
        lower[sl_v], upper[sl_v] = v_lo, v_hi

        prob = qp.QpProblem(
            p=np.diag(diag), q=q, a_eq=a_eq, b_eq=b_eq,
            lower=lower, upper=upper,
        )
        sol = qp.solve(prob, warm=cache.warm)
        if sol.status == "infeasible":
            raise MheInfeasibleError(
                f"window QP infeasible at t={t} (M_t={m_t}); the state "
                "constraint set excludes every data-consistent trajectory -- "
                "widen the box or check the measurement stream"
            )
        cache.warm = sol

        c = sol.x[:r]
        alpha = cache.v @ (c / cache.sigma)
        x_window = sol.x[sl_x].reshape(m_t + 1, self.n)
        v_window = sol.x[sl_v].reshape(m_t, self.p)
        x_hat = x_window[-1].copy()
        self.published.append(x_hat)

        lhs = rhs = None
        if self._truth is not None:
            states, w_seq, v_seq = self._truth
            lhs, rhs, _ = lyapunov_check(
                states[t - m_t : t + 1],
                x_hat,
                anchor,
                w_seq[t - m_t : t],
                v_seq[t - m_t : t],
                params,
            )
        result = MheStepResult(
            t=t,
            x_hat=x_hat,
            x_window=x_window,
            v_window=v_window,
            alpha=alpha,
            objective=sol.objective,
            qp_status=sol.status,
            qp_iterations=sol.iterations,
            lyap_lhs=lhs,
            lyap_rhs=rhs,
        )
        self.results.append(result)
        return result


def step(est: Estimator, y_new) -> MheStepResult:
    return est.step(y_new)


def run(
    hist: TrajectoryDataset,
    online_outputs,
    params: MheParams,
    truth: tuple | None = None,
):
    """Drive the estimator over a measurement stream.

    Returns (estimates, results): estimates is a (T_f + 1, n) array whose
    row 0 is the prior, results the per-step records.
    """
    outputs = np.atleast_2d(np.asarray(online_outputs, dtype=float))
    t_f = params.final_time if params.final_time is not None else len(outputs)
    if t_f > len(outputs):
        raise ValueError(
            f"final_time {t_f} exceeds the {len(outputs)} available samples"
        )
    est = Estimator(hist, params, truth=truth)
    for k in range(t_f):
        est.step(outputs[k])
    return np.asarray(est.published), est.results


def rges_bound(t, x0_err, w_history, v_history, kappa, mu) -> float:
    """Worst-case error envelope at time t.

    (sqrt(kappa))^t * ||e(0)|| plus the discounted convolution of
    sqrt(mu) * (||w(j)|| + sqrt(2) ||v(j)||) over j < t.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    root = np.sqrt(kappa)
    e0 = np.linalg.norm(np.atleast_1d(np.asarray(x0_err, dtype=float)))
    total = root**t * e0
    w_hist = np.atleast_2d(np.asarray(w_history, dtype=float))
    v_hist = np.atleast_2d(np.asarray(v_history, dtype=float))
    for j in range(t):
        wj = np.linalg.norm(w_hist[j]) if j < len(w_hist) else 0.0
        vj = np.linalg.norm(v_hist[j]) if j < len(v_hist) else 0.0
        total += root ** (t - 1 - j) * np.sqrt(mu) * (wj + np.sqrt(2.0) * vj)
    return float(total)


def lyapunov_check(
    truth_window,
    x_hat_t,
    prior_anchor,
    w_window,
    v_window,
    params: MheParams,
):
    """Evaluate the M-step contraction inequality at one step.

    ``truth_window`` holds x(t - M_t .. t); ``w_window``/``v_window`` hold
    the disturbance and noise over the same interval (oldest first). For
    the nonlinear plant these are the local-linearization residuals.
    Returns (lhs, rhs, holds) with holds iff lhs <= rhs * (1 + 1e-8) + 1e-20;
    the absolute slack covers the exactly-consistent case where the bound
    is identically zero and the estimate carries only solver round-off.
    """
    truth_window = np.atleast_2d(np.asarray(truth_window, dtype=float))
    m_t = len(truth_window) - 1
    lhs = float(np.sum((truth_window[-1] - np.asarray(x_hat_t)) ** 2))
    rhs = 4.0 * params.rho**m_t * float(
        np.sum((truth_window[0] - np.asarray(prior_anchor)) ** 2)
    )
    w_window = np.atleast_2d(np.asarray(w_window, dtype=float))
    v_window = np.atleast_2d(np.asarray(v_window, dtype=float))
    for j in range(1, m_t + 1):
        # slot m_t - j holds the signal at time t - j
        wj = float(np.sum(w_window[m_t - j] ** 2)) if len(w_window) else 0.0
        vj = float(np.sum(v_window[m_t - j] ** 2)) if len(v_window) else 0.0
        rhs += params.rho ** (j - 1) * params.mu * (wj + 2.0 * vj)
    return lhs, rhs, lhs <= rhs * (1.0 + 1e-8) + 1e-20
