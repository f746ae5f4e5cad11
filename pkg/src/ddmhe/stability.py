"""Observer-gain synthesis for unknown systems from one recorded trajectory.

The observability problem is mirrored into a controllability problem for
the dual system, whose input/state data can be read off the recorded
trajectory by pseudoinversion. A pole-placement SDP (LQR performance +
Schur stability + origin-circle region + symmetry/positivity of the
Lyapunov certificate) yields the gain; an outer loop shrinks the circle
radius until the contraction constants (rho0, mu0) certify the estimator
cost weights.

Offset systems are handled by first-differencing the data, which cancels
the constant offsets exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .behavioral import TrajectoryDataset, build_hankel
from .linalg import numeric_rank, pinv, sym_eig, sym_eig_max
from .sdp import (
    DecisionLayout,
    SdpInfeasibleError,
    SdpProblem,
    affine_block,
    solve_sdp,
)

__all__ = [
    "DualData",
    "LmiRegion",
    "SynthesisResult",
    "DualRankError",
    "SynthesisError",
    "build_dual_data",
    "assemble_synthesis_sdp",
    "extract_gain",
    "synthesize",
    "verify_constraints",
]


class DualRankError(ValueError):
    """The recorded data violates the dual-construction rank conditions."""


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class LmiRegion:
    """Origin-centered circle region for pole placement."""

    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ValueError("radius must lie in (0, 1)")


@dataclass(frozen=True)
class DualData:
    """Input/state trajectory of the dual system implied by recorded data.

    x0/x1 are the shifted dual state snapshots (n x T), u0 the dual input
    (p x T); all built by pseudoinversion of the (optionally differenced)
    recorded snapshots.
    """

    x0: np.ndarray
    x1: np.ndarray
    u0: np.ndarray

    def __post_init__(self):
        if not (self.x0.shape[1] == self.x1.shape[1] == self.u0.shape[1]):
            raise ValueError("dual data blocks must share the column count")

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    @property
    def p(self) -> int:
        return self.u0.shape[0]

    @property
    def width(self) -> int:
        return self.x0.shape[1]


@dataclass(frozen=True)
class SynthesisResult:
    gain: np.ndarray  # L, n x p
    a_closed: np.ndarray  # A + L C implied by the data, n x n
    rho0: float
    mu0: float
    radius: float
    lmi_margins: dict
    iterations: int
    radius_trace: tuple


def _snapshots(ds: TrajectoryDataset, differenced: bool):
    x = ds.states.T  # n x (T+1)
    y = ds.outputs.T  # p x T
    if differenced:
        x0 = x[:, 1:-1] - x[:, :-2]
        x1 = x[:, 2:] - x[:, 1:-1]
        y0 = y[:, 1:] - y[:, :-1]
    else:
        x0 = x[:, :-1]
        x1 = x[:, 1:]
        y0 = y
    return x0, x1, y0


def build_dual_data(
    ds: TrajectoryDataset,
    differenced: bool = True,
    rank_tol: float | None = None,
    require_full_rank: bool = True,
) -> DualData:
    """Construct the dual-system data from a recorded trajectory.

    ``differenced`` (the default) first-differences states and outputs so
    constant offsets cancel; disable it only for pure linear systems.
    Raises :class:`DualRankError` naming the violated condition and the
    smallest retained singular value.

    Note the second rank condition can only be met when the recorded data
    carries some excitation beyond the best linear autonomous fit (noise,
    disturbance, or nonlinearity); for exactly linear noise-free data pass
    ``require_full_rank=False`` -- the dual construction itself remains
    exact in that case.
    """
    x0, x1, y0 = _snapshots(ds, differenced)
    n, p = ds.n, ds.p
    s_x0 = np.linalg.svd(x0, compute_uv=False)
    if numeric_rank(x0, rank_tol) != n:
        raise DualRankError(
            f"rank(X0) = {numeric_rank(x0, rank_tol)} < n = {n} "
            f"(smallest singular value {s_x0[-1]:.3e})"
        )
    stacked = np.vstack([x1, y0])
    s_st = np.linalg.svd(stacked, compute_uv=False)
    if require_full_rank and numeric_rank(stacked, rank_tol) != n + p:
        raise DualRankError(
            f"rank([X1; Y0]) = {numeric_rank(stacked, rank_tol)} < n + p = {n + p} "
            f"(smallest singular value {s_st[-1]:.3e})"
        )
    x1_dl = pinv(x0.T)
    both = pinv(stacked.T)
    return DualData(x0=both[:n], x1=x1_dl, u0=both[n:])


def assemble_synthesis_sdp(
    dd: DualData,
    q_dl: np.ndarray | None = None,
    r_dl: np.ndarray | None = None,
    region: LmiRegion = LmiRegion(0.9),
    basis: np.ndarray | None = None,
    strict_margin: float = 1e-8,
) -> SdpProblem:
    """Pose the pole-placement SDP.

    Decision slabs: the trajectory combiner X (width x n, optionally
    parametrized as X = basis @ Z with an orthonormal ``basis`` spanning
    the informative row space -- the constraints only see the products of
    the data blocks with X, so the restriction is lossless), the LQR slack
    W (p x p symmetric), and the symmetry bound beta.
    """
    n, p, width = dd.n, dd.p, dd.width
    q_dl = np.eye(n) if q_dl is None else np.asarray(q_dl, dtype=float)
    r_dl = np.eye(p) if r_dl is None else np.asarray(r_dl, dtype=float)
    for name, mat in (("q_dl", q_dl), ("r_dl", r_dl)):
        w, _ = sym_eig(mat, sym_tol=1e-8)
        if w[0] <= 0:
            raise ValueError(f"{name} must be symmetric positive definite")
    w_eig, v_eig = sym_eig(r_dl, sym_tol=1e-8)
    r_sqrt = (v_eig * np.sqrt(w_eig)) @ v_eig.T

    layout = DecisionLayout()
    if basis is not None:
        if basis.shape[0] != width:
            raise ValueError("basis rows must match the dual data width")
        layout.add_matrix("x_comb", basis.shape[1], n)
    else:
        layout.add_matrix("x_comb", width, n)
    layout.add_symmetric("w_slack", p)
    layout.add_scalar("beta")

    def x_of(z):
        xm = layout.get(z, "x_comb")
        return basis @ xm if basis is not None else xm

    x0d, x1d, u0d = dd.x0, dd.x1, dd.u0
    r_d = region.radius
    eye_n = np.eye(n)

    def performance(z):
        x = x_of(z)
        ux = r_sqrt @ (u0d @ x)
        x0x = x0d @ x
        return np.block([[layout.get(z, "w_slack"), ux], [ux.T, x0x]])

    def stability(z):
        x = x_of(z)
        x0x, x1x = x0d @ x, x1d @ x
        return np.block([[x0x - eye_n, x1x], [x1x.T, x0x]])

    def circle(z):
        x = x_of(z)
        x0x, x1x = x0d @ x, x1d @ x
        return np.block([[-r_d * x0x, x1x], [x1x.T, -r_d * x0x]])

    def symmetry(z):
        x = x_of(z)
        x0x = x0d @ x
        asym = x0x - x0x.T
        return np.block(
            [[-layout.get(z, "beta") * eye_n, asym], [asym.T, -eye_n]]
        )

    def positive(z):
        x = x_of(z)
        top = np.zeros((1 + n, 1 + n))
        top[0, 0] = layout.get(z, "beta")
        top[1:, 1:] = x0d @ x
        return top

    # The strict-feasibility shift has to live on the scale of the LMI
    # coefficients the solver actually sees, i.e. the data products after
    # the basis reduction.
    red = basis if basis is not None else np.eye(width)
    scale = max(
        1.0,
        np.linalg.norm(x0d @ red),
        np.linalg.norm(x1d @ red),
        np.linalg.norm(u0d @ red),
    )
    delta = strict_margin * scale
    blocks = [
        affine_block("performance", performance, layout.dim, "psd", delta),
        affine_block("stability", stability, layout.dim, "psd", delta),
        affine_block("circle", circle, layout.dim, "nsd", delta),
        affine_block("symmetry", symmetry, layout.dim, "nsd", delta),
        affine_block("positive", positive, layout.dim, "psd", delta),
    ]

    # Objective  Trace(Q X0 X) + Trace(W) + beta, linear in the decision.
    c = np.zeros(layout.dim)
    qx0 = (q_dl @ x0d).T  # width x n; <qx0, X> = Trace(Q X0 X)
    coef = basis.T @ qx0 if basis is not None else qx0
    c[: coef.size] = coef.ravel()
    off_w = coef.size
    for k, (i, j) in enumerate(zip(*np.tril_indices(p))):
        if i == j:
            c[off_w + k] = 1.0
    c[-1] = 1.0
    return SdpProblem(c=c, blocks=blocks, layout=layout)


def extract_gain(dd: DualData, x_comb: np.ndarray, cond_limit: float = 1e10):
    """Recover the observer gain and the data-implied closed loop.

    ``x_comb`` is the trajectory combiner (width x n). Returns (L, A_L)
    for the primal system, i.e. A_L = A + L C.
    """
    x_d = dd.x0 @ x_comb
    cond = np.linalg.cond(x_d)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SynthesisError(
            f"X0 @ X is near-singular (condition number {cond:.3e})"
        )
    asym = np.linalg.norm(x_d - x_d.T) / max(np.linalg.norm(x_d), 1e-300)
    if asym > 1e-6:
        raise SynthesisError(
            f"X0 @ X deviates from symmetry by {asym:.3e} relative "
            "(it must realize the Lyapunov certificate)"
        )
    x_d_inv = np.linalg.inv(x_d)
    gain_t = dd.u0 @ x_comb @ x_d_inv  # L^T, p x n
    a_l_t = dd.x1 @ x_comb @ x_d_inv  # (A + L C)^T
    return gain_t.T, a_l_t.T


def verify_constraints(result: SynthesisResult, rho: float, mu: float) -> bool:
    """Gate used by the estimator weights: rho in [rho0, 1), mu >= mu0."""
    rho0 = 6.0 * sym_eig_max(result.a_closed.T @ result.a_closed)
    mu0 = 6.0 * sym_eig_max(result.gain.T @ result.gain)
    return mu0 <= mu and rho0 <= rho < 1.0


def synthesize(
    ds: TrajectoryDataset,
    r_d0: float = 0.9,
    q_dl: np.ndarray | None = None,
    r_dl: np.ndarray | None = None,
    differenced: bool = True,
    max_halvings: int = 20,
    rank_tol: float | None = None,
    sdp_tol: float = 1e-7,
) -> SynthesisResult:
    """Radius-shrinking pole-placement loop.

    Solves the synthesis SDP at the current circle radius, computes the
    contraction constants, and returns as soon as rho0 < 1; otherwise the
    radius halves (hard cap ``max_halvings``). Each failure mode is a
    distinct error: data rank, SDP infeasibility, cap exceeded.
    """
    dd = build_dual_data(ds, differenced=differenced, rank_tol=rank_tol)
    # The constraints see X only through [X0; U0; X1] @ X: restrict X to
    # that row space (dimension <= 2n + p, independent of data length).
    # Whitening the basis (V / sigma) turns every data product into a slice
    # of an orthonormal matrix, which keeps the LMI coefficients O(1) even
    # when the pseudoinverse has amplified near-degenerate directions.
    stacked = np.vstack([dd.x0, dd.u0, dd.x1])
    _, s, vt = np.linalg.svd(stacked, full_matrices=False)
    keep = s > max(stacked.shape) * np.finfo(float).eps * s[0]
    b = vt[keep].T / s[keep]

    radius = r_d0
    trace = []
    total_iters = 0
    for _ in range(max_halvings + 1):
        problem = assemble_synthesis_sdp(
            dd, q_dl=q_dl, r_dl=r_dl, region=LmiRegion(radius), basis=b
        )
        try:
            sol = solve_sdp(problem, tol=sdp_tol)
        except SdpInfeasibleError as exc:
            raise SynthesisError(
                f"synthesis SDP infeasible at radius {radius:.6g}: {exc}"
            ) from exc
        x_comb = b @ sol.slab(problem, "x_comb")
        gain, a_closed = extract_gain(dd, x_comb)
        rho0 = 6.0 * sym_eig_max(a_closed.T @ a_closed)
        mu0 = 6.0 * sym_eig_max(gain.T @ gain)
        total_iters += sol.iterations
        trace.append((radius, rho0, mu0))
        if rho0 < 1.0:
            return SynthesisResult(
                gain=gain,
                a_closed=a_closed,
                rho0=rho0,
                mu0=mu0,
                radius=radius,
                lmi_margins=sol.block_margins,
                iterations=total_iters,
                radius_trace=tuple(trace),
            )
        radius /= 2.0
    raise SynthesisError(
        f"radius-halving cap ({max_halvings}) exceeded; "
        f"last rho0 = {trace[-1][1]:.6g}"
    )
