"""Hankel-matrix machinery for autonomous systems with constant offsets.

A recorded state/output trajectory that is rich enough (the rank test in
:func:`check_rank_condition`) spans every trajectory of the underlying
linear system; :func:`trajectory_membership` applies that test to a
candidate window. Trajectories travel as :class:`TrajectoryDataset` and
round-trip through a plain CSV format (see :func:`save_trajectory_csv`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linalg import numeric_rank, svd

__all__ = [
    "TrajectoryDataset",
    "HankelStack",
    "RankConditionError",
    "MembershipResult",
    "build_hankel",
    "check_rank_condition",
    "build_stack",
    "trajectory_membership",
    "load_trajectory_csv",
    "save_trajectory_csv",
]


class RankConditionError(ValueError):
    """The recorded trajectory is not rich enough for data-driven use."""


@dataclass(frozen=True)
class TrajectoryDataset:
    """A recorded state/output trajectory with one extra state sample.

    ``states`` has shape (T+1, n) and ``outputs`` shape (T, p): states run
    one step past the last output, matching how an autonomous system is
    observed (the final state has no paired measurement yet).
    """

    sample_interval: float
    states: np.ndarray
    outputs: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")
        if states.shape[0] != outputs.shape[0] + 1:
            raise ValueError(
                f"states must have exactly one more sample than outputs: "
                f"{states.shape[0]} states vs {outputs.shape[0]} outputs"
            )
        if states.shape[1] < 1 or outputs.shape[1] < 1:
            raise ValueError("state and output dimensions must be >= 1")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(outputs))):
            raise ValueError("trajectory contains non-finite samples")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]

    @property
    def length(self) -> int:
        """Number of recorded outputs (T)."""
        return self.outputs.shape[0]


@dataclass(frozen=True)
class HankelStack:
    """The stacked matrix [H_L(y); H_{L+1}(x); 1^T] used as the MHE
    equality constraint, blocks in that row order."""

    depth: int
    y_block: np.ndarray
    x_block: np.ndarray
    ones_row: np.ndarray

    def __post_init__(self):
        w = self.ones_row.shape[1]
        if self.y_block.shape[1] != w or self.x_block.shape[1] != w:
            raise ValueError("all blocks must have the same column count")

    @property
    def width(self) -> int:
        return self.ones_row.shape[1]

    def full(self) -> np.ndarray:
        return np.vstack([self.y_block, self.x_block, self.ones_row])


def build_hankel(seq, depth: int) -> np.ndarray:
    """Block-Hankel matrix of a vector sequence.

    ``seq`` has shape (N, d); the result has shape (depth*d, N-depth+1)
    and column j is the window of ``depth`` consecutive samples starting
    at offset j, stacked as one column vector.
    """
    a = np.atleast_2d(np.asarray(seq, dtype=float))
    if a.shape[0] == 1 and a.shape[1] > 1 and np.asarray(seq).ndim == 1:
        a = a.T
    n_samples, d = a.shape
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > n_samples:
        raise ValueError(
            f"depth {depth} exceeds sequence length {n_samples}"
        )
    cols = n_samples - depth + 1
    h = np.empty((depth * d, cols))
    for j in range(cols):
        h[:, j] = a[j : j + depth].ravel()
    return h


def check_rank_condition(
    ds: TrajectoryDataset, depth: int, tol: float | None = None
):
    """Test whether the dataset is rich enough at window depth ``depth``.

    Returns ``(ok, achieved_rank, smallest_gap)`` where ``ok`` means the
    stacked matrix [H_1(x[0:T-L]); 1^T] has rank n+1 and ``smallest_gap``
    is the smallest singular value retained (useful to judge the margin
    on measured data).
    """
    t_len = ds.length
    if t_len < depth + ds.n:
        raise RankConditionError(
            f"data length T={t_len} violates T >= L + n = {depth + ds.n}"
        )
    x_l = build_hankel(ds.states[: t_len - depth + 1], 1)
    stacked = np.vstack([x_l, np.ones((1, x_l.shape[1]))])
    rank = numeric_rank(stacked, tol)
    s = np.linalg.svd(stacked, compute_uv=False)
    gap = float(s[rank - 1]) if rank > 0 else 0.0
    return rank == ds.n + 1, rank, gap


def build_stack(
    ds: TrajectoryDataset,
    depth: int,
    tol: float | None = None,
    allow_rank_failure: bool = False,
) -> HankelStack:
    """Assemble the MHE equality-constraint stack at window depth ``depth``."""
    ok, rank, _ = check_rank_condition(ds, depth, tol)
    if not ok and not allow_rank_failure:
        raise RankConditionError(
            f"rank condition failed: achieved rank {rank}, need {ds.n + 1} "
            "(pass allow_rank_failure=True to proceed anyway)"
        )
    x_block = build_hankel(ds.states, depth + 1)
    y_block = build_hankel(ds.outputs, depth)
    width = ds.length - depth + 1
    return HankelStack(
        depth=depth,
        y_block=y_block,
        x_block=x_block,
        ones_row=np.ones((1, width)),
    )


class MembershipResult(NamedTuple):
    accepted: bool
    alpha: np.ndarray
    residual: float
    threshold: float


def trajectory_membership(
    stack: HankelStack, cand_x, cand_y, rel_tol: float = 1e-7
) -> MembershipResult:
    """Test whether a candidate (L+1)-state / L-output window belongs to
    the behavior spanned by the stack.

    Returns the minimum-norm combination coefficients. Membership is
    declared when the stacked-equation residual is below
    ``rel_tol * (1 + ||candidate||)``; a refusal is a value, not an error.
    """
    cand_x = np.asarray(cand_x, dtype=float).ravel()
    cand_y = np.asarray(cand_y, dtype=float).ravel()
    if cand_x.size != stack.x_block.shape[0]:
        raise ValueError(
            f"candidate state window has {cand_x.size} entries, stack "
            f"expects {stack.x_block.shape[0]}"
        )
    if cand_y.size != stack.y_block.shape[0]:
        raise ValueError(
            f"candidate output window has {cand_y.size} entries, stack "
            f"expects {stack.y_block.shape[0]}"
        )
    g = stack.full()
    target = np.concatenate([cand_y, cand_x, [1.0]])
    u, s, vt = svd(g)
    cutoff = max(g.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    keep = s > cutoff
    alpha = vt[keep].T @ ((u[:, keep].T @ target) / s[keep])
    residual = float(np.linalg.norm(g @ alpha - target))
    threshold = rel_tol * (1.0 + float(np.linalg.norm(target)))
    return MembershipResult(residual < threshold, alpha, residual, threshold)


# -- CSV interface -----------------------------------------------------------
#
# Header: t,x1..xn,y1..yp; one row per sample, the final state row carries
# empty output cells. UTF-8, '.' decimal, LF line ends.


def save_trajectory_csv(ds: TrajectoryDataset, path) -> None:
    n, p = ds.n, ds.p
    header = (
        "t,"
        + ",".join(f"x{i+1}" for i in range(n))
        + ","
        + ",".join(f"y{i+1}" for i in range(p))
    )
    lines = [header]
    for k in range(ds.states.shape[0]):
        t = (ds.start_index + k) * ds.sample_interval
        cells = [repr(float(t))] + [repr(float(v)) for v in ds.states[k]]
        if k < ds.outputs.shape[0]:
            cells += [repr(float(v)) for v in ds.outputs[k]]
        else:
            cells += [""] * p
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory_csv(path) -> TrajectoryDataset:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty file")
    header = raw[0].split(",")
    if header[0] != "t":
        raise ValueError(f"{path}:1: header must start with 't'")
    n = sum(1 for h in header if h.startswith("x"))
    p = sum(1 for h in header if h.startswith("y"))
    if n < 1 or p < 1 or len(header) != 1 + n + p:
        raise ValueError(f"{path}:1: malformed header {header}")
    times, states, outputs = [], [], []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}"
            )
        try:
            times.append(float(cells[0]))
            states.append([float(c) for c in cells[1 : 1 + n]])
            if any(c.strip() for c in cells[1 + n :]):
                outputs.append([float(c) for c in cells[1 + n :]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    if len(states) != len(outputs) + 1:
        raise ValueError(
            f"{path}: expected exactly one trailing state-only row, got "
            f"{len(states)} states and {len(outputs)} outputs"
        )
    if len(times) < 2:
        raise ValueError(f"{path}: need at least two samples")
    ts = times[1] - times[0]
    start = int(round(times[0] / ts)) if ts > 0 else 0
    return TrajectoryDataset(
        sample_interval=ts,
        states=np.array(states),
        outputs=np.array(outputs),
        start_index=start,
    )
