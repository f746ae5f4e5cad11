"""Small dense semidefinite-program solver.

Minimizes a linear functional of a decision vector subject to affine LMI
blocks (each declared with a sense: positive or negative semidefinite with
a strict margin). Path-following log-det barrier with Newton steps and a
Phase-I feasibility stage; problem sizes here are tiny (blocks of a few
rows, decision dimensions up to a few hundred), so everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import sym_eig

__all__ = [
    "DecisionLayout",
    "LmiBlock",
    "SdpProblem",
    "SdpSolution",
    "SdpInfeasibleError",
    "affine_block",
    "lmi_margin",
    "solve_sdp",
]


class SdpInfeasibleError(RuntimeError):
    pass


class DecisionLayout:
    """Named slabs of a flat decision vector.

    Matrix slabs are stored row-major; symmetric slabs store the lower
    triangle (vech) so symmetry holds by construction.
    """

    def __init__(self):
        self._slabs: dict[str, tuple[int, tuple, str]] = {}
        self.dim = 0

    def add_matrix(self, name: str, rows: int, cols: int) -> None:
        self._slabs[name] = (self.dim, (rows, cols), "matrix")
        self.dim += rows * cols

    def add_symmetric(self, name: str, size: int) -> None:
        self._slabs[name] = (self.dim, (size, size), "symmetric")
        self.dim += size * (size + 1) // 2

    def add_scalar(self, name: str) -> None:
        self._slabs[name] = (self.dim, (), "scalar")
        self.dim += 1

    def get(self, z: np.ndarray, name: str):
        off, shape, kind = self._slabs[name]
        if kind == "scalar":
            return float(z[off])
        if kind == "matrix":
            r, c = shape
            return z[off : off + r * c].reshape(r, c)
        size = shape[0]
        m = np.zeros((size, size))
        idx = np.tril_indices(size)
        m[idx] = z[off : off + len(idx[0])]
        return m + np.tril(m, -1).T

    def names(self):
        return list(self._slabs)


@dataclass(frozen=True)
class LmiBlock:
    """Affine symmetric-matrix map F(z) = f0 + sum_i z_i * coeffs[i].

    sense "psd" demands F(z) >= delta*I; "nsd" demands F(z) <= -delta*I.
    ``delta`` realizes the strict inequality as a numerical margin.
    """

    name: str
    f0: np.ndarray
    coeffs: np.ndarray  # (d, m, m)
    sense: str = "psd"
    delta: float = 0.0

    def __post_init__(self):
        if self.sense not in ("psd", "nsd"):
            raise ValueError(f"unknown sense {self.sense!r}")

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.f0 + np.tensordot(z, self.coeffs, axes=1)

    def normalized(self):
        """(g0, g_coeffs) such that the constraint reads G(z) >= 0."""
        sign = 1.0 if self.sense == "psd" else -1.0
        m = self.f0.shape[0]
        return sign * self.f0 - self.delta * np.eye(m), sign * self.coeffs


def affine_block(
    name: str,
    fn,
    dim: int,
    sense: str = "psd",
    delta: float = 0.0,
) -> LmiBlock:
    """Build a block by probing an affine matrix-valued callable with unit
    vectors. ``fn`` must be affine in its flat decision argument."""
    f0 = np.asarray(fn(np.zeros(dim)), dtype=float)
    f0 = 0.5 * (f0 + f0.T)
    coeffs = np.empty((dim,) + f0.shape)
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        fi = np.asarray(fn(e), dtype=float) - f0
        coeffs[i] = 0.5 * (fi + fi.T)
    return LmiBlock(name=name, f0=f0, coeffs=coeffs, sense=sense, delta=delta)


@dataclass(frozen=True)
class SdpProblem:
    c: np.ndarray
    blocks: tuple
    layout: DecisionLayout | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).ravel())
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for b in self.blocks:
            if b.coeffs.shape[0] != self.c.size:
                raise ValueError(
                    f"block {b.name!r} coefficient count {b.coeffs.shape[0]} "
                    f"does not match decision dimension {self.c.size}"
                )

    @property
    def dim(self) -> int:
        return self.c.size


@dataclass
class SdpSolution:
    z: np.ndarray
    status: str  # "optimal" | "infeasible" | "max-iter"
    objective: float
    block_margins: dict
    iterations: int
    most_violated: str | None = None

    def slab(self, problem: SdpProblem, name: str):
        return problem.layout.get(self.z, name)


def lmi_margin(block: LmiBlock, z) -> float:
    """Sense-adjusted smallest eigenvalue of the evaluated block (before
    the strict-margin shift); positive means strictly inside."""
    val = block.value(np.asarray(z, dtype=float).ravel())
    sign = 1.0 if block.sense == "psd" else -1.0
    w = np.linalg.eigvalsh(0.5 * sign * (val + val.T))
    return float(w[0])


def _chol_or_none(m):
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


def _barrier_newton(c_eff, g0s, gcs, z, t, max_newton, tol=1e-10):
    """Minimize t*c_eff.z - sum_j logdet(G_j(z)) from a strictly feasible z."""
    d = z.size

    def blocks_at(zz):
        return [g0 + np.tensordot(zz, gc, axes=1) for g0, gc in zip(g0s, gcs)]

    def f_val(zz, vals=None):
        vals = vals if vals is not None else blocks_at(zz)
        total = t * float(c_eff @ zz)
        for v in vals:
            ch = _chol_or_none(v)
            if ch is None:
                return np.inf, None
            total -= 2.0 * float(np.sum(np.log(np.diag(ch))))
        return total, vals

    f_cur, vals = f_val(z)
    if not np.isfinite(f_cur):
        raise SdpInfeasibleError("barrier started from an infeasible point")
    iters = 0
    for _ in range(max_newton):
        iters += 1
        grad = t * c_eff.copy()
        hess = np.zeros((d, d))
        try:
            s_invs = [np.linalg.inv(v) for v in vals]
        except np.linalg.LinAlgError:
            # Slack matrix numerically singular at extreme centering: the
            # current iterate is the best strictly feasible point we have.
            break
        for s_inv, gc in zip(s_invs, gcs):
            flat_f = gc.reshape(d, -1)
            grad -= flat_f @ s_inv.ravel()
            tm = np.einsum("ab,ibc,cd->iad", s_inv, gc, s_inv)
            hess += tm.reshape(d, -1) @ flat_f.T
        hess = 0.5 * (hess + hess.T)
        try:
            dz = np.linalg.solve(hess + 1e-12 * np.trace(hess) / d * np.eye(d), -grad)
        except np.linalg.LinAlgError:
            dz, *_ = np.linalg.lstsq(hess, -grad, rcond=None)
        decrement = float(-grad @ dz)
        if decrement < 0:
            dz = -dz
            decrement = -decrement
        if decrement / 2 < tol:
            break
        step = 1.0
        for _ in range(60):
            f_new, vals_new = f_val(z + step * dz)
            if np.isfinite(f_new) and f_new <= f_cur - 0.25 * step * decrement:
                break
            step *= 0.5
        else:
            break
        z = z + step * dz
        f_cur, vals = f_new, vals_new
    return z, iters


def _strictly_feasible_point(problem: SdpProblem, max_iter: int):
    """Phase I: minimize the common eigenvalue shift s with G_j(z)+sI >= 0."""
    d = problem.dim
    norm_blocks = [b.normalized() for b in problem.blocks]
    z = np.zeros(d)
    lam_min = min(
        np.linalg.eigvalsh(g0 + np.tensordot(z, gc, axes=1))[0]
        for g0, gc in norm_blocks
    )
    scale = max(1.0, *(np.linalg.norm(g0) for g0, _ in norm_blocks))
    if lam_min > 1e-9 * scale:
        return z, 0
    # Extended problem in (z, s).
    g0s, gcs = [], []
    for g0, gc in norm_blocks:
        m = g0.shape[0]
        ext = np.concatenate([gc, np.eye(m)[None, :, :]], axis=0)
        g0s.append(g0)
        gcs.append(ext)
    c_ext = np.zeros(d + 1)
    c_ext[-1] = 1.0
    ze = np.concatenate([z, [-lam_min + scale]])
    total_iters = 0
    t = 1.0
    target = 1e-6 * scale
    while total_iters < max_iter:
        ze, it = _barrier_newton(c_ext, g0s, gcs, ze, t, max_newton=50)
        total_iters += it
        s = ze[-1]
        if s < -target:
            return ze[:d], total_iters
        m_total = sum(g0.shape[0] for g0, _ in norm_blocks)
        if m_total / t < 0.1 * target and s >= -target:
            break
        t *= 10.0
    # Infeasible (or could not certify strict feasibility).
    zf = ze[:d]
    margins = {
        b.name: lmi_margin(b, zf) - b.delta for b in problem.blocks
    }
    worst = min(margins, key=margins.get)
    raise SdpInfeasibleError(
        f"Phase I failed; most violated block: {worst!r} "
        f"(margin {margins[worst]:.3e})"
    )


def solve_sdp(
    problem: SdpProblem, tol: float = 1e-7, max_iter: int = 500
) -> SdpSolution:
    """Path-following solve. On success every block margin (including the
    strict shift) is reported; infeasibility raises with the most violated
    block named."""
    d = problem.dim
    norm_blocks = [b.normalized() for b in problem.blocks]
    g0s = [g0 for g0, _ in norm_blocks]
    gcs = [gc for _, gc in norm_blocks]
    m_total = sum(g0.shape[0] for g0 in g0s)

    z, used = _strictly_feasible_point(problem, max_iter)

    status = "max-iter"
    t = 1.0
    total_iters = used
    while total_iters < max_iter:
        z, it = _barrier_newton(problem.c, g0s, gcs, z, t, max_newton=50)
        total_iters += max(it, 1)
        gap = m_total / t
        if gap < tol * (1.0 + abs(float(problem.c @ z))):
            status = "optimal"
            break
        t *= 10.0

    margins = {}
    for b in problem.blocks:
        val = b.value(z)
        sign = 1.0 if b.sense == "psd" else -1.0
        w, _ = sym_eig(sign * val, sym_tol=1e-6)
        margins[b.name] = float(w[0]) - b.delta
    return SdpSolution(
        z=z,
        status=status,
        objective=float(problem.c @ z),
        block_margins=margins,
        iterations=total_iters,
    )
