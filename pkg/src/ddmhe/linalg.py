"""Dense linear-algebra kernel shared by the rest of the package.

Thin, contract-checked wrappers around LAPACK (via numpy). Everything is
double precision, real, dense. All functions are pure and safe to call
concurrently.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "SvdResult",
    "svd",
    "numeric_rank",
    "pinv",
    "sym_eig",
    "sym_eig_max",
]


class SvdResult(NamedTuple):
    """Full SVD factorization, singular values nonincreasing."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def svd(m) -> SvdResult:
    """Economy SVD of a real matrix.

    Raises a diagnostic error if the LAPACK iteration fails to converge.
    """
    a = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise np.linalg.LinAlgError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u, s, vt)


def _rank_tol(a: np.ndarray, s: np.ndarray, tol: float | None) -> float:
    if tol is not None:
        return float(tol)
    if s.size == 0:
        return 0.0
    return max(a.shape) * np.finfo(float).eps * s[0]


def numeric_rank(m, tol: float | None = None) -> int:
    """Number of singular values above ``tol``.

    The default tolerance is ``max(rows, cols) * eps * sigma_1``, the
    standard numerical-rank rule. Pass an explicit ``tol`` when working
    with measured (noisy) data.
    """
    a = _as_matrix(m)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > _rank_tol(a, s, tol)))


def pinv(m, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse with the same tolerance rule as
    :func:`numeric_rank`."""
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = _rank_tol(a, s, tol)
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def sym_eig(m, sym_tol: float = 1e-10):
    """Full spectrum (ascending) and eigenvectors of a symmetric matrix.

    Rejects input whose asymmetry exceeds ``sym_tol`` relative to its norm.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is not square: {a.shape}")
    scale = max(np.linalg.norm(a), 1.0)
    asym = np.linalg.norm(a - a.T)
    if asym > sym_tol * scale:
        raise ValueError(
            f"matrix is not symmetric: asymmetry {asym:.3e} exceeds "
            f"{sym_tol:.1e} * {scale:.3e}"
        )
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return w, v


def sym_eig_max(m, sym_tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    w, _ = sym_eig(m, sym_tol=sym_tol)
    return float(w[-1])
