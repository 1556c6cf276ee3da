"""Constrained least-squares building blocks used by the alternating solver.

Four independent routines, each usable standalone:

* :func:`omp_1sparse`   -- exact 1-sparse recovery (single greedy pick).
* :func:`lasso`         -- l1-regularized least squares via cyclic coordinate
  descent with soft thresholding, vectorized across target columns.
* :func:`smoothed_ls`   -- least squares with a squared temporal
  first-difference penalty, solved exactly through an eigen/tridiagonal route.
* :func:`rls_gamma`     -- ridge-regularized closed form for the
  channel-perturbation matrix.

Plus :func:`pseudo_inverse`, a Moore-Penrose pseudo-inverse with a relative
singular-value cutoff shared by every module that needs one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solveh_banded


@dataclass(frozen=True)
class SolverTolerances:
    """Inner-loop stopping knobs for the iterative solvers.

    ``rel_tol`` stops coordinate descent once every coefficient moves by less
    than ``rel_tol * (1 + |coefficient|)`` in a sweep; ``abs_zero`` snaps
    smaller magnitudes to exactly zero on exit (0 disables snapping).
    """

    max_inner_iters: int = 500
    rel_tol: float = 1e-10
    abs_zero: float = 0.0

    def __post_init__(self):
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.abs_zero < 0:
            raise ValueError("abs_zero must be >= 0")


DEFAULT_TOL = SolverTolerances()


def pseudo_inverse(m) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``max(rows, cols) * eps`` relative to the largest
    one are treated as zero, which keeps near-rank-deficient Khatri-Rao
    dictionaries from blowing up.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("pseudo_inverse expects a nonempty matrix")
    return np.linalg.pinv(m, rcond=max(m.shape) * np.finfo(float).eps)


class OmpResult(NamedTuple):
    coeffs: np.ndarray  # length-P vector with at most one nonzero
    support: int        # selected column index (0 when nothing was detected)
    detected: bool      # False when the input had no correlation with any column


def omp_1sparse(u, d) -> OmpResult:
    """Best single-column least-squares fit of ``u`` over the columns of ``d``.

    The support is ``argmax_j |<u, d_j>| / ||d_j||`` (ties go to the lowest
    index, all-zero columns are skipped) and the coefficient is the exact
    one-column least-squares solution on the selected column.  Correlations
    are normalized by the column norm: pathloss dictionaries have columns
    whose scales differ by orders of magnitude, and without the
    normalization columns near a sensor always win.
    """
    u = np.asarray(u, dtype=float).ravel()
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != u.shape[0]:
        raise ValueError(f"dictionary shape {d.shape} does not match vector length {u.shape[0]}")
    coeffs = np.zeros(d.shape[1])
    sq_norms = np.einsum("ij,ij->j", d, d)
    ok = sq_norms > 0
    if not np.any(ok):
        return OmpResult(coeffs, 0, False)
    scores = np.zeros(d.shape[1])
    corr = d.T @ u
    scores[ok] = np.abs(corr[ok]) / np.sqrt(sq_norms[ok])
    j = int(np.argmax(scores))
    if scores[j] == 0.0:
        return OmpResult(coeffs, 0, False)
    coeffs[j] = corr[j] / sq_norms[j]
    return OmpResult(coeffs, j, True)


class LassoResult(NamedTuple):
    coeffs: np.ndarray      # (n_targets, R)
    converged: bool
    objective: np.ndarray   # total objective after each coordinate sweep


def lasso_objective(yt, d, coeffs, lam: float) -> float:
    """Value of ``||yt - d @ coeffs.T||_F^2 + lam * sum|coeffs|``."""
    resid = np.asarray(yt, float) - np.asarray(d, float) @ np.asarray(coeffs, float).T
    return float(np.sum(resid * resid) + lam * np.sum(np.abs(coeffs)))


def lasso(yt, d, lam: float, tol: SolverTolerances = DEFAULT_TOL,
          coeffs0=None) -> LassoResult:
    """Minimize ``||yt - d @ B.T||_F^2 + lam * sum_r ||b_r||_1`` over B.

    Every column of ``yt`` is an independent lasso problem over the columns
    of ``d``; they are solved jointly by cyclic coordinate descent with soft
    thresholding, one coordinate at a time across all targets.  Each
    coordinate update is the exact scalar minimizer, so the objective never
    increases between sweeps.  ``coeffs0`` warm-starts the iteration.

    Runs at most ``tol.max_inner_iters`` sweeps; if the tolerance is not met
    by then the current iterate is returned with ``converged=False`` rather
    than raising (callers alternating over blocks tolerate inexact solves).
    """
    yt = np.asarray(yt, dtype=float)
    d = np.asarray(d, dtype=float)
    if yt.ndim != 2 or d.ndim != 2 or yt.shape[0] != d.shape[0]:
        raise ValueError(f"incompatible shapes {yt.shape} and {d.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    n_coord = d.shape[1]
    n_targets = yt.shape[1]
    if n_coord == 0 or n_targets == 0:
        raise ValueError("lasso needs at least one dictionary column and one target")

    gram = d.T @ d                       # (R, R)
    corr = d.T @ yt                      # (R, K)
    sq_data = float(np.sum(yt * yt))
    diag = np.diag(gram).copy()
    active = diag > 0                    # all-zero dictionary columns stay at 0

    if coeffs0 is None:
        beta = np.zeros((n_coord, n_targets))
    else:
        beta = np.array(coeffs0, dtype=float).T.copy()
        if beta.shape != (n_coord, n_targets):
            raise ValueError("coeffs0 shape does not match the problem")
        beta[~active, :] = 0.0
    thresh = lam / 2.0

    history = []
    converged = False
    for _ in range(tol.max_inner_iters):
        max_rel_change = 0.0
        for j in range(n_coord):
            if not active[j]:
                continue
            rho = corr[j] - gram[j] @ beta + diag[j] * beta[j]
            new = np.sign(rho) * np.maximum(np.abs(rho) - thresh, 0.0) / diag[j]
            change = np.max(np.abs(new - beta[j]) / (1.0 + np.abs(new)))
            max_rel_change = max(max_rel_change, float(change))
            beta[j] = new
        # objective from the quadratic expansion; O(R^2 K) per sweep
        fit = sq_data - 2.0 * np.sum(corr * beta) + np.sum(beta * (gram @ beta))
        history.append(fit + lam * np.sum(np.abs(beta)))
        if max_rel_change < tol.rel_tol:
            converged = True
            break

    if tol.abs_zero > 0:
        beta[np.abs(beta) < tol.abs_zero] = 0.0
    return LassoResult(beta.T, converged, np.asarray(history))


def _diff_gram_bands(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and superdiagonal of L'L for the (n-1) x n first-difference L."""
    diag = np.full(n, 2.0)
    diag[0] = 1.0
    diag[-1] = 1.0
    if n == 1:
        diag[0] = 0.0
    off = np.full(n - 1, -1.0)
    return diag, off


def smoothed_ls(y3, d, lam: float) -> np.ndarray:
    """Exact minimizer of ``||y3 - C @ d.T||_F^2 + lam * ||L @ C||_F^2``
    where L is the first-difference matrix along the rows of C.

    Eigendecompose the small Gram matrix ``d.T @ d = V S V'``; in the rotated
    basis each column decouples into a symmetric tridiagonal system
    ``(s_j I + lam L'L) c_j = rhs_j`` solved directly, then rotate back.
    Cost after the one-off setup is O(T) per column.
    """
    y3 = np.asarray(y3, dtype=float)
    d = np.asarray(d, dtype=float)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if y3.ndim != 2 or d.ndim != 2 or y3.shape[1] != d.shape[0]:
        raise ValueError(f"incompatible shapes {y3.shape} and {d.shape}")
    if d.shape[1] == 0:
        raise ValueError("smoothed_ls needs at least one dictionary column")
    n = y3.shape[0]
    gram = d.T @ d
    s, v = np.linalg.eigh(gram)
    rhs = y3 @ d @ v                                  # (T, R)
    cutoff = max(gram.shape) * np.finfo(float).eps * max(float(s[-1]), 0.0)

    diag_ltl, off_ltl = _diff_gram_bands(n)
    c_rot = np.zeros_like(rhs)
    for j in range(rhs.shape[1]):
        sj = float(s[j])
        if sj <= cutoff:
            if lam == 0.0 or n == 1:
                continue  # pseudo-inverse behavior: zero out the dead direction
            c_rot[:, j] = _dense_smoothing_solve(max(sj, 0.0), lam, diag_ltl, off_ltl, rhs[:, j])
        elif lam == 0.0 or n == 1:
            c_rot[:, j] = rhs[:, j] / sj
        else:
            ab = np.zeros((2, n))
            ab[0, 1:] = lam * off_ltl
            ab[1] = sj + lam * diag_ltl
            try:
                c_rot[:, j] = solveh_banded(ab, rhs[:, j])
            except np.linalg.LinAlgError:
                # sj barely above the cutoff: the smallest eigenvalue sits at
                # rounding level and Cholesky can fail; fall back to a
                # minimum-norm dense solve
                c_rot[:, j] = _dense_smoothing_solve(sj, lam, diag_ltl, off_ltl, rhs[:, j])
    return c_rot @ v.T


def _dense_smoothing_solve(sj, lam, diag_ltl, off_ltl, rhs):
    n = diag_ltl.shape[0]
    m = lam * (np.diag(diag_ltl) + np.diag(off_ltl, 1) + np.diag(off_ltl, -1))
    m[np.diag_indices(n)] += sj
    return np.linalg.lstsq(m, rhs, rcond=None)[0]


def rls_gamma(e1, x1, lam: float) -> np.ndarray:
    """Closed-form ridge update ``e1 @ x1.T @ inv(x1 @ x1.T + lam I)``.

    Computed through a Cholesky solve of the symmetric positive definite
    system rather than an explicit inverse; ``lam > 0`` guarantees
    definiteness.
    """
    e1 = np.asarray(e1, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if e1.ndim != 2 or x1.ndim != 2 or e1.shape[1] != x1.shape[1]:
        raise ValueError(f"incompatible shapes {e1.shape} and {x1.shape}")
    g = x1 @ x1.T
    g[np.diag_indices_from(g)] += lam
    return cho_solve(cho_factor(g, lower=True), x1 @ e1.T).T
