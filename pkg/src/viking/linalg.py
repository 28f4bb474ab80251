"""Matrix-free operators, conjugate gradients and kernel projections.

Every routine accepts either a single vector or a block of vectors. Blocks of
right-hand sides are solved as independent CG runs advanced in lockstep, so one
call projects all Monte Carlo samples at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError, ShapeError

SVD_CUTOFF = 1e-10
ROUNDOFF_FLOOR = 1e3 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class LinearMap:
    """Rectangular operator ``R^cols -> R^rows`` given by its two products.

    ``apply`` takes ``(cols,)`` or ``(cols, m)``; ``apply_transpose`` takes
    ``(rows,)`` or ``(rows, m)``.
    """

    rows: int
    cols: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_transpose: Callable[[np.ndarray], np.ndarray]

    @property
    def shape(self):
        return (self.rows, self.cols)

    def gram(self, u):
        """``A A^T u``."""
        return self.apply(self.apply_transpose(u))

    @classmethod
    def from_dense(cls, A) -> "LinearMap":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ShapeError("dense operator must be 2-D")
        At = A.T
        return cls(A.shape[0], A.shape[1], lambda v: A @ v, lambda u: At @ u)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "LinearMap":
        def fwd(v):
            return np.zeros((rows,) + np.shape(v)[1:])

        def bwd(u):
            return np.zeros((cols,) + np.shape(u)[1:])

        return cls(rows, cols, fwd, bwd)


def check_adjoint(A: LinearMap, rng: np.random.Generator, probes: int = 3) -> float:
    """Largest relative mismatch of ``<u, Av>`` vs ``<A^T u, v>`` on random probes."""
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(A.rows)
        v = rng.standard_normal(A.cols)
        lhs = u @ A.apply(v)
        rhs = A.apply_transpose(u) @ v
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


@dataclass(frozen=True)
class CgReport:
    iterations: int
    residual: float
    converged: bool


def cg_solve(gram, b, max_iter: int = 10, tol: float = 1e-6, reorthogonalize: bool = True,
             atol=0.0):
    """Solve ``gram x = b`` for a symmetric positive semi-definite ``gram``.

    ``gram`` is a callable acting on ``(N,)`` or ``(N, m)`` arrays. With
    ``reorthogonalize`` every new residual is Gram-Schmidt orthogonalized against
    all residuals kept from earlier iterations of the same solve, and the iterate
    is the Galerkin solution on the span of the stored residuals. That keeps
    ``b - gram x`` equal to the residual being orthogonalized, which the short
    recurrence of plain CG loses on badly conditioned systems.

    Iteration stops at ``max_iter`` or once the relative residual drops to
    ``tol`` (or its absolute norm to ``atol``, a scalar or one value per
    column). The returned report carries the true relative residual
    ``||gram x - b|| / ||b||`` (the worst one over columns for a block solve).
    """
    b = np.asarray(b, dtype=np.float64)
    single = b.ndim == 1
    B = b[:, None] if single else b
    if not np.all(np.isfinite(B)):
        raise NumericalError("non-finite right-hand side", index=0)

    N, m = B.shape
    X = np.zeros_like(B)
    with np.errstate(over="ignore"):
        bnorm = np.linalg.norm(B, axis=0)
    if not np.all(np.isfinite(bnorm)):
        raise NumericalError("right-hand side norm overflows", index=0)
    stop = np.maximum(tol * bnorm, np.broadcast_to(np.asarray(atol, dtype=np.float64), (m,)))
    live = bnorm > stop
    solver = _galerkin_cg if reorthogonalize else _plain_cg
    X, iters = solver(gram, B, X, live, stop, max_iter)

    safe_bnorm = np.where(bnorm > 0, bnorm, 1.0)
    abs_res = np.linalg.norm(gram(X) - B, axis=0)
    true_res = np.where(bnorm > 0, abs_res / safe_bnorm, 0.0)
    converged = bool(np.all((abs_res <= stop) | (true_res <= tol)))
    report = CgReport(int(iters.max()), float(true_res.max()), converged)
    return (X[:, 0] if single else X), report


def _plain_cg(gram, B, X, live, stop, max_iter):
    R = B.copy()
    P = R.copy()
    rr = np.einsum("nm,nm->m", R, R)
    iters = np.zeros(B.shape[1], dtype=int)
    for k in range(max_iter):
        live &= np.sqrt(rr) > stop
        if not live.any():
            break
        AP = gram(P)
        pAp = np.einsum("nm,nm->m", P, AP)
        # p^T A p <= 0 happens on singular systems once the range is exhausted
        live &= pAp > 0
        if not live.any():
            break
        alpha = np.where(live, rr / np.where(live, pAp, 1.0), 0.0)
        X = X + alpha * P
        R_new = np.where(live, R - alpha * AP, R)
        rr_new = np.einsum("nm,nm->m", R_new, R_new)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(rr_new))):
            raise NumericalError(f"CG breakdown at iteration {k + 1}", index=k + 1)
        beta = np.where(live, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        P = np.where(live, R_new + beta * P, P)
        R, rr = R_new, rr_new
        iters += live
    return X, iters


def _galerkin_cg(gram, B, X, live, stop, max_iter):
    iters = np.zeros(B.shape[1], dtype=int)
    Q, AQ = [], []
    R = B.copy()
    for k in range(max_iter):
        if not live.any():
            break
        V = R
        if Q:
            Qs = np.stack(Q)
            for _ in range(2):
                V = V - np.einsum("inm,im->nm", Qs, np.einsum("inm,nm->im", Qs, V))
        vnorm = np.linalg.norm(V, axis=0)
        # nothing left outside the stored span: the Krylov space is exhausted
        live &= vnorm > 1e-14 * np.linalg.norm(R, axis=0)
        if not live.any():
            break
        Q.append(np.where(live, V / np.where(live, vnorm, 1.0), 0.0))
        AQ.append(gram(Q[-1]))
        Qs, AQs = np.stack(Q), np.stack(AQ)
        T = np.einsum("inm,jnm->mij", Qs, AQs)
        y = _psd_solve(0.5 * (T + T.transpose(0, 2, 1)), np.einsum("inm,nm->mi", Qs, B))
        X_new = np.einsum("inm,mi->nm", Qs, y)
        R_new = B - np.einsum("inm,mi->nm", AQs, y)
        if not (np.all(np.isfinite(X_new)) and np.all(np.isfinite(R_new))):
            raise NumericalError(f"CG breakdown at iteration {k + 1}", index=k + 1)
        X = np.where(live, X_new, X)
        R = np.where(live, R_new, R)
        iters += live
        live &= np.linalg.norm(R, axis=0) > stop
    return X, iters


def _psd_solve(T, rhs):
    """Pseudo-inverse solve of a stack of small symmetric PSD systems."""
    w, U = np.linalg.eigh(T)
    cut = 1e-14 * np.abs(w).max(axis=1, keepdims=True)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return np.einsum("mij,mj->mi", U, inv * np.einsum("mji,mj->mi", U, rhs))


def kernel_project(J: LinearMap, eps, max_iter: int = 10, tol: float = 1e-6,
                   reorthogonalize: bool = True):
    """Euclidean projection of ``eps`` onto ``ker(J)``.

    Solves ``J J^T lam = J eps`` by CG and returns ``eps - J^T lam``. ``eps`` may
    be one vector ``(D,)`` or a stack of samples ``(S, D)``. The CG residual of
    this system equals ``J eps_ker``, so the report's residual is directly the
    annihilation ratio ``||J eps_ker|| / ||J eps||``.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != J.cols:
        raise ShapeError(f"operator has {J.cols} columns, vector has {eps.shape[-1]}")
    if not np.all(np.isfinite(eps)):
        raise NumericalError("non-finite vector passed to kernel_project")
    E = eps.T  # (D,) or (D, S)
    b = J.apply(E)
    # A vector already in the kernel leaves only roundoff in J eps; on a singular
    # Gram that system is inconsistent, so stop at the floating-point floor instead.
    bn = np.linalg.norm(b, axis=0)
    gain = np.linalg.norm(J.apply_transpose(b), axis=0) / np.where(bn > 0, bn, 1.0)
    floor = ROUNDOFF_FLOOR * gain * np.linalg.norm(E, axis=0)
    lam, report = cg_solve(J.gram, b, max_iter=max_iter, tol=tol,
                           reorthogonalize=reorthogonalize, atol=floor)
    return (E - J.apply_transpose(lam)).T, report


def dense_kernel_projector(J, cutoff: float = SVD_CUTOFF) -> np.ndarray:
    """Dense ``U U^T`` onto ``ker(J)`` from an SVD (reference oracle, small D only)."""
    J = np.atleast_2d(np.asarray(J, dtype=np.float64))
    D = J.shape[1]
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    rank = int(np.sum(s > cutoff * s[0])) if s.size and s[0] > 0 else 0
    V_null = Vt[rank:].T
    return V_null @ V_null.T if rank < D else np.zeros((D, D))


def numerical_rank(J, cutoff: float = SVD_CUTOFF) -> int:
    s = np.linalg.svd(np.atleast_2d(J), compute_uv=False)
    return int(np.sum(s > cutoff * s[0])) if s.size and s[0] > 0 else 0
