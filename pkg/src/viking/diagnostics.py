"""Matrix-free vs dense comparison of kernel projections on one Jacobian."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .linalg import LinearMap, dense_kernel_projector, kernel_project, numerical_rank
from .posterior import estimate_rank

MAX_ORACLE_DIM = 5000


def projection_diagnostics(J, rng: np.random.Generator, n_samples: int = 8,
                           cg_iters: int | None = None, cg_tol: float = 1e-10,
                           reorthogonalize: bool = True) -> dict:
    """Project Gaussian draws onto ``ker(J)`` both ways and report how they agree.

    ``cg_iters`` defaults to twice the number of rows. All ratios are the worst
    case over the ``n_samples`` draws.
    """
    J = np.atleast_2d(np.asarray(J, dtype=np.float64))
    N, D = J.shape
    if D > MAX_ORACLE_DIM:
        raise ContractError(f"dense oracle needs D <= {MAX_ORACLE_DIM}, got D = {D}")
    eps = rng.standard_normal((n_samples, D))
    eps_ker, report = kernel_project(LinearMap.from_dense(J), eps, cg_iters or 2 * N, cg_tol,
                                     reorthogonalize)
    eps_im = eps - eps_ker
    P = dense_kernel_projector(J)
    sq = np.einsum("sd,sd->s", eps, eps)
    J_eps = np.linalg.norm(eps @ J.T, axis=1)
    J_ker = np.linalg.norm(eps_ker @ J.T, axis=1)
    annihilation = np.where(J_eps > 0, J_ker / np.where(J_eps > 0, J_eps, 1.0), 0.0)
    rank = numerical_rank(J)
    return {
        "n_rows": N,
        "n_params": D,
        "samples": n_samples,
        "cg_iterations": report.iterations,
        "cg_residual": report.residual,
        "annihilation": float(annihilation.max()),
        "orthogonality": float(np.max(np.abs(np.einsum("sd,sd->s", eps_ker, eps_im)) / sq)),
        "oracle_deviation": float(np.max(np.linalg.norm(eps_ker - eps @ P, axis=1)
                                         / np.sqrt(sq))),
        "r_hat": estimate_rank(eps, eps_ker).r_hat,
        "kernel_dim": D - rank,
        "jacobian_rank": rank,
    }
