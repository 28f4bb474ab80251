import numpy as np
import pytest
from hypothesis import given, strategies as st

from viking.errors import NumericalError, ShapeError
from viking.linalg import (LinearMap, cg_solve, check_adjoint, dense_kernel_projector,
                           kernel_project, numerical_rank)


def spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def duplicated_rows(rng, n_unique=6, copies=4, D=30, scale=1e-4):
    """Rows repeated with tiny perturbations: a badly conditioned Gram matrix."""
    base = rng.standard_normal((n_unique, D))
    rows = [base + scale * rng.standard_normal(base.shape) for _ in range(copies)]
    return np.vstack(rows)


def test_cg_solves_spd_system(rng):
    A = spd(rng, 8)
    b = rng.standard_normal(8)
    x, rep = cg_solve(lambda v: A @ v, b, max_iter=8, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9)
    assert rep.converged and rep.iterations <= 8


def test_cg_block_columns_are_independent(rng):
    A = spd(rng, 6)
    B = rng.standard_normal((6, 3))
    X, _ = cg_solve(lambda v: A @ v, B, max_iter=6, tol=1e-12)
    for j in range(3):
        xj, _ = cg_solve(lambda v: A @ v, B[:, j], max_iter=6, tol=1e-12)
        np.testing.assert_allclose(X[:, j], xj, rtol=1e-10, atol=1e-12)


def test_cg_zero_rhs_returns_zero_immediately():
    x, rep = cg_solve(lambda v: v, np.zeros(4))
    assert np.all(x == 0) and rep.iterations == 0 and rep.converged


def test_cg_identity_converges_in_one_step(rng):
    b = rng.standard_normal(5)
    x, rep = cg_solve(lambda v: v, b, tol=1e-14)
    np.testing.assert_allclose(x, b)
    assert rep.iterations == 1


def test_cg_reports_true_residual_when_not_converged(rng):
    A = spd(rng, 20, cond=1e6)
    b = rng.standard_normal(20)
    x, rep = cg_solve(lambda v: A @ v, b, max_iter=2, tol=1e-12)
    assert not rep.converged
    assert rep.residual == pytest.approx(np.linalg.norm(A @ x - b) / np.linalg.norm(b))


def test_cg_rejects_nonfinite_rhs():
    with pytest.raises(NumericalError):
        cg_solve(lambda v: v, np.array([1.0, np.nan]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cg_raises_with_iteration_on_breakdown():
    with pytest.raises(NumericalError) as info:
        cg_solve(lambda v: v * np.array([[1.0], [np.inf]]), np.array([1.0, 1.0]), tol=1e-14)
    assert info.value.index == 1


def test_cg_rejects_overflowing_rhs():
    with pytest.raises(NumericalError):
        cg_solve(lambda v: v, np.array([1e300, 1e300]))


def test_adjoint_of_dense_map(rng):
    A = LinearMap.from_dense(rng.standard_normal((4, 7)))
    assert check_adjoint(A, rng) < 1e-12
    bad = LinearMap(4, 7, A.apply, lambda u: 2 * A.apply_transpose(u))
    assert check_adjoint(bad, rng) > 0.1


def dense_oracle_case(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 20))
    D = int(rng.integers(N + 1, 60))
    J = rng.standard_normal((N, D))
    if rng.random() < 0.3:  # rank deficient
        J[-1] = J[0]
    return rng, J


@given(st.integers(0, 2**32 - 1))
def test_kernel_projection_matches_svd_oracle(seed):
    rng, J = dense_oracle_case(seed)
    eps = rng.standard_normal((3, J.shape[1]))
    ker, rep = kernel_project(LinearMap.from_dense(J), eps, max_iter=2 * J.shape[0], tol=1e-12)
    P = dense_kernel_projector(J)
    sq = np.einsum("sd,sd->s", eps, eps)
    assert np.max(np.linalg.norm(ker - eps @ P, axis=1) / np.sqrt(sq)) <= 1e-5
    assert np.max(np.linalg.norm(ker @ J.T, axis=1) / np.linalg.norm(eps @ J.T, axis=1)) <= 1e-6
    assert np.max(np.abs(np.einsum("sd,sd->s", ker, eps - ker)) / sq) <= 1e-6
    again, _ = kernel_project(LinearMap.from_dense(J), ker, max_iter=2 * J.shape[0], tol=1e-12)
    assert np.max(np.abs(again - ker)) <= 1e-6 * np.sqrt(sq.max())


def test_cg_residual_is_annihilation_ratio(rng):
    J = rng.standard_normal((10, 40))
    eps = rng.standard_normal(40)
    ker, rep = kernel_project(LinearMap.from_dense(J), eps, max_iter=4)
    assert rep.residual == pytest.approx(np.linalg.norm(J @ ker) / np.linalg.norm(J @ eps))


def test_projection_with_zero_operator_is_identity(rng):
    eps = rng.standard_normal(12)
    ker, rep = kernel_project(LinearMap.zeros(3, 12), eps)
    np.testing.assert_array_equal(ker, eps)
    assert rep.iterations == 0


def test_projection_checks_width(rng):
    with pytest.raises(ShapeError):
        kernel_project(LinearMap.from_dense(np.ones((2, 3))), np.ones(4))


def test_reorthogonalization_on_duplicated_data():
    rng = np.random.default_rng(7)
    J = duplicated_rows(rng)
    eps = rng.standard_normal((4, J.shape[1]))
    sq = np.einsum("sd,sd->s", eps, eps)
    n = 2 * J.shape[0]
    on, _ = kernel_project(LinearMap.from_dense(J), eps, max_iter=n, tol=1e-14)
    off, _ = kernel_project(LinearMap.from_dense(J), eps, max_iter=n, tol=1e-14,
                            reorthogonalize=False)
    orth_on = np.max(np.abs(np.einsum("sd,sd->s", on, eps - on)) / sq)
    orth_off = np.max(np.abs(np.einsum("sd,sd->s", off, eps - off)) / sq)
    assert orth_on <= 1e-6
    assert orth_on < orth_off


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(15, 40), factor=st.sampled_from([1.0, 1.5]))
def test_reorthogonalization_helps_on_ill_conditioned_gram(seed, n, factor):
    rng = np.random.default_rng(seed)
    A = spd(rng, n, cond=1e10)
    b = rng.standard_normal(n)
    iters = int(factor * n)
    _, on = cg_solve(lambda v: A @ v, b, max_iter=iters, tol=1e-14)
    _, off = cg_solve(lambda v: A @ v, b, max_iter=iters, tol=1e-14, reorthogonalize=False)
    assert on.residual <= off.residual


def test_dense_projector_properties(rng):
    J = rng.standard_normal((5, 9))
    P = dense_kernel_projector(J)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    assert np.trace(P) == pytest.approx(9 - numerical_rank(J))
    np.testing.assert_allclose(dense_kernel_projector(np.zeros((3, 4))), np.eye(4))
