"""Two-subspace Gaussian posterior over network parameters.

The covariance is ``sigma_ker^2 P + sigma_im^2 (I - P)`` with ``P`` the
orthogonal projector onto the kernel of the stacked per-datum Jacobian at the
mean. ``P`` is never formed: samples are built from Gaussian noise pushed
through matrix-free projections, batch by batch.

The prior is ``N(0, I / alpha)`` and ``sigma_ker^2 = 1 / alpha`` always, so the
posterior has three free quantities: the mean, ``log_alpha`` and
``log_sigma_im``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import net
from .errors import ContractError
from .linalg import LinearMap, kernel_project


@dataclass
class Posterior:
    theta_hat: np.ndarray
    log_alpha: float = 4.0
    log_sigma_im: float = -2.0

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=np.float64)
        self.log_alpha = float(self.log_alpha)
        self.log_sigma_im = float(self.log_sigma_im)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def sigma_ker(self) -> float:
        return float(np.exp(-0.5 * self.log_alpha))

    @property
    def sigma_im(self) -> float:
        return float(np.exp(self.log_sigma_im))

    @property
    def dim(self) -> int:
        return self.theta_hat.size

    def copy(self) -> "Posterior":
        return replace(self, theta_hat=self.theta_hat.copy())

    @classmethod
    def point_mass(cls, theta_hat) -> "Posterior":
        """Both scales exactly zero; every draw returns ``theta_hat``."""
        return cls(theta_hat, log_alpha=np.inf, log_sigma_im=-np.inf)


def batch_operator(spec: net.ModelSpec, params, batch: net.Batch, kind: str = "loss") -> LinearMap:
    """Jacobian of one mini-batch at ``params`` as a :class:`LinearMap`.

    The rows are materialized once per call; callers only see products.
    """
    return LinearMap.from_dense(net.jacobian_rows(spec, params, batch, kind))


@dataclass
class ProjectionState:
    """Kernel-noise samples carried through one epoch.

    ``eps0`` holds the epoch-initial Gaussian draws ``(S, D)``; ``eps_ker`` the
    current kernel noise ``(S, D)``.
    """

    eps0: np.ndarray
    eps_ker: np.ndarray
    gamma: float
    rng: np.random.Generator = field(repr=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def n_samples(self) -> int:
        return self.eps0.shape[0]


def alternating_projection(operators, eps, max_iter=10, tol=1e-6, passes=1):
    """Project ``eps`` onto each operator's kernel in turn, ``passes`` times over."""
    reports = []
    for _ in range(passes):
        for J in operators:
            eps, rep = kernel_project(J, eps, max_iter=max_iter, tol=tol)
            reports.append(rep)
    return eps, reports


def init_kernel_noise(posterior: Posterior, batches, spec: net.ModelSpec, *,
                      jac_kind="loss", n_samples=1, gamma=0.5, rng=None,
                      cg_iters=10, cg_tol=1e-6, passes=1) -> ProjectionState:
    """Fresh ``eps0 ~ N(0, I)`` per sample, projected batch by batch at the current mean."""
    rng = np.random.default_rng() if rng is None else rng
    eps0 = rng.standard_normal((n_samples, posterior.dim))
    ops = [batch_operator(spec, posterior.theta_hat, b, jac_kind) for b in batches]
    eps_ker, _ = alternating_projection(ops, eps0, cg_iters, cg_tol, passes)
    return ProjectionState(eps0, eps_ker, gamma, rng)


def step_kernel_noise(state: ProjectionState, J: LinearMap, cg_iters=10, cg_tol=1e-6):
    """Stochastic alternating-projection update, applied to every sample in place.

    ``eps_ker <- P_J(sqrt(gamma) eps_ker + sqrt(1 - gamma) eta)`` with fresh
    ``eta ~ N(0, I)``.
    """
    g = state.gamma
    eta = state.rng.standard_normal(state.eps_ker.shape)
    mixed = np.sqrt(g) * state.eps_ker + np.sqrt(1.0 - g) * eta
    state.eps_ker, report = kernel_project(J, mixed, max_iter=cg_iters, tol=cg_tol)
    return report


@dataclass(frozen=True)
class Sample:
    """A posterior draw together with the (constant) directions it was built from."""

    theta: np.ndarray
    eps_ker: np.ndarray
    eps_im: np.ndarray


def draw_sample(posterior: Posterior, state: ProjectionState, s: int) -> Sample:
    eps_ker = state.eps_ker[s]
    # image part measured against the epoch-initial draw, as in the training loop
    eps_im = state.eps0[s] - eps_ker
    theta = _affine(posterior, eps_ker, eps_im)
    return Sample(theta, eps_ker, eps_im)


def _affine(posterior, eps_ker, eps_im):
    sk, si = posterior.sigma_ker, posterior.sigma_im
    theta = posterior.theta_hat.copy()
    # skip zero scales so a point mass stays bit-exact
    if sk != 0.0:
        theta = theta + sk * eps_ker
    if si != 0.0:
        theta = theta + si * eps_im
    return theta


def image_drift(state: ProjectionState) -> float:
    """Mean ``|<eps_ker, eps0 - eps_ker>| / ||eps0||^2`` over samples.

    Zero right after the epoch pre-pass; grows as fresh noise is mixed into
    ``eps_ker`` while ``eps0`` stays fixed. Logged as a diagnostic.
    """
    eps_im = state.eps0 - state.eps_ker
    num = np.abs(np.einsum("sd,sd->s", state.eps_ker, eps_im))
    return float(np.mean(num / np.einsum("sd,sd->s", state.eps0, state.eps0)))


@dataclass(frozen=True)
class RankEstimate:
    """Hutchinson estimate of the kernel dimension. Never differentiated."""

    r_hat: float
    n_samples: int

    def clamped(self, dim: int) -> float:
        return float(np.clip(self.r_hat, 0.0, dim))


def estimate_rank(eps0, eps_ker) -> RankEstimate:
    """``mean_s <eps0_s, eps_ker_s>``, an unbiased estimate of ``trace(P)``."""
    eps0 = np.atleast_2d(eps0)
    eps_ker = np.atleast_2d(eps_ker)
    if eps0.shape != eps_ker.shape or eps0.shape[0] < 1:
        raise ContractError("need matching, non-empty (S, D) arrays")
    return RankEstimate(float(np.einsum("sd,sd->s", eps0, eps_ker).mean()), eps0.shape[0])


def kl_general(theta_hat, log_alpha, log_sigma_ker, log_sigma_im, R, D) -> float:
    """Closed-form ``KL(q || prior)`` with untied kernel scale.

    Only the spectrum of the covariance enters: ``R`` eigenvalues
    ``sigma_ker^2`` and ``D - R`` eigenvalues ``sigma_im^2``.
    """
    if not 0.0 <= R <= D:
        raise ContractError(f"kernel dimension {R} outside [0, {D}]")
    alpha = np.exp(log_alpha)
    trace = np.exp(2 * log_sigma_ker) * R + np.exp(2 * log_sigma_im) * (D - R)
    logdet = 2 * R * log_sigma_ker + 2 * (D - R) * log_sigma_im
    sq = float(np.dot(theta_hat, theta_hat))
    return float(0.5 * (alpha * trace - D + alpha * sq - D * log_alpha - logdet))


def kl(posterior: Posterior, R: float, D: int | None = None) -> float:
    D = posterior.dim if D is None else D
    return kl_general(posterior.theta_hat, posterior.log_alpha,
                      -0.5 * posterior.log_alpha, posterior.log_sigma_im, R, D)


def kl_grads(posterior: Posterior, R: float, D: int | None = None):
    """Gradient of the tied KL w.r.t. ``(theta_hat, log_alpha, log_sigma_im)``, ``R`` held fixed.

    With ``sigma_ker^2 = 1/alpha`` the kernel terms cancel in ``theta_hat``,
    leaving plain weight decay ``alpha * theta_hat``.
    """
    D = posterior.dim if D is None else D
    if not 0.0 <= R <= D:
        raise ContractError(f"kernel dimension {R} outside [0, {D}]")
    a, b = posterior.log_alpha, posterior.log_sigma_im
    alpha = np.exp(a)
    ratio = np.exp(a + 2 * b)  # alpha * sigma_im^2
    sq = float(np.dot(posterior.theta_hat, posterior.theta_hat))
    g_theta = alpha * posterior.theta_hat
    g_a = 0.5 * ((D - R) * ratio + alpha * sq - (D - R))
    g_b = (D - R) * (ratio - 1.0)
    return g_theta, float(g_a), float(g_b)


def elbo_estimate(posterior: Posterior, samples, batch: net.Batch, spec: net.ModelSpec,
                  R: float, beta: float, n_total: int, D: int | None = None) -> float:
    """Mini-batch estimate of ``E_q[log p(y | theta, x)] - beta * KL``.

    The batch log-likelihood is rescaled by ``n_total / len(batch)``.
    """
    thetas = [s.theta if isinstance(s, Sample) else s for s in samples]
    ll = np.mean([-net.per_datum_losses(spec, t, batch).sum() for t in thetas])
    recon = n_total / len(batch) * ll
    if beta == 0:
        return float(recon)
    return float(recon - beta * kl(posterior, R, D))


def _sample_mean(values):
    """Mean taken as offsets from the first value, exact when all values agree."""
    first = values[0]
    return first + sum((v - first for v in values[1:]), 0.0 * first) / len(values)


def neg_elbo_grad(posterior: Posterior, samples, batch: net.Batch, spec: net.ModelSpec,
                  R: float, beta: float, n_total: int, train_sigmas: bool = True,
                  linearized: bool = False):
    """Per-datum negated ELBO and its gradient on ``(theta_hat, log_alpha, log_sigma_im)``.

    The objective is ``-ELBO / n_total``: the mean batch NLL over samples plus
    ``beta * KL / n_total``. Sample directions are constants; gradients flow
    through ``theta = theta_hat + sigma_ker eps_ker + sigma_im eps_im`` only.
    With ``linearized`` the likelihood is scored on
    ``f(theta_hat) + J(theta_hat) (theta - theta_hat)`` and ``J`` is treated
    as a constant, like the sample directions.

    Returns ``(value, grad)`` with ``grad`` of length ``D + 2``.
    """
    sk, si = posterior.sigma_ker, posterior.sigma_im
    terms = []
    if linearized:
        th = posterior.theta_hat
        base = net.forward(spec, th, batch.inputs)
    for smp in samples:
        if linearized:
            jk = net.jvp(spec, th, batch.inputs, smp.eps_ker)
            ji = net.jvp(spec, th, batch.inputs, smp.eps_im)
            l, g, dout = net.loss_grad_at_outputs(spec, th, batch, base + sk * jk + si * ji)
            da, db = float(np.sum(dout * jk)), float(np.sum(dout * ji))
        else:
            l, g = net.loss_and_grad(spec, smp.theta, batch)
            da, db = float(g @ smp.eps_ker), float(g @ smp.eps_im)
        # d sigma_ker / d log_alpha = -sigma_ker / 2; d sigma_im / d log_sigma_im = sigma_im
        terms.append((l, g, -0.5 * sk * da, si * db) if train_sigmas else (l, g, 0.0, 0.0))
    loss, g_theta, g_a, g_b = (_sample_mean([t[k] for t in terms]) for k in range(4))
    if beta != 0:
        scale = beta / n_total
        loss += scale * kl(posterior, R)
        kt, ka, kb = kl_grads(posterior, R)
        g_theta += scale * kt
        if train_sigmas:
            g_a += scale * ka
            g_b += scale * kb
    grad = np.concatenate([g_theta, [g_a, g_b]])
    return float(loss), grad


def posterior_thetas(posterior: Posterior, state: ProjectionState) -> np.ndarray:
    """All ``S`` draws of the state as an ``(S, D)`` array."""
    return np.stack([draw_sample(posterior, state, s).theta for s in range(state.n_samples)])


def sample_thetas(spec: net.ModelSpec, posterior: Posterior, batches, *, n_samples=20,
                  jac_kind="loss", rng=None, cg_iters=10, cg_tol=1e-6, passes=1) -> np.ndarray:
    """``n_samples`` fresh draws ``(S, D)``.

    Kernel directions come from one new alternating-projection pass over
    ``batches`` at the current mean.
    """
    state = init_kernel_noise(posterior, batches, spec, jac_kind=jac_kind,
                              n_samples=n_samples, gamma=1.0, rng=rng,
                              cg_iters=cg_iters, cg_tol=cg_tol, passes=passes)
    return posterior_thetas(posterior, state)


def predict(spec: net.ModelSpec, theta_hat, thetas, inputs, linearized=False) -> np.ndarray:
    """Outputs ``(S, N, out)`` for each parameter draw.

    With ``linearized`` the network is replaced by its first-order expansion
    around ``theta_hat``.
    """
    if linearized:
        base = net.forward(spec, theta_hat, inputs)
        return np.stack([base + net.jvp(spec, theta_hat, inputs, t - theta_hat) for t in thetas])
    return np.stack([net.forward(spec, t, inputs) for t in thetas])


def predictive_outputs(spec: net.ModelSpec, posterior: Posterior, batches, inputs, *,
                       n_samples=20, jac_kind="loss", linearized=False, rng=None,
                       cg_iters=10, cg_tol=1e-6, passes=1) -> np.ndarray:
    """:func:`sample_thetas` followed by :func:`predict`."""
    thetas = sample_thetas(spec, posterior, batches, n_samples=n_samples, jac_kind=jac_kind,
                           rng=rng, cg_iters=cg_iters, cg_tol=cg_tol, passes=passes)
    return predict(spec, posterior.theta_hat, thetas, inputs, linearized)
