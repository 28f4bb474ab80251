"""Optimization: Adam, maximum-likelihood warmup, sigma tuning and the full ELBO loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import net
from .data import minibatches
from .errors import ContractError, NumericalError, TrainingError
from .posterior import (
    Posterior,
    batch_operator,
    draw_sample,
    estimate_rank,
    image_drift,
    init_kernel_noise,
    kl,
    neg_elbo_grad,
    step_kernel_noise,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters. Defaults follow the small-scale ablation settings."""

    beta: float = 1e-4
    gamma: float = 0.5
    samples: int = 1
    eval_samples: int = 20
    batch_size: int = 32
    warmup_epochs: int = 0
    sigma_tune_epochs: int = 5
    elbo_epochs: int = 50
    warmup_lr: float = 1e-3
    elbo_lr: float = 1e-4
    cg_iters: int = 10
    cg_tol: float = 1e-6
    clip: float | None = None
    projection_passes: int = 1
    log_alpha0: float = 4.0
    log_sigma_im0: float = -2.0
    rank_smoothing: float = 0.9
    jacobian: str = "loss"
    linearized: bool = False
    train_sigmas: bool = True
    init_scale: float = 1.0
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.beta < 0:
            out.append("beta must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            out.append("gamma must lie in [0, 1]")
        for name in ("samples", "batch_size", "cg_iters", "projection_passes"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.eval_samples < 2:
            out.append("eval_samples must be >= 2")
        for name in ("warmup_epochs", "sigma_tune_epochs", "elbo_epochs"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("warmup_lr", "elbo_lr", "cg_tol"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if self.clip is not None and not self.clip > 0:
            out.append("clip must be > 0 or null")
        if not 0.0 <= self.rank_smoothing < 1.0:
            out.append("rank_smoothing must lie in [0, 1)")
        if self.jacobian not in net.JACOBIAN_KINDS:
            out.append(f"jacobian must be one of {net.JACOBIAN_KINDS}")
        return out

    def validate(self) -> "TrainConfig":
        bad = self.violations()
        if bad:
            raise ContractError("; ".join(bad))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def clip_global_norm(grads: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grads
    norm = float(np.linalg.norm(grads))
    return grads * (max_norm / norm) if norm > max_norm else grads


def adam_step(params, grads, state: AdamState, lr: float, clip: float | None = None,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    g = clip_global_norm(np.asarray(grads, dtype=np.float64), clip)
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * g
    v = b2 * state.v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_metric: float
    val_metric: float | None
    train_nll: float
    val_nll: float | None
    elbo: float | None
    kl: float | None
    r_hat: float | None
    sigma_ker: float
    sigma_im: float
    image_drift: float | None
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ContractError("epoch indices must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str, phase: str | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records
                         if phase is None or r.phase == phase], dtype=float)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            d = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                 for k, v in asdict(r).items()}
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def _order_rng(seed):
    return np.random.default_rng([seed, 1])


def _noise_rng(seed):
    return np.random.default_rng([seed, 2])


def _point_metrics(spec, params, batch):
    if batch is None:
        return None, None
    out = net.forward(spec, params, batch.inputs)
    nll = float(net.per_datum_losses(spec, params, batch).mean())
    if spec.loss == "categorical":
        metric = float(np.mean(out.argmax(axis=1) == batch.targets))
    else:
        metric = float(np.sqrt(np.mean((out - batch.targets) ** 2)))
    return metric, nll


def _finite_or_none(x):
    return float(x) if x is not None and np.isfinite(x) else None


def warmup_mle(spec: net.ModelSpec, data: net.Batch, epochs: int, lr: float, init_params,
               batch_size: int = 32, seed: int = 0, clip: float | None = None,
               log_to: TrainLog | None = None, val: net.Batch | None = None) -> np.ndarray:
    """Adam on the mean negative log-likelihood, mini-batches reshuffled every epoch."""
    if epochs < 0:
        raise ContractError("epochs must be >= 0")
    params = np.asarray(init_params, dtype=np.float64).copy()
    state = AdamState.zeros(params.size)
    order = _order_rng(seed)
    start = log_to.records[-1].epoch + 1 if log_to and log_to.records else 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        for step, batch in enumerate(minibatches(data, batch_size, order)):
            try:
                loss, grad = net.loss_and_grad(spec, params, batch)
            except NumericalError as exc:
                raise TrainingError(f"warmup diverged: {exc}", epoch, step) from exc
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError("warmup diverged: non-finite loss", epoch, step)
            params, state = adam_step(params, grad, state, lr, clip)
        if log_to is not None:
            tm, tn = _point_metrics(spec, params, data)
            vm, vn = _point_metrics(spec, params, val)
            log_to.append(EpochRecord(start + epoch, "warmup", tm, vm, tn, vn, None, None, None,
                                      0.0, 0.0, None, time.perf_counter() - t0))
    return params


def posthoc_tune_sigmas(spec: net.ModelSpec, theta_hat, data: net.Batch, config: TrainConfig,
                        posterior: Posterior | None = None, epochs: int | None = None,
                        log_to: TrainLog | None = None, val: net.Batch | None = None) -> Posterior:
    """Optimize only ``(log_alpha, log_sigma_im)`` with the mean held fixed.

    Kernel noise is projected once at ``theta_hat`` and reused for every step.
    """
    epochs = config.sigma_tune_epochs if epochs is None else epochs
    post = (Posterior(theta_hat, config.log_alpha0, config.log_sigma_im0)
            if posterior is None else posterior.copy())
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    post.theta_hat = theta_hat.copy()
    if epochs == 0:
        return post
    order = _order_rng(config.seed)
    noise = _noise_rng(config.seed)
    fixed_batches = minibatches(data, config.batch_size)
    state = init_kernel_noise(post, fixed_batches, spec, jac_kind=config.jacobian,
                              n_samples=config.samples, gamma=config.gamma, rng=noise,
                              cg_iters=config.cg_iters, cg_tol=config.cg_tol,
                              passes=config.projection_passes)
    R = estimate_rank(state.eps0, state.eps_ker).clamped(post.dim)
    sig = np.array([post.log_alpha, post.log_sigma_im])
    adam = AdamState.zeros(2)
    n_total = len(data)
    start = log_to.records[-1].epoch + 1 if log_to and log_to.records else 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        elbos = []
        for step, batch in enumerate(minibatches(data, config.batch_size, order)):
            post.log_alpha, post.log_sigma_im = sig
            samples = [draw_sample(post, state, s) for s in range(state.n_samples)]
            loss, grad = neg_elbo_grad(post, samples, batch, spec, R, config.beta, n_total,
                                       linearized=config.linearized)
            if not np.isfinite(loss):
                raise TrainingError("non-finite ELBO during sigma tuning", epoch, step)
            elbos.append(-n_total * loss)
            sig, adam = adam_step(sig, grad[-2:], adam, config.elbo_lr, config.clip)
        post.log_alpha, post.log_sigma_im = sig
        if log_to is not None:
            tm, tn = _point_metrics(spec, theta_hat, data)
            vm, vn = _point_metrics(spec, theta_hat, val)
            log_to.append(EpochRecord(start + epoch, "sigma", tm, vm, tn, vn, float(np.mean(elbos)),
                                      _finite_or_none(kl(post, R)), R, post.sigma_ker,
                                      post.sigma_im, None, time.perf_counter() - t0))
    return post


def train_viking(spec: net.ModelSpec, data: net.Batch, config: TrainConfig, init_params,
                 val: net.Batch | None = None, init_posterior: Posterior | None = None,
                 on_epoch=None):
    """Warmup, optional sigma-only tuning, then full ELBO optimization.

    Each ELBO epoch first draws fresh noise per Monte Carlo sample and projects
    it through every mini-batch kernel. Each step then advances the kernel noise
    on the current batch, forms samples around the current mean, and takes one
    Adam step on the negated ELBO over ``(theta_hat, log_alpha, log_sigma_im)``.

    ``on_epoch(record, posterior)`` is called after every ELBO epoch.
    Returns ``(posterior, train_log)``.
    """
    config.validate()
    tlog = TrainLog()
    params = np.asarray(init_params, dtype=np.float64)
    if config.warmup_epochs:
        params = warmup_mle(spec, data, config.warmup_epochs, config.warmup_lr, params,
                            config.batch_size, config.seed, config.clip, tlog, val)
    if init_posterior is None:
        post = Posterior(params.copy(), config.log_alpha0, config.log_sigma_im0)
    else:
        post = init_posterior.copy()
        post.theta_hat = params.copy()
    if config.sigma_tune_epochs and config.train_sigmas:
        post = posthoc_tune_sigmas(spec, post.theta_hat, data, config, post, log_to=tlog, val=val)

    order = _order_rng(config.seed)
    noise = _noise_rng(config.seed)
    n_total = len(data)
    D = post.dim
    vec = np.concatenate([post.theta_hat, [post.log_alpha, post.log_sigma_im]])
    adam = AdamState.zeros(vec.size)
    R_smooth = None
    start = tlog.records[-1].epoch + 1 if tlog.records else 0
    cg = dict(cg_iters=config.cg_iters, cg_tol=config.cg_tol)

    for epoch in range(config.elbo_epochs):
        t0 = time.perf_counter()
        batches = minibatches(data, config.batch_size, order)
        try:
            state = init_kernel_noise(post, batches, spec, jac_kind=config.jacobian,
                                      n_samples=config.samples, gamma=config.gamma, rng=noise,
                                      passes=config.projection_passes, **cg)
        except NumericalError as exc:
            raise TrainingError(f"projection pre-pass failed: {exc}", epoch, None) from exc
        # Hutchinson pairs are only unbiased before fresh noise is mixed in
        r0 = estimate_rank(state.eps0, state.eps_ker).r_hat
        if R_smooth is None:
            R_smooth = r0
        else:
            R_smooth = config.rank_smoothing * R_smooth + (1 - config.rank_smoothing) * r0
        R = float(np.clip(R_smooth, 0.0, D))
        elbos, drifts = [], []
        for step, batch in enumerate(batches):
            try:
                J = batch_operator(spec, post.theta_hat, batch, config.jacobian)
                step_kernel_noise(state, J, **cg)
                samples = [draw_sample(post, state, s) for s in range(state.n_samples)]
                loss, grad = neg_elbo_grad(post, samples, batch, spec, R, config.beta,
                                           n_total, config.train_sigmas, config.linearized)
            except NumericalError as exc:
                raise TrainingError(f"step failed: {exc}", epoch, step) from exc
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError("non-finite ELBO", epoch, step)
            elbos.append(-n_total * loss)
            drifts.append(image_drift(state))
            vec, adam = adam_step(vec, grad, adam, config.elbo_lr, config.clip)
            post.theta_hat = vec[:D]
            if config.train_sigmas:
                post.log_alpha, post.log_sigma_im = float(vec[D]), float(vec[D + 1])
            else:
                vec[D], vec[D + 1] = post.log_alpha, post.log_sigma_im

        tm, tn = _point_metrics(spec, post.theta_hat, data)
        vm, vn = _point_metrics(spec, post.theta_hat, val)
        with np.errstate(all="ignore"):
            kl_val = _finite_or_none(kl(post, R))
        tlog.append(EpochRecord(start + epoch, "elbo", tm, vm, tn, vn, float(np.mean(elbos)),
                                kl_val, R, post.sigma_ker, post.sigma_im,
                                float(np.mean(drifts)), time.perf_counter() - t0))
        log.debug("epoch %d elbo %.4g R %.2f sigma_im %.3g", start + epoch, np.mean(elbos), R,
                  post.sigma_im)
        if on_epoch is not None:
            on_epoch(tlog.records[-1], post)
    post.theta_hat = post.theta_hat.copy()
    return post, tlog
