import json
from dataclasses import replace

import numpy as np
import pytest

from viking import net
from viking.errors import ContractError, TrainingError
from viking.posterior import Posterior
from viking.train import (AdamState, EpochRecord, TrainConfig, TrainLog, adam_step,
                          clip_global_norm, posthoc_tune_sigmas, train_viking, warmup_mle)


def test_adam_first_steps_by_hand():
    p, s = np.array([1.0, -2.0]), AdamState.zeros(2)
    g1, g2 = np.array([0.5, -4.0]), np.array([1.0, 2.0])
    p1, s = adam_step(p, g1, s, lr=0.1)
    # first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(p1, p - 0.1 * g1 / (np.abs(g1) + 1e-8))
    p2, s = adam_step(p1, g2, s, lr=0.1)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    step = (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p2, p1 - 0.1 * step)
    assert s.t == 2


def test_clip_global_norm():
    g = np.array([3.0, 4.0])
    np.testing.assert_allclose(clip_global_norm(g, 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(clip_global_norm(g, 10.0), g)
    np.testing.assert_array_equal(clip_global_norm(g, None), g)


def test_config_lists_every_violation():
    cfg = TrainConfig(beta=-1, gamma=2, samples=0, elbo_lr=0, jacobian="hessian")
    bad = cfg.violations()
    assert len(bad) == 5
    with pytest.raises(ContractError):
        cfg.validate()
    with pytest.raises(ContractError):
        TrainConfig.from_dict({"betta": 1})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def _record(epoch):
    return EpochRecord(epoch, "elbo", 0.5, None, 1.0, None, float("nan"), 2.0, 3.0, 0.1, 0.2,
                       0.0, 0.01)


def test_trainlog_order_and_jsonl():
    log = TrainLog()
    log.append(_record(0))
    log.append(_record(1))
    with pytest.raises(ContractError):
        log.append(_record(1))
    rows = [json.loads(line) for line in log.to_jsonl().splitlines()]
    assert rows[0]["elbo"] is None and rows[1]["epoch"] == 1
    np.testing.assert_array_equal(log.column("epoch"), [0, 1])


def regression_problem(seed=0, n=40, noise=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]]) + 0.3 + noise * rng.standard_normal((n, 1))
    return net.Batch(x, y)


def test_degenerate_posterior_reproduces_mle_bit_for_bit():
    spec = net.ModelSpec((3, 8, 1), ("tanh",), "gaussian", noise_std=0.5)
    data = regression_problem()
    p0 = net.init_params(spec, np.random.default_rng(0))
    cfg = TrainConfig(beta=0.0, train_sigmas=False, samples=2, batch_size=8, elbo_epochs=4,
                      elbo_lr=1e-2, sigma_tune_epochs=0, seed=5)
    post, _ = train_viking(spec, data, cfg, p0, init_posterior=Posterior.point_mass(p0))
    mle = warmup_mle(spec, data, 4, 1e-2, p0, batch_size=8, seed=5)
    np.testing.assert_array_equal(post.theta_hat, mle)


def test_training_is_deterministic_per_seed():
    spec = net.ModelSpec((3, 4, 1), ("tanh",), "gaussian", noise_std=0.5)
    data = regression_problem()
    p0 = net.init_params(spec, np.random.default_rng(0))
    cfg = TrainConfig(batch_size=10, elbo_epochs=3, sigma_tune_epochs=1, elbo_lr=1e-2, seed=1)
    a, la = train_viking(spec, data, cfg, p0)
    b, lb = train_viking(spec, data, cfg, p0)
    c, _ = train_viking(spec, data, replace(cfg, seed=2), p0)
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    assert a.log_sigma_im == b.log_sigma_im
    np.testing.assert_array_equal(la.column("elbo"), lb.column("elbo"))
    assert not np.array_equal(a.theta_hat, c.theta_hat)


def test_elbo_mean_of_linear_gaussian_model_is_ridge_solution():
    noise, alpha = 0.5, 2.0
    spec = net.ModelSpec((3, 1), (), "gaussian", noise_std=noise)
    data = regression_problem(noise=noise)
    cfg = TrainConfig(beta=1.0, samples=4, batch_size=40, sigma_tune_epochs=0, elbo_epochs=4000,
                      elbo_lr=1e-2, log_alpha0=np.log(alpha), log_sigma_im0=-6.0,
                      train_sigmas=False, jacobian="model-output", linearized=True,
                      cg_iters=20, cg_tol=1e-12)
    post, _ = train_viking(spec, data, cfg, np.zeros(spec.n_params))
    X = np.hstack([data.inputs, np.ones((40, 1))])
    ridge = np.linalg.solve(X.T @ X / noise ** 2 + alpha * np.eye(4), X.T @ data.targets[:, 0] / noise ** 2)
    np.testing.assert_allclose(post.theta_hat, ridge, atol=1e-3)
    assert post.log_alpha == pytest.approx(np.log(alpha))


def test_sigma_tuning_leaves_mean_fixed():
    spec = net.ModelSpec((3, 4, 1), ("tanh",), "gaussian", noise_std=0.5)
    data = regression_problem()
    p0 = net.init_params(spec, np.random.default_rng(0))
    log = TrainLog()
    post = posthoc_tune_sigmas(spec, p0, data, TrainConfig(batch_size=10, elbo_lr=1e-2), epochs=3,
                               log_to=log)
    np.testing.assert_array_equal(post.theta_hat, p0)
    assert post.log_sigma_im != TrainConfig().log_sigma_im0
    assert [r.phase for r in log.records] == ["sigma"] * 3


def test_warmup_reduces_loss_and_logs_epochs():
    spec = net.ModelSpec((3, 8, 1), ("tanh",), "gaussian", noise_std=0.5)
    data = regression_problem()
    p0 = net.init_params(spec, np.random.default_rng(0))
    log = TrainLog()
    p = warmup_mle(spec, data, 30, 1e-2, p0, batch_size=10, log_to=log)
    assert net.per_datum_losses(spec, p, data).mean() < net.per_datum_losses(spec, p0, data).mean()
    assert len(log) == 30 and log.records[-1].phase == "warmup"


def test_divergence_raises_training_error():
    spec = net.ModelSpec((3, 4, 1), ("identity",), "gaussian")
    cfg = TrainConfig(sigma_tune_epochs=0, elbo_epochs=3, elbo_lr=1e200, batch_size=10)
    with np.errstate(all="ignore"), pytest.raises(TrainingError) as info:
        train_viking(spec, regression_problem(), cfg, net.init_params(spec, np.random.default_rng(0)))
    assert info.value.epoch is not None
