"""Small experiments on the toy datasets, shared by scripts/ and the acceptance tests."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import net
from .config import Dataset, RunConfig, build_dataset
from .data import minibatches
from .evaluate import evaluate
from .metrics import regression_bands
from .posterior import Posterior, predict, sample_thetas
from .train import TrainConfig, TrainLog, posthoc_tune_sigmas, train_viking, warmup_mle


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Same run with every seed (init, order, noise, data) derived from ``seed``."""
    data = dict(cfg.data)
    for key in ("seed", "split_seed"):
        if key in data or cfg.data["kind"] == "blobs":
            data[key] = seed
    return replace(cfg, seed=seed, data=data, train=replace(cfg.train, seed=seed))


def fit(cfg: RunConfig, ds: Dataset | None = None, mode: str | None = None,
        train: TrainConfig | None = None) -> tuple[Posterior, TrainLog, Dataset]:
    """Train according to ``cfg.mode`` (or ``mode``) and return the posterior."""
    ds = build_dataset(cfg.data, cfg.eval.get("grid_points")) if ds is None else ds
    tc = replace(cfg.train if train is None else train, seed=cfg.seed)
    mode = mode or cfg.mode
    spec = cfg.model
    p0 = net.init_params(spec, np.random.default_rng([cfg.seed, 0]), tc.init_scale)
    if mode == "full-viking":
        post, tlog = train_viking(spec, ds.train, tc, p0, val=ds.val)
        return post, tlog, ds
    tlog = TrainLog()
    params = warmup_mle(spec, ds.train, tc.warmup_epochs, tc.warmup_lr, p0, tc.batch_size,
                        tc.seed, tc.clip, tlog, ds.val)
    post = Posterior(params, tc.log_alpha0, tc.log_sigma_im0)
    if mode == "posthoc":
        post = posthoc_tune_sigmas(spec, params, ds.train, tc, post, log_to=tlog, val=ds.val)
    return post, tlog, ds


def draw(cfg: RunConfig, post: Posterior, ds: Dataset, n_samples: int | None = None,
         stream: int = 3) -> np.ndarray:
    """Posterior parameter draws from a fresh projection pass over the training set."""
    return sample_thetas(cfg.model, post, minibatches(ds.train, cfg.train.batch_size),
                         n_samples=n_samples or cfg.train.eval_samples,
                         jac_kind=cfg.train.jacobian,
                         rng=np.random.default_rng([cfg.seed, stream]),
                         cg_iters=int(cfg.eval["cg_iters"]), cg_tol=float(cfg.eval["cg_tol"]),
                         passes=cfg.train.projection_passes)


def posterior_report(cfg: RunConfig, post: Posterior, ds: Dataset,
                     n_samples: int | None = None) -> dict:
    thetas = draw(cfg, post, ds, n_samples)
    lin = cfg.train.linearized
    return {"train": evaluate(cfg.model, post, thetas, ds.train, lin),
            "val": evaluate(cfg.model, post, thetas, ds.val, lin)}


def sinusoid_bands(cfg: RunConfig, n_samples: int | None = None) -> dict:
    """Train on the sinusoid and read the predictive std at the landmarks.

    Landmarks are the training inputs, the middle of the gap between the two
    clusters, and both ends of the evaluation grid. The same kernel draws are
    reused with the image scale set to zero for the ``point_*`` entries.
    """
    post, tlog, ds = fit(cfg)
    thetas = draw(cfg, post, ds, n_samples)
    spec, lin = cfg.model, cfg.train.linearized
    st = ds.train.meta["standardizer"]
    raw_train = st.inverse(ds.train.inputs)[:, 0]
    left, right = raw_train[raw_train < raw_train.mean()], raw_train[raw_train > raw_train.mean()]
    mid = 0.5 * (left.max() + right.min())
    lo, hi = ds.grid_raw[0, 0], ds.grid_raw[-1, 0]
    marks = st.transform(np.array([[mid], [lo], [hi]]))

    def stds(th):
        s_train = regression_bands(predict(spec, post.theta_hat, th, ds.train.inputs, lin)[..., 0])[1]
        s_marks = regression_bands(predict(spec, post.theta_hat, th, marks, lin)[..., 0])[1]
        return s_train, s_marks

    s_train, (s_mid, s_lo, s_hi) = stds(thetas)
    kernel_only = post.copy()
    kernel_only.log_sigma_im = -np.inf
    p_train, (p_mid, _, _) = stds(draw(cfg, kernel_only, ds, n_samples))
    grid_out = predict(spec, post.theta_hat, thetas, ds.grid, lin)[..., 0]
    mean, std = regression_bands(grid_out)
    return {
        "train_std_max": float(s_train.max()), "mid_std": float(s_mid),
        "left_std": float(s_lo), "right_std": float(s_hi),
        "point_train_std_max": float(p_train.max()), "point_mid_std": float(p_mid),
        "gap_mid": float(mid), "sigma_ker": post.sigma_ker, "sigma_im": post.sigma_im,
        "grid_x": ds.grid_raw[:, 0], "grid_mean": mean, "grid_std": std,
        "train_rmse": float(np.sqrt(np.mean((net.forward(spec, post.theta_hat, ds.train.inputs)
                                              - ds.train.targets) ** 2))),
        "log": tlog,
    }


def gamma_ablation(cfg: RunConfig, gammas=(0.5, 1.0), seeds=range(10),
                   n_samples: int | None = None) -> dict:
    """Posterior-predictive accuracy per ``gamma``, averaged over ``seeds``.

    Returns ``{gamma: {"train_accuracy", "val_accuracy", "gap", "per_seed_gap"}}``
    where the gap is train minus validation accuracy.
    """
    rows = {g: [] for g in gammas}
    for seed in seeds:
        run = with_seed(cfg, seed)
        ds = build_dataset(run.data)
        for g in gammas:
            post, _, _ = fit(run, ds, "full-viking", replace(run.train, gamma=g))
            rep = posterior_report(run, post, ds, n_samples)
            rows[g].append((rep["train"]["accuracy"], rep["val"]["accuracy"]))
    out = {}
    for g, r in rows.items():
        r = np.array(r)
        out[g] = {"train_accuracy": float(r[:, 0].mean()), "val_accuracy": float(r[:, 1].mean()),
                  "gap": float((r[:, 0] - r[:, 1]).mean()), "per_seed_gap": r[:, 0] - r[:, 1]}
    return out


def posthoc_vs_full(cfg: RunConfig, seeds=range(3), posthoc_epochs: int = 20,
                    sigma_epochs: int = 5, n_samples: int | None = None) -> dict:
    """Validation NLL of sigma-only tuning versus sigma tuning followed by full ELBO.

    Both start from the same warmup and spend ``posthoc_epochs`` epochs after it;
    the full run uses ``sigma_epochs`` of them for the sigmas alone.
    """
    post_nll, full_nll = [], []
    for seed in seeds:
        run = with_seed(cfg, seed)
        ds = build_dataset(run.data, run.eval.get("grid_points"))
        ph = replace(run.train, sigma_tune_epochs=posthoc_epochs)
        full = replace(run.train, sigma_tune_epochs=sigma_epochs,
                       elbo_epochs=posthoc_epochs - sigma_epochs)
        p_post, _, _ = fit(run, ds, "posthoc", ph)
        p_full, _, _ = fit(run, ds, "full-viking", full)
        post_nll.append(posterior_report(replace(run, train=ph), p_post, ds, n_samples)["val"]["nll"])
        full_nll.append(posterior_report(replace(run, train=full), p_full, ds, n_samples)["val"]["nll"])
    return {"posthoc_val_nll": float(np.mean(post_nll)), "full_val_nll": float(np.mean(full_nll)),
            "per_seed_posthoc": np.array(post_nll), "per_seed_full": np.array(full_nll)}
