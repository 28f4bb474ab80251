"""Command-line entry point: ``viking train | eval | project-demo``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint, net
from .checkpoint import atomic_write_bytes
from .config import RunConfig, build_dataset, load_config, parse_config, DATA_KEYS
from .data import minibatches
from .diagnostics import projection_diagnostics
from .errors import ConfigError, IncompatibleCheckpointError, VikingError
from .evaluate import evaluate, ood_scores, point_summary
from .metrics import auroc, regression_bands
from .posterior import Posterior, predict, sample_thetas
from .train import TrainLog, posthoc_tune_sigmas, train_viking, warmup_mle

log = logging.getLogger("viking")

EXIT_OK, EXIT_TRAIN, EXIT_CONFIG, EXIT_INCOMPATIBLE = 0, 1, 2, 3


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _write_json(path, record: dict) -> None:
    _write_text(path, json.dumps(record, sort_keys=True, indent=2) + "\n")


def _flatten(prefix: str, rec: dict) -> dict:
    return {f"{prefix}_{k}": v for k, v in rec.items()}


def _bands_csv(x, mean, std) -> str:
    buf = io.StringIO()
    buf.write("x,mean,std\n")
    for xi, mi, si in zip(x, mean, std):
        buf.write(f"{float(xi)!r},{float(mi)!r},{float(si)!r}\n")
    return buf.getvalue()


def _check_compatible(spec: net.ModelSpec, ds) -> None:
    bad = []
    if ds.train.inputs.shape[1] != spec.input_dim:
        bad.append(f"model.sizes[0] = {spec.input_dim} but data has "
                   f"{ds.train.inputs.shape[1]} input columns")
    if spec.loss == "categorical":
        top = int(max(ds.train.targets.max(), ds.eval_batch.targets.max()))
        if top >= spec.output_dim:
            bad.append(f"labels reach {top} but model has {spec.output_dim} outputs")
    elif ds.train.targets.reshape(len(ds.train), -1).shape[1] != spec.output_dim:
        bad.append("regression target width does not match model output")
    if bad:
        raise ConfigError(bad)


def _eval_kwargs(cfg: RunConfig) -> dict:
    return dict(jac_kind=cfg.train.jacobian, cg_iters=int(cfg.eval["cg_iters"]),
                cg_tol=float(cfg.eval["cg_tol"]), passes=cfg.train.projection_passes)


def _posterior_record(post: Posterior) -> dict:
    def f(x):
        return float(x) if np.isfinite(x) else None
    return {"log_alpha": f(post.log_alpha), "log_sigma_im": f(post.log_sigma_im),
            "sigma_ker": f(post.sigma_ker), "sigma_im": f(post.sigma_im)}


def _evaluate_all(cfg, spec, post, ds, n_samples, out: Path, prefix=""):
    rng = np.random.default_rng([cfg.seed, 3])
    batches = minibatches(ds.train, cfg.train.batch_size)
    thetas = sample_thetas(spec, post, batches, n_samples=n_samples, rng=rng, **_eval_kwargs(cfg))
    lin = cfg.train.linearized
    record = {"eval_samples": n_samples}
    record.update(_posterior_record(post))
    record.update(_flatten("train", evaluate(spec, post, thetas, ds.train, lin, cfg.eval["bins"])))
    if ds.val is not None:
        record.update(_flatten("val", evaluate(spec, post, thetas, ds.val, lin, cfg.eval["bins"])))
        record.update(_flatten("map_val", point_summary(spec, post.theta_hat, ds.val)))
    if ds.grid is not None and spec.loss == "gaussian":
        outs = predict(spec, post.theta_hat, thetas, ds.grid, lin)
        mean, std = regression_bands(outs[..., 0])
        _write_text(out / f"{prefix}bands.csv", _bands_csv(ds.grid_raw[:, 0], mean, std))
        train_outs = predict(spec, post.theta_hat, thetas, ds.train.inputs, lin)
        record["train_max_std"] = float(regression_bands(train_outs[..., 0])[1].max())
    return record, thetas


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.mode is not None:
        overrides["mode"] = args.mode
    if overrides:
        cfg = parse_config({**cfg.to_dict(), **overrides})
    if args.eval_samples is not None:
        cfg.train.eval_samples = args.eval_samples
    cfg.train = replace(cfg.train, seed=cfg.seed)
    bad = cfg.train.violations()
    if bad:
        raise ConfigError(bad)
    ds = build_dataset(cfg.data, cfg.eval.get("grid_points"))
    spec = cfg.model
    _check_compatible(spec, ds)

    out = Path(cfg.out_dir)
    tc = cfg.train
    params0 = net.init_params(spec, np.random.default_rng([cfg.seed, 0]), tc.init_scale)
    tlog = TrainLog()
    if cfg.mode == "full-viking":
        def on_epoch(rec, post):
            if cfg.checkpoint_every and (rec.epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint.save(out / f"checkpoint_{rec.epoch:05d}.vkp", post, spec, cfg.seed)

        post, tlog = train_viking(spec, ds.train, tc, params0, val=ds.val, on_epoch=on_epoch)
    else:
        params = warmup_mle(spec, ds.train, tc.warmup_epochs, tc.warmup_lr, params0,
                            tc.batch_size, tc.seed, tc.clip, tlog, ds.val)
        post = Posterior(params, tc.log_alpha0, tc.log_sigma_im0)
        if cfg.mode == "posthoc":
            post = posthoc_tune_sigmas(spec, params, ds.train, tc, post, log_to=tlog, val=ds.val)

    record, _ = _evaluate_all(cfg, spec, post, ds, tc.eval_samples, out)
    record.update({"mode": cfg.mode, "seed": cfg.seed, "epochs_logged": len(tlog)})
    if tlog.records:
        last = tlog.records[-1]
        record["final_elbo"] = last.elbo
        record["final_r_hat"] = last.r_hat
    checkpoint.save(out / "checkpoint.vkp", post, spec, cfg.seed)
    _write_text(out / "trainlog.jsonl", tlog.to_jsonl())
    _write_json(out / "metrics.json", record)
    _write_text(out / "config.yaml", cfg.dumps())
    for k in sorted(record):
        if k.startswith(("val_", "train_")) and isinstance(record[k], float):
            print(f"{k:>24s}  {record[k]:.6g}")
    return EXIT_OK


def _load_data_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"--ood-data file does not exist: {path}"])
    raw = yaml.safe_load(path.read_text())
    d = raw.get("data", raw) if isinstance(raw, dict) else None
    if not isinstance(d, dict) or d.get("kind") not in DATA_KEYS:
        raise ConfigError([f"{path}: expected a data section with a known 'kind'"])
    return d


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    post, spec, header = checkpoint.load(args.checkpoint)
    if spec.hash() != cfg.model.hash():
        raise IncompatibleCheckpointError(
            f"checkpoint model {spec.hash()} does not match config model {cfg.model.hash()}")
    ds = build_dataset(cfg.data, cfg.eval.get("grid_points"))
    try:
        _check_compatible(spec, ds)
    except ConfigError as exc:
        raise IncompatibleCheckpointError(str(exc)) from exc
    n = args.eval_samples or cfg.train.eval_samples
    out = Path(args.out or cfg.out_dir)
    record, thetas = _evaluate_all(cfg, spec, post, ds, n, out, prefix="eval_")
    record["model_hash"] = spec.hash()
    if args.ood_data:
        if spec.loss != "categorical":
            raise ConfigError(["OOD scoring needs a categorical model"])
        ood = build_dataset(_load_data_file(args.ood_data))
        ood_inputs = ood.train.inputs if ood.val is None else np.vstack([ood.train.inputs,
                                                                         ood.val.inputs])
        if ood_inputs.shape[1] != spec.input_dim:
            raise IncompatibleCheckpointError("OOD data dimensionality does not match the model")
        lin = cfg.train.linearized
        s_in = ood_scores(spec, post, thetas, ds.eval_batch.inputs, lin)
        s_out = ood_scores(spec, post, thetas, ood_inputs, lin)
        record.update({"ood_auroc": auroc(s_in, s_out), "ood_n_in": int(s_in.size),
                       "ood_n_out": int(s_out.size),
                       "ood_mean_score_in": float(s_in.mean()),
                       "ood_mean_score_out": float(s_out.mean())})
    _write_json(out / "eval_metrics.json", record)
    for k in sorted(record):
        if isinstance(record[k], float):
            print(f"{k:>24s}  {record[k]:.6g}")
    return EXIT_OK


def cmd_project_demo(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    spec = cfg.model
    if spec.n_params > 5000:
        raise ConfigError([f"project-demo needs D <= 5000 for the dense oracle; "
                           f"model has D = {spec.n_params}"])
    ds = build_dataset(cfg.data)
    _check_compatible(spec, ds)
    if args.checkpoint:
        post, ck_spec, _ = checkpoint.load(args.checkpoint)
        if ck_spec.hash() != spec.hash():
            raise IncompatibleCheckpointError("checkpoint model does not match config model")
        params = post.theta_hat
    else:
        params = net.init_params(spec, np.random.default_rng([seed, 0]), cfg.train.init_scale)
    J = net.jacobian_rows(spec, params, ds.train, cfg.train.jacobian)
    # CG runs up to twice the row count so the Krylov space can span the row space
    diag = projection_diagnostics(J, np.random.default_rng([seed, 4]),
                                  cg_tol=float(cfg.eval["cg_tol"]))
    diag["jacobian"] = cfg.train.jacobian
    out = Path(args.out or cfg.out_dir)
    _write_json(out / "project_demo.json", diag)
    for k, v in diag.items():
        print(f"{k:>18s}  {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viking", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (default: out_dir)")

    t = sub.add_parser("train", help="train and write checkpoint, log, metrics")
    common(t)
    t.add_argument("--mode", choices=("warmup-only", "posthoc", "full-viking"), default=None)
    t.add_argument("--eval-samples", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, optionally against OOD data")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--eval-samples", type=int, default=None)
    e.add_argument("--ood-data", default=None, help="YAML file with an OOD data section")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("project-demo", help="compare matrix-free and dense kernel projections")
    common(d)
    d.add_argument("--checkpoint", default=None)
    d.set_defaults(func=cmd_project_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompatibleCheckpointError as exc:
        print(f"error: incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except VikingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
