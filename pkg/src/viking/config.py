"""Run configuration files (YAML) and data-source construction.

Schema::

    seed: 0
    mode: full-viking          # warmup-only | posthoc | full-viking
    out_dir: runs/example
    checkpoint_every: 0        # 0 = only at the end
    model:  {sizes: [...], activations: [...], loss: gaussian|categorical, noise_std: 0.1}
    data:   {kind: sinusoid|blobs|csv|idx, ...}   # see DATA_KEYS
    train:  {...}                                 # every TrainConfig field
    eval:   {cg_iters: 50, cg_tol: 1.0e-10, bins: 15, grid_points: 200}
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import data as datamod
from .errors import ConfigError, ShapeError
from .net import Batch, ModelSpec
from .train import TrainConfig

MODES = ("warmup-only", "posthoc", "full-viking")

DATA_KEYS = {
    "sinusoid": {"noise_std": 0.1, "seed": 0, "standardize": True, "grid": [0.25, 0.75],
                 "grid_points": 200, "val_seed": 1},
    "blobs": {"n": 200, "dim": 2, "separation": 1.0, "spread": 1.0, "seed": 0,
              "train_fraction": 0.9, "split_seed": 0, "standardize": True},
    "csv": {"path": None, "target": None, "categorical": False, "train_fraction": 0.9,
            "seed": 0, "standardize": True},
    "idx": {"images": None, "labels": None, "train_fraction": 0.9, "seed": 0,
            "standardize": True, "limit": None},
}
PATH_KEYS = {"csv": ("path",), "idx": ("images", "labels")}

EVAL_DEFAULTS = {"cg_iters": 50, "cg_tol": 1e-10, "bins": 15, "grid_points": 200}


@dataclass
class RunConfig:
    model: ModelSpec
    data: dict
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/default"
    mode: str = "full-viking"
    seed: int = 0
    checkpoint_every: int = 0
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))

    @property
    def jacobian(self) -> str:
        return self.train.jacobian

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "out_dir": self.out_dir,
            "checkpoint_every": self.checkpoint_every,
            "model": self.model.to_dict(),
            "data": dict(self.data),
            "train": self.train.to_dict(),
            "eval": dict(self.eval),
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _data_violations(d) -> list[str]:
    if not isinstance(d, dict) or "kind" not in d:
        return ["data: missing 'kind'"]
    kind = d["kind"]
    if kind not in DATA_KEYS:
        return [f"data.kind: unknown {kind!r}; choose from {sorted(DATA_KEYS)}"]
    out = []
    allowed = set(DATA_KEYS[kind]) | {"kind"}
    for k in sorted(set(d) - allowed):
        out.append(f"data.{k}: unknown key for kind {kind!r}")
    for k, default in DATA_KEYS[kind].items():
        if default is None and k not in ("limit",) and d.get(k) is None:
            out.append(f"data.{k}: required for kind {kind!r}")
    for k in PATH_KEYS.get(kind, ()):
        p = d.get(k)
        if p is not None and not Path(p).exists():
            out.append(f"data.{k}: path does not exist: {p}")
    if "train_fraction" in d and not 0 < float(d["train_fraction"]) <= 1:
        out.append("data.train_fraction: must lie in (0, 1]")
    if kind == "sinusoid" and "noise_std" in d and not 1e-3 <= float(d["noise_std"]) <= 1:
        out.append("data.noise_std: must lie in [1e-3, 1]")
    return out


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a raw mapping and build a :class:`RunConfig`.

    Relative data paths are resolved against ``base_dir``. Every violation is
    collected before raising :class:`ConfigError`.
    """
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    bad = []
    known = {f.name for f in fields(RunConfig)}
    for k in sorted(set(raw) - known):
        bad.append(f"{k}: unknown top-level key")

    model = None
    if "model" not in raw:
        bad.append("model: missing")
    else:
        try:
            model = ModelSpec.from_dict(raw["model"])
        except (ShapeError, KeyError, TypeError, ValueError) as exc:
            bad.append(f"model: {exc}")

    data = dict(raw.get("data") or {})
    if base_dir is not None:
        for k in PATH_KEYS.get(data.get("kind"), ()):
            if data.get(k) is not None and not Path(data[k]).is_absolute():
                data[k] = str(Path(base_dir) / data[k])
    bad += _data_violations(data) if "data" in raw else ["data: missing"]

    tcfg = None
    try:
        tcfg = TrainConfig.from_dict(dict(raw.get("train") or {}))
        bad += [f"train.{v}" for v in tcfg.violations()]
    except (TypeError, ValueError) as exc:
        bad.append(f"train: {exc}")

    mode = raw.get("mode", "full-viking")
    if mode not in MODES:
        bad.append(f"mode: must be one of {MODES}")
    ev = dict(EVAL_DEFAULTS)
    for k, v in (raw.get("eval") or {}).items():
        if k not in EVAL_DEFAULTS:
            bad.append(f"eval.{k}: unknown key")
        else:
            ev[k] = v
    if int(raw.get("checkpoint_every", 0)) < 0:
        bad.append("checkpoint_every: must be >= 0")

    if model is not None and data.get("kind") in ("sinusoid",) and model.loss != "gaussian":
        bad.append("model.loss: sinusoid data needs the gaussian loss")
    if model is not None and data.get("kind") in ("blobs", "idx") and model.loss != "categorical":
        bad.append(f"model.loss: {data.get('kind')} data needs the categorical loss")
    if bad:
        raise ConfigError(bad)
    return RunConfig(model=model, data=data, train=tcfg, out_dir=str(raw.get("out_dir", "runs/default")),
                     mode=mode, seed=int(raw.get("seed", 0)),
                     checkpoint_every=int(raw.get("checkpoint_every", 0)), eval=ev)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file does not exist: {path}"])
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML parse error: {exc}"]) from exc
    return parse_config(raw, base_dir=path.parent)


@dataclass
class Dataset:
    train: Batch
    val: Batch | None
    grid: np.ndarray | None = None          # evaluation grid, model coordinates
    grid_raw: np.ndarray | None = None      # same grid before standardization

    @property
    def eval_batch(self) -> Batch:
        return self.val if self.val is not None else self.train


def build_dataset(d: dict, grid_points: int | None = None) -> Dataset:
    """Materialize a validated ``data`` section."""
    kind = d["kind"]
    p = {**DATA_KEYS[kind], **d}
    if kind == "sinusoid":
        gp = grid_points or p["grid_points"]
        train, grid = datamod.make_sinusoid(p["noise_std"], p["seed"], tuple(p["grid"]), gp)
        val, _ = datamod.make_sinusoid(p["noise_std"], p["val_seed"], tuple(p["grid"]), gp)
        grid_raw = grid
        if p["standardize"]:
            st = datamod.Standardizer.fit(train.inputs)
            train = Batch(st.transform(train.inputs), train.targets, {"standardizer": st})
            val = Batch(st.transform(val.inputs), val.targets, {"standardizer": st})
            grid = st.transform(grid)
        return Dataset(train, val, grid, grid_raw)
    if kind == "blobs":
        full = datamod.make_blobs(p["n"], p["seed"], p["dim"], p["separation"], p["spread"])
        train, val = datamod.split(full, datamod.SplitSpec(p["train_fraction"], p["split_seed"],
                                                           p["standardize"]))
        return Dataset(train, val)
    split = datamod.SplitSpec(p["train_fraction"], p["seed"], p["standardize"])
    if kind == "csv":
        train, val = datamod.load_csv(p["path"], p["target"], split, p["categorical"])
        grid = grid_raw = None
        if train.inputs.shape[1] == 1 and not p["categorical"]:
            lo, hi = train.inputs.min(), train.inputs.max()
            pad = 0.25 * (hi - lo)
            grid = np.linspace(lo - pad, hi + pad, grid_points or 200)[:, None]
            st = train.meta.get("standardizer")
            grid_raw = st.inverse(grid) if st is not None else grid
        return Dataset(train, val, grid, grid_raw)
    train, val = datamod.load_idx(p["images"], p["labels"], split)
    if p.get("limit"):
        train = train.subset(slice(0, int(p["limit"])))
    return Dataset(train, val)
