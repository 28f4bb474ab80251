import numpy as np
import pytest
import yaml

from viking.config import build_dataset, load_config, parse_config
from viking.errors import ConfigError

BASE = {
    "model": {"sizes": [2, 4, 2], "activations": ["tanh"], "loss": "categorical"},
    "data": {"kind": "blobs", "n": 40},
}


def test_defaults_fill_in():
    cfg = parse_config(BASE)
    assert cfg.mode == "full-viking" and cfg.seed == 0
    assert cfg.eval["bins"] == 15 and cfg.jacobian == "loss"


def test_dump_load_is_a_fixed_point():
    cfg = parse_config({**BASE, "seed": 3, "train": {"gamma": 0.3, "clip": 1.0}})
    text = cfg.dumps()
    again = parse_config(yaml.safe_load(text))
    assert again.dumps() == text and again == cfg


def test_every_violation_is_reported():
    raw = {"model": {"sizes": [2, 4, 2], "activations": ["tanh"], "loss": "gaussian"},
           "data": {"kind": "blobs", "colour": "red"}, "train": {"gamma": 3},
           "mode": "bogus", "extra": 1, "eval": {"bins2": 4}}
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    text = str(info.value)
    for needle in ("extra", "data.colour", "gamma", "mode", "eval.bins2", "categorical loss"):
        assert needle in text
    assert len(info.value.violations) == 6


def test_missing_paths_are_violations(tmp_path):
    raw = {"model": {"sizes": [1, 3, 1], "activations": ["tanh"], "loss": "gaussian"},
           "data": {"kind": "csv", "path": "nowhere.csv", "target": "y"}}
    f = tmp_path / "c.yaml"
    f.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError) as info:
        load_config(f)
    assert "does not exist" in str(info.value)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "d.csv").write_text("x,y\n0,1\n1,2\n2,3\n3,4\n")
    raw = {"model": {"sizes": [1, 3, 1], "activations": ["tanh"], "loss": "gaussian"},
           "data": {"kind": "csv", "path": "d.csv", "target": "y", "train_fraction": 0.5}}
    f = tmp_path / "c.yaml"
    f.write_text(yaml.safe_dump(raw))
    ds = build_dataset(load_config(f).data, grid_points=7)
    assert len(ds.train) == 2 and ds.grid.shape == (7, 1)


def test_sinusoid_dataset_has_separate_validation_noise():
    ds = build_dataset({"kind": "sinusoid", "seed": 0, "val_seed": 1})
    np.testing.assert_array_equal(ds.train.inputs, ds.val.inputs)
    assert not np.array_equal(ds.train.targets, ds.val.targets)
    assert ds.grid_raw.shape == (200, 1)
