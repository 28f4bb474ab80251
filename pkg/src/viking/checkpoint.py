"""Versioned binary container for a trained posterior.

Layout (all integers little-endian)::

    offset  size   content
    0       8      magic  b"VIKNGCKP"
    8       4      uint32 format version (currently 1)
    12      4      uint32 header length H
    16      H      UTF-8 JSON header: model spec, model hash, seed, n_params
    16+H    8      float64 log_alpha
    24+H    8      float64 log_sigma_im
    32+H    8*D    float64 theta_hat

Scales are stored in binary so infinities (a point-mass posterior) and every
bit of the mean round-trip exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, IncompatibleCheckpointError
from .net import ModelSpec
from .posterior import Posterior

MAGIC = b"VIKNGCKP"
VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(posterior: Posterior, spec: ModelSpec, seed: int | None = None) -> bytes:
    if posterior.dim != spec.n_params:
        raise IncompatibleCheckpointError(
            f"posterior has {posterior.dim} params, model declares {spec.n_params}"
        )
    header = json.dumps({
        "model": spec.to_dict(),
        "model_hash": spec.hash(),
        "seed": seed,
        "n_params": spec.n_params,
    }, sort_keys=True).encode()
    payload = np.concatenate([[posterior.log_alpha, posterior.log_sigma_im], posterior.theta_hat])
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload.astype("<f8").tobytes()


def loads(blob: bytes) -> tuple[Posterior, ModelSpec, dict]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", field="magic")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", field="version")
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}", field="header") from exc
    spec = ModelSpec.from_dict(header["model"])
    if spec.hash() != header.get("model_hash"):
        raise FormatError("model hash does not match stored model spec", field="model_hash")
    body = blob[16 + hlen:]
    D = int(header["n_params"])
    if len(body) != 8 * (D + 2):
        raise FormatError(f"expected {D + 2} float64 values, found {len(body) / 8:g}",
                          field="payload")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    posterior = Posterior(values[2:].copy(), log_alpha=values[0], log_sigma_im=values[1])
    return posterior, spec, header


def save(path, posterior: Posterior, spec: ModelSpec, seed: int | None = None) -> None:
    atomic_write_bytes(path, dumps(posterior, spec, seed))


def load(path) -> tuple[Posterior, ModelSpec, dict]:
    return loads(Path(path).read_bytes())
