"""Fully-connected networks with hand-written reverse- and forward-mode derivatives.

Parameters live in one flat float64 vector. Layer ``l`` owns a weight block of
shape ``(fan_in, fan_out)`` (row-major) followed by its bias ``(fan_out,)``.

Backpropagation is done layer by layer on the whole batch at once, which gives
per-datum gradient rows for free: the weight gradient of datum ``i`` is the
outer product of its layer input and its backpropagated error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

ACTIVATIONS = ("tanh", "relu", "elu", "identity")
LOSSES = ("categorical", "gaussian")
JACOBIAN_KINDS = ("loss", "model-output")

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and likelihood of an MLP.

    ``sizes`` lists every layer width including input and output, so
    ``(1, 10, 10, 1)`` has two hidden layers. ``activations`` has one entry per
    hidden layer; the output layer is always linear. A spec with no hidden
    layers is a plain affine model.
    """

    sizes: tuple[int, ...]
    activations: tuple[str, ...] = ()
    loss: str = "categorical"
    noise_std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ShapeError(f"need >= 2 positive layer sizes, got {self.sizes}")
        if len(self.activations) != len(self.sizes) - 2:
            raise ShapeError(
                f"{len(self.sizes) - 2} hidden layers but {len(self.activations)} activations"
            )
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ShapeError(f"unknown activations {bad}; choose from {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ShapeError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.loss == "categorical" and self.sizes[-1] < 2:
            raise ShapeError("categorical loss needs at least 2 outputs")
        if not self.noise_std > 0:
            raise ShapeError("noise_std must be positive")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "loss": self.loss,
            "noise_std": float(self.noise_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            sizes=tuple(d["sizes"]),
            activations=tuple(d.get("activations", ())),
            loss=d.get("loss", "categorical"),
            noise_std=float(d.get("noise_std", 1.0)),
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Batch:
    """Inputs ``(B, input_dim)`` and targets.

    Targets are integer labels ``(B,)`` for the categorical loss and real
    ``(B, output_dim)`` for gaussian regression.
    """

    inputs: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets)
        if len(self.inputs) < 1:
            raise ShapeError("batch must hold at least one datum")
        if len(self.targets) != len(self.inputs):
            raise ShapeError(
                f"{len(self.inputs)} inputs but {len(self.targets)} targets"
            )

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} params, got shape {params.shape}")
    layers, k = [], 0
    for i, o in spec.layer_shapes:
        W = params[k:k + i * o].reshape(i, o)
        k += i * o
        b = params[k:k + o]
        k += o
        layers.append((W, b))
    return layers


def pack(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Gaussian weights with std ``scale / sqrt(fan_in)``, zero biases."""
    layers = [
        (rng.standard_normal((i, o)) * scale / np.sqrt(i), np.zeros(o))
        for i, o in spec.layer_shapes
    ]
    return pack(layers)


def _act(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    return z


def _act_grad(kind, z, h):
    # h = _act(kind, z), reused where cheaper
    if kind == "tanh":
        return 1.0 - h * h
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "elu":
        return np.where(z > 0, 1.0, h + 1.0)
    return np.ones_like(z)


def _check_inputs(spec, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"inputs must be (B, {spec.input_dim}), got {np.shape(inputs)}")
    return x


def _forward_cache(spec, params, inputs):
    layers = unpack(spec, params)
    h = _check_inputs(spec, inputs)
    hs, zs = [h], []
    for l, (W, b) in enumerate(layers):
        z = h @ W + b
        zs.append(z)
        h = _act(spec.activations[l], z) if l < len(layers) - 1 else z
        hs.append(h)
    return layers, hs, zs


def forward(spec: ModelSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Network outputs ``(B, output_dim)`` (logits for the categorical loss)."""
    return _forward_cache(spec, params, inputs)[1][-1]


def _backprop_rows(spec, layers, hs, zs, cot):
    """Per-datum VJP: row i is ``cot[i] @ d f(x_i) / d theta``."""
    B = cot.shape[0]
    blocks = []
    delta = cot
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        gW = np.einsum("bi,bo->bio", hs[l], delta).reshape(B, -1)
        blocks.append((gW, delta))
        if l > 0:
            delta = (delta @ W.T) * _act_grad(spec.activations[l - 1], zs[l - 1], hs[l])
    return np.concatenate([np.concatenate(pair, axis=1) for pair in reversed(blocks)], axis=1)


def _backprop_sum(spec, layers, hs, zs, cot):
    """Summed VJP over the batch: ``sum_i cot[i] @ d f(x_i) / d theta``."""
    grads = []
    delta = cot
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        grads.append((hs[l].T @ delta, delta.sum(axis=0)))
        if l > 0:
            delta = (delta @ W.T) * _act_grad(spec.activations[l - 1], zs[l - 1], hs[l])
    return pack(reversed(grads))


def _losses_and_dout(spec, out, targets):
    """Per-datum negative log-likelihoods and their gradient w.r.t. outputs."""
    if spec.loss == "categorical":
        y = np.asarray(targets)
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
            raise ShapeError("categorical targets must be a 1-D integer array")
        if y.min() < 0 or y.max() >= spec.output_dim:
            raise ShapeError(f"labels must lie in [0, {spec.output_dim})")
        m = out.max(axis=1, keepdims=True)
        shifted = out - m
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(len(y))
        losses = lse - shifted[rows, y]
        dout = np.exp(shifted - lse[:, None])
        dout[rows, y] -= 1.0
    else:
        y = np.asarray(targets, dtype=np.float64).reshape(out.shape)
        var = spec.noise_std ** 2
        r = out - y
        losses = 0.5 * (r * r).sum(axis=1) / var + spec.output_dim * (
            0.5 * _LOG_2PI + np.log(spec.noise_std)
        )
        dout = r / var
    bad = ~np.isfinite(losses)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite loss at datum {i}", index=i)
    return losses, dout


def per_datum_losses(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """``-log p(y_i | x_i, params)`` for every datum."""
    out = forward(spec, params, batch.inputs)
    return _losses_and_dout(spec, out, batch.targets)[0]


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its gradient."""
    layers, hs, zs = _forward_cache(spec, params, batch.inputs)
    losses, dout = _losses_and_dout(spec, hs[-1], batch.targets)
    B = len(losses)
    return float(losses.mean()), _backprop_sum(spec, layers, hs, zs, dout / B)


def loss_grad_at_outputs(spec: ModelSpec, params: np.ndarray, batch: Batch, outputs: np.ndarray):
    """Mean NLL of externally supplied ``outputs`` and its gradient backpropagated at ``params``.

    Used for linearized likelihoods: the loss is scored on the linearized
    outputs while the Jacobian is taken at ``params`` and not differentiated.
    Returns ``(mean_loss, grad, dout)`` where ``dout`` is the mean-loss
    gradient w.r.t. ``outputs``.
    """
    layers, hs, zs = _forward_cache(spec, params, batch.inputs)
    losses, dout = _losses_and_dout(spec, np.asarray(outputs, dtype=np.float64), batch.targets)
    dout = dout / len(losses)
    return float(losses.mean()), _backprop_sum(spec, layers, hs, zs, dout), dout


def per_datum_grads(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Rows ``grad_theta log p(y_i | x_i)`` stacked into a ``(B, D)`` block.

    Sign convention: these are log-likelihood gradients, i.e. the negated
    per-datum loss gradients.
    """
    layers, hs, zs = _forward_cache(spec, params, batch.inputs)
    _, dout = _losses_and_dout(spec, hs[-1], batch.targets)
    return -_backprop_rows(spec, layers, hs, zs, dout)


def output_jacobian(spec: ModelSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Model-output Jacobian, shape ``(B, output_dim, D)``."""
    layers, hs, zs = _forward_cache(spec, params, inputs)
    B, O = hs[-1].shape
    jac = np.empty((B, O, spec.n_params))
    for k in range(O):
        cot = np.zeros((B, O))
        cot[:, k] = 1.0
        jac[:, k, :] = _backprop_rows(spec, layers, hs, zs, cot)
    return jac


def jvp(spec: ModelSpec, params: np.ndarray, inputs, tangent: np.ndarray) -> np.ndarray:
    """Forward-mode directional derivative ``J(x) @ tangent``, shape ``(B, output_dim)``."""
    layers = unpack(spec, params)
    dlayers = unpack(spec, np.asarray(tangent, dtype=np.float64))
    h = _check_inputs(spec, inputs)
    dh = np.zeros_like(h)
    for l, ((W, b), (dW, db)) in enumerate(zip(layers, dlayers)):
        z = h @ W + b
        dz = dh @ W + h @ dW + db
        if l < len(layers) - 1:
            kind = spec.activations[l]
            h_new = _act(kind, z)
            dh = _act_grad(kind, z, h_new) * dz
            h = h_new
        else:
            h, dh = z, dz
    return dh


def linearized_predict(spec: ModelSpec, theta_hat, theta_sample, inputs) -> np.ndarray:
    """First-order prediction ``f(theta_hat) + J(theta_hat) (theta_sample - theta_hat)``."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    delta = np.asarray(theta_sample, dtype=np.float64) - theta_hat
    return forward(spec, theta_hat, inputs) + jvp(spec, theta_hat, inputs, delta)


def jacobian_rows(spec: ModelSpec, params: np.ndarray, batch: Batch, kind: str = "loss") -> np.ndarray:
    """Dense rows whose kernel defines the projection for this batch.

    ``"loss"`` gives one log-likelihood gradient per datum; ``"model-output"``
    gives one row per datum and output unit.
    """
    if kind == "loss":
        return per_datum_grads(spec, params, batch)
    if kind == "model-output":
        return output_jacobian(spec, params, batch.inputs).reshape(-1, spec.n_params)
    raise ValueError(f"unknown jacobian kind {kind!r}; choose from {JACOBIAN_KINDS}")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
