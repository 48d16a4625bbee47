"""Two-headed MLP with manual backpropagation and SGD-momentum updates.

A shared encoder feeds a contrastive projection head (dense - rectifier -
dense - L2 normalization, unit-norm output) and a scalar regression head.
Gradients from both heads are chained through the normalization Jacobian
and the encoder by hand; no autograd framework is involved.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from adacon.losses import EmbeddingBatch

__all__ = [
    "ModelSpec",
    "ModelParams",
    "OptimizerState",
    "NumericalError",
    "init_params",
    "forward",
    "backward",
    "backward_and_step",
    "lr_at",
    "save_checkpoint",
    "load_checkpoint",
]

DEGENERATE_NORM = 1e-12

CHECKPOINT_MAGIC = b"ADCCKPT1"


class NumericalError(RuntimeError):
    """Raised when a step would produce or consume non-finite values."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple = (64, 64)
    proj_dim: int = 128
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.proj_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation: {self.activation!r}")

    def param_shapes(self) -> dict:
        """Ordered name -> shape map; the canonical flattening order."""
        shapes = {}
        prev = self.input_dim
        for i, h in enumerate(self.hidden):
            shapes[f"enc{i}_W"] = (prev, h)
            shapes[f"enc{i}_b"] = (h,)
            prev = h
        shapes["proj0_W"] = (prev, prev)
        shapes["proj0_b"] = (prev,)
        shapes["proj1_W"] = (prev, self.proj_dim)
        shapes["proj1_b"] = (self.proj_dim,)
        shapes["reg_W"] = (prev, 1)
        shapes["reg_b"] = (1,)
        return shapes


@dataclass
class ModelParams:
    spec: ModelSpec
    arrays: dict  # name -> float64 ndarray, keys per spec.param_shapes()

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})


@dataclass
class OptimizerState:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step_count: int = 0
    buffers: dict = field(default_factory=dict)


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Uniform fan-in initialization, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("_W"):
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            fan_in = spec.param_shapes()[name.replace("_b", "_W")][0]
            arrays[name] = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in),
                                       size=shape)
    return ModelParams(spec, arrays)


def _act(spec: ModelSpec, x):
    return np.maximum(x, 0.0) if spec.activation == "relu" else np.tanh(x)


def _act_grad(spec: ModelSpec, pre, post):
    if spec.activation == "relu":
        return (pre > 0).astype(np.float64)
    return 1.0 - post * post


def forward(params: ModelParams, inputs, labels=None, source_ids=None):
    """Run both heads. Returns (EmbeddingBatch, predictions, cache).

    labels/source_ids are attached to the embedding batch for loss
    bookkeeping; when omitted, zeros are used (inference-only callers
    ignore them). Pre-normalization vectors with norm < 1e-12 map to the
    first standard basis vector with a zero Jacobian.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.spec.input_dim:
        raise ValueError("dimension mismatch: input width")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    spec = params.spec
    a = params.arrays

    cache = {"x": x, "enc_pre": [], "enc_post": []}
    h = x
    for i in range(len(spec.hidden)):
        pre = h @ a[f"enc{i}_W"] + a[f"enc{i}_b"]
        h = _act(spec, pre)
        cache["enc_pre"].append(pre)
        cache["enc_post"].append(h)
    cache["enc_out"] = h

    p_pre = h @ a["proj0_W"] + a["proj0_b"]
    p_post = _act(spec, p_pre)
    v = p_post @ a["proj1_W"] + a["proj1_b"]
    norms = np.linalg.norm(v, axis=1)
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    z = v / safe[:, None]
    if np.any(degenerate):
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
    cache.update(p_pre=p_pre, p_post=p_post, v=v, norms=safe,
                 degenerate=degenerate, z=z)

    preds = (h @ a["reg_W"] + a["reg_b"]).ravel()

    b = x.shape[0]
    if labels is None:
        labels = np.zeros(b)
    if source_ids is None:
        source_ids = np.arange(b)
    batch = EmbeddingBatch(z, labels, source_ids)
    return batch, preds, cache


def backward(params: ModelParams, cache, grad_embeddings, grad_predictions) -> dict:
    """Parameter gradients for given head gradients; same keys as arrays."""
    spec = params.spec
    a = params.arrays
    grads = {}

    z = cache["z"]
    gz = np.asarray(grad_embeddings, dtype=np.float64)
    gp = np.asarray(grad_predictions, dtype=np.float64).ravel()

    # normalization Jacobian: d(v/|v|) pullback = (g - (g.z) z) / |v|
    gv = (gz - (np.sum(gz * z, axis=1, keepdims=True)) * z) / cache["norms"][:, None]
    gv[cache["degenerate"]] = 0.0

    grads["proj1_W"] = cache["p_post"].T @ gv
    grads["proj1_b"] = gv.sum(axis=0)
    g_ppost = gv @ a["proj1_W"].T
    g_ppre = g_ppost * _act_grad(spec, cache["p_pre"], cache["p_post"])
    grads["proj0_W"] = cache["enc_out"].T @ g_ppre
    grads["proj0_b"] = g_ppre.sum(axis=0)
    g_enc = g_ppre @ a["proj0_W"].T

    grads["reg_W"] = cache["enc_out"].T @ gp[:, None]
    grads["reg_b"] = np.array([gp.sum()])
    g_enc = g_enc + gp[:, None] @ a["reg_W"].T

    for i in reversed(range(len(spec.hidden))):
        g_pre = g_enc * _act_grad(spec, cache["enc_pre"][i], cache["enc_post"][i])
        below = cache["enc_post"][i - 1] if i > 0 else cache["x"]
        grads[f"enc{i}_W"] = below.T @ g_pre
        grads[f"enc{i}_b"] = g_pre.sum(axis=0)
        g_enc = g_pre @ a[f"enc{i}_W"].T

    return grads


def backward_and_step(params: ModelParams, cache, grad_embeddings,
                      grad_predictions, opt: OptimizerState, lr=None):
    """Backprop and apply one SGD-momentum step in place.

    Weight decay hits weight matrices only. Non-finite gradients reject the
    step; a step that would make any parameter non-finite is also rejected.
    """
    grads = backward(params, cache, grad_embeddings, grad_predictions)
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; step rejected")
    step_lr = opt.lr if lr is None else lr
    if not opt.buffers:
        opt.buffers = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    for name, g in grads.items():
        if name.endswith("_W") and opt.weight_decay:
            g = g + opt.weight_decay * params.arrays[name]
        buf = opt.buffers[name]
        buf *= opt.momentum
        buf += g
        new = params.arrays[name] - step_lr * buf
        if not np.all(np.isfinite(new)):
            raise NumericalError("non-finite parameter; step rejected")
        params.arrays[name] = new
    opt.step_count += 1
    return params, opt


def lr_at(base_lr: float, milestones, step: int, factor: float = 0.1) -> float:
    """Piecewise-constant decay; each reached milestone multiplies by factor."""
    ms = list(milestones)
    if any(b >= c for b, c in zip(ms, ms[1:])):
        raise ValueError("milestones must be strictly increasing")
    passed = sum(1 for m in ms if step >= m)
    return base_lr * factor ** passed


def save_checkpoint(params: ModelParams, path):
    """Flat binary container: magic, json spec header, little-endian float64."""
    header = json.dumps({
        "input_dim": params.spec.input_dim,
        "hidden": list(params.spec.hidden),
        "proj_dim": params.spec.proj_dim,
        "activation": params.spec.activation,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in params.spec.param_shapes():
            arr = np.ascontiguousarray(params.arrays[name], dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(8) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode())
    spec = ModelSpec(input_dim=header["input_dim"], hidden=tuple(header["hidden"]),
                     proj_dim=header["proj_dim"], activation=header["activation"])
    if expected_spec is not None and spec != expected_spec:
        raise ValueError("checkpoint spec header does not match expected spec")
    arrays = {}
    for name, shape in spec.param_shapes().items():
        count = int(np.prod(shape))
        raw = buf.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError("truncated checkpoint")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if buf.read(1):
        raise ValueError("trailing bytes in checkpoint")
    return ModelParams(spec, arrays)
