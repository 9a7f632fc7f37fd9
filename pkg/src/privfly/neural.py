"""Minimal dense-network engine in 64-bit floats.

Forward pass, exact per-sample gradients via backpropagation, the loss
family used across the pipeline (cross-entropy with optional class
weights, focal, MSE, BCE), plain SGD, and a simple checkpoint format.
Everything is deterministic: batch reductions always sum along a fixed
axis so results do not depend on worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "identity", "softmax")
LOSS_KINDS = ("cross_entropy", "focal", "mse", "bce")

_EPS = 1e-12


@dataclass(eq=False)
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str


@dataclass(eq=False)
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ShapeError("softmax is only allowed on the output layer")
            if i > 0 and layer.w.shape[1] != self.layers[i - 1].w.shape[0]:
                raise ShapeError(f"layer {i}: input dim does not chain with previous layer")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise NumericError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [l.w.shape[0] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def params(self) -> list[np.ndarray]:
        """Parameters in checkpoint order: weights then bias, per layer."""
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


def init_net(layer_dims, activations, seed: int) -> DenseNet:
    """Glorot-uniform weights, zero biases, deterministic under seed."""
    if len(activations) != len(layer_dims) - 1:
        raise ShapeError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_dims[:-1], layer_dims[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "identity":
        return z
    if kind == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ShapeError(f"unknown activation {kind!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    """d(activation)/dz, elementwise. Softmax is handled by fused deltas."""
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(z)
    raise ShapeError(f"no elementwise gradient for activation {kind!r}")


def forward_trace(net: DenseNet, batch: np.ndarray):
    """All pre-activations and activations; a[0] is the input batch."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"batch has {x.shape} but net expects (*, {net.input_dim})")
    zs, acts = [], [x]
    for layer in net.layers:
        z = acts[-1] @ layer.w.T + layer.b
        zs.append(z)
        acts.append(_activate(z, layer.activation))
    return zs, acts


def forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    """Outputs for a batch; softmax rows sum to 1."""
    _, acts = forward_trace(net, batch)
    return acts[-1]


def forward_logits(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    """Outputs with the final softmax (if any) left off."""
    zs, acts = forward_trace(net, batch)
    return zs[-1] if net.layers[-1].activation == "softmax" else acts[-1]


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cross_entropy"
    class_weights: tuple[float, ...] | None = None
    focal_gamma: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ShapeError(f"unknown loss kind {self.kind!r}")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ShapeError("class weights must be positive")
        if self.focal_gamma is not None and self.focal_gamma < 0:
            raise ShapeError("focal gamma must be non-negative")


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite values in loss inputs")


def _sample_weights(spec: LossSpec, targets: np.ndarray, n_classes: int) -> np.ndarray:
    if spec.class_weights is None:
        return np.ones(len(targets))
    w = np.asarray(spec.class_weights, dtype=np.float64)
    if len(w) != n_classes:
        raise ShapeError(f"{len(w)} class weights for {n_classes} classes")
    return w[targets]


def per_sample_loss(spec: LossSpec, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Unaveraged loss per sample; `loss` is its mean."""
    outputs = np.asarray(outputs, dtype=np.float64)
    _check_finite(outputs)
    if spec.kind in ("cross_entropy", "focal"):
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 1 or len(targets) != len(outputs):
            raise ShapeError("class targets must be a vector matching the batch")
        p = np.clip(outputs[np.arange(len(outputs)), targets], _EPS, 1.0 - _EPS)
        weights = _sample_weights(spec, targets, outputs.shape[1])
        if spec.kind == "cross_entropy":
            return -weights * np.log(p)
        gamma = 0.0 if spec.focal_gamma is None else spec.focal_gamma
        return -weights * (1.0 - p) ** gamma * np.log(p)
    targets = np.asarray(targets, dtype=np.float64)
    _check_finite(targets)
    if targets.shape != outputs.shape:
        raise ShapeError("targets must match outputs for mse/bce")
    if spec.kind == "mse":
        return np.mean((outputs - targets) ** 2, axis=1)
    p = np.clip(outputs, _EPS, 1.0 - _EPS)
    return -np.mean(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p), axis=1)


def loss(spec: LossSpec, outputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean loss over the batch."""
    return float(np.mean(per_sample_loss(spec, outputs, targets)))


def _output_delta(net: DenseNet, spec: LossSpec, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """dL_i/dz at the final pre-activation, for the unaveraged per-sample loss."""
    final_act = net.layers[-1].activation
    b, k = outputs.shape
    if spec.kind in ("cross_entropy", "focal"):
        if final_act != "softmax":
            raise ShapeError(f"{spec.kind} loss requires a softmax output layer")
        targets = np.asarray(targets, dtype=np.int64)
        weights = _sample_weights(spec, targets, k)
        onehot = np.zeros((b, k))
        onehot[np.arange(b), targets] = 1.0
        if spec.kind == "cross_entropy" or not spec.focal_gamma:
            # Fused softmax + (optionally weighted) cross-entropy.
            return (outputs - onehot) * weights[:, None]
        gamma = spec.focal_gamma
        p_t = np.clip(outputs[np.arange(b), targets], _EPS, 1.0 - _EPS)
        # dL/dp_t, then the softmax Jacobian p * (g - <g, p>).
        dl_dp = np.zeros((b, k))
        dl_dp[np.arange(b), targets] = -weights * (
            -gamma * (1.0 - p_t) ** (gamma - 1.0) * np.log(p_t) + (1.0 - p_t) ** gamma / p_t
        )
        inner = np.sum(dl_dp * outputs, axis=1, keepdims=True)
        return outputs * (dl_dp - inner)
    targets = np.asarray(targets, dtype=np.float64)
    if spec.kind == "mse":
        if final_act != "identity":
            raise ShapeError("mse loss requires an identity output layer")
        return 2.0 * (outputs - targets) / k
    if final_act != "sigmoid":
        raise ShapeError("bce loss requires a sigmoid output layer")
    return (outputs - targets) / k  # fused sigmoid + mean-over-dim BCE


def backprop_from_delta(net: DenseNet, zs, acts, delta_last: np.ndarray):
    """Per-sample gradients given dL_i/dz at the output layer.

    Returns ([(dW: B x out x in, db: B x out) per layer], dL_i/d(input)).
    """
    stacked = [None] * len(net.layers)
    delta = delta_last
    for l in range(len(net.layers) - 1, -1, -1):
        stacked[l] = (np.einsum("bo,bi->boi", delta, acts[l]), delta)
        if l > 0:
            prev = net.layers[l - 1]
            delta = (delta @ net.layers[l].w) * _activation_grad(zs[l - 1], acts[l], prev.activation)
    return stacked, delta @ net.layers[0].w


def backprop_from_output_grad(net: DenseNet, zs, acts, d_out: np.ndarray):
    """Like :func:`backprop_from_delta` but starting from dL_i/d(output activation)."""
    final = net.layers[-1]
    if final.activation == "softmax":
        inner = np.sum(d_out * acts[-1], axis=1, keepdims=True)
        delta = acts[-1] * (d_out - inner)
    else:
        delta = d_out * _activation_grad(zs[-1], acts[-1], final.activation)
    return backprop_from_delta(net, zs, acts, delta)


def per_sample_grads_stacked(net: DenseNet, batch, targets, spec: LossSpec):
    """Stacked per-sample gradients: [(dW: B x out x in, db: B x out), ...]."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) == 0:
        raise ShapeError("empty batch")
    zs, acts = forward_trace(net, batch)
    delta = _output_delta(net, spec, acts[-1], targets)
    stacked, _ = backprop_from_delta(net, zs, acts, delta)
    return stacked


@dataclass(eq=False)
class GradientSet:
    """Gradients for every parameter of one net, in ``params()`` order."""

    arrays: tuple[np.ndarray, ...]

    def l2_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays)))

    def scaled(self, s: float) -> "GradientSet":
        return GradientSet(tuple(a * s for a in self.arrays))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays)


def _grads_from_stacked(stacked, i: int) -> GradientSet:
    arrays = []
    for dw, db in stacked:
        arrays.append(dw[i])
        arrays.append(db[i])
    return GradientSet(tuple(arrays))


def per_sample_gradients(net: DenseNet, batch, targets, spec: LossSpec) -> list[GradientSet]:
    """Gradient of each sample's unaveraged loss w.r.t. all parameters."""
    stacked = per_sample_grads_stacked(net, batch, targets, spec)
    return [_grads_from_stacked(stacked, i) for i in range(len(stacked[0][1]))]


def mean_gradient(grads: list[GradientSet]) -> GradientSet:
    """Mean over samples with a fixed, worker-independent summation order."""
    if not grads:
        raise ShapeError("cannot average zero gradients")
    n = len(grads)
    arrays = []
    for j in range(len(grads[0].arrays)):
        arrays.append(np.sum(np.stack([g.arrays[j] for g in grads]), axis=0) / n)
    return GradientSet(tuple(arrays))


def batch_gradient(net: DenseNet, batch, targets, spec: LossSpec) -> GradientSet:
    """Gradient of the mean loss, computed as the mean of per-sample gradients."""
    stacked = per_sample_grads_stacked(net, batch, targets, spec)
    n = len(stacked[0][1])
    arrays = []
    for dw, db in stacked:
        arrays.append(np.sum(dw, axis=0) / n)
        arrays.append(np.sum(db, axis=0) / n)
    return GradientSet(tuple(arrays))


def sgd_step(net: DenseNet, grad: GradientSet, lr: float) -> DenseNet:
    """theta <- theta - lr * g, returning a new net."""
    params = net.params()
    if len(params) != len(grad.arrays):
        raise ShapeError("gradient does not match net parameters")
    layers = []
    it = iter(grad.arrays)
    for layer in net.layers:
        gw, gb = next(it), next(it)
        if gw.shape != layer.w.shape or gb.shape != layer.b.shape:
            raise ShapeError("gradient shapes do not match net parameters")
        layers.append(Layer(layer.w - lr * gw, layer.b - lr * gb, layer.activation))
    return DenseNet(layers)


CHECKPOINT_VERSION = 1


def save_net(net: DenseNet, path: str | Path, seed: int | None = None) -> None:
    """One-line JSON header then a little-endian float64 parameter blob."""
    header = {
        "layer_dims": net.layer_dims,
        "activations": net.activations,
        "seed": seed,
        "version": CHECKPOINT_VERSION,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_net(path: str | Path) -> DenseNet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise NumericError(f"unsupported checkpoint version {header.get('version')!r}")
        dims, act = header["layer_dims"], header["activations"]
        layers = []
        for fan_in, fan_out, kind in zip(dims[:-1], dims[1:], act):
            w = np.frombuffer(fh.read(8 * fan_out * fan_in), dtype="<f8").reshape(fan_out, fan_in)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            layers.append(Layer(w.astype(np.float64), b.astype(np.float64), kind))
    return DenseNet(layers)
