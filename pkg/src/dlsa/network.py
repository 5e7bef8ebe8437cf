"""Feature extractor G and classifier F as one small MLP with manual backprop.

Hidden layers are ``linear -> [batchnorm] -> activation``; the final layer is
a plain linear map to the class logits. The alignment latent is hidden layer
``latent_layer`` taken after batch norm and before the activation, so a ReLU
cannot zero out a whole latent coordinate. When ``latent_layer`` points at
the final layer the latent is the logits themselves.

Everything here is pure: ``forward`` never mutates the parameters, it returns
the updated batch-norm running statistics in the trace and the caller decides
whether to keep them (see :func:`apply_running_stats`).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import CheckpointError, ConfigError, LabelError, ShapeError
from .tensor import DTYPE, as_matrix

ACTIVATIONS = ("relu", "identity")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
CHECKPOINT_MAGIC = "DLSA1"


@dataclass
class Layer:
    weights: np.ndarray  # (in_dim, out_dim)
    biases: np.ndarray  # (out_dim,); held at zero on batch-normalized layers
    use_batchnorm: bool = False
    scale: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class MlpParams:
    layers: list[Layer]
    activation: str = "relu"
    latent_layer: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k - 1].out_dim != self.layers[k].in_dim:
                raise ShapeError(
                    f"layer {k - 1} outputs {self.layers[k - 1].out_dim} "
                    f"but layer {k} expects {self.layers[k].in_dim}"
                )
        if self.layers[-1].use_batchnorm:
            raise ConfigError("the logit layer cannot use batch normalization")
        if not 0 <= self.latent_layer < len(self.layers):
            raise ConfigError(f"latent_layer {self.latent_layer} out of range")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def latent_dim(self) -> int:
        return self.layers[self.latent_layer].out_dim

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)


@dataclass
class LayerGrad:
    weights: np.ndarray
    biases: np.ndarray
    scale: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None


@dataclass
class GradientSet:
    layers: list[LayerGrad]

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            [
                LayerGrad(
                    g.weights * factor,
                    g.biases * factor,
                    None if g.scale is None else g.scale * factor,
                    None if g.shift is None else g.shift * factor,
                )
                for g in self.layers
            ]
        )


@dataclass
class LayerCache:
    inputs: np.ndarray
    linear: np.ndarray  # x @ W + b, before batch norm
    normalized: Optional[np.ndarray] = None  # x_hat
    mean: Optional[np.ndarray] = None  # statistics used for normalization
    var: Optional[np.ndarray] = None
    preact: Optional[np.ndarray] = None  # after batch norm, before activation
    output: Optional[np.ndarray] = None


@dataclass
class ForwardTrace:
    mode: str
    caches: list[LayerCache]
    latent: np.ndarray
    logits: np.ndarray
    running_stats: list[Optional[tuple[np.ndarray, np.ndarray]]] = field(default_factory=list)


# -- construction ---------------------------------------------------------


def init_params(
    layer_sizes: Sequence[int],
    seed: int,
    *,
    use_batchnorm: bool = True,
    activation: str = "relu",
    latent_layer: Optional[int] = None,
) -> MlpParams:
    """Glorot-uniform initialisation.

    ``layer_sizes`` is ``[input_dim, hidden..., num_classes]``. By default the
    last hidden layer is the alignment latent.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConfigError(f"invalid layer sizes {sizes}")
    n_layers = len(sizes) - 1
    if latent_layer is None:
        latent_layer = max(n_layers - 2, 0)
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(n_layers):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        hidden = k < n_layers - 1
        bn = use_batchnorm and hidden
        layers.append(
            Layer(
                weights=w,
                biases=np.zeros(fan_out, dtype=DTYPE),
                use_batchnorm=bn,
                scale=np.ones(fan_out, dtype=DTYPE) if bn else None,
                shift=np.zeros(fan_out, dtype=DTYPE) if bn else None,
                running_mean=np.zeros(fan_out, dtype=DTYPE) if bn else None,
                running_var=np.ones(fan_out, dtype=DTYPE) if bn else None,
            )
        )
    return MlpParams(layers=layers, activation=activation, latent_layer=latent_layer)


# -- forward / backward ---------------------------------------------------


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    return x


def forward(params: MlpParams, inputs, mode: str = "train") -> ForwardTrace:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_matrix(inputs, name="input")
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {params.input_dim}")
    last = len(params.layers) - 1
    caches: list[LayerCache] = []
    running: list[Optional[tuple[np.ndarray, np.ndarray]]] = []
    latent = None
    for k, layer in enumerate(params.layers):
        linear = x @ layer.weights
        if not layer.use_batchnorm:
            linear = linear + layer.biases
        cache = LayerCache(inputs=x, linear=linear)
        stats = None
        h = linear
        if layer.use_batchnorm:
            if mode == "train":
                n = linear.shape[0]
                if n < 2:
                    raise ShapeError("batch normalization in train mode needs at least 2 rows")
                mean = linear.mean(axis=0)
                var = linear.var(axis=0)
                unbiased = var * n / (n - 1)
                stats = (
                    (1 - BN_MOMENTUM) * layer.running_mean + BN_MOMENTUM * mean,
                    (1 - BN_MOMENTUM) * layer.running_var + BN_MOMENTUM * unbiased,
                )
            else:
                mean, var = layer.running_mean, layer.running_var
            xhat = (linear - mean) / np.sqrt(var + BN_EPS)
            h = layer.scale * xhat + layer.shift
            cache.normalized, cache.mean, cache.var = xhat, mean, var
        cache.preact = h
        x = h if k == last else _activate(h, params.activation)
        cache.output = x
        caches.append(cache)
        running.append(stats)
        if k == params.latent_layer:
            latent = h
    return ForwardTrace(mode=mode, caches=caches, latent=latent, logits=x, running_stats=running)


def apply_running_stats(params: MlpParams, trace: ForwardTrace) -> MlpParams:
    """Return params with the running statistics recorded in a train-mode trace."""
    if trace.mode != "train":
        return params
    layers = []
    for layer, stats in zip(params.layers, trace.running_stats):
        if stats is not None:
            layer = dataclasses.replace(layer, running_mean=stats[0], running_var=stats[1])
        layers.append(layer)
    return dataclasses.replace(params, layers=layers)


def backward(
    trace: ForwardTrace,
    upstream_latent_grad,
    upstream_logit_grad,
    params: MlpParams,
) -> GradientSet:
    """Reverse-mode gradients of a scalar whose latent/logit gradients are given.

    Either upstream may be ``None`` (treated as zero). Contributions through
    the latent and through the logits are summed.
    """
    n = trace.logits.shape[0]
    g_logits = _upstream(upstream_logit_grad, trace.logits.shape, "logit")
    g_latent = _upstream(upstream_latent_grad, trace.latent.shape, "latent")
    last = len(params.layers) - 1
    grads: list[Optional[LayerGrad]] = [None] * len(params.layers)
    g = g_logits
    for k in range(last, -1, -1):
        layer, cache = params.layers[k], trace.caches[k]
        if g is None:
            g = np.zeros_like(cache.output)
        # through the activation
        if k != last and params.activation == "relu":
            g = g * (cache.preact > 0)
        if k == params.latent_layer and g_latent is not None:
            g = g + g_latent
        lg = LayerGrad(weights=None, biases=np.zeros(layer.out_dim, dtype=DTYPE))
        if layer.use_batchnorm:
            lg.scale = np.sum(g * cache.normalized, axis=0)
            lg.shift = np.sum(g, axis=0)
            g_hat = g * layer.scale
            inv_std = 1.0 / np.sqrt(cache.var + BN_EPS)
            if trace.mode == "train":
                centered = cache.linear - cache.mean
                g_var = np.sum(g_hat * centered, axis=0) * -0.5 * inv_std**3
                g_mean = -np.sum(g_hat, axis=0) * inv_std + g_var * np.mean(-2.0 * centered, axis=0)
                g = g_hat * inv_std + g_var * 2.0 * centered / n + g_mean / n
            else:
                g = g_hat * inv_std
        else:
            lg.biases = np.sum(g, axis=0)
        lg.weights = cache.inputs.T @ g
        grads[k] = lg
        g = g @ layer.weights.T
    return GradientSet(grads)


def _upstream(grad, shape, name):
    if grad is None:
        return None
    g = as_matrix(grad, name=f"{name} gradient")
    if g.shape != shape:
        raise ShapeError(f"{name} gradient has shape {g.shape}, expected {shape}")
    return g


def zero_grads(params: MlpParams) -> GradientSet:
    return GradientSet(
        [
            LayerGrad(
                np.zeros_like(layer.weights),
                np.zeros_like(layer.biases),
                None if layer.scale is None else np.zeros_like(layer.scale),
                None if layer.shift is None else np.zeros_like(layer.shift),
            )
            for layer in params.layers
        ]
    )


# -- loss -----------------------------------------------------------------


def _check_labels(logits: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelError(f"labels must lie in [0, {logits.shape[1]})")
    return labels.astype(np.int64)


def log_softmax(logits) -> np.ndarray:
    z = as_matrix(logits, name="logits")
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits, labels) -> float:
    return cross_entropy_with_grad(logits, labels)[0]


def cross_entropy_with_grad(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = as_matrix(logits, name="logits")
    y = _check_labels(z, labels)
    n = z.shape[0]
    logp = log_softmax(z)
    loss = -float(np.mean(logp[np.arange(n), y]))
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


# -- optimisation ---------------------------------------------------------


def sgd_step(params: MlpParams, grads: GradientSet, lr: float) -> MlpParams:
    if len(grads.layers) != len(params.layers):
        raise ShapeError("gradient set does not match parameters")
    layers = []
    for layer, g in zip(params.layers, grads.layers):
        if g.weights.shape != layer.weights.shape or g.biases.shape != layer.biases.shape:
            raise ShapeError("gradient set does not match parameters")
        updates = {"weights": layer.weights - lr * g.weights}
        if layer.use_batchnorm:
            updates["scale"] = layer.scale - lr * g.scale
            updates["shift"] = layer.shift - lr * g.shift
        else:
            updates["biases"] = layer.biases - lr * g.biases
        layers.append(dataclasses.replace(layer, **updates))
    return dataclasses.replace(params, layers=layers)


def iter_parameters(params: MlpParams) -> Iterator[tuple[str, np.ndarray]]:
    """Trainable arrays in a fixed order. Biases of batch-normalized layers are not trainable."""
    for k, layer in enumerate(params.layers):
        yield f"layers.{k}.weights", layer.weights
        if layer.use_batchnorm:
            yield f"layers.{k}.scale", layer.scale
            yield f"layers.{k}.shift", layer.shift
        else:
            yield f"layers.{k}.biases", layer.biases


def iter_gradients(params: MlpParams, grads: GradientSet) -> Iterator[tuple[str, np.ndarray]]:
    for k, (layer, g) in enumerate(zip(params.layers, grads.layers)):
        yield f"layers.{k}.weights", g.weights
        if layer.use_batchnorm:
            yield f"layers.{k}.scale", g.scale
            yield f"layers.{k}.shift", g.shift
        else:
            yield f"layers.{k}.biases", g.biases


def add_grads(a: GradientSet, b: GradientSet) -> GradientSet:
    def _add(x, y):
        return None if x is None else x + y

    return GradientSet(
        [
            LayerGrad(ga.weights + gb.weights, ga.biases + gb.biases, _add(ga.scale, gb.scale), _add(ga.shift, gb.shift))
            for ga, gb in zip(a.layers, b.layers)
        ]
    )


# -- checkpoint -----------------------------------------------------------


def params_to_dict(params: MlpParams) -> dict:
    def arr(a):
        return None if a is None else [float(x) for x in np.ravel(a)]

    return {
        "activation": params.activation,
        "latent_layer": params.latent_layer,
        "layers": [
            {
                "shape": [layer.in_dim, layer.out_dim],
                "use_batchnorm": layer.use_batchnorm,
                "weights": arr(layer.weights),
                "biases": arr(layer.biases),
                "scale": arr(layer.scale),
                "shift": arr(layer.shift),
                "running_mean": arr(layer.running_mean),
                "running_var": arr(layer.running_var),
            }
            for layer in params.layers
        ],
    }


def params_from_dict(data: dict) -> MlpParams:
    def arr(values, shape=None):
        if values is None:
            return None
        a = np.array(values, dtype=DTYPE)
        return a.reshape(shape) if shape is not None else a

    layers = []
    for item in data["layers"]:
        rows, cols = item["shape"]
        layers.append(
            Layer(
                weights=arr(item["weights"], (rows, cols)),
                biases=arr(item["biases"]),
                use_batchnorm=bool(item["use_batchnorm"]),
                scale=arr(item["scale"]),
                shift=arr(item["shift"]),
                running_mean=arr(item["running_mean"]),
                running_var=arr(item["running_var"]),
            )
        )
    return MlpParams(layers=layers, activation=data["activation"], latent_layer=int(data["latent_layer"]))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params: MlpParams, config: Optional[dict] = None) -> None:
    """Text checkpoint: a ``DLSA1`` magic line followed by one JSON document.

    Floats are written with ``repr`` precision, so a load reproduces every bit.
    """
    body = {
        "version": 1,
        "config_hash": config_hash(config or {}),
        "config": config or {},
        "params": params_to_dict(params),
    }
    Path(path).write_text(CHECKPOINT_MAGIC + "\n" + json.dumps(body) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    text = Path(path).read_text(encoding="utf-8")
    magic, _, rest = text.partition("\n")
    if magic.strip() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a DLSA1 checkpoint")
    try:
        body = json.loads(rest)
        params = params_from_dict(body["params"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return params, body
