"""Dense multi-head classifier with hand-written reverse-mode gradients.

Hidden layers apply affine -> batchnorm -> ReLU; the output layer is affine
only and its logits are split into independent heads (softmax groups or
single-logit sigmoid bits). Every head is returned as an (n, V) probability
matrix; a sigmoid bit is the two-column matrix [1 - s, s].
"""

from dataclasses import dataclass, field

import numpy as np

from .container import CHECKPOINT_MAGIC, read_tensors, write_tensors
from .errors import ConfigError, DataFormatError, ShapeError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SIGMOID_FLOOR = 1e-12

DEFAULT_HIDDEN_SCALE = 0.1
DEFAULT_OUTPUT_SCALE = 1e-4


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    batchnorm: bool = True
    bn_gamma: np.ndarray = None
    bn_beta: np.ndarray = None
    bn_running_mean: np.ndarray = None
    bn_running_var: np.ndarray = None
    bn_momentum: float = BN_MOMENTUM

    def __post_init__(self):
        n = self.W.shape[1]
        if self.bn_gamma is None:
            self.bn_gamma = np.ones(n)
        if self.bn_beta is None:
            self.bn_beta = np.zeros(n)
        if self.bn_running_mean is None:
            self.bn_running_mean = np.zeros(n)
        if self.bn_running_var is None:
            self.bn_running_var = np.ones(n)

    @property
    def fan_in(self):
        return self.W.shape[0]

    @property
    def fan_out(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class Head:
    kind: str  # "softmax" or "sigmoid"
    size: int = 1  # logits consumed; always 1 for sigmoid

    @property
    def categories(self):
        return 2 if self.kind == "sigmoid" else self.size


class MlpClassifier:
    """Stack of dense layers followed by M conditionally independent heads."""

    def __init__(self, layers, heads):
        self.layers = list(layers)
        self.heads = tuple(heads)
        self.version = 0
        if sum(h.size for h in self.heads) != self.layers[-1].fan_out:
            raise ConfigError("head sizes must add up to the output width")

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def layer_dims(self):
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    def params(self):
        """Trainable arrays by name. The arrays are live references."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layers.{i}.W"] = layer.W
            out[f"layers.{i}.b"] = layer.b
            if layer.batchnorm:
                out[f"layers.{i}.bn_gamma"] = layer.bn_gamma
                out[f"layers.{i}.bn_beta"] = layer.bn_beta
        return out

    def n_params(self):
        return sum(p.size for p in self.params().values())

    def touch(self):
        """Mark parameters as changed so older forward caches are rejected."""
        self.version += 1

    def copy(self):
        layers = [
            DenseLayer(
                W=l.W.copy(), b=l.b.copy(), batchnorm=l.batchnorm,
                bn_gamma=l.bn_gamma.copy(), bn_beta=l.bn_beta.copy(),
                bn_running_mean=l.bn_running_mean.copy(),
                bn_running_var=l.bn_running_var.copy(),
                bn_momentum=l.bn_momentum,
            )
            for l in self.layers
        ]
        return MlpClassifier(layers, self.heads)

    def __repr__(self):
        dims = "-".join(str(d) for d in self.layer_dims)
        kinds = {h.kind for h in self.heads}
        return f"MlpClassifier({dims}, heads={len(self.heads)}x{'/'.join(sorted(kinds))})"


def _resolve_heads(heads, out_dim):
    if heads == "softmax":
        return [Head("softmax", out_dim)]
    if heads == "sigmoid":
        return [Head("sigmoid", 1) for _ in range(out_dim)]
    heads = list(heads)
    for h in heads:
        if h.kind not in ("softmax", "sigmoid") or h.size < 1:
            raise ConfigError(f"bad head {h}")
        if h.kind == "sigmoid" and h.size != 1:
            raise ConfigError("sigmoid heads take exactly one logit")
    return heads


def init_params(layer_dims, scales=None, seed=0, heads="softmax"):
    """Build a classifier with He-style scaled Gaussian weights.

    Each weight element is drawn from N(0, (scale * sqrt(2 / fan_in))**2).
    Biases and batchnorm shifts start at 0, batchnorm scales at 1. With two
    entries in ``layer_dims`` the model is a plain linear classifier.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError("layer_dims needs at least an input and an output size")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"layer sizes must be positive, got {dims}")
    n_mats = len(dims) - 1
    if scales is None:
        scales = [DEFAULT_HIDDEN_SCALE] * (n_mats - 1) + [DEFAULT_OUTPUT_SCALE]
    scales = [float(s) for s in scales]
    if len(scales) != n_mats:
        raise ConfigError(f"expected {n_mats} weight scales, got {len(scales)}")

    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        std = scales[i] * np.sqrt(2.0 / fan_in)
        W = rng.standard_normal((fan_in, fan_out)) * std
        hidden = i < n_mats - 1
        layers.append(DenseLayer(W=W, b=np.zeros(fan_out), batchnorm=hidden))
    return MlpClassifier(layers, _resolve_heads(heads, dims[-1]))


@dataclass
class _LayerRecord:
    h_in: np.ndarray
    xhat: np.ndarray = None
    inv_std: np.ndarray = None
    pre_act: np.ndarray = None


@dataclass
class ForwardCache:
    model_id: int
    version: int
    mode: str
    records: list = field(default_factory=list)
    probs: list = field(default_factory=list)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.clip(s, SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)


def forward(model, x, mode="train", update_stats=True):
    """Per-head probabilities for a batch plus the cache needed by ``backward``.

    ``mode="train"`` normalizes with batch statistics and, when
    ``update_stats`` is true, folds them into the running averages.
    ``mode="infer"`` uses the running averages and leaves the model untouched.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected input with {model.input_dim} columns, got shape {x.shape}")

    cache = ForwardCache(id(model), model.version, mode)
    h = x
    n = x.shape[0]
    for layer in model.layers:
        rec = _LayerRecord(h_in=h)
        z = h @ layer.W + layer.b
        if layer.batchnorm:
            if mode == "train":
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    m = layer.bn_momentum
                    unbiased = var * n / (n - 1) if n > 1 else var
                    layer.bn_running_mean *= m
                    layer.bn_running_mean += (1 - m) * mean
                    layer.bn_running_var *= m
                    layer.bn_running_var += (1 - m) * unbiased
            else:
                mean = layer.bn_running_mean
                var = layer.bn_running_var
            rec.inv_std = 1.0 / np.sqrt(var + BN_EPS)
            rec.xhat = (z - mean) * rec.inv_std
            a = layer.bn_gamma * rec.xhat + layer.bn_beta
            rec.pre_act = a
            h = np.maximum(a, 0.0)
        else:
            h = z
        cache.records.append(rec)

    offset = 0
    for head in model.heads:
        logits = h[:, offset:offset + head.size]
        offset += head.size
        if head.kind == "softmax":
            cache.probs.append(_softmax(logits))
        else:
            s = _sigmoid(logits[:, 0])
            cache.probs.append(np.stack([1.0 - s, s], axis=1))
    return cache.probs, cache


def predict(model, x):
    """Inference-mode probabilities, no cache."""
    probs, _ = forward(model, x, mode="infer")
    return probs


def backward(model, cache, loss_grads, param_grads=True, input_grad=True):
    """Exact gradients of a scalar loss given dL/d(probabilities) per head.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is keyed like
    ``model.params()``. Either part can be switched off (it is then returned
    as an empty dict or None) to save the matrix products it needs.
    """
    if cache.model_id != id(model):
        raise StateError("forward cache belongs to a different model")
    if cache.version != model.version:
        raise StateError("forward cache is stale: parameters changed since the forward pass")
    if len(loss_grads) != len(model.heads):
        raise ShapeError(f"expected {len(model.heads)} head gradients, got {len(loss_grads)}")

    n = cache.records[0].h_in.shape[0]
    dz_out = np.empty((n, model.layers[-1].fan_out))
    offset = 0
    for head, p, g in zip(model.heads, cache.probs, loss_grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"head gradient shape {g.shape} != probability shape {p.shape}")
        if head.kind == "softmax":
            dz_out[:, offset:offset + head.size] = p * (g - np.sum(g * p, axis=1, keepdims=True))
        else:
            s = p[:, 1]
            dz_out[:, offset] = (g[:, 1] - g[:, 0]) * s * (1.0 - s)
        offset += head.size

    grads = {}
    dh = dz_out
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        rec = cache.records[i]
        if layer.batchnorm:
            da = dh * (rec.pre_act > 0)
            if param_grads:
                grads[f"layers.{i}.bn_gamma"] = np.sum(da * rec.xhat, axis=0)
                grads[f"layers.{i}.bn_beta"] = np.sum(da, axis=0)
            dxhat = da * layer.bn_gamma
            if cache.mode == "train":
                dz = rec.inv_std / n * (
                    n * dxhat
                    - dxhat.sum(axis=0)
                    - rec.xhat * np.sum(dxhat * rec.xhat, axis=0)
                )
            else:
                dz = dxhat * rec.inv_std
        else:
            dz = dh
        if param_grads:
            grads[f"layers.{i}.W"] = rec.h_in.T @ dz
            grads[f"layers.{i}.b"] = dz.sum(axis=0)
        if i == 0 and not input_grad:
            return grads, None
        dh = dz @ layer.W.T
    return grads, dh


@dataclass
class AdamState:
    step_size: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied in place.

    ``params`` may be a name->array dict or an ``MlpClassifier`` (whose
    version is bumped). Weight decay adds ``weight_decay * W`` to the
    gradient of every weight matrix (names ending in ``.W``).
    """
    model = None
    if isinstance(params, MlpClassifier):
        model = params
        params = model.params()
    if set(grads) - set(params):
        raise ShapeError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if state.weight_decay > 0 and name.endswith(".W"):
            g = g + state.weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.step_size * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if model is not None:
        model.touch()
    return params, state


def save_checkpoint(model, path):
    tensors = {
        "arch.layer_dims": np.array(model.layer_dims, dtype=np.float64),
        "arch.head_kinds": np.array([h.kind == "sigmoid" for h in model.heads], dtype=np.float64),
        "arch.head_sizes": np.array([h.size for h in model.heads], dtype=np.float64),
    }
    for i, layer in enumerate(model.layers):
        tensors[f"layers.{i}.W"] = layer.W
        tensors[f"layers.{i}.b"] = layer.b
        if layer.batchnorm:
            tensors[f"layers.{i}.bn_gamma"] = layer.bn_gamma
            tensors[f"layers.{i}.bn_beta"] = layer.bn_beta
            tensors[f"layers.{i}.bn_running_mean"] = layer.bn_running_mean
            tensors[f"layers.{i}.bn_running_var"] = layer.bn_running_var
            tensors[f"layers.{i}.bn_momentum"] = np.array(layer.bn_momentum)
    write_tensors(path, tensors, CHECKPOINT_MAGIC)


def load_checkpoint(path):
    t = read_tensors(path, CHECKPOINT_MAGIC)
    try:
        dims = [int(d) for d in t["arch.layer_dims"]]
        heads = [
            Head("sigmoid" if k else "softmax", int(s))
            for k, s in zip(t["arch.head_kinds"], t["arch.head_sizes"])
        ]
        layers = []
        for i in range(len(dims) - 1):
            bn = f"layers.{i}.bn_gamma" in t
            layers.append(DenseLayer(
                W=t[f"layers.{i}.W"], b=t[f"layers.{i}.b"], batchnorm=bn,
                bn_gamma=t.get(f"layers.{i}.bn_gamma"),
                bn_beta=t.get(f"layers.{i}.bn_beta"),
                bn_running_mean=t.get(f"layers.{i}.bn_running_mean"),
                bn_running_var=t.get(f"layers.{i}.bn_running_var"),
                bn_momentum=float(np.ravel(t[f"layers.{i}.bn_momentum"])[0]) if bn else BN_MOMENTUM,
            ))
    except KeyError as exc:
        raise DataFormatError(f"checkpoint is missing tensor {exc.args[0]!r}") from exc
    return MlpClassifier(layers, heads)
