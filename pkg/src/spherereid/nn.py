"""Dense, batch-norm, dropout, ReLU and L2 layers with hand-derived backward
passes, plus the head variants A-D and a small dense backbone.

Layers hold their own parameters and cache whatever the backward pass needs.
Every array is float64. Weight matrices are stored ``(out, in)``.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import manifold
from .errors import (
    BatchTooSmall,
    CheckpointError,
    DimensionMismatch,
    InvalidConfig,
    StaleCache,
)

TRAIN = "train"
EVAL = "eval"
_MODES = (TRAIN, EVAL)


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _check_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionMismatch(f"expected batch of shape (n, {dim}), got {x.shape}")
    return x


class Layer:
    """Base layer: identity, no parameters."""

    mode = TRAIN

    def forward(self, x):
        return x

    def backward(self, upstream):
        return upstream

    def parameters(self):
        return {}

    def gradients(self):
        return {}

    def buffers(self):
        return {}

    def set_mode(self, mode):
        if mode not in _MODES:
            raise InvalidConfig(f"mode must be one of {_MODES}, got {mode!r}")
        self.mode = mode


# -- dense -----------------------------------------------------------------


class Dense(Layer):
    def __init__(self, weight, bias=None):
        self.weight = np.array(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionMismatch("dense weight must be a matrix")
        if not np.all(np.isfinite(self.weight)):
            raise InvalidConfig("dense weight has non-finite entries")
        self.bias = None if bias is None else np.array(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch("dense bias length must equal output dimension")
        self._x = None
        self._grads = {}

    @classmethod
    def init(cls, rng, in_dim, out_dim, bias=True):
        weight = glorot_uniform(rng, out_dim, in_dim)
        return cls(weight, np.zeros(out_dim) if bias else None)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def forward(self, x):
        self._x = _check_batch(x, self.in_dim)
        return dense_forward(self, self._x)

    def backward(self, upstream):
        if self._x is None:
            raise StaleCache("dense backward called before forward")
        grad_x, grad_w, grad_b = dense_backward(self, self._x, upstream)
        self._grads = {"weight": grad_w}
        if grad_b is not None:
            self._grads["bias"] = grad_b
        return grad_x

    def parameters(self):
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def gradients(self):
        return self._grads


def dense_forward(layer, x):
    x = _check_batch(x, layer.in_dim)
    out = x @ layer.weight.T
    if layer.bias is not None:
        out = out + layer.bias
    return out


def dense_backward(layer, x, upstream):
    x = _check_batch(x, layer.in_dim)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], layer.out_dim):
        raise DimensionMismatch(f"upstream shape {upstream.shape} does not match forward output")
    grad_x = upstream @ layer.weight
    grad_w = upstream.T @ x
    grad_b = upstream.sum(axis=0) if layer.bias is not None else None
    return grad_x, grad_w, grad_b


# -- batch norm ------------------------------------------------------------


class BatchNorm(Layer):
    """Per-feature batch normalization with affine gamma/beta.

    Train mode normalizes with the biased batch variance and folds the
    unbiased estimate into ``running_var`` with
    ``running = (1 - momentum) * running + momentum * batch``.
    """

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        if not 0.0 < momentum < 1.0:
            raise InvalidConfig("batch norm momentum must lie in (0, 1)")
        if eps <= 0:
            raise InvalidConfig("batch norm epsilon must be positive")
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self._cache = None
        self._grads = {}

    @property
    def dim(self):
        return self.gamma.shape[0]

    def forward(self, x):
        out, self._cache = batchnorm_forward(self, x)
        return out

    def backward(self, upstream):
        grad_x, grad_gamma, grad_beta = batchnorm_backward(self, self._cache, upstream)
        self._grads = {"gamma": grad_gamma, "beta": grad_beta}
        return grad_x

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def gradients(self):
        return self._grads

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def batchnorm_forward(layer, x):
    """Returns ``(out, cache)``; ``cache`` is None in eval mode."""
    x = _check_batch(x, layer.dim)
    if layer.mode == EVAL:
        xhat = (x - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)
        return layer.gamma * xhat + layer.beta, None

    n = x.shape[0]
    if n < 2:
        raise BatchTooSmall(f"train-mode batch norm needs at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mean) * inv_std
    m = layer.momentum
    # in-place so checkpoint/optimizer references stay valid
    layer.running_mean *= 1.0 - m
    layer.running_mean += m * mean
    layer.running_var *= 1.0 - m
    layer.running_var += m * var * (n / (n - 1))
    return layer.gamma * xhat + layer.beta, (xhat, inv_std)


def batchnorm_backward(layer, cache, upstream):
    if cache is None:
        raise StaleCache("batch norm backward needs a cached train-mode forward")
    xhat, inv_std = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != xhat.shape:
        raise DimensionMismatch(f"upstream shape {upstream.shape} does not match forward output")
    n = xhat.shape[0]
    grad_beta = upstream.sum(axis=0)
    grad_gamma = (upstream * xhat).sum(axis=0)
    grad_x = (layer.gamma * inv_std / n) * (n * upstream - grad_beta - xhat * grad_gamma)
    return grad_x, grad_gamma, grad_beta


# -- dropout, relu, l2 -----------------------------------------------------


class Dropout(Layer):
    """Inverted dropout; eval mode is the identity."""

    def __init__(self, ratio, rng=None):
        if not 0.0 <= ratio < 1.0:
            raise InvalidConfig(f"dropout ratio must lie in [0, 1), got {ratio}")
        self.ratio = float(ratio)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x):
        out, self._mask = dropout_forward(self, x)
        return out

    def backward(self, upstream):
        if self._mask is None:
            raise StaleCache("dropout backward called before forward")
        return upstream * self._mask


def dropout_forward(layer, x):
    """Returns ``(out, mask)`` where ``out = x * mask``."""
    x = np.asarray(x, dtype=np.float64)
    if layer.mode == EVAL or layer.ratio == 0.0:
        mask = np.ones_like(x)
        return x.copy(), mask
    keep = layer.rng.random(x.shape) >= layer.ratio
    mask = keep / (1.0 - layer.ratio)
    return x * mask, mask


class ReLU(Layer):
    def __init__(self):
        self._positive = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._positive = x > 0
        return np.where(self._positive, x, 0.0)

    def backward(self, upstream):
        if self._positive is None:
            raise StaleCache("relu backward called before forward")
        return np.where(self._positive, upstream, 0.0)


class L2Normalize(Layer):
    def __init__(self):
        self._x = None

    def forward(self, x):
        self._x = np.asarray(x, dtype=np.float64)
        return manifold.l2_normalize(self._x)

    def backward(self, upstream):
        if self._x is None:
            raise StaleCache("l2 backward called before forward")
        return manifold.l2_normalize_backward(self._x, upstream)


# -- composition -----------------------------------------------------------


class LayerStack(Layer):
    """Sequential composition. Stacks nest, which gives layer-path parameter
    names like ``head.3.weight``."""

    def __init__(self, layers=(), names=None):
        self.layers = list(layers)
        if names is None:
            names = [str(i) for i in range(len(self.layers))]
        if len(names) != len(self.layers):
            raise InvalidConfig("one name per layer")
        self.names = list(names)
        self.mode = TRAIN

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def set_mode(self, mode):
        super().set_mode(mode)
        for layer in self.layers:
            layer.set_mode(mode)
        return self

    def forward(self, x):
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, upstream):
        grad = upstream
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def _collect(self, attr):
        out = {}
        for name, layer in zip(self.names, self.layers):
            for key, value in getattr(layer, attr)().items():
                out[f"{name}.{key}"] = value
        return out

    def parameters(self):
        return self._collect("parameters")

    def gradients(self):
        return self._collect("gradients")

    def buffers(self):
        return self._collect("buffers")

    def state_dict(self):
        state = self.parameters()
        state.update(self.buffers())
        return state

    def load_state_dict(self, state):
        """Copy arrays from ``state`` into this stack's parameters and buffers in place."""
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        if missing:
            raise CheckpointError(f"checkpoint lacks entries: {', '.join(missing)}")
        for key, target in own.items():
            source = np.asarray(state[key])
            if source.shape != target.shape:
                raise CheckpointError(
                    f"{key}: checkpoint shape {source.shape} != model shape {target.shape}"
                )
            target[...] = source


def stack_forward(stack, x, mode):
    stack.set_mode(mode)
    return stack.forward(x)


def stack_backward(stack, upstream):
    return stack.backward(upstream)


# -- head construction -----------------------------------------------------

VARIANTS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class HeadConfig:
    """Embedding head layout.

    A: L2.  B: FC, L2.  C: FC, BN, L2.  D: BN, dropout, FC, BN, L2.
    Variant A passes the input dimension through unchanged.
    """

    variant: str = "D"
    input_dim: int = 2048
    embedding_dim: int = 1024
    dropout_ratio: float = 0.25

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"head variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.input_dim) < 1 or int(self.embedding_dim) < 1:
            raise InvalidConfig("head dimensions must be positive")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise InvalidConfig(f"dropout ratio must lie in [0, 1), got {self.dropout_ratio}")

    @property
    def output_dim(self):
        return self.input_dim if self.variant == "A" else self.embedding_dim


def build_head(config, rng=None):
    if not isinstance(config, HeadConfig):
        raise InvalidConfig("build_head expects a HeadConfig")
    rng = rng if rng is not None else np.random.default_rng(0)
    d_in, d_out = config.input_dim, config.embedding_dim
    if config.variant == "A":
        layers = [L2Normalize()]
    elif config.variant == "B":
        layers = [Dense.init(rng, d_in, d_out), L2Normalize()]
    elif config.variant == "C":
        layers = [Dense.init(rng, d_in, d_out), BatchNorm(d_out), L2Normalize()]
    else:
        layers = [
            BatchNorm(d_in),
            Dropout(config.dropout_ratio, rng=rng.spawn(1)[0]),
            Dense.init(rng, d_in, d_out),
            BatchNorm(d_out),
            L2Normalize(),
        ]
    return LayerStack(layers)


def build_backbone(input_dim, depth, width, rng=None):
    """``depth`` blocks of [FC, ReLU]; an empty stack when depth is 0."""
    if depth < 0 or (depth > 0 and width < 1):
        raise InvalidConfig("backbone depth must be >= 0 and width >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    dim = input_dim
    for _ in range(depth):
        layers += [Dense.init(rng, dim, width), ReLU()]
        dim = width
    return LayerStack(layers)


# -- checkpoints -----------------------------------------------------------

_META_KEY = "__meta__"


def save_checkpoint(path, state, meta=None):
    """Write a key -> array map (plus JSON metadata) as an ``.npz`` archive."""
    arrays = {key: np.asarray(value) for key, value in state.items()}
    if _META_KEY in arrays:
        raise CheckpointError(f"{_META_KEY} is reserved")
    arrays[_META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    try:
        with np.load(path, allow_pickle=False) as data:
            state = {key: data[key] for key in data.files if key != _META_KEY}
            meta = json.loads(str(data[_META_KEY])) if _META_KEY in data.files else {}
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return state, meta
