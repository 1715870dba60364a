"""Softmax cross-entropy and Sphere Loss classification heads.

Sphere Loss normalizes both the feature and every class-weight row, so the
logit for class ``j`` is ``s * cos(theta_j)`` (plus an optional learned bias
added after scaling). Weights are kept raw and renormalized on every forward,
which keeps the normalization inside the gradient path.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from . import manifold
from .errors import DimensionMismatch, InvalidConfig, StaleCache
from .nn import glorot_uniform

DEFAULT_SCALE = 14.0


def _check_batch(x_star, dim):
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim == 1:
        x_star = x_star[None, :]
    if x_star.ndim != 2 or x_star.shape[1] != dim:
        raise DimensionMismatch(f"expected features of shape (n, {dim}), got {x_star.shape}")
    return x_star


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionMismatch(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidConfig("labels must be integers")
    if n < 1 or labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidConfig(f"labels must lie in [0, {num_classes})")
    return labels


@dataclass
class LossCache:
    probs: np.ndarray
    labels: np.ndarray
    x_star: np.ndarray


def _cross_entropy(logits, labels):
    log_p = log_softmax(logits, axis=1)
    n = logits.shape[0]
    loss = -log_p[np.arange(n), labels].mean()
    return float(loss), np.exp(log_p)


def _logit_grad(cache):
    n = cache.probs.shape[0]
    grad = cache.probs.copy()
    grad[np.arange(n), cache.labels] -= 1.0
    return grad / n


class SphereHead:
    """Cosine classifier over ``num_classes`` raw weight rows of width ``dim``."""

    def __init__(self, weight, scale=DEFAULT_SCALE, bias=None):
        self.weight = np.array(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionMismatch("sphere head weight must be (classes, dim)")
        if not scale > 0:
            raise InvalidConfig(f"scale must be positive, got {scale}")
        self.scale = float(scale)
        self.bias = None if bias is None else np.array(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (self.num_classes,):
            raise DimensionMismatch("bias length must equal the number of classes")
        self._cache = None
        self._grads = {}

    @classmethod
    def init(cls, rng, num_classes, dim, scale=DEFAULT_SCALE, bias=True):
        weight = glorot_uniform(rng, num_classes, dim)
        return cls(weight, scale=scale, bias=np.zeros(num_classes) if bias else None)

    @property
    def num_classes(self):
        return self.weight.shape[0]

    @property
    def dim(self):
        return self.weight.shape[1]

    def cosines(self, x_star):
        x_star = _check_batch(x_star, self.dim)
        x = manifold.l2_normalize(x_star)
        w = manifold.l2_normalize(self.weight)
        return x @ w.T

    def forward(self, x_star, labels):
        loss, self._cache = sphere_loss_forward(self, x_star, labels)
        return loss

    def backward(self):
        grad_x, grad_w, grad_b = sphere_loss_backward(self, self._cache)
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

    def predict(self, x_star):
        return classify_by_angle(self, x_star)


def sphere_logits(head, x_star):
    """``s * cos(theta_ij)`` (+ ``b_j``) for every sample/class pair."""
    logits = head.scale * head.cosines(x_star)
    if head.bias is not None:
        logits = logits + head.bias
    return logits


def sphere_loss_forward(head, x_star, labels):
    x_star = _check_batch(x_star, head.dim)
    labels = _check_labels(labels, x_star.shape[0], head.num_classes)
    loss, probs = _cross_entropy(sphere_logits(head, x_star), labels)
    return loss, LossCache(probs, labels, x_star)


def sphere_loss_backward(head, cache):
    """Gradients with respect to the raw features, raw weight rows and bias."""
    if cache is None:
        raise StaleCache("sphere loss backward needs a cached forward")
    x_star = cache.x_star
    grad_logits = _logit_grad(cache)
    grad_cos = head.scale * grad_logits
    x = manifold.l2_normalize(x_star)
    w = manifold.l2_normalize(head.weight)
    grad_x = manifold.l2_normalize_backward(x_star, grad_cos @ w)
    grad_w = manifold.l2_normalize_backward(head.weight, grad_cos.T @ x)
    grad_b = grad_logits.sum(axis=0) if head.bias is not None else None
    return grad_x, grad_w, grad_b


def classify_by_angle(head, x_star):
    """Index of the nearest class centre by angle; lowest index wins ties.

    Returns an int for a single vector, an array for a batch.
    """
    single = np.ndim(x_star) == 1
    pred = np.argmax(head.cosines(x_star), axis=1)
    return int(pred[0]) if single else pred


class SoftmaxHead:
    """Plain linear classifier, ``z = W x``, bias fixed at zero."""

    def __init__(self, weight):
        self.weight = np.array(weight, dtype=np.float64)
        if self.weight.ndim != 2 or not np.all(np.isfinite(self.weight)):
            raise InvalidConfig("softmax head weight must be a finite (classes, dim) matrix")
        self._cache = None
        self._grads = {}

    @classmethod
    def init(cls, rng, num_classes, dim):
        return cls(glorot_uniform(rng, num_classes, dim))

    @property
    def num_classes(self):
        return self.weight.shape[0]

    @property
    def dim(self):
        return self.weight.shape[1]

    def forward(self, x, labels):
        loss, self._cache = softmax_loss_forward(self, x, labels)
        return loss

    def backward(self):
        grad_x, grad_w = softmax_loss_backward(self, self._cache)
        self._grads = {"weight": grad_w}
        return grad_x

    def parameters(self):
        return {"weight": self.weight}

    def gradients(self):
        return self._grads

    def logits(self, x):
        return _check_batch(x, self.dim) @ self.weight.T

    def predict(self, x):
        single = np.ndim(x) == 1
        pred = np.argmax(self.logits(x), axis=1)
        return int(pred[0]) if single else pred


def softmax_loss_forward(head, x, labels):
    x = _check_batch(x, head.dim)
    labels = _check_labels(labels, x.shape[0], head.num_classes)
    loss, probs = _cross_entropy(x @ head.weight.T, labels)
    return loss, LossCache(probs, labels, x)


def softmax_loss_backward(head, cache):
    if cache is None:
        raise StaleCache("softmax loss backward needs a cached forward")
    grad_z = _logit_grad(cache)
    return grad_z @ head.weight, grad_z.T @ cache.x_star
