"""sklearn-compatible embedding estimator.

``SphereReID.fit`` trains a dense backbone + embedding head under Sphere Loss
(or plain softmax) with PK or uniform sampling, Adam and the warmup schedule.
``transform`` maps features onto the unit hypersphere; ``predict`` returns the
class whose weight row is nearest in angle.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import CheckpointError, DivergenceDetected, InvalidConfig
from .loss import SoftmaxHead, SphereHead
from .nn import EVAL, TRAIN, HeadConfig, LayerStack, build_backbone, build_head, load_checkpoint, save_checkpoint
from .optim import AdamState, LrSchedule, adam_step, constant_schedule, lr_at
from .sampler import IdentityIndex, SamplerConfig, audit_epoch, build_epoch, imbalanced_epoch

LOSSES = ("sphere", "softmax")
SAMPLINGS = ("balanced", "imbalanced")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    checkpoint: str = None

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return [r.loss for r in self.records]

    def to_csv(self, include_time=False):
        """``epoch,lr,loss`` rows, plus any per-epoch extras; ``seconds`` on request.

        Timing is opt-in so that the default output is reproducible byte for byte.
        """
        extra_keys = sorted({k for r in self.records for k in r.extra})
        header = ["epoch", "lr", "loss"] + extra_keys + (["seconds"] if include_time else [])
        rows = [",".join(header)]
        for r in self.records:
            cells = [str(r.epoch), repr(r.lr), repr(r.loss)]
            cells += [repr(r.extra[k]) if k in r.extra else "" for k in extra_keys]
            if include_time:
                cells.append(f"{r.seconds:.6f}")
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"


def embed_dataset(stack, features):
    """Eval-mode forward; rows of the result are unit-norm embeddings."""
    stack.set_mode(EVAL)
    return stack.forward(np.asarray(features, dtype=np.float64))


class SphereReID(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Hypersphere embedding learner.

    Parameters mirror the flat experiment config. Defaults follow the
    reference setting: head variant D with 1024-d embedding, dropout 0.25,
    Sphere Loss with s=14 and a learned bias, P=16 x K=4 balanced batches,
    Adam (beta2=0.99) and a 140-epoch warmup schedule. ``bias`` only affects
    the sphere head; the softmax head is always bias-free.
    """

    def __init__(self, variant="D", embedding_dim=1024, dropout=0.25, loss="sphere",
                 scale=14.0, bias=True, sampling="balanced", P=16, K=4, batch_size=64,
                 warmup=True, warmup_start_lr=5e-5, base_lr=1e-3, warmup_epochs=20,
                 decay_epochs=(80, 100), decay_lrs=(1e-4, 1e-5), total_epochs=140,
                 beta1=0.9, beta2=0.99, adam_eps=1e-8, backbone_depth=0,
                 backbone_width=64, seed=0):
        self.variant = variant
        self.embedding_dim = embedding_dim
        self.dropout = dropout
        self.loss = loss
        self.scale = scale
        self.bias = bias
        self.sampling = sampling
        self.P = P
        self.K = K
        self.batch_size = batch_size
        self.warmup = warmup
        self.warmup_start_lr = warmup_start_lr
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.decay_epochs = decay_epochs
        self.decay_lrs = decay_lrs
        self.total_epochs = total_epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.backbone_depth = backbone_depth
        self.backbone_width = backbone_width
        self.seed = seed

    # -- configuration -----------------------------------------------------

    def schedule(self):
        if len(self.decay_epochs) != len(self.decay_lrs):
            raise InvalidConfig("decay_epochs and decay_lrs must have equal length")
        decays = tuple(zip(self.decay_epochs, self.decay_lrs))
        if not self.warmup:
            return constant_schedule(self.base_lr, decays, self.total_epochs)
        return LrSchedule(self.warmup_start_lr, self.base_lr, self.warmup_epochs,
                          decays, self.total_epochs)

    def _validate_params(self):
        if self.loss not in LOSSES:
            raise InvalidConfig(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.sampling not in SAMPLINGS:
            raise InvalidConfig(f"sampling must be one of {SAMPLINGS}, got {self.sampling!r}")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be positive")
        SamplerConfig(self.P, self.K, self.seed)
        self.schedule()

    def _build(self, n_features, n_classes):
        rng = np.random.default_rng([int(self.seed), 0])
        backbone = build_backbone(n_features, self.backbone_depth, self.backbone_width, rng)
        head_in = self.backbone_width if self.backbone_depth > 0 else n_features
        head_config = HeadConfig(self.variant, head_in, self.embedding_dim, self.dropout)
        head = build_head(head_config, rng)
        self.network_ = LayerStack([backbone, head], names=["backbone", "head"])
        if self.loss == "sphere":
            self.classifier_ = SphereHead.init(rng, n_classes, head_config.output_dim,
                                               scale=self.scale, bias=self.bias)
        else:
            self.classifier_ = SoftmaxHead.init(rng, n_classes, head_config.output_dim)
        self.n_features_in_ = n_features

    def parameters(self):
        params = {f"network.{k}": v for k, v in self.network_.parameters().items()}
        params.update({f"classifier.{k}": v for k, v in self.classifier_.parameters().items()})
        return params

    def gradients(self):
        grads = {f"network.{k}": v for k, v in self.network_.gradients().items()}
        grads.update({f"classifier.{k}": v for k, v in self.classifier_.gradients().items()})
        return grads

    # -- training ----------------------------------------------------------

    def _epoch_plan(self, index, epoch):
        if self.sampling == "balanced":
            config = SamplerConfig(self.P, self.K, self.seed)
            plan = build_epoch(index, config, epoch)
            self.audit_ = audit_epoch(plan, index, config) if self.audit_ is None \
                else self.audit_.merge(audit_epoch(plan, index, config))
            return list(plan.batches)
        batches = list(imbalanced_epoch(index, self.batch_size, self.seed, epoch).batches)
        # batch norm cannot train on a single sample: fold a lone trailer into its predecessor
        if len(batches) > 1 and len(batches[-1]) < 2:
            last = batches.pop()
            prev = batches.pop()
            batches.append(type(last)(np.concatenate([prev.indices, last.indices]),
                                      np.concatenate([prev.labels, last.labels])))
        return batches

    def _step(self, X, y_enc, batch, lr):
        """One update. Returns the batch loss, or None once any parameter is non-finite."""
        self.network_.set_mode(TRAIN)
        emb = self.network_.forward(X[batch.indices])
        loss = self.classifier_.forward(emb, y_enc[batch.indices])
        if not np.isfinite(loss):
            return loss
        self.network_.backward(self.classifier_.backward())
        params, grads = self.parameters(), self.gradients()
        keys = sorted(params)
        adam_step(self.optimizer_, [params[k] for k in keys], [grads[k] for k in keys], lr)
        if not all(np.isfinite(params[k]).all() for k in keys):
            return None
        return loss

    def fit(self, X, y, epoch_callback=None):
        """Train from scratch. ``epoch_callback(epoch, model)`` may return a dict
        of extra values to log for that epoch."""
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.issubdtype(y.dtype, np.integer):
            raise InvalidConfig("identity labels must be integers")
        self._validate_params()
        self.classes_ = np.unique(y)
        y_enc = np.searchsorted(self.classes_, y)
        self.class_counts_ = np.bincount(y_enc, minlength=self.classes_.size)
        index = IdentityIndex.from_labels(y)
        schedule = self.schedule()

        self._build(X.shape[1], self.classes_.size)
        self.optimizer_ = AdamState(self.beta1, self.beta2, self.adam_eps)
        self.log_ = TrainLog()
        self.audit_ = None
        self.exposure_ = {int(c): 0 for c in self.classes_}

        for epoch in range(schedule.total_epochs):
            start = time.perf_counter()
            lr = lr_at(schedule, epoch)
            losses = []
            for batch in self._epoch_plan(index, epoch):
                loss = self._step(X, y_enc, batch, lr)
                if loss is None:
                    raise DivergenceDetected(
                        f"non-finite parameters after update at epoch {epoch}", log=self.log_
                    )
                if not np.isfinite(loss):
                    raise DivergenceDetected(
                        f"non-finite loss at epoch {epoch}", log=self.log_
                    )
                losses.append(loss)
                for label in batch.labels.tolist():
                    self.exposure_[label] += 1
            record = EpochRecord(epoch, lr, float(np.mean(losses)), time.perf_counter() - start)
            if epoch_callback is not None:
                record.extra = dict(epoch_callback(epoch, self) or {})
            self.log_.records.append(record)
        self.network_.set_mode(EVAL)
        return self

    # -- inference ---------------------------------------------------------

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return embed_dataset(self.network_, X)

    def predict(self, X):
        return self.classes_[self.classifier_.predict(self.transform(X))]

    # -- persistence -------------------------------------------------------

    def save(self, path):
        check_is_fitted(self, "network_")
        state = {f"network.{k}": v for k, v in self.network_.state_dict().items()}
        state.update({f"classifier.{k}": v for k, v in self.classifier_.parameters().items()})
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.get_params().items()}
        meta = {"params": params, "classes": self.classes_.tolist(),
                "n_features_in": int(self.n_features_in_)}
        save_checkpoint(path, state, meta)

    @classmethod
    def load(cls, path):
        state, meta = load_checkpoint(path)
        try:
            params = meta["params"]
            classes = np.array(meta["classes"], dtype=np.int64)
            n_features = int(meta["n_features_in"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint metadata lacks {exc}") from exc
        for key in ("decay_epochs", "decay_lrs"):
            params[key] = tuple(params[key])
        model = cls(**params)
        model.classes_ = classes
        model._build(n_features, classes.size)
        network_state = {k[len("network."):]: v for k, v in state.items() if k.startswith("network.")}
        model.network_.load_state_dict(network_state)
        for key, target in model.classifier_.parameters().items():
            source = state.get(f"classifier.{key}")
            if source is None or source.shape != target.shape:
                raise CheckpointError(f"classifier.{key} missing or mis-shaped in checkpoint")
            target[...] = source
        model.network_.set_mode(EVAL)
        return model
