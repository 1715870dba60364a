"""Experiment configuration and end-to-end runs: train on the train split,
embed query and gallery, evaluate retrieval."""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureDataset, SyntheticDatasetSpec, generate_synthetic
from .errors import ConfigError, DatasetError
from .estimator import SphereReID
from .evaluation import METRICS, evaluate

_MODEL_FIELDS = (
    "variant", "embedding_dim", "dropout", "loss", "scale", "bias", "sampling", "P", "K",
    "batch_size", "warmup", "warmup_start_lr", "base_lr", "warmup_epochs", "decay_epochs",
    "decay_lrs", "total_epochs", "beta1", "beta2", "adam_eps", "backbone_depth",
    "backbone_width", "seed",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run. Defaults reproduce the reference final setting."""

    variant: str = "D"
    embedding_dim: int = 1024
    dropout: float = 0.25
    loss: str = "sphere"
    scale: float = 14.0
    bias: bool = True
    sampling: str = "balanced"
    P: int = 16
    K: int = 4
    batch_size: int = 64
    warmup: bool = True
    warmup_start_lr: float = 5e-5
    base_lr: float = 1e-3
    warmup_epochs: int = 20
    decay_epochs: tuple = (80, 100)
    decay_lrs: tuple = (1e-4, 1e-5)
    total_epochs: int = 140
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    backbone_depth: int = 0
    backbone_width: int = 64
    seed: int = 0
    metric: str = "cosine"
    camera_exclusion: bool = True
    eval_every: int = 0
    synthetic: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        try:
            model = self.estimator()
            model._validate_params()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def model_params(self):
        return {name: getattr(self, name) for name in _MODEL_FIELDS}

    def estimator(self):
        return SphereReID(**self.model_params())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def fit_experiment(config, dataset):
    """Train a model on the ``train`` split of ``dataset``.

    Raises ConfigError when P exceeds the number of training identities.
    """
    X, y, _ = dataset.subset("train")
    if X.shape[0] == 0:
        raise DatasetError("dataset has no train split")
    num_ids = np.unique(y).size
    if config.sampling == "balanced" and config.P > num_ids:
        raise ConfigError(
            f"P={config.P} exceeds the number of training identities ({num_ids}); need P <= M"
        )
    model = config.estimator()
    callback = None
    if config.eval_every:
        def callback(epoch, current):
            if (epoch + 1) % config.eval_every:
                return None
            report = evaluate_model(current, dataset, config)
            return {"rank1": report.rank1, "mAP": report.map}
    return model.fit(X, y, epoch_callback=callback)


def evaluate_model(model, dataset, config=None, metric=None, camera_exclusion=None):
    config = config or ExperimentConfig()
    metric = metric or config.metric
    if camera_exclusion is None:
        camera_exclusion = config.camera_exclusion
    qx, qid, qcam = dataset.subset("query")
    gx, gid, gcam = dataset.subset("gallery")
    if qx.shape[0] == 0 or gx.shape[0] == 0:
        raise DatasetError("dataset needs non-empty query and gallery splits")
    return evaluate(model.transform(qx), qid, qcam, model.transform(gx), gid, gcam,
                    metric=metric, camera_exclusion=camera_exclusion)


def run_experiment(config, dataset=None):
    """Train, then evaluate on query/gallery. Returns ``(TrainLog, RetrievalReport)``.

    Without ``dataset`` the config's synthetic spec is generated.
    """
    if dataset is None:
        dataset = generate_synthetic(config.synthetic)
    if not isinstance(dataset, FeatureDataset):
        raise DatasetError("dataset must be a FeatureDataset")
    model = fit_experiment(config, dataset)
    return model.log_, evaluate_model(model, dataset, config)
