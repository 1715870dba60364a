"""Feature datasets: synthetic Gaussian identity clusters and the CSV file format.

CSV layout: header ``sample_id,identity,camera,split,f0,...,f{d-1}``, one row
per sample, split in {train, query, gallery}.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec, ParseError, SchemaError
from .sampler import IdentityIndex

SPLITS = ("train", "query", "gallery")
_FIXED_COLUMNS = ["sample_id", "identity", "camera", "split"]


@dataclass
class FeatureDataset:
    features: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray
    splits: np.ndarray
    sample_ids: list

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]

    def rows(self, split):
        return np.flatnonzero(self.splits == split)

    def subset(self, split):
        """``(features, identities, cameras)`` of one split, in file order."""
        rows = self.rows(split)
        return self.features[rows], self.identities[rows], self.cameras[rows]

    def index(self, split="train"):
        """IdentityIndex over the rows of ``split``, indexed within that split."""
        return IdentityIndex.from_labels(self.identities[self.rows(split)])


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Gaussian clusters around random unit directions.

    Per identity, ``counts`` (or an even spread from ``min_count`` to
    ``max_count``) training samples, plus ``query_per_identity`` and
    ``gallery_per_identity`` held-out samples. Cameras are assigned round-robin
    along each identity's samples, offset by the identity number, so every
    query has a gallery match on a different camera when ``num_cameras >= 2``.
    """

    num_identities: int = 32
    min_count: int = 2
    max_count: int = 40
    counts: tuple = None
    dim: int = 32
    dispersion: float = 1.0
    noise: float = 0.05
    num_cameras: int = 4
    query_per_identity: int = 1
    gallery_per_identity: int = 3
    seed: int = 0
    centers: tuple = None

    def __post_init__(self):
        if self.num_identities < 2:
            raise InvalidSpec("need at least 2 identities")
        if self.noise < 0 or self.dispersion <= 0:
            raise InvalidSpec("noise must be >= 0 and dispersion > 0")
        if self.dim < 1 or self.num_cameras < 1:
            raise InvalidSpec("dim and num_cameras must be positive")
        if self.query_per_identity < 0 or self.gallery_per_identity < 0:
            raise InvalidSpec("query/gallery counts must be non-negative")
        counts = self.train_counts()
        if len(counts) != self.num_identities or min(counts) < 1:
            raise InvalidSpec("need one training count >= 1 per identity")
        if self.centers is not None and np.shape(self.centers) != (self.num_identities, self.dim):
            raise InvalidSpec("centers must have shape (num_identities, dim)")

    def train_counts(self):
        if self.counts is not None:
            return [int(c) for c in self.counts]
        if not 1 <= self.min_count <= self.max_count:
            raise InvalidSpec("need 1 <= min_count <= max_count")
        spread = np.linspace(self.min_count, self.max_count, self.num_identities)
        return [int(c) for c in np.rint(spread)]


def generate_synthetic(spec):
    rng = np.random.default_rng(spec.seed)
    if spec.centers is not None:
        directions = np.asarray(spec.centers, dtype=np.float64)
        directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    else:
        directions = rng.standard_normal((spec.num_identities, spec.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = spec.dispersion * directions

    features, identities, cameras, splits, sample_ids = [], [], [], [], []
    for ident, n_train in enumerate(spec.train_counts()):
        layout = (
            ["train"] * n_train
            + ["query"] * spec.query_per_identity
            + ["gallery"] * spec.gallery_per_identity
        )
        noise = rng.standard_normal((len(layout), spec.dim)) * spec.noise
        features.append(centers[ident] + noise)
        for j, split in enumerate(layout):
            identities.append(ident)
            cameras.append((ident + j) % spec.num_cameras)
            splits.append(split)
            sample_ids.append(f"id{ident:04d}_{j:04d}")

    return FeatureDataset(
        features=np.vstack(features),
        identities=np.array(identities, dtype=np.int64),
        cameras=np.array(cameras, dtype=np.int64),
        splits=np.array(splits),
        sample_ids=sample_ids,
    )


def write_feature_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_FIXED_COLUMNS + [f"f{i}" for i in range(dataset.dim)])
        for i in range(len(dataset)):
            writer.writerow(
                [dataset.sample_ids[i], int(dataset.identities[i]), int(dataset.cameras[i]),
                 dataset.splits[i]]
                + [repr(float(v)) for v in dataset.features[i]]
            )


def parse_feature_csv(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        header = [h.strip() for h in header]
        for pos, name in enumerate(_FIXED_COLUMNS):
            if pos >= len(header) or header[pos] != name:
                found = header[pos] if pos < len(header) else "<missing>"
                raise SchemaError(f"column {pos} must be {name!r}, found {found!r}", column=name)
        feature_cols = header[len(_FIXED_COLUMNS):]
        if not feature_cols:
            raise SchemaError("no feature columns", column="f0")
        for i, name in enumerate(feature_cols):
            if name != f"f{i}":
                raise SchemaError(f"feature column {i} must be 'f{i}', found {name!r}", column=name)

        width = len(header)
        features, identities, cameras, splits, sample_ids = [], [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", line=line)
            try:
                identities.append(int(row[1]))
                cameras.append(int(row[2]))
            except ValueError as exc:
                raise ParseError(f"identity and camera must be integers ({exc})", line=line) from exc
            split = row[3].strip()
            if split not in SPLITS:
                raise ParseError(f"split must be one of {SPLITS}, found {split!r}", line=line)
            try:
                values = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise ParseError(f"bad feature value ({exc})", line=line) from exc
            if not all(np.isfinite(values)):
                raise ParseError("non-finite feature value", line=line)
            sample_ids.append(row[0])
            splits.append(split)
            features.append(values)

    if not features:
        raise ParseError("file has no data rows", line=2)
    return FeatureDataset(
        features=np.array(features, dtype=np.float64),
        identities=np.array(identities, dtype=np.int64),
        cameras=np.array(cameras, dtype=np.int64),
        splits=np.array(splits),
        sample_ids=sample_ids,
    )
