"""Identity-balanced PK batch sampling and the uniform baseline sampler.

A balanced epoch shuffles the identities, cuts them into groups of ``P`` and
draws ``K`` samples per identity. Identities with fewer than ``K`` samples
contribute their whole inventory once and fill the remaining slots by
drawing with replacement. A trailing group smaller than ``P`` is dropped so
every batch has the same shape; the per-epoch shuffle rotates which
identities are left out.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


def _frozen(a, dtype=np.int64):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


class IdentityIndex:
    """Mapping identity -> sample indices."""

    def __init__(self, samples):
        self.samples = {}
        seen = set()
        for identity in sorted(samples):
            idx = _frozen(samples[identity])
            if idx.ndim != 1 or idx.size == 0:
                raise ConfigError(f"identity {identity} has no samples")
            if seen.intersection(idx.tolist()) or len(set(idx.tolist())) != idx.size:
                raise ConfigError(f"sample indices of identity {identity} are not unique")
            seen.update(idx.tolist())
            self.samples[int(identity)] = idx

    @classmethod
    def from_labels(cls, labels):
        labels = np.asarray(labels)
        groups = {}
        for i, label in enumerate(labels.tolist()):
            groups.setdefault(label, []).append(i)
        return cls(groups)

    @property
    def identities(self):
        return list(self.samples)

    @property
    def num_identities(self):
        return len(self.samples)

    @property
    def num_samples(self):
        return sum(v.size for v in self.samples.values())

    def counts(self):
        return {k: int(v.size) for k, v in self.samples.items()}

    def labels(self):
        """Lookup array: identity label at each sample index, -1 where unused."""
        size = max(int(v.max()) for v in self.samples.values()) + 1
        out = np.full(size, -1, dtype=np.int64)
        for identity, idx in self.samples.items():
            out[idx] = identity
        return out


@dataclass(frozen=True)
class SamplerConfig:
    P: int = 16
    K: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.P < 1 or self.K < 1:
            raise ConfigError(f"P and K must be positive, got P={self.P}, K={self.K}")

    @property
    def batch_size(self):
        return self.P * self.K


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.indices.size


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    batches: tuple

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def _epoch_rng(seed, epoch_number):
    return np.random.default_rng([int(seed), int(epoch_number)])


def build_epoch(index, config, epoch_number=0):
    """One epoch of ``floor(M / P)`` PK batches, deterministic in (seed, epoch)."""
    M = index.num_identities
    if config.P > M:
        raise ConfigError(f"P={config.P} exceeds the number of training identities M={M}")
    rng = _epoch_rng(config.seed, epoch_number)
    order = rng.permutation(np.array(index.identities))
    batches = []
    for start in range(0, M - config.P + 1, config.P):
        idx, lab = [], []
        for identity in order[start:start + config.P].tolist():
            pool = index.samples[identity]
            if pool.size >= config.K:
                chosen = rng.choice(pool, size=config.K, replace=False)
            else:
                extra = rng.choice(pool, size=config.K - pool.size, replace=True)
                chosen = np.concatenate([rng.permutation(pool), extra])
            idx.append(chosen)
            lab.append(np.full(config.K, identity))
        batches.append(Batch(_frozen(np.concatenate(idx)), _frozen(np.concatenate(lab))))
    return EpochPlan(int(epoch_number), tuple(batches))


@dataclass
class AuditReport:
    counts: dict
    appearances: dict = field(default_factory=dict)
    batches_seen: dict = field(default_factory=dict)
    replacement_used: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    epochs: int = 1

    @property
    def passed(self):
        return not self.violations

    def merge(self, other):
        """Accumulate another epoch's report into this one."""
        for k, v in other.appearances.items():
            self.appearances[k] = self.appearances.get(k, 0) + v
        for k, v in other.batches_seen.items():
            self.batches_seen[k] = self.batches_seen.get(k, 0) + v
        for k, v in other.replacement_used.items():
            self.replacement_used[k] = self.replacement_used.get(k, False) or v
        self.violations.extend(other.violations)
        self.epochs += other.epochs
        return self

    def to_text(self):
        lines = [
            f"epochs={self.epochs}",
            f"violations={len(self.violations)}",
            f"{'identity':>8} {'count':>6} {'appearances':>11} {'replacement_used':>16}",
        ]
        for identity in sorted(self.counts):
            lines.append(
                f"{identity:>8d} {self.counts[identity]:>6d} "
                f"{self.appearances.get(identity, 0):>11d} "
                f"{('yes' if self.replacement_used.get(identity) else 'no'):>16}"
            )
        lines.extend(f"violation: {v}" for v in self.violations)
        return "\n".join(lines) + "\n"


def audit_epoch(plan, index, config):
    """Check a plan against every balanced-sampling guarantee.

    Violations are collected as messages; nothing is raised.
    """
    report = AuditReport(counts=index.counts())
    violations = report.violations
    tag = f"epoch {plan.epoch}"
    expected = index.num_identities // config.P
    if len(plan) != expected:
        violations.append(f"{tag}: {len(plan)} batches, expected {expected}")

    owner = {}
    for b, batch in enumerate(plan.batches):
        if len(batch) != config.batch_size or batch.labels.size != batch.indices.size:
            violations.append(f"{tag} batch {b}: size {len(batch)}, expected {config.batch_size}")
        slots = Counter(batch.labels.tolist())
        if len(slots) != config.P:
            violations.append(f"{tag} batch {b}: {len(slots)} identities, expected {config.P}")
        for identity, n in slots.items():
            if n != config.K:
                violations.append(f"{tag} batch {b}: identity {identity} has {n} slots, expected {config.K}")
            if identity in owner:
                violations.append(f"{tag}: identity {identity} in batches {owner[identity]} and {b}")
            owner[identity] = b
            report.batches_seen[identity] = report.batches_seen.get(identity, 0) + 1
            report.appearances[identity] = report.appearances.get(identity, 0) + n

            if identity not in index.samples:
                violations.append(f"{tag} batch {b}: unknown identity {identity}")
                continue
            pool = index.samples[identity]
            chosen = batch.indices[batch.labels == identity]
            if not np.isin(chosen, pool).all():
                violations.append(f"{tag} batch {b}: identity {identity} holds foreign samples")
            repeated = np.unique(chosen).size < chosen.size
            report.replacement_used[identity] = bool(repeated)
            if pool.size >= config.K and repeated:
                violations.append(f"{tag} batch {b}: identity {identity} repeats a sample")
            if pool.size < config.K and not np.isin(pool, chosen).all():
                violations.append(f"{tag} batch {b}: identity {identity} misses part of its inventory")
    return report


def audit_run(index, config, epochs):
    """Audit ``epochs`` consecutive epochs and merge the reports."""
    report = None
    for epoch in range(epochs):
        current = audit_epoch(build_epoch(index, config, epoch), index, config)
        report = current if report is None else report.merge(current)
    return report


def imbalanced_epoch(index, batch_size, seed, epoch_number=0):
    """Uniform shuffle over all samples cut into ``ceil(total / batch_size)`` batches."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    labels = index.labels()
    all_idx = np.concatenate([index.samples[k] for k in index.identities])
    order = _epoch_rng(seed, epoch_number).permutation(np.sort(all_idx))
    batches = tuple(
        Batch(_frozen(chunk), _frozen(labels[chunk]))
        for chunk in (order[i:i + batch_size] for i in range(0, order.size, batch_size))
    )
    return EpochPlan(int(epoch_number), batches)


def imbalanced_sampler(index, batch_size, seed):
    """Endless stream of uniform batches, epoch after epoch."""
    epoch = 0
    while True:
        yield from imbalanced_epoch(index, batch_size, seed, epoch).batches
        epoch += 1


def exposure_counts(plans):
    """Total slots per identity over a sequence of epoch plans."""
    total = Counter()
    for plan in plans:
        for batch in plan.batches:
            total.update(batch.labels.tolist())
    return dict(total)
