"""CMC / mAP retrieval evaluation with same-identity-same-camera junk removal."""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionMismatch, EmptyGallery, InsufficientData, NoValidQueries

METRICS = ("cosine", "euclidean")


@dataclass
class RetrievalReport:
    cmc: np.ndarray
    map: float
    per_query_ap: np.ndarray
    num_valid_queries: int
    num_queries: int = 0

    def rank(self, k):
        """CMC at rank ``k`` (1-based), saturating past the gallery length."""
        return float(self.cmc[min(k, self.cmc.size) - 1])

    @property
    def rank1(self):
        return self.rank(1)

    def summary(self):
        return {
            "rank1": self.rank(1),
            "rank5": self.rank(5),
            "rank10": self.rank(10),
            "mAP": self.map,
            "valid_queries": self.num_valid_queries,
        }

    def to_text(self):
        """Flat ``key=value`` block."""
        lines = []
        for key, value in self.summary().items():
            lines.append(f"{key}={value}" if isinstance(value, int) else f"{key}={value:.6f}")
        return "\n".join(lines) + "\n"

    def cmc_csv(self):
        rows = ["rank,cmc"]
        rows += [f"{k},{v:.6f}" for k, v in enumerate(self.cmc, start=1)]
        return "\n".join(rows) + "\n"


def _scores(query, gallery, metric):
    """Ranking keys, smaller is better."""
    if metric == "cosine":
        return -(gallery @ query)
    if metric == "euclidean":
        return np.linalg.norm(gallery - query, axis=1)
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def _check_embeddings(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-d array of embeddings")
    return a


def rank_gallery(query, gallery, metric="cosine"):
    """Gallery indices from best to worst match; ties keep gallery order."""
    gallery = _check_embeddings(gallery, "gallery")
    query = np.asarray(query, dtype=np.float64)
    if gallery.shape[0] == 0:
        raise EmptyGallery("gallery is empty")
    if query.shape != (gallery.shape[1],):
        raise DimensionMismatch(f"query shape {query.shape} vs gallery dim {gallery.shape[1]}")
    return np.argsort(_scores(query, gallery, metric), kind="stable")


def _average_precision(positions):
    """AP from 0-based ranks of the relevant items, summed exactly and rounded once."""
    total = sum(Fraction(k, int(r) + 1) for k, r in enumerate(positions, start=1))
    return float(total / len(positions))


def evaluate(query_emb, query_ids, query_cams, gallery_emb, gallery_ids, gallery_cams,
             metric="cosine", camera_exclusion=True):
    """Single-shot CMC and mAP over all queries.

    Gallery entries sharing both identity and camera with the query are
    dropped before ranking when ``camera_exclusion`` is on. Queries without
    any remaining true match are skipped.
    """
    query_emb = _check_embeddings(query_emb, "queries")
    gallery_emb = _check_embeddings(gallery_emb, "gallery")
    query_ids, query_cams = np.asarray(query_ids), np.asarray(query_cams)
    gallery_ids, gallery_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    if gallery_emb.shape[0] == 0:
        raise EmptyGallery("gallery is empty")
    if query_emb.shape[1] != gallery_emb.shape[1]:
        raise DimensionMismatch(
            f"query dim {query_emb.shape[1]} != gallery dim {gallery_emb.shape[1]}"
        )
    num_q, num_g = query_emb.shape[0], gallery_emb.shape[0]
    if query_ids.shape != (num_q,) or query_cams.shape != (num_q,):
        raise DimensionMismatch("one identity and camera label per query")
    if gallery_ids.shape != (num_g,) or gallery_cams.shape != (num_g,):
        raise DimensionMismatch("one identity and camera label per gallery entry")

    cmc_sum = np.zeros(num_g)
    aps = []
    for q in range(num_q):
        order = rank_gallery(query_emb[q], gallery_emb, metric)
        same_id = gallery_ids[order] == query_ids[q]
        if camera_exclusion:
            keep = ~(same_id & (gallery_cams[order] == query_cams[q]))
            same_id = same_id[keep]
        if not same_id.any():
            continue
        first = int(np.argmax(same_id))
        cmc_sum[first:] += 1.0
        aps.append(_average_precision(np.flatnonzero(same_id)))

    if not aps:
        raise NoValidQueries("no query has a valid match in the gallery")
    per_query_ap = np.array(aps)
    return RetrievalReport(
        cmc=cmc_sum / len(aps),
        map=math.fsum(aps) / len(aps),
        per_query_ap=per_query_ap,
        num_valid_queries=len(aps),
        num_queries=num_q,
    )


def angular_separation_stats(embeddings, labels):
    """Mean cosine over same-label pairs and over different-label pairs."""
    embeddings = _check_embeddings(embeddings, "embeddings")
    labels = np.asarray(labels)
    if labels.shape != (embeddings.shape[0],):
        raise DimensionMismatch("one label per embedding")
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2 or counts.min() < 2:
        raise InsufficientData("need at least 2 classes with at least 2 samples each")
    cos = embeddings @ embeddings.T
    iu = np.triu_indices(labels.size, k=1)
    pair_cos = cos[iu]
    same = labels[iu[0]] == labels[iu[1]]
    return float(pair_cos[same].mean()), float(pair_cos[~same].mean())
