import itertools

import numpy as np
import pytest

from oracles import brute_force_retrieval
from spherereid.errors import DimensionMismatch, EmptyGallery, InsufficientData, NoValidQueries
from spherereid.evaluation import angular_separation_stats, evaluate, rank_gallery
from spherereid.manifold import l2_normalize


def _unit(rng, n, d):
    return l2_normalize(rng.standard_normal((n, d)))


def test_rank_examples(rng):
    q = _unit(rng, 1, 5)[0]
    gallery = np.vstack([_unit(rng, 3, 5), q])
    assert rank_gallery(q, gallery)[0] == 3
    order = rank_gallery(q, np.vstack([-q, q]), metric="euclidean")
    assert order.tolist() == [1, 0]


def test_rank_ties_keep_gallery_order(rng):
    q = _unit(rng, 1, 4)[0]
    g = np.vstack([-q, q, q, -q])
    for metric in ("cosine", "euclidean"):
        assert rank_gallery(q, g, metric).tolist() == [1, 2, 0, 3]


def test_rank_errors(rng):
    with pytest.raises(EmptyGallery):
        rank_gallery(np.ones(3), np.empty((0, 3)))
    with pytest.raises(DimensionMismatch):
        rank_gallery(np.ones(3), np.ones((2, 4)))
    with pytest.raises(ValueError):
        rank_gallery(np.ones(3), np.ones((2, 3)), metric="manhattan")


def test_cosine_and_euclidean_orders_agree(rng):
    for _ in range(20):
        g = _unit(rng, 50, 8)
        q = _unit(rng, 1, 8)[0]
        np.testing.assert_array_equal(rank_gallery(q, g, "cosine"), rank_gallery(q, g, "euclidean"))


def test_single_correct_first():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    r = evaluate(q, [0], [0], g, [0, 1], [1, 1])
    assert r.rank1 == 1.0 and r.map == 1.0 and r.num_valid_queries == 1


def test_ap_five_sixths():
    q = np.array([[1.0, 0.0]])
    angles = np.array([0.1, 0.2, 0.3, 0.4])
    g = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    r = evaluate(q, [7], [0], g, [7, 1, 7, 2], [1, 1, 1, 1])
    assert r.per_query_ap[0] == 5 / 6 and r.map == 5 / 6
    assert r.cmc.tolist() == [1.0, 1.0, 1.0, 1.0]


def test_same_camera_matches_are_junk():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    # query 0's only match shares its camera; query 1 has a cross-camera match
    r = evaluate(q, [0, 1], [0, 0], g, [0, 1, 9], [0, 2, 2])
    assert r.num_valid_queries == 1 and r.num_queries == 2
    off = evaluate(q, [0, 1], [0, 0], g, [0, 1, 9], [0, 2, 2], camera_exclusion=False)
    assert off.num_valid_queries == 2


def test_no_valid_queries():
    with pytest.raises(NoValidQueries):
        evaluate([[1.0, 0.0]], [0], [0], [[1.0, 0.0]], [0], [0])
    with pytest.raises(NoValidQueries):
        evaluate([[1.0, 0.0]], [0], [0], [[1.0, 0.0]], [5], [1])


def test_input_validation():
    with pytest.raises(DimensionMismatch):
        evaluate([[1.0, 0.0]], [0], [0], [[1.0, 0.0, 0.0]], [0], [1])
    with pytest.raises(DimensionMismatch):
        evaluate([[1.0, 0.0]], [0, 1], [0], [[1.0, 0.0]], [0], [1])
    with pytest.raises(EmptyGallery):
        evaluate([[1.0, 0.0]], [0], [0], np.empty((0, 2)), [], [])


def _exhaustive_cases():
    """Every identity (match / non-match) and camera (same / other) labelling of
    galleries of size 1..6. Gallery vectors sit at a few fixed angles, with
    repeats, so that exact distance ties are exercised too."""
    angles = [0.9, 0.3, 1.7, 0.3, 2.5, 1.1]
    for n in range(1, 7):
        g = np.array([[np.cos(a), np.sin(a)] for a in angles[:n]])
        for labels in itertools.product(range(4), repeat=n):
            yield g, [lab // 2 for lab in labels], [lab % 2 for lab in labels]


@pytest.mark.parametrize("metric", ["cosine", "euclidean"])
@pytest.mark.parametrize("exclusion", [True, False])
def test_matches_brute_force_exhaustively(metric, exclusion):
    q = np.array([[1.0, 0.0]])
    checked = 0
    for g, g_ids, g_cams in _exhaustive_cases():
        cmc, aps = brute_force_retrieval(q.tolist(), [1], [1], g.tolist(), g_ids, g_cams,
                                         metric, exclusion)
        if cmc is None:
            with pytest.raises(NoValidQueries):
                evaluate(q, [1], [1], g, g_ids, g_cams, metric, exclusion)
            continue
        r = evaluate(q, [1], [1], g, g_ids, g_cams, metric, exclusion)
        assert r.cmc.tolist() == cmc
        assert r.per_query_ap.tolist() == aps
        assert r.map == aps[0]
        checked += 1
    assert checked > 2000


def test_matches_brute_force_multi_query(rng):
    for _ in range(30):
        g = _unit(rng, 12, 4)
        q = _unit(rng, 5, 4)
        g_ids, g_cams = rng.integers(0, 4, 12), rng.integers(0, 2, 12)
        q_ids, q_cams = rng.integers(0, 4, 5), rng.integers(0, 2, 5)
        cmc, aps = brute_force_retrieval(q.tolist(), q_ids.tolist(), q_cams.tolist(),
                                         g.tolist(), g_ids.tolist(), g_cams.tolist())
        if cmc is None:
            continue
        r = evaluate(q, q_ids, q_cams, g, g_ids, g_cams)
        np.testing.assert_allclose(r.cmc, cmc, rtol=0, atol=1e-15)
        np.testing.assert_allclose(r.per_query_ap, aps, rtol=0, atol=1e-15)
        assert r.map == pytest.approx(sum(aps) / len(aps), abs=1e-15)


def test_report_invariants(rng):
    for _ in range(20):
        g = _unit(rng, 15, 6)
        q = _unit(rng, 6, 6)
        g_ids = rng.integers(0, 3, 15)
        q_ids = rng.integers(0, 3, 6)
        reports = [evaluate(q, q_ids, np.zeros(6), g, g_ids, np.ones(15), metric=m)
                   for m in ("cosine", "euclidean")]
        r = reports[0]
        assert np.all(np.diff(r.cmc) >= 0) and r.cmc[-1] == 1.0
        assert np.all((r.per_query_ap > 0) & (r.per_query_ap <= 1))
        assert r.map == pytest.approx(r.per_query_ap.mean())
        np.testing.assert_array_equal(reports[0].cmc, reports[1].cmc)
        np.testing.assert_array_equal(reports[0].per_query_ap, reports[1].per_query_ap)


def test_ap_is_one_iff_relevant_first():
    q = np.array([[1.0, 0.0]])
    angles = np.linspace(0.1, 1.5, 5)
    g = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    assert evaluate(q, [0], [0], g, [0, 0, 1, 1, 1], [1] * 5).map == 1.0
    assert evaluate(q, [0], [0], g, [0, 1, 0, 1, 1], [1] * 5).map < 1.0


def test_report_text_and_csv():
    q = np.array([[1.0, 0.0]])
    g = np.array([[0.0, 1.0], [1.0, 0.0]])
    r = evaluate(q, [0], [0], g, [0, 1], [1, 1])
    assert r.to_text().splitlines() == [
        "rank1=0.000000", "rank5=1.000000", "rank10=1.000000", "mAP=0.500000", "valid_queries=1",
    ]
    assert r.cmc_csv().splitlines() == ["rank,cmc", "1,0.000000", "2,1.000000"]


def test_separation_stats_examples():
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert angular_separation_stats(emb, [0, 0, 1, 1]) == (1.0, 0.0)
    same = np.tile([0.6, 0.8], (4, 1))
    intra, inter = angular_separation_stats(same, [0, 0, 1, 1])
    assert intra == pytest.approx(1.0) and inter == pytest.approx(1.0)
    with pytest.raises(InsufficientData):
        angular_separation_stats(emb[:3], [0, 0, 1])


def test_separation_random_baseline():
    rng = np.random.default_rng(21)
    emb = _unit(rng, 200, 64)
    labels = rng.integers(0, 4, 200)
    intra, inter = angular_separation_stats(emb, labels)
    # pair cosines have sd 1/8 at d=64; thousands of pairs per group
    assert abs(intra) < 0.02 and abs(inter) < 0.02
