from __future__ import annotations

import numpy as np
import pytest

from oracles import brute_force_min_energy
from proclearn.procut import (
    CutResult,
    EnergyGraph,
    PcmConfig,
    baseline_cluster_all,
    baseline_random,
    build_energy_graph,
    cluster_foreground,
    correspondence_scores,
    cut_energy,
    localize,
    min_cut,
)

# Frozen from the brute-force double-loop oracle over 3 unit-normalized
# videos (T=5, E=4) drawn from default_rng(5).
SCORES_GOLDEN_V0 = np.array(
    [0.43252675058747636, 0.6199554694122245, 0.3970558065042863,
     0.860092381045274, 0.774259819936072]
)
SCORES_GOLDEN_V2 = np.array(
    [0.7777596411470102, 0.794617055067417, 0.5857898018683495,
     0.6704372664234033, -0.050739152052450415]
)


def _unit_videos(seed=5, count=3, T=5, E=4):
    rng = np.random.default_rng(seed)
    videos = []
    for _ in range(count):
        M = rng.standard_normal((T, E))
        videos.append(M / np.linalg.norm(M, axis=1, keepdims=True))
    return videos


def _random_graph(rng, n):
    source = rng.integers(0, 9, size=n).astype(np.float64)
    sink = rng.integers(0, 9, size=n).astype(np.float64)
    links = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < 0.3:
                links.append((u, v, float(rng.integers(0, 6))))
    return EnergyGraph(node_count=n, source_cap=source, sink_cap=sink, n_links=links)


# ---------------------------------------------------------------------------
# Correspondence scores
# ---------------------------------------------------------------------------


def test_scores_identical_vector_scores_one():
    shared = np.array([1.0, 0.0, 0.0])
    a = np.stack([shared, [0.0, 1.0, 0.0]])
    b = np.stack([[0.0, 0.0, 1.0], shared])
    scores = correspondence_scores([a, b])
    assert scores[0][0] == 1.0
    assert scores[1][1] == 1.0


def test_scores_orthogonal_frame_scores_zero():
    a = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    b = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    scores = correspondence_scores([a, b])
    assert np.all(scores[0] == 0.0)
    assert np.all(scores[1] == 0.0)


def test_scores_match_double_loop_golden():
    scores = correspondence_scores(_unit_videos())
    np.testing.assert_allclose(scores[0], SCORES_GOLDEN_V0, atol=1e-15)
    np.testing.assert_allclose(scores[2], SCORES_GOLDEN_V2, atol=1e-15)


def test_scores_single_video_rejected():
    with pytest.raises(ValueError):
        correspondence_scores(_unit_videos(count=1))


def test_scores_lie_in_unit_interval_and_permute_with_frames():
    videos = _unit_videos(seed=6)
    scores = correspondence_scores(videos)
    for s in scores:
        assert np.all(s >= -1.0) and np.all(s <= 1.0)
    perm = np.array([3, 0, 4, 1, 2])
    shuffled = [videos[0][perm], videos[1], videos[2]]
    new_scores = correspondence_scores(shuffled)
    np.testing.assert_allclose(new_scores[0], scores[0][perm], atol=1e-15)
    np.testing.assert_allclose(new_scores[1], scores[1], atol=1e-15)
    np.testing.assert_allclose(new_scores[2], scores[2], atol=1e-15)


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def test_build_graph_single_certain_frame():
    graph = build_energy_graph(np.array([1.0]), [1], smoothness=0.5, background_bias=0.0)
    assert graph.source_cap[0] == 1.0
    assert graph.sink_cap[0] == 0.0
    assert graph.n_links == []
    result = min_cut(graph)
    assert result.labels.tolist() == [1]
    assert result.cut_value == 0.0


def test_build_graph_independent_unaries():
    graph = build_energy_graph(np.array([1.0, -1.0]), [2], smoothness=0.0, background_bias=0.0)
    assert graph.n_links == []
    assert min_cut(graph).labels.tolist() == [1, 0]


def test_build_graph_strong_smoothing_merges_labels():
    graph = build_energy_graph(np.array([1.0, -1.0]), [2], smoothness=10.0, background_bias=0.0)
    result = min_cut(graph)
    assert result.labels[0] == result.labels[1]
    # Optimal energy over the 4 labelings: unaries are (1,0) and (0,1).
    best = brute_force_min_energy(graph.source_cap, graph.sink_cap, graph.n_links)
    assert cut_energy(graph, result.labels) == pytest.approx(best, abs=1e-9)


def test_build_graph_links_stay_within_videos():
    graph = build_energy_graph(np.zeros(5), [2, 3], smoothness=0.7, background_bias=0.0)
    assert [(u, v) for u, v, _ in graph.n_links] == [(0, 1), (2, 3), (3, 4)]
    assert all(c == 0.7 for _, _, c in graph.n_links)


def test_build_graph_shifts_negative_capacity():
    # background_bias -0.8 drives the key-step cost of a score-1 frame to
    # -0.8; both t-links shift up together and stay non-negative.
    graph = build_energy_graph(np.array([1.0]), [1], smoothness=0.0, background_bias=-0.8)
    assert graph.source_cap[0] == pytest.approx(1.8)
    assert graph.sink_cap[0] == pytest.approx(0.0)


def test_build_graph_validates_input():
    with pytest.raises(ValueError):
        build_energy_graph(np.array([np.nan]), [1], 0.0, 0.0)
    with pytest.raises(ValueError):
        build_energy_graph(np.zeros(3), [2, 2], 0.0, 0.0)


def test_energy_graph_invariants():
    with pytest.raises(ValueError):
        EnergyGraph(node_count=1, source_cap=np.array([-1.0]), sink_cap=np.array([0.0]))
    with pytest.raises(ValueError):
        EnergyGraph(
            node_count=2,
            source_cap=np.zeros(2),
            sink_cap=np.zeros(2),
            n_links=[(0, 0, 1.0)],
        )
    with pytest.raises(ValueError):
        EnergyGraph(
            node_count=2,
            source_cap=np.zeros(2),
            sink_cap=np.zeros(2),
            n_links=[(0, 2, 1.0)],
        )
    with pytest.raises(ValueError):
        CutResult(labels=np.array([0]), cut_value=-1.0)


# ---------------------------------------------------------------------------
# Exact cut
# ---------------------------------------------------------------------------


def test_min_cut_single_node_picks_cheaper_side():
    graph = EnergyGraph(node_count=1, source_cap=np.array([5.0]), sink_cap=np.array([1.0]))
    result = min_cut(graph)
    assert result.labels.tolist() == [1]
    assert result.cut_value == pytest.approx(1.0)


def test_min_cut_disconnected_nodes_take_per_node_minima():
    source = np.array([3.0, 1.0, 2.0])
    sink = np.array([1.0, 4.0, 2.0])
    result = min_cut(EnergyGraph(node_count=3, source_cap=source, sink_cap=sink))
    assert result.cut_value == pytest.approx(np.minimum(source, sink).sum())
    assert result.labels.tolist()[0] == 1
    assert result.labels.tolist()[1] == 0


def test_min_cut_tie_resolves_to_background():
    graph = EnergyGraph(node_count=1, source_cap=np.array([0.5]), sink_cap=np.array([0.5]))
    assert min_cut(graph).labels.tolist() == [0]


def test_min_cut_matches_exhaustive_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(30):
        n = int(rng.integers(1, 9))
        graph = _random_graph(rng, n)
        result = min_cut(graph)
        energy = cut_energy(graph, result.labels)
        best = brute_force_min_energy(graph.source_cap, graph.sink_cap, graph.n_links)
        assert energy == best
        assert result.cut_value == pytest.approx(energy, abs=1e-9)


def test_min_cut_long_chain_is_iterative_safe():
    # A 3000-frame chain would blow the recursion limit in a recursive DFS.
    n = 3000
    scores = np.where(np.arange(n) % 2 == 0, 0.9, -0.9)
    graph = build_energy_graph(scores, [n], smoothness=0.1, background_bias=0.0)
    result = min_cut(graph)
    assert result.labels.shape == (n,)
    assert cut_energy(graph, result.labels) == pytest.approx(result.cut_value, abs=1e-9)


def test_min_cut_deterministic():
    graph = _random_graph(np.random.default_rng(18), 8)
    first = min_cut(graph)
    second = min_cut(graph)
    np.testing.assert_array_equal(first.labels, second.labels)
    assert first.cut_value == second.cut_value


# ---------------------------------------------------------------------------
# Foreground clustering
# ---------------------------------------------------------------------------


def test_cluster_single_cluster_and_centroid():
    points = np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    labels, centroids = cluster_foreground(points, K=1, kmeans_restarts=2, seed=0)
    assert labels.tolist() == [1, 1, 1]
    np.testing.assert_allclose(centroids[0], [2.0, 0.0])


def test_cluster_separated_clouds():
    rng = np.random.default_rng(19)
    cloud_a = rng.standard_normal((10, 2)) * 0.1
    cloud_b = rng.standard_normal((10, 2)) * 0.1 + 100.0
    points = np.concatenate([cloud_a, cloud_b])
    labels, _ = cluster_foreground(points, K=2, kmeans_restarts=4, seed=1)
    assert len(set(labels[:10])) == 1
    assert len(set(labels[10:])) == 1
    assert labels[0] != labels[10]


def test_cluster_fewer_points_than_k():
    points = np.array([[0.0, 1.0], [1.0, 0.0]])
    labels, centroids = cluster_foreground(points, K=5, kmeans_restarts=2, seed=2)
    assert labels.tolist() == [1, 2]
    np.testing.assert_array_equal(centroids, points)


def test_cluster_inertia_beats_random_labelings():
    rng = np.random.default_rng(20)
    points = rng.standard_normal((30, 2))
    labels, centroids = cluster_foreground(points, K=3, kmeans_restarts=8, seed=3)
    inertia = ((points - centroids[labels - 1]) ** 2).sum()
    for _ in range(1000):
        rand = rng.integers(0, 3, size=30)
        rand_centroids = np.stack(
            [
                points[rand == c].mean(axis=0) if np.any(rand == c) else np.zeros(2)
                for c in range(3)
            ]
        )
        rand_inertia = ((points - rand_centroids[rand]) ** 2).sum()
        assert inertia <= rand_inertia + 1e-9


def test_cluster_validation_and_determinism():
    points = np.ones((4, 2))
    with pytest.raises(ValueError):
        cluster_foreground(points, K=0, kmeans_restarts=1, seed=0)
    with pytest.raises(ValueError):
        cluster_foreground(np.ones((0, 2)), K=1, kmeans_restarts=1, seed=0)
    a, _ = cluster_foreground(points, K=2, kmeans_restarts=3, seed=4)
    b, _ = cluster_foreground(points, K=2, kmeans_restarts=3, seed=4)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------


def test_localize_identical_content_single_effective_cluster():
    frame = np.array([1.0, 0.0, 0.0])
    videos = {
        "a": np.tile(frame, (3, 1)),
        "b": np.tile(frame, (3, 1)),
    }
    assignment = localize(videos, PcmConfig(K=2, seed=0))
    for labels in assignment.per_video.values():
        assert np.all(labels == 1)


def test_localize_orthogonal_content_all_background():
    videos = {
        "a": np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]),
        "b": np.array([[0, 0, 1.0, 0], [0, 0, 0, 1.0]]),
    }
    assignment = localize(videos, PcmConfig(K=2, smoothness=0.0, background_bias=0.0, seed=0))
    for labels in assignment.per_video.values():
        assert np.all(labels == 0)


def test_localize_labels_within_range():
    rng = np.random.default_rng(21)
    videos = {}
    for n in range(3):
        M = rng.standard_normal((12, 4))
        videos[f"v{n}"] = M / np.linalg.norm(M, axis=1, keepdims=True)
    config = PcmConfig(K=3, seed=5)
    assignment = localize(videos, config)
    assert assignment.K == 3
    for labels in assignment.per_video.values():
        assert labels.min() >= 0 and labels.max() <= 3


def test_localize_background_bias_is_monotone():
    rng = np.random.default_rng(22)
    videos = {}
    for n in range(3):
        M = rng.standard_normal((15, 4))
        videos[f"v{n}"] = M / np.linalg.norm(M, axis=1, keepdims=True)
    previous = -1
    for bias in (-0.5, -0.2, 0.0, 0.2, 0.5, 0.9):
        assignment = localize(videos, PcmConfig(K=2, background_bias=bias, seed=6))
        background = sum(int((labels == 0).sum()) for labels in assignment.per_video.values())
        assert background >= previous
        previous = background


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def test_baseline_random_k1_and_determinism():
    lengths = {"a": 4, "b": 3}
    ones = baseline_random(lengths, K=1, seed=0)
    assert all(np.all(v == 1) for v in ones.per_video.values())
    first = baseline_random(lengths, K=3, seed=1)
    second = baseline_random(lengths, K=3, seed=1)
    for video_id in lengths:
        np.testing.assert_array_equal(first.per_video[video_id], second.per_video[video_id])
        assert first.per_video[video_id].min() >= 1
    with pytest.raises(ValueError):
        baseline_random(lengths, K=0, seed=0)


def test_baseline_cluster_all_partitions_clouds():
    rng = np.random.default_rng(23)
    videos = {
        "a": rng.standard_normal((6, 2)) * 0.1,
        "b": rng.standard_normal((6, 2)) * 0.1 + 50.0,
    }
    single = baseline_cluster_all(videos, K=1, seed=0)
    assert all(np.all(v == 1) for v in single.per_video.values())
    split = baseline_cluster_all(videos, K=2, seed=0)
    assert len(set(split.per_video["a"])) == 1
    assert len(set(split.per_video["b"])) == 1
    assert split.per_video["a"][0] != split.per_video["b"][0]
    with pytest.raises(ValueError):
        baseline_cluster_all(videos, K=0, seed=0)
    with pytest.raises(ValueError):
        baseline_cluster_all({}, K=1, seed=0)


def test_pcm_config_validation():
    with pytest.raises(ValueError):
        PcmConfig(K=0)
    with pytest.raises(ValueError):
        PcmConfig(smoothness=-0.1)
    with pytest.raises(ValueError):
        PcmConfig(kmeans_restarts=0)
