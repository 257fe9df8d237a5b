import random
from collections import deque

import pydot
import pytest

from cfg_model import import_dot
from clustering import cluster_error_points, cluster_overlay_dot, longest_common_path, same_path
from extractor import error_point_paths

FIG2_POINTS = ["EP1", "EP2", "EP3", "EP4"]


def _bfs(start, neighbours, limit=None):
    seen = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if limit is not None and seen[node] == limit:
            continue
        for nxt in neighbours[node]:
            if nxt not in seen:
                seen[nxt] = seen[node] + 1
                queue.append(nxt)
    return seen


def greedy_replay_oracle(cfg, labels, k):
    """Strict clustering recomputed from plain adjacency lists"""
    succ = {b: cfg.successors(b) for b in cfg.blocks}
    pred = {b: cfg.predecessors(b) for b in cfg.blocks}
    depth = _bfs(cfg.entry, succ)
    blocks = [cfg.error_sites[label][0] for label in labels]
    below = [_bfs(b, succ) for b in blocks]
    bbk = [set(_bfs(b, pred, k)) - {b} for b in blocks]

    def related(i, j):
        return blocks[j] in below[i] or blocks[i] in below[j]

    order = sorted(range(len(labels)), key=lambda i: (-depth[blocks[i]], i))
    left = set(range(len(labels)))
    result = []
    for pivot in order:
        if pivot not in left:
            continue
        left.discard(pivot)
        members = [pivot]
        if k:
            running = bbk[pivot] | {blocks[pivot]}
            rest = sorted(left)
            for i in [i for i in rest if related(pivot, i)] + [i for i in rest if not related(pivot, i)]:
                narrowed = running & (bbk[i] | {blocks[i]})
                if narrowed:
                    running = narrowed
                    members.append(i)
                    left.discard(i)
        shared = set.intersection(*(bbk[i] for i in members)) or \
            set.intersection(*(bbk[i] | {blocks[i]} for i in members))
        parent = min(shared, key=lambda b: (-depth[b], b))
        result.append((tuple(labels[i] for i in sorted(members)), parent))
    return result


def test_fig2_golden(fig2_cfg):
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 2)
    assert [c.members for c in clusters] == [("EP1", "EP2", "EP3"), ("EP4",)]
    assert [fig2_cfg.name(c.parent) for c in clusters] == ["B", "D"]
    assert clusters[0].common_path.names(fig2_cfg) == ["main", "A", "B"]
    assert clusters[1].common_path.names(fig2_cfg) == ["main", "A", "D"]
    assert clusters.cluster_of("EP3").id == 0
    assert clusters.labels == ["EP1", "EP2", "EP3", "EP4"]


def test_fig2_pivot_golden(fig2_cfg):
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode="pivot")
    assert [c.members for c in clusters] == [("EP1", "EP2", "EP3"), ("EP4",)]
    assert [fig2_cfg.name(c.parent) for c in clusters] == ["B", "D"]
    assert [c.common_path.names(fig2_cfg) for c in clusters] == [["main", "A", "B"], ["main", "A", "D"]]


@pytest.mark.parametrize("mode", ["strict", "pivot"])
def test_nonzero_seed_draws_pivots_reproducibly(fig2_cfg, mode):
    for seed in range(1, 21):
        first = cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode=mode, seed=seed)
        assert first == cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode=mode, seed=seed)
        assert sorted(first.labels) == FIG2_POINTS
        assert first.seed == seed


def test_seeded_strict_keeps_members_within_k(fig2_cfg):
    for seed in range(1, 21):
        for cluster in cluster_error_points(FIG2_POINTS, fig2_cfg, 2, seed=seed):
            for member in cluster.members:
                assert fig2_cfg.shortest_distance(cluster.parent, fig2_cfg.locate(member)) <= 2


def test_fig2_k_zero_gives_singletons(fig2_cfg):
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 0)
    assert sorted(c.members for c in clusters) == [("EP1",), ("EP2",), ("EP3",), ("EP4",)]


def test_fig2_large_k_merges_everything_under_a(fig2_cfg):
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 4)
    assert [c.members for c in clusters] == [("EP1", "EP2", "EP3", "EP4")]
    assert fig2_cfg.name(clusters[0].parent) == "A"


def test_same_path_and_longest_common_path(fig2_cfg):
    assert same_path(fig2_cfg, "EP1", "EP2")
    assert not same_path(fig2_cfg, "EP1", "EP3")
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 2)
    paths = error_point_paths(fig2_cfg, FIG2_POINTS)
    assert longest_common_path(fig2_cfg, clusters[0], paths).names(fig2_cfg) == ["main", "A", "B"]
    assert longest_common_path(fig2_cfg, clusters[1], paths).names(fig2_cfg) == ["main", "A", "D", "EP4"]


def test_bad_arguments(fig2_cfg):
    with pytest.raises(ValueError):
        cluster_error_points(FIG2_POINTS, fig2_cfg, -1)
    with pytest.raises(ValueError):
        cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode="loose")


def test_pivot_mode_is_a_seeded_partition(fig2_cfg):
    first = cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode="pivot", seed=7)
    again = cluster_error_points(FIG2_POINTS, fig2_cfg, 2, mode="pivot", seed=7)
    assert first == again
    assert sorted(first.labels) == FIG2_POINTS


def test_overlay_dot_marks_members_and_parents(fig2_cfg):
    clusters = cluster_error_points(FIG2_POINTS, fig2_cfg, 2)
    text = cluster_overlay_dot(fig2_cfg, clusters)
    assert "doublecircle" in text
    assert pydot.graph_from_dot_data(text)
    # still loads as the same graph
    assert import_dot(text) == fig2_cfg


def test_to_dict(fig2_cfg):
    data = cluster_error_points(FIG2_POINTS, fig2_cfg, 2).to_dict(fig2_cfg)
    assert data['k'] == 2 and data['mode'] == "strict"
    assert data['clusters'][0] == {'id': 0, 'members': ["EP1", "EP2", "EP3"], 'parent': "B",
                                   'common_path': ["main", "A", "B"]}


@pytest.mark.slow
@pytest.mark.parametrize("k", [0, 1, 2, 4])
def test_strict_invariants_on_random_dags(random_dag, full_scale, k):
    rng = random.Random(1000 + k)
    for _ in range(250 if full_scale else 40):
        cfg, labels = random_dag(rng, 200 if full_scale else 60, 20)
        clusters = cluster_error_points(labels, cfg, k, seed=rng.choice([0, 0, 11]))
        assert sorted(clusters.labels) == sorted(labels)
        assert len(set(clusters.labels)) == len(labels)
        for cluster in clusters:
            if k == 0:
                assert len(cluster) == 1
            for member in cluster.members:
                distance = cfg.shortest_distance(cluster.parent, cfg.locate(member))
                assert distance is not None and distance <= k
            assert cfg.is_valid_path(cluster.common_path)
            assert cluster.common_path.last == cluster.parent


@pytest.mark.slow
def test_strict_matches_greedy_replay_oracle(random_dag, full_scale):
    rng = random.Random(4242)
    for _ in range(500 if full_scale else 120):
        cfg, labels = random_dag(rng, 12, 6)
        k = rng.choice([0, 1, 2, 4])
        clusters = cluster_error_points(labels, cfg, k)
        assert [(c.members, c.parent) for c in clusters] == greedy_replay_oracle(cfg, labels, k)


@pytest.mark.slow
def test_strict_cluster_count_never_grows_with_k(random_dag, full_scale):
    rng = random.Random(77)
    for _ in range(1000 if full_scale else 200):
        cfg, labels = random_dag(rng, 30, 8)
        counts = [len(cluster_error_points(labels, cfg, k)) for k in range(5)]
        assert counts == sorted(counts, reverse=True)
