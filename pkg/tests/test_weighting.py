import pytest

from cfg_model import PathSpec
from clustering import cluster_error_points
from errors import ConfigError
from weighting import WeightConfig, proximity, score_clusters, select_next_cluster


@pytest.fixture
def fig2_clusters(fig2_cfg):
    return cluster_error_points(["EP1", "EP2", "EP3", "EP4"], fig2_cfg, 2)


def _path(cfg, *names):
    return PathSpec(tuple(cfg.block(n) for n in names))


def test_fig2_weights_from_sibling_branch(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, _path(fig2_cfg, "main", "A", "D", "E"), set(), fig2_cfg)
    assert [s.cluster_id for s in scores] == [0, 1]
    assert scores[0].raw_distance == 1
    assert scores[0].weight == pytest.approx(0.75)
    assert scores[1].raw_distance == 0
    assert scores[1].weight == pytest.approx(2 / 3)
    assert select_next_cluster(scores) == 0


def test_empty_path_measures_from_entry(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, None, set(), fig2_cfg)
    assert [s.raw_distance for s in scores] == [2, 2]
    assert scores[0].weight == pytest.approx(0.5 + 0.5 / 3)
    assert scores[1].weight == pytest.approx(0.5 / 3 + 0.5 / 3)


def test_covered_members_lower_the_weight(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, None, {"EP1", "EP2"}, fig2_cfg)
    assert [s.ep_num for s in scores] == [1, 1]
    assert scores[0].weight == pytest.approx(scores[1].weight)
    # ties go to the smaller id
    assert select_next_cluster(scores) == 0


def test_fully_covered_and_excluded_clusters_are_skipped(fig2_cfg, fig2_clusters):
    assert [s.cluster_id for s in score_clusters(fig2_clusters, None, {"EP4"}, fig2_cfg)] == [0]
    assert [s.cluster_id for s in score_clusters(fig2_clusters, None, set(), fig2_cfg, exclude=[0])] == [1]
    assert score_clusters(fig2_clusters, None, {"EP1", "EP2", "EP3", "EP4"}, fig2_cfg) == []
    assert select_next_cluster([]) is None


def test_raw_distance_term(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, _path(fig2_cfg, "main", "A", "D", "E"), set(), fig2_cfg,
                            distance_term="raw")
    assert scores[0].weight == pytest.approx(0.5 + 0.5 * 1)
    assert scores[1].weight == pytest.approx(0.5 / 3)
    with pytest.raises(ConfigError):
        score_clusters(fig2_clusters, None, set(), fig2_cfg, distance_term="hops")


def test_unreachable_parent_counts_as_farthest_in_raw_mode(fig2_cfg, fig2_clusters):
    # D cannot be reached from B or EP1
    path = _path(fig2_cfg, "B", "EP1")
    raw = score_clusters(fig2_clusters, path, set(), fig2_cfg, distance_term="raw")
    assert [s.raw_distance for s in raw] == [0, None]
    assert raw[0].weight == pytest.approx(0.5)
    assert raw[1].weight == pytest.approx(0.5 / 3 + 0.5 * 1)
    near = score_clusters(fig2_clusters, path, set(), fig2_cfg)
    assert near[1].proximity == 0.0
    assert near[1].weight == pytest.approx(0.5 / 3)


def test_weight_config_normalizes():
    assert WeightConfig.of(2, 2) == WeightConfig(0.5, 0.5)
    assert WeightConfig.of(3, 1).w1 == pytest.approx(0.75)
    with pytest.raises(ConfigError):
        WeightConfig.of(0, 0)
    with pytest.raises(ConfigError):
        WeightConfig.of(-1, 2)


def test_proximity():
    assert proximity(0) == 1.0
    assert proximity(3) == 0.25
    assert proximity(None) == 0.0


def test_selection_ignores_score_order(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, _path(fig2_cfg, "main", "A", "D", "E"), set(), fig2_cfg)
    assert select_next_cluster(list(reversed(scores))) == select_next_cluster(scores) == 0


def test_uncovered_count_wins_when_distance_is_ignored(fig2_cfg, fig2_clusters):
    scores = score_clusters(fig2_clusters, None, set(), fig2_cfg, WeightConfig.of(1, 0))
    assert [s.weight for s in scores] == [pytest.approx(1.0), pytest.approx(1 / 3)]
