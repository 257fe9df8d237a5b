"""
Cluster scoring and selection.

weight = w1 * (uncovered members / max uncovered members) + w2 * distance term, where the
distance term is the proximity 1 / (1 + d) of the cluster's common parent to the current
execution path, or the raw distance d when configured that way.
"""

import logging
from dataclasses import dataclass
from typing import Collection, Iterable, List, Optional, Sequence, Union

from cfg_model import BlockId, Cfg, PathSpec
from clustering import ClusterSet
from config import DISTANCE_TERMS
from errors import ConfigError
from target_vm import ExecutionTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightConfig:
    w1: float = 0.5
    w2: float = 0.5

    @classmethod
    def of(cls, w1: float, w2: float) -> "WeightConfig":
        """Rescale raw weights so they sum to one"""
        if w1 < 0 or w2 < 0:
            raise ConfigError("w1 and w2 must be non-negative")
        total = w1 + w2
        if total == 0:
            raise ConfigError("w1 and w2 cannot both be zero")
        return cls(w1 / total, w2 / total)


@dataclass(frozen=True)
class ClusterScore:
    cluster_id: int
    ep_num: int
    raw_distance: Optional[int]
    proximity: float
    weight: float


def proximity(distance: Optional[int]) -> float:
    return 0.0 if distance is None else 1.0 / (1.0 + distance)


def _path_of(current: Union[ExecutionTrace, PathSpec, Sequence[BlockId], None], cfg: Cfg) -> Sequence[BlockId]:
    if isinstance(current, ExecutionTrace):
        current = current.path
    blocks = list(current) if current is not None else []
    return blocks or [cfg.entry]


def score_clusters(
    clusters: ClusterSet,
    current: Union[ExecutionTrace, PathSpec, Sequence[BlockId], None],
    covered: Collection[str],
    cfg: Cfg,
    wc: WeightConfig = WeightConfig(),
    distance_term: str = "proximity",
    exclude: Iterable[int] = (),
) -> List[ClusterScore]:
    """
    Score every cluster that still has an uncovered member.

    Args:
        clusters: Clusters to score.
        current: Trace (or block path) the distance is measured from; empty means entry.
        covered: Labels already fault-covered.
        cfg: Graph the clusters live in.
        wc: Normalized weights.
        distance_term: ``proximity`` or ``raw``.
        exclude: Cluster ids to leave out (unsolvable ones).
    Returns:
        Scores in cluster id order; empty when nothing is left to cover.
    """
    if distance_term not in DISTANCE_TERMS:
        raise ConfigError(f"unknown distance term {distance_term!r}")
    path = _path_of(current, cfg)
    skipped = set(exclude)
    pending = []
    for cluster in clusters:
        if cluster.id in skipped:
            continue
        uncovered = sum(1 for m in cluster.members if m not in covered)
        if uncovered:
            pending.append((cluster, uncovered))
    if not pending:
        return []

    max_uncovered = max(n for _, n in pending)
    distances = [cfg.path_distance(path, cluster.parent) for cluster, _ in pending]
    # raw term: an unreachable parent lies one hop past the farthest reachable one
    farthest = 1 + max((d for d in distances if d is not None), default=0)
    scores = []
    for (cluster, uncovered), distance in zip(pending, distances):
        near = proximity(distance)
        term = near if distance_term == "proximity" else float(farthest if distance is None else distance)
        weight = wc.w1 * (uncovered / max_uncovered) + wc.w2 * term
        scores.append(ClusterScore(cluster.id, uncovered, distance, near, weight))
    return scores


def select_next_cluster(scores: Sequence[ClusterScore], seed: int = 0) -> Optional[int]:
    """Argmax by weight, ties to the smaller id; ``None`` when there is nothing to select"""
    if not scores:
        return None
    best = max(scores, key=lambda s: (s.weight, -s.cluster_id))
    logger.debug(f"🎯 Selected cluster {best.cluster_id} (weight {best.weight:.4f})")
    return best.cluster_id
