"""
Error-point clustering.

Points whose blocks share an ancestor within ``k`` reverse hops are grouped so the
concolic side can solve one common path per group. ``strict`` mode keeps every member
within ``k`` of the shared parent; ``pivot`` mode follows the pairwise pivot rule
literally and may not.
"""

import logging
import random
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import pydot

from cfg_model import BlockId, Cfg, PathSpec, export_dot, quote_id
from config import CLUSTERING_MODES
from extractor import ErrorPoint, ErrorPointPath

logger = logging.getLogger(__name__)

_PALETTE = ("lightblue", "palegreen", "lightsalmon", "khaki", "plum", "lightcyan", "wheat", "pink")


@dataclass(frozen=True)
class Cluster:
    id: int
    members: Tuple[str, ...]
    parent: BlockId
    common_path: PathSpec

    def __contains__(self, label: str) -> bool:
        return label in self.members

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self, cfg: Cfg) -> dict:
        return {
            'id': self.id,
            'members': list(self.members),
            'parent': cfg.name(self.parent),
            'common_path': self.common_path.names(cfg),
        }


@dataclass(frozen=True)
class ClusterSet:
    clusters: Tuple[Cluster, ...]
    k: int
    mode: str = "strict"
    seed: int = 0

    def __iter__(self) -> Iterator[Cluster]:
        return iter(self.clusters)

    def __len__(self) -> int:
        return len(self.clusters)

    def __getitem__(self, cluster_id: int) -> Cluster:
        return self.clusters[cluster_id]

    @property
    def labels(self) -> List[str]:
        return [label for cluster in self.clusters for label in cluster.members]

    def cluster_of(self, label: str) -> Optional[Cluster]:
        for cluster in self.clusters:
            if label in cluster:
                return cluster
        return None

    def to_dict(self, cfg: Cfg) -> dict:
        return {
            'k': self.k,
            'mode': self.mode,
            'seed': self.seed,
            'clusters': [c.to_dict(cfg) for c in self.clusters],
        }


def _label(ep) -> str:
    return ep.label if isinstance(ep, ErrorPoint) else str(ep)


def _block_of(cfg: Cfg, ep) -> BlockId:
    return cfg.locate(_label(ep))


def same_path(cfg: Cfg, a, b) -> bool:
    """True when one point's block lies on some entry path through the other's"""
    block_a, block_b = _block_of(cfg, a), _block_of(cfg, b)
    return block_a == block_b or cfg.reaches(block_a, block_b) or cfg.reaches(block_b, block_a)


def _deepest(cfg: Cfg, blocks) -> BlockId:
    return min(blocks, key=lambda b: (-cfg.depth(b), b))


def common_prefix(paths: Sequence[PathSpec]) -> PathSpec:
    prefix: List[BlockId] = []
    for column in zip(*(p.blocks for p in paths)):
        if any(block != column[0] for block in column):
            break
        prefix.append(column[0])
    return PathSpec(tuple(prefix))


def longest_common_path(cfg: Cfg, cluster: Cluster, eps_paths: Sequence[ErrorPointPath]) -> PathSpec:
    """Maximal shared prefix of the members' entry paths; at least ``[entry]``"""
    by_label = {p.point: p.path for p in eps_paths if p.ok}
    paths = [by_label[m] for m in cluster.members if m in by_label]
    if not paths:
        return PathSpec((cfg.entry,))
    prefix = common_prefix(paths)
    return prefix if prefix.blocks else PathSpec((cfg.entry,))


def _common_parent(cfg: Cfg, blocks: Sequence[BlockId], bbk: Sequence[frozenset]) -> BlockId:
    proper = frozenset.intersection(*bbk)
    if proper:
        return _deepest(cfg, proper)
    inclusive = frozenset.intersection(*(s | {b} for s, b in zip(bbk, blocks)))
    if inclusive:
        return _deepest(cfg, inclusive)
    # pivot mode only: fall back to the deepest shared ancestor at any distance
    shared = frozenset.intersection(*(frozenset(nx.ancestors(cfg.graph, b)) | {b} for b in blocks))
    return _deepest(cfg, shared)


def _cluster_path(cfg: Cfg, parent: BlockId, member_paths: Sequence[PathSpec]) -> PathSpec:
    prefix = common_prefix(member_paths)
    if prefix.blocks and prefix.last == parent:
        return prefix
    return cfg.shortest_entry_path(parent)


def cluster_error_points(
    eps: Sequence,
    cfg: Cfg,
    k: int,
    mode: str = "strict",
    seed: int = 0,
) -> ClusterSet:
    """
    Partition error points into clusters.

    Args:
        eps: ErrorPoints or labels, each located in ``cfg``.
        cfg: Graph the points live in.
        k: Maximum reverse-hop distance to the shared parent; 0 yields singletons.
        mode: ``strict`` (running intersection of all members) or ``pivot`` (pairwise
            intersection with the pivot).
        seed: Pivot choice. 0 takes unvisited points deepest-first (ties by input index);
            any other value draws them from an RNG seeded with it.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if mode not in CLUSTERING_MODES:
        raise ValueError(f"unknown clustering mode {mode!r}")

    labels = [_label(ep) for ep in eps]
    blocks = [cfg.locate(label) for label in labels]
    bbk = [cfg.k_hop_ancestors(block, k) for block in blocks]
    paths = [cfg.shortest_entry_path(block) for block in blocks]
    reach = [[blocks[i] == blocks[j] or cfg.reaches(blocks[i], blocks[j]) or cfg.reaches(blocks[j], blocks[i])
              for j in range(len(blocks))] for i in range(len(blocks))]

    rng = random.Random(seed)
    pivot_order = sorted(range(len(labels)), key=lambda i: (-cfg.depth(blocks[i]), i))
    unvisited = set(range(len(labels)))
    groups: List[List[int]] = []

    while unvisited:
        if seed == 0:
            pivot = next(i for i in pivot_order if i in unvisited)
        else:
            pivot = rng.choice(sorted(unvisited))
        unvisited.discard(pivot)
        members = [pivot]
        if k > 0:
            rest = sorted(unvisited)
            candidates = [i for i in rest if reach[pivot][i]] + [i for i in rest if not reach[pivot][i]]
            running = bbk[pivot] | {blocks[pivot]}
            for i in candidates:
                if mode == "strict":
                    narrowed = running & (bbk[i] | {blocks[i]})
                    if not narrowed:
                        continue
                    running = narrowed
                elif not (reach[pivot][i] or bbk[pivot] & bbk[i]):
                    continue
                members.append(i)
                unvisited.discard(i)
        groups.append(members)

    clusters = []
    for cluster_id, members in enumerate(groups):
        member_blocks = [blocks[i] for i in members]
        parent = _common_parent(cfg, member_blocks, [bbk[i] for i in members])
        clusters.append(Cluster(
            id=cluster_id,
            members=tuple(labels[i] for i in sorted(members)),
            parent=parent,
            common_path=_cluster_path(cfg, parent, [paths[i] for i in members]),
        ))
    logger.debug(f"🧩 Clustered {len(labels)} error point(s) into {len(clusters)} cluster(s) (k={k}, {mode})")
    return ClusterSet(tuple(clusters), k, mode, seed)


def cluster_overlay_dot(cfg: Cfg, clusters: ClusterSet) -> str:
    """Cfg DOT with cluster members filled per cluster and parents drawn as double circles"""
    dot = pydot.graph_from_dot_data(export_dot(cfg))[0]
    for cluster in clusters:
        color = _PALETTE[cluster.id % len(_PALETTE)]
        for label in cluster.members:
            for node in dot.get_node(quote_id(cfg.name(cfg.locate(label)))):
                node.set("style", "filled")
                node.set("fillcolor", color)
                node.set("cluster", str(cluster.id))
        for node in dot.get_node(quote_id(cfg.name(cluster.parent))):
            node.set("shape", "doublecircle")
            node.set("parent_of", quote_id(",".join(str(c.id) for c in clusters if c.parent == cluster.parent)))
    return dot.to_string()
