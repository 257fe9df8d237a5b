import pickle
import random
from collections import deque

import pytest

from cfg_model import Cfg, EdgePredicate, PathSpec, export_dot, import_dot
from constraint_solver import parse_constraint
from errors import CfgLoadError, GraphMembershipError


def names(cfg, blocks):
    return {cfg.name(b) for b in blocks}


def test_fig2_structure(fig2_cfg):
    assert len(fig2_cfg) == 9
    assert fig2_cfg.name(fig2_cfg.entry) == "main"
    assert sorted(fig2_cfg.error_sites) == ["EP1", "EP2", "EP3", "EP4"]
    assert fig2_cfg.name(fig2_cfg.locate("EP2")) == "EP2"
    assert str(fig2_cfg.predicate(fig2_cfg.block("A"), fig2_cfg.block("B"))) == "c3: b1 < 128"
    assert fig2_cfg.predicate(fig2_cfg.block("EP1"), fig2_cfg.block("EP2")) is None


@pytest.mark.parametrize("point, expected", [
    ("EP1", {"B", "A"}),
    ("EP2", {"EP1", "B"}),
    ("EP3", {"B", "A"}),
    ("EP4", {"D", "A"}),
])
def test_fig2_two_hop_ancestors(fig2_cfg, point, expected):
    assert names(fig2_cfg, fig2_cfg.k_hop_ancestors(fig2_cfg.locate(point), 2)) == expected


def test_ancestors_exclude_self_and_k_zero_is_empty(fig2_cfg):
    ep2 = fig2_cfg.block("EP2")
    assert ep2 not in fig2_cfg.k_hop_ancestors(ep2, 10)
    assert fig2_cfg.k_hop_ancestors(ep2, 0) == frozenset()
    assert names(fig2_cfg, fig2_cfg.k_hop_ancestors(ep2, 10)) == {"EP1", "B", "A", "main"}


def test_distances(fig2_cfg):
    block = fig2_cfg.block
    assert fig2_cfg.shortest_distance(block("main"), block("EP2")) == 4
    assert fig2_cfg.shortest_distance(block("EP2"), block("main")) is None
    assert fig2_cfg.depth(block("D")) == 2
    path = [block("main"), block("A"), block("D"), block("E")]
    assert fig2_cfg.path_distance(path, block("B")) == 1
    assert fig2_cfg.path_distance(path, block("D")) == 0
    assert fig2_cfg.path_distance([block("E")], block("B")) is None
    assert fig2_cfg.reaches(block("A"), block("EP4"))
    assert not fig2_cfg.reaches(block("B"), block("EP4"))


def test_shortest_entry_path(fig2_cfg):
    path = fig2_cfg.shortest_entry_path(fig2_cfg.block("EP2"))
    assert path.names(fig2_cfg) == ["main", "A", "B", "EP1", "EP2"]
    assert fig2_cfg.is_valid_path(path)
    assert not fig2_cfg.is_valid_path(PathSpec((fig2_cfg.block("A"), fig2_cfg.block("B"))))


def test_unknown_block_raises(fig2_cfg):
    with pytest.raises(GraphMembershipError):
        fig2_cfg.name(99)
    with pytest.raises(GraphMembershipError):
        fig2_cfg.locate("nope")
    with pytest.raises(GraphMembershipError):
        fig2_cfg.k_hop_ancestors(-1, 1)


def test_dot_round_trip(fig2_cfg):
    again = import_dot(export_dot(fig2_cfg))
    assert again == fig2_cfg
    assert again.block("EP3") == fig2_cfg.block("EP3")


def test_query_memo_stays_out_of_equality_and_pickles(fig2_cfg):
    fresh = import_dot(export_dot(fig2_cfg))
    queried = import_dot(export_dot(fig2_cfg))
    ep2, main_block = queried.block("EP2"), queried.entry
    ancestors = queried.k_hop_ancestors(ep2, 2)
    distance = queried.shortest_distance(main_block, ep2)
    assert queried == fresh
    copy = pickle.loads(pickle.dumps(queried))
    assert copy == fresh
    assert copy.k_hop_ancestors(ep2, 2) == ancestors
    assert copy.shortest_distance(main_block, ep2) == distance
    assert fresh.k_hop_ancestors(ep2, 2) == ancestors


def test_edge_predicate_default_id():
    predicate = EdgePredicate.parse("b0 == 1", "c9")
    assert predicate.constraint_id == "c9"
    assert predicate.predicate == parse_constraint("b0 == 1")


@pytest.mark.parametrize("text", [
    'digraph g { "a"; "b"; "a" -> "b"; }',
    'digraph g { "a" [entry=true]; "b" [entry=true]; "a" -> "b"; }',
    'digraph g { "a" [entry=true]; "b"; "c"; "a" -> "b"; }',
    'digraph g { "a" [entry=true]; "a" -> "b" [pred="b0 >"]; }',
    'digraph g { "a" [entry=true]; "a" -> "b" [pred="b0 > 5"]; "a" -> "c" [pred="b0 > 10"]; }',
    'graph g { "a" [entry=true]; "a" -- "b"; }',
])
def test_import_rejects_bad_graphs(text):
    with pytest.raises(CfgLoadError):
        import_dot(text)


def test_exclusive_sibling_predicates_load():
    cfg = import_dot('digraph g { "a" [entry=true]; "a" -> "b" [pred="b0 < 5"]; "a" -> "c" [pred="b0 >= 5"]; }')
    assert cfg.successors(cfg.entry) == [cfg.block("b"), cfg.block("c")]


def test_constructor_checks():
    with pytest.raises(CfgLoadError):
        Cfg({0: "a", 1: "a"}, 0, [(0, 1, None)])
    with pytest.raises(CfgLoadError):
        Cfg({0: "a", -1: "b"}, 0, [(0, -1, None)])
    with pytest.raises(CfgLoadError):
        Cfg({0: "a", 1: "b"}, 0, [(0, 1, None), (0, 1, None)])
    with pytest.raises(CfgLoadError):
        Cfg({0: "a"}, 0, [(0, 7, None)])
    with pytest.raises(CfgLoadError):
        Cfg({0: "a", 1: "b"}, 0, [(0, 1, None)], error_sites={"ep": [5]})


def test_locate_prefers_shallowest_block():
    cfg = Cfg({0: "e", 1: "x", 2: "y", 3: "z"}, 0, [(0, 1, None), (1, 2, None), (0, 3, None)],
              error_sites={"ep": [2, 3]})
    assert cfg.locate("ep") == 3


def reverse_walk_ends(cfg, block, k):
    """Every block some reverse walk of 1..k edges from ``block`` ends on"""
    ends = set()

    def walk(node, steps):
        if steps == k:
            return
        for pred in cfg.predecessors(node):
            ends.add(pred)
            walk(pred, steps + 1)

    walk(block, 0)
    return ends - {block}


def bfs_distances(cfg, source):
    seen = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nxt in cfg.successors(node):
            if nxt not in seen:
                seen[nxt] = seen[node] + 1
                queue.append(nxt)
    return seen


def with_branch_predicates(cfg, rng):
    """Copy of ``cfg`` whose two-way branches carry exclusive byte tests"""
    edges, counter = [], 0
    for block in sorted(cfg.blocks):
        targets = sorted(cfg.successors(block))
        if len(targets) != 2:
            edges += [(block, dst, None) for dst in targets]
            continue
        byte, value = rng.randrange(4), rng.randrange(256)
        for dst, op in zip(targets, ("==", "!=")):
            counter += 1
            edges.append((block, dst, EdgePredicate.parse(f"c{counter}: b{byte} {op} {value}", "")))
    names_by_id = {b: cfg.name(b) for b in cfg.blocks}
    sites = {label: list(blocks) for label, blocks in cfg.error_sites.items()}
    return Cfg(names_by_id, cfg.entry, edges, sites)


def test_ancestors_match_reverse_walk_enumeration(random_dag):
    rng = random.Random(11)
    for _ in range(200):
        cfg, _ = random_dag(rng, 12, 3)
        for block in cfg.blocks:
            for k in range(5):
                assert cfg.k_hop_ancestors(block, k) == frozenset(reverse_walk_ends(cfg, block, k))


def test_distances_match_breadth_first_oracle(random_dag):
    rng = random.Random(12)
    for _ in range(100):
        cfg, _ = random_dag(rng, 20, 3)
        table = {b: bfs_distances(cfg, b) for b in cfg.blocks}
        for src in cfg.blocks:
            for dst in cfg.blocks:
                assert cfg.shortest_distance(src, dst) == table[src].get(dst)
        for _ in range(10):
            path = rng.sample(sorted(cfg.blocks), rng.randint(1, len(cfg.blocks)))
            target = rng.choice(sorted(cfg.blocks))
            found = [table[b][target] for b in path if target in table[b]]
            assert cfg.path_distance(path, target) == (min(found) if found else None)


def test_dot_round_trip_on_generated_graphs(random_dag):
    rng = random.Random(13)
    for _ in range(50):
        base, _ = random_dag(rng, 25, 5)
        cfg = with_branch_predicates(base, rng)
        again = import_dot(export_dot(cfg))
        assert again == cfg
        assert again.edges() == cfg.edges()
        assert export_dot(again) == export_dot(cfg)
