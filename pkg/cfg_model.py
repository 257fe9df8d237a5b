"""
Control-flow graph model shared by every analysis.

A Cfg is a directed graph of basic blocks (integer BlockIds with unique names), fixed
once built, whose edges may carry an EdgePredicate over program input bytes. It answers the
ancestry, distance and path queries clustering, weighting and the concolic scheduler need,
and round-trips through DOT text.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import pydot

from constraint_solver import ByteConstraint, ConstraintSolver, SolveStatus, parse_constraint
from errors import CfgLoadError, GraphMembershipError

logger = logging.getLogger(__name__)

BlockId = int


@dataclass(frozen=True)
class EdgePredicate:
    """Constraint label plus the input condition under which the edge is taken"""

    constraint_id: str
    predicate: ByteConstraint

    def __str__(self) -> str:
        return f"{self.constraint_id}: {self.predicate}"

    @classmethod
    def parse(cls, text: str, default_id: str) -> "EdgePredicate":
        if ":" in text:
            constraint_id, body = text.split(":", 1)
            return cls(constraint_id.strip(), parse_constraint(body))
        return cls(default_id, parse_constraint(text))


@dataclass(frozen=True)
class PathSpec:
    """Ordered block sequence starting at the entry block"""

    blocks: Tuple[BlockId, ...]

    def __iter__(self) -> Iterator[BlockId]:
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, index):
        return self.blocks[index]

    @property
    def last(self) -> BlockId:
        return self.blocks[-1]

    def edges(self) -> List[Tuple[BlockId, BlockId]]:
        return list(zip(self.blocks, self.blocks[1:]))

    def names(self, cfg: "Cfg") -> List[str]:
        return [cfg.name(b) for b in self.blocks]


Edge = Tuple[BlockId, BlockId, Optional[EdgePredicate]]


class Cfg:
    """
    Control-flow graph with predicate-labeled edges.

    Blocks, edges and error sites never change after construction. Distance and ancestor
    queries are memoized per instance. A pickled copy in a bench worker fills its own
    memo, and the memo never takes part in equality.
    """

    def __init__(
        self,
        names: Mapping[BlockId, str],
        entry: BlockId,
        edges: Iterable[Edge],
        error_sites: Optional[Mapping[str, Sequence[BlockId]]] = None,
        check_predicates: bool = True,
    ):
        graph = nx.DiGraph()
        seen_names: Set[str] = set()
        for block, name in sorted(names.items()):
            if block < 0:
                raise CfgLoadError(f"negative block id {block}")
            if name in seen_names:
                raise CfgLoadError(f"duplicate block name {name!r}")
            seen_names.add(name)
            graph.add_node(block, name=name)
        if entry not in graph:
            raise CfgLoadError(f"entry block {entry!r} is not a block")
        for src, dst, predicate in edges:
            if src not in graph or dst not in graph:
                raise CfgLoadError(f"edge {src}->{dst} references an unknown block")
            if graph.has_edge(src, dst):
                raise CfgLoadError(f"duplicate edge {names[src]!r} -> {names[dst]!r}")
            graph.add_edge(src, dst, predicate=predicate)

        reachable = nx.descendants(graph, entry) | {entry}
        unreachable = [b for b in graph if b not in reachable]
        if unreachable:
            shown = ", ".join(repr(names[b]) for b in sorted(unreachable)[:5])
            raise CfgLoadError(f"{len(unreachable)} unreachable block(s): {shown}")

        self._graph = nx.freeze(graph)
        self._reverse = graph.reverse(copy=True)
        self._entry = entry
        self._by_name = {name: block for block, name in names.items()}
        self._sites: Dict[str, Tuple[BlockId, ...]] = {}
        self._site_of: Dict[BlockId, str] = {}
        for label, blocks in (error_sites or {}).items():
            for block in blocks:
                if block not in graph:
                    raise CfgLoadError(f"error point {label!r} placed on unknown block {block}")
                self._site_of[block] = label
            self._sites[label] = tuple(sorted(blocks))
        self._forward_cache: Dict[BlockId, Dict[BlockId, int]] = {}
        self._ancestor_cache: Dict[Tuple[BlockId, int], frozenset] = {}

        if check_predicates:
            self._check_sibling_predicates()

    # -- structure -----------------------------------------------------------------

    @property
    def graph(self) -> nx.DiGraph:
        """Frozen networkx view; node attribute ``name``, edge attribute ``predicate``"""
        return self._graph

    @property
    def entry(self) -> BlockId:
        return self._entry

    @property
    def blocks(self) -> frozenset:
        return frozenset(self._graph.nodes)

    def __len__(self) -> int:
        return self._graph.number_of_nodes()

    def __contains__(self, block) -> bool:
        return block in self._graph

    def _require(self, block: BlockId) -> None:
        if block not in self._graph:
            raise GraphMembershipError(block)

    def name(self, block: BlockId) -> str:
        self._require(block)
        return self._graph.nodes[block]["name"]

    def block(self, name: str) -> BlockId:
        try:
            return self._by_name[name]
        except KeyError:
            raise GraphMembershipError(name) from None

    def successors(self, block: BlockId) -> List[BlockId]:
        self._require(block)
        return sorted(self._graph.successors(block))

    def predecessors(self, block: BlockId) -> List[BlockId]:
        self._require(block)
        return sorted(self._graph.predecessors(block))

    def edges(self) -> List[Edge]:
        return [(u, v, d["predicate"]) for u, v, d in sorted(self._graph.edges(data=True), key=lambda e: (e[0], e[1]))]

    def has_edge(self, src: BlockId, dst: BlockId) -> bool:
        return self._graph.has_edge(src, dst)

    def predicate(self, src: BlockId, dst: BlockId) -> Optional[EdgePredicate]:
        if not self._graph.has_edge(src, dst):
            raise GraphMembershipError((src, dst))
        return self._graph.edges[src, dst]["predicate"]

    @property
    def error_sites(self) -> Mapping[str, Tuple[BlockId, ...]]:
        return dict(self._sites)

    def site_at(self, block: BlockId) -> Optional[str]:
        return self._site_of.get(block)

    def locate(self, label: str) -> BlockId:
        """Shallowest block hosting the error point (ties by smallest id)"""
        blocks = self._sites.get(label)
        if not blocks:
            raise GraphMembershipError(label)
        return min(blocks, key=lambda b: (self.depth(b), b))

    def is_valid_path(self, path: PathSpec) -> bool:
        if not path.blocks or path.blocks[0] != self._entry:
            return False
        return all(self._graph.has_edge(u, v) for u, v in path.edges())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cfg):
            return NotImplemented
        return (
            self._entry == other._entry
            and dict(self._graph.nodes(data="name")) == dict(other._graph.nodes(data="name"))
            and self.edges() == other.edges()
            and self._sites == other._sites
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Cfg(blocks={len(self)}, edges={self._graph.number_of_edges()}, entry={self.name(self._entry)!r})"

    # -- queries -------------------------------------------------------------------

    def k_hop_ancestors(self, block: BlockId, k: int) -> frozenset:
        """Blocks reachable from ``block`` over 1..k reverse edges, excluding ``block``"""
        self._require(block)
        if k < 0:
            raise ValueError("k must be non-negative")
        key = (block, k)
        cached = self._ancestor_cache.get(key)
        if cached is None:
            if k == 0:
                cached = frozenset()
            else:
                reached = nx.single_source_shortest_path_length(self._reverse, block, cutoff=k)
                cached = frozenset(b for b in reached if b != block)
            self._ancestor_cache[key] = cached
        return cached

    def _distances_from(self, source: BlockId) -> Dict[BlockId, int]:
        distances = self._forward_cache.get(source)
        if distances is None:
            distances = nx.single_source_shortest_path_length(self._graph, source)
            self._forward_cache[source] = distances
        return distances

    def shortest_distance(self, src: BlockId, dst: BlockId) -> Optional[int]:
        self._require(src)
        self._require(dst)
        return self._distances_from(src).get(dst)

    def path_distance(self, path: Iterable[BlockId], target: BlockId) -> Optional[int]:
        self._require(target)
        best: Optional[int] = None
        for block in path:
            self._require(block)
            distance = self._distances_from(block).get(target)
            if distance is not None and (best is None or distance < best):
                best = distance
                if best == 0:
                    break
        return best

    def depth(self, block: BlockId) -> Optional[int]:
        """Shortest distance from the entry block"""
        return self.shortest_distance(self._entry, block)

    def reaches(self, src: BlockId, dst: BlockId) -> bool:
        return self.shortest_distance(src, dst) is not None

    def shortest_entry_path(self, target: BlockId) -> Optional[PathSpec]:
        """Shortest entry->target path; ties broken by the lexicographically smallest id sequence"""
        self._require(target)
        total = self.depth(target)
        if total is None:
            return None
        to_target = nx.single_source_shortest_path_length(self._reverse, target)
        path = [self._entry]
        current = self._entry
        for step in range(1, total + 1):
            remaining = total - step
            current = min(s for s in self._graph.successors(current) if to_target.get(s) == remaining)
            path.append(current)
        return PathSpec(tuple(path))

    # -- load-time checks ----------------------------------------------------------

    def _check_sibling_predicates(self) -> None:
        solver = ConstraintSolver(enumeration_budget=20_000)
        for block in self._graph:
            labeled = [
                (dst, d["predicate"]) for _, dst, d in self._graph.out_edges(block, data=True)
                if d["predicate"] is not None
            ]
            for i, (dst_a, pred_a) in enumerate(labeled):
                for dst_b, pred_b in labeled[i + 1:]:
                    if _syntactically_exclusive(pred_a.predicate, pred_b.predicate):
                        continue
                    status = solver.solve(pred_a.predicate.conjoin(pred_b.predicate)).status
                    if status is SolveStatus.SAT:
                        raise CfgLoadError(
                            f"out-edges of {self.name(block)!r} to {self.name(dst_a)!r} and "
                            f"{self.name(dst_b)!r} carry overlapping predicates"
                        )
                    if status is SolveStatus.UNKNOWN:
                        logger.warning(f"⚠️ Could not prove sibling predicates of {self.name(block)!r} exclusive")


def _syntactically_exclusive(a: ByteConstraint, b: ByteConstraint) -> bool:
    return any(atom.negate() in b.atoms for atom in a.atoms)


# -- module-level operations ---------------------------------------------------------

def k_hop_ancestors(cfg: Cfg, block: BlockId, k: int) -> frozenset:
    return cfg.k_hop_ancestors(block, k)


def shortest_distance(cfg: Cfg, src: BlockId, dst: BlockId) -> Optional[int]:
    return cfg.shortest_distance(src, dst)


def path_distance(cfg: Cfg, path: Iterable[BlockId], target: BlockId) -> Optional[int]:
    return cfg.path_distance(path, target)


# -- DOT -------------------------------------------------------------------------------

def quote_id(text: str) -> str:
    return '"' + text.replace('\\', '\\\\').replace('"', '\\"') + '"'


def _unquote(text: Optional[str]) -> Optional[str]:
    if text is None:
        return None
    text = str(text).strip()
    if len(text) >= 2 and text[0] == '"' and text[-1] == '"':
        text = text[1:-1].replace('\\"', '"').replace('\\\\', '\\')
    return text


def _line_of(text: str, name: str) -> Optional[int]:
    needles = (f'"{name}"', name)
    for number, line in enumerate(text.splitlines(), start=1):
        if any(needle in line for needle in needles):
            return number
    return None


def export_dot(cfg: Cfg) -> str:
    """Serialize a Cfg; blocks are written in id order so ids survive a round trip"""
    dot = pydot.Dot(graph_name="cfg", graph_type="digraph")
    for block in sorted(cfg.blocks):
        attrs = {}
        if block == cfg.entry:
            attrs["entry"] = "true"
        site = cfg.site_at(block)
        if site is not None:
            attrs["ep"] = quote_id(site)
        dot.add_node(pydot.Node(quote_id(cfg.name(block)), **attrs))
    for src, dst, predicate in cfg.edges():
        attrs = {"pred": quote_id(str(predicate))} if predicate is not None else {}
        dot.add_edge(pydot.Edge(quote_id(cfg.name(src)), quote_id(cfg.name(dst)), **attrs))
    return dot.to_string()


_RESERVED_NODES = {"node", "edge", "graph"}


def import_dot(text: str) -> Cfg:
    """Load a Cfg from DOT text; the entry is the node carrying ``entry=true``"""
    try:
        graphs = pydot.graph_from_dot_data(text)
    except Exception as e:
        raise CfgLoadError(f"malformed DOT: {e}", getattr(e, "lineno", None)) from e
    if not graphs:
        raise CfgLoadError("malformed DOT: no graph found")
    if len(graphs) > 1:
        raise CfgLoadError("expected exactly one digraph")
    dot = graphs[0]
    if dot.get_type() != "digraph":
        raise CfgLoadError("expected a digraph")

    ids: Dict[str, BlockId] = {}
    entries: List[str] = []
    sites: Dict[str, List[BlockId]] = {}

    def block_for(raw_name: str) -> BlockId:
        name = _unquote(raw_name)
        if name not in ids:
            ids[name] = len(ids)
        return ids[name]

    for node in dot.get_nodes():
        name = _unquote(node.get_name())
        if name in _RESERVED_NODES:
            continue
        block = block_for(name)
        attrs = {k: _unquote(v) for k, v in node.get_attributes().items()}
        if attrs.get("entry", "false").lower() == "true":
            entries.append(name)
        if attrs.get("ep"):
            sites.setdefault(attrs["ep"], []).append(block)

    edges: List[Edge] = []
    counter = 0
    for edge in dot.get_edges():
        src = block_for(edge.get_source())
        dst = block_for(edge.get_destination())
        raw = _unquote(edge.get_attributes().get("pred"))
        predicate = None
        if raw:
            counter += 1
            try:
                predicate = EdgePredicate.parse(raw, f"c{counter}")
            except ValueError as e:
                raise CfgLoadError(f"bad predicate {raw!r}: {e}", _line_of(text, raw)) from e
        edges.append((src, dst, predicate))

    if not entries:
        raise CfgLoadError("no node marked entry=true")
    if len(entries) > 1:
        raise CfgLoadError(f"multiple entry nodes: {', '.join(entries)}", _line_of(text, entries[1]))

    names = {block: name for name, block in ids.items()}
    try:
        return Cfg(names, ids[entries[0]], edges, sites)
    except CfgLoadError as e:
        if e.line is None:
            for name in ids:
                if f"'{name}'" in str(e):
                    raise CfgLoadError(str(e), _line_of(text, name)) from e
        raise


def load_dot_file(path: str) -> Cfg:
    with open(path, "r") as f:
        return import_dot(f.read())
