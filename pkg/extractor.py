"""
Static error-point extraction over IR programs.

Candidates are every fallible call site plus plain calls whose result is checked by a
nearby branch. A candidate is realistic when a check consumes its result; an
allow/deny override file can flip that per label.
"""

import logging
import os
import re
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx

from backend.utils.artifacts import write_json
from cfg_model import Cfg, PathSpec
from constraint_solver import compare
from errors import ConfigError, GraphMembershipError
from ir_program import (
    Assign, Branch, Call, CrashIf, FallibleCall, Function, HandlerOp, Program, Return, Switch,
    error_value, return_kind,
)

logger = logging.getLogger(__name__)

CHECK_WINDOW = 3
_VIRTUAL_EXIT = "<exit>"


@dataclass(frozen=True)
class ErrorPoint:
    label: str
    function: str
    block: str
    index: int
    callee: str
    return_kind: str
    handler_kinds: FrozenSet[str] = frozenset()
    checked: bool = False
    realistic: bool = False
    fallible: bool = True

    @property
    def location(self) -> str:
        return f"{self.function}:{self.block}#{self.index}"

    def to_dict(self) -> dict:
        return {
            'label': self.label,
            'function': self.function,
            'block': self.block,
            'index': self.index,
            'callee': self.callee,
            'return_kind': self.return_kind,
            'kinds': sorted(self.handler_kinds),
            'checked': self.checked,
            'realistic': self.realistic,
            'fallible': self.fallible,
        }


@dataclass(frozen=True)
class ErrorPointPath:
    point: str
    path: Optional[PathSpec] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.path is not None


@dataclass(frozen=True)
class _Check:
    terminator: object
    err_target: Optional[str]


def _find_check(function: Function, block_label: str, index: int, dst: str, callee: str) -> Optional[_Check]:
    """Branch within the window that consumes ``dst`` directly or through a derived register"""
    block = function.block(block_label)
    derived: Dict[str, Optional[int]] = {dst: error_value(callee)}
    statements = list(block.instructions[index + 1:]) + [block.terminator]
    for position, stmt in enumerate(statements[:CHECK_WINDOW], start=1):
        if isinstance(stmt, Assign) and any(reg in derived for reg in stmt.uses()):
            derived[stmt.dst] = _evaluate(stmt, derived)
            continue
        if isinstance(stmt, CrashIf) and stmt.reg in derived:
            return _Check(stmt, None)
        if isinstance(stmt, Branch) and stmt.reg in derived:
            value = derived[stmt.reg]
            if value is None:
                return _Check(stmt, stmt.then)
            return _Check(stmt, stmt.then if value != 0 else stmt.orelse)
        if isinstance(stmt, Switch) and stmt.reg in derived:
            value = derived[stmt.reg]
            target = next((label for case, label in stmt.cases if case == value), stmt.default)
            return _Check(stmt, target)
        dst_reg = getattr(stmt, "dst", None)
        if dst_reg in derived:
            del derived[dst_reg]
    return None


def _evaluate(instr: Assign, values: Mapping[str, Optional[int]]) -> Optional[int]:
    def operand(op):
        if isinstance(op, int):
            return op
        return values.get(op)

    left = operand(instr.left)
    if instr.op is None:
        return left
    right = operand(instr.right)
    if left is None or right is None:
        return None
    if instr.op == "+":
        return left + right
    if instr.op == "-":
        return left - right
    if instr.op == "*":
        return left * right
    return int(compare(left, instr.op, right))


def _handler_region(function: Function, check_block: str, err_target: str) -> Set[str]:
    """ERR-side blocks strictly dominated by the check, up to its immediate post-dominator"""
    graph = function.block_graph()
    dom = nx.immediate_dominators(graph, function.entry.label)
    reverse = graph.reverse(copy=True)
    reverse.add_node(_VIRTUAL_EXIT)
    for block in function.blocks:
        if not block.terminator.targets():
            reverse.add_edge(_VIRTUAL_EXIT, block.label)
    post_dom = nx.immediate_dominators(reverse, _VIRTUAL_EXIT)
    rejoin = post_dom.get(check_block)
    if err_target == rejoin:
        return set()

    def strictly_dominated(label: str) -> bool:
        node = label
        while node in dom and dom[node] != node:
            node = dom[node]
            if node == check_block:
                return True
        return False

    region = {err_target}
    frontier = [err_target]
    while frontier:
        current = frontier.pop()
        for succ in graph.successors(current):
            if succ in region or succ == rejoin or succ == check_block:
                continue
            if strictly_dominated(succ):
                region.add(succ)
                frontier.append(succ)
    return region


def _classify(function: Function, block: str, check: Optional[_Check]) -> FrozenSet[str]:
    if check is None or check.err_target is None:
        return frozenset()
    kinds: Set[str] = set()
    for label in _handler_region(function, block, check.err_target):
        region_block = function.block(label)
        for instr in region_block.instructions:
            if isinstance(instr, HandlerOp):
                kinds.add(instr.kind)
        if isinstance(region_block.terminator, Return):
            kinds.add("return")
    return frozenset(kinds)


def _call_label(function: str, block: str, index: int, callee: str) -> str:
    return f"{callee}@{function}:{block}#{index}"


def extract_candidates(program: Program) -> List[ErrorPoint]:
    """Fallible call sites and checked plain calls, in program text order"""
    points: List[ErrorPoint] = []
    for function in program.functions:
        for block in function.blocks:
            for index, instr in enumerate(block.instructions):
                if isinstance(instr, FallibleCall):
                    check = _find_check(function, block.label, index, instr.dst, instr.callee)
                    points.append(ErrorPoint(
                        label=instr.label,
                        function=function.name,
                        block=block.label,
                        index=index,
                        callee=instr.callee,
                        return_kind=return_kind(instr.callee),
                        handler_kinds=_classify(function, block.label, check),
                        checked=check is not None,
                        realistic=check is not None,
                    ))
                elif isinstance(instr, Call) and instr.dst:
                    check = _find_check(function, block.label, index, instr.dst, instr.callee)
                    if check is None:
                        continue
                    points.append(ErrorPoint(
                        label=_call_label(function.name, block.label, index, instr.callee),
                        function=function.name,
                        block=block.label,
                        index=index,
                        callee=instr.callee,
                        return_kind=return_kind(instr.callee),
                        handler_kinds=_classify(function, block.label, check),
                        checked=True,
                        realistic=True,
                        fallible=False,
                    ))
    logger.debug(f"🔎 Extracted {len(points)} candidate error point(s)")
    return points


def classify_handler(program: Program, ep: ErrorPoint) -> FrozenSet[str]:
    """Handler kinds on the ERR side of the check that consumes ``ep``'s result"""
    function = program.function(ep.function)
    instr = function.block(ep.block).instructions[ep.index]
    check = _find_check(function, ep.block, ep.index, instr.dst, instr.callee)
    return _classify(function, ep.block, check)


def realistic_points(points: Iterable[ErrorPoint]) -> List[ErrorPoint]:
    """Realistic points where a fault can actually be injected"""
    return [p for p in points if p.realistic and p.fallible]


def error_point_paths(cfg: Cfg, eps: Sequence) -> List[ErrorPointPath]:
    """
    One shortest entry path per point; unreachable points get an error entry.

    ``eps`` may hold ErrorPoints or bare labels.
    """
    results = []
    for ep in eps:
        label = ep.label if isinstance(ep, ErrorPoint) else str(ep)
        try:
            block = cfg.locate(label)
        except GraphMembershipError:
            logger.warning(f"⚠️ Error point {label!r} is not reachable in the derived Cfg")
            results.append(ErrorPointPath(label, None, "unreachable"))
            continue
        results.append(ErrorPointPath(label, cfg.shortest_entry_path(block)))
    return results


# -- overrides ---------------------------------------------------------------------------

_OVERRIDE_RE = re.compile(r"^(allow|deny)\s+(\S+)$")


def load_overrides(path: str) -> Dict[str, bool]:
    """Parse ``allow <label>`` / ``deny <label>`` lines; ``#`` starts a comment"""
    if not os.path.exists(path):
        raise ConfigError(f"override file not found: {path}")
    overrides: Dict[str, bool] = {}
    with open(path, 'r') as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            match = _OVERRIDE_RE.match(line)
            if not match:
                raise ConfigError(f"{path}:{number}: expected 'allow <label>' or 'deny <label>'")
            overrides[match[2]] = match[1] == "allow"
    return overrides


def apply_overrides(points: Iterable[ErrorPoint], overrides: Mapping[str, bool]) -> List[ErrorPoint]:
    result = []
    known = set()
    for point in points:
        known.add(point.label)
        if point.label in overrides:
            point = replace(point, realistic=overrides[point.label])
        result.append(point)
    for label in sorted(set(overrides) - known):
        logger.warning(f"⚠️ Override for unknown error point {label!r} ignored")
    return result


def export_error_points(points: Iterable[ErrorPoint], path: str) -> None:
    write_json([p.to_dict() for p in points], path)
