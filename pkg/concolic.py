"""
Concolic side of the campaign.

Tracks input bytes symbolically through an execution, folds Cfg edge predicates into
path constraints, and runs the cluster scheduler: pick the best-weighted cluster, solve
its common path, hand the input to the fuzzer and watch the traces that come back
until the cluster is covered or its mutation budget runs out.
"""

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Deque, Dict, FrozenSet, List, Optional, Sequence, TextIO, Tuple, Union

from cfg_model import BlockId, Cfg, PathSpec
from clustering import Cluster, ClusterSet
from config import config
from constraint_solver import (
    Atom, ByteConstraint, ConstraintSolver, LinearExpr, SolveResult, SolveStatus, TRUE, solve,
)
from errors import ProtocolError
from ir_program import Assign, Branch, Program, Switch, Terminator
from target_vm import ExecutionObserver, ExecutionTrace, vm_for
from weighting import WeightConfig, score_clusters, select_next_cluster

logger = logging.getLogger(__name__)

__all__ = [
    "symbolic_trace", "path_constraints", "path_constraint_ids", "solve",
    "ClusterScheduler", "SchedulerConfig", "SchedulerState", "Phase", "scheduler_step",
    "CampaignStart", "FuzzerInput", "EmitTestCase", "MarkUnsolvable", "CampaignComplete",
    "DecisionLog", "SchedulerAgent",
]


# -- symbolic tracking -------------------------------------------------------------------

@dataclass(frozen=True)
class _Shadow:
    value: Union[LinearExpr, Atom]
    pins: FrozenSet[int]
    concrete: int


class SymbolicTracker(ExecutionObserver):
    """Shadow registers holding linear expressions over input bytes"""

    def __init__(self, data: bytes):
        self.data = data
        self.frames: List[Dict[str, _Shadow]] = [{}]
        self.constraints: List[Tuple[Tuple[BlockId, BlockId], ByteConstraint]] = []

    def _get(self, operand) -> _Shadow:
        if isinstance(operand, int):
            return _Shadow(LinearExpr.constant(operand), frozenset(), operand)
        shadow = self.frames[-1].get(operand)
        return shadow if shadow is not None else _Shadow(LinearExpr.constant(0), frozenset(), 0)

    def _byte(self, offset: int) -> int:
        return self.data[offset] if offset < len(self.data) else 0

    def on_read(self, dst: str, offset: int, value: int) -> None:
        self.frames[-1][dst] = _Shadow(LinearExpr.byte(offset), frozenset(), value)

    def on_assign(self, instr: Assign, value: int) -> None:
        left = self._get(instr.left)
        if instr.op is None:
            self.frames[-1][instr.dst] = replace(left, concrete=value)
            return
        right = self._get(instr.right)
        pins = left.pins | right.pins
        if not isinstance(left.value, LinearExpr) or not isinstance(right.value, LinearExpr):
            shadow = _Shadow(LinearExpr.constant(value),
                             pins | frozenset(left.value.offsets) | frozenset(right.value.offsets), value)
        elif instr.op == "+":
            shadow = _Shadow(left.value + right.value, pins, value)
        elif instr.op == "-":
            shadow = _Shadow(left.value - right.value, pins, value)
        elif instr.op == "*":
            if left.value.is_constant:
                shadow = _Shadow(right.value.scale(left.value.const), pins, value)
            elif right.value.is_constant:
                shadow = _Shadow(left.value.scale(right.value.const), pins, value)
            else:
                # byte x byte leaves the linear fragment
                shadow = _Shadow(LinearExpr.constant(value),
                                 pins | frozenset(left.value.offsets) | frozenset(right.value.offsets), value)
        else:
            atom = Atom.make(left.value, instr.op, right.value)
            shadow = _Shadow(atom if atom.expr.terms else LinearExpr.constant(value), pins, value)
        self.frames[-1][instr.dst] = shadow

    def on_opaque(self, dst: str, value: int) -> None:
        self.frames[-1][dst] = _Shadow(LinearExpr.constant(value), frozenset(), value)

    def on_enter(self, callee: str) -> None:
        self.frames.append({})

    def on_return(self, reg: Optional[str], dst: Optional[str], value: int) -> None:
        callee = self.frames.pop()
        if dst:
            shadow = callee.get(reg) if reg else None
            self.frames[-1][dst] = shadow or _Shadow(LinearExpr.constant(value), frozenset(), value)

    def on_branch(self, src: BlockId, dst: BlockId, terminator: Terminator, value: int) -> None:
        shadow = self._get(terminator.reg)
        atoms: List[Atom] = []
        sym = shadow.value
        if isinstance(terminator, Branch):
            if isinstance(sym, Atom):
                atoms.append(sym if value != 0 else sym.negate())
            elif not sym.is_constant:
                atoms.append(Atom.make(sym, "!=" if value != 0 else "==", LinearExpr.constant(0)))
        elif isinstance(terminator, Switch) and isinstance(sym, LinearExpr) and not sym.is_constant:
            if any(case == value for case, _ in terminator.cases):
                atoms.append(Atom.make(sym, "==", LinearExpr.constant(value)))
            else:
                atoms.extend(Atom.make(sym, "!=", LinearExpr.constant(c)) for c, _ in terminator.cases)
        elif isinstance(sym, Atom):
            atoms.append(sym if shadow.concrete != 0 else sym.negate())
        for offset in sorted(shadow.pins):
            atoms.append(Atom.make(LinearExpr.byte(offset), "==", LinearExpr.constant(self._byte(offset)),
                                   concretized=True))
        if atoms:
            self.constraints.append(((src, dst), ByteConstraint.of(*atoms)))


def symbolic_trace(
    program: Program,
    data: bytes,
    error_sequence: Sequence[int] = (),
    step_budget: Optional[int] = None,
) -> List[Tuple[Tuple[BlockId, BlockId], ByteConstraint]]:
    """
    Constraints the concrete input satisfied at each conditional edge it took.

    Non-linear values are concretized: the edge constraint then pins the involved
    bytes to their concrete values and those atoms carry ``concretized=True``.
    """
    vm = vm_for(program)
    tracker = SymbolicTracker(bytes(data[:vm.max_input_len]))
    vm.execute(data, error_sequence, step_budget, observer=tracker)
    return tracker.constraints


def path_constraints(cfg: Cfg, path: PathSpec) -> ByteConstraint:
    """Conjunction of the edge predicates along ``path``"""
    result = TRUE
    for src, dst in path.edges():
        predicate = cfg.predicate(src, dst)
        if predicate is not None:
            result = result.conjoin(predicate.predicate)
    return result


def path_constraint_ids(cfg: Cfg, path: PathSpec) -> List[str]:
    ids = []
    for src, dst in path.edges():
        predicate = cfg.predicate(src, dst)
        if predicate is not None and predicate.constraint_id not in ids:
            ids.append(predicate.constraint_id)
    return ids


# -- scheduler ---------------------------------------------------------------------------

class Phase(Enum):
    SELECTING = "SELECTING"
    AWAITING_COVERAGE = "AWAITING_COVERAGE"
    COMPLETE = "COMPLETE"


@dataclass(frozen=True)
class CampaignStart:
    pass


@dataclass(frozen=True)
class FuzzerInput:
    trace: ExecutionTrace


Event = Union[CampaignStart, FuzzerInput]


@dataclass(frozen=True)
class EmitTestCase:
    cluster_id: int
    input: bytes
    constraint: str = "true"

    def describe(self) -> str:
        return f"emit:{self.cluster_id}"


@dataclass(frozen=True)
class MarkUnsolvable:
    cluster_id: int
    status: SolveStatus

    def describe(self) -> str:
        return f"unsolvable:{self.cluster_id}"


@dataclass(frozen=True)
class CampaignComplete:
    reason: str

    def describe(self) -> str:
        return "complete"


Action = Union[EmitTestCase, MarkUnsolvable, CampaignComplete]


@dataclass(frozen=True)
class SchedulerConfig:
    mutate_threshold: int = 10_000
    weights: WeightConfig = WeightConfig()
    distance_term: str = "proximity"
    max_rotations: Optional[int] = None
    max_len: int = 4096

    def __post_init__(self):
        if self.mutate_threshold < 1:
            raise ValueError("mutate_threshold must be >= 1")


@dataclass(frozen=True)
class SchedulerState:
    phase: Phase = Phase.SELECTING
    current: Optional[int] = None
    count: int = 0
    covered: FrozenSet[str] = frozenset()
    unsolvable: FrozenSet[int] = frozenset()
    visited: FrozenSet[int] = frozenset()
    rotation: int = 0
    started: bool = False
    events: int = 0
    last_path: Tuple[BlockId, ...] = ()

    def ledger(self, clusters: ClusterSet) -> Dict[int, Dict[str, bool]]:
        """Per-cluster member coverage bits"""
        return {c.id: {m: m in self.covered for m in c.members} for c in clusters}


class DecisionLog:
    """JSON-lines record of scheduler transitions"""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream
        self.records: List[dict] = []
        self._start = time.monotonic()

    def record(self, event: Event, state: SchedulerState, actions: Sequence[Action]) -> None:
        entry = {
            'event': state.events,
            'kind': type(event).__name__,
            'phase': state.phase.value,
            'cluster': state.current,
            'count': state.count,
            'action': ",".join(a.describe() for a in actions) or "none",
            'wall_ms': round((time.monotonic() - self._start) * 1000, 3),
        }
        self.records.append(entry)
        if self.stream is not None:
            self.stream.write(json.dumps(entry, sort_keys=True) + "\n")

    def transcript(self) -> List[dict]:
        """Records without the wall-clock field"""
        return [{k: v for k, v in r.items() if k != 'wall_ms'} for r in self.records]


class ClusterScheduler:
    """Single-owner state machine; ``step`` never mutates its input state"""

    def __init__(
        self,
        clusters: ClusterSet,
        cfg: Cfg,
        settings: SchedulerConfig = SchedulerConfig(),
        solver: Optional[ConstraintSolver] = None,
        log: Optional[DecisionLog] = None,
    ):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.clusters = clusters
        self.cfg = cfg
        self.settings = settings
        self.solver = solver or ConstraintSolver(
            enumeration_budget=config.solver['enumeration_budget'],
            max_search_bytes=config.solver['max_search_bytes'],
        )
        self.log = log
        self._solutions: Dict[int, Tuple[ByteConstraint, SolveResult]] = {}

    def initial_state(self) -> SchedulerState:
        return SchedulerState()

    def _fully_covered(self, cluster: Cluster, covered: FrozenSet[str]) -> bool:
        return all(m in covered for m in cluster.members)

    def _solve(self, cluster: Cluster) -> Tuple[ByteConstraint, SolveResult]:
        cached = self._solutions.get(cluster.id)
        if cached is None:
            constraint = path_constraints(self.cfg, cluster.common_path)
            cached = (constraint, self.solver.solve(constraint, self.settings.max_len))
            self._solutions[cluster.id] = cached
        return cached

    def _select(self, state: SchedulerState, actions: List[Action]) -> SchedulerState:
        while True:
            remaining = [
                c for c in self.clusters
                if c.id not in state.unsolvable and not self._fully_covered(c, state.covered)
            ]
            if not remaining:
                actions.append(CampaignComplete("all clusters covered or unsolvable"))
                return replace(state, phase=Phase.COMPLETE, current=None, count=0)
            selectable = [c for c in remaining if c.id not in state.visited]
            if not selectable:
                rotation = state.rotation + 1
                limit = self.settings.max_rotations
                if limit is not None and rotation >= limit:
                    actions.append(CampaignComplete(f"rotation limit {limit} reached"))
                    return replace(state, phase=Phase.COMPLETE, current=None, count=0, rotation=rotation)
                state = replace(state, rotation=rotation, visited=frozenset())
                selectable = remaining
            excluded = {c.id for c in self.clusters} - {c.id for c in selectable}
            scores = score_clusters(
                self.clusters, state.last_path, state.covered, self.cfg,
                self.settings.weights, self.settings.distance_term, exclude=excluded,
            )
            cluster_id = select_next_cluster(scores)
            cluster = self.clusters[cluster_id]
            constraint, result = self._solve(cluster)
            if result.is_sat:
                actions.append(EmitTestCase(cluster_id, result.input, str(constraint)))
                return replace(
                    state, phase=Phase.AWAITING_COVERAGE, current=cluster_id, count=0,
                    visited=state.visited | {cluster_id},
                )
            self.logger.warning(f"⚠️ Cluster {cluster_id} is {result.status.value}: {constraint}")
            actions.append(MarkUnsolvable(cluster_id, result.status))
            state = replace(state, unsolvable=state.unsolvable | {cluster_id})

    def step(self, state: SchedulerState, event: Event) -> Tuple[SchedulerState, List[Action]]:
        if state.phase is Phase.COMPLETE:
            raise ProtocolError(f"{type(event).__name__} delivered after campaign completion")
        actions: List[Action] = []
        state = replace(state, events=state.events + 1)
        if isinstance(event, CampaignStart):
            if state.started:
                raise ProtocolError(f"CampaignStart delivered while {state.phase.value}")
            state = self._select(replace(state, started=True), actions)
        elif isinstance(event, FuzzerInput):
            if not state.started:
                raise ProtocolError("FuzzerInput delivered before CampaignStart")
            trace = event.trace
            covered = state.covered | {e.label for e in trace.encounters if e.injected}
            state = replace(state, covered=covered, last_path=trace.path.blocks, count=state.count + 1)
            cluster = self.clusters[state.current]
            if self._fully_covered(cluster, covered) or state.count > self.settings.mutate_threshold:
                reason = "covered" if self._fully_covered(cluster, covered) else "threshold"
                self.logger.debug(f"🔁 Leaving cluster {cluster.id} ({reason}) after {state.count} input(s)")
                state = self._select(replace(state, phase=Phase.SELECTING, current=None, count=0), actions)
        else:
            raise ProtocolError(f"unknown event {event!r}")
        if self.log is not None:
            self.log.record(event, state, actions)
        return state, actions


def scheduler_step(
    scheduler: ClusterScheduler, state: SchedulerState, event: Event
) -> Tuple[SchedulerState, List[Action]]:
    return scheduler.step(state, event)


class SchedulerAgent:
    """
    Scheduler end of the two message queues.

    The fuzzer pushes traces with ``submit``; ``pump`` drains them through the state
    machine and queues the resulting actions for the fuzzer to ``receive``.
    """

    def __init__(self, scheduler: ClusterScheduler):
        self.scheduler = scheduler
        self.state = scheduler.initial_state()
        self.inbox: Deque[Event] = deque()
        self.outbox: Deque[Action] = deque()
        self.emitted: List[EmitTestCase] = []

    @property
    def complete(self) -> bool:
        return self.state.phase is Phase.COMPLETE

    def start(self) -> None:
        self.inbox.append(CampaignStart())
        self.pump()

    def submit(self, trace: ExecutionTrace) -> None:
        if not self.complete:
            self.inbox.append(FuzzerInput(trace))

    def pump(self) -> None:
        while self.inbox and not self.complete:
            self.state, actions = self.scheduler.step(self.state, self.inbox.popleft())
            for action in actions:
                if isinstance(action, EmitTestCase):
                    self.emitted.append(action)
                self.outbox.append(action)
        self.inbox.clear()

    def receive(self) -> List[Action]:
        actions = list(self.outbox)
        self.outbox.clear()
        return actions
