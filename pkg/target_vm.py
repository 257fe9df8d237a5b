"""
Deterministic interpreter for the mini-IR.

Implements the three instrumentation kinds the fuzzer relies on: calling-context
recording at fallible call sites, fault injection gated by an error sequence, and
block coverage over the context-inlined supergraph produced by ``derive_cfg``.
"""

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import networkx as nx

from cfg_model import BlockId, Cfg, EdgePredicate, PathSpec
from config import config
from constraint_solver import Atom, ByteConstraint, LinearExpr, compare
from errors import DerivationError
from ir_program import (
    Assign, Branch, Call, Crash, CrashIf, FallibleCall, Function, Halt, HandlerOp, Instruction,
    Jump, Program, ReadInput, Return, Switch, Terminator, error_value, success_value,
)

logger = logging.getLogger(__name__)

SUMMARY = "<summary>"
_INT64 = 1 << 64


def _wrap(value: int) -> int:
    return ((value + (1 << 63)) % _INT64) - (1 << 63)


# -- block pieces ------------------------------------------------------------------------

@dataclass(frozen=True)
class Piece:
    """Straight-line slice of an IR block; becomes one Cfg block per context"""

    instructions: Tuple[Instruction, ...]
    call: Optional[Call] = None
    terminator: Optional[Terminator] = None


def split_block(instructions: Sequence[Instruction], terminator: Terminator) -> Tuple[Piece, ...]:
    """Every fcall starts a piece, every call to a defined function ends one"""
    pieces: List[Piece] = []
    current: List[Instruction] = []
    for instr in instructions:
        if isinstance(instr, FallibleCall) and current:
            pieces.append(Piece(tuple(current)))
            current = []
        if isinstance(instr, Call):
            pieces.append(Piece(tuple(current), call=instr))
            current = []
            continue
        current.append(instr)
    pieces.append(Piece(tuple(current), terminator=terminator))
    return tuple(pieces)


def piece_name(label: str, piece: int) -> str:
    return label if piece == 0 else f"{label}.{piece}"


@dataclass(frozen=True)
class CallSite:
    function: str
    label: str
    piece: int

    def __str__(self) -> str:
        return f"{self.function}:{piece_name(self.label, self.piece)}"


Context = Tuple[CallSite, ...]


@dataclass(frozen=True)
class BlockOrigin:
    """Where a derived Cfg block comes from"""

    function: str
    label: str
    piece: int
    context: Context = ()
    summary: bool = False

    def name(self, main: str) -> str:
        if self.summary:
            base = f"{self.function}::{SUMMARY}"
        else:
            local = piece_name(self.label, self.piece)
            base = local if self.function == main else f"{self.function}::{local}"
        if self.context:
            return f"{base}@{'>'.join(str(site) for site in self.context)}"
        return base


class CfgMapping:
    """Bidirectional map between derived Cfg blocks and (function, block, piece, context)"""

    def __init__(self, origins: Dict[BlockId, BlockOrigin]):
        self._origins = dict(origins)
        self._blocks = {origin: block for block, origin in origins.items()}

    def origin(self, block: BlockId) -> BlockOrigin:
        return self._origins[block]

    def block_of(self, origin: BlockOrigin) -> Optional[BlockId]:
        return self._blocks.get(origin)

    def __len__(self) -> int:
        return len(self._origins)

    def items(self):
        return sorted(self._origins.items())


class ProgramLayout:
    """Per-function piece tables plus the static facts derive_cfg and the VM share"""

    def __init__(self, program: Program):
        self.program = program
        self.pieces: Dict[Tuple[str, str], Tuple[Piece, ...]] = {}
        self.site_index: Dict[str, int] = {}
        for function in program.functions:
            for block in function.blocks:
                self.pieces[(function.name, block.label)] = split_block(block.instructions, block.terminator)
        for index, (_, _, _, call) in enumerate(program.fallible_calls()):
            self.site_index[call.label] = index
        self.entry_label = {f.name: f.entry.label for f in program.functions}

    def piece(self, function: str, label: str, piece: int) -> Piece:
        return self.pieces[(function, label)][piece]


# -- edge predicates ---------------------------------------------------------------------

SymValue = Union[LinearExpr, Atom, None]


class _FunctionFacts:
    """Single-definition, dominating, input-linear register values of one function"""

    def __init__(self, function: Function):
        self.function = function
        self.defs: Dict[str, List[Tuple[str, int, Instruction]]] = {}
        for block in function.blocks:
            for index, instr in enumerate(block.instructions):
                dst = getattr(instr, "dst", None)
                if dst:
                    self.defs.setdefault(dst, []).append((block.label, index, instr))
        self.idom = nx.immediate_dominators(function.block_graph(), function.entry.label)
        self._cache: Dict[Tuple[str, str, int], SymValue] = {}

    def dominates(self, a: str, b: str) -> bool:
        if b not in self.idom:
            return False
        node = b
        while True:
            if node == a:
                return True
            parent = self.idom[node]
            if parent == node:
                return False
            node = parent

    def value(self, reg: str, block: str, index: int, visiting=frozenset()) -> SymValue:
        key = (reg, block, index)
        if key in self._cache:
            return self._cache[key]
        result = self._compute(reg, block, index, visiting | {key})
        self._cache[key] = result
        return result

    def _compute(self, reg, block, index, visiting) -> SymValue:
        defs = self.defs.get(reg, [])
        if len(defs) != 1:
            return None
        def_block, def_index, instr = defs[0]
        if def_block == block:
            if def_index >= index:
                return None
        elif not self.dominates(def_block, block):
            return None
        if isinstance(instr, ReadInput):
            return LinearExpr.byte(instr.offset)
        if not isinstance(instr, Assign):
            return None

        def operand(op):
            if isinstance(op, int):
                return LinearExpr.constant(op)
            if (op, def_block, def_index) in visiting:
                return None
            return self.value(op, def_block, def_index, visiting)

        left = operand(instr.left)
        if instr.op is None:
            return left
        right = operand(instr.right)
        if not isinstance(left, LinearExpr) or not isinstance(right, LinearExpr):
            return None
        if instr.op == "+":
            return left + right
        if instr.op == "-":
            return left - right
        if instr.op == "*":
            if left.is_constant:
                return right.scale(left.const)
            if right.is_constant:
                return left.scale(right.const)
            return None
        atom = Atom.make(left, instr.op, right)
        return atom if atom.expr.terms else None


def _nontrivial(expr: SymValue) -> bool:
    if isinstance(expr, Atom):
        return bool(expr.expr.terms)
    return isinstance(expr, LinearExpr) and not expr.is_constant


def branch_predicates(function: Function, facts: _FunctionFacts, label: str) -> Dict[str, ByteConstraint]:
    """Input predicate for each out-edge of an IR block, where one exists"""
    block = function.block(label)
    term = block.terminator
    index = len(block.instructions)
    if isinstance(term, Branch):
        if term.then == term.orelse:
            return {}
        value = facts.value(term.reg, label, index)
        if not _nontrivial(value):
            return {}
        atom = value if isinstance(value, Atom) else Atom.make(value, "!=", LinearExpr.constant(0))
        return {term.then: ByteConstraint.of(atom), term.orelse: ByteConstraint.of(atom.negate())}
    if isinstance(term, Switch):
        value = facts.value(term.reg, label, index)
        if not isinstance(value, LinearExpr) or value.is_constant:
            return {}
        labels = [target for _, target in term.cases]
        predicates = {}
        for case_value, target in term.cases:
            if labels.count(target) == 1 and target != term.default:
                predicates[target] = ByteConstraint.of(Atom.make(value, "==", LinearExpr.constant(case_value)))
        if term.default not in labels:
            predicates[term.default] = ByteConstraint.of(
                *[Atom.make(value, "!=", LinearExpr.constant(v)) for v, _ in term.cases]
            )
        return predicates
    return {}


def _numbered_predicates(program: Program) -> Dict[Tuple[str, str, str], EdgePredicate]:
    numbered: Dict[Tuple[str, str, str], EdgePredicate] = {}
    counter = 0
    for function in program.functions:
        facts = _FunctionFacts(function)
        for block in function.blocks:
            predicates = branch_predicates(function, facts, block.label)
            for target in block.terminator.targets():
                if target in predicates:
                    counter += 1
                    numbered[(function.name, block.label, target)] = EdgePredicate(f"c{counter}", predicates[target])
    return numbered


# -- derivation --------------------------------------------------------------------------

def derive_cfg(
    program: Program,
    context_depth: Optional[int] = None,
    block_budget: Optional[int] = None,
) -> Tuple[Cfg, CfgMapping]:
    """
    Build the context-inlined supergraph of ``program``.

    Calls are expanded into a fresh copy of the callee per calling context up to
    ``context_depth`` call sites deep; a call made at that depth is collapsed into a
    single summary block. Only blocks reachable from ``main`` are materialized.
    """
    depth = config.vm['context_depth'] if context_depth is None else context_depth
    budget = config.vm['block_budget'] if block_budget is None else block_budget
    if depth < 0:
        raise ValueError("context depth must be non-negative")
    layout = ProgramLayout(program)
    predicates = _numbered_predicates(program)
    main = program.main

    ids: Dict[BlockOrigin, BlockId] = {}
    edges: Dict[Tuple[BlockId, BlockId], Optional[EdgePredicate]] = {}
    sites: Dict[str, List[BlockId]] = {}
    queue: deque = deque()

    def node(origin: BlockOrigin) -> BlockId:
        block = ids.get(origin)
        if block is None:
            if len(ids) >= budget:
                raise DerivationError(f"derived Cfg exceeds the block budget of {budget}")
            block = len(ids)
            ids[origin] = block
            queue.append(origin)
        return block

    def continuation(context: Context) -> BlockOrigin:
        site = context[-1]
        return BlockOrigin(site.function, site.label, site.piece + 1, context[:-1])

    node(BlockOrigin(main, layout.entry_label[main], 0))
    while queue:
        origin = queue.popleft()
        src = ids[origin]
        if origin.summary:
            edges[(src, node(continuation(origin.context)))] = None
            continue
        piece = layout.piece(origin.function, origin.label, origin.piece)
        if piece.instructions and isinstance(piece.instructions[0], FallibleCall):
            sites.setdefault(piece.instructions[0].label, []).append(src)
        if piece.call is not None:
            site = CallSite(origin.function, origin.label, origin.piece)
            callee_context = origin.context + (site,)
            callee = piece.call.callee
            if len(origin.context) >= depth:
                target = BlockOrigin(callee, SUMMARY, 0, callee_context, summary=True)
            else:
                target = BlockOrigin(callee, layout.entry_label[callee], 0, callee_context)
            edges[(src, node(target))] = None
            continue
        if piece.terminator is None:
            nxt = BlockOrigin(origin.function, origin.label, origin.piece + 1, origin.context)
            edges[(src, node(nxt))] = None
            continue
        term = piece.terminator
        if isinstance(term, Return) and origin.context:
            edges[(src, node(continuation(origin.context)))] = None
            continue
        for target in term.targets():
            dst = node(BlockOrigin(origin.function, target, 0, origin.context))
            edges[(src, dst)] = predicates.get((origin.function, origin.label, target))

    names = {block: origin.name(main) for origin, block in ids.items()}
    cfg = Cfg(
        names,
        0,
        [(src, dst, pred) for (src, dst), pred in edges.items()],
        error_sites=sites,
        check_predicates=False,
    )
    logger.debug(f"🔧 Derived Cfg with {len(cfg)} blocks at context depth {depth}")
    return cfg, CfgMapping({block: origin for origin, block in ids.items()})


# -- execution ---------------------------------------------------------------------------

class Outcome(Enum):
    OK = "OK"
    CRASH = "CRASH"
    EXIT = "EXIT"
    BUDGET_EXCEEDED = "BUDGET_EXCEEDED"


@dataclass(frozen=True)
class CallContext:
    """Call-site stack from main to the current frame"""

    stack: Tuple[str, ...] = ()

    @property
    def hash(self) -> int:
        digest = hashlib.blake2b("\x1f".join(self.stack).encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    def __str__(self) -> str:
        return ">".join(self.stack) or "<main>"


@dataclass(frozen=True)
class Encounter:
    label: str
    context: CallContext
    injected: int


@dataclass(frozen=True)
class ExecutionTrace:
    path: PathSpec
    encounters: Tuple[Encounter, ...]
    outcome: Outcome
    crash_label: Optional[str] = None
    crash_block: Optional[BlockId] = None
    truncated: bool = False
    steps: int = 0
    branch_edges: FrozenSet[Tuple[BlockId, BlockId]] = field(default=frozenset(), compare=False)

    @property
    def error_sequence(self) -> Tuple[int, ...]:
        return tuple(e.injected for e in self.encounters)

    @property
    def faults_injected(self) -> int:
        return sum(self.error_sequence)

    @property
    def crashed(self) -> bool:
        return self.outcome is Outcome.CRASH

    def describe(self) -> str:
        if self.outcome is Outcome.CRASH:
            return f"CRASH({self.crash_label})"
        return self.outcome.value


class ExecutionObserver:
    """Hook points for shadow execution; every method is a no-op by default"""

    def on_read(self, dst: str, offset: int, value: int) -> None:
        pass

    def on_assign(self, instr: Assign, value: int) -> None:
        pass

    def on_opaque(self, dst: str, value: int) -> None:
        pass

    def on_enter(self, callee: str) -> None:
        pass

    def on_return(self, reg: Optional[str], dst: Optional[str], value: int) -> None:
        pass

    def on_branch(self, src: BlockId, dst: BlockId, terminator: Terminator, value: int) -> None:
        pass


@dataclass
class _Frame:
    function: str
    label: str
    piece: int
    context: Context
    stack: Tuple[str, ...]
    summary_block: Optional[BlockId] = None
    ret_dst: Optional[str] = None
    registers: Dict[str, int] = field(default_factory=dict)


class _Stop(Exception):
    def __init__(self, outcome: Outcome, label: Optional[str] = None):
        super().__init__(outcome.value)
        self.outcome = outcome
        self.label = label


class TargetVM:
    """Interpreter bound to one program and its derived Cfg"""

    def __init__(
        self,
        program: Program,
        context_depth: Optional[int] = None,
        max_input_len: Optional[int] = None,
        block_budget: Optional[int] = None,
    ):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.program = program
        self.context_depth = config.vm['context_depth'] if context_depth is None else context_depth
        self.max_input_len = config.vm['max_input_len'] if max_input_len is None else max_input_len
        self.layout = ProgramLayout(program)
        self.cfg, self.mapping = derive_cfg(program, self.context_depth, block_budget)

    def _block(self, frame: _Frame) -> BlockId:
        if frame.summary_block is not None:
            return frame.summary_block
        return self.mapping.block_of(BlockOrigin(frame.function, frame.label, frame.piece, frame.context))

    def execute(
        self,
        data: bytes,
        error_sequence: Sequence[int] = (),
        step_budget: Optional[int] = None,
        observer: Optional[ExecutionObserver] = None,
    ) -> ExecutionTrace:
        budget = config.vm['step_budget'] if step_budget is None else step_budget
        if budget <= 0:
            raise ValueError("step budget must be positive")
        data = bytes(data[:self.max_input_len])
        program = self.program
        layout = self.layout
        depth = self.context_depth

        path: List[BlockId] = []
        encounters: List[Encounter] = []
        truncated = False
        steps = 0
        frames = [_Frame(program.main, layout.entry_label[program.main], 0, (), ())]
        outcome, crash_label, crash_block = Outcome.OK, None, None

        def read(frame: _Frame, operand) -> int:
            return operand if isinstance(operand, int) else frame.registers.get(operand, 0)

        try:
            while True:
                frame = frames[-1]
                if frame.summary_block is None:
                    path.append(self._block(frame))
                piece = layout.piece(frame.function, frame.label, frame.piece)
                for instr in piece.instructions:
                    steps += 1
                    if steps > budget:
                        raise _Stop(Outcome.BUDGET_EXCEEDED)
                    if isinstance(instr, ReadInput):
                        value = data[instr.offset] if instr.offset < len(data) else 0
                        frame.registers[instr.dst] = value
                        if observer:
                            observer.on_read(instr.dst, instr.offset, value)
                    elif isinstance(instr, Assign):
                        left = read(frame, instr.left)
                        if instr.op is None:
                            value = left
                        else:
                            right = read(frame, instr.right)
                            if instr.op == "+":
                                value = _wrap(left + right)
                            elif instr.op == "-":
                                value = _wrap(left - right)
                            elif instr.op == "*":
                                value = _wrap(left * right)
                            else:
                                value = int(compare(left, instr.op, right))
                        frame.registers[instr.dst] = value
                        if observer:
                            observer.on_assign(instr, value)
                    elif isinstance(instr, FallibleCall):
                        bit = error_sequence[len(encounters)] if len(encounters) < len(error_sequence) else 0
                        bit = 1 if bit else 0
                        stack = frame.stack
                        if len(stack) > depth:
                            stack, truncated = stack[:depth], True
                        encounters.append(Encounter(instr.label, CallContext(stack), bit))
                        value = error_value(instr.callee) if bit else success_value(
                            instr.callee, layout.site_index[instr.label])
                        frame.registers[instr.dst] = value
                        if observer:
                            observer.on_opaque(instr.dst, value)
                    elif isinstance(instr, HandlerOp):
                        if instr.kind == "exit":
                            raise _Stop(Outcome.EXIT)
                    elif isinstance(instr, CrashIf):
                        if frame.registers.get(instr.reg, 0):
                            raise _Stop(Outcome.CRASH, instr.label)

                steps += 1
                if steps > budget:
                    raise _Stop(Outcome.BUDGET_EXCEEDED)

                if piece.call is not None:
                    site = CallSite(frame.function, frame.label, frame.piece)
                    callee = piece.call.callee
                    callee_frame = _Frame(
                        callee, layout.entry_label[callee], 0, frame.context + (site,),
                        frame.stack + (str(site),), frame.summary_block, piece.call.dst,
                    )
                    if frame.summary_block is None and len(frame.context) >= depth:
                        summary = BlockOrigin(callee, SUMMARY, 0, callee_frame.context, summary=True)
                        callee_frame.summary_block = self.mapping.block_of(summary)
                        path.append(callee_frame.summary_block)
                    if observer:
                        observer.on_enter(callee)
                    frames.append(callee_frame)
                    continue
                term = piece.terminator
                if term is None:
                    frame.piece += 1
                    continue
                if isinstance(term, Jump):
                    frame.label, frame.piece = term.target, 0
                elif isinstance(term, (Branch, Switch)):
                    value = frame.registers.get(term.reg, 0)
                    if isinstance(term, Branch):
                        target = term.then if value != 0 else term.orelse
                    else:
                        target = next((label for case, label in term.cases if case == value), term.default)
                    if observer and frame.summary_block is None:
                        src = path[-1]
                        dst = self.mapping.block_of(BlockOrigin(frame.function, target, 0, frame.context))
                        observer.on_branch(src, dst, term, value)
                    frame.label, frame.piece = target, 0
                elif isinstance(term, Return):
                    value = frame.registers.get(term.reg, 0) if term.reg else 0
                    frames.pop()
                    if not frames:
                        break
                    caller = frames[-1]
                    if frame.ret_dst:
                        caller.registers[frame.ret_dst] = value
                    if observer:
                        observer.on_return(term.reg, frame.ret_dst, value)
                    caller.piece += 1
                elif isinstance(term, Halt):
                    break
                elif isinstance(term, Crash):
                    raise _Stop(Outcome.CRASH, term.label)
        except _Stop as stop:
            outcome, crash_label = stop.outcome, stop.label
            if outcome is Outcome.CRASH:
                crash_block = self._block(frames[-1])

        return ExecutionTrace(
            path=PathSpec(tuple(path)),
            encounters=tuple(encounters),
            outcome=outcome,
            crash_label=crash_label,
            crash_block=crash_block,
            truncated=truncated,
            steps=steps,
            branch_edges=frozenset(zip(path, path[1:])),
        )


@lru_cache(maxsize=32)
def vm_for(program: Program, context_depth: Optional[int] = None) -> TargetVM:
    """Shared VM per (program, depth); programs are immutable"""
    return TargetVM(program, context_depth)


def execute(
    program: Program,
    data: bytes,
    error_sequence: Sequence[int] = (),
    step_budget: Optional[int] = None,
) -> ExecutionTrace:
    return vm_for(program).execute(data, error_sequence, step_budget)
