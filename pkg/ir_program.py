"""
Mini-IR program model, loader and canonical serializer.

Grammar (one statement per line, ``#`` starts a comment)::

    func <name>:
    block <label>:
      <reg> = input[<offset>]
      <reg> = <operand> [<op> <operand>]        op: + - * == != < <= > >=
      fcall <reg> = <callee> @<error-point-label>
      call [<reg> =] <function>
      handler <kind>                             return break continue goto log exit close delete free
      crash <bug-label> if <reg>
      jmp <label> | br <reg> <then> <else> | switch <reg> [<v>:<label> ...] default:<label>
      ret [<reg>] | halt | crash <bug-label>

``main`` is the entry function; a function's first block is its entry block.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import networkx as nx

from errors import IRParseError, IRValidationError

logger = logging.getLogger(__name__)

Operand = Union[str, int]

ENTRY_FUNCTION = "main"
HANDLER_KINDS = ("return", "break", "continue", "goto", "log", "exit", "close", "delete", "free")
ARITH_OPS = ("+", "-", "*")
COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")
BINARY_OPS = ARITH_OPS + COMPARE_OPS

POINTER_LIKE = "pointer"
INTEGER_LIKE = "integer"
_POINTER_CALLEE = re.compile(
    r"(alloc|strn?dup|^fopen|^fdopen|^opendir|^tmpfile|^mmap|create|^new_|_new$|^get_)", re.IGNORECASE
)


def return_kind(callee: str) -> str:
    """Pointer-like for allocator/open/create families, integer-like otherwise"""
    return POINTER_LIKE if _POINTER_CALLEE.search(callee) else INTEGER_LIKE


def error_value(callee: str) -> int:
    """Value a fallible call yields under fault injection (NULL or -1)"""
    return 0 if return_kind(callee) == POINTER_LIKE else -1


def success_value(callee: str, site_index: int) -> int:
    """Value a fallible call yields when it executes normally"""
    return 0x1000 + site_index if return_kind(callee) == POINTER_LIKE else 0


# -- instructions ------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadInput:
    dst: str
    offset: int

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Assign:
    dst: str
    left: Operand
    op: Optional[str] = None
    right: Optional[Operand] = None

    def uses(self) -> Tuple[str, ...]:
        return tuple(o for o in (self.left, self.right) if isinstance(o, str))


@dataclass(frozen=True)
class FallibleCall:
    dst: str
    callee: str
    label: str

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Call:
    callee: str
    dst: Optional[str] = None

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class HandlerOp:
    kind: str

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class CrashIf:
    label: str
    reg: str

    def uses(self) -> Tuple[str, ...]:
        return (self.reg,)


Instruction = Union[ReadInput, Assign, FallibleCall, Call, HandlerOp, CrashIf]


# -- terminators -------------------------------------------------------------------------

@dataclass(frozen=True)
class Jump:
    target: str

    def targets(self) -> Tuple[str, ...]:
        return (self.target,)

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Branch:
    reg: str
    then: str
    orelse: str

    def targets(self) -> Tuple[str, ...]:
        return (self.then, self.orelse)

    def uses(self) -> Tuple[str, ...]:
        return (self.reg,)


@dataclass(frozen=True)
class Switch:
    reg: str
    cases: Tuple[Tuple[int, str], ...]
    default: str

    def targets(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for label in [label for _, label in self.cases] + [self.default]:
            if label not in seen:
                seen.append(label)
        return tuple(seen)

    def uses(self) -> Tuple[str, ...]:
        return (self.reg,)


@dataclass(frozen=True)
class Return:
    reg: Optional[str] = None

    def targets(self) -> Tuple[str, ...]:
        return ()

    def uses(self) -> Tuple[str, ...]:
        return (self.reg,) if self.reg else ()


@dataclass(frozen=True)
class Halt:
    def targets(self) -> Tuple[str, ...]:
        return ()

    def uses(self) -> Tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Crash:
    label: str

    def targets(self) -> Tuple[str, ...]:
        return ()

    def uses(self) -> Tuple[str, ...]:
        return ()


Terminator = Union[Jump, Branch, Switch, Return, Halt, Crash]


@dataclass(frozen=True)
class Block:
    label: str
    instructions: Tuple[Instruction, ...]
    terminator: Terminator
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Function:
    name: str
    blocks: Tuple[Block, ...]
    line: int = field(default=0, compare=False)

    @property
    def entry(self) -> Block:
        return self.blocks[0]

    def block(self, label: str) -> Block:
        for block in self.blocks:
            if block.label == label:
                return block
        raise KeyError(label)

    def defined_registers(self) -> frozenset:
        defined = set()
        for block in self.blocks:
            for instr in block.instructions:
                dst = getattr(instr, "dst", None)
                if dst:
                    defined.add(dst)
        return frozenset(defined)

    def block_graph(self) -> nx.DiGraph:
        """Intra-procedural block graph rooted at the entry block"""
        graph = nx.DiGraph()
        for block in self.blocks:
            graph.add_node(block.label)
            for target in block.terminator.targets():
                graph.add_edge(block.label, target)
        return graph


@dataclass(frozen=True)
class Program:
    functions: Tuple[Function, ...]
    main: str = ENTRY_FUNCTION

    def function(self, name: str) -> Function:
        for function in self.functions:
            if function.name == name:
                return function
        raise KeyError(name)

    @property
    def function_names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.functions)

    def fallible_calls(self) -> Iterator[Tuple[Function, Block, int, FallibleCall]]:
        """(function, block, instruction index, call) in program text order"""
        for function in self.functions:
            for block in function.blocks:
                for index, instr in enumerate(block.instructions):
                    if isinstance(instr, FallibleCall):
                        yield function, block, index, instr

    def error_point_labels(self) -> Tuple[str, ...]:
        return tuple(call.label for _, _, _, call in self.fallible_calls())

    def dumps(self) -> str:
        return dump_program(self)


# -- parsing ------------------------------------------------------------------------------

_IDENT = r"[A-Za-z_]\w*"
_LABEL = r"[A-Za-z_][\w-]*"
_OPERAND = r"-?\d+|[A-Za-z_]\w*"
_OP = r"==|!=|<=|>=|<|>|\+|-|\*"

_FUNC_RE = re.compile(rf"^func\s+({_IDENT}):$")
_BLOCK_RE = re.compile(rf"^block\s+({_IDENT}):$")
_READ_RE = re.compile(rf"^({_IDENT})\s*=\s*input\[(\d+)\]$")
_FCALL_RE = re.compile(rf"^fcall\s+({_IDENT})\s*=\s*({_IDENT})\s+@({_LABEL})$")
_CALL_RE = re.compile(rf"^call\s+(?:({_IDENT})\s*=\s*)?({_IDENT})$")
_HANDLER_RE = re.compile(rf"^handler\s+({_IDENT})$")
_CRASH_IF_RE = re.compile(rf"^crash\s+({_LABEL})\s+if\s+({_IDENT})$")
_CRASH_RE = re.compile(rf"^crash\s+({_LABEL})$")
_JMP_RE = re.compile(rf"^jmp\s+({_IDENT})$")
_BR_RE = re.compile(rf"^br\s+({_IDENT})\s+({_IDENT})\s+({_IDENT})$")
_SWITCH_RE = re.compile(rf"^switch\s+({_IDENT})\s+\[(.*)\]\s+default:({_IDENT})$")
_CASE_RE = re.compile(rf"^(-?\d+):({_IDENT})$")
_RET_RE = re.compile(rf"^ret(?:\s+({_IDENT}))?$")
_ASSIGN_RE = re.compile(rf"^({_IDENT})\s*=\s*({_OPERAND})(?:\s*({_OP})\s*({_OPERAND}))?$")

_KEYWORDS = {"func", "block", "input", "fcall", "call", "handler", "crash", "jmp", "br", "switch", "ret", "halt", "if"}


def _operand(text: str) -> Operand:
    return int(text) if re.fullmatch(r"-?\d+", text) else text


def _parse_terminator(text: str) -> Optional[Terminator]:
    if text == "halt":
        return Halt()
    match = _JMP_RE.match(text)
    if match:
        return Jump(match[1])
    match = _BR_RE.match(text)
    if match:
        return Branch(match[1], match[2], match[3])
    match = _SWITCH_RE.match(text)
    if match:
        cases = []
        for chunk in match[2].split():
            case = _CASE_RE.match(chunk)
            if not case:
                raise ValueError(f"bad switch case {chunk!r}")
            cases.append((int(case[1]), case[2]))
        return Switch(match[1], tuple(cases), match[3])
    match = _RET_RE.match(text)
    if match:
        return Return(match[1])
    match = _CRASH_RE.match(text)
    if match:
        return Crash(match[1])
    return None


def _parse_instruction(text: str) -> Optional[Instruction]:
    match = _FCALL_RE.match(text)
    if match:
        return FallibleCall(match[1], match[2], match[3])
    match = _CALL_RE.match(text)
    if match:
        return Call(match[2], match[1])
    match = _HANDLER_RE.match(text)
    if match:
        if match[1] not in HANDLER_KINDS:
            raise ValueError(f"unknown handler kind {match[1]!r}")
        return HandlerOp(match[1])
    match = _CRASH_IF_RE.match(text)
    if match:
        return CrashIf(match[1], match[2])
    match = _READ_RE.match(text)
    if match:
        return ReadInput(match[1], int(match[2]))
    match = _ASSIGN_RE.match(text)
    if match:
        if match[1] in _KEYWORDS:
            raise ValueError(f"{match[1]!r} is a reserved word")
        if match[3] is not None:
            return Assign(match[1], _operand(match[2]), match[3], _operand(match[4]))
        return Assign(match[1], _operand(match[2]))
    return None


def parse_program(text: str) -> Program:
    """Parse IR text without structural validation"""
    functions: List[Function] = []
    current_func: Optional[Tuple[str, int]] = None
    blocks: List[Block] = []
    block_label: Optional[str] = None
    block_line = 0
    instructions: List[Instruction] = []
    terminator: Optional[Terminator] = None

    def close_block(line_no: int):
        nonlocal block_label, instructions, terminator
        if block_label is None:
            return
        if terminator is None:
            raise IRValidationError("block has no terminator", block_label)
        blocks.append(Block(block_label, tuple(instructions), terminator, block_line))
        block_label, instructions, terminator = None, [], None

    def close_function(line_no: int):
        nonlocal current_func, blocks
        close_block(line_no)
        if current_func is None:
            return
        name, line = current_func
        if not blocks:
            raise IRValidationError("function has no blocks", name)
        functions.append(Function(name, tuple(blocks), line))
        current_func, blocks = None, []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        column = len(stripped) - len(stripped.lstrip()) + 1
        body = stripped.strip()

        match = _FUNC_RE.match(body)
        if match:
            close_function(line_no)
            current_func = (match[1], line_no)
            continue
        match = _BLOCK_RE.match(body)
        if match:
            if current_func is None:
                raise IRParseError("block outside of a function", line_no, column)
            close_block(line_no)
            block_label, block_line = match[1], line_no
            continue
        if block_label is None:
            raise IRParseError(f"statement outside of a block: {body!r}", line_no, column)
        if terminator is not None:
            raise IRParseError(f"statement after terminator in block {block_label!r}", line_no, column)
        try:
            parsed_term = _parse_terminator(body)
            if parsed_term is not None:
                terminator = parsed_term
                continue
            parsed = _parse_instruction(body)
        except ValueError as e:
            raise IRParseError(str(e), line_no, column) from e
        if parsed is None:
            raise IRParseError(f"unrecognized statement {body!r}", line_no, column)
        instructions.append(parsed)

    close_function(len(text.splitlines()))
    return Program(tuple(functions))


def validate_program(program: Program) -> Program:
    names = program.function_names
    if program.main not in names:
        raise IRValidationError("entry function is missing", program.main)
    duplicates = {n for n in names if names.count(n) > 1}
    if duplicates:
        raise IRValidationError("duplicate function", sorted(duplicates)[0])

    ep_labels: Dict[str, str] = {}
    for function in program.functions:
        labels = [b.label for b in function.blocks]
        for label in labels:
            if labels.count(label) > 1:
                raise IRValidationError(f"duplicate block in {function.name}", label)
        defined = function.defined_registers()
        for block in function.blocks:
            for instr in block.instructions:
                for reg in instr.uses():
                    if reg not in defined:
                        raise IRValidationError(f"register {reg!r} is never defined in {function.name}", block.label)
                if isinstance(instr, FallibleCall):
                    if instr.label in ep_labels:
                        raise IRValidationError("duplicate error-point label", instr.label)
                    ep_labels[instr.label] = function.name
                    if instr.callee in names:
                        raise IRValidationError("fcall must name an external callee; use call", instr.callee)
                if isinstance(instr, Call) and instr.callee not in names:
                    raise IRValidationError("call to undefined function", instr.callee)
            term = block.terminator
            for reg in term.uses():
                if reg not in defined:
                    raise IRValidationError(f"register {reg!r} is never defined in {function.name}", block.label)
            for target in term.targets():
                if target not in labels:
                    raise IRValidationError(f"jump to unknown block {target!r}", block.label)
            if isinstance(term, Switch):
                values = [v for v, _ in term.cases]
                if len(set(values)) != len(values):
                    raise IRValidationError("duplicate switch case value", block.label)
    return program


def load_program(text: str) -> Program:
    """Parse and validate IR text"""
    program = validate_program(parse_program(text))
    logger.debug(f"📄 Loaded program with {len(program.functions)} function(s), "
                 f"{len(program.error_point_labels())} fallible call(s)")
    return program


def load_program_file(path: str) -> Program:
    with open(path, "r") as f:
        return load_program(f.read())


# -- serialization ------------------------------------------------------------------------

def _format_instruction(instr: Instruction) -> str:
    if isinstance(instr, ReadInput):
        return f"{instr.dst} = input[{instr.offset}]"
    if isinstance(instr, Assign):
        if instr.op is None:
            return f"{instr.dst} = {instr.left}"
        return f"{instr.dst} = {instr.left} {instr.op} {instr.right}"
    if isinstance(instr, FallibleCall):
        return f"fcall {instr.dst} = {instr.callee} @{instr.label}"
    if isinstance(instr, Call):
        return f"call {instr.dst} = {instr.callee}" if instr.dst else f"call {instr.callee}"
    if isinstance(instr, HandlerOp):
        return f"handler {instr.kind}"
    if isinstance(instr, CrashIf):
        return f"crash {instr.label} if {instr.reg}"
    raise TypeError(f"unknown instruction {instr!r}")


def _format_terminator(term: Terminator) -> str:
    if isinstance(term, Jump):
        return f"jmp {term.target}"
    if isinstance(term, Branch):
        return f"br {term.reg} {term.then} {term.orelse}"
    if isinstance(term, Switch):
        cases = " ".join(f"{value}:{label}" for value, label in term.cases)
        return f"switch {term.reg} [{cases}] default:{term.default}"
    if isinstance(term, Return):
        return f"ret {term.reg}" if term.reg else "ret"
    if isinstance(term, Halt):
        return "halt"
    if isinstance(term, Crash):
        return f"crash {term.label}"
    raise TypeError(f"unknown terminator {term!r}")


def format_statement(stmt: Union[Instruction, Terminator]) -> str:
    try:
        return _format_instruction(stmt)
    except TypeError:
        return _format_terminator(stmt)


def dump_program(program: Program) -> str:
    """Canonical text form; ``load_program(dump_program(p)) == p``"""
    chunks = []
    for function in program.functions:
        lines = [f"func {function.name}:"]
        for block in function.blocks:
            lines.append(f"block {block.label}:")
            lines.extend(f"  {_format_instruction(i)}" for i in block.instructions)
            lines.append(f"  {_format_terminator(block.terminator)}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"
