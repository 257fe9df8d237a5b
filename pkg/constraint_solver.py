"""
Linear byte constraints and the bounded solver used by the concolic executor.

A ByteConstraint is a conjunction of atoms ``sum(coef * b[i]) <op> rhs`` over unsigned
input bytes. Solving runs interval (bounds-consistency) propagation to a fixpoint and then
a propagating depth-first search over the most constrained bytes.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

BYTE_MIN = 0
BYTE_MAX = 255
INT32_MIN = -(2 ** 31)
INT32_MAX = 2 ** 31 - 1

OPS = ("==", "!=", "<", "<=", ">", ">=")
NEGATED_OP = {"==": "!=", "!=": "==", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}
MIRRORED_OP = {"==": "==", "!=": "!=", "<": ">", ">": "<", "<=": ">=", ">=": "<="}


def compare(left: int, op: str, right: int) -> bool:
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise ValueError(f"unknown comparison {op!r}")


@dataclass(frozen=True)
class LinearExpr:
    """Integer-linear expression over input bytes: sum(coef * b[offset]) + const"""

    terms: Tuple[Tuple[int, int], ...] = ()
    const: int = 0

    @classmethod
    def constant(cls, value: int) -> "LinearExpr":
        return cls((), value)

    @classmethod
    def byte(cls, offset: int) -> "LinearExpr":
        return cls(((offset, 1),), 0)

    @classmethod
    def from_mapping(cls, coefs: Dict[int, int], const: int = 0) -> "LinearExpr":
        return cls(tuple(sorted((o, c) for o, c in coefs.items() if c != 0)), const)

    @property
    def is_constant(self) -> bool:
        return not self.terms

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(offset for offset, _ in self.terms)

    def __add__(self, other: "LinearExpr") -> "LinearExpr":
        coefs = dict(self.terms)
        for offset, coef in other.terms:
            coefs[offset] = coefs.get(offset, 0) + coef
        return LinearExpr.from_mapping(coefs, self.const + other.const)

    def __neg__(self) -> "LinearExpr":
        return self.scale(-1)

    def __sub__(self, other: "LinearExpr") -> "LinearExpr":
        return self + (-other)

    def scale(self, factor: int) -> "LinearExpr":
        return LinearExpr.from_mapping({o: c * factor for o, c in self.terms}, self.const * factor)

    def evaluate(self, data: bytes) -> int:
        total = self.const
        for offset, coef in self.terms:
            total += coef * (data[offset] if offset < len(data) else 0)
        return total

    def __str__(self) -> str:
        parts = []
        for offset, coef in self.terms:
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            body = f"b{offset}" if mag == 1 else f"{mag}*b{offset}"
            parts.append((sign, body))
        if self.const or not parts:
            parts.append(("-" if self.const < 0 else "+", str(abs(self.const))))
        text = parts[0][1] if parts[0][0] == "+" else f"-{parts[0][1]}"
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text


@dataclass(frozen=True)
class Atom:
    """``expr <op> rhs`` with the expression's constant folded into rhs"""

    expr: LinearExpr
    op: str
    rhs: int
    concretized: bool = False

    @classmethod
    def make(cls, left: LinearExpr, op: str, right: LinearExpr, concretized: bool = False) -> "Atom":
        if op == "=":
            op = "=="
        if op not in OPS:
            raise ValueError(f"unknown comparison {op!r}")
        diff = left - right
        expr = LinearExpr(diff.terms, 0)
        # keep the leading coefficient positive so equal atoms compare equal
        if expr.terms and expr.terms[0][1] < 0:
            return cls(expr.scale(-1), MIRRORED_OP[op], diff.const, concretized)
        return cls(expr, op, -diff.const, concretized)

    def negate(self) -> "Atom":
        return Atom(self.expr, NEGATED_OP[self.op], self.rhs, self.concretized)

    def holds(self, data: bytes) -> bool:
        return compare(self.expr.evaluate(data), self.op, self.rhs)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return self.expr.offsets

    def __str__(self) -> str:
        return f"{self.expr} {self.op} {self.rhs}"


@dataclass(frozen=True)
class ByteConstraint:
    """Conjunction of linear atoms; the empty conjunction is always true"""

    atoms: Tuple[Atom, ...] = ()

    @classmethod
    def of(cls, *atoms: Atom) -> "ByteConstraint":
        return cls(tuple(atoms))

    def conjoin(self, other: "ByteConstraint") -> "ByteConstraint":
        merged = list(self.atoms)
        for atom in other.atoms:
            if atom not in merged:
                merged.append(atom)
        return ByteConstraint(tuple(merged))

    def holds(self, data: bytes) -> bool:
        return all(atom.holds(data) for atom in self.atoms)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(sorted({o for atom in self.atoms for o in atom.offsets}))

    @property
    def is_true(self) -> bool:
        return not self.atoms

    def validate(self, max_len: int) -> None:
        for atom in self.atoms:
            for offset, coef in atom.expr.terms:
                if offset >= max_len:
                    raise ValueError(f"byte offset {offset} exceeds max input length {max_len}")
                if not INT32_MIN <= coef <= INT32_MAX:
                    raise ValueError(f"coefficient {coef} does not fit in 32 bits")

    def __str__(self) -> str:
        return " && ".join(str(atom) for atom in self.atoms) if self.atoms else "true"

    @classmethod
    def parse(cls, text: str) -> "ByteConstraint":
        return parse_constraint(text)


TRUE = ByteConstraint()

_ATOM_RE = re.compile(r"^(?P<left>.+?)\s*(?P<op>==|!=|<=|>=|=|<|>)\s*(?P<right>.+)$")
_TERM_RE = re.compile(r"\s*([+-])?\s*(?:(\d+)\s*\*\s*)?(b(\d+)|\d+)\s*")


def _parse_linear(text: str) -> LinearExpr:
    pos = 0
    coefs: Dict[int, int] = {}
    const = 0
    first = True
    text = text.strip()
    while pos < len(text):
        match = _TERM_RE.match(text, pos)
        if not match or match.end() == pos:
            raise ValueError(f"cannot parse linear expression {text!r}")
        sign, mult, body, offset = match.groups()
        if sign is None and not first:
            raise ValueError(f"missing operator in {text!r}")
        factor = -1 if sign == "-" else 1
        if offset is not None:
            coef = factor * (int(mult) if mult else 1)
            coefs[int(offset)] = coefs.get(int(offset), 0) + coef
        else:
            if mult:
                raise ValueError(f"constant product in {text!r}")
            const += factor * int(body)
        first = False
        pos = match.end()
    return LinearExpr.from_mapping(coefs, const)


def parse_constraint(text: str) -> ByteConstraint:
    """Parse ``b0 > 10 && 2*b1 - b2 == 7``; ``true`` or empty text is the empty conjunction."""
    text = text.strip()
    if not text or text == "true":
        return TRUE
    atoms = []
    for chunk in text.split("&&"):
        match = _ATOM_RE.match(chunk.strip())
        if not match:
            raise ValueError(f"cannot parse atom {chunk.strip()!r}")
        atoms.append(Atom.make(_parse_linear(match["left"]), match["op"], _parse_linear(match["right"])))
    return ByteConstraint(tuple(atoms))


class SolveStatus(Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SolveResult:
    status: SolveStatus
    input: Optional[bytes] = None
    assignments: int = 0

    @property
    def is_sat(self) -> bool:
        return self.status is SolveStatus.SAT


class _BudgetExhausted(Exception):
    pass


@dataclass
class _CompiledAtom:
    positions: List[int]
    coefs: List[int]
    op: str
    rhs: int


class ConstraintSolver:
    """Interval propagation plus bounded propagating search"""

    def __init__(self, enumeration_budget: int = 100_000, max_search_bytes: int = 8):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.enumeration_budget = enumeration_budget
        self.max_search_bytes = max_search_bytes

    def solve(self, constraint: ByteConstraint, max_len: int = 4096) -> SolveResult:
        if constraint.is_true:
            return SolveResult(SolveStatus.SAT, b"", 0)

        offsets = list(constraint.offsets)
        index = {offset: i for i, offset in enumerate(offsets)}
        atoms = [
            _CompiledAtom([index[o] for o, _ in a.expr.terms], [c for _, c in a.expr.terms], a.op, a.rhs)
            for a in constraint.atoms
        ]
        lo = [BYTE_MIN] * len(offsets)
        # bytes past the input limit always read as zero
        hi = [BYTE_MAX if offset < max_len else BYTE_MIN for offset in offsets]

        if not _propagate(atoms, lo, hi):
            return SolveResult(SolveStatus.UNSAT, None, 0)

        occurrences = [0] * len(offsets)
        for atom in atoms:
            for pos in atom.positions:
                occurrences[pos] += 1
        order = sorted(range(len(offsets)), key=lambda p: (-occurrences[p], hi[p] - lo[p], offsets[p]))
        search = order[:self.max_search_bytes]
        complete = len(search) == len(order)
        for pos in order[self.max_search_bytes:]:
            hi[pos] = lo[pos]
        if not complete and not _propagate(atoms, lo, hi):
            return SolveResult(SolveStatus.UNKNOWN, None, 0)

        counter = [0]
        try:
            values = self._search(atoms, search, 0, lo, hi, counter)
        except _BudgetExhausted:
            self.logger.debug(f"⚠️ Solver budget of {self.enumeration_budget} assignments exhausted")
            return SolveResult(SolveStatus.UNKNOWN, None, counter[0])

        if values is None:
            status = SolveStatus.UNSAT if complete else SolveStatus.UNKNOWN
            return SolveResult(status, None, counter[0])

        length = min(max_len, max(offsets) + 1)
        data = bytearray(length)
        for pos, offset in enumerate(offsets):
            if offset < length:
                data[offset] = values[pos]
        data = bytes(data)
        if not constraint.holds(data):
            self.logger.error(f"❌ Solver produced a non-model for {constraint}; reporting UNKNOWN")
            return SolveResult(SolveStatus.UNKNOWN, None, counter[0])
        return SolveResult(SolveStatus.SAT, data, counter[0])

    def _search(self, atoms, order, depth, lo, hi, counter) -> Optional[List[int]]:
        if depth == len(order):
            return list(lo)
        pos = order[depth]
        for value in range(lo[pos], hi[pos] + 1):
            counter[0] += 1
            if counter[0] > self.enumeration_budget:
                raise _BudgetExhausted()
            lo2, hi2 = list(lo), list(hi)
            lo2[pos] = hi2[pos] = value
            if _propagate(atoms, lo2, hi2):
                found = self._search(atoms, order, depth + 1, lo2, hi2, counter)
                if found is not None:
                    return found
        return None


def _ceil_div(p: int, q: int) -> int:
    return -((-p) // q)


def _narrow_upper(positions, coefs, bound, lo, hi) -> Optional[bool]:
    """Enforce sum(coef * x) <= bound; None on wipe-out, else whether anything changed"""
    mins = [c * lo[p] if c > 0 else c * hi[p] for p, c in zip(positions, coefs)]
    total = sum(mins)
    if total > bound:
        return None
    changed = False
    for (p, c), m in zip(zip(positions, coefs), mins):
        slack = bound - (total - m)
        if c > 0:
            new_hi = slack // c
            if new_hi < hi[p]:
                hi[p] = new_hi
                changed = True
        else:
            new_lo = _ceil_div(slack, c)
            if new_lo > lo[p]:
                lo[p] = new_lo
                changed = True
        if lo[p] > hi[p]:
            return None
    return changed


def _narrow_not_equal(atom: _CompiledAtom, lo, hi) -> Optional[bool]:
    rest = atom.rhs
    free = []
    for p, c in zip(atom.positions, atom.coefs):
        if lo[p] == hi[p]:
            rest -= c * lo[p]
        else:
            free.append((p, c))
    if not free:
        return None if rest == 0 else False
    if len(free) > 1:
        return False
    p, c = free[0]
    if rest % c:
        return False
    banned = rest // c
    if banned == lo[p]:
        lo[p] += 1
    elif banned == hi[p]:
        hi[p] -= 1
    else:
        return False
    return None if lo[p] > hi[p] else True


def _propagate(atoms: Sequence[_CompiledAtom], lo: List[int], hi: List[int], max_rounds: int = 64) -> bool:
    for _ in range(max_rounds):
        changed = False
        for atom in atoms:
            results = []
            if atom.op in ("<", "<=", "=="):
                bound = atom.rhs - 1 if atom.op == "<" else atom.rhs
                results.append(_narrow_upper(atom.positions, atom.coefs, bound, lo, hi))
            if atom.op in (">", ">=", "=="):
                bound = atom.rhs + 1 if atom.op == ">" else atom.rhs
                results.append(_narrow_upper(atom.positions, [-c for c in atom.coefs], -bound, lo, hi))
            if atom.op == "!=":
                results.append(_narrow_not_equal(atom, lo, hi))
            for result in results:
                if result is None:
                    return False
                changed = changed or result
        if not changed:
            return True
    return True


_default_solver: Optional[ConstraintSolver] = None


def solve(constraint: ByteConstraint, max_len: int = 4096, budget: Optional[int] = None) -> SolveResult:
    """Module-level entry point using the configured solver limits"""
    global _default_solver
    if budget is not None:
        return ConstraintSolver(enumeration_budget=budget).solve(constraint, max_len)
    if _default_solver is None:
        from config import config
        _default_solver = ConstraintSolver(
            enumeration_budget=config.solver['enumeration_budget'],
            max_search_bytes=config.solver['max_search_bytes'],
        )
    return _default_solver.solve(constraint, max_len)


def conjoin_all(constraints: Iterable[ByteConstraint]) -> ByteConstraint:
    result = TRUE
    for constraint in constraints:
        result = result.conjoin(constraint)
    return result
