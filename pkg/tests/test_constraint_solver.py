import itertools
import random

import pytest

from constraint_solver import (
    Atom, ByteConstraint, ConstraintSolver, LinearExpr, SolveStatus, TRUE, conjoin_all, parse_constraint, solve,
)


def _random_constraint(rng: random.Random, width: int, witness=None) -> ByteConstraint:
    """Random conjunction over ``width`` bytes; satisfied by ``witness`` when one is given"""
    atoms = []
    for _ in range(rng.randint(1, 4)):
        offsets = rng.sample(range(width), rng.randint(1, width))
        expr = LinearExpr.from_mapping({o: rng.choice([-3, -2, -1, 1, 2, 3]) for o in offsets})
        op = rng.choice(["==", "!=", "<", "<=", ">", ">="])
        if witness is None:
            rhs = rng.randint(-300, 600)
        else:
            value = expr.evaluate(witness)
            rhs = {"==": value, "!=": value + rng.choice([-1, 1]), "<": value + rng.randint(1, 20),
                   "<=": value + rng.randint(0, 20), ">": value - rng.randint(1, 20),
                   ">=": value - rng.randint(0, 20)}[op]
        atoms.append(Atom.make(expr, op, LinearExpr.constant(rhs)))
    return ByteConstraint.of(*atoms)


def test_parse_and_str():
    constraint = parse_constraint("b0 > 10 && 2*b1 - b2 == 7")
    assert len(constraint.atoms) == 2
    assert str(constraint) == "b0 > 10 && 2*b1 - b2 == 7"
    assert constraint.offsets == (0, 1, 2)
    assert parse_constraint("true") is TRUE
    assert parse_constraint("") is TRUE


def test_atom_normalizes_leading_coefficient():
    left = Atom.make(LinearExpr.constant(5), "<", LinearExpr.byte(0))
    right = Atom.make(LinearExpr.byte(0), ">", LinearExpr.constant(5))
    assert left == right
    assert left.negate().op == "<="


@pytest.mark.parametrize("text", ["b0 >", "b0 ~ 3", "3*4 == b0", "b0 b1 == 2"])
def test_parse_rejects_garbage(text):
    with pytest.raises(ValueError):
        parse_constraint(text)


def test_true_solves_to_empty_input():
    result = ConstraintSolver().solve(TRUE)
    assert result.status is SolveStatus.SAT
    assert result.input == b""


def test_magic_word_is_found_by_propagation():
    constraint = parse_constraint("b0 + 256*b1 + 65536*b2 + 16777216*b3 == 4022250974")
    result = ConstraintSolver().solve(constraint)
    assert result.is_sat
    assert result.input == bytes([0xDE, 0xAD, 0xBE, 0xEF])


def test_out_of_range_is_unsat():
    assert ConstraintSolver().solve(parse_constraint("b0 > 255")).status is SolveStatus.UNSAT
    assert ConstraintSolver().solve(parse_constraint("b0 + b1 == 600")).status is SolveStatus.UNSAT
    assert ConstraintSolver().solve(parse_constraint("b0 == 3 && b0 != 3")).status is SolveStatus.UNSAT


def test_bytes_past_max_len_read_as_zero():
    assert ConstraintSolver().solve(parse_constraint("b5 == 1"), max_len=4).status is SolveStatus.UNSAT
    result = ConstraintSolver().solve(parse_constraint("b5 == 0 && b1 == 9"), max_len=4)
    assert result.is_sat
    assert result.input == bytes([0, 9, 0, 0])


def test_budget_exhaustion_reports_unknown():
    # parity: bounds propagation alone never empties a domain
    constraint = parse_constraint("2*b0 - 2*b1 == 1")
    assert ConstraintSolver(enumeration_budget=5).solve(constraint).status is SolveStatus.UNKNOWN
    result = ConstraintSolver().solve(constraint)
    assert result.status is SolveStatus.UNSAT


def test_module_level_solve_and_conjoin_all():
    merged = conjoin_all([parse_constraint("b0 == 1"), parse_constraint("b1 < 128"), parse_constraint("b0 == 1")])
    assert len(merged.atoms) == 2
    result = solve(merged, max_len=16)
    assert result.is_sat and merged.holds(result.input)


def test_validate_rejects_far_offsets():
    with pytest.raises(ValueError):
        parse_constraint("b10 == 1").validate(max_len=8)


@pytest.mark.parametrize("seed", range(5))
def test_sat_answers_verify_by_evaluation(seed, full_scale):
    rng = random.Random(seed)
    solver = ConstraintSolver()
    for _ in range(2000 if full_scale else 200):
        width = rng.randint(1, 4)
        witness = bytes(rng.randrange(256) for _ in range(width))
        constraint = _random_constraint(rng, width, witness)
        result = solver.solve(constraint)
        assert result.status is not SolveStatus.UNSAT, str(constraint)
        if result.is_sat:
            assert constraint.holds(result.input), str(constraint)


@pytest.mark.parametrize("seed", range(3))
def test_no_false_unsat_against_exhaustive_search(seed):
    rng = random.Random(100 + seed)
    solver = ConstraintSolver()
    domain = [bytes(pair) for pair in itertools.product(range(256), repeat=2)]
    for _ in range(10):
        constraint = _random_constraint(rng, 2)
        result = solver.solve(constraint)
        has_model = any(constraint.holds(data) for data in domain)
        if result.status is SolveStatus.UNSAT:
            assert not has_model, str(constraint)
        if has_model:
            assert result.is_sat, str(constraint)
