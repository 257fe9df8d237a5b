import re

import pytest

from errors import ConfigError
from extractor import (
    apply_overrides, classify_handler, error_point_paths, export_error_points, extract_candidates, load_overrides,
    realistic_points,
)
from backend.utils.artifacts import read_json
from ir_program import POINTER_LIKE, INTEGER_LIKE, dump_program, load_program
from target_vm import derive_cfg

CHECKED_PLAIN_CALL = """
func main:
block entry:
  call r = helper
  bad = r == 0
  br bad fail done
block fail:
  handler log
  ret
block done:
  ret

func helper:
block h:
  one = 1
  ret one
"""


def by_label(points):
    return {p.label: p for p in points}


def test_handler_kinds(load_target):
    points = by_label(extract_candidates(load_target("handlers.ir")))
    assert points["ep_log"].handler_kinds == {"log", "return"}
    assert points["ep_goto"].handler_kinds == {"goto", "close"}
    assert points["ep_exit"].handler_kinds == {"exit"}
    assert points["ep_unchecked"].handler_kinds == frozenset()


def test_unchecked_call_is_not_realistic(load_target):
    points = by_label(extract_candidates(load_target("handlers.ir")))
    assert not points["ep_unchecked"].checked
    assert not points["ep_unchecked"].realistic
    assert [p.label for p in realistic_points(points.values())] == ["ep_log", "ep_goto", "ep_exit"]


def test_return_in_callee_handler(load_target):
    program = load_target("code1_patch.ir")
    (point,) = extract_candidates(program)
    assert point.label == "ep_realloc"
    assert point.function == "grow"
    assert point.return_kind == "pointer"
    assert classify_handler(program, point) == {"return"}


def test_fig2_points(fig2_program):
    points = extract_candidates(fig2_program)
    assert [p.label for p in points] == ["EP1", "EP2", "EP3", "EP4"]
    assert all(p.realistic for p in points)
    kinds = by_label(points)
    assert kinds["EP2"].handler_kinds == {"free"}
    assert kinds["EP3"].handler_kinds == {"close", "return"}


def test_checked_plain_calls_are_reported_but_not_injectable():
    points = extract_candidates(load_program(CHECKED_PLAIN_CALL))
    assert len(points) == 1
    assert points[0].label == "helper@main:entry#0"
    assert not points[0].fallible
    assert realistic_points(points) == []


def test_error_point_paths(fig2_program):
    cfg, _ = derive_cfg(fig2_program)
    points = extract_candidates(fig2_program)
    paths = {p.point: p for p in error_point_paths(cfg, points + ["ghost"])}
    assert paths["EP2"].path.names(cfg) == ["main", "A", "B", "EP1", "EP2"]
    assert paths["EP4"].path.names(cfg) == ["main", "A", "D", "EP4"]
    assert not paths["ghost"].ok
    assert paths["ghost"].error == "unreachable"


def test_overrides(tmp_path, fig2_program):
    override_file = tmp_path / "overrides.txt"
    override_file.write_text("# tuning\ndeny EP1\nallow EP9   # unknown\n\n")
    overrides = load_overrides(str(override_file))
    assert overrides == {"EP1": False, "EP9": True}
    points = apply_overrides(extract_candidates(fig2_program), overrides)
    assert [p.label for p in realistic_points(points)] == ["EP2", "EP3", "EP4"]


def test_bad_overrides(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("maybe EP1\n")
    with pytest.raises(ConfigError):
        load_overrides(str(bad))
    with pytest.raises(ConfigError):
        load_overrides(str(tmp_path / "missing.txt"))


def test_export(tmp_path, fig2_program):
    out = tmp_path / "points.json"
    export_error_points(extract_candidates(fig2_program), str(out))
    data = read_json(out)
    assert [d['label'] for d in data] == ["EP1", "EP2", "EP3", "EP4"]
    assert data[0]['block'] == "EP1"
    assert data[0]['kinds'] == ["log", "return"]


def scan_fallible_calls(text):
    """Fallible calls read straight off the IR text with line patterns"""
    blocks, order, function, label = {}, [], None, None
    for line in text.splitlines():
        if line.startswith("func "):
            function = line[5:-1]
        elif line.startswith("block "):
            label = line[6:-1]
            blocks[(function, label)] = []
            order.append((function, label))
        elif line.strip():
            blocks[(function, label)].append(line.strip())

    found = []
    for function, label in order:
        statements = blocks[(function, label)]
        for index, stmt in enumerate(statements[:-1]):
            call = re.fullmatch(r"fcall (\S+) = (\S+) @(\S+)", stmt)
            if not call:
                continue
            dst, callee, point = call.groups()
            tainted, kind, err_block = {dst}, None, None
            for later in statements[index + 1:index + 4]:
                assign = re.fullmatch(r"(\S+) = (.+)", later)
                if assign and tainted & set(assign.group(2).split()):
                    tainted.add(assign.group(1))
                    if re.search(rf"\b{re.escape(dst)} == 0$", later):
                        kind = POINTER_LIKE
                    elif re.search(rf"\b{re.escape(dst)} < 0$", later):
                        kind = INTEGER_LIKE
                    continue
                branch = re.fullmatch(r"br (\S+) (\S+) (\S+)", later)
                if branch and branch.group(1) in tainted:
                    err_block = branch.group(2)
                    break
            kinds = set()
            if err_block:
                kinds = {s.split()[1] for s in blocks[(function, err_block)] if s.startswith("handler ")}
            found.append((point, function, label, index, callee, kind, frozenset(kinds), err_block is not None))
    return found


@pytest.mark.parametrize("seed", range(10))
def test_extraction_matches_text_scan_on_generated_programs(random_program, seed):
    motifs = {'switch': 1, 'chain': 1, 'deep-magic': 1, 'diamond': 1, 'double-fault': 1}
    # every path rejoins, so each handler region is the single error block
    program = random_program(seed, motifs=motifs, functions=1 + seed % 3, density=2, bug_rate=0.0)
    points = extract_candidates(program)
    assert all(p.fallible for p in points)
    assert [(p.label, p.function, p.block, p.index, p.callee, p.return_kind, p.handler_kinds, p.realistic)
            for p in points] == scan_fallible_calls(dump_program(program))
