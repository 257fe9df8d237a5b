"""End-to-end campaign checks; run at full size with ``--full-scale``"""

import pytest

from backend.utils.artifacts import read_csv, read_json, read_jsonl
from concolic import path_constraints
from constraint_solver import solve
from fuzzer import Budget, FuzzSettings, fuzz_loop
from harness import CampaignConfig, analyze_target, run_campaign
from main import EXIT_OK, main
from target_generator import GeneratorSpec, generate_target, generate_targets

pytestmark = pytest.mark.slow

SETTINGS = FuzzSettings(sample_every=100, max_input_len=64, step_budget=100_000)
ALL_MOTIFS = {'switch': 1, 'chain': 1, 'deep-magic': 1, 'diamond': 1, 'double-fault': 1}


def _assert_cluster_inputs_reach_parents(program):
    analysis = analyze_target(program, 2)
    cfg = analysis.vm.cfg
    assert len(analysis.clusters) > 0
    for cluster in analysis.clusters:
        result = solve(path_constraints(cfg, cluster.common_path), SETTINGS.max_input_len)
        assert result.is_sat, f"cluster {cluster.id} at {cfg.name(cluster.parent)}"
        trace = analysis.vm.execute(result.input)
        assert cluster.parent in trace.path.blocks, f"cluster {cluster.id} at {cfg.name(cluster.parent)}"


@pytest.mark.parametrize("name", ["fig2.ir", "switch3.ir", "deep_magic.ir", "double_fault.ir", "handlers.ir"])
def test_solved_inputs_reach_cluster_parent_on_fixtures(load_target, name):
    _assert_cluster_inputs_reach_parents(load_target(name))


def test_solved_inputs_reach_cluster_parent_on_generated_targets(full_scale):
    for seed in range(20 if full_scale else 4):
        spec = GeneratorSpec(seed=seed, motifs=ALL_MOTIFS, density=2, bug_rate=0.0, magic_bytes=4)
        _assert_cluster_inputs_reach_parents(generate_target(spec).program)


def test_guarded_points_need_the_scheduler(targets_dir):
    target = targets_dir / "deep_magic.ir"
    deep = {"deep1", "deep2", "deep3"}
    cc = CampaignConfig(budget=Budget.parse("300execs"), mutate_threshold=50)
    hunt = run_campaign(target, cc, settings=SETTINGS)
    assert deep <= set(hunt.fuzz.first_cover)
    assert "bug-deep-close" in hunt.summary()['bug_labels']
    blind = run_campaign(target, CampaignConfig(mode="no-concolic", budget=Budget.parse("300execs")),
                         settings=SETTINGS)
    assert not deep & set(blind.fuzz.first_cover)


def test_guarded_coverage_on_generated_targets(tmp_path, full_scale):
    spec = GeneratorSpec(seed=7, motifs={'deep-magic': 1, 'switch': 1}, count=3 if full_scale else 1,
                         bug_rate=0.0, magic_bytes=4)
    budget = Budget.parse("5000execs" if full_scale else "1000execs")
    for target in generate_targets(spec, tmp_path):
        cc = CampaignConfig(budget=budget, mutate_threshold=50)
        hunt = run_campaign(target.path, cc, settings=SETTINGS).summary()
        assert hunt['guarded_total'] == 3
        assert hunt['guarded_covered'] == 3
        blind = run_campaign(target.path, CampaignConfig(mode="no-concolic", budget=budget),
                             settings=SETTINGS).summary()
        assert blind['guarded_covered'] == 0


def test_campaign_artifacts_are_reproducible(targets_dir, tmp_path):
    cc = CampaignConfig(budget=Budget.parse("1000execs"), seed=3)
    for run in ("a", "b"):
        run_campaign(targets_dir / "switch3.ir", cc, tmp_path / run, settings=SETTINGS)
    for name in ("timeseries.csv", "bugs.jsonl", "decisions.jsonl", "clusters.json"):
        if name == "decisions.jsonl":
            strip = [{k: v for k, v in r.items() if k != 'wall_ms'} for r in read_jsonl(tmp_path / "a" / name)]
            again = [{k: v for k, v in r.items() if k != 'wall_ms'} for r in read_jsonl(tmp_path / "b" / name)]
            assert strip == again
        else:
            assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()


@pytest.mark.parametrize("name", ["switch3.ir", "double_fault.ir", "deep_magic.ir"])
def test_every_reported_bug_replays(targets_dir, tmp_path, name):
    target = targets_dir / name
    cc = CampaignConfig(budget=Budget.parse("1000execs"), mutate_threshold=50)
    result = run_campaign(target, cc, tmp_path, settings=SETTINGS)
    assert result.fuzz.bugs
    repros = sorted((tmp_path / "repro").glob("*.repro"))
    assert len(repros) == len(result.fuzz.bugs)
    for repro in repros:
        assert main(["fuzz", "--target", str(target), "--replay", str(repro)]) == EXIT_OK


def test_shallow_fixture_reaches_every_single_fault(load_target, full_scale):
    budget = "10000execs" if full_scale else "3000execs"
    result = fuzz_loop(load_target("switch3.ir"), [b"\x00"], budget, settings=SETTINGS)
    singles = {
        triples[0][0] for triples in result.ledger.error_sequences.values()
        if sum(bit for _, _, bit in triples) == 1
    }
    assert singles == {"ep1", "ep2", "ep3"}


def test_clustering_beats_blind_fuzzing_on_error_coverage(targets_dir):
    # the guarded fixture has six error sequences: two shallow, four behind the guard
    target = targets_dir / "deep_magic.ir"
    budget = Budget.parse("300execs")
    coverage = {}
    for k in (0, 2, 16):
        cc = CampaignConfig(k=k, budget=budget, mutate_threshold=50)
        coverage[k] = run_campaign(target, cc, settings=SETTINGS).summary()['error_coverage']
    blind = run_campaign(target, CampaignConfig(mode="no-concolic", budget=budget),
                         settings=SETTINGS).summary()['error_coverage']
    assert blind <= 2
    assert coverage[2] >= 4
    assert coverage[2] >= 1.2 * blind
    assert coverage[2] >= max(coverage[0], coverage[16])


def test_bench_k_sweep_with_repeats(targets_dir, tmp_path):
    argv = ["bench", "--target", str(targets_dir / "switch3.ir"), "--mode", "huntfuzz",
            "--sweep", "k=0,1,2,4,8", "--repeats", "5", "--budget", "50execs", "--workers", "1",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    cells = read_csv(tmp_path / "cells.csv")
    assert len(cells) == 25
    summary = read_json(tmp_path / "summary.json")['summary']
    assert len(summary) == 5
    assert all(row['cells'] == 5 for row in summary)
    assert sorted(row['params'].split("_")[0] for row in summary) == ["k=0", "k=1", "k=2", "k=4", "k=8"]
