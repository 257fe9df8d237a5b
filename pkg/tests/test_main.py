import pytest

from backend.utils.artifacts import read_json
from main import EXIT_INTERNAL, EXIT_OK, EXIT_TARGET, EXIT_USAGE, main
from setup_config import write_config_file


@pytest.mark.parametrize("argv", [[], ["bogus"], ["fuzz"], ["cluster", "--target", "x.ir", "--k", "two"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_missing_target_file_is_a_usage_error(tmp_path):
    assert main(["extract", "--target", str(tmp_path / "nope.ir")]) == EXIT_USAGE


def test_malformed_targets(tmp_path):
    bad_ir = tmp_path / "bad.ir"
    bad_ir.write_text("func main:\nblock main:\n  r0 = = 1\n  halt\n")
    assert main(["extract", "--target", str(bad_ir), "--out", str(tmp_path)]) == EXIT_TARGET
    bad_dot = tmp_path / "bad.dot"
    bad_dot.write_text('digraph g { "a"; "b"; "a" -> "b"; }')
    assert main(["cluster", "--target", str(bad_dot), "--out", str(tmp_path)]) == EXIT_TARGET


def test_cluster_program(targets_dir, tmp_path):
    assert main(["cluster", "--target", str(targets_dir / "fig2.ir"), "--k", "2", "--out", str(tmp_path)]) == EXIT_OK
    clusters = read_json(tmp_path / "clusters.json")
    assert [(c["members"], c["parent"]) for c in clusters["clusters"]] == [
        (["EP1", "EP2", "EP3"], "B"), (["EP4"], "D"),
    ]


def test_cluster_dot(targets_dir, tmp_path):
    assert main(["cluster", "--target", str(targets_dir / "fig2.dot"), "--k", "2", "--out", str(tmp_path)]) == EXIT_OK
    clusters = read_json(tmp_path / "clusters.json")
    assert [(c['members'], c['parent']) for c in clusters['clusters']] == [
        (["EP1", "EP2", "EP3"], "B"), (["EP4"], "D"),
    ]
    assert "doublecircle" in (tmp_path / "clusters.dot").read_text()


def test_cluster_reads_config_file_and_flags_override_it(targets_dir, tmp_path):
    conf = write_config_file(tmp_path / "campaign.conf", {'k': '0', 'clustering-mode': 'pivot'})
    dot = str(targets_dir / "fig2.dot")
    assert main(["cluster", "--target", dot, "--config", str(conf), "--out", str(tmp_path / "file")]) == EXIT_OK
    from_file = read_json(tmp_path / "file" / "clusters.json")
    assert from_file['mode'] == "pivot"
    assert [c['members'] for c in from_file['clusters']] == [["EP2"], ["EP1"], ["EP3"], ["EP4"]]
    argv = ["cluster", "--target", dot, "--config", str(conf), "--k", "2", "--out", str(tmp_path / "flag")]
    assert main(argv) == EXIT_OK
    overridden = read_json(tmp_path / "flag" / "clusters.json")
    assert [c['members'] for c in overridden['clusters']] == [["EP1", "EP2", "EP3"], ["EP4"]]


def test_extract_writes_error_points(targets_dir, tmp_path):
    assert main(["extract", "--target", str(targets_dir / "handlers.ir"), "--out", str(tmp_path)]) == EXIT_OK
    points = read_json(tmp_path / "error_points.json")
    assert len(points) == 4


def test_fuzz_then_replay(targets_dir, tmp_path):
    target = str(targets_dir / "switch3.ir")
    assert main(["fuzz", "--target", target, "--budget", "300execs", "--out", str(tmp_path)]) == EXIT_OK
    assert read_json(tmp_path / "summary.json")['summary']['executions'] == 300
    repro = tmp_path / "repro" / "bug-wildfree.repro"
    assert main(["fuzz", "--target", target, "--replay", str(repro)]) == EXIT_OK

    wrong = tmp_path / "wrong.repro"
    wrong.write_text(repro.read_text().replace("bug-wildfree", "bug-other"))
    assert main(["fuzz", "--target", target, "--replay", str(wrong)]) == EXIT_INTERNAL


def test_fuzz_rejects_bad_budget(targets_dir, tmp_path):
    argv = ["fuzz", "--target", str(targets_dir / "switch3.ir"), "--budget", "soon", "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_generate_and_report(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", "--out", str(out), "--seed", "1", "--count", "2", "--motifs", "switch=1,chain=1"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.ir")) == ["gen_1_0.ir", "gen_1_1.ir"]
    assert main(["generate", "--out", str(out), "--motifs", "loop=1"]) == EXIT_USAGE
    assert main(["report", "--run", str(tmp_path / "empty")]) == EXIT_USAGE


def test_single_execution_campaign(targets_dir, tmp_path):
    argv = ["fuzz", "--target", str(targets_dir / "fig2.ir"), "--budget", "1", "--seed", "0", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = (tmp_path / "timeseries.csv").read_text().splitlines()
    assert len(rows) == 2
    assert rows[1].startswith("1,")
