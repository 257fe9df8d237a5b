import pytest

from backend.utils.artifacts import read_json
from errors import UsageError
from fuzzer import Budget, FuzzSettings
from harness import CampaignConfig, run_bench, run_campaign
from report_generator import aggregate_results, cmd_report

SETTINGS = FuzzSettings(sample_every=50, max_input_len=64, step_budget=10_000)


@pytest.fixture
def campaign_dir(targets_dir, tmp_path):
    run_dir = tmp_path / "run"
    for mode in ("huntfuzz", "no-concolic"):
        cc = CampaignConfig(mode=mode, budget=Budget.parse("300execs"))
        run_campaign(targets_dir / "switch3.ir", cc, run_dir / mode, settings=SETTINGS)
    return run_dir


def test_aggregate_results(campaign_dir):
    report = aggregate_results(campaign_dir)
    assert sorted(c['dir'] for c in report['campaigns']) == ["huntfuzz", "no-concolic"]
    assert [s['mode'] for s in report['summary']] == ["huntfuzz", "no-concolic"]
    # the same crash found by both campaigns is listed once
    assert [b['label'] for b in report['bugs']].count("bug-wildfree") == 1
    assert report['series']['huntfuzz'][-1][0] == 300.0


def test_report_json_and_pdf(campaign_dir, tmp_path):
    written = cmd_report(campaign_dir, tmp_path / "report", pdf=True)
    assert written['pdf'].stat().st_size > 0
    report = read_json(written['json'])
    assert 'series' not in report
    assert len(report['campaigns']) == 2


def test_bench_level_summary_is_not_a_campaign(targets_dir, tmp_path):
    base = CampaignConfig(budget=Budget.parse("50execs"))
    run_bench([targets_dir / "switch3.ir"], base, ["no-concolic"], out_dir=tmp_path, workers=1)
    report = aggregate_results(tmp_path)
    assert len(report['campaigns']) == 1


def test_aggregate_rejects_empty_or_missing_runs(tmp_path):
    with pytest.raises(UsageError):
        aggregate_results(tmp_path)
    with pytest.raises(UsageError):
        aggregate_results(tmp_path / "missing")
