import pytest

import setup_config
from config import Config, config, load_campaign_file, merge_settings
from errors import ConfigError


def test_defaults_are_loaded():
    summary = config.get_configuration_summary()
    assert set(summary) == {'campaign', 'solver', 'vm', 'workers'}
    assert config.get_targets_dir().joinpath("fig2.ir").exists()


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("HUNTFUZZ_K", "5")
    monkeypatch.setenv("HUNTFUZZ_CONTEXT_INSENSITIVE", "TRUE")
    fresh = Config()
    assert fresh.campaign['k'] == 5
    assert fresh.campaign['context_insensitive'] is True


@pytest.mark.parametrize("name,value", [
    ("HUNTFUZZ_CLUSTERING_MODE", "loose"),
    ("HUNTFUZZ_DISTANCE_TERM", "hops"),
    ("HUNTFUZZ_MODE", "afl"),
    ("HUNTFUZZ_MUTATE_THRESHOLD", "0"),
])
def test_invalid_environment(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ConfigError):
        Config()


def test_campaign_file_normalizes_keys(tmp_path):
    path = tmp_path / "campaign.conf"
    path.write_text("# comment\nMutate-Threshold = 20\nk=3\n")
    assert load_campaign_file(str(path)) == {'mutate_threshold': '20', 'k': '3'}


def test_campaign_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_campaign_file(str(tmp_path / "missing.conf"))
    bare = tmp_path / "bare.conf"
    bare.write_text("k\n")
    with pytest.raises(ConfigError):
        load_campaign_file(str(bare))


def test_merge_settings_skips_none():
    assert merge_settings({'k': 2, 'w1': 0.5}, None, {'k': None, 'w1': 0.9}, {'seed': 3}) == \
        {'k': 2, 'w1': 0.9, 'seed': 3}


def test_setup_script_writes_loadable_file(tmp_path):
    answers = iter([""] * len(setup_config.CAMPAIGN_FIELDS) + ["y"])
    path = tmp_path / "campaign.conf"
    path.write_text("k=9\n")
    setup_config.main(str(path), ask=lambda prompt: next(answers))
    assert (tmp_path / "campaign.conf.backup").read_text() == "k=9\n"
    values = load_campaign_file(str(path))
    assert values['k'] == "2"
    assert values['budget'] == "100000execs"
    assert values['mutate_threshold'] == "10000"
