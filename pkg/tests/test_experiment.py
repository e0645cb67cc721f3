from pathlib import Path

import pytest

from services.consensus import ElectionVariant, QualificationMode
from services.datasets import PartitionKind
from services.experiment import DataSource, ExperimentConfig, load_experiment_config, parse_experiment_config
from services.learning import Aggregator
from utils.errors import ConfigError, InvalidArgument

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def config_error(text: str) -> ConfigError:
    with pytest.raises(ConfigError) as excinfo:
        parse_experiment_config(text)
    return excinfo.value


def test_empty_document_takes_defaults():
    cfg = parse_experiment_config("{}")
    assert cfg == ExperimentConfig()
    assert cfg.qualification.mode is QualificationMode.RELATIVE
    assert cfg.qualification.rho == 0.95


def test_sections_are_parsed():
    cfg = parse_experiment_config("""{
  "seed": 9,
  "aggregator": "cwmed",
  "election": {"variant": "random"},
  "qualification": {"mode": "absolute", "theta": 0.6},
  "train": {"epochs": 3, "learning_rate": 0.2, "batch_size": 8},
  "partition": {"kind": "shards", "shards_per_node": 3},
  "attack": {"malicious_fraction": 0.3, "noise_sigma": 5, "collusion": true},
  "genesis_committee": [4, 2, 2]
}""")
    assert cfg.seed == 9
    assert cfg.aggregator is Aggregator.CWMED
    assert cfg.election is ElectionVariant.RANDOM
    assert cfg.qualification.theta == 0.6
    assert cfg.train.epochs == 3
    assert cfg.train.seed == 9
    assert cfg.partition.kind is PartitionKind.SHARDS
    assert cfg.attack.collusion
    assert cfg.attack.noise_sigma == 5.0
    assert cfg.genesis_committee == (2, 4)


@pytest.mark.parametrize("name", ["honest.json", "attack.json"])
def test_shipped_configs_load(name):
    cfg = load_experiment_config(CONFIG_DIR / name)
    assert cfg.n_nodes == 200
    assert cfg.data.source is DataSource.SYNTHETIC


def test_attack_config_uses_an_honest_genesis_committee():
    cfg = load_experiment_config(CONFIG_DIR / "attack.json")
    assert cfg.genesis_committee == "honest"
    assert cfg.attack.relative_sigma
    assert cfg.committee_fraction == 0.2


def test_unknown_key_reports_its_line():
    error = config_error('{\n  "seed": 1,\n  "bogus": 2\n}')
    assert error.line == 3
    assert str(error).startswith("line 3:")
    assert "bogus" in str(error)


def test_unknown_section_key_reports_its_line():
    error = config_error('{\n  "train": {\n    "epochs": 1,\n    "momentum": 0.9\n  }\n}')
    assert error.line == 4


def test_wrong_type_reports_its_line():
    error = config_error('{\n  "name": "x",\n  "rounds": "ten"\n}')
    assert error.line == 3


def test_boolean_is_not_an_integer():
    assert config_error('{\n  "seed": true\n}').line == 2


def test_out_of_range_value_reports_its_line():
    error = config_error('{\n  "seed": 1,\n  "rounds": 5,\n  "active_fraction": 1.5\n}')
    assert error.line == 4
    assert "active_fraction" in str(error)


def test_invalid_policy_value_reports_its_line():
    error = config_error('{\n  "qualification": {\n    "mode": "absolute",\n    "theta": 0\n  }\n}')
    assert error.line == 4


def test_unknown_enum_value_reports_its_line():
    assert config_error('{\n  "seed": 1,\n  "aggregator": "max"\n}').line == 3


def test_json_syntax_error_uses_decoder_line():
    assert config_error('{\n  "seed": 1,\n}').line == 3


def test_top_level_must_be_an_object():
    assert config_error("[1, 2]").line == 1


def test_csv_source_needs_a_path():
    error = config_error('{\n  "data": {\n    "source": "csv"\n  }\n}')
    assert error.line == 3


def test_genesis_committee_string_must_be_honest():
    assert config_error('{\n  "genesis_committee": "random"\n}').line == 2


def test_config_error_is_a_bflc_error_without_line():
    error = ConfigError("plain")
    assert error.line is None
    assert str(error) == "plain"


def test_dataclass_validation():
    with pytest.raises(InvalidArgument):
        ExperimentConfig(rounds=0)
    with pytest.raises(InvalidArgument):
        ExperimentConfig(baselines=("fedprox",))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_experiment_config(tmp_path / "absent.json")


def test_k_above_trainer_count_reports_its_line():
    error = config_error('{\n  "n_nodes": 20,\n  "active_fraction": 0.5,\n  "k_updates_per_round": 9\n}')
    assert error.line == 4
    assert "k_updates_per_round" in str(error)


def test_too_few_nodes_for_two_committees_reports_its_line():
    error = config_error('{\n  "n_nodes": 8,\n  "active_fraction": 1.0,\n  "committee_fraction": 0.6\n}')
    assert error.line == 2


def test_unknown_genesis_node_reports_its_line():
    error = config_error('{\n  "n_nodes": 20,\n  "genesis_committee": [1, 25]\n}')
    assert error.line == 3
    assert "25" in str(error)


def test_default_round_sizes():
    sizes = ExperimentConfig().round_sizes()
    assert sizes == (20, 9, 11, 6)
    assert ExperimentConfig(k_updates_per_round=11).round_sizes().k == 11
