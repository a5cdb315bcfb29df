import pytest

from coldmatch.config import (
    Hyperparams,
    RunConfig,
    build_config,
    format_config,
    load_config,
    parse_config_text,
    with_hyper,
)
from coldmatch.errors import ConfigError


class TestParseConfigText:
    def test_basic_pairs_and_comments(self):
        text = "\n".join([
            "# a comment",
            "dim = 32",
            "",
            "learning_rate = 0.003   # trailing comment",
            "variant=variant2",
        ])
        assert parse_config_text(text) == {
            "dim": "32", "learning_rate": "0.003", "variant": "variant2"}

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("dim = 4\ndim = 8")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("dim 32")

    def test_empty_key_rejected(self):
        with pytest.raises(ConfigError, match="empty key"):
            parse_config_text("= 32")

    def test_source_and_line_in_message(self):
        with pytest.raises(ConfigError, match=r"my\.cfg:2"):
            parse_config_text("dim = 4\nbroken", source="my.cfg")


class TestBuildConfig:
    def test_typed_fields(self):
        config = build_config({"dim": "16", "learning_rate": "0.01",
                               "data": "x.tsv", "cold_fraction": "0.3"})
        assert config.hyper.dim == 16
        assert config.hyper.learning_rate == pytest.approx(0.01)
        assert config.data == "x.tsv"
        assert config.cold_fraction == pytest.approx(0.3)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            build_config({"not_a_key": "1"})

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            build_config({"dim": "banana"})

    def test_validation_runs(self):
        with pytest.raises(ConfigError, match="n_eval"):
            build_config({"n_eval": "1"})
        with pytest.raises(ConfigError, match="cold_fraction"):
            build_config({"cold_fraction": "1.5"})
        with pytest.raises(ConfigError, match="eval_split"):
            build_config({"eval_split": "bogus"})
        with pytest.raises(ConfigError, match="scorer"):
            build_config({"scorer": "psychic"})


class TestLoadConfig:
    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("dim = 8\nepochs = 3\n")
        config = load_config(str(path), {"dim": "4"})
        assert config.hyper.dim == 4
        assert config.hyper.epochs == 3

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError, match="cannot read config file"):
            load_config("/no/such/file.cfg")

    def test_no_file_defaults(self):
        config = load_config(None)
        assert config == RunConfig()


class TestFormatConfig:
    def test_sorted_and_round_trips(self):
        config = build_config({"dim": "24", "variant": "variant1", "out": "results"})
        text = format_config(config)
        lines = [l.split(" = ")[0] for l in text.splitlines()]
        assert lines == sorted(lines)
        assert build_config(parse_config_text(text)) == config


class TestHyperparams:
    def test_round_trip(self):
        hyper = Hyperparams(dim=12, k_shot=5)
        assert Hyperparams.from_dict(hyper.as_dict()) == hyper

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown hyperparameter"):
            Hyperparams.from_dict({"dim": 4, "mystery": 1})

    def test_with_hyper_replaces(self):
        config = RunConfig()
        changed = with_hyper(config, t_steps=0, variant="variant3")
        assert changed.hyper.t_steps == 0
        assert changed.hyper.variant == "variant3"
        assert changed.out == config.out

    @pytest.mark.parametrize("field,value", [
        ("n_train", 1), ("k_shot", 0), ("t_steps", -1), ("dim", 0),
        ("learning_rate", 0.0), ("episodes_per_epoch", 0), ("patience", -1),
        ("variant", "variant7"), ("precision", "float16"),
    ])
    def test_validation_rejects(self, field, value):
        with pytest.raises(ConfigError):
            Hyperparams(**{field: value}).validate()
