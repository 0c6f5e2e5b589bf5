import pytest

from bgcnet.config import (
    RunConfig,
    build_run_config,
    dump_config,
    env_overrides,
    load_config,
    parse_config_text,
)
from bgcnet.errors import DataError


class TestParse:
    def test_empty_text_gives_defaults(self):
        config = build_run_config(parse_config_text(""))
        assert config.train.epochs == 100
        assert config.backbone.residual_channels == 32
        assert config.map_graph.alpha == 1.0
        assert config.dropout_rate == 0.5

    def test_values_and_comments(self):
        text = """
        # training
        epochs = 10
        lr_init = 0.01   # inline comment
        dilations = 1,2,1
        layers = 3
        grad_clip = none
        rescale_z = false
        """
        values = parse_config_text(text)
        assert values["epochs"] == 10
        assert values["lr_init"] == 0.01
        assert values["dilations"] == (1, 2, 1)
        assert values["grad_clip"] is None
        assert values["rescale_z"] is False

    def test_unknown_key_is_error(self):
        with pytest.raises(DataError, match="unknown config key"):
            parse_config_text("warp_speed = 9")

    def test_duplicate_key_is_error(self):
        with pytest.raises(DataError, match="duplicate"):
            parse_config_text("epochs = 1\nepochs = 2")

    def test_missing_equals_is_error(self):
        with pytest.raises(DataError, match="key = value"):
            parse_config_text("epochs 10")

    def test_bad_value_names_key(self):
        with pytest.raises(DataError, match="epochs"):
            parse_config_text("epochs = ten")

    def test_line_numbers_in_errors(self):
        with pytest.raises(DataError, match=":3:"):
            parse_config_text("epochs = 1\n\nbogus = 2")


class TestEnvOverrides:
    def test_prefix_upper_case(self):
        values = env_overrides({"BGCNET_EPOCHS": "7", "BGCNET_LR_INIT": "0.02",
                                "UNRELATED": "x"})
        assert values == {"epochs": 7, "lr_init": 0.02}

    def test_env_beats_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 60\nbatch_size = 16\n")
        config = load_config(path, environ={"BGCNET_EPOCHS": "80"})
        assert config.train.epochs == 80
        assert config.train.batch_size == 16

    def test_overrides_beat_env(self, tmp_path):
        config = load_config(None, environ={"BGCNET_EPOCHS": "80"},
                             overrides={"epochs": 90})
        assert config.train.epochs == 90


class TestRoundTrip:
    def test_dump_parses_back_identically(self):
        config = RunConfig()
        text = dump_config(config)
        rebuilt = build_run_config(parse_config_text(text))
        assert rebuilt == config

    def test_flat_covers_all_sections(self):
        flat = RunConfig().flat()
        for key in ("epochs", "layers", "alpha", "dropout_rate", "gvae_dim"):
            assert key in flat

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError, match="config file"):
            load_config(tmp_path / "absent.cfg")

    def test_section_validation_still_applies(self):
        with pytest.raises(DataError, match="lr_after"):
            build_run_config({"lr_init": 0.0001, "lr_after": 0.01})
