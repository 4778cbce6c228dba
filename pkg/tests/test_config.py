import pytest

from detrefine.config import (
    EngineConfig,
    format_flat_config,
    load_configs,
    parse_flat_text,
)
from detrefine.errors import InputError


class TestParser:
    def test_basic_lines(self):
        flat = parse_flat_text("a = 1\n# comment\nb= two \n\nc =3.5 # trailing\n")
        assert flat == {"a": "1", "b": "two", "c": "3.5"}

    def test_bad_line(self):
        with pytest.raises(InputError):
            parse_flat_text("just words\n")


class TestLoadConfigs:
    def test_defaults_without_file(self):
        engine, synth = load_configs(None)
        assert engine.num_classes == 15
        assert engine.mc_passes == 50
        assert engine.dropout_ratio == 0.2
        assert engine.spatial_threshold == 50.0
        assert engine.semantic_threshold == 10.0
        assert engine.temperature == 0.1
        assert engine.graph_cap == 100
        assert engine.epochs == 12
        assert engine.batch_scenes == 4
        assert engine.learning_rate == 0.01
        assert engine.weight_decay == 1e-4
        assert synth.num_classes == 8

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "num_classes = 8\n"
            "feature_channels = 32\n"
            "feature_height = 3\n"
            "feature_width = 3\n"
            "mc_passes = 20\n"
            "use_semantic_edges = false\n"
            "confusable_pairs = 0:1,2:3\n"
            "noise = 0.4\n"
            "down_channels = none\n"
        )
        engine, synth = load_configs(path, overrides={"mc_passes": 25, "seed": 3})
        assert engine.num_classes == 8
        assert engine.mc_passes == 25
        assert engine.seed == 3
        assert engine.use_semantic_edges is False
        assert engine.down_channels is None
        assert synth.noise == 0.4
        assert synth.confusable_pairs == ((0, 1), (2, 3))
        # shared keys configure both sides
        assert synth.num_classes == 8
        assert synth.feature_channels == 32

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("no_such_knob = 5\n")
        with pytest.raises(InputError):
            load_configs(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_configs(tmp_path / "absent.cfg")

    def test_validation_errors(self):
        with pytest.raises(InputError):
            load_configs(None, overrides={"dropout_ratio": "1.0"})
        with pytest.raises(InputError):
            load_configs(None, overrides={"relax_mode": "maybe"})
        with pytest.raises(InputError):
            load_configs(None, overrides={"edge_weight_mode": "inverse"})

    def test_round_trip_through_format(self, tmp_path):
        engine = EngineConfig(num_classes=8, mc_passes=17, use_spatial_edges=False)
        path = tmp_path / "echo.cfg"
        path.write_text(format_flat_config(engine))
        loaded, _ = load_configs(path)
        assert loaded == engine
