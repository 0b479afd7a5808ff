import pytest

from repgraph import ContractError, GridConfig, GroupConfig, LayerConfig
from repgraph.config import (
    layer_config_from_text,
    layer_config_to_text,
    load_config_file,
)


class TestRoundTrip:
    def test_basic_round_trip(self):
        cfg = LayerConfig(c=64, cp=16, s=9, variant="bottleneck", fusion="concat",
                          init_mode="fresh", offset_source="input", seed=3)
        text = layer_config_to_text(cfg)
        back, grid, grp = layer_config_from_text(text)
        assert back == cfg
        assert grid is None and grp is None

    def test_round_trip_with_variant_extensions(self):
        cfg = LayerConfig(c=32, cp=8, s=5)
        text = layer_config_to_text(cfg, grid=GridConfig(4), grp=GroupConfig(2))
        back, grid, grp = layer_config_from_text(text)
        assert back == cfg
        assert grid == GridConfig(4)
        assert grp == GroupConfig(2)


class TestParsing:
    def test_comments_and_blank_lines(self):
        text = """
# layer under test
c=16   # input width
cp=4
s = 2

variant=simple
"""
        cfg, _, _ = layer_config_from_text(text)
        assert cfg == LayerConfig(c=16, cp=4, s=2)

    def test_unknown_key_rejected(self):
        with pytest.raises(ContractError, match="unknown config key"):
            layer_config_from_text("c=4\ncp=2\nstride=2\n")

    def test_missing_required_keys_rejected(self):
        with pytest.raises(ContractError, match="missing required"):
            layer_config_from_text("s=2\n")

    def test_non_integer_rejected(self):
        with pytest.raises(ContractError, match="must be an integer"):
            layer_config_from_text("c=four\ncp=2\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ContractError, match="key=value"):
            layer_config_from_text("c=4\ncp=2\njust-words\n")

    def test_invalid_combination_rejected(self):
        text = "c=4\ncp=2\nfusion=concat\ninit_mode=pretrained_insert\n"
        with pytest.raises(ContractError):
            layer_config_from_text(text)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "layer.cfg"
        path.write_text("c=8\ncp=4\ngs=2\n")
        cfg, grid, grp = load_config_file(path)
        assert cfg.c == 8 and grid.gs == 2 and grp is None
