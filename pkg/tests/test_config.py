import math

import pytest

from sdrx.config import DEFAULT_OUTPUT, ConfigError, ExperimentConfig, parse_config, parse_config_text
from sdrx.signal import Format


def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("mode = b2b_sweep\nformat = QPSK\n")
    cfg = parse_config(p).validate()
    assert cfg == ExperimentConfig(mode="b2b_sweep", format=Format.QPSK)
    assert cfg.buffer_len == 65536 and cfg.num_streams == 5 and cfg.quantize
    assert cfg.output == DEFAULT_OUTPUT["b2b_sweep"]


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as ei:
        parse_config_text("mode = stream_run\n\n# comment\nfooo = 3\n")
    assert "fooo" in str(ei.value) and ei.value.line == 4 and "line 4" in str(ei.value)


def test_osnr_points_list():
    cfg = parse_config_text('osnr_points = "5,10,16"')
    assert cfg.osnr_points == (5.0, 10.0, 16.0)
    assert parse_config_text("osnr_points = 3, inf").osnr_points == (3.0, math.inf)


def test_comments_and_blanks():
    cfg = parse_config_text("  # header\nseed = 42   # trailing\n\nquantize = off\n")
    assert cfg.seed == 42 and cfg.quantize is False


@pytest.mark.parametrize(
    "text, line",
    [
        ("seed = 1\nseed = 2", 2),
        ("mode stream_run", 1),
        ("\nnum_buffers = ten", 2),
        ("quantize = maybe", 1),
        ("format = PAM3", 1),
    ],
)
def test_line_numbered_errors(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_config_text(text)
    assert ei.value.line == line


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.cfg")


@pytest.mark.parametrize(
    "over",
    [
        {"mode": "sweeep"},
        {"buffer_len": 1000},
        {"num_streams": 0},
        {"num_buffers": 1},
        {"window_len": 0.0},
        {"seed": -1},
        {"seed": 2**64},
        {"prbs_order": 9},
        {"osnr_points": ()},
        {"osnr_db": math.nan},
    ],
)
def test_invariants(over):
    cfg = ExperimentConfig(mode="b2b_sweep")
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**cfg.__dict__, **over}).validate()


def test_replay_needs_path():
    with pytest.raises(ConfigError, match="replay_path"):
        ExperimentConfig(mode="replay").validate()
