import pytest

from fer4d.config import PipelineConfig, load_config, parse_config
from fer4d.errors import ConfigError


def test_defaults_round_trip_through_text():
    cfg = PipelineConfig()
    assert parse_config(cfg.to_text()) == cfg
    odd = cfg.replace(views=(-45.0, 0.0, 20.0), cnn_filters=(3,), seed=2**63, lstm_lr=0.125)
    assert parse_config(odd.to_text()) == odd


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nseed = 3  # trailing\nviews = -30, 0, 30\n")
    assert cfg.seed == 3 and cfg.views == (-30.0, 0.0, 30.0)


@pytest.mark.parametrize(
    "text",
    [
        "seed 3",
        "colour = red",
        "seed = three",
        "image_size = 4",
        "views = 0, 0",
        "views = 95",
        "pooling = max",
        "net_input = 24",
        "lstm_dropout = 1.0",
        "cnn_lr = -1",
        "folds = 0",
    ],
)
def test_invalid_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_errors_carry_location(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("seed = 1\nwhat = 2\n")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.cfg")
