import pytest

from docgraph.config import ConfigError, model_config, parse_kv, read_kv, split, train_config
from docgraph.model import Architecture, ContextScope


def test_parse_kv_comments_and_spacing():
    kv = parse_kv("# comment\n\nlayers = 2\n hidden=32 \nlabel = a=b\n")
    assert kv == {"layers": "2", "hidden": "32", "label": "a=b"}


@pytest.mark.parametrize("text,match", [
    ("layers 2", ":1: expected key = value"),
    ("a = 1\n= 2", ":2: empty key"),
    ("a = 1\na = 2", ":2: duplicate key"),
])
def test_parse_kv_errors_name_the_line(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_kv(text)


def test_read_kv_uses_path_in_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("oops\n")
    with pytest.raises(ConfigError, match="c.cfg:1"):
        read_kv(p)


def test_split_partitions_keys():
    m, t, o = split({"layers": "1", "learning_rate": "0.1", "bpe_merges": "5"}, {"bpe_merges"})
    assert m == {"layers": "1"} and t == {"learning_rate": "0.1"} and o == {"bpe_merges": "5"}
    with pytest.raises(ConfigError, match="unknown configuration key 'nope'"):
        split({"nope": "1"})


def test_model_config_coerces_strings():
    cfg = model_config({"layers": "1", "architecture": "parallel", "context_scope": "all",
                        "use_tgt_graph": "false"}, 10, 12)
    assert cfg.layers == 1 and cfg.architecture is Architecture.PARALLEL
    assert cfg.context_scope is ContextScope.ALL and cfg.use_tgt_graph is False
    assert (cfg.src_vocab, cfg.tgt_vocab) == (10, 12)


def test_model_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        model_config({"hidden": "30", "heads": "4"}, 10, 10)
    with pytest.raises(ConfigError):
        model_config({"architecture": "diagonal"}, 10, 10)


def test_train_config_defaults_and_values():
    tc = train_config({"learning_rate": "0.01", "max_steps": "7"}, stage=1)
    assert tc.learning_rate == 0.01 and tc.max_steps == 7 and tc.stage == 1
    with pytest.raises(ConfigError):
        train_config({"max_steps": "seven"})
