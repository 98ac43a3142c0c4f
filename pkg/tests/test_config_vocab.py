from __future__ import annotations

import math

import pytest

from longtail.config import ConfigError, RunConfig, parse_config_text, parse_overrides
from longtail.corpus import SPECIALS, CorpusError
from longtail.vocab import Vocabulary


def test_defaults_and_views():
    cfg = RunConfig()
    assert cfg.beam_config().beam_size == 5
    assert cfg.loss_config().family == "ce"
    assert cfg.bucket_edges() == [1, 2, 3, 4, 5, 10, 100, 1000, math.inf]
    assert cfg.synthetic
    assert cfg.model_config(300).vocab_size == 300


def test_coercion_and_unknown_keys():
    cfg = RunConfig({"model.tie_embeddings": "false", "beam.size": "3", "loss.alpha": "0.5"})
    assert cfg["model.tie_embeddings"] is False and cfg["beam.size"] == 3 and cfg["loss.alpha"] == 0.5
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig({"beam.width": 3})
    with pytest.raises(ConfigError, match="cannot parse"):
        RunConfig({"beam.size": "five"})


def test_text_roundtrip(tmp_path):
    cfg = RunConfig({"loss.family": "gfl", "seed": 7})
    cfg.save(tmp_path / "c.cfg")
    back = RunConfig.from_file(tmp_path / "c.cfg")
    assert back.values == cfg.values
    assert RunConfig().diff(back) == {"loss.family": ("ce", "gfl"), "seed": (1, 7)}


def test_parsers():
    assert parse_config_text("a = 1  # note\n\n# c\nb=x") == {"a": "1", "b": "x"}
    with pytest.raises(ConfigError):
        parse_config_text("novalue")
    assert parse_overrides(["x.y=2"]) == {"x.y": "2"}
    with pytest.raises(ConfigError):
        parse_overrides(["x"])


def test_vocab_roundtrip(tmp_path):
    v = Vocabulary.from_counts({"b": 3, "a": 3, "c": 9})
    assert v.tokens == SPECIALS + ("c", "a", "b")
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    assert v.encode(["a", "zz"], add_eos=True) == [5, 3, 2]
    assert v.decode([1, 5, 3, 2, 0]) == ["a", "<unk>"]


def test_vocab_requires_specials():
    with pytest.raises(CorpusError):
        Vocabulary(("a", "b"))
    with pytest.raises(CorpusError):
        Vocabulary(SPECIALS + ("a", "a"))
