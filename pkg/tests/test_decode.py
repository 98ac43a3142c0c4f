from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from longtail.corpus import EOS_ID
from longtail.decode import (
    BeamConfig,
    beam_search,
    collect_positional_scores,
    decode,
    exhaustive_search,
    greedy_decode,
    normalize,
)


class TableModel(torch.nn.Module):
    """Next-token log-probs are an arbitrary function of (source, prefix)."""

    def __init__(self, vocab_size, fn):
        super().__init__()
        self.cfg = SimpleNamespace(vocab_size=vocab_size)
        self.fn = fn

    def encode(self, src):
        return src.double()[..., None], src == 0

    def decode(self, tgt_in, memory, pad_mask):
        src = tuple(int(x) for x in memory[0, :, 0])
        n, T = tgt_in.shape
        out = torch.zeros(n, T, self.cfg.vocab_size, dtype=torch.float64)
        for i in range(n):
            out[i, -1] = torch.as_tensor(self.fn(src, tuple(int(x) for x in tgt_in[i, 1:])), dtype=torch.float64)
        return out


def random_table(V, seed, scale=3.0):
    def fn(src, prefix):
        return np.random.default_rng([seed, len(src), *src, 99, *prefix]).normal(0, scale, V)
    return TableModel(V, fn)


def peaked(sequence, V=8):
    def fn(src, prefix):
        nxt = sequence[len(prefix)] if len(prefix) < len(sequence) else EOS_ID
        z = np.zeros(V)
        z[nxt] = 10.0
        return z
    return TableModel(V, fn)


def test_peaked_sequence_found():
    m = peaked([5, 6, 7])
    for cfg in (BeamConfig(1), BeamConfig(5)):
        h = decode(m, [4], cfg)
        assert h.tokens == (5, 6, 7, EOS_ID)
        assert all(p > 0.99 for p in h.positional_scores)
    assert greedy_decode(m, [4]).tokens == (5, 6, 7, EOS_ID)


def test_two_token_exhaustive_by_hand():
    table = {(): {EOS_ID: 0.4, 4: 0.6}, (4,): {EOS_ID: 0.9, 4: 0.1}}

    def fn(src, prefix):
        z = np.full(5, -np.inf)
        for t, p in table.get(prefix, {EOS_ID: 1.0}).items():
            z[t] = math.log(p)
        return z

    m = TableModel(5, fn)
    best = exhaustive_search(m, [4], max_len=2)
    # [eos]: log .4 = -0.916; [4, eos]: (log .6 + log .9) / 2 = -0.308
    assert best.tokens == (4, EOS_ID)
    assert best.normalized_score == pytest.approx((math.log(0.6) + math.log(0.9)) / 2, abs=1e-12)


def test_scores_consistent_and_sorted():
    m = random_table(9, 3)
    hyps = beam_search(m, [4, 5], BeamConfig(4, max_len=6))
    norms = [h.normalized_score for h in hyps]
    assert norms == sorted(norms, reverse=True)
    for h in hyps:
        assert len(h.positional_scores) == len(h.tokens)
        assert all(0 < p <= 1 for p in h.positional_scores)
        assert abs(math.exp(sum(math.log(p) for p in h.positional_scores)) - math.exp(h.log_score)) < 1e-9
        assert h.normalized_score == pytest.approx(normalize(h.log_score, len(h.tokens), 1.0))
        assert 0 not in h.tokens and 1 not in h.tokens


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(2, 6), min_size=1, max_size=4))
def test_greedy_equals_beam_one(seed, src):
    m = random_table(7, seed)
    g = greedy_decode(m, src, max_len=6)
    b = beam_search(m, src, BeamConfig(1, max_len=6))[0]
    assert g.tokens == b.tokens and g.log_score == b.log_score


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.0, 2.0))
def test_oracle_dominance(seed, beam, lenpen):
    m = random_table(5, seed, scale=1.0)
    best = exhaustive_search(m, [3], max_len=4, lenpen=lenpen)
    hyps = beam_search(m, [3], BeamConfig(beam, max_len=4, lenpen=lenpen))
    finished = [h for h in hyps if h.finished]
    if finished:
        assert best.normalized_score >= finished[0].normalized_score - 1e-12
    sat = beam_search(m, [3], BeamConfig(5 ** 4, max_len=4, lenpen=lenpen))[0]
    assert sat.tokens == best.tokens
    assert abs(sat.normalized_score - best.normalized_score) < 1e-9


def test_determinism():
    m = random_table(9, 11)
    a = beam_search(m, [4, 5, 6], BeamConfig(3, max_len=7))
    b = beam_search(m, [4, 5, 6], BeamConfig(3, max_len=7))
    assert a == b


def test_exhaustive_guard():
    with pytest.raises(ValueError, match="exceeds"):
        exhaustive_search(random_table(50, 0), [4], max_len=6)


def test_collect_positional_scores_length():
    m = peaked([5, 6])
    scores = collect_positional_scores(m, [[4]], BeamConfig(1))
    assert len(scores) == 3
    assert all(0 < p <= 1 for p in scores)


def test_unfinished_when_max_len_hit():
    m = peaked([5, 6, 7, 5, 6, 7])
    h = decode(m, [4], BeamConfig(1, max_len=3))
    assert not h.finished and len(h.tokens) == 3


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(0)
    with pytest.raises(ValueError):
        BeamConfig(2, max_len=0)
    with pytest.raises(ValueError):
        BeamConfig(2, lenpen=-1)
