from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from longtail.bpe import learn_bpe
from longtail.corpus import ParallelCorpus, build_frequency_table, split_by_frequency_score
from longtail.decode import BeamConfig, Translator
from longtail.metrics import (
    bleu_stats,
    bucket_index,
    corpus_bleu,
    evaluate_splits,
    histogram,
    kde_pdf,
    mean_entropy,
    norm_frequency_correlation,
    predictive_entropies,
    scott_bandwidth,
    spearman,
    token_accuracy,
    token_fmeasure_buckets,
)
from longtail.model import ModelConfig, init_params
from test_decode import TableModel


def test_bleu_examples():
    refs = ["the cat is on the mat", "there is a cat"]
    assert corpus_bleu(refs, refs) == 100.0
    assert corpus_bleu(["a b c d"], ["w x y z"]) == 0.0
    s = bleu_stats(["the the the the the the the"], ["the cat is on the mat"])
    assert s.precisions[0] == pytest.approx(2 / 7)
    assert s.precisions[1:] == (0.0, 0.0, 0.0)
    assert s.score == 0.0


def test_bleu_brevity_penalty():
    s = bleu_stats(["a b c d"], ["a b c d e f"])
    assert s.brevity_penalty == pytest.approx(math.exp(1 - 6 / 4))
    assert s.score == pytest.approx(100 * math.exp(1 - 6 / 4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from("abcd"), max_size=8),
                          st.lists(st.sampled_from("abcd"), min_size=1, max_size=8)), min_size=1, max_size=5))
def test_bleu_bounds(pairs):
    hyps, refs = zip(*pairs)
    b = corpus_bleu(list(hyps), list(refs))
    assert 0.0 <= b <= 100.0
    if b == 100.0:
        assert sum(map(len, hyps)) >= sum(map(len, refs))


def test_bleu_count_mismatch():
    with pytest.raises(ValueError):
        corpus_bleu(["a"], ["a", "b"])


def test_fmeasure_identity_and_disjoint():
    table = {"a": 1, "b": 50, "c": 2000}
    refs = [["a", "b", "c"], ["c", "c"]]
    rep = token_fmeasure_buckets(refs, refs, table)
    assert all(b.f_measure == 1.0 for b in rep.non_empty())
    rep = token_fmeasure_buckets([["x", "y"], ["z"]], refs, table)
    assert all(b.f_measure == 0.0 for b in rep.buckets)


def test_fmeasure_hand_counted():
    table = {"a": 5, "b": 1, "c": 50}
    rep = token_fmeasure_buckets(["a a b d", "c c a"], ["a b b", "c a e"], table)
    got = {b.label(): (b.matched, b.system, b.reference) for b in rep.non_empty()}
    assert got == {"[0,1)": (0, 1, 1), "[1,2)": (1, 1, 2), "[5,10)": (2, 3, 2), "[10,100)": (1, 2, 1)}
    by = {b.label(): b for b in rep.buckets}
    assert by["[1,2)"].precision == 1.0 and by["[1,2)"].recall == 0.5
    assert by["[5,10)"].f_measure == pytest.approx(0.8)
    for b in rep.buckets:
        assert b.matched <= min(b.system, b.reference)


def test_fmeasure_word_granularity_merges_pieces():
    table = {"low": 3}
    rep = token_fmeasure_buckets([["lo@@", "w"]], [["low"]], table, granularity="word")
    assert {b.label(): b.f_measure for b in rep.non_empty()} == {"[3,4)": 1.0}
    rep = token_fmeasure_buckets([["lo@@", "w"]], [["low"]], table, granularity="bpe")
    assert all(b.f_measure == 0.0 for b in rep.buckets)


def test_bucket_index():
    edges = [1, 2, 3, 4, 5, 10, 100, 1000, math.inf]
    assert bucket_index(0, edges) == 0
    assert bucket_index(1, edges) == 1
    assert bucket_index(9, edges) == 5
    assert bucket_index(10, edges) == 6
    assert bucket_index(10 ** 9, edges) == 8


def _brute_average_ranks(v):
    v = list(v)
    return [sum(1 for u in v if u < x) + (sum(1 for u in v if u == x) + 1) / 2 for x in v]


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [2, 4, 8, 16]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    rx, ry = _brute_average_ranks([1, 2, 2, 4]), _brute_average_ranks([10, 20, 30, 40])
    assert rx == [1.0, 2.5, 2.5, 4.0]
    mx, my = sum(rx) / 4, sum(ry) / 4
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    oracle = cov / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    assert spearman([1, 2, 2, 4], [10, 20, 30, 40]) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.9486833, abs=1e-7)
    with pytest.raises(ValueError):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30))
def test_spearman_monotone_invariance(pairs):
    x, y = map(np.array, zip(*pairs))
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    base = spearman(x, y)
    assert spearman(np.exp(x / 10.0), y) == pytest.approx(base, abs=1e-12)
    assert spearman(x, 3 * y + 7) == pytest.approx(base, abs=1e-12)


def test_histogram_examples():
    h = histogram([0.5] * 20, bins=10)
    assert h.counts.tolist() == [0] * 5 + [20] + [0] * 4
    assert h.bandwidth is None
    h = histogram([0.0, 1.0, 1.0], bins=4)
    assert h.counts.tolist() == [1, 0, 0, 2]
    with pytest.raises(ValueError):
        histogram([1.2])


def test_histogram_uniform():
    h = histogram(np.random.default_rng(0).random(10_000), bins=10)
    assert abs(h.integral() - 1) < 1e-6
    assert np.all(np.abs(h.densities - 1) < 0.15)


def test_kde_symmetry_and_sign():
    v = np.array([0.1, 0.3, 0.45, 0.55, 0.7, 0.9])
    x = np.linspace(0, 1, 21)
    pdf = kde_pdf(v, x)
    assert np.all(pdf >= 0)
    assert np.max(np.abs(pdf - pdf[::-1])) < 1e-6


def test_kde_convolution_oracle():
    n = 1000
    samples = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    h = scott_bandwidth(samples)
    pts = np.array([-1.5, -0.5, 0.0, 0.5, 1.5])
    # standard normal convolved with an N(0, h^2) kernel
    oracle = norm.pdf(pts, scale=math.sqrt(1 + h * h))
    assert np.max(np.abs(kde_pdf(samples, pts) / oracle - 1)) < 0.05


def test_scott_bandwidth_value():
    v = np.array([0.0, 1.0, 2.0, 3.0])
    assert scott_bandwidth(v) == pytest.approx(np.std(v, ddof=1) * 4 ** -0.2)


def test_entropy_uniform_and_peaked():
    m = init_params(ModelConfig(100, d_model=16, d_ffn=32), seed=0)
    m.output_override = torch.zeros(100, 16, dtype=torch.float64)
    pairs = [([5, 6], [7, 8, 9])]
    assert mean_entropy(m, pairs) == pytest.approx(math.log(100), abs=0.05)
    peaked = torch.zeros(100, 16, dtype=torch.float64)
    peaked[2] = 1e4
    m.output_override = peaked
    m.decoder_ln.bias.data.fill_(1.0)
    m.decoder_ln.weight.data.zero_()
    assert mean_entropy(m, pairs) < 1e-6


def test_entropy_direct_sum():
    m = init_params(ModelConfig(20, d_model=8, d_ffn=16), seed=3, dtype=torch.float64).eval()
    pairs = [([5, 6, 7], [8, 9, 10, 11]), ([12, 13], [14, 15, 16, 17, 18])]
    ent = predictive_entropies(m, pairs)
    assert ent.size == 5 + 6
    oracle = []
    for s, t in pairs:
        src = torch.tensor([s + [2]])
        tin = torch.tensor([[1] + t])
        p = torch.softmax(m(src, tin).detach().double()[0], -1).numpy()
        oracle.extend(float(-np.sum(row * np.log(row))) for row in p)
    assert np.allclose(np.sort(ent), np.sort(oracle), atol=1e-9, rtol=0)


def test_token_accuracy():
    assert token_accuracy([["a", "b"], ["c"]], [["a", "x"], ["c", "d"]]) == 0.5


def _copy_translator(corpus):
    codec = learn_bpe(corpus, 500)
    vocab = codec.vocab

    def fn(src, prefix):
        z = np.zeros(vocab.size)
        z[src[len(prefix)] if len(prefix) < len(src) else 2] = 10.0
        return z

    return Translator(TableModel(vocab.size, fn), vocab, codec)


def test_evaluate_splits():
    words = "aa bb cc dd ee ff".split()
    rng = np.random.default_rng(0)
    pairs = []
    for i in range(12):
        s = tuple(rng.choice(words, size=3))
        t = s if i % 3 else s[:2] + ("zz",)
        pairs.append((s, t))
    corpus = ParallelCorpus(tuple(pairs))
    tr = _copy_translator(corpus)
    table = build_frequency_table(corpus, "source")
    (whole,) = split_by_frequency_score(corpus, table, 1)
    ev = evaluate_splits(tr, [whole], BeamConfig(2), table)
    outputs, _, _ = tr.translate_corpus(corpus, BeamConfig(2))
    assert ev.rows[0].bleu == pytest.approx(corpus_bleu(outputs, corpus.targets))
    parts = split_by_frequency_score(corpus, table, 3)
    ev = evaluate_splits(tr, parts, BeamConfig(2), table)
    assert ev.sizes == [4, 4, 4]
    fs = [r.mean_fs for r in ev.rows]
    assert fs == sorted(fs, reverse=True)


def test_norm_frequency_correlation_excludes_specials_and_unseen():
    from longtail.corpus import SPECIALS
    from longtail.vocab import Vocabulary
    vocab = Vocabulary(SPECIALS + ("a", "b", "c", "d"))
    m = init_params(ModelConfig(8, d_model=4, d_ffn=8, heads=1), seed=0)
    with torch.no_grad():
        for i, scale in zip(range(4, 8), (4.0, 3.0, 2.0, 1.0)):
            m.embed[i] = m.embed[i] / m.embed[i].norm() * scale
    nf = norm_frequency_correlation(m, vocab, {"a": 100, "b": 50, "c": 10, "d": 0})
    assert nf.tokens == ["a", "b", "c"]
    assert nf.spearman == pytest.approx(1.0)
