"""Evaluation and analysis metrics.

Corpus BLEU (multi-bleu style, no smoothing), frequency-bucketed token
F-measure, Spearman rank correlation, positional-score histograms with a
Gaussian KDE, Frequency-Score split evaluation and predictive entropy.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .bpe import merge_bpe
from .corpus import PAD_ID, SPECIALS, ParallelCorpus, frequency_score
from .model import Seq2SeqTransformer, embedding_norms
from .training import collate, make_batches

DEFAULT_BUCKET_EDGES = (1, 2, 3, 4, 5, 10, 100, 1000, math.inf)


def _tokens(s) -> list[str]:
    return s.split() if isinstance(s, str) else list(s)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def bleu_stats(hypotheses, references, max_order: int = 4) -> BleuResult:
    if len(hypotheses) != len(references):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}")
    matches = [0] * max_order
    totals = [0] * max_order
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        h, rf = _tokens(hyp), _tokens(ref)
        c += len(h)
        r += len(rf)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(rf, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if c == 0:
        return BleuResult(0.0, precisions, 0.0, c, r)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    if min(precisions) == 0:
        return BleuResult(0.0, precisions, bp, c, r)
    score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuResult(min(score, 100.0), precisions, bp, c, r)


def corpus_bleu(hypotheses, references) -> float:
    """Corpus BLEU x100; sentences are token lists or whitespace-tokenized strings."""
    return bleu_stats(hypotheses, references).score


# ---------------------------------------------------------------------------
# Frequency-bucketed F-measure
# ---------------------------------------------------------------------------


@dataclass
class BucketStats:
    low: float
    high: float
    matched: int = 0
    system: int = 0
    reference: int = 0

    @property
    def precision(self) -> float:
        return self.matched / self.system if self.system else 0.0

    @property
    def recall(self) -> float:
        return self.matched / self.reference if self.reference else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def empty(self) -> bool:
        return self.system == 0 and self.reference == 0

    def label(self) -> str:
        hi = "inf" if math.isinf(self.high) else f"{self.high:g}"
        return f"[{self.low:g},{hi})"


@dataclass
class BucketReport:
    buckets: list[BucketStats]
    granularity: str = "word"

    @property
    def edges(self) -> list[float]:
        return [b.low for b in self.buckets] + [self.buckets[-1].high]

    def non_empty(self) -> list[BucketStats]:
        return [b for b in self.buckets if not b.empty]

    def rows(self) -> list[tuple]:
        return [(b.low, b.high, b.precision, b.recall, b.f_measure) for b in self.buckets]


def bucket_index(count: float, edges: Sequence[float]) -> int:
    """Bucket 0 holds unseen types (count below the first edge); bucket i is [edges[i-1], edges[i])."""
    if count < edges[0]:
        return 0
    for i in range(1, len(edges)):
        if count < edges[i]:
            return i
    return len(edges) - 1


def token_fmeasure_buckets(
    hypotheses,
    references,
    table: Mapping[str, int],
    edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
    granularity: str = "word",
) -> BucketReport:
    """Micro-averaged P/R/F of token types grouped by their training frequency.

    Per sentence, a type's matches are ``min(hyp count, ref count)``. With
    ``granularity="word"`` any ``@@`` pieces are merged back into words first.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}")
    if granularity not in ("word", "bpe"):
        raise ValueError("granularity must be 'word' or 'bpe'")
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] <= 0:
        raise ValueError("bucket edges must be positive and strictly ascending")
    buckets = [BucketStats(0, edges[0])] + [BucketStats(a, b) for a, b in zip(edges, edges[1:])]
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        if granularity == "word":
            h, r = merge_bpe(h), merge_bpe(r)
        hc, rc = Counter(h), Counter(r)
        for t in hc.keys() | rc.keys():
            b = buckets[bucket_index(table.get(t, 0), edges)]
            b.matched += min(hc[t], rc[t])
            b.system += hc[t]
            b.reference += rc[t]
    return BucketReport(buckets, granularity)


# ---------------------------------------------------------------------------
# Rank correlation
# ---------------------------------------------------------------------------


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-D vectors of equal length")
    if x.size < 2:
        raise ValueError("spearman needs at least 2 observations")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        raise ValueError("correlation undefined for a constant vector")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Histograms and KDE
# ---------------------------------------------------------------------------


def scott_bandwidth(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("KDE needs at least 2 values")
    sd = float(v.std(ddof=1))
    if sd == 0:
        raise ValueError("zero variance: KDE undefined, use histogram() instead")
    return sd * v.size ** (-1 / 5)


@dataclass
class HistogramSpec:
    bins: int
    edges: np.ndarray
    counts: np.ndarray
    densities: np.ndarray
    bandwidth: float | None = None
    value_range: tuple[float, float] = (0.0, 1.0)

    @property
    def width(self) -> float:
        return (self.value_range[1] - self.value_range[0]) / self.bins

    def integral(self) -> float:
        return float(np.sum(self.densities) * self.width)


def histogram(values, bins: int = 50) -> HistogramSpec:
    """Equal-width density histogram over [0, 1]; the last bin is closed on the right."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("histogram of no values")
    if np.any(~((v >= 0) & (v <= 1))):
        raise ValueError("histogram values must lie in [0, 1]")
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    dens = counts / (v.size * (1.0 / bins))
    try:
        bw = scott_bandwidth(v)
    except ValueError:
        bw = None
    return HistogramSpec(bins, np.linspace(0.0, 1.0, bins + 1), counts, dens, bw)


def kde_pdf(values, points, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density estimate at ``points`` (Scott's rule by default)."""
    v = np.asarray(values, dtype=np.float64)
    h = scott_bandwidth(v) if bandwidth is None else float(bandwidth)
    x = np.atleast_1d(np.asarray(points, dtype=np.float64))
    out = np.empty_like(x)
    norm = 1.0 / (v.size * h * math.sqrt(2 * math.pi))
    for start in range(0, x.size, 256):
        u = (x[start:start + 256, None] - v[None, :]) / h
        out[start:start + 256] = np.exp(-0.5 * u * u).sum(axis=1) * norm
    return out


# ---------------------------------------------------------------------------
# Model-dependent evaluations
# ---------------------------------------------------------------------------


@dataclass
class SplitRow:
    index: int
    size: int
    mean_fs: float
    bleu: float


@dataclass
class SplitEvaluation:
    rows: list[SplitRow] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [r.size for r in self.rows]


def evaluate_splits(translator, splits: Sequence[ParallelCorpus], cfg, table: Mapping[str, int],
                    tokenize=None) -> SplitEvaluation:
    """Decode every split, score BLEU per split, and report it with the split's mean source F_S.

    Rows keep the order of ``splits`` (descending mean F_S when the splits
    come from ``split_by_frequency_score``).
    """
    rows = []
    for i, split in enumerate(splits):
        outputs, _, _ = translator.translate_corpus(split, cfg)
        tok = tokenize or (lambda s: s)
        fs = [frequency_score(tok(s), table) for s in split.sources if s]
        rows.append(SplitRow(i + 1, len(split), float(np.mean(fs)) if fs else 0.0,
                             corpus_bleu(outputs, split.targets)))
    return SplitEvaluation(rows)


@dataclass
class NormFrequency:
    tokens: list[str]
    frequencies: np.ndarray
    norms: np.ndarray
    spearman: float

    def rows(self):
        return list(zip(self.tokens, self.frequencies.tolist(), self.norms.tolist()))


def norm_frequency_correlation(model: Seq2SeqTransformer, vocab, table: Mapping[str, int]) -> NormFrequency:
    """Spearman between embedding row norms and training counts.

    Only non-special tokens seen in training take part; ``table`` should
    count the units the vocabulary holds (BPE pieces, both sides).
    """
    norms = embedding_norms(model)
    ids = [i for i, t in enumerate(vocab.tokens) if i >= len(SPECIALS) and table.get(t, 0) > 0]
    toks = [vocab.tokens[i] for i in ids]
    freq = np.array([table[t] for t in toks], dtype=np.float64)
    nv = norms[ids]
    return NormFrequency(toks, freq, nv, spearman(freq, nv))


@torch.no_grad()
def predictive_entropies(model: Seq2SeqTransformer, pairs) -> np.ndarray:
    """Entropy (nats) of the next-token distribution at every teacher-forced target position."""
    model.eval()
    out = []
    for idx in make_batches(pairs, 2048, np.random.default_rng(0)):
        b = collate([pairs[i] for i in idx])
        logp = torch.log_softmax(model(b.src, b.tgt_in).double(), dim=-1)
        ent = -(logp.exp() * logp).nan_to_num(0.0).sum(-1)
        out.append(ent[b.tgt_out != PAD_ID].numpy())
    return np.concatenate(out) if out else np.zeros(0)


def mean_entropy(model: Seq2SeqTransformer, pairs) -> float:
    ent = predictive_entropies(model, pairs)
    return float(ent.mean()) if ent.size else 0.0


def token_accuracy(hypotheses, references) -> float:
    """Fraction of reference positions reproduced at the same position."""
    hit = total = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        total += len(r)
        hit += sum(a == b for a, b in zip(h, r))
    return hit / total if total else 0.0
