"""Greedy, beam and exhaustive decoding with per-step positional scores.

All decoders share one scoring path: the full target prefix is re-run
through the decoder each step and log-probabilities are taken in float64.
Pad and bos are never generated. Length is counted in generated tokens,
eos included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .bpe import BpeCodec, apply_bpe, merge_bpe
from .corpus import BOS_ID, EOS_ID, PAD_ID, ParallelCorpus
from .model import Seq2SeqTransformer
from .vocab import Vocabulary

EXHAUSTIVE_LIMIT = 10**7


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    max_len: int = 32
    lenpen: float = 1.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.lenpen < 0:
            raise ValueError("lenpen must be >= 0")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float
    normalized_score: float
    positional_scores: tuple[float, ...]
    finished: bool


def normalize(log_score: float, length: int, lenpen: float) -> float:
    return log_score / (length ** lenpen) if length > 0 else log_score


def _rank_key(h: Hypothesis):
    return (-h.normalized_score, h.tokens)


class _Scorer:
    """Encodes one source sentence once, then scores batches of target prefixes."""

    def __init__(self, model: Seq2SeqTransformer, source: Sequence[int]):
        self.model = model
        model.eval()
        src = list(source)
        if not src or src[-1] != EOS_ID:
            src.append(EOS_ID)
        with torch.no_grad():
            self.memory, self.pad_mask = model.encode(torch.tensor([src], dtype=torch.long))
        self.vocab_size = model.cfg.vocab_size

    @torch.no_grad()
    def __call__(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """(n, V) float64 log-probs for the next token of each prefix (bos implied)."""
        n = len(prefixes)
        tgt = torch.tensor([[BOS_ID] + list(p) for p in prefixes], dtype=torch.long)
        logits = self.model.decode(tgt, self.memory.expand(n, -1, -1), self.pad_mask)[:, -1]
        lp = torch.log_softmax(logits.double(), dim=-1).numpy()
        lp[:, PAD_ID] = -np.inf
        lp[:, BOS_ID] = -np.inf
        return lp


def _hyp(tokens, logps, lenpen, finished) -> Hypothesis:
    log_score = float(math.fsum(logps))
    return Hypothesis(
        tuple(int(t) for t in tokens),
        log_score,
        normalize(log_score, len(tokens), lenpen),
        tuple(math.exp(x) for x in logps),
        finished,
    )


def greedy_decode(model: Seq2SeqTransformer, source: Sequence[int], max_len: int = 32,
                  lenpen: float = 1.0) -> Hypothesis:
    score = _Scorer(model, source)
    tokens: list[int] = []
    logps: list[float] = []
    while len(tokens) < max_len:
        lp = score([tokens])[0]
        tok = int(np.argmax(lp))  # first maximum, i.e. lowest id on ties
        tokens.append(tok)
        logps.append(float(lp[tok]))
        if tok == EOS_ID:
            return _hyp(tokens, logps, lenpen, True)
    return _hyp(tokens, logps, lenpen, False)


def beam_search(model: Seq2SeqTransformer, source: Sequence[int], cfg: BeamConfig = BeamConfig()) -> list[Hypothesis]:
    """Best-first list of hypotheses.

    Each step expands every live hypothesis over the vocabulary and keeps
    the ``beam_size`` best candidates by unnormalized log score (ties by
    token sequence). Candidates ending in eos move to the finished pool.
    Search stops once no live hypothesis can still beat the best finished
    one on normalized score, or at ``max_len``. Unfinished hypotheses are
    returned only when nothing finished.
    """
    score = _Scorer(model, source)
    live: list[tuple[tuple[int, ...], list[float], float]] = [((), [], 0.0)]
    finished: list[Hypothesis] = []
    for step in range(cfg.max_len):
        live.sort(key=lambda h: h[0])  # lexicographic rank for tie-breaking
        lp = score([h[0] for h in live])
        cand = np.array([h[2] for h in live])[:, None] + lp
        flat = cand.ravel()
        V = lp.shape[1]
        hyp_rank = np.repeat(np.arange(len(live)), V)
        tok = np.tile(np.arange(V), len(live))
        ok = np.isfinite(flat)
        order = np.lexsort((tok[ok], hyp_rank[ok], -flat[ok]))[: cfg.beam_size]
        idx = np.flatnonzero(ok)[order]
        new_live = []
        for j in idx:
            h, t = divmod(int(j), V)
            tokens, logps, s = live[h]
            tokens = tokens + (t,)
            logps = logps + [float(lp[h, t])]
            if t == EOS_ID:
                finished.append(_hyp(tokens, logps, cfg.lenpen, True))
            else:
                new_live.append((tokens, logps, float(flat[j])))
        live = new_live
        if not live:
            break
        if finished and step + 1 < cfg.max_len:
            best = max(h.normalized_score for h in finished)
            # log scores only fall, so a live prefix is best off stretched to max_len
            bound = max(normalize(s, cfg.max_len, cfg.lenpen) for _, _, s in live)
            if best >= bound:
                break
    if finished:
        return sorted(finished, key=_rank_key)
    return sorted((_hyp(t, lps, cfg.lenpen, False) for t, lps, _ in live), key=_rank_key)


def exhaustive_search(model: Seq2SeqTransformer, source: Sequence[int], max_len: int,
                      lenpen: float = 1.0) -> Hypothesis:
    """Exact argmax of normalized score over every eos-terminated sequence up to ``max_len``."""
    V = model.cfg.vocab_size
    if V ** max_len > EXHAUSTIVE_LIMIT:
        raise ValueError(f"exhaustive search space V^max_len = {V}^{max_len} = {V ** max_len:.3g} exceeds {EXHAUSTIVE_LIMIT:.0e}")
    score = _Scorer(model, source)
    best: Hypothesis | None = None
    frontier: list[tuple[tuple[int, ...], list[float]]] = [((), [])]
    for _ in range(max_len):
        if not frontier:
            break
        lp = score([p for p, _ in frontier])
        nxt = []
        for (prefix, logps), row in zip(frontier, lp):
            for t in range(V):
                if not np.isfinite(row[t]):
                    continue
                seq, seq_lp = prefix + (t,), logps + [float(row[t])]
                if t == EOS_ID:
                    h = _hyp(seq, seq_lp, lenpen, True)
                    if best is None or _rank_key(h) < _rank_key(best):
                        best = h
                else:
                    nxt.append((seq, seq_lp))
        frontier = nxt
    if best is None:
        raise ValueError("no eos-terminated sequence within max_len")
    return best


def decode(model: Seq2SeqTransformer, source: Sequence[int], cfg: BeamConfig) -> Hypothesis:
    if cfg.beam_size == 1:
        return greedy_decode(model, source, cfg.max_len, cfg.lenpen)
    return beam_search(model, source, cfg)[0]


def collect_positional_scores(model: Seq2SeqTransformer, sources: Sequence[Sequence[int]],
                              cfg: BeamConfig) -> list[float]:
    """Per-step probabilities of the top hypothesis, concatenated over all sources."""
    out: list[float] = []
    for src in sources:
        out.extend(decode(model, src, cfg).positional_scores)
    return out


@dataclass
class Translator:
    """Word-level translation through BPE, the vocabulary and a model."""

    model: Seq2SeqTransformer
    vocab: Vocabulary
    codec: BpeCodec

    def encode_source(self, words: Sequence[str]) -> list[int]:
        return self.vocab.encode(apply_bpe(self.codec, words))

    def hypothesis(self, words: Sequence[str], cfg: BeamConfig) -> Hypothesis:
        return decode(self.model, self.encode_source(words), cfg)

    def pieces(self, hyp: Hypothesis) -> list[str]:
        return self.vocab.decode([t for t in hyp.tokens if t != EOS_ID])

    def translate(self, words: Sequence[str], cfg: BeamConfig) -> list[str]:
        return merge_bpe(self.pieces(self.hypothesis(words, cfg)))

    def translate_corpus(self, corpus: ParallelCorpus, cfg: BeamConfig):
        """Returns (word-level outputs, bpe-level outputs, hypotheses), in corpus order."""
        hyps = [self.hypothesis(s, cfg) for s in corpus.sources]
        pieces = [self.pieces(h) for h in hyps]
        return [merge_bpe(p) for p in pieces], pieces, hyps
