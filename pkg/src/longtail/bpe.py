"""Byte-pair encoding: learn merges on a joint corpus, segment, and undo.

Words are split into characters followed by a separate end-of-word symbol
``</w>`` while learning. Applied output uses the ``@@`` continuation
convention: every piece except the last piece of a word carries a trailing
``@@``.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import UNK, CorpusError, ParallelCorpus
from .vocab import Vocabulary

END_OF_WORD = "</w>"
CONTINUATION = "@@"
CODEC_HEADER = "bpe-v1"

Pair = tuple[str, str]


def _pair_counts(word: tuple[str, ...]) -> Counter[Pair]:
    return Counter(zip(word, word[1:]))


def _merge_word(word: tuple[str, ...], pair: Pair, merged: str) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def _learn_merges(word_counts: Counter[str], num_merges: int) -> list[Pair]:
    words = [tuple(w) + (END_OF_WORD,) for w in word_counts]
    freqs = [word_counts[w] for w in word_counts]

    stats: Counter[Pair] = Counter()
    where: defaultdict[Pair, set[int]] = defaultdict(set)
    for idx, (w, f) in enumerate(zip(words, freqs)):
        for p, c in _pair_counts(w).items():
            stats[p] += c * f
            where[p].add(idx)

    # lazy max-heap on (count desc, pair asc); stale entries skipped on pop
    heap = [(-c, p) for p, c in stats.items()]
    heapq.heapify(heap)

    merges: list[Pair] = []
    while len(merges) < num_merges and heap:
        neg, pair = heapq.heappop(heap)
        if stats.get(pair, 0) != -neg or -neg <= 0:
            continue
        merged = pair[0] + pair[1]
        merges.append(pair)
        touched: Counter[Pair] = Counter()
        for idx in sorted(where.pop(pair, ())):
            old = words[idx]
            new = _merge_word(old, pair, merged)
            if new == old:
                continue
            f = freqs[idx]
            for p, c in _pair_counts(old).items():
                stats[p] -= c * f
                touched[p] += 1
            for p, c in _pair_counts(new).items():
                stats[p] += c * f
                where[p].add(idx)
                touched[p] += 1
            words[idx] = new
        stats.pop(pair, None)
        for p in touched:
            c = stats.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                stats.pop(p, None)
    return merges


def _to_output(symbols: Sequence[str]) -> list[str]:
    """Learning-space symbols of one word -> ``@@``-marked output pieces."""
    syms = list(symbols)
    if syms[-1] == END_OF_WORD:
        syms.pop()
    else:
        syms[-1] = syms[-1][: -len(END_OF_WORD)]
    return [s + CONTINUATION for s in syms[:-1]] + [syms[-1]]


@dataclass(frozen=True)
class BpeCodec:
    merges: tuple[Pair, ...]
    vocab: Vocabulary | None = None
    alphabet: frozenset[str] | None = None
    end_of_word: str = END_OF_WORD
    ranks: dict[Pair, int] = field(init=False, repr=False, compare=False)
    parents: dict[str, Pair] = field(init=False, repr=False, compare=False)
    _cache: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "merges", tuple(tuple(m) for m in self.merges))
        object.__setattr__(self, "ranks", {m: i for i, m in enumerate(self.merges)})
        parents = {}
        for a, b in self.merges:
            parents.setdefault(a + b, (a, b))
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "_cache", {})

    @property
    def num_merges(self) -> int:
        return len(self.merges)

    def _symbols(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        syms = [c if self.alphabet is None or c in self.alphabet else UNK for c in word]
        syms.append(END_OF_WORD)
        word_syms = tuple(syms)
        while len(word_syms) > 1:
            best = min(
                (self.ranks.get(p, len(self.ranks)), p) for p in zip(word_syms, word_syms[1:])
            )
            if best[0] == len(self.ranks):
                break
            pair = best[1]
            word_syms = _merge_word(word_syms, pair, pair[0] + pair[1])
        self._cache[word] = word_syms
        return word_syms

    def _split_oov(self, symbols: tuple[str, ...]) -> tuple[str, ...]:
        """Undo merges whose output piece is missing from the vocabulary."""
        if self.vocab is None:
            return symbols
        out: list[str] = []
        for k, s in enumerate(symbols):
            is_last = k == len(symbols) - 1 or (k == len(symbols) - 2 and symbols[-1] == END_OF_WORD)
            out.extend(self._split_symbol(s, is_last))
        return tuple(out)

    def _split_symbol(self, s: str, is_last: bool) -> list[str]:
        if s == END_OF_WORD:
            return [s]
        piece = s[: -len(END_OF_WORD)] if s.endswith(END_OF_WORD) else s
        if not is_last:
            piece += CONTINUATION
        if piece in self.vocab or s not in self.parents:
            return [s]
        a, b = self.parents[s]
        if b == END_OF_WORD:
            return self._split_symbol(a, True) + [b]
        return self._split_symbol(a, False) + self._split_symbol(b, is_last)

    def segment_word(self, word: str) -> list[str]:
        return _to_output(self._split_oov(self._symbols(word)))


def learn_bpe(corpus: ParallelCorpus, num_merges: int) -> BpeCodec:
    """Learn up to ``num_merges`` merges jointly over both sides of ``corpus``.

    Equal pair counts are broken by the lexicographic order of the pair.
    The returned codec carries a vocabulary of every piece produced on the
    training corpus plus every alphabet character in both its word-final
    and ``@@`` form, so any word over the training alphabet stays encodable.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_counts: Counter[str] = Counter()
    for src, tgt in corpus:
        word_counts.update(src)
        word_counts.update(tgt)
    if not word_counts:
        raise CorpusError("cannot learn BPE on an empty corpus")
    merges = _learn_merges(word_counts, num_merges)
    alphabet = frozenset(c for w in word_counts for c in w)
    codec = BpeCodec(tuple(merges), None, alphabet)
    return BpeCodec(codec.merges, build_vocabulary(codec, word_counts), alphabet)


def build_vocabulary(codec: BpeCodec, word_counts: Counter[str]) -> Vocabulary:
    counts: Counter[str] = Counter()
    for c in sorted(codec.alphabet or ()):
        counts[c] += 0
        counts[c + CONTINUATION] += 0
    for w, f in word_counts.items():
        for piece in codec.segment_word(w):
            counts[piece] += f
    return Vocabulary.from_counts(counts)


def apply_bpe(codec: BpeCodec, sentence: Sequence[str]) -> list[str]:
    out: list[str] = []
    for word in sentence:
        out.extend(codec.segment_word(word))
    return out


def merge_bpe_with_flag(tokens: Sequence[str]) -> tuple[list[str], bool]:
    """Join ``@@`` pieces into words; the flag is True for a dangling continuation."""
    words, buf = [], ""
    for tok in tokens:
        if tok.endswith(CONTINUATION):
            buf += tok[: -len(CONTINUATION)]
        else:
            words.append(buf + tok)
            buf = ""
    if buf:
        words.append(buf)
        return words, True
    return words, False


def merge_bpe(tokens: Sequence[str]) -> list[str]:
    return merge_bpe_with_flag(tokens)[0]


def save_codec(codec: BpeCodec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{CODEC_HEADER} {codec.num_merges}\n")
        for a, b in codec.merges:
            f.write(f"{a} {b}\n")


def load_codec(path, vocab: Vocabulary | None = None) -> BpeCodec:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty codec file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CODEC_HEADER:
        raise CorpusError(f"{path}: bad header {lines[0]!r}, expected '{CODEC_HEADER} <num_merges>'")
    n = int(head[1])
    body = [ln for ln in lines[1:] if ln]
    if len(body) != n:
        raise CorpusError(f"{path}: header declares {n} merges, found {len(body)}")
    merges = []
    for lineno, ln in enumerate(body, 2):
        parts = ln.split(" ")
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 'left right'")
        merges.append((parts[0], parts[1]))
    alphabet = None
    if vocab is not None:
        alphabet = frozenset(t for t in vocab.tokens[4:] if len(t) == 1)
    return BpeCodec(tuple(merges), vocab, alphabet)


def encode_corpus(codec: BpeCodec, corpus: ParallelCorpus) -> ParallelCorpus:
    return corpus.map(lambda s: apply_bpe(codec, s), name=f"{corpus.name}.bpe")

