"""Parallel corpora, frequency statistics and the synthetic Zipf task."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

Sentence = tuple[str, ...]

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class CorpusError(ValueError):
    """Structurally invalid corpus input."""


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: tuple[tuple[Sentence, Sentence], ...]
    name: str = "corpus"

    def __post_init__(self):
        pairs = tuple((tuple(s), tuple(t)) for s, t in self.pairs)
        for i, (s, t) in enumerate(pairs):
            if any(tok == "" for tok in s) or any(tok == "" for tok in t):
                raise CorpusError(f"{self.name}: empty token in pair {i}")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sources(self) -> list[Sentence]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[Sentence]:
        return [t for _, t in self.pairs]

    def side(self, side: str) -> list[Sentence]:
        if side == "source":
            return self.sources
        if side == "target":
            return self.targets
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")

    def subset(self, indices: Iterable[int], name: str | None = None) -> ParallelCorpus:
        return ParallelCorpus(tuple(self.pairs[i] for i in indices), name or self.name)

    def map(self, fn, name: str | None = None) -> ParallelCorpus:
        """Apply ``fn`` to every source and target sentence."""
        return ParallelCorpus(tuple((tuple(fn(s)), tuple(fn(t))) for s, t in self.pairs), name or self.name)


def _read_lines(path: Path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e


def load_parallel(source_path, target_path, name: str | None = None) -> ParallelCorpus:
    src_lines = _read_lines(Path(source_path))
    tgt_lines = _read_lines(Path(target_path))
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line count mismatch {len(src_lines)} vs {len(tgt_lines)} "
            f"({source_path} vs {target_path})"
        )
    pairs = tuple((tuple(s.split()), tuple(t.split())) for s, t in zip(src_lines, tgt_lines))
    return ParallelCorpus(pairs, name or Path(source_path).stem)


def write_sentences(sentences: Iterable[Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in sentences:
            f.write(" ".join(s) + "\n")


def save_parallel(corpus: ParallelCorpus, source_path, target_path) -> None:
    write_sentences(corpus.sources, source_path)
    write_sentences(corpus.targets, target_path)


class FrequencyTable(Mapping[str, int]):
    """Token type -> training-corpus count. Unseen tokens count as 0."""

    def __init__(self, counts: Mapping[str, int] | None = None):
        self._counts = Counter(counts or {})

    def __getitem__(self, token: str) -> int:
        return self._counts.get(token, 0)

    def __iter__(self):
        return iter(self._counts)

    def __len__(self) -> int:
        return len(self._counts)

    def __contains__(self, token) -> bool:
        return token in self._counts

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    def most_common(self) -> list[tuple[str, int]]:
        # descending count, ties alphabetical, so files are reproducible
        return sorted(self._counts.items(), key=lambda kv: (-kv[1], kv[0]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok, c in self.most_common():
                f.write(f"{tok}\t{c}\n")

    @classmethod
    def load(cls, path) -> FrequencyTable:
        counts = {}
        for lineno, line in enumerate(_read_lines(Path(path)), 1):
            if not line:
                continue
            tok, sep, c = line.rpartition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected 'token<TAB>count'")
            counts[tok] = int(c)
        return cls(counts)


def build_frequency_table(corpus: ParallelCorpus, side: str = "target") -> FrequencyTable:
    counts: Counter[str] = Counter()
    for sent in corpus.side(side):
        counts.update(sent)
    return FrequencyTable(counts)


def frequency_score(sentence: Sequence[str], table: Mapping[str, int]) -> float:
    """Average training frequency of the tokens in ``sentence``."""
    if len(sentence) == 0:
        raise ValueError("frequency score of an empty sentence is undefined")
    return sum(table.get(tok, 0) for tok in sentence) / len(sentence)


def split_by_frequency_score(
    corpus: ParallelCorpus, table: Mapping[str, int], k: int = 3, tokenize=None
) -> list[ParallelCorpus]:
    """Sort by descending source Frequency-Score and cut into ``k`` near-equal parts.

    Ties keep original sentence order. The first ``len % k`` parts get one
    extra sentence. ``tokenize`` maps a source sentence to the units the
    table counts (e.g. BPE pieces); identity by default.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(corpus):
        raise ValueError(f"cannot split {len(corpus)} sentences into {k} parts")
    tok = tokenize or (lambda s: s)
    scores = [frequency_score(tok(s), table) for s in corpus.sources]
    order = sorted(range(len(corpus)), key=lambda i: (-scores[i], i))
    base, extra = divmod(len(corpus), k)
    parts, start = [], 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        parts.append(corpus.subset(order[start:start + size], name=f"{corpus.name}.split{j + 1}"))
        start += size
    return parts


# ---------------------------------------------------------------------------
# Synthetic Zipf translation task
# ---------------------------------------------------------------------------

_VOWELS = "aeiou"
_SOURCE_CONSONANTS = "bdgkm"
_TARGET_CONSONANTS = "prstv"


def _syllable_word(index: int, consonants: str, n_syllables: int) -> str:
    syllables = [c + v for c in consonants for v in _VOWELS]
    out = []
    for _ in range(n_syllables):
        index, r = divmod(index, len(syllables))
        out.append(syllables[r])
    return "".join(reversed(out))


def zipf_probabilities(vocab_size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    w = ranks ** -exponent
    return w / w.sum()


@dataclass(frozen=True)
class ZipfTask:
    """Word inventories and the bijective source->target word mapping."""

    source_words: tuple[str, ...]
    target_words: tuple[str, ...]
    mapping: tuple[int, ...] = field(repr=False)

    def translate(self, sentence: Sequence[str]) -> Sentence:
        index = {w: i for i, w in enumerate(self.source_words)}
        return tuple(self.target_words[self.mapping[index[w]]] for w in sentence)


def zipf_inventory(vocab_size: int, seed: int) -> ZipfTask:
    n_syll = max(1, math.ceil(math.log(vocab_size, 25))) if vocab_size > 1 else 1
    src = tuple(_syllable_word(i, _SOURCE_CONSONANTS, n_syll) for i in range(vocab_size))
    tgt = tuple(_syllable_word(i, _TARGET_CONSONANTS, n_syll) for i in range(vocab_size))
    perm = np.random.default_rng([seed, 1]).permutation(vocab_size)
    return ZipfTask(src, tgt, tuple(int(j) for j in perm))


def generate_zipf_task(
    vocab_size: int,
    num_pairs: int,
    zipf_exponent: float = 1.0,
    max_len: int = 10,
    seed: int = 0,
    min_len: int = 1,
) -> ParallelCorpus:
    """Sample a parallel corpus whose source tokens follow Zipf's law.

    Source word of rank ``r`` (1-based) has probability proportional to
    ``r ** -zipf_exponent``; sentence lengths are uniform on
    ``[min_len, max_len]``. The target sentence is the source with every
    word replaced through a fixed random bijection onto the target
    inventory, so the "translation" is learnable word by word.
    """
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    if zipf_exponent <= 0:
        raise ValueError("zipf_exponent must be > 0")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    task = zipf_inventory(vocab_size, seed)
    rng = np.random.default_rng([seed, 0])
    probs = zipf_probabilities(vocab_size, zipf_exponent)
    lengths = rng.integers(min_len, max_len + 1, size=num_pairs)
    draws = rng.choice(vocab_size, size=int(lengths.sum()), p=probs)
    pairs, pos = [], 0
    for n in lengths:
        ids = draws[pos:pos + n]
        pos += n
        src = tuple(task.source_words[i] for i in ids)
        tgt = tuple(task.target_words[task.mapping[i]] for i in ids)
        pairs.append((src, tgt))
    return ParallelCorpus(tuple(pairs), name=f"zipf{vocab_size}-s{zipf_exponent:g}")


def rank_frequency_slope(counts: Iterable[int]) -> float:
    """Least-squares slope of log(count) against log(rank) over non-zero counts."""
    c = np.sort(np.asarray([x for x in counts if x > 0], dtype=np.float64))[::-1]
    if c.size < 2:
        raise ValueError("need at least two non-zero counts")
    ranks = np.arange(1, c.size + 1, dtype=np.float64)
    slope, _ = np.polyfit(np.log(ranks), np.log(c), 1)
    return float(slope)
