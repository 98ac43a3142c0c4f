from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import EOS_ID, SPECIALS, UNK_ID, CorpusError


@dataclass(frozen=True)
class Vocabulary:
    """Bijection token <-> id. Special tokens always occupy ids 0..3."""

    tokens: tuple[str, ...]
    counts: tuple[int, ...] = ()
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise CorpusError(f"vocabulary must start with {SPECIALS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        if not self.counts:
            object.__setattr__(self, "counts", (0,) * len(self.tokens))
        elif len(self.counts) != len(self.tokens):
            raise CorpusError("counts and tokens differ in length")
        object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> Vocabulary:
        items = sorted(
            ((t, c) for t, c in counts.items() if t not in SPECIALS),
            key=lambda kv: (-kv[1], kv[0]),
        )
        return cls(SPECIALS + tuple(t for t, _ in items), (0,) * 4 + tuple(c for _, c in items))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def token_of(self, index: int) -> str:
        return self.tokens[index]

    def encode(self, tokens: Iterable[str], add_eos: bool = False) -> list[int]:
        ids = [self.id_of.get(t, UNK_ID) for t in tokens]
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: Sequence[int], strip_specials: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_specials and i < 4 and i != UNK_ID:
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        """One ``token<TAB>count`` line per non-special token, descending count."""
        rows = sorted(zip(self.tokens[4:], self.counts[4:]), key=lambda kv: (-kv[1], kv[0]))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok, c in rows:
                f.write(f"{tok}\t{c}\n")

    @classmethod
    def load(cls, path) -> Vocabulary:
        counts = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            tok, sep, c = line.rpartition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected 'token<TAB>count'")
            counts[tok] = int(c)
        return cls.from_counts(counts)
