"""Description preprocessing: normalization, Spanish stemming, vocabulary."""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._snowball_es import stem as _snowball_stem

_DROP_CATEGORIES = ("P", "S", "C")  # punctuation, symbols, control/format
_TILDE = "\u0303"  # combining tilde


def _strip_diacritics(text: str) -> str:
    # ñ survives: it is a separate letter in Spanish, not an accented n
    out = []
    prev = ""
    for ch in unicodedata.normalize("NFD", text):
        if unicodedata.combining(ch) and not (ch == _TILDE and prev == "n"):
            continue
        out.append(ch)
        prev = ch
    return unicodedata.normalize("NFC", "".join(out))


def normalize_text(raw: str, strip_accents: bool = False) -> str:
    """Lowercase, blank out punctuation/symbols, collapse whitespace.

    Digits are kept.  With ``strip_accents`` diacritics other than the tilde
    of ñ are removed as well.
    """
    text = raw.lower()
    if strip_accents:
        text = _strip_diacritics(text)
    chars = [" " if unicodedata.category(ch)[0] in _DROP_CATEGORIES else ch for ch in text]
    return " ".join("".join(chars).split())


def stem_token(token: str) -> str:
    return _snowball_stem(token)


def tokenize(raw: str, strip_accents: bool = True) -> list[str]:
    return [stem_token(t) for t in normalize_text(raw, strip_accents=strip_accents).split()]


@dataclass(frozen=True)
class TokenizedDoc:
    """A document as vocabulary indices.

    ``n_raw`` is the token count before vocabulary pruning; the minimum-token
    filter reads it.  It defaults to ``len(tokens)``.
    """

    doc_id: int
    tokens: np.ndarray
    n_raw: int = -1

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int32))
        if self.n_raw < 0:
            object.__setattr__(self, "n_raw", int(self.tokens.size))

    def __len__(self):
        return int(self.tokens.size)


class EmptyVocabularyError(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens) or len(self.tokens) != self.counts.size:
            raise ValueError("vocabulary tokens must be unique and match counts")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        """Vocabulary indices, out-of-vocabulary tokens dropped."""
        idx = self.index
        return np.array([idx[t] for t in tokens if t in idx], dtype=np.int32)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok, c in zip(self.tokens, self.counts):
                fh.write(f"{tok}\t{int(c)}\n")

    @classmethod
    def read(cls, path) -> "Vocabulary":
        toks, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, c = line.rstrip("\n").split("\t")
                toks.append(tok)
                counts.append(int(c))
        return cls(toks, np.array(counts, dtype=np.int64))


def build_vocabulary(docs: Sequence[Sequence[str]], min_count: int = 2) -> Vocabulary:
    """Tokens with frequency >= ``min_count``, indexed by descending frequency, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq = Counter()
    for doc in docs:
        freq.update(doc)
    kept = sorted((t for t, c in freq.items() if c >= min_count), key=lambda t: (-freq[t], t))
    if not kept:
        raise EmptyVocabularyError("empty vocabulary")
    return Vocabulary(kept, np.array([freq[t] for t in kept], dtype=np.int64))


def index_documents(docs: Sequence[Sequence[str]], vocab: Vocabulary) -> list[TokenizedDoc]:
    return [TokenizedDoc(i, vocab.encode(d), len(d)) for i, d in enumerate(docs)]


def filter_by_min_tokens(docs: Sequence[TokenizedDoc], min_tokens: int) -> list[TokenizedDoc]:
    if min_tokens < 0:
        raise ValueError("min_tokens must be >= 0")
    return [d for d in docs if d.n_raw >= min_tokens]


def write_token_cache(docs: Iterable[TokenizedDoc], path) -> None:
    """One line per doc: ``doc_id<TAB>space-separated indices``.

    Raw (pre-pruning) lengths are not stored; reloaded docs report ``len(tokens)``.
    """
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for d in docs:
            fh.write(f"{d.doc_id}\t{' '.join(map(str, d.tokens.tolist()))}\n")


def read_token_cache(path) -> list[TokenizedDoc]:
    out = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            toks = [int(t) for t in parts[1].split()] if len(parts) > 1 else []
            out.append(TokenizedDoc(int(parts[0]), np.array(toks, dtype=np.int32)))
    return out
