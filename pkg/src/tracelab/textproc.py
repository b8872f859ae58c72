"""Deterministic tokenization, TF-IDF weighting, and cosine similarity.

This is the vector space model that backs both the fine-grained similarity
strategy and the desk-scale embedding substitute.  Everything here is a pure
function over immutable inputs.

TF-IDF variant: raw term frequency times smoothed inverse document frequency
``ln((1 + N) / (1 + df))``.  The smoothing keeps weights finite on corpora
where a term occurs in every document.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "TokenizerConfig",
    "Vocabulary",
    "TfidfVector",
    "tokenize",
    "build_vocabulary",
    "tfidf",
    "cosine",
    "load_stopword_file",
    "english_stopwords",
    "java_keywords",
    "config_for_kind",
]

# Splits an identifier chunk into words: acronym runs, capitalized words,
# lowercase runs, and digit runs ("XMLParser" -> XML, Parser; "UC3" -> UC, 3).
_WORD_RE = re.compile(r"[A-Z]+(?![a-z])|[A-Z][a-z]*|[a-z]+|[0-9]+")
_NON_ALNUM_RE = re.compile(r"[^0-9A-Za-z]+")


@dataclass(frozen=True)
class TokenizerConfig:
    """Normalization rules applied to artifact text."""

    stopwords: frozenset[str] = frozenset()
    min_token_len: int = 2


@dataclass(frozen=True)
class Vocabulary:
    """Term universe of a corpus with exact document frequencies."""

    terms: tuple[str, ...]
    df: Mapping[str, int]
    n_docs: int
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class TfidfVector:
    """Sparse term-index -> weight mapping over one Vocabulary."""

    weights: Mapping[int, float]

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights.values()))


def load_stopword_file(path: Path) -> frozenset[str]:
    """Read a stopword file: one token per line, '#' comments allowed."""
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


def _packaged(name: str) -> frozenset[str]:
    with resources.as_file(resources.files("tracelab").joinpath("data", name)) as p:
        return load_stopword_file(p)


def english_stopwords() -> frozenset[str]:
    """The versioned English stopword list shipped with the package."""
    return _packaged("stopwords_en.txt")


def java_keywords() -> frozenset[str]:
    """Java reserved words, stopworded for code artifacts only."""
    return _packaged("java_keywords.txt")


def config_for_kind(is_code: bool) -> TokenizerConfig:
    """Tokenizer config per artifact kind: code adds Java keywords."""
    stops = english_stopwords()
    if is_code:
        stops = stops | java_keywords()
    return TokenizerConfig(stopwords=stops)


def tokenize(text: str, config: TokenizerConfig) -> tuple[str, ...]:
    """Lowercased word tokens of ``text``.

    Identifiers are split on camelCase, snake_case, and digit boundaries;
    stopwords and tokens shorter than ``min_token_len`` are dropped.  Empty
    input yields an empty sequence.
    """
    out: list[str] = []
    for chunk in _NON_ALNUM_RE.split(text):
        if not chunk:
            continue
        for word in _WORD_RE.findall(chunk):
            token = word.lower()
            if len(token) < config.min_token_len:
                continue
            if token in config.stopwords:
                continue
            out.append(token)
    return tuple(out)


def build_vocabulary(docs: Sequence[Sequence[str]]) -> Vocabulary:
    """Vocabulary over a corpus of token sequences (at least one document)."""
    if len(docs) == 0:
        raise ValueError("cannot build a vocabulary over an empty corpus")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    terms = tuple(sorted(df))
    return Vocabulary(terms=terms, df=df, n_docs=len(docs))


def tfidf(doc: Sequence[str], vocab: Vocabulary) -> TfidfVector:
    """TF-IDF vector of ``doc`` in ``vocab``; out-of-vocabulary terms dropped."""
    tf: dict[int, int] = {}
    for term in doc:
        idx = vocab.index.get(term)
        if idx is not None:
            tf[idx] = tf.get(idx, 0) + 1
    weights = {
        idx: count * math.log((1 + vocab.n_docs) / (1 + vocab.df[vocab.terms[idx]]))
        for idx, count in tf.items()
    }
    return TfidfVector(weights=weights)


def cosine(u: TfidfVector, v: TfidfVector) -> float:
    """Cosine similarity in [0, 1]; zero whenever either norm is zero."""
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        return 0.0
    small, large = (u.weights, v.weights) if len(u.weights) <= len(v.weights) else (v.weights, u.weights)
    dot = sum(w * large.get(i, 0.0) for i, w in small.items())
    return min(1.0, dot / (nu * nv))
