"""
sigpricer/services/tensor_algebra.py – truncated tensor algebra over the alphabet {1, 2}.

Letter 1 indexes the time coordinate, letter 2 the Brownian coordinate.

Key design decisions
────────────────────
• Words are packed bit-sequences plus a length (letter 1 → bit 0, letter 2 → bit 1,
  first letter most significant). Within a level the packed value is the
  lexicographic rank, so `Word.index` is the column of the word in a dense
  signature table.
• TensorPoly is a sparse, immutable word → coefficient map with a level cap.
  Exact zeros are never stored.
• Every operation truncates eagerly at its cap; there is no lazy series type.
"""
from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Union

import numpy as np

from sigpricer.errors import TensorAlgebraError

LETTERS: tuple[int, int] = (1, 2)
EMPTY_SYMBOL = "∅"


# ── Words ─────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, order=True, slots=True)
class Word:
    """A word over {1, 2}; ordering is (length, lexicographic)."""

    length: int
    bits: int

    def __post_init__(self) -> None:
        if self.length < 0:
            raise TensorAlgebraError(f"word length must be >= 0, got {self.length}")
        if not 0 <= self.bits < (1 << self.length):
            raise TensorAlgebraError(f"bits {self.bits} do not fit a word of length {self.length}")

    @classmethod
    def from_letters(cls, letters: Iterable[int]) -> Word:
        bits = 0
        length = 0
        for letter in letters:
            if letter not in LETTERS:
                raise TensorAlgebraError(f"letters must be 1 or 2, got {letter!r}")
            bits = (bits << 1) | (letter - 1)
            length += 1
        return cls(length, bits)

    @classmethod
    def parse(cls, text: str) -> Word:
        text = text.strip()
        if text in ("", EMPTY_SYMBOL):
            return EMPTY
        try:
            return cls.from_letters(int(ch) for ch in text)
        except ValueError as exc:
            raise TensorAlgebraError(f"cannot parse word {text!r}") from exc

    @property
    def letters(self) -> tuple[int, ...]:
        return tuple(((self.bits >> (self.length - 1 - k)) & 1) + 1 for k in range(self.length))

    @property
    def index(self) -> int:
        """Column of this word in the canonical dense enumeration."""
        return (1 << self.length) - 1 + self.bits

    @property
    def last(self) -> int:
        return (self.bits & 1) + 1

    @property
    def prefix(self) -> Word:
        """The word with its last letter removed."""
        if self.length == 0:
            raise TensorAlgebraError("the empty word has no prefix")
        return Word(self.length - 1, self.bits >> 1)

    def append(self, letter: int) -> Word:
        if letter not in LETTERS:
            raise TensorAlgebraError(f"letters must be 1 or 2, got {letter!r}")
        return Word(self.length + 1, (self.bits << 1) | (letter - 1))

    def concat(self, other: Word) -> Word:
        return Word(self.length + other.length, (self.bits << other.length) | other.bits)

    def __str__(self) -> str:
        if self.length == 0:
            return EMPTY_SYMBOL
        return "".join(str(letter) for letter in self.letters)


EMPTY = Word(0, 0)

WordLike = Union[Word, str]


def as_word(word: WordLike) -> Word:
    return word if isinstance(word, Word) else Word.parse(word)


def words_of_length(n: int) -> list[Word]:
    return [Word(n, bits) for bits in range(1 << n)]


def all_words(cap: int) -> list[Word]:
    """All words of length ≤ cap in canonical order (2^(cap+1) − 1 of them)."""
    return [w for n in range(cap + 1) for w in words_of_length(n)]


def dense_dimension(cap: int) -> int:
    return (1 << (cap + 1)) - 1


def word_at(index: int) -> Word:
    """Inverse of `Word.index`."""
    length = (index + 1).bit_length() - 1
    return Word(length, index - ((1 << length) - 1))


# ── Polynomials ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TensorPoly:
    """Sparse real combination of words, truncated at `level_cap`."""

    level_cap: int
    terms: Mapping[Word, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.level_cap < 0:
            raise TensorAlgebraError(f"level_cap must be >= 0, got {self.level_cap}")
        clean: dict[Word, float] = {}
        for word, coeff in sorted(self.terms.items()):
            if word.length > self.level_cap:
                raise TensorAlgebraError(
                    f"word {word} exceeds level cap {self.level_cap}"
                )
            value = float(coeff)
            if value != 0.0:
                clean[word] = value
        object.__setattr__(self, "terms", MappingProxyType(clean))

    # ── Construction ──────────────────────────────────────────────────────────

    @classmethod
    def from_terms(cls, terms: Mapping[WordLike, float], level_cap: int | None = None) -> TensorPoly:
        """Build from `{"12": 0.5, "": 1.0}`-style maps; cap defaults to the degree."""
        acc: dict[Word, float] = defaultdict(float)
        for key, coeff in terms.items():
            acc[as_word(key)] += coeff
        cap = level_cap if level_cap is not None else max((w.length for w in acc), default=0)
        return cls(cap, acc)

    @classmethod
    def zero(cls, level_cap: int = 0) -> TensorPoly:
        return cls(level_cap, {})

    @classmethod
    def unit(cls, level_cap: int = 0) -> TensorPoly:
        return cls(level_cap, {EMPTY: 1.0})

    @classmethod
    def from_dense(cls, vector: np.ndarray, level_cap: int) -> TensorPoly:
        """Inverse of `to_dense` for a vector in the canonical word enumeration."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (dense_dimension(level_cap),):
            raise TensorAlgebraError(
                f"dense vector of shape {vector.shape} does not match level {level_cap}"
            )
        return cls(level_cap, {word_at(i): c for i, c in enumerate(vector) if c != 0.0})

    # ── Access ────────────────────────────────────────────────────────────────

    def coeff(self, word: WordLike) -> float:
        return self.terms.get(as_word(word), 0.0)

    def __getitem__(self, word: WordLike) -> float:
        return self.coeff(word)

    def __iter__(self) -> Iterator[tuple[Word, float]]:
        return iter(self.terms.items())

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def words(self) -> tuple[Word, ...]:
        return tuple(self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Longest stored word; the zero polynomial has degree 0."""
        return max((w.length for w in self.terms), default=0)

    def to_dense(self, level: int | None = None) -> np.ndarray:
        """Coefficients in the canonical word enumeration up to `level`."""
        level = self.level_cap if level is None else level
        if self.degree > level:
            raise TensorAlgebraError(f"degree {self.degree} does not fit level {level}")
        out = np.zeros(dense_dimension(level))
        for word, coeff in self.terms.items():
            out[word.index] = coeff
        return out

    def render(self, precision: int = 12) -> str:
        """`0.1*∅ + 0.15*1 + 1.2*2` style text, canonical word order."""
        if not self.terms:
            return "0"
        parts: list[str] = []
        for k, (word, coeff) in enumerate(self.terms.items()):
            body = f"{abs(coeff):.{precision}g}*{word}"
            if k == 0:
                parts.append(body if coeff > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if coeff > 0 else f"- {body}")
        return " ".join(parts)

    def __str__(self) -> str:
        return self.render()

    # ── Operators ─────────────────────────────────────────────────────────────

    def __add__(self, other: TensorPoly) -> TensorPoly:
        return add(self, other)

    def __sub__(self, other: TensorPoly) -> TensorPoly:
        return add(self, scale(other, -1.0))

    def __neg__(self) -> TensorPoly:
        return scale(self, -1.0)

    def __mul__(self, c: float) -> TensorPoly:
        return scale(self, c)

    __rmul__ = __mul__


# ── Word-level shuffle ────────────────────────────────────────────────────────


@lru_cache(maxsize=None)
def shuffle_words(u: Word, v: Word) -> tuple[tuple[Word, int], ...]:
    """All interleavings of u and v with multiplicities (ua ⧢ vb) = (u ⧢ vb)a + (ua ⧢ v)b."""
    if u.length == 0:
        return ((v, 1),)
    if v.length == 0:
        return ((u, 1),)
    acc: dict[Word, int] = defaultdict(int)
    for w, m in shuffle_words(u.prefix, v):
        acc[w.append(u.last)] += m
    for w, m in shuffle_words(u, v.prefix):
        acc[w.append(v.last)] += m
    return tuple(sorted(acc.items()))


# ── Operations ────────────────────────────────────────────────────────────────


def _check_cap(cap: int) -> None:
    if cap < 0:
        raise TensorAlgebraError(f"cap must be >= 0, got {cap}")


def shuffle(a: TensorPoly, b: TensorPoly, cap: int) -> TensorPoly:
    _check_cap(cap)
    acc: dict[Word, float] = defaultdict(float)
    for u, cu in a:
        for v, cv in b:
            if u.length + v.length > cap:
                continue
            for w, m in shuffle_words(u, v):
                acc[w] += cu * cv * m
    return TensorPoly(cap, acc)


def tensor_product(a: TensorPoly, b: TensorPoly, cap: int) -> TensorPoly:
    """Concatenation product, truncated at cap."""
    _check_cap(cap)
    acc: dict[Word, float] = defaultdict(float)
    for u, cu in a:
        for v, cv in b:
            if u.length + v.length <= cap:
                acc[u.concat(v)] += cu * cv
    return TensorPoly(cap, acc)


def shuffle_exp(a: TensorPoly, cap: int) -> TensorPoly:
    """Σ_{n=0..cap} a^{⧢n} / n!, which terminates because a has no constant term."""
    _check_cap(cap)
    constant = a.coeff(EMPTY)
    if constant != 0.0:
        raise TensorAlgebraError(
            f"shuffle_exp needs a zero constant term, got {constant!r}; "
            "the series would not terminate at the cap"
        )
    term = TensorPoly.unit(cap)
    result = term
    for n in range(1, cap + 1):
        term = scale(shuffle(term, a, cap), 1.0 / n)
        if term.is_zero:
            break
        result = add(result, term)
    return result


def append_letter(a: TensorPoly, letter: int, cap: int) -> TensorPoly:
    """result(w·letter) = a(w) for |w| ≤ cap − 1."""
    if cap < 1:
        raise TensorAlgebraError(f"append_letter needs cap >= 1, got {cap}")
    return TensorPoly(
        cap, {w.append(letter): c for w, c in a if w.length <= cap - 1}
    )


def project(a: TensorPoly, n: int) -> TensorPoly:
    _check_cap(n)
    return TensorPoly(n, {w: c for w, c in a if w.length <= n})


def add(a: TensorPoly, b: TensorPoly) -> TensorPoly:
    acc: dict[Word, float] = defaultdict(float)
    for w, c in a:
        acc[w] += c
    for w, c in b:
        acc[w] += c
    return TensorPoly(max(a.level_cap, b.level_cap), acc)


def scale(a: TensorPoly, c: float) -> TensorPoly:
    return TensorPoly(a.level_cap, {w: c * v for w, v in a})
