"""Fixed-length word string embeddings and the losses built on them.

A word is embedded by one-hot encoding it over a 36 symbol alphabet
(26 lowercase letters plus 10 digits), applying the type-II discrete
cosine transform along the character axis of each symbol channel, and
keeping the first 3 coefficients per channel. Words shorter than 3
characters are zero padded in coefficient space. Flattening channel by
channel yields a 108-dimensional vector that is compared by cosine
similarity everywhere downstream.

The DCT convention is the unnormalized type-II transform,
y_k = 2 * sum_n x_n * cos(pi * k * (2n + 1) / (2L)); only cosine
similarities of embeddings are ever consumed, so the global factor 2
has no observable effect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import dct
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InputValidationError, UnembeddableTokenError

__all__ = [
    "DEFAULT_CHARS",
    "COEFFICIENTS_PER_CHANNEL",
    "EMBEDDING_DIM",
    "Alphabet",
    "DEFAULT_ALPHABET",
    "normalize_token",
    "dctow",
    "cosine_similarity",
    "cosine_loss",
    "total_loss",
    "unit_rows",
    "DctowEmbedder",
]

DEFAULT_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"
COEFFICIENTS_PER_CHANNEL = 3
EMBEDDING_DIM = 108

SCORE_LOSS_WEIGHT = 0.1
EMBEDDING_LOSS_WEIGHT = 3.0


@dataclass(frozen=True)
class Alphabet:
    """Embeddable symbol set; its size times 3 kept coefficients is 108."""

    chars: str = DEFAULT_CHARS

    def __post_init__(self) -> None:
        if len(set(self.chars)) != len(self.chars):
            raise InputValidationError("alphabet has duplicate characters")
        if len(self.chars) * COEFFICIENTS_PER_CHANNEL != EMBEDDING_DIM:
            raise InputValidationError(
                f"alphabet size {len(self.chars)} x {COEFFICIENTS_PER_CHANNEL} "
                f"coefficients must equal {EMBEDDING_DIM}"
            )
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @property
    def index(self) -> dict[str, int]:
        return self._index  # type: ignore[attr-defined]

    def __contains__(self, ch: str) -> bool:
        return ch in self.index

    def __len__(self) -> int:
        return len(self.chars)


DEFAULT_ALPHABET = Alphabet()


def normalize_token(raw: str, alphabet: Alphabet | None = None) -> str:
    """Lowercase and drop characters outside the alphabet.

    Raises UnembeddableTokenError when nothing remains, carrying the
    original token for diagnostics.
    """
    alphabet = alphabet or DEFAULT_ALPHABET
    out = "".join(ch for ch in raw.lower() if ch in alphabet)
    if not out:
        raise UnembeddableTokenError(raw)
    return out


def dctow(word: str, alphabet: Alphabet | None = None) -> np.ndarray:
    """Embed a normalized word as a 108-dimensional vector.

    The word must be non-empty and contain only alphabet characters;
    use normalize_token first for raw tokens.
    """
    alphabet = alphabet or DEFAULT_ALPHABET
    if not word:
        raise InputValidationError("cannot embed an empty word")
    onehot = np.zeros((len(alphabet), len(word)), dtype=np.float64)
    for pos, ch in enumerate(word):
        idx = alphabet.index.get(ch)
        if idx is None:
            raise InputValidationError(
                f"word {word!r} contains {ch!r} outside the alphabet; normalize first"
            )
        onehot[idx, pos] = 1.0
    coeffs = dct(onehot, type=2, axis=1)
    kept = np.zeros((len(alphabet), COEFFICIENTS_PER_CHANNEL), dtype=np.float64)
    take = min(len(word), COEFFICIENTS_PER_CHANNEL)
    kept[:, :take] = coeffs[:, :take]
    return kept.reshape(-1)


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clipped into [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise InputValidationError("cosine similarity of a zero-norm vector")
    return float(np.clip(float(np.dot(x, y)) / (nx * ny), -1.0, 1.0))


def cosine_loss(xs: Sequence[np.ndarray] | np.ndarray, ys: Sequence[np.ndarray] | np.ndarray) -> float:
    """Mean of 1 - cos(x_i, y_i) over paired vectors; bounded in [0, 2]."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape != ys.shape:
        raise InputValidationError(f"shape mismatch: {xs.shape} vs {ys.shape}")
    if xs.shape[0] == 0:
        raise InputValidationError("cosine_loss of an empty batch")
    sims = np.array([cosine_similarity(x, y) for x, y in zip(xs, ys)])
    return float(np.mean(1.0 - sims))


def total_loss(score_loss: float, embedding_loss: float) -> float:
    """Fixed-weight combination: 0.1 * score loss + 3 * embedding loss."""
    return SCORE_LOSS_WEIGHT * float(score_loss) + EMBEDDING_LOSS_WEIGHT * float(embedding_loss)


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Normalize each row to unit length; rejects zero-norm rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        bad = np.flatnonzero(norms.ravel() == 0.0).tolist()
        raise InputValidationError(f"zero-norm embedding rows at indices {bad}")
    return matrix / norms


class DctowEmbedder(BaseEstimator, TransformerMixin):
    """Transformer turning raw tokens into rows of 108-dim embeddings.

    Stateless: fit is a no-op kept for pipeline compatibility. Tokens are
    normalized (lowercased, out-of-alphabet characters dropped) before
    embedding; tokens that normalize to nothing raise.
    """

    def __init__(self, alphabet: Alphabet | None = None):
        self.alphabet = alphabet

    def fit(self, X: Iterable[str] | None = None, y=None) -> "DctowEmbedder":
        return self

    def transform(self, X: Iterable[str]) -> np.ndarray:
        alphabet = self.alphabet or DEFAULT_ALPHABET
        rows = [dctow(normalize_token(tok, alphabet), alphabet) for tok in X]
        if not rows:
            return np.zeros((0, EMBEDDING_DIM), dtype=np.float64)
        return np.stack(rows)
