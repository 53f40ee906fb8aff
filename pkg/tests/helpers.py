"""Shared builders for randomized oracle tests."""

from __future__ import annotations

import numpy as np

from wordalign.alignment import StateSpace
from wordalign.pages import Transcript

WORD_POOL = ("aa", "bb", "cc", "dd", "ee")


def random_boxes(rng: np.random.Generator, n: int, width: float = 1000.0,
                 height: float = 800.0) -> np.ndarray:
    l = rng.uniform(0.0, width - 200.0, size=n)
    t = rng.uniform(0.0, height - 80.0, size=n)
    w = rng.uniform(8.0, 180.0, size=n)
    h = rng.uniform(6.0, 60.0, size=n)
    return np.stack([l, t, l + w, t + h], axis=1)


def split_lines(rng: np.random.Generator, tokens: list[str]) -> list[list[str]]:
    lines: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        current.append(tok)
        if rng.random() < 0.35:
            lines.append(current)
            current = []
    if current:
        lines.append(current)
    return lines


def random_instance(
    rng: np.random.Generator,
    n_states: int | None = None,
    n_words: int | None = None,
) -> tuple[StateSpace, Transcript]:
    """A random small chain: valid geometry, arbitrary log emissions."""
    n = int(n_states) if n_states is not None else int(rng.integers(2, 7))
    k = int(n_words) if n_words is not None else int(rng.integers(2, 6))
    tokens = [WORD_POOL[int(i)] for i in rng.integers(0, len(WORD_POOL), size=k)]
    transcript = Transcript(page_id="rand", lines=split_lines(rng, tokens))
    words = list(dict.fromkeys(tokens))
    states = StateSpace(
        proposal_indices=np.arange(n),
        boxes=random_boxes(rng, n),
        words=words,
        log_emission=rng.uniform(-8.0, 0.0, size=(len(words), n)),
    )
    return states, transcript
