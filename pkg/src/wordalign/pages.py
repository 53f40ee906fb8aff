"""Page-level data containers: proposal sets, transcripts, ground truth.

These are the ingest types. Their constructors enforce the invariants the
rest of the package relies on (valid boxes inside the page, scores in
[0, 1], 108-dim nonzero embeddings, non-empty transcript lines) and report
offending indices so malformed files fail loudly at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import EMBEDDING_DIM
from .errors import InputValidationError
from .geometry import BBox, Page

__all__ = ["ProposalSet", "Transcript", "GroundTruthEntry", "GroundTruth"]


def _offending(mask: np.ndarray) -> list[int]:
    return np.flatnonzero(mask).tolist()


@dataclass
class ProposalSet:
    """Candidate word boxes for one page, with scores and embeddings.

    boxes is (n, 4) in [l, t, r, b] order, scores is (n,), embeddings is
    (n, 108). The set may be empty, for instance after filtering.
    """

    page_id: str
    width: float
    height: float
    boxes: np.ndarray
    scores: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self) -> None:
        page = Page(self.page_id, self.width, self.height)
        boxes = np.asarray(self.boxes, dtype=np.float64)
        self.boxes = boxes.reshape(0, 4) if boxes.size == 0 else boxes
        if self.boxes.ndim != 2 or self.boxes.shape[1] != 4:
            raise InputValidationError(f"boxes must be (n, 4), got {boxes.shape}")
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        self.embeddings = emb.reshape(0, EMBEDDING_DIM) if emb.size == 0 else emb
        if self.embeddings.ndim != 2 or self.embeddings.shape[1] != EMBEDDING_DIM:
            raise InputValidationError(
                f"embeddings must be (n, {EMBEDDING_DIM}), got {emb.shape}"
            )
        n = len(self.boxes)
        if len(self.scores) != n or len(self.embeddings) != n:
            raise InputValidationError(
                f"proposal arrays disagree: {n} boxes, {len(self.scores)} scores, "
                f"{len(self.embeddings)} embeddings"
            )
        if not (np.all(np.isfinite(self.boxes)) and np.all(np.isfinite(self.scores))
                and np.all(np.isfinite(self.embeddings))):
            raise InputValidationError("proposal arrays contain non-finite values")
        degenerate = ~((self.boxes[:, 0] < self.boxes[:, 2]) & (self.boxes[:, 1] < self.boxes[:, 3]))
        if np.any(degenerate):
            raise InputValidationError(f"degenerate boxes at indices {_offending(degenerate)}")
        outside = (
            (self.boxes[:, 0] < 0.0) | (self.boxes[:, 1] < 0.0)
            | (self.boxes[:, 2] > page.width) | (self.boxes[:, 3] > page.height)
        )
        if np.any(outside):
            raise InputValidationError(f"boxes outside the page at indices {_offending(outside)}")
        bad_score = (self.scores < 0.0) | (self.scores > 1.0)
        if np.any(bad_score):
            raise InputValidationError(f"scores outside [0, 1] at indices {_offending(bad_score)}")
        zero_norm = np.linalg.norm(self.embeddings, axis=1) == 0.0
        if np.any(zero_norm):
            raise InputValidationError(f"zero-norm embeddings at indices {_offending(zero_norm)}")

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, i: int) -> BBox:
        l, t, r, b = self.boxes[i]
        return BBox(float(l), float(t), float(r), float(b))

    def subset(self, indices: Sequence[int] | np.ndarray) -> "ProposalSet":
        idx = np.asarray(indices, dtype=np.intp)
        return ProposalSet(
            page_id=self.page_id,
            width=self.width,
            height=self.height,
            boxes=self.boxes[idx],
            scores=self.scores[idx],
            embeddings=self.embeddings[idx],
        )


@dataclass
class Transcript:
    """Page text as ordered lines of word tokens, in reading order.

    Empty lines are dropped at construction; at least one token must
    remain. Flattening the lines yields positions 0..K-1; position k > 0
    starts a new line exactly when line_breaks[k] is true.
    """

    page_id: str
    lines: list[list[str]]

    def __post_init__(self) -> None:
        if not self.page_id:
            raise InputValidationError("page_id must be non-empty")
        cleaned: list[list[str]] = []
        for li, line in enumerate(self.lines):
            toks = list(line)
            for ti, tok in enumerate(toks):
                if not isinstance(tok, str) or not tok.strip():
                    raise InputValidationError(f"blank token at line {li} position {ti}")
            if toks:
                cleaned.append(toks)
        if not cleaned:
            raise InputValidationError("transcript has no non-empty lines")
        self.lines = cleaned

    @property
    def tokens(self) -> list[str]:
        return [tok for line in self.lines for tok in line]

    @property
    def line_breaks(self) -> np.ndarray:
        """Boolean per position: true when it opens a new line (k > 0)."""
        flags: list[bool] = []
        for li, line in enumerate(self.lines):
            for ti in range(len(line)):
                flags.append(li > 0 and ti == 0)
        return np.array(flags, dtype=bool)

    def __len__(self) -> int:
        return sum(len(line) for line in self.lines)


@dataclass(frozen=True)
class GroundTruthEntry:
    box: BBox
    label: str


@dataclass
class GroundTruth:
    """Reference word boxes with labels for one page, in reading order."""

    page_id: str
    width: float
    height: float
    entries: list[GroundTruthEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        page = Page(self.page_id, self.width, self.height)
        for i, e in enumerate(self.entries):
            if not e.label:
                raise InputValidationError(f"empty ground truth label at index {i}")
            if e.box.l < 0 or e.box.t < 0 or e.box.r > page.width or e.box.b > page.height:
                raise InputValidationError(f"ground truth box outside the page at index {i}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]
