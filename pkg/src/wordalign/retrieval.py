"""Proposal filtering, query-by-string search, and evaluation metrics.

The retrieval database for a page is the proposal set after score
thresholding and greedy non-maximum suppression on the wordness score.
Searching embeds the query string, ranks the database by cosine
similarity, and suppresses any overlapping lower-ranked hit (zero
overlap tolerance), mirroring how a segmentation-free word spotter
reports results.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import Alphabet, dctow, normalize_token, unit_rows
from .errors import InputValidationError
from .geometry import BBox, boxes_to_array, iou, pairwise_iou
from .pages import GroundTruth, ProposalSet
from .params import AlignmentParams

__all__ = [
    "RankedItem",
    "RankedResult",
    "score_filter",
    "nms",
    "filter_database",
    "search",
    "relevant_count",
    "average_precision",
    "mean_average_precision",
    "alignment_accuracy",
]

logger = logging.getLogger(__name__)

ACCURACY_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class RankedItem:
    """One retrieved box; index refers to the proposal set searched."""

    index: int
    box: BBox
    similarity: float


@dataclass
class RankedResult:
    """Search output for one query, similarity non-increasing."""

    query: str
    items: list[RankedItem]

    def __post_init__(self) -> None:
        sims = [it.similarity for it in self.items]
        if any(a < b for a, b in zip(sims, sims[1:])):
            raise InputValidationError("ranked items must be sorted by similarity")


def score_filter(proposals: ProposalSet, threshold: float) -> ProposalSet:
    """Keep proposals with score >= threshold, preserving order."""
    keep = np.flatnonzero(proposals.scores >= threshold)
    return proposals.subset(keep)


def _nms_indices(boxes: np.ndarray, scores: np.ndarray, overlap_threshold: float) -> list[int]:
    """Greedy suppression on (n,4) boxes; returns kept indices, best first.

    Repeatedly keeps the highest-scoring remaining box (ties by lower
    index) and discards every remaining box whose IoU with it exceeds
    overlap_threshold. A threshold of 0 suppresses any positive overlap.
    """
    n = len(boxes)
    if n == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    ious = pairwise_iou(boxes, boxes)
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(int(idx))
        alive &= ~(ious[idx] > overlap_threshold)
        alive[idx] = False
    return kept


def nms(items: Sequence[tuple[BBox, float]], overlap_threshold: float) -> list[int]:
    """Greedy non-maximum suppression over (box, score) pairs.

    Returns the indices of surviving items in selection order, which is
    descending score with ties broken by lower input index.
    """
    if not 0.0 <= overlap_threshold <= 1.0:
        raise InputValidationError(f"overlap threshold {overlap_threshold} outside [0, 1]")
    boxes = boxes_to_array([b for b, _ in items])
    scores = np.array([float(s) for _, s in items], dtype=np.float64)
    return _nms_indices(boxes, scores, overlap_threshold)


def filter_database(
    proposals: ProposalSet, score_threshold: float, nms_overlap: float
) -> tuple[ProposalSet, np.ndarray]:
    """Score-threshold then NMS a proposal set into a search database.

    Returns the filtered set together with the surviving original
    indices, in ascending index order so callers can map results back.
    """
    if not 0.0 <= nms_overlap <= 1.0:
        raise InputValidationError(f"overlap threshold {nms_overlap} outside [0, 1]")
    passing = np.flatnonzero(proposals.scores >= score_threshold)
    kept = _nms_indices(proposals.boxes[passing], proposals.scores[passing], nms_overlap)
    original = np.sort(passing[np.array(kept, dtype=np.intp)]) if kept else np.zeros(0, dtype=np.intp)
    return proposals.subset(original), original


def search(
    query: str,
    database: ProposalSet,
    params: AlignmentParams | None = None,
    alphabet: Alphabet | None = None,
) -> RankedResult:
    """Rank the boxes of a proposal set against a query string.

    The set is first reduced to the retrieval database (score threshold
    and wordness NMS from params). The normalized query is embedded and
    every database entry scored by cosine similarity; overlapping hits
    are then suppressed greedily with zero overlap tolerance, similarity
    as the score, and the survivors returned in descending similarity.
    Item indices refer to the proposal set as passed in.
    """
    params = params or AlignmentParams()
    word = normalize_token(query, alphabet)
    db, original = filter_database(database, params.score_threshold, params.nms_overlap)
    if len(db) == 0:
        return RankedResult(query=query, items=[])
    q = dctow(word, alphabet)
    sims = unit_rows(db.embeddings) @ (q / np.linalg.norm(q))
    kept = _nms_indices(db.boxes, sims, 0.0)
    items = [
        RankedItem(index=int(original[i]), box=db.box(int(i)), similarity=float(sims[i]))
        for i in kept
    ]
    return RankedResult(query=query, items=items)


def relevant_count(query: str, truth: GroundTruth) -> int:
    """Number of ground truth instances whose label equals the query."""
    return sum(1 for e in truth.entries if e.label == query)


def average_precision(result: RankedResult, truth: GroundTruth, iou_threshold: float) -> float:
    """Interpolation-free average precision for one ranked result.

    A rank is relevant when its box overlaps a not-yet-matched ground
    truth instance of the query's label with IoU strictly above the
    threshold; each instance can be matched once, greedily by rank with
    the highest-IoU candidate. The sum of precisions at relevant ranks
    is divided by the total number of relevant instances.
    """
    candidates = [i for i, e in enumerate(truth.entries) if e.label == result.query]
    if not candidates:
        raise InputValidationError(
            f"query {result.query!r} has no relevant ground truth instances"
        )
    matched: set[int] = set()
    hits = 0
    total = 0.0
    for rank, item in enumerate(result.items, start=1):
        best_idx = -1
        best_iou = iou_threshold
        for gi in candidates:
            if gi in matched:
                continue
            overlap = iou(item.box, truth.entries[gi].box)
            if overlap > best_iou:
                best_iou = overlap
                best_idx = gi
        if best_idx >= 0:
            matched.add(best_idx)
            hits += 1
            total += hits / rank
    return total / len(candidates)


def mean_average_precision(
    results: Sequence[RankedResult], truth: GroundTruth, iou_threshold: float
) -> float:
    """Mean AP over queries; queries absent from the ground truth are
    skipped with a diagnostic instead of contributing zero."""
    values: list[float] = []
    for result in results:
        if relevant_count(result.query, truth) == 0:
            logger.warning(
                "query %r has no ground truth instances on page %s, skipping",
                result.query, truth.page_id,
            )
            continue
        values.append(average_precision(result, truth, iou_threshold))
    if not values:
        raise InputValidationError("no evaluable queries against this ground truth")
    return float(np.mean(values))


def alignment_accuracy(aligned: Sequence[tuple[BBox, str]], truth: GroundTruth) -> float:
    """Fraction of aligned boxes that land on a correctly labeled word.

    An aligned box counts when its best-overlapping ground truth box has
    IoU above 0.5 and carries the same label. The count is divided by
    max(#truth, #aligned); several aligned boxes may match the same
    ground truth box without penalty. Two empty sets score 1.
    """
    m = len(truth.entries)
    n = len(aligned)
    if m == 0 and n == 0:
        logger.warning("alignment accuracy of empty page %s defined as 1.0", truth.page_id)
        return 1.0
    if m == 0 or n == 0:
        return 0.0
    truth_arr = boxes_to_array([e.box for e in truth.entries])
    correct = 0
    for box, label in aligned:
        overlaps = pairwise_iou(boxes_to_array([box]), truth_arr)[0]
        best = int(np.argmax(overlaps))
        if overlaps[best] > ACCURACY_IOU_THRESHOLD and truth.entries[best].label == label:
            correct += 1
    return correct / max(m, n)
