"""Transcript-to-box alignment with a hidden Markov chain over proposals.

The hidden states are candidate word boxes, the observations are the
transcript tokens in reading order. Emissions score how well a box's
embedding matches the token's embedding; transitions encode reading
order geometry (left to right on a line, downward across lines) softened
by an epsilon floor so deficient proposal sets still align. Inference is
exact: forward-backward posteriors for weak-label harvesting and a
Viterbi decode for the single best assignment. Everything runs in the
log domain with per-position normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .embedding import (
    EMBEDDING_DIM,
    Alphabet,
    DEFAULT_ALPHABET,
    cosine_similarity,
    dctow,
    normalize_token,
    unit_rows,
)
from .errors import EmptyStateSpaceError, InputValidationError, NumericError
from .geometry import (
    BBox,
    area,
    bounding_union_area,
    box_areas,
    intersection_area,
    pairwise_intersection,
)
from .pages import ProposalSet, Transcript
from .params import EMISSION_SIGNS, HARVEST_MODES, AlignmentParams
from .retrieval import filter_database

__all__ = [
    "POSTERIOR_SPARSIFY_THRESHOLD",
    "StateSpace",
    "WeakAnnotation",
    "PosteriorEntry",
    "AlignedPosition",
    "AlignmentResult",
    "emission_from_cosine",
    "emission_likelihood",
    "transition_rule",
    "transition_penalty",
    "transition_likelihood",
    "transition_log_matrices",
    "build_state_space",
    "forward_backward",
    "viterbi",
    "sequence_log_likelihood",
    "harvest_weak_labels",
    "align_page",
    "TranscriptAligner",
]

# Inverse variance of the cosine between independent random directions in
# the embedding space; it sharpens the match likelihood.
_HALF_DIM = EMBEDDING_DIM / 2.0

# Posterior entries below this are dropped from serialized output only.
POSTERIOR_SPARSIFY_THRESHOLD = 1e-6


def _check_sign(emission_sign: str) -> float:
    if emission_sign not in EMISSION_SIGNS:
        raise InputValidationError(
            f"emission sign {emission_sign!r} not one of {EMISSION_SIGNS}"
        )
    return -1.0 if emission_sign == "neg" else 1.0


def log_emission_from_cosine(cos, emission_sign: str = "neg") -> np.ndarray:
    """Log match likelihood from cosine similarity, vectorized.

    The default negative sign yields a Gaussian in the cosine deviation,
    exp(-(cos - 1)^2 * 54), which is 1 at a perfect match and decays
    with mismatch. The positive sign flips the exponent; it produces an
    anti-Gaussian that rewards mismatches and exists purely so the
    effect of the sign can be demonstrated. It is never the default.
    """
    s = _check_sign(emission_sign)
    dev = np.asarray(cos, dtype=np.float64) - 1.0
    return s * dev * dev * _HALF_DIM


def emission_from_cosine(cos: float, emission_sign: str = "neg") -> float:
    """Match likelihood of a box-word pair given their cosine similarity."""
    return float(np.exp(log_emission_from_cosine(cos, emission_sign)))


def emission_likelihood(x: np.ndarray, y: np.ndarray, emission_sign: str = "neg") -> float:
    """Match likelihood of two embeddings; in (0, 1] for the default sign."""
    return emission_from_cosine(cosine_similarity(x, y), emission_sign)


def transition_rule(i: BBox, j: BBox, line_break: bool, epsilon: float) -> float:
    """Binary reading-order plausibility of stepping from box i to box j.

    Within a line the follower must end to the right of the leader's
    left edge and start vertically within one box height (the larger of
    the two) of it. Across a line break the follower's bottom must lie
    below the leader's top. Implausible steps get the epsilon floor
    instead of zero so the chain never disconnects.

    Worked examples (epsilon 0.01):

    >>> i = BBox(10, 100, 50, 120)
    >>> transition_rule(i, BBox(55, 102, 90, 122), False, 0.01)
    1.0
    >>> transition_rule(i, BBox(0, 102, 8, 122), False, 0.01)
    0.01
    >>> transition_rule(i, BBox(12, 125, 40, 145), True, 0.01)
    1.0

    The first follower ends right of i's left edge and starts inside the
    one-height window (80 < 102 < 120, h = 20); the second ends at x = 8,
    left of l_i = 10; the third starts a new line below i's top.
    """
    if line_break:
        ok = j.b > i.t
    else:
        h = max(i.height, j.height)
        ok = (j.r > i.l) and (i.t - h < j.t < i.t + h)
    return 1.0 if ok else epsilon


def transition_penalty(i: BBox, j: BBox, line_break: bool, epsilon: float) -> float:
    """Soft geometric penalty discouraging re-use and big jumps.

    The overlap factor shrinks toward epsilon as the two boxes approach
    full overlap (a word rarely sits on top of the previous one). Within
    a line a second factor shrinks toward epsilon as the empty space in
    the rectangle spanning both boxes grows, discouraging jumps across
    the page. Line-break steps skip the jump factor.

    Worked examples (epsilon 0.01):

    >>> i = BBox(0, 0, 10, 5)
    >>> transition_penalty(i, i, False, 0.01)
    0.01
    >>> transition_penalty(i, BBox(10, 0, 20, 5), False, 0.01)
    1.0
    >>> transition_penalty(i, BBox(30, 0, 40, 5), False, 0.01)
    0.505

    Identical boxes fully overlap, so only the floor survives (the jump
    factor is 1: no empty space). A touching neighbor has no overlap and
    no empty space, so no penalty. A neighbor one box-width away leaves
    the spanning rectangle half empty: 0.01 + 0.99 * (100/200) = 0.505.
    """
    inter = intersection_area(i, j)
    q = inter / min(area(i), area(j))
    overlap_factor = epsilon + (1.0 - epsilon) * (1.0 - q)
    if line_break:
        return overlap_factor
    ratio = (area(i) + area(j) - inter) / bounding_union_area(i, j)
    return overlap_factor * (epsilon + (1.0 - epsilon) * ratio)


def transition_likelihood(i: BBox, j: BBox, line_break: bool, epsilon: float) -> float:
    """Product of the reading-order rule and the geometric penalty."""
    return transition_rule(i, j, line_break, epsilon) * transition_penalty(
        i, j, line_break, epsilon
    )


def transition_log_matrices(boxes: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Log transition matrices over (n, 4) state boxes.

    Returns (same_line, line_break), each (n, n) with entry [i, j] the
    log likelihood of stepping from state i to state j. Transitions
    depend on the positions only through the line-break flag, so two
    matrices cover the whole chain.
    """
    if not 0.0 < epsilon < 1.0:
        raise InputValidationError(f"epsilon {epsilon} outside (0, 1)")
    l, t, r, b = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    heights = b - t
    h = np.maximum(heights[:, None], heights[None, :])
    rule_same = (
        (r[None, :] > l[:, None])
        & (t[None, :] > t[:, None] - h)
        & (t[None, :] < t[:, None] + h)
    )
    rule_break = b[None, :] > t[:, None]

    areas = box_areas(boxes)
    inter = pairwise_intersection(boxes, boxes)
    q = inter / np.minimum(areas[:, None], areas[None, :])
    overlap_factor = epsilon + (1.0 - epsilon) * (1.0 - q)
    span_w = np.maximum(r[:, None], r[None, :]) - np.minimum(l[:, None], l[None, :])
    span_h = np.maximum(b[:, None], b[None, :]) - np.minimum(t[:, None], t[None, :])
    ratio = (areas[:, None] + areas[None, :] - inter) / (span_w * span_h)
    jump_factor = epsilon + (1.0 - epsilon) * ratio

    phi_same = np.where(rule_same, 1.0, epsilon) * overlap_factor * jump_factor
    phi_break = np.where(rule_break, 1.0, epsilon) * overlap_factor
    return np.log(phi_same), np.log(phi_break)


@dataclass
class StateSpace:
    """The HMM state set for one page and transcript.

    States are proposal boxes, ordered by ascending original proposal
    index. words holds the distinct normalized transcript words in first
    appearance order; log_emission[u, i] is the log match likelihood of
    state i for word u.
    """

    proposal_indices: np.ndarray
    boxes: np.ndarray
    words: list[str]
    log_emission: np.ndarray
    alphabet: Alphabet = field(default_factory=lambda: DEFAULT_ALPHABET)

    def __post_init__(self) -> None:
        self.proposal_indices = np.asarray(self.proposal_indices, dtype=np.intp)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        self.log_emission = np.asarray(self.log_emission, dtype=np.float64)
        n = len(self.proposal_indices)
        if n == 0:
            raise EmptyStateSpaceError("state space has no states")
        if self.boxes.shape != (n, 4):
            raise InputValidationError(
                f"state boxes shape {self.boxes.shape} does not match {n} states"
            )
        if self.log_emission.shape != (len(self.words), n):
            raise InputValidationError(
                f"emission shape {self.log_emission.shape} does not match "
                f"{len(self.words)} words x {n} states"
            )
        if not np.all(np.isfinite(self.log_emission)):
            raise NumericError("non-finite emission entries")
        self.word_index = {w: u for u, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.proposal_indices)

    def box(self, state: int) -> BBox:
        l, t, r, b = self.boxes[state]
        return BBox(float(l), float(t), float(r), float(b))


@dataclass(frozen=True)
class WeakAnnotation:
    """A harvested (box, label, confidence) triple for downstream training."""

    box: BBox
    label: str
    confidence: float


@dataclass(frozen=True)
class PosteriorEntry:
    """One surviving posterior entry; index refers to the proposal set."""

    index: int
    p: float
    box: BBox


@dataclass
class AlignedPosition:
    """Alignment of one transcript position (0-based)."""

    position: int
    word: str
    viterbi_index: int
    viterbi_box: BBox
    posterior: list[PosteriorEntry]


@dataclass
class AlignmentResult:
    """Full alignment of one page.

    positions carry the sparsified posteriors and the Viterbi choice per
    transcript position; weak_annotations the harvested training
    triples. The diagnostic fields (state space, dense posterior, raw
    Viterbi state path) are kept for library callers and are not
    serialized.
    """

    page_id: str
    params: AlignmentParams
    harvest_mode: str
    emission_sign: str
    positions: list[AlignedPosition]
    weak_annotations: list[WeakAnnotation]
    state_space: StateSpace | None = None
    dense_posterior: np.ndarray | None = None
    viterbi_states: np.ndarray | None = None

    @property
    def viterbi_pairs(self) -> list[tuple[BBox, str]]:
        """(box, label) per position, the form the accuracy metric takes."""
        return [(pos.viterbi_box, pos.word) for pos in self.positions]


def build_state_space(
    proposals: ProposalSet,
    transcript: Transcript,
    params: AlignmentParams | None = None,
    alphabet: Alphabet | None = None,
    emission_sign: str = "neg",
) -> StateSpace:
    """Select candidate states and precompute emissions for one page.

    Proposals are reduced to the retrieval database (score threshold,
    then wordness NMS). For each distinct normalized transcript word the
    database is ranked by cosine similarity to the word's embedding and
    the top_k boxes kept; the union of the per-word selections, ordered
    by ascending proposal index, becomes the state set. Emission rows
    are computed for every distinct word against every selected state,
    so repeated words share one row.
    """
    params = params or AlignmentParams()
    alphabet = alphabet or DEFAULT_ALPHABET
    _check_sign(emission_sign)
    db, original = filter_database(proposals, params.score_threshold, params.nms_overlap)
    if len(db) == 0:
        raise EmptyStateSpaceError(
            f"no proposals survive score threshold {params.score_threshold} "
            f"and NMS overlap {params.nms_overlap} on page {proposals.page_id}"
        )
    normalized = [normalize_token(tok, alphabet) for tok in transcript.tokens]
    words = list(dict.fromkeys(normalized))
    query = unit_rows(np.stack([dctow(w, alphabet) for w in words]))
    sims = query @ unit_rows(db.embeddings).T
    top_k = min(int(params.top_k), len(db))
    selected: set[int] = set()
    for u in range(len(words)):
        order = np.argsort(-sims[u], kind="stable")
        selected.update(int(i) for i in order[:top_k])
    local = np.array(sorted(selected), dtype=np.intp)
    return StateSpace(
        proposal_indices=original[local],
        boxes=db.boxes[local],
        words=words,
        log_emission=log_emission_from_cosine(sims[:, local], emission_sign),
        alphabet=alphabet,
    )


def _position_rows(states: StateSpace, transcript: Transcript) -> np.ndarray:
    rows = []
    for tok in transcript.tokens:
        word = normalize_token(tok, states.alphabet)
        row = states.word_index.get(word)
        if row is None:
            raise InputValidationError(
                f"token {tok!r} is not part of the state space vocabulary"
            )
        rows.append(row)
    return np.array(rows, dtype=np.intp)


def forward_backward(
    states: StateSpace,
    transcript: Transcript,
    params: AlignmentParams | None = None,
) -> np.ndarray:
    """Exact per-position posteriors over states, shape (K, N).

    Uniform initial distribution, the precomputed emissions, and the two
    geometry transition matrices define the chain. Each returned row
    sums to 1.
    """
    params = params or AlignmentParams()
    rows = _position_rows(states, transcript)
    log_emis = states.log_emission[rows]
    breaks = transcript.line_breaks
    log_same, log_break = transition_log_matrices(states.boxes, params.epsilon)
    k_len, n = log_emis.shape

    log_alpha = np.empty((k_len, n))
    a = -np.log(n) + log_emis[0]
    a = a - logsumexp(a)
    log_alpha[0] = a
    for k in range(1, k_len):
        m = log_break if breaks[k] else log_same
        a = logsumexp(a[:, None] + m, axis=0) + log_emis[k]
        a = a - logsumexp(a)
        log_alpha[k] = a

    log_beta = np.empty((k_len, n))
    bta = np.zeros(n)
    log_beta[k_len - 1] = bta
    for k in range(k_len - 2, -1, -1):
        m = log_break if breaks[k + 1] else log_same
        bta = logsumexp(m + (log_emis[k + 1] + bta)[None, :], axis=1)
        bta = bta - logsumexp(bta)
        log_beta[k] = bta

    log_gamma = log_alpha + log_beta
    log_gamma -= logsumexp(log_gamma, axis=1, keepdims=True)
    posteriors = np.exp(log_gamma)
    if not np.all(np.isfinite(posteriors)):
        raise NumericError("non-finite posterior entries")
    return posteriors


def viterbi(
    states: StateSpace,
    transcript: Transcript,
    params: AlignmentParams | None = None,
) -> np.ndarray:
    """Most likely state path, shape (K,) of state indices.

    Ties are broken toward the lowest state index at the final position
    and at every backtracking step.
    """
    params = params or AlignmentParams()
    rows = _position_rows(states, transcript)
    log_emis = states.log_emission[rows]
    breaks = transcript.line_breaks
    log_same, log_break = transition_log_matrices(states.boxes, params.epsilon)
    k_len, n = log_emis.shape

    delta = -np.log(n) + log_emis[0]
    pointers = np.zeros((k_len, n), dtype=np.intp)
    for k in range(1, k_len):
        m = log_break if breaks[k] else log_same
        scores = delta[:, None] + m
        pointers[k] = np.argmax(scores, axis=0)
        delta = scores[pointers[k], np.arange(n)] + log_emis[k]

    path = np.empty(k_len, dtype=np.intp)
    path[k_len - 1] = int(np.argmax(delta))
    for k in range(k_len - 1, 0, -1):
        path[k - 1] = pointers[k, path[k]]
    return path


def sequence_log_likelihood(
    states: StateSpace,
    transcript: Transcript,
    params: AlignmentParams | None,
    path: Sequence[int],
) -> float:
    """Log joint likelihood of one state path under the chain."""
    params = params or AlignmentParams()
    rows = _position_rows(states, transcript)
    breaks = transcript.line_breaks
    path = np.asarray(path, dtype=np.intp)
    if path.shape != rows.shape:
        raise InputValidationError(
            f"path length {path.shape} does not match transcript length {rows.shape}"
        )
    log_same, log_break = transition_log_matrices(states.boxes, params.epsilon)
    total = -np.log(len(states)) + float(states.log_emission[rows[0], path[0]])
    for k in range(1, len(path)):
        m = log_break if breaks[k] else log_same
        total += float(m[path[k - 1], path[k]])
        total += float(states.log_emission[rows[k], path[k]])
    return total


def harvest_weak_labels(
    posteriors: np.ndarray,
    states: StateSpace,
    transcript: Transcript,
    tau: float,
    mode: str = "hard",
) -> list[WeakAnnotation]:
    """Turn posteriors into (box, label, confidence) training triples.

    Hard mode emits at most one annotation per position: the argmax
    state (lowest index on ties) when its posterior reaches tau. Soft
    mode emits one annotation for every state whose posterior reaches
    tau. Confidence is always the posterior mass itself.
    """
    if mode not in HARVEST_MODES:
        raise InputValidationError(f"harvest mode {mode!r} not one of {HARVEST_MODES}")
    if not 0.0 < tau <= 1.0:
        raise InputValidationError(f"tau {tau} outside (0, 1]")
    tokens = transcript.tokens
    if posteriors.shape != (len(tokens), len(states)):
        raise InputValidationError(
            f"posterior shape {posteriors.shape} does not match "
            f"{len(tokens)} positions x {len(states)} states"
        )
    annotations: list[WeakAnnotation] = []
    for k, tok in enumerate(tokens):
        row = posteriors[k]
        if mode == "hard":
            best = int(np.argmax(row))
            if row[best] >= tau:
                annotations.append(WeakAnnotation(states.box(best), tok, float(row[best])))
        else:
            for i in np.flatnonzero(row >= tau):
                annotations.append(WeakAnnotation(states.box(int(i)), tok, float(row[i])))
    return annotations


def align_page(
    proposals: ProposalSet,
    transcript: Transcript,
    params: AlignmentParams | None = None,
    harvest_mode: str = "hard",
    emission_sign: str = "neg",
    alphabet: Alphabet | None = None,
) -> AlignmentResult:
    """Run the full alignment pipeline for one page.

    Builds the state space, computes posteriors and the Viterbi path,
    harvests weak annotations, and assembles the serializable result.
    Posterior entries below 1e-6 are dropped from the per-position
    output (a documented lossy step; the dense matrix is kept on the
    result for library callers).
    """
    if proposals.page_id != transcript.page_id:
        raise InputValidationError(
            f"page_id mismatch: proposals {proposals.page_id!r} "
            f"vs transcript {transcript.page_id!r}"
        )
    params = params or AlignmentParams()
    states = build_state_space(proposals, transcript, params, alphabet, emission_sign)
    posteriors = forward_backward(states, transcript, params)
    path = viterbi(states, transcript, params)
    annotations = harvest_weak_labels(posteriors, states, transcript, params.tau, harvest_mode)

    positions: list[AlignedPosition] = []
    for k, tok in enumerate(transcript.tokens):
        entries = [
            PosteriorEntry(
                index=int(states.proposal_indices[i]),
                p=float(posteriors[k, i]),
                box=states.box(int(i)),
            )
            for i in np.flatnonzero(posteriors[k] >= POSTERIOR_SPARSIFY_THRESHOLD)
        ]
        positions.append(
            AlignedPosition(
                position=k,
                word=tok,
                viterbi_index=int(states.proposal_indices[path[k]]),
                viterbi_box=states.box(int(path[k])),
                posterior=entries,
            )
        )
    return AlignmentResult(
        page_id=proposals.page_id,
        params=params,
        harvest_mode=harvest_mode,
        emission_sign=emission_sign,
        positions=positions,
        weak_annotations=annotations,
        state_space=states,
        dense_posterior=posteriors,
        viterbi_states=path,
    )


class TranscriptAligner(BaseEstimator):
    """Estimator-style front end to the alignment pipeline.

    The model is training free, so fit only validates parameters and
    returns self; it exists for pipeline and parameter-search
    compatibility, together with get_params and set_params. predict maps
    (ProposalSet, Transcript) pairs to AlignmentResult objects.
    """

    def __init__(
        self,
        epsilon: float = 0.01,
        top_k: int = 20,
        tau: float = 0.5,
        score_threshold: float = 0.0,
        nms_overlap: float = 0.4,
        harvest_mode: str = "hard",
        emission_sign: str = "neg",
    ):
        self.epsilon = epsilon
        self.top_k = top_k
        self.tau = tau
        self.score_threshold = score_threshold
        self.nms_overlap = nms_overlap
        self.harvest_mode = harvest_mode
        self.emission_sign = emission_sign

    @property
    def params(self) -> AlignmentParams:
        return AlignmentParams(
            epsilon=self.epsilon,
            top_k=self.top_k,
            tau=self.tau,
            score_threshold=self.score_threshold,
            nms_overlap=self.nms_overlap,
        )

    def fit(self, X=None, y=None) -> "TranscriptAligner":
        _ = self.params
        if self.harvest_mode not in HARVEST_MODES:
            raise InputValidationError(
                f"harvest mode {self.harvest_mode!r} not one of {HARVEST_MODES}"
            )
        _check_sign(self.emission_sign)
        return self

    def align(self, proposals: ProposalSet, transcript: Transcript) -> AlignmentResult:
        return align_page(
            proposals,
            transcript,
            self.params,
            harvest_mode=self.harvest_mode,
            emission_sign=self.emission_sign,
        )

    def predict(
        self, X: Iterable[tuple[ProposalSet, Transcript]]
    ) -> list[AlignmentResult]:
        return [self.align(proposals, transcript) for proposals, transcript in X]
