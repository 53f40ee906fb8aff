"""Synthetic page generator and brute-force reference inference.

The generator lays out labeled word boxes line by line so that every
consecutive pair satisfies the reading-order transition rule, attaches
noisy embeddings and wordness scores, and salts the page with decoy
proposals drawn from realistic failure modes (shifted copies, merged
neighbors, split halves, random boxes). Everything is driven by one
seeded NumPy PCG64 generator, so a fixed seed reproduces the page bit
for bit.

The brute-force functions enumerate all N^K state sequences and exist
purely as oracles for the dynamic-programming inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .alignment import StateSpace, _position_rows, transition_log_matrices
from .embedding import DEFAULT_ALPHABET, EMBEDDING_DIM, dctow
from .errors import InputValidationError
from .geometry import BBox
from .pages import GroundTruth, GroundTruthEntry, ProposalSet, Transcript
from .params import AlignmentParams

__all__ = [
    "DEFAULT_VOCABULARY",
    "DEFAULT_NOISE_SIGMA",
    "BRUTE_FORCE_LIMIT",
    "SynthConfig",
    "SynthPage",
    "generate_page",
    "calibrate_noise_sigma",
    "brute_force_posteriors",
    "brute_force_viterbi",
]

DEFAULT_VOCABULARY = (
    "the", "of", "and", "to", "in", "that", "was", "his", "with", "for",
    "her", "had", "you", "not", "him", "when", "there", "this", "from", "out",
    "were", "what", "then", "they", "upon", "which", "would", "about", "could",
    "after", "before", "village", "winter", "summer", "garden", "letter",
    "orders", "company", "river", "account", "general", "province", "command",
    "soldier", "morning", "evening", "people", "church", "market", "record",
    "family", "written", "answer", "return", "number", "second", "against",
    "between", "brother", "daughter", "husband", "mother", "father", "house",
    "horse", "water", "bread", "money", "field", "spring",
)

# Calibrated by bisection so the mean cosine between a unit vector and its
# noised copy is 0.80; see calibrate_noise_sigma and the simulator tests.
DEFAULT_NOISE_SIGMA = 0.0723

BRUTE_FORCE_LIMIT = 50_000

_MARGIN = 25.0
_LINE_START_SLACK = 15.0
_SCORE_TRUE = (0.70, 1.0)
_SCORE_DECOY = (0.10, 0.70)
_MIN_BOX_SIDE = 2.0


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs. Ranges are inclusive-low, exclusive-high draws."""

    seed: int = 0
    page_id: str = "synth-0000"
    lines: int = 10
    words_per_line: tuple[int, int] = (8, 12)
    word_width: tuple[float, float] = (50.0, 140.0)
    word_height: tuple[float, float] = (24.0, 40.0)
    gap: tuple[float, float] = (12.0, 32.0)
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    decoy_ratio: float = 3.0
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY

    def __post_init__(self) -> None:
        if self.lines < 1:
            raise InputValidationError("need at least one line")
        for name in ("words_per_line", "word_width", "word_height", "gap"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InputValidationError(f"bad range {name}={lo, hi}")
        if self.noise_sigma < 0:
            raise InputValidationError("noise_sigma must be non-negative")
        if self.decoy_ratio < 0:
            raise InputValidationError("decoy_ratio must be non-negative")
        if not self.vocabulary:
            raise InputValidationError("vocabulary must be non-empty")


@dataclass
class SynthPage:
    """One generated page with its full ground truth.

    true_proposal_indices[k] is the index within proposals of the planted
    box for reading-order position k, the reference assignment for
    alignment tests.
    """

    page_id: str
    width: float
    height: float
    transcript: Transcript
    proposals: ProposalSet
    truth: GroundTruth
    true_proposal_indices: np.ndarray


def _noisy_unit(rng: np.random.Generator, base: np.ndarray, sigma: float) -> np.ndarray:
    unit = base / np.linalg.norm(base)
    if sigma == 0.0:
        return unit
    noisy = unit + rng.normal(0.0, sigma, size=unit.shape)
    norm = np.linalg.norm(noisy)
    return unit if norm == 0.0 else noisy / norm


def calibrate_noise_sigma(
    target_cos: float = 0.8,
    samples: int = 1000,
    seed: int = 0,
    dim: int = 108,
) -> float:
    """Bisect the noise level whose mean perturbed-pair cosine hits target.

    Uses common random numbers per evaluation, making the measured mean
    monotone in sigma so plain bisection converges.
    """

    def mean_cos(sigma: float) -> float:
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(samples, dim))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        noisy = base + rng.normal(0.0, sigma, size=base.shape)
        noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
        return float(np.mean(np.sum(base * noisy, axis=1)))

    lo, hi = 1e-4, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if mean_cos(mid) > target_cos:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _random_box(rng: np.random.Generator, cfg: SynthConfig, width: float, height: float) -> BBox:
    w = rng.uniform(*cfg.word_width)
    h = rng.uniform(*cfg.word_height)
    w = min(w, width - 2.0)
    h = min(h, height - 2.0)
    l = rng.uniform(0.0, width - w)
    t = rng.uniform(0.0, height - h)
    return BBox(l, t, l + w, t + h)


def _clamped_or_none(l: float, t: float, r: float, b: float, width: float, height: float) -> BBox | None:
    l = min(max(l, 0.0), width)
    r = min(max(r, 0.0), width)
    t = min(max(t, 0.0), height)
    b = min(max(b, 0.0), height)
    if r - l < _MIN_BOX_SIDE or b - t < _MIN_BOX_SIDE:
        return None
    return BBox(l, t, r, b)


def _decoy_box(
    rng: np.random.Generator,
    cfg: SynthConfig,
    true_boxes: list[BBox],
    line_slices: list[tuple[int, int]],
    width: float,
    height: float,
) -> BBox:
    family = int(rng.integers(0, 4))
    if family == 0:
        src = true_boxes[int(rng.integers(len(true_boxes)))]
        dx = float(rng.choice([-1.0, 1.0])) * rng.uniform(0.25, 0.75) * src.width
        box = _clamped_or_none(src.l + dx, src.t, src.r + dx, src.b, width, height)
        if box is not None:
            return box
    elif family == 1:
        pairs = [(s, i) for s, (lo, hi) in enumerate(line_slices) for i in range(lo, hi - 1)]
        if pairs:
            _, i = pairs[int(rng.integers(len(pairs)))]
            a, b = true_boxes[i], true_boxes[i + 1]
            return BBox(a.l, min(a.t, b.t), b.r, max(a.b, b.b))
    elif family == 2:
        src = true_boxes[int(rng.integers(len(true_boxes)))]
        mid = 0.5 * (src.l + src.r)
        if rng.random() < 0.5:
            return BBox(src.l, src.t, mid, src.b)
        return BBox(mid, src.t, src.r, src.b)
    return _random_box(rng, cfg, width, height)


def generate_page(config: SynthConfig) -> SynthPage:
    """Generate one page; deterministic for a fixed config.

    True boxes follow reading order per line (each consecutive same-line
    pair satisfies the within-line transition rule, each line starts
    below the previous line), carry embeddings of their label perturbed
    by isotropic Gaussian noise and renormalized, and score in the high
    band. Decoys score in the low-to-mid band and carry either a noised
    blend of two vocabulary words or a random direction.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    alphabet = DEFAULT_ALPHABET

    jitter = 0.15 * cfg.word_height[0]
    pitch = cfg.word_height[1] + jitter + 0.6 * cfg.word_height[1]

    lines: list[list[str]] = []
    true_boxes: list[BBox] = []
    line_slices: list[tuple[int, int]] = []
    for li in range(cfg.lines):
        count = int(rng.integers(cfg.words_per_line[0], cfg.words_per_line[1] + 1))
        labels = [str(rng.choice(cfg.vocabulary)) for _ in range(count)]
        start = len(true_boxes)
        x = _MARGIN + rng.uniform(0.0, _LINE_START_SLACK)
        for _ in range(count):
            w = rng.uniform(*cfg.word_width)
            h = rng.uniform(*cfg.word_height)
            t = _MARGIN + li * pitch + rng.uniform(0.0, jitter)
            true_boxes.append(BBox(x, t, x + w, t + h))
            x += w + rng.uniform(*cfg.gap)
        lines.append(labels)
        line_slices.append((start, len(true_boxes)))

    width = max(b.r for b in true_boxes) + _MARGIN
    height = _MARGIN + cfg.lines * pitch + _MARGIN
    flat_labels = [lab for line in lines for lab in line]
    n_true = len(true_boxes)

    n_decoys = int(round(cfg.decoy_ratio * n_true))
    decoy_boxes = [
        _decoy_box(rng, cfg, true_boxes, line_slices, width, height)
        for _ in range(n_decoys)
    ]

    embeddings = np.empty((n_true + n_decoys, EMBEDDING_DIM))
    for k, label in enumerate(flat_labels):
        embeddings[k] = _noisy_unit(rng, dctow(label, alphabet), cfg.noise_sigma)
    for d in range(n_decoys):
        if rng.random() < 0.5:
            # Blend of two distinct words: word-like, but never parallel
            # to any single word's embedding, so a clean true box always
            # outranks every decoy for its own label.
            pair = rng.choice(len(cfg.vocabulary), size=2, replace=False)
            va = dctow(str(cfg.vocabulary[int(pair[0])]), alphabet)
            vb = dctow(str(cfg.vocabulary[int(pair[1])]), alphabet)
            mix = va / np.linalg.norm(va) + vb / np.linalg.norm(vb)
            embeddings[n_true + d] = _noisy_unit(rng, mix, cfg.noise_sigma)
        else:
            embeddings[n_true + d] = _noisy_unit(rng, rng.normal(size=EMBEDDING_DIM), 0.0)

    scores = np.concatenate([
        rng.uniform(*_SCORE_TRUE, size=n_true),
        rng.uniform(*_SCORE_DECOY, size=n_decoys),
    ])
    boxes = np.array([b.to_list() for b in true_boxes + decoy_boxes])

    perm = rng.permutation(n_true + n_decoys)
    inverse = np.argsort(perm)
    proposals = ProposalSet(
        page_id=cfg.page_id,
        width=width,
        height=height,
        boxes=boxes[perm],
        scores=scores[perm],
        embeddings=embeddings[perm],
    )
    transcript = Transcript(page_id=cfg.page_id, lines=lines)
    truth = GroundTruth(
        page_id=cfg.page_id,
        width=width,
        height=height,
        entries=[GroundTruthEntry(box=b, label=lab) for b, lab in zip(true_boxes, flat_labels)],
    )
    return SynthPage(
        page_id=cfg.page_id,
        width=width,
        height=height,
        transcript=transcript,
        proposals=proposals,
        truth=truth,
        true_proposal_indices=inverse[:n_true].copy(),
    )


def _enumerate_log_joints(
    states: StateSpace, transcript: Transcript, params: AlignmentParams
) -> tuple[np.ndarray, np.ndarray]:
    n = len(states)
    k_len = len(transcript)
    total = n ** k_len
    if total > BRUTE_FORCE_LIMIT:
        raise InputValidationError(
            f"instance too large for brute force: {n}^{k_len} = {total} sequences"
        )
    rows = _position_rows(states, transcript)
    log_emis = states.log_emission[rows]
    breaks = transcript.line_breaks
    log_same, log_break = transition_log_matrices(states.boxes, params.epsilon)
    seqs = np.stack(
        np.unravel_index(np.arange(total), (n,) * k_len), axis=1
    ).astype(np.intp)
    joints = np.full(total, -np.log(n)) + log_emis[0, seqs[:, 0]]
    for k in range(1, k_len):
        m = log_break if breaks[k] else log_same
        joints += m[seqs[:, k - 1], seqs[:, k]] + log_emis[k, seqs[:, k]]
    return seqs, joints


def brute_force_posteriors(
    states: StateSpace, transcript: Transcript, params: AlignmentParams | None = None
) -> np.ndarray:
    """Posteriors by enumerating every state sequence. Oracle only."""
    params = params or AlignmentParams()
    seqs, joints = _enumerate_log_joints(states, transcript, params)
    k_len, n = len(transcript), len(states)
    log_post = np.empty((k_len, n))
    for k in range(k_len):
        for i in range(n):
            log_post[k, i] = logsumexp(joints[seqs[:, k] == i])
        log_post[k] -= logsumexp(log_post[k])
    return np.exp(log_post)


def brute_force_viterbi(
    states: StateSpace, transcript: Transcript, params: AlignmentParams | None = None
) -> np.ndarray:
    """Most likely sequence by enumeration, with the decoder's tie rule.

    Among maximal sequences the winner minimizes the state index at the
    last position, then at the one before, and so on, mirroring how the
    dynamic-programming decoder breaks ties while backtracking.
    """
    params = params or AlignmentParams()
    seqs, joints = _enumerate_log_joints(states, transcript, params)
    candidates = seqs[joints == joints.max()]
    order = np.lexsort(tuple(candidates[:, k] for k in range(candidates.shape[1])))
    return candidates[order[0]].copy()
