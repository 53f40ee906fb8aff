"""Transcript-to-word-image alignment and retrieval evaluation.

The package aligns a page transcript to candidate word boxes with a
training-free hidden Markov model (states are candidate boxes,
observations are transcript words in reading order), harvests weak
word annotations from the posteriors, and evaluates both alignment and
retrieval quality. No learned weights are involved anywhere: emissions
come from a fixed character-frequency embedding and box geometry
drives the transitions.
"""

from .alignment import (
    AlignedPosition,
    AlignmentResult,
    PosteriorEntry,
    StateSpace,
    TranscriptAligner,
    WeakAnnotation,
    align_page,
    build_state_space,
    emission_from_cosine,
    forward_backward,
    harvest_weak_labels,
    sequence_log_likelihood,
    transition_likelihood,
    transition_log_matrices,
    transition_penalty,
    transition_rule,
    viterbi,
)
from .embedding import (
    DEFAULT_ALPHABET,
    EMBEDDING_DIM,
    Alphabet,
    DctowEmbedder,
    cosine_loss,
    cosine_similarity,
    dctow,
    normalize_token,
    total_loss,
)
from .errors import (
    EmptyStateSpaceError,
    InputValidationError,
    NumericError,
    UnembeddableTokenError,
    WordAlignError,
)
from .geometry import BBox, Page, iou
from .pages import GroundTruth, GroundTruthEntry, ProposalSet, Transcript
from .params import AlignmentParams
from .retrieval import (
    RankedItem,
    RankedResult,
    alignment_accuracy,
    average_precision,
    filter_database,
    mean_average_precision,
    nms,
    score_filter,
    search,
)
from .synth import SynthConfig, SynthPage, generate_page

__version__ = "0.1.0"

__all__ = [
    "AlignedPosition",
    "AlignmentParams",
    "AlignmentResult",
    "Alphabet",
    "BBox",
    "DctowEmbedder",
    "DEFAULT_ALPHABET",
    "EMBEDDING_DIM",
    "EmptyStateSpaceError",
    "GroundTruth",
    "GroundTruthEntry",
    "InputValidationError",
    "NumericError",
    "Page",
    "PosteriorEntry",
    "ProposalSet",
    "RankedItem",
    "RankedResult",
    "StateSpace",
    "SynthConfig",
    "SynthPage",
    "Transcript",
    "TranscriptAligner",
    "UnembeddableTokenError",
    "WeakAnnotation",
    "WordAlignError",
    "align_page",
    "alignment_accuracy",
    "average_precision",
    "build_state_space",
    "cosine_loss",
    "cosine_similarity",
    "dctow",
    "emission_from_cosine",
    "filter_database",
    "forward_backward",
    "generate_page",
    "harvest_weak_labels",
    "iou",
    "mean_average_precision",
    "nms",
    "normalize_token",
    "score_filter",
    "search",
    "sequence_log_likelihood",
    "total_loss",
    "transition_likelihood",
    "transition_log_matrices",
    "transition_penalty",
    "transition_rule",
    "viterbi",
    "__version__",
]
