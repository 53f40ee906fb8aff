"""Shared alignment and retrieval parameters with validated defaults."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputValidationError

__all__ = ["AlignmentParams", "HARVEST_MODES", "EMISSION_SIGNS"]

HARVEST_MODES = ("hard", "soft")
EMISSION_SIGNS = ("neg", "pos")


@dataclass(frozen=True)
class AlignmentParams:
    """Knobs shared by retrieval filtering and the alignment chain.

    epsilon is the floor probability for geometrically implausible
    transitions, top_k the number of candidate boxes kept per distinct
    transcript word, tau the posterior threshold for harvesting weak
    annotations, score_threshold the minimum wordness score, and
    nms_overlap the IoU above which database suppression fires.
    """

    epsilon: float = 0.01
    top_k: int = 20
    tau: float = 0.5
    score_threshold: float = 0.0
    nms_overlap: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise InputValidationError(f"epsilon {self.epsilon} outside (0, 1)")
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise InputValidationError(f"top_k {self.top_k} must be a positive integer")
        if not 0.0 < self.tau <= 1.0:
            raise InputValidationError(f"tau {self.tau} outside (0, 1]")
        if not 0.0 <= self.nms_overlap <= 1.0:
            raise InputValidationError(f"nms_overlap {self.nms_overlap} outside [0, 1]")
