"""JSON file formats and atomic serialization.

All documents are single page and self-describing; boxes are always the
array [l, t, r, b]. The schemas:

Proposals   {"page_id", "width", "height",
             "proposals": [{"box", "score", "embedding": [108 numbers]}]}
Transcript  {"page_id", "lines": [["token", ...], ...]}
Truth       {"page_id", "width", "height",
             "truth": [{"box", "label"}]}
Alignment   {"page_id",
             "params": {"epsilon", "top_k", "tau", "score_threshold",
                        "nms_overlap", "harvest_mode", "emission_sign"},
             "positions": [{"k", "word", "viterbi_box_index", "viterbi_box",
                            "posterior": [{"index", "p", "box"}]}],
             "weak_annotations": [{"box", "label", "confidence"}]}
Results     {"page_id", "results": [{"query",
             "items": [{"index", "box", "similarity"}]}]}

Positions are numbered k = 1..K in reading order. Posterior entries are
the sparsified per-position posterior (entries below 1e-6 are dropped at
serialization), ascending by proposal index; "index" always refers to
the proposals array of the page's proposals file. Boxes in proposals and
truth files are clamped to the page rectangle on load and rejected if
they collapse. Writes go through a temp file and an atomic rename, with
keys sorted, so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .alignment import (
    AlignedPosition,
    AlignmentResult,
    PosteriorEntry,
    WeakAnnotation,
)
from .embedding import EMBEDDING_DIM
from .errors import InputValidationError, NumericError
from .geometry import BBox, Page, clamp_to_page
from .pages import GroundTruth, GroundTruthEntry, ProposalSet, Transcript
from .params import EMISSION_SIGNS, HARVEST_MODES, AlignmentParams
from .retrieval import RankedItem, RankedResult

__all__ = [
    "dump_json",
    "read_json",
    "atomic_write_text",
    "write_json",
    "proposals_to_dict",
    "proposals_from_dict",
    "load_proposals",
    "save_proposals",
    "transcript_to_dict",
    "transcript_from_dict",
    "load_transcript",
    "save_transcript",
    "truth_to_dict",
    "truth_from_dict",
    "load_truth",
    "save_truth",
    "alignment_to_dict",
    "alignment_from_dict",
    "load_alignment",
    "save_alignment",
    "results_to_dict",
    "results_from_dict",
    "load_results",
    "save_results",
]


def dump_json(obj: Any) -> str:
    """Canonical serialization: sorted keys, 2-space indent, no NaN."""
    try:
        return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    except ValueError as exc:
        raise NumericError(f"non-finite value in output: {exc}") from exc


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, never a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj: Any) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path: str | Path) -> Any:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputValidationError(f"{path}: invalid JSON: {exc}") from exc


def _expect(doc: Any, key: str, kind: type, where: str) -> Any:
    if not isinstance(doc, dict):
        raise InputValidationError(f"{where}: expected an object, got {type(doc).__name__}")
    if key not in doc:
        raise InputValidationError(f"{where}: missing key {key!r}")
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise InputValidationError(
            f"{where}: key {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _box_list(box: BBox) -> list[float]:
    return box.to_list()


def _clamped_box(values: Any, page: Page, where: str) -> BBox:
    if not isinstance(values, list) or len(values) != 4:
        raise InputValidationError(f"{where}: box must be a 4-number array")
    try:
        nums = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise InputValidationError(f"{where}: box has non-numeric entries") from exc
    clamped = clamp_to_page(nums, page)
    if not (clamped[0] < clamped[2] and clamped[1] < clamped[3]):
        raise InputValidationError(
            f"{where}: box {nums} collapses after clamping to the page"
        )
    return BBox.from_list(clamped)


# -- proposals ---------------------------------------------------------------

def proposals_to_dict(pset: ProposalSet) -> dict:
    return {
        "page_id": pset.page_id,
        "width": float(pset.width),
        "height": float(pset.height),
        "proposals": [
            {
                "box": [float(v) for v in pset.boxes[i]],
                "score": float(pset.scores[i]),
                "embedding": [float(v) for v in pset.embeddings[i]],
            }
            for i in range(len(pset))
        ],
    }


def proposals_from_dict(doc: dict, where: str = "proposals") -> ProposalSet:
    page_id = _expect(doc, "page_id", str, where)
    width = _expect(doc, "width", float, where)
    height = _expect(doc, "height", float, where)
    entries = _expect(doc, "proposals", list, where)
    page = Page(page_id, width, height)
    boxes, scores, embeddings = [], [], []
    for i, entry in enumerate(entries):
        spot = f"{where}.proposals[{i}]"
        box = _clamped_box(_expect(entry, "box", list, spot), page, spot)
        boxes.append(box.to_list())
        scores.append(_expect(entry, "score", float, spot))
        emb = _expect(entry, "embedding", list, spot)
        embeddings.append([float(v) for v in emb])
    return ProposalSet(
        page_id=page_id,
        width=width,
        height=height,
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        scores=np.array(scores, dtype=np.float64),
        embeddings=np.array(embeddings, dtype=np.float64)
        if embeddings
        else np.zeros((0, EMBEDDING_DIM)),
    )


def load_proposals(path: str | Path) -> ProposalSet:
    return proposals_from_dict(read_json(path), where=str(path))


def save_proposals(path: str | Path, pset: ProposalSet) -> None:
    write_json(path, proposals_to_dict(pset))


# -- transcript ---------------------------------------------------------------

def transcript_to_dict(transcript: Transcript) -> dict:
    return {"page_id": transcript.page_id, "lines": [list(line) for line in transcript.lines]}


def transcript_from_dict(doc: dict, where: str = "transcript") -> Transcript:
    page_id = _expect(doc, "page_id", str, where)
    lines = _expect(doc, "lines", list, where)
    for li, line in enumerate(lines):
        if not isinstance(line, list) or not all(isinstance(t, str) for t in line):
            raise InputValidationError(f"{where}.lines[{li}] must be an array of strings")
    return Transcript(page_id=page_id, lines=[list(line) for line in lines])


def load_transcript(path: str | Path) -> Transcript:
    return transcript_from_dict(read_json(path), where=str(path))


def save_transcript(path: str | Path, transcript: Transcript) -> None:
    write_json(path, transcript_to_dict(transcript))


# -- ground truth --------------------------------------------------------------

def truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "page_id": truth.page_id,
        "width": float(truth.width),
        "height": float(truth.height),
        "truth": [
            {"box": _box_list(e.box), "label": e.label} for e in truth.entries
        ],
    }


def truth_from_dict(doc: dict, where: str = "truth") -> GroundTruth:
    page_id = _expect(doc, "page_id", str, where)
    width = _expect(doc, "width", float, where)
    height = _expect(doc, "height", float, where)
    page = Page(page_id, width, height)
    entries = []
    for i, entry in enumerate(_expect(doc, "truth", list, where)):
        spot = f"{where}.truth[{i}]"
        entries.append(
            GroundTruthEntry(
                box=_clamped_box(_expect(entry, "box", list, spot), page, spot),
                label=_expect(entry, "label", str, spot),
            )
        )
    return GroundTruth(page_id=page_id, width=width, height=height, entries=entries)


def load_truth(path: str | Path) -> GroundTruth:
    return truth_from_dict(read_json(path), where=str(path))


def save_truth(path: str | Path, truth: GroundTruth) -> None:
    write_json(path, truth_to_dict(truth))


# -- alignment ------------------------------------------------------------------

def alignment_to_dict(result: AlignmentResult) -> dict:
    return {
        "page_id": result.page_id,
        "params": {
            "epsilon": float(result.params.epsilon),
            "top_k": int(result.params.top_k),
            "tau": float(result.params.tau),
            "score_threshold": float(result.params.score_threshold),
            "nms_overlap": float(result.params.nms_overlap),
            "harvest_mode": result.harvest_mode,
            "emission_sign": result.emission_sign,
        },
        "positions": [
            {
                "k": pos.position + 1,
                "word": pos.word,
                "viterbi_box_index": int(pos.viterbi_index),
                "viterbi_box": _box_list(pos.viterbi_box),
                "posterior": [
                    {"index": int(e.index), "p": float(e.p), "box": _box_list(e.box)}
                    for e in pos.posterior
                ],
            }
            for pos in result.positions
        ],
        "weak_annotations": [
            {"box": _box_list(a.box), "label": a.label, "confidence": float(a.confidence)}
            for a in result.weak_annotations
        ],
    }


def _plain_box(values: Any, where: str) -> BBox:
    if not isinstance(values, list) or len(values) != 4:
        raise InputValidationError(f"{where}: box must be a 4-number array")
    return BBox.from_list([float(v) for v in values])


def alignment_from_dict(doc: dict, where: str = "alignment") -> AlignmentResult:
    page_id = _expect(doc, "page_id", str, where)
    raw_params = _expect(doc, "params", dict, where)
    harvest_mode = _expect(raw_params, "harvest_mode", str, f"{where}.params")
    emission_sign = _expect(raw_params, "emission_sign", str, f"{where}.params")
    if harvest_mode not in HARVEST_MODES:
        raise InputValidationError(f"{where}: unknown harvest mode {harvest_mode!r}")
    if emission_sign not in EMISSION_SIGNS:
        raise InputValidationError(f"{where}: unknown emission sign {emission_sign!r}")
    params = AlignmentParams(
        epsilon=_expect(raw_params, "epsilon", float, f"{where}.params"),
        top_k=_expect(raw_params, "top_k", int, f"{where}.params"),
        tau=_expect(raw_params, "tau", float, f"{where}.params"),
        score_threshold=_expect(raw_params, "score_threshold", float, f"{where}.params"),
        nms_overlap=_expect(raw_params, "nms_overlap", float, f"{where}.params"),
    )
    positions = []
    for idx, pos in enumerate(_expect(doc, "positions", list, where)):
        spot = f"{where}.positions[{idx}]"
        k = _expect(pos, "k", int, spot)
        if k != idx + 1:
            raise InputValidationError(f"{spot}: positions must be numbered 1..K, got k={k}")
        entries = []
        for j, e in enumerate(_expect(pos, "posterior", list, spot)):
            entry_spot = f"{spot}.posterior[{j}]"
            entries.append(
                PosteriorEntry(
                    index=_expect(e, "index", int, entry_spot),
                    p=_expect(e, "p", float, entry_spot),
                    box=_plain_box(_expect(e, "box", list, entry_spot), entry_spot),
                )
            )
        positions.append(
            AlignedPosition(
                position=k - 1,
                word=_expect(pos, "word", str, spot),
                viterbi_index=_expect(pos, "viterbi_box_index", int, spot),
                viterbi_box=_plain_box(_expect(pos, "viterbi_box", list, spot), spot),
                posterior=entries,
            )
        )
    annotations = []
    for i, a in enumerate(_expect(doc, "weak_annotations", list, where)):
        spot = f"{where}.weak_annotations[{i}]"
        annotations.append(
            WeakAnnotation(
                box=_plain_box(_expect(a, "box", list, spot), spot),
                label=_expect(a, "label", str, spot),
                confidence=_expect(a, "confidence", float, spot),
            )
        )
    return AlignmentResult(
        page_id=page_id,
        params=params,
        harvest_mode=harvest_mode,
        emission_sign=emission_sign,
        positions=positions,
        weak_annotations=annotations,
    )


def load_alignment(path: str | Path) -> AlignmentResult:
    return alignment_from_dict(read_json(path), where=str(path))


def save_alignment(path: str | Path, result: AlignmentResult) -> None:
    write_json(path, alignment_to_dict(result))


# -- search results ---------------------------------------------------------------

def results_to_dict(page_id: str, results: list[RankedResult]) -> dict:
    return {
        "page_id": page_id,
        "results": [
            {
                "query": r.query,
                "items": [
                    {
                        "index": int(it.index),
                        "box": _box_list(it.box),
                        "similarity": float(it.similarity),
                    }
                    for it in r.items
                ],
            }
            for r in results
        ],
    }


def results_from_dict(doc: dict, where: str = "results") -> tuple[str, list[RankedResult]]:
    page_id = _expect(doc, "page_id", str, where)
    out = []
    for i, r in enumerate(_expect(doc, "results", list, where)):
        spot = f"{where}.results[{i}]"
        items = []
        for j, it in enumerate(_expect(r, "items", list, spot)):
            item_spot = f"{spot}.items[{j}]"
            items.append(
                RankedItem(
                    index=_expect(it, "index", int, item_spot),
                    box=_plain_box(_expect(it, "box", list, item_spot), item_spot),
                    similarity=_expect(it, "similarity", float, item_spot),
                )
            )
        out.append(RankedResult(query=_expect(r, "query", str, spot), items=items))
    return page_id, out


def load_results(path: str | Path) -> tuple[str, list[RankedResult]]:
    return results_from_dict(read_json(path), where=str(path))


def save_results(path: str | Path, page_id: str, results: list[RankedResult]) -> None:
    write_json(path, results_to_dict(page_id, results))
