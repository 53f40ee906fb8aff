"""Command line interface.

Subcommands:

  simulate    generate synthetic pages (proposals, transcript, truth)
  align       align a transcript to word proposals, single page or a directory
  eval-align  score alignments against ground truth (accuracy at IoU 0.5)
  eval-map    score retrieval results against ground truth (mean AP)
  search      rank proposal boxes against query strings
  embed       print fixed-length word embeddings
  render      draw an alignment as a static SVG

Tunable parameters can come from a JSON config file (--config); values
given as flags always win over the file. Outputs are written atomically
and serialized canonically, so rerunning a command on the same inputs
produces byte-identical files. Exit codes: 0 success, 2 invalid input,
3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .alignment import align_page
from .embedding import dctow, normalize_token
from .errors import InputValidationError, WordAlignError
from .params import EMISSION_SIGNS, HARVEST_MODES, AlignmentParams
from .pages import GroundTruth
from .render import render_alignment_svg
from .retrieval import ACCURACY_IOU_THRESHOLD, alignment_accuracy, mean_average_precision, search
from .synth import SynthConfig, generate_page

logger = logging.getLogger(__name__)

_PROPOSALS_SUFFIX = ".proposals.json"
_TRANSCRIPT_SUFFIX = ".transcript.json"
_TRUTH_SUFFIX = ".truth.json"
_ALIGNMENT_SUFFIX = ".alignment.json"

# Keys a --config file may set; flag values always take precedence.
_CONFIG_DEFAULTS: dict[str, object] = {
    "epsilon": 0.01,
    "top_k": 20,
    "tau": 0.5,
    "score_threshold": 0.0,
    "nms_overlap": 0.4,
    "harvest_mode": "hard",
    "emission_exponent_sign": "neg",
    "iou_threshold": 0.5,
    "jobs": 1,
    "seed": 0,
}


def _resolve_config(args: argparse.Namespace, keys: tuple[str, ...]) -> None:
    """Fill unset (None) flags from --config, then built-in defaults."""
    overrides: dict[str, object] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        doc = formats.read_json(config_path)
        if not isinstance(doc, dict):
            raise InputValidationError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(doc) - set(keys))
        if unknown:
            raise InputValidationError(
                f"{config_path}: unknown config keys {unknown}; allowed: {sorted(keys)}"
            )
        overrides = doc
    for key in keys:
        if getattr(args, key, None) is None:
            setattr(args, key, overrides.get(key, _CONFIG_DEFAULTS[key]))


def _params_from_args(args: argparse.Namespace) -> AlignmentParams:
    return AlignmentParams(
        epsilon=float(args.epsilon),
        top_k=int(args.top_k),
        tau=float(args.tau),
        score_threshold=float(args.score_threshold),
        nms_overlap=float(args.nms_overlap),
    )


def _emit(args: argparse.Namespace, payload: dict) -> None:
    """Write the payload to --out when given, else to stdout."""
    text = formats.dump_json(payload)
    out = getattr(args, "out", None)
    if out:
        formats.atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("alignment parameters")
    group.add_argument("--epsilon", type=float, default=None,
                       help="transition smoothing in (0, 1), default 0.01")
    group.add_argument("--top-k", type=int, default=None, dest="top_k",
                       help="candidate boxes kept per transcript word, default 20")
    group.add_argument("--tau", type=float, default=None,
                       help="posterior threshold for harvesting labels, default 0.5")
    group.add_argument("--score-threshold", type=float, default=None, dest="score_threshold",
                       help="minimum proposal score kept, default 0.0")
    group.add_argument("--nms-overlap", type=float, default=None, dest="nms_overlap",
                       help="IoU above which proposals are suppressed, default 0.4")
    group.add_argument("--harvest-mode", choices=HARVEST_MODES, default=None, dest="harvest_mode",
                       help="hard: best box per position; soft: all above tau")
    group.add_argument("--emission-exponent-sign", choices=EMISSION_SIGNS, default=None,
                       dest="emission_exponent_sign",
                       help="sign of the squared-distance exponent (neg is the "
                            "useful setting; pos inverts the model for demonstration)")
    parser.add_argument("--config", default=None,
                        help="JSON file of parameter defaults; flags take precedence")


_PARAM_KEYS = (
    "epsilon", "top_k", "tau", "score_threshold", "nms_overlap",
    "harvest_mode", "emission_exponent_sign",
)


# -- simulate -----------------------------------------------------------------

def _range_pair(values: list[float], name: str) -> tuple[float, float]:
    lo, hi = values
    if not lo <= hi:
        raise InputValidationError(f"{name}: expected LO <= HI, got {lo} {hi}")
    return (lo, hi)


def cmd_simulate(args: argparse.Namespace) -> int:
    _resolve_config(args, ("seed",))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocabulary = None
    if args.vocabulary:
        words = [w.strip() for w in Path(args.vocabulary).read_text().split()]
        vocabulary = tuple(w for w in words if w)
        if not vocabulary:
            raise InputValidationError(f"{args.vocabulary}: no words found")
    page_ids = []
    for i in range(args.pages):
        page_id = f"synth-{i:04d}"
        config = SynthConfig(
            seed=int(args.seed) + i,
            page_id=page_id,
            lines=args.lines,
            words_per_line=(args.words_per_line[0], args.words_per_line[1]),
            word_width=_range_pair(args.word_width, "--word-width"),
            word_height=_range_pair(args.word_height, "--word-height"),
            gap=_range_pair(args.gap, "--gap"),
            noise_sigma=args.noise_sigma,
            decoy_ratio=args.decoy_ratio,
            **({"vocabulary": vocabulary} if vocabulary else {}),
        )
        page = generate_page(config)
        formats.save_proposals(out_dir / f"{page_id}{_PROPOSALS_SUFFIX}", page.proposals)
        formats.save_transcript(out_dir / f"{page_id}{_TRANSCRIPT_SUFFIX}", page.transcript)
        formats.save_truth(out_dir / f"{page_id}{_TRUTH_SUFFIX}", page.truth)
        page_ids.append(page_id)
        logger.info("wrote page %s (%d proposals)", page_id, len(page.proposals))
    sys.stdout.write(formats.dump_json({"out_dir": str(out_dir), "pages": page_ids}))
    return 0


# -- align ----------------------------------------------------------------------

def _align_one(proposals_path: str, transcript_path: str, out_path: str,
               params: AlignmentParams, harvest_mode: str, emission_sign: str) -> dict:
    proposals = formats.load_proposals(proposals_path)
    transcript = formats.load_transcript(transcript_path)
    result = align_page(
        proposals, transcript, params,
        harvest_mode=harvest_mode, emission_sign=emission_sign,
    )
    formats.save_alignment(out_path, result)
    return {
        "page_id": result.page_id,
        "positions": len(result.positions),
        "weak_annotations": len(result.weak_annotations),
        "out": out_path,
    }


def _align_job(job: tuple) -> dict:
    return _align_one(*job)


def cmd_align(args: argparse.Namespace) -> int:
    _resolve_config(args, _PARAM_KEYS + ("jobs",))
    params = _params_from_args(args)
    single = args.proposals or args.transcript or args.out
    batch = args.input_dir or args.out_dir
    if single and batch:
        raise InputValidationError("give either --proposals/--transcript/--out or "
                                   "--input-dir/--out-dir, not both")
    if single:
        if not (args.proposals and args.transcript and args.out):
            raise InputValidationError("single-page mode needs --proposals, "
                                       "--transcript and --out")
        summary = _align_one(args.proposals, args.transcript, args.out,
                             params, args.harvest_mode, args.emission_exponent_sign)
        sys.stdout.write(formats.dump_json(summary))
        return 0
    if not (args.input_dir and args.out_dir):
        raise InputValidationError("batch mode needs --input-dir and --out-dir")
    input_dir, out_dir = Path(args.input_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for proposals_path in sorted(input_dir.glob(f"*{_PROPOSALS_SUFFIX}")):
        stem = proposals_path.name[: -len(_PROPOSALS_SUFFIX)]
        transcript_path = input_dir / f"{stem}{_TRANSCRIPT_SUFFIX}"
        if not transcript_path.exists():
            raise InputValidationError(f"{proposals_path}: no matching {transcript_path.name}")
        jobs.append((str(proposals_path), str(transcript_path),
                     str(out_dir / f"{stem}{_ALIGNMENT_SUFFIX}"),
                     params, args.harvest_mode, args.emission_exponent_sign))
    if not jobs:
        raise InputValidationError(f"{input_dir}: no *{_PROPOSALS_SUFFIX} files found")
    if int(args.jobs) > 1:
        with ProcessPoolExecutor(max_workers=int(args.jobs)) as pool:
            summaries = list(pool.map(_align_job, jobs))
    else:
        summaries = [_align_job(job) for job in jobs]
    for summary in summaries:
        logger.info("aligned %s -> %s", summary["page_id"], summary["out"])
    sys.stdout.write(formats.dump_json({"pages": len(summaries), "out_dir": str(out_dir)}))
    return 0


# -- eval-align -------------------------------------------------------------------

def _page_accuracy(alignment_path: str | Path, truth_path: str | Path) -> float:
    result = formats.load_alignment(alignment_path)
    truth = formats.load_truth(truth_path)
    if result.page_id != truth.page_id:
        raise InputValidationError(
            f"page mismatch: alignment is {result.page_id!r}, truth is {truth.page_id!r}"
        )
    return alignment_accuracy(result.viterbi_pairs, truth)


def cmd_eval_align(args: argparse.Namespace) -> int:
    single = args.alignment or args.truth
    batch = args.alignment_dir or args.truth_dir
    if single and batch:
        raise InputValidationError("give either --alignment/--truth or "
                                   "--alignment-dir/--truth-dir, not both")
    if single:
        if not (args.alignment and args.truth):
            raise InputValidationError("single-page mode needs --alignment and --truth")
        accuracies = [_page_accuracy(args.alignment, args.truth)]
    else:
        if not (args.alignment_dir and args.truth_dir):
            raise InputValidationError("batch mode needs --alignment-dir and --truth-dir")
        alignment_dir, truth_dir = Path(args.alignment_dir), Path(args.truth_dir)
        accuracies = []
        for alignment_path in sorted(alignment_dir.glob(f"*{_ALIGNMENT_SUFFIX}")):
            stem = alignment_path.name[: -len(_ALIGNMENT_SUFFIX)]
            truth_path = truth_dir / f"{stem}{_TRUTH_SUFFIX}"
            if not truth_path.exists():
                raise InputValidationError(f"{alignment_path}: no matching {truth_path.name}")
            accuracies.append(_page_accuracy(alignment_path, truth_path))
        if not accuracies:
            raise InputValidationError(f"{alignment_dir}: no *{_ALIGNMENT_SUFFIX} files found")
    _emit(args, {
        "metric": "alignment_accuracy",
        "value": float(np.mean(accuracies)),
        "t_o": ACCURACY_IOU_THRESHOLD,
        "num_pages": len(accuracies),
    })
    return 0


# -- eval-map ---------------------------------------------------------------------

def cmd_eval_map(args: argparse.Namespace) -> int:
    _resolve_config(args, ("iou_threshold",))
    page_id, results = formats.load_results(args.results)
    truth = formats.load_truth(args.truth)
    if page_id != truth.page_id:
        raise InputValidationError(
            f"page mismatch: results are {page_id!r}, truth is {truth.page_id!r}"
        )
    value = mean_average_precision(results, truth, float(args.iou_threshold))
    _emit(args, {
        "metric": "mean_average_precision",
        "value": value,
        "t_o": float(args.iou_threshold),
        "num_queries": len(results),
    })
    return 0


# -- search -----------------------------------------------------------------------

def _truth_query_labels(truth: GroundTruth) -> list[str]:
    return list(dict.fromkeys(e.label for e in truth.entries))


def cmd_search(args: argparse.Namespace) -> int:
    _resolve_config(args, _PARAM_KEYS)
    params = _params_from_args(args)
    proposals = formats.load_proposals(args.proposals)
    queries = list(dict.fromkeys(args.queries))
    if args.queries_from_truth:
        truth = formats.load_truth(args.queries_from_truth)
        queries.extend(q for q in _truth_query_labels(truth) if q not in queries)
    if not queries:
        raise InputValidationError("no queries: pass words or --queries-from-truth")
    results = [search(query, proposals, params) for query in queries]
    for result in results:
        logger.info("query %r: %d hits", result.query, len(result.items))
    _emit(args, formats.results_to_dict(proposals.page_id, results))
    return 0


# -- embed ------------------------------------------------------------------------

def cmd_embed(args: argparse.Namespace) -> int:
    entries = []
    for word in args.words:
        vector = dctow(normalize_token(word))
        entries.append({"word": word, "embedding": [float(v) for v in vector]})
    _emit(args, {"embeddings": entries})
    return 0


# -- render -----------------------------------------------------------------------

def cmd_render(args: argparse.Namespace) -> int:
    result = formats.load_alignment(args.alignment)
    truth = None
    if args.truth:
        truth = formats.load_truth(args.truth)
        if truth.page_id != result.page_id:
            raise InputValidationError(
                f"page mismatch: alignment is {result.page_id!r}, truth is {truth.page_id!r}"
            )
    formats.atomic_write_text(args.out, render_alignment_svg(result, truth))
    logger.info("wrote %s", args.out)
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wordalign",
        description="Align transcripts to word images and evaluate the result.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic pages")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--seed", type=int, default=None, help="base RNG seed, default 0")
    p.add_argument("--pages", type=int, default=1, help="number of pages to generate")
    p.add_argument("--lines", type=int, default=10)
    p.add_argument("--words-per-line", type=int, nargs=2, default=[8, 12],
                   metavar=("LO", "HI"), dest="words_per_line")
    p.add_argument("--word-width", type=float, nargs=2, default=[50.0, 140.0],
                   metavar=("LO", "HI"), dest="word_width")
    p.add_argument("--word-height", type=float, nargs=2, default=[24.0, 40.0],
                   metavar=("LO", "HI"), dest="word_height")
    p.add_argument("--gap", type=float, nargs=2, default=[12.0, 32.0], metavar=("LO", "HI"))
    p.add_argument("--noise-sigma", type=float, default=SynthConfig.noise_sigma,
                   dest="noise_sigma", help="embedding noise level")
    p.add_argument("--decoy-ratio", type=float, default=SynthConfig.decoy_ratio,
                   dest="decoy_ratio", help="decoy boxes per true box")
    p.add_argument("--vocabulary", default=None,
                   help="file of whitespace-separated words to draw from")
    p.add_argument("--config", default=None,
                   help="JSON file of parameter defaults; flags take precedence")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="align transcripts to proposals")
    p.add_argument("--proposals", help="proposals JSON (single-page mode)")
    p.add_argument("--transcript", help="transcript JSON (single-page mode)")
    p.add_argument("--out", help="output alignment JSON (single-page mode)")
    p.add_argument("--input-dir", dest="input_dir",
                   help="directory of *.proposals.json / *.transcript.json pairs")
    p.add_argument("--out-dir", dest="out_dir", help="directory for *.alignment.json")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel worker processes in batch mode, default 1")
    _add_param_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval-align", help="alignment accuracy against ground truth")
    p.add_argument("--alignment", help="alignment JSON (single-page mode)")
    p.add_argument("--truth", help="ground truth JSON (single-page mode)")
    p.add_argument("--alignment-dir", dest="alignment_dir")
    p.add_argument("--truth-dir", dest="truth_dir")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval_align)

    p = sub.add_parser("eval-map", help="mean average precision of search results")
    p.add_argument("--results", required=True, help="search results JSON")
    p.add_argument("--truth", required=True, help="ground truth JSON")
    p.add_argument("--iou-threshold", type=float, default=None, dest="iou_threshold",
                   help="overlap required for a hit, default 0.5")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--config", default=None,
                   help="JSON file of parameter defaults; flags take precedence")
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("search", help="rank proposals against query words")
    p.add_argument("--proposals", required=True, help="proposals JSON to search")
    p.add_argument("queries", nargs="*", help="query words")
    p.add_argument("--queries-from-truth", dest="queries_from_truth",
                   help="also query every distinct ground truth label in this file")
    p.add_argument("--out", help="write results here instead of stdout")
    _add_param_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("embed", help="print word embeddings")
    p.add_argument("words", nargs="+", help="words to embed")
    p.add_argument("--out", help="write embeddings here instead of stdout")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("render", help="draw an alignment as SVG")
    p.add_argument("--alignment", required=True, help="alignment JSON")
    p.add_argument("--truth", default=None, help="optional ground truth overlay")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except WordAlignError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return exc.exit_code
    except OSError as exc:
        payload = {"error": {"type": "IOError", "message": str(exc)}}
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
