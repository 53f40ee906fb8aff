"""SVG rendering of alignment results."""

import pytest

from wordalign.alignment import (
    AlignedPosition,
    AlignmentParams,
    AlignmentResult,
    PosteriorEntry,
    align_page,
)
from wordalign.geometry import BBox
from wordalign.render import render_alignment_svg
from wordalign.synth import SynthConfig, generate_page


@pytest.fixture(scope="module")
def page():
    return generate_page(SynthConfig(seed=3, lines=1, words_per_line=(3, 3), decoy_ratio=1.0))


@pytest.fixture(scope="module")
def result(page):
    return align_page(page.proposals, page.transcript)


def test_one_labeled_rect_per_position(page, result):
    svg = render_alignment_svg(result)
    assert len(result.positions) >= 3
    assert svg.count("data-position=") == len(result.positions)
    assert svg.count("<text") == len(result.positions)
    for pos in result.positions:
        assert f">{pos.word}</text>" in svg


def test_truth_overlay_dashed(page, result):
    without = render_alignment_svg(result)
    assert "stroke-dasharray" not in without
    with_truth = render_alignment_svg(result, page.truth)
    assert with_truth.count("stroke-dasharray") == len(page.truth.entries)


def test_posterior_boxes_have_probability_tooltips(result):
    svg = render_alignment_svg(result)
    entries = sum(len(pos.posterior) for pos in result.positions)
    assert svg.count("<title>") == entries
    assert "p=" in svg


def test_sub_threshold_posteriors_never_drawn(result):
    for pos in result.positions:
        for entry in pos.posterior:
            assert entry.p >= 1e-6
    svg = render_alignment_svg(result)
    assert "p=0.000000" not in svg


def test_deterministic_output(page, result):
    first = render_alignment_svg(result, page.truth)
    second = render_alignment_svg(result, page.truth)
    assert first == second


def test_labels_are_escaped():
    box = BBox(0, 0, 50, 20)
    hostile = AlignmentResult(
        page_id="p",
        params=AlignmentParams(),
        harvest_mode="hard",
        emission_sign="neg",
        positions=[AlignedPosition(
            position=0, word="a<b&c", viterbi_index=0, viterbi_box=box,
            posterior=[PosteriorEntry(index=0, p=1.0, box=box)],
        )],
        weak_annotations=[],
    )
    svg = render_alignment_svg(hostile)
    assert "a&lt;b&amp;c" in svg
    assert ">a<b&c<" not in svg


def test_viewbox_covers_every_box(page, result):
    svg = render_alignment_svg(result, page.truth)
    header = svg.splitlines()[0]
    view = header.split('viewBox="')[1].split('"')[0]
    x0, y0, w, h = (float(v) for v in view.split())
    boxes = [pos.viterbi_box for pos in result.positions]
    boxes += [e.box for e in page.truth.entries]
    for box in boxes:
        assert x0 <= box.l and box.r <= x0 + w
        assert y0 <= box.t and box.b <= y0 + h
