"""Static SVG rendering of alignment results.

The drawing is layered so the most certain information sits on top:
ground truth (dashed, optional), then per-position posterior boxes
tinted by probability (blue for low, red for high), then the chosen
best-path box per transcript position with its word label. Output is
deterministic: fixed float formatting, no timestamps, no randomness.
"""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

from .alignment import AlignmentResult
from .geometry import BBox
from .pages import GroundTruth

__all__ = ["render_alignment_svg"]

_PAD = 12.0
_TRUTH_STROKE = "#666666"
_VITERBI_STROKE = "#0a7d2c"


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _posterior_color(p: float) -> str:
    hue = int(round(210.0 * (1.0 - min(max(p, 0.0), 1.0))))
    return f"hsl({hue}, 85%, 45%)"


def _rect(box: BBox, attrs: str) -> str:
    return (
        f'<rect x="{_fmt(box.l)}" y="{_fmt(box.t)}" '
        f'width="{_fmt(box.width)}" height="{_fmt(box.height)}" {attrs}/>'
    )


def _label(box: BBox, text: str, fill: str) -> str:
    size = min(max(0.5 * box.height, 7.0), 24.0)
    return (
        f'<text x="{_fmt(box.l + 2.0)}" y="{_fmt(box.t - 3.0)}" '
        f'font-family="monospace" font-size="{_fmt(size)}" '
        f'fill="{fill}">{escape(text)}</text>'
    )


def render_alignment_svg(result: AlignmentResult, truth: GroundTruth | None = None) -> str:
    boxes: list[BBox] = []
    for pos in result.positions:
        boxes.append(pos.viterbi_box)
        boxes.extend(entry.box for entry in pos.posterior)
    if truth is not None:
        boxes.extend(entry.box for entry in truth.entries)

    if boxes:
        x0 = min(b.l for b in boxes) - _PAD
        y0 = min(b.t for b in boxes) - _PAD
        x1 = max(b.r for b in boxes) + _PAD
        y1 = max(b.b for b in boxes) + _PAD
    else:
        x0, y0, x1, y1 = 0.0, 0.0, 1.0, 1.0

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{_fmt(x0)} {_fmt(y0)} {_fmt(x1 - x0)} {_fmt(y1 - y0)}">',
        f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
        f'height="{_fmt(y1 - y0)}" fill="#ffffff"/>',
    ]

    if truth is not None:
        parts.append('<g class="truth">')
        for entry in truth.entries:
            parts.append(
                _rect(
                    entry.box,
                    f'fill="none" stroke="{_TRUTH_STROKE}" stroke-width="1" '
                    'stroke-dasharray="4 3"',
                )
            )
            parts.append(_label(entry.box, entry.label, _TRUTH_STROKE))
        parts.append("</g>")

    parts.append('<g class="posterior">')
    for pos in result.positions:
        for entry in pos.posterior:
            color = _posterior_color(entry.p)
            opacity = 0.15 + 0.5 * entry.p
            tooltip = f"k={pos.position + 1} {pos.word} index={entry.index} p={entry.p:.6f}"
            parts.append(
                f'<rect x="{_fmt(entry.box.l)}" y="{_fmt(entry.box.t)}" '
                f'width="{_fmt(entry.box.width)}" height="{_fmt(entry.box.height)}" '
                f'fill="{color}" fill-opacity="{opacity:.4f}" stroke="{color}" '
                f'stroke-width="0.5"><title>{escape(tooltip)}</title></rect>'
            )
    parts.append("</g>")

    parts.append('<g class="viterbi">')
    for pos in result.positions:
        title = quoteattr(f"k={pos.position + 1}")
        parts.append(
            f'<g data-position={title}>'
            + _rect(
                pos.viterbi_box,
                f'fill="none" stroke="{_VITERBI_STROKE}" stroke-width="2"',
            )
            + _label(pos.viterbi_box, pos.word, _VITERBI_STROKE)
            + "</g>"
        )
    parts.append("</g>")

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
