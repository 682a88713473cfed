"""Render attention vectors over tokens as terminal or static HTML heatmaps.

Each attention layer becomes one row of colored tokens; color intensity is
proportional to the attention weight and weights below a threshold
(default 1.5/n, i.e. clearly above uniform) stay uncolored.  Segment
layers anchor window i at token i, so a weight at bank position i shades
tokens i..i+t-1 while the raw per-position weight is preserved verbatim in
the HTML data attributes.
"""

from __future__ import annotations

import html as html_mod
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import RelationInstance
from .errors import TraceError
from .sms import SmsOutput

# fixed legend: layer name -> base RGB
LAYER_COLORS = {
    "mention_1": (202, 0, 32),
    "mention_2": (230, 97, 1),
    "global": (5, 113, 176),
    "segment_1": (0, 136, 55),
    "segment_2": (123, 50, 148),
    "segment_3": (1, 133, 113),
}
_FALLBACK_COLOR = (90, 90, 90)
_SEGMENT = re.compile(r"^segment_(\d+)$")

# 256-color ramp for terminal output, light to saturated
_TERM_RAMP = (223, 217, 216, 210, 203, 196)


@dataclass
class AttentionTrace:
    """Token sequence plus named attention layers of matching length."""

    tokens: list[str]
    layers: dict[str, np.ndarray]
    predicted: str = ""
    gold: str = ""
    instance_id: str = ""

    def validate(self) -> "AttentionTrace":
        n = len(self.tokens)
        if n == 0 or not self.layers:
            raise TraceError("trace needs tokens and at least one layer")
        for name, w in self.layers.items():
            w = np.asarray(w, dtype=float)
            if w.shape != (n,):
                raise TraceError(f"layer {name!r} has shape {w.shape}, expected ({n},)")
            if abs(float(w.sum()) - 1.0) > 1e-6 or (w < 0).any():
                raise TraceError(f"layer {name!r} is not a distribution "
                                 f"(sum {float(w.sum()):.8f})")
            self.layers[name] = w
        return self

    @property
    def n(self) -> int:
        return len(self.tokens)


def trace_from_output(inst: RelationInstance, out: SmsOutput,
                      predicted: str = "") -> AttentionTrace:
    """Collect every attention vector an SmsOutput recorded."""
    layers: dict[str, np.ndarray] = {}
    if out.attn_mention_1 is not None:
        layers["mention_1"] = out.attn_mention_1.data.astype(float)
        layers["mention_2"] = out.attn_mention_2.data.astype(float)
    if out.attn_global is not None:
        layers["global"] = out.attn_global.data.astype(float)
    for t, w in sorted(out.attn_segment.items()):
        layers[f"segment_{t}"] = w.data.astype(float)
    return AttentionTrace(tokens=list(inst.tokens), layers=layers,
                          predicted=predicted, gold=inst.relation,
                          instance_id=inst.id).validate()


def _segment_width(layer_name: str) -> int:
    m = _SEGMENT.match(layer_name)
    return int(m.group(1)) if m else 1


def _token_intensities(weights: np.ndarray, t: int) -> np.ndarray:
    """Spread each window weight onto the tokens it covers (max-combined)."""
    if t <= 1:
        return weights
    n = weights.shape[0]
    out = np.zeros(n)
    for i in range(n):
        lo = max(0, i - t + 1)
        out[i] = weights[lo:i + 1].max()
    return out


def emit_heatmap(trace: AttentionTrace, format: str = "terminal",
                 threshold: float | None = None, color: bool = True) -> str:
    """Render one heatmap row per attention layer.

    ``threshold`` is the minimum weight that gets colorized (default
    1.5/n); in no-color terminal mode, above-threshold tokens are annotated
    with their weight instead.
    """
    trace.validate()
    if format not in ("terminal", "html"):
        raise TraceError(f"unknown heatmap format {format!r}")
    thr = 1.5 / trace.n if threshold is None else threshold
    if format == "html":
        return _emit_html(trace, thr)
    return _emit_terminal(trace, thr, color)


def _emit_terminal(trace: AttentionTrace, thr: float, color: bool) -> str:
    lines = []
    header = f"{trace.instance_id}  gold={trace.gold}"
    if trace.predicted:
        header += f"  predicted={trace.predicted}"
    lines.append(header.strip())
    width = max(len(name) for name in trace.layers)
    for name, weights in trace.layers.items():
        shown = _token_intensities(weights, _segment_width(name))
        peak = float(shown.max()) or 1.0
        cells = []
        for tok, w in zip(trace.tokens, shown):
            if w < thr:
                cells.append(tok)
            elif color:
                level = _TERM_RAMP[min(len(_TERM_RAMP) - 1,
                                       int(w / peak * (len(_TERM_RAMP) - 1) + 0.5))]
                cells.append(f"\x1b[48;5;{level}m{tok}\x1b[0m")
            else:
                cells.append(f"{tok}[{w:.2f}]")
        lines.append(f"{name:<{width}}  " + " ".join(cells))
    return "\n".join(lines)


def _emit_html(trace: AttentionTrace, thr: float) -> str:
    rows = [
        "<tr><th></th>"
        + "".join(f"<th>{html_mod.escape(tok)}</th>" for tok in trace.tokens)
        + "</tr>"
    ]
    for name, weights in trace.layers.items():
        rgb = LAYER_COLORS.get(name, _FALLBACK_COLOR)
        shown = _token_intensities(weights, _segment_width(name))
        peak = float(shown.max()) or 1.0
        cells = []
        for tok, w, disp in zip(trace.tokens, weights, shown):
            style = ""
            if disp >= thr:
                alpha = 0.15 + 0.85 * (disp / peak)
                style = (f' style="background-color:'
                         f'rgba({rgb[0]},{rgb[1]},{rgb[2]},{alpha:.3f})"')
            cells.append(f'<td data-weight="{w:.6f}"{style}>{html_mod.escape(tok)}</td>')
        rows.append(f"<tr><th>{html_mod.escape(name)}</th>" + "".join(cells) + "</tr>")
    legend = " &middot; ".join(
        f'<span style="color:rgb({r},{g},{b})">&#9632;</span> {html_mod.escape(name)}'
        for name, (r, g, b) in LAYER_COLORS.items() if name in trace.layers)
    title = html_mod.escape(
        f"{trace.instance_id}  gold={trace.gold}"
        + (f"  predicted={trace.predicted}" if trace.predicted else ""))
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n"
        "<style>\n"
        "body { font-family: sans-serif; }\n"
        "table { border-collapse: collapse; }\n"
        "th { text-align: left; padding: 2px 8px 2px 2px; font-weight: normal;"
        " color: #444; }\n"
        "td { padding: 2px 4px; white-space: nowrap; }\n"
        "</style></head>\n<body>\n"
        f"<h3>{title}</h3>\n<table>\n" + "\n".join(rows) + "\n</table>\n"
        f"<p>{legend}</p>\n</body></html>\n"
    )


def parse_html_weights(document: str) -> dict[str, list[float]]:
    """Recover the raw per-layer weights from an emitted HTML heatmap."""
    layers: dict[str, list[float]] = {}
    for row in re.findall(r"<tr><th>(.+?)</th>(.*?)</tr>", document, re.S):
        name, cells = row
        weights = [float(w) for w in re.findall(r'data-weight="([0-9.eE+-]+)"', cells)]
        if weights:
            layers[html_mod.unescape(name)] = weights
    return layers


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------


@dataclass
class LayerTopK:
    """Most-attended tokens/segments for one layer across many traces."""

    counts: list[tuple[str, int]] = field(default_factory=list)
    argmax_positions: list[int] = field(default_factory=list)


def top_k_report(traces: Sequence[AttentionTrace], k: int = 1) -> dict[str, LayerTopK]:
    """Pool each trace's top-k attention positions per layer.

    Segment layers report the covered n-gram text; ties resolve to the
    lowest position index.  ``argmax_positions`` keeps the per-trace top-1
    position in input order for downstream audits.
    """
    if not traces:
        raise TraceError("top_k_report needs at least one trace")
    counters: dict[str, Counter] = {}
    argmax: dict[str, list[int]] = {}
    for trace in traces:
        trace.validate()
        for name, weights in trace.layers.items():
            t = _segment_width(name)
            # stable top-k: sort by (-weight, position)
            order = sorted(range(trace.n), key=lambda i: (-weights[i], i))
            top = order[:k]
            argmax.setdefault(name, []).append(top[0])
            counter = counters.setdefault(name, Counter())
            for i in top:
                text = " ".join(trace.tokens[i:i + t])
                counter[text] += 1
    report = {}
    for name, counter in counters.items():
        ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        report[name] = LayerTopK(counts=ranked, argmax_positions=argmax[name])
    return report


def format_top_k(report: dict[str, LayerTopK], limit: int = 10) -> str:
    lines = []
    for name, layer in report.items():
        lines.append(f"[{name}]")
        for text, freq in layer.counts[:limit]:
            lines.append(f"  {freq:>5}  {text}")
    return "\n".join(lines)
