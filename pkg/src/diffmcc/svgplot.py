"""Static precision-recall plot as a standalone SVG string, with F1 isolines."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .metrics import PRCurve

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
W, H, PAD = 480, 420, 50


def _xy(recall: float, precision: float) -> tuple[float, float]:
    return PAD + recall / 100 * (W - 2 * PAD), H - PAD - precision / 100 * (H - 2 * PAD)


def render_pr_svg(curves: dict[str, PRCurve], base_rate: float | None = None) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
             f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>']
    for f1 in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
        pts = []
        for i in range(1, 201):
            r = i / 200
            if 2 * r - f1 <= 0:
                continue
            p = f1 * r / (2 * r - f1)
            if p <= 1:
                pts.append(_xy(100 * r, 100 * p))
        if pts:
            d = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            parts.append(f'<polyline points="{d}" fill="none" stroke="#999" stroke-dasharray="2,3"/>')
    for tick in range(0, 101, 20):
        x, _ = _xy(tick, 0)
        _, y = _xy(0, tick)
        parts.append(f'<text x="{x:.1f}" y="{H - PAD + 15}" text-anchor="middle">{tick}</text>')
        parts.append(f'<text x="{PAD - 6}" y="{y + 4:.1f}" text-anchor="end">{tick}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">Recall (%)</text>')
    parts.append(f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" text-anchor="middle">Precision (%)</text>')
    for k, (name, curve) in enumerate(curves.items()):
        color = _COLORS[k % len(_COLORS)]
        d = " ".join("{:.1f},{:.1f}".format(*_xy(p.recall, p.precision)) for p in curve.points)
        parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 + 13 * k}" text-anchor="end" fill="{color}">{escape(name)}</text>')
    if base_rate is not None:
        x, y = _xy(100, 100 * base_rate)
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
