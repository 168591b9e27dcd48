"""Minimal static SVG charts (line curve, bar chart with threshold)."""

from __future__ import annotations

from xml.sax.saxutils import escape

W, H = 640, 400
ML, MR, MT, MB = 70, 20, 40, 60


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
        f'<text x="{W / 2:.1f}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {H / 2:.1f})">{escape(ylabel)}</text>',
    ]


def _yticks(ymax, sy):
    out = []
    for k in range(6):
        v = ymax * k / 5
        y = sy(v)
        out.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return out


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, ymax: float = 1.0) -> str:
    """``series`` maps a label to a list of (x, y) points."""
    xs = [x for pts in series.values() for x, _ in pts] or [0, 1]
    x0, x1 = min(xs), max(xs)
    x1 = x1 if x1 > x0 else x0 + 1

    def sx(x):
        return ML + (x - x0) / (x1 - x0) * (W - ML - MR)

    def sy(y):
        return H - MB - y / ymax * (H - MT - MB)

    parts = _frame(title, xlabel, ylabel) + _yticks(ymax, sy)
    for x in sorted(set(xs)):
        parts.append(f'<text x="{sx(x):.1f}" y="{H - MB + 16}" text-anchor="middle">{x:g}</text>')
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for k, (label, pts) in enumerate(series.items()):
        c = colors[k % len(colors)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{c}"/>')
        parts.append(f'<text x="{W - MR - 150}" y="{MT + 16 * (k + 1)}" fill="{c}">'
                     f'{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(labels, values, title: str, xlabel: str, ylabel: str,
              threshold: float | None = None, highlight=()) -> str:
    ymax = max([*values, threshold or 0.0, 1e-12]) * 1.1
    n = max(len(values), 1)
    bw = (W - ML - MR) / n

    def sy(y):
        return H - MB - y / ymax * (H - MT - MB)

    parts = _frame(title, xlabel, ylabel) + _yticks(ymax, sy)
    for k, (lab, v) in enumerate(zip(labels, values)):
        x = ML + k * bw
        fill = "#d62728" if lab in highlight else "#1f77b4"
        parts.append(f'<rect x="{x + bw * 0.15:.1f}" y="{sy(v):.1f}" width="{bw * 0.7:.1f}" '
                     f'height="{H - MB - sy(v):.1f}" fill="{fill}"/>')
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{H - MB + 16}" '
                     f'text-anchor="middle">{escape(str(lab))}</text>')
    if threshold is not None:
        y = sy(threshold)
        parts.append(f'<line x1="{ML}" y1="{y:.1f}" x2="{W - MR}" y2="{y:.1f}" '
                     f'stroke="black" stroke-dasharray="6,4"/>')
        parts.append(f'<text x="{W - MR}" y="{y - 5:.1f}" text-anchor="end">'
                     f'threshold {threshold:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
