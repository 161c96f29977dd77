"""Minimal self-contained SVG charts (no plotting dependency).

Both chart types share a fixed 800x500 viewBox, draw their own axes,
ticks, legend and per-point numeric labels. Values are labeled with
exactly three decimals so chart text can be diffed against the CSV they
were rendered from.
"""

from __future__ import annotations

WIDTH, HEIGHT = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 180, 50, 70

PALETTE = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"]


def _axis_ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _frame(title, x_label, y_label, meta=None):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'font-family="sans-serif" font-size="13">',
    ]
    if meta:
        safe = str(meta).replace("--", "- -")
        parts.append(f"<!-- {safe} -->")
    parts += [
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="28" text-anchor="middle" font-size="17">{_esc(title)}</text>',
        f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2}" y="{HEIGHT - 18}" '
        f'text-anchor="middle">{_esc(x_label)}</text>',
        f'<text x="22" y="{(MARGIN_T + HEIGHT - MARGIN_B) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 22 {(MARGIN_T + HEIGHT - MARGIN_B) / 2})">{_esc(y_label)}</text>',
    ]
    return parts


def _y_scale(series):
    vals = [v for vs in series.values() for v in vs if v is not None]
    lo = min(0.0, min(vals))
    hi = max(vals)
    pad = 0.08 * (hi - lo if hi > lo else 1.0)
    hi += pad
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def to_y(v):
        return MARGIN_T + plot_h * (1.0 - (v - lo) / (hi - lo))

    return lo, hi, to_y


def _y_axis(parts, lo, hi, to_y):
    x0 = MARGIN_L
    x1 = WIDTH - MARGIN_R
    for t in _axis_ticks(lo, hi):
        y = to_y(t)
        parts.append(
            f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end">{t:.2f}</text>'
        )
    parts.append(
        f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{HEIGHT - MARGIN_B}" x2="{x1}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
    )


def _legend(parts, labels):
    x = WIDTH - MARGIN_R + 16
    y = MARGIN_T + 6
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<rect x="{x}" y="{y + 22 * i}" width="14" height="14" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{x + 20}" y="{y + 22 * i + 12}">{_esc(label)}</text>'
        )


def line_chart(x_values, series, title="", x_label="", y_label="", meta=None):
    """Polyline per series over shared numeric x values; returns SVG text.

    series maps label -> list of y values aligned with x_values (None for
    gaps). Every point carries a 3-decimal text label; meta, when given,
    is embedded as a comment (e.g. the producing config hash).
    """
    if not series or not x_values:
        raise ValueError("line chart needs at least one series and one x value")
    parts = _frame(title, x_label, y_label, meta=meta)
    lo, hi, to_y = _y_scale(series)
    _y_axis(parts, lo, hi, to_y)
    span = max(x_values) - min(x_values)
    if span == 0:
        span = 1.0
    x0 = min(x_values)
    plot_w = WIDTH - MARGIN_L - MARGIN_R

    def to_x(v):
        return MARGIN_L + plot_w * (v - x0) / span

    for xv in x_values:
        parts.append(
            f'<text x="{to_x(xv):.1f}" y="{HEIGHT - MARGIN_B + 20}" '
            f'text-anchor="middle">{xv:g}</text>'
        )
    for i, (label, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [
            (to_x(xv), to_y(yv))
            for xv, yv in zip(x_values, ys)
            if yv is not None
        ]
        poly = " ".join(f"{px:.1f},{py:.1f}" for px, py in pts)
        parts.append(
            f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for (px, py), yv in zip(pts, [y for y in ys if y is not None]):
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3.5" fill="{color}"/>')
            parts.append(
                f'<text x="{px:.1f}" y="{py - 8:.1f}" text-anchor="middle" '
                f'font-size="11">{yv:.3f}</text>'
            )
    _legend(parts, list(series))
    parts.append("</svg>")
    return "\n".join(parts)


def grouped_bar_chart(categories, series, title="", x_label="", y_label="", meta=None):
    """One bar group per category, one bar per series; returns SVG text."""
    if not series or not categories:
        raise ValueError("bar chart needs at least one series and one category")
    parts = _frame(title, x_label, y_label, meta=meta)
    lo, hi, to_y = _y_scale(series)
    _y_axis(parts, lo, hi, to_y)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    n_cat = len(categories)
    n_ser = len(series)
    group_w = plot_w / n_cat
    bar_w = 0.8 * group_w / n_ser
    base_y = to_y(max(lo, 0.0))
    for c, cat in enumerate(categories):
        cx = MARGIN_L + group_w * (c + 0.5)
        parts.append(
            f'<text x="{cx:.1f}" y="{HEIGHT - MARGIN_B + 20}" '
            f'text-anchor="middle">{_esc(cat)}</text>'
        )
        for s, (label, ys) in enumerate(series.items()):
            v = ys[c]
            if v is None:
                continue
            color = PALETTE[s % len(PALETTE)]
            x = cx - 0.4 * group_w + s * bar_w
            y = to_y(v)
            h = abs(base_y - y)
            parts.append(
                f'<rect x="{x:.1f}" y="{min(y, base_y):.1f}" width="{bar_w - 2:.1f}" '
                f'height="{h:.1f}" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x + bar_w / 2 - 1:.1f}" y="{min(y, base_y) - 5:.1f}" '
                f'text-anchor="middle" font-size="11">{v:.3f}</text>'
            )
    _legend(parts, list(series))
    parts.append("</svg>")
    return "\n".join(parts)
