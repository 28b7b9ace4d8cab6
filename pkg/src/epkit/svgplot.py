"""Minimal hand-emitted SVG line plots (no plotting dependency).

Output is a plain string built deterministically, so identical data always
produces identical bytes.
"""

from __future__ import annotations


def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".")


def line_plot(
    series: list[float],
    thresholds: list[float] | None = None,
    title: str = "",
    width: int = 720,
    height: int = 260,
    margin: int = 42,
) -> str:
    """One polyline over sample index, with dashed horizontal threshold lines."""
    ys = [float(v) for v in series]
    thresholds = [float(t) for t in (thresholds or [])]
    y_max = max([*ys, *thresholds, 1e-12]) * 1.05
    y_min = 0.0
    n = max(len(ys), 2)
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin

    def px(i: int) -> float:
        return margin + inner_w * i / (n - 1)

    def py(v: float) -> float:
        return height - margin - inner_h * (v - y_min) / (y_max - y_min)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black" stroke-width="1"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black" stroke-width="1"/>',
        f'<text x="{margin}" y="{height - margin + 16}" font-size="11">0</text>',
        f'<text x="{width - margin - 10}" y="{height - margin + 16}" font-size="11">{len(ys) - 1}</text>',
        f'<text x="{4}" y="{margin + 4}" font-size="11">{_fmt(y_max)}</text>',
        f'<text x="{4}" y="{height - margin}" font-size="11">0</text>',
    ]
    if title:
        parts.append(f'<text x="{margin}" y="{margin - 14}" font-size="13">{title}</text>')
    if ys:
        pts = " ".join(f"{_fmt(px(i))},{_fmt(py(v))}" for i, v in enumerate(ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>'
        )
    for t in thresholds:
        y = py(min(t, y_max))
        parts.append(
            f'<line x1="{margin}" y1="{_fmt(y)}" x2="{width - margin}" y2="{_fmt(y)}" '
            f'stroke="#c03020" stroke-width="1" stroke-dasharray="6,4"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{_fmt(y + 4)}" font-size="10" '
            f'fill="#c03020">{_fmt(t)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
