"""Minimal deterministic SVG line charts.

Everything is vector, text is plain SVG ``<text>``, and all coordinates are
formatted through one fixed-precision helper, so the same data always
produces byte-identical files (diffable in review, no raster payload).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["Series", "line_chart"]

# Okabe-Ito palette: distinguishable under common color-vision deficiencies.
PALETTE = (
    "#0072b2",
    "#d55e00",
    "#009e73",
    "#cc79a7",
    "#e69f00",
    "#56b4e9",
    "#000000",
)

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64.0, 16.0, 28.0, 44.0


@dataclass(frozen=True)
class Series:
    label: str
    x: tuple
    y: tuple
    dashed: bool = False

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        if len(x) != len(y):
            raise ValueError(
                f"series {self.label!r}: {len(x)} x values vs {len(y)} y values"
            )
        if len(x) < 2:
            raise ValueError(f"series {self.label!r}: need at least 2 points")
        if not all(math.isfinite(v) for v in x + y):
            raise ValueError(f"series {self.label!r}: non-finite point")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def _fmt(v: float) -> str:
    """Fixed-precision coordinate formatting (deterministic, compact)."""
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _fmt_tick(v: float) -> str:
    s = f"{v:.6g}"
    return "0" if s == "-0" else s


def _nice_ticks(lo: float, hi: float, target: int = 6):
    """Tick positions at a 1/2/5 decade step covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def line_chart(
    path,
    series,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 720,
    height: int = 440,
    logy: bool = False,
) -> None:
    """Write a self-contained SVG line chart.

    ``series`` is an iterable of :class:`Series`; axes are scaled to the
    joint data range (log10 on y when ``logy``), labeled with the supplied
    unit-bearing strings, and ticked at round values.
    """
    series = list(series)
    if not series:
        raise ValueError("need at least one series")
    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y]
    if logy:
        if min(ys) <= 0:
            raise ValueError("logy requires strictly positive y data")
        ys = [math.log10(v) for v in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(v):
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return _MARGIN_T + (y_hi - v) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        '<g font-family="monospace" font-size="12">',
    ]
    if title:
        out.append(
            f'<text x="{_fmt(width / 2)}" y="18" text-anchor="middle" '
            f'font-size="14">{_escape(title)}</text>'
        )
    # frame
    out.append(
        f'<rect x="{_fmt(_MARGIN_L)}" y="{_fmt(_MARGIN_T)}" '
        f'width="{_fmt(plot_w)}" height="{_fmt(plot_h)}" fill="none" '
        'stroke="#333333" stroke-width="1"/>'
    )
    for t in _nice_ticks(x_lo, x_hi):
        x = px(t)
        out.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(_MARGIN_T + plot_h)}" '
            f'x2="{_fmt(x)}" y2="{_fmt(_MARGIN_T + plot_h + 5)}" '
            'stroke="#333333"/>'
        )
        out.append(
            f'<text x="{_fmt(x)}" y="{_fmt(_MARGIN_T + plot_h + 18)}" '
            f'text-anchor="middle">{_fmt_tick(t)}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi):
        y = py(t)
        label = f"1e{_fmt_tick(t)}" if logy else _fmt_tick(t)
        out.append(
            f'<line x1="{_fmt(_MARGIN_L - 5)}" y1="{_fmt(y)}" '
            f'x2="{_fmt(_MARGIN_L)}" y2="{_fmt(y)}" stroke="#333333"/>'
        )
        out.append(
            f'<text x="{_fmt(_MARGIN_L - 8)}" y="{_fmt(y + 4)}" '
            f'text-anchor="end">{label}</text>'
        )
    if xlabel:
        out.append(
            f'<text x="{_fmt(_MARGIN_L + plot_w / 2)}" '
            f'y="{_fmt(height - 8.0)}" text-anchor="middle">'
            f"{_escape(xlabel)}</text>"
        )
    if ylabel:
        cx, cy = 14.0, _MARGIN_T + plot_h / 2
        out.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" text-anchor="middle" '
            f'transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">'
            f"{_escape(ylabel)}</text>"
        )
    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        ys_s = [math.log10(v) for v in s.y] if logy else s.y
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(s.x, ys_s))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"{dash}/>'
        )
        # legend entry, top-right inside the frame
        lx = _MARGIN_L + plot_w - 150.0
        ly = _MARGIN_T + 14.0 + 16.0 * idx
        out.append(
            f'<line x1="{_fmt(lx)}" y1="{_fmt(ly - 4)}" x2="{_fmt(lx + 22)}" '
            f'y2="{_fmt(ly - 4)}" stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        out.append(
            f'<text x="{_fmt(lx + 28)}" y="{_fmt(ly)}">{_escape(s.label)}</text>'
        )
    out.append("</g>")
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )
