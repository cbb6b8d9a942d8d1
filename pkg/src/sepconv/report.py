"""Static SVG line charts of a training metrics file."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .train import read_metrics

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 130, 40, 50
COLORS = ("#1f77b4", "#ff7f0e")
TICKS = 5

CHARTS = {
    "loss": ("Loss per epoch", "loss", (("train", "train_loss"), ("val", "val_loss"))),
    "accuracy": ("Accuracy per epoch", "accuracy", (("train", "train_acc"), ("val", "val_acc"))),
}


def _range(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def line_chart(epochs: list[float], series: list[tuple[str, list[float]]], title: str, y_label: str) -> str:
    """SVG document with one polyline per series; larger values sit higher on the page."""
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    x_lo, x_hi = _range(epochs)
    y_lo, y_hi = _range([v for _, vals in series for v in vals])

    def px(x):
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    bottom, right = MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text class="title" x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}" stroke="black"/>',
        f'<text class="x-label" x="{MARGIN_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">epoch</text>',
        f'<text class="y-label" x="18" y="{MARGIN_TOP + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {MARGIN_TOP + plot_h / 2:.1f})">{escape(y_label)}</text>',
    ]
    for i in range(TICKS + 1):
        v = y_lo + (y_hi - y_lo) * i / TICKS
        y = py(v)
        out.append(f'<line x1="{MARGIN_LEFT - 4}" y1="{y:.2f}" x2="{MARGIN_LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text class="y-tick" x="{MARGIN_LEFT - 6}" y="{y + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for e in sorted(set(epochs)) if len(set(epochs)) <= 20 else epochs[::max(len(epochs) // 10, 1)]:
        x = px(e)
        out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="black"/>')
        out.append(f'<text class="x-tick" x="{x:.2f}" y="{bottom + 16}" text-anchor="middle">{e:g}</text>')
    for k, (name, vals) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(epochs, vals))
        out.append(f'<polyline class="series" data-series="{escape(name)}" points="{points}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN_TOP + 10 + 18 * k
        out.append(f'<line x1="{right + 15}" y1="{ly}" x2="{right + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{right + 40}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(metrics_path, out_dir) -> dict[str, Path]:
    """Write ``loss.svg`` and ``accuracy.svg`` for a metrics file into ``out_dir``."""
    rows = read_metrics(metrics_path)
    epochs = [r["epoch"] for r in rows]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for key, (title, y_label, columns) in CHARTS.items():
        series = [(name, [r[col] for r in rows]) for name, col in columns]
        path = out_dir / f"{key}.svg"
        path.write_text(line_chart(epochs, series, title, y_label), encoding="utf-8")
        written[key] = path
    return written
