"""Hand-emitted SVG line plots; same data, same bytes."""

WIDTH, HEIGHT = 640, 420
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(v):
    return f"{v:.6g}"


def line_plot(xs, series, title="", xlabel="", ylabel=""):
    """Render one or more (name -> ys) series over shared xs into SVG text."""
    xs = list(xs)
    all_y = [y for ys in series.values() for y in ys]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    iw = WIDTH - 2 * MARGIN
    ih = HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * iw

    def py(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ih

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(
            f'<text x="{_fmt(px(xv))}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
            f'font-size="10">{_fmt(xv)}</text>'
        )
        parts.append(
            f'<text x="{MARGIN - 6}" y="{_fmt(py(yv) + 3)}" text-anchor="end" '
            f'font-size="10">{_fmt(yv)}</text>'
        )
    for k, (name, ys) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 14 + 14 * k}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_line_plot(path, xs, series, title="", xlabel="", ylabel=""):
    with open(path, "w") as f:
        f.write(line_plot(xs, series, title=title, xlabel=xlabel, ylabel=ylabel))
