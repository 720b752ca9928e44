"""Minimal deterministic SVG emission.

Plots are plain text built from fixed-precision coordinates so identical
inputs yield byte-identical files; no rendering backend is involved.
"""

from __future__ import annotations

from pathlib import Path

from .explain import GlobalImportance, ShapExplanation, ShapMatrix


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _value_color(quantile: float) -> str:
    """Blue (low value) to red (high value)."""
    q = min(max(quantile, 0.0), 1.0)
    r = round(40 + 215 * q)
    b = round(255 - 215 * q)
    return f"rgb({r},60,{b})"


def importance_bar_svg(imp: GlobalImportance, title: str = "") -> str:
    width, row_h, left, top = 480, 22, 90, 30
    height = top + row_h * len(imp.feature_names) + 20
    max_score = max(max(abs(s) for s in imp.scores), 1e-12)
    body = [f'<text x="10" y="18">{title or imp.method}</text>']
    order = imp.ranking
    by_name = dict(zip(imp.feature_names, imp.scores))
    for i, name in enumerate(order):
        y = top + i * row_h
        w = abs(by_name[name]) / max_score * (width - left - 20)
        body.append(f'<text x="10" y="{y + 14}">{name}</text>')
        body.append(
            f'<rect x="{left}" y="{y + 3}" width="{_fmt(w)}" height="{row_h - 8}" '
            f'fill="{"#b33" if by_name[name] >= 0 else "#36b"}"/>'
        )
        body.append(f'<text x="{_fmt(left + w + 4)}" y="{y + 14}">{by_name[name]:.4g}</text>')
    return _svg(width, height, body)


def calibration_curve_svg(points: list[tuple[float, float, int]], title: str = "calibration") -> str:
    size, margin = 320, 40
    span = size - 2 * margin

    def sx(p: float) -> float:
        return margin + p * span

    def sy(p: float) -> float:
        return size - margin - p * span

    body = [
        f'<text x="10" y="18">{title}</text>',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#999"/>',
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(1)}" stroke="#999" stroke-dasharray="4 3"/>',
    ]
    if points:
        path = " ".join(f"{_fmt(sx(mp))},{_fmt(sy(fp))}" for mp, fp, _ in points)
        body.append(f'<polyline points="{path}" fill="none" stroke="#36b" stroke-width="2"/>')
        for mp, fp, count in points:
            body.append(
                f'<circle cx="{_fmt(sx(mp))}" cy="{_fmt(sy(fp))}" r="3" fill="#36b">'
                f"<title>n={count}</title></circle>"
            )
    body.append(f'<text x="{margin}" y="{size - 8}">mean predicted probability</text>')
    return _svg(size, size, body)


def local_explanation_svg(expl: ShapExplanation, title: str = "") -> str:
    """Horizontal attribution bars, colored blue-to-red by value quantile
    within the explained sample's own feature values."""
    width, row_h, mid, top = 520, 20, 260, 48
    height = top + row_h * len(expl.feature_names) + 24
    max_abs = max(max(abs(p) for p in expl.phi), 1e-12)
    scale = (width / 2 - 80) / max_abs
    ranked = sorted(range(len(expl.phi)), key=lambda i: (-abs(expl.phi[i]), i))
    values = expl.feature_values
    vmin, vmax = float(min(values)), float(max(values))
    vspan = (vmax - vmin) or 1.0
    body = [
        f'<text x="10" y="18">{title or expl.sample_id}</text>',
        f'<text x="10" y="34">output={expl.model_output:.4f} base={expl.base_value:.4f}</text>',
        f'<line x1="{mid}" y1="{top - 6}" x2="{mid}" y2="{height - 18}" stroke="#999"/>',
    ]
    for row, i in enumerate(ranked):
        y = top + row * row_h
        phi = float(expl.phi[i])
        w = abs(phi) * scale
        x = mid if phi >= 0 else mid - w
        color = _value_color((float(values[i]) - vmin) / vspan)
        body.append(f'<rect x="{_fmt(x)}" y="{y}" width="{_fmt(w)}" height="{row_h - 6}" fill="{color}"/>')
        body.append(f'<text x="10" y="{y + 11}">{expl.feature_names[i]}={values[i]:.4g}</text>')
        body.append(f'<text x="{width - 70}" y="{y + 11}">{phi:+.4f}</text>')
    return _svg(width, height, body)


def shap_summary_svg(mat: ShapMatrix, title: str = "attribution summary") -> str:
    """One row per feature; each sample is a dot at its attribution value,
    colored by the sample's value quantile for that feature."""
    width, row_h, left, top = 560, 26, 70, 40
    height = top + row_h * len(mat.feature_names) + 24
    max_abs = max(float(abs(mat.phi).max()), 1e-12)
    span = width - left - 30
    mid = left + span / 2
    scale = span / (2 * max_abs)
    body = [
        f'<text x="10" y="18">{title}</text>',
        f'<line x1="{_fmt(mid)}" y1="{top - 8}" x2="{_fmt(mid)}" y2="{height - 16}" stroke="#999"/>',
    ]
    for f, name in enumerate(mat.feature_names):
        y = top + f * row_h + row_h / 2
        body.append(f'<text x="10" y="{_fmt(y + 4)}">{name}</text>')
        order = sorted(range(len(mat)), key=lambda i: mat.phi[i, f])
        for rank, i in enumerate(order):
            # deterministic vertical fan-out stands in for a density axis
            jitter = (rank % 7 - 3) * 1.6
            body.append(
                f'<circle cx="{_fmt(mid + mat.phi[i, f] * scale)}" cy="{_fmt(y + jitter)}" '
                f'r="2" fill="{_value_color(mat.quantiles[i, f])}" fill-opacity="0.7"/>'
            )
    return _svg(width, height, body)


def write_svg(text: str, path: Path) -> None:
    Path(path).write_text(text)
