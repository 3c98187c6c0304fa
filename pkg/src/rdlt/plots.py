"""Curve serialization and rendering: CSV, SVG, PNG figures, basis mosaics.

The CSV format is the interchange point between evaluation and plotting:
a ``label,Q,rate_bpp,psnr_db`` header, one row per point, float fields in
shortest round-trip form, optional leading ``# provenance: {json}`` comment
carrying the resolved run configuration.  The SVG renderer is hand-rolled
and fully deterministic (fixed palette, fixed tick logic, one polyline
element per curve); the PNG renderer goes through matplotlib for report
figures and pins its metadata so repeated renders are byte-identical.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .codec_eval import RDCurve, RDPoint
from .transforms import TransformMatrix, to_dense

CSV_HEADER = "label,Q,rate_bpp,psnr_db"

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(value: float) -> str:
    return repr(float(value))


def save_curves_csv(curves: list, path: str, provenance: dict | None = None) -> None:
    lines = []
    if provenance is not None:
        lines.append("# provenance: " + json.dumps(provenance, sort_keys=True))
    lines.append(CSV_HEADER)
    for curve in curves:
        for p in curve.points:
            lines.append(f"{curve.label},{_fmt(p.step)},{_fmt(p.rate_bpp)},{_fmt(p.psnr_db)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_curves_csv(path: str) -> tuple[list, dict | None]:
    """Read curves grouped by label (in first-seen order) plus any provenance."""
    provenance = None
    curves: dict[str, RDCurve] = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if ln.startswith("# provenance: "):
                provenance = json.loads(ln[len("# provenance: "):])
            continue
        if ln.strip():
            body.append(ln)
    if not body or body[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {CSV_HEADER!r}")
    for ln in body[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}: malformed row {ln!r}")
        label = parts[0]
        try:
            step, rate, psnr = (float(v) for v in parts[1:])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric field in row {ln!r}") from exc
        curves.setdefault(label, RDCurve(label)).points.append(RDPoint(step, rate, psnr))
    if not curves:
        raise ValueError(f"{path}: no data rows")
    return list(curves.values()), provenance


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_curves_svg(curves: list, path: str, title: str = "",
                      provenance: dict | None = None) -> None:
    """Write a deterministic standalone SVG with one polyline per curve."""
    if not curves:
        raise ValueError("nothing to plot")
    width, height = 640, 420
    ml, mr, mt, mb = 62, 16, 34, 46
    pw, ph = width - ml - mr, height - mt - mb
    rates = np.concatenate([c.rates() for c in curves])
    psnrs = np.concatenate([c.psnrs() for c in curves])
    x_lo, x_hi = float(rates.min()), float(rates.max())
    y_lo, y_hi = float(psnrs.min()), float(psnrs.max())
    x_pad = (x_hi - x_lo) * 0.05 or 0.1
    y_pad = (y_hi - y_lo) * 0.05 or 0.5
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'font-family="sans-serif" font-size="12">'
    )
    if provenance is not None:
        parts.append("<!-- provenance: " + json.dumps(provenance, sort_keys=True) + " -->")
    parts.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{title}</text>')
    # Axes and ticks.
    parts.append(
        f'<path d="M {ml} {mt} L {ml} {mt + ph} L {ml + pw} {mt + ph}" '
        f'stroke="black" fill="none"/>'
    )
    for tx in _ticks(x_lo + x_pad, x_hi - x_pad):
        parts.append(
            f'<line x1="{sx(tx):.1f}" y1="{mt + ph}" x2="{sx(tx):.1f}" y2="{mt + ph + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(tx):.1f}" y="{mt + ph + 18}" text-anchor="middle">{tx:.3g}</text>'
        )
    for ty in _ticks(y_lo + y_pad, y_hi - y_pad):
        parts.append(
            f'<line x1="{ml - 4}" y1="{sy(ty):.1f}" x2="{ml}" y2="{sy(ty):.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(ty) + 4:.1f}" text-anchor="end">{ty:.1f}</text>'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">rate (bpp)</text>'
    )
    parts.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">PSNR (dB)</text>'
    )
    for i, curve in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(p.rate_bpp):.2f},{sy(p.psnr_db):.2f}" for p in curve.points)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        for p in curve.points:
            parts.append(
                f'<circle cx="{sx(p.rate_bpp):.2f}" cy="{sy(p.psnr_db):.2f}" r="2.4" fill="{color}"/>'
            )
        ly = mt + 14 + 16 * i
        parts.append(
            f'<line x1="{ml + 10}" y1="{ly - 4}" x2="{ml + 34}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{ml + 40}" y="{ly}">{curve.label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def render_curves_png(curves: list, path: str, title: str = "",
                      provenance: dict | None = None) -> None:
    """Matplotlib report figure; metadata pinned for byte-stable output."""
    if not curves:
        raise ValueError("nothing to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=110)
    for i, curve in enumerate(curves):
        ax.plot(
            curve.rates(),
            curve.psnrs(),
            marker="o",
            markersize=4,
            linewidth=1.4,
            color=_PALETTE[i % len(_PALETTE)],
            label=curve.label,
        )
    ax.set_xlabel("rate (bpp)")
    ax.set_ylabel("PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.35)
    ax.legend()
    fig.tight_layout()
    metadata = {"Software": "rdlt"}
    if provenance is not None:
        metadata["Description"] = json.dumps(provenance, sort_keys=True)
    fig.savefig(path, format="png", metadata=metadata)
    plt.close(fig)


def basis_mosaic(transform: TransformMatrix) -> np.ndarray:
    """Grid image of all basis vectors as tiles, matrix-column order.

    Tile (r, c) shows basis vector r*n + c reshaped row-major to n x n, each
    tile min-max normalized to [0, 255] on its own (constant tiles map to
    128), with 1-pixel black separators between tiles.
    """
    dense = to_dense(transform)
    n = dense.n
    num = n * n
    side = n * n + (n - 1)
    out = np.zeros((side, side), dtype=np.uint8)
    for j in range(num):
        tile = dense.coeffs[:, j].reshape(n, n)
        span = float(tile.max() - tile.min())
        if span < 1e-12:
            img = np.full((n, n), 128, dtype=np.uint8)
        else:
            img = np.rint((tile - tile.min()) / span * 255.0).astype(np.uint8)
        r0 = (j // n) * (n + 1)
        c0 = (j % n) * (n + 1)
        out[r0 : r0 + n, c0 : c0 + n] = img
    return out
