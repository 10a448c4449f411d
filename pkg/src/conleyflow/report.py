"""Report files: verdict JSON, per-parameter CSV and small SVG plots."""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analysis import CSV_HEADER
from .cubegrid import CellSet

SCHEMA = "conleyflow.verdict"
SCHEMA_VERSION = 1


def _clean(obj):
    # JSON has no NaN or infinity; map them to null so output stays valid
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def verdict_document(command: str, meta: dict, result: dict) -> dict:
    return {"schema": SCHEMA, "version": SCHEMA_VERSION, "command": command, **meta, "result": result}


def dumps_json(doc: dict) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, doc: dict) -> Path:
    path.write_text(dumps_json(doc), encoding="utf-8")
    return path


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, rows: Iterable[Sequence]) -> Path:
    path.write_text(dumps_csv(rows), encoding="utf-8")
    return path


# ---------------------------------------------------------------- SVG


def _svg(width: int, height: int, body: list[str], title: str, timestamp: bool) -> str:
    head = ['<?xml version="1.0" encoding="UTF-8"?>']
    if timestamp:
        head.append(f"<!-- generated {datetime.now(timezone.utc).isoformat(timespec='seconds')} -->")
    head.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    head.append(f"<title>{title}</title>")
    head.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    return "\n".join(head + body + ["</svg>", ""])


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def diameter_plot(points: Sequence[tuple[float, float]], title: str = "diameter vs lambda",
                  timestamp: bool = True) -> str:
    """Polyline of (lambda, diameter) pairs with labelled axis ranges."""
    W, H, m = 480, 320, 50
    body: list[str] = []
    pts = sorted((float(a), float(b)) for a, b in points if b is not None)
    body.append(f'<line x1="{m}" y1="{H - m}" x2="{W - m}" y2="{H - m}" stroke="black"/>')
    body.append(f'<line x1="{m}" y1="{m}" x2="{m}" y2="{H - m}" stroke="black"/>')
    body.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">lambda</text>')
    body.append(f'<text x="14" y="{H / 2}" font-size="12" transform="rotate(-90 14 {H / 2})" '
                f'text-anchor="middle">diameter</text>')
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = 0.0, max(ys)
        x1 = x1 if x1 > x0 else x0 + 1.0
        y1 = y1 if y1 > y0 else y0 + 1.0

        def sx(x):
            return m + (x - x0) / (x1 - x0) * (W - 2 * m)

        def sy(y):
            return H - m - (y - y0) / (y1 - y0) * (H - 2 * m)

        poly = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        body.append(f'<polyline points="{poly}" fill="none" stroke="#1f5fa8" stroke-width="2"/>')
        for x, y in pts:
            body.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="#1f5fa8"/>')
        body.append(f'<text x="{m}" y="{H - m + 16}" font-size="10">{_fmt(x0)}</text>')
        body.append(f'<text x="{W - m}" y="{H - m + 16}" font-size="10" text-anchor="end">{_fmt(x1)}</text>')
        body.append(f'<text x="{m - 4}" y="{m + 4}" font-size="10" text-anchor="end">{_fmt(y1)}</text>')
    return _svg(W, H, body, title, timestamp)


def cellset_plot(layers: Sequence[tuple[CellSet, str]], title: str = "cell sets",
                 timestamp: bool = True, size: int = 480) -> str:
    """Planar cell sets drawn as rectangles, one row run per rectangle."""
    if not layers:
        return _svg(size, size, [], title, timestamp)
    grid = layers[0][0].grid
    if grid.dim != 2:
        raise ValueError("cell set plots need a planar grid")
    nx, ny = grid.divisions
    cw, ch = size / nx, size / ny
    body: list[str] = []
    for S, color in layers:
        arr = S.array
        body.append(f'<g fill="{color}">')
        for i in range(nx):
            row = arr[i]
            if not row.any():
                continue
            edges = np.flatnonzero(np.diff(np.concatenate([[0], row.astype(np.int8), [0]])))
            for a, b in zip(edges[::2], edges[1::2]):
                # axis 0 runs left to right, axis 1 bottom to top
                body.append(
                    f'<rect x="{_fmt(i * cw)}" y="{_fmt(size - b * ch)}" '
                    f'width="{_fmt(cw)}" height="{_fmt((b - a) * ch)}"/>'
                )
        body.append("</g>")
    return _svg(size, size, body, title, timestamp)


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path
