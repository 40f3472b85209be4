"""On-disk formats: sample files, CSV tables, JSON documents and SVG line plots.

Samples are stored as little-endian float64 in row-major order (``samples.bin``)
next to a ``key = value`` text header (``samples.hdr``) giving ``d``, ``n``,
``seed`` and the schedule digest.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
from pathlib import Path

import numpy as np

from .config import json_default
from .errors import ConfigurationError, DomainError

HEADER_SUFFIX = ".hdr"


# ---------------------------------------------------------------------------
# Output directories
# ---------------------------------------------------------------------------


def prepare_output_dir(path, force=False):
    """Create ``path``; refuse to reuse a non-empty directory unless ``force``.

    Raises:
        ConfigurationError: If the directory exists, is non-empty and ``force`` is off.
    """
    path = Path(path)
    if path.exists():
        if not path.is_dir():
            raise ConfigurationError(f"output path '{path}' exists and is not a directory")
        if any(path.iterdir()):
            if not force:
                raise ConfigurationError(
                    f"output directory '{path}' is not empty; pass --force to overwrite it")
            shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


def header_path(path):
    path = Path(path)
    return path.with_suffix(HEADER_SUFFIX)


def write_samples(path, points, seed, schedule_digest="none", extra=None):
    """Write ``points`` to ``path`` and its header to the ``.hdr`` sidecar."""
    path = Path(path)
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    pts.astype("<f8").tofile(path)
    fields = {"d": pts.shape[1], "n": pts.shape[0], "seed": int(seed),
              "schedule": schedule_digest, "dtype": "<f8", "order": "row-major"}
    if extra:
        fields.update(extra)
    header_path(path).write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return path


def read_header(path):
    hdr = header_path(path)
    if not hdr.is_file():
        raise ConfigurationError(f"sample header '{hdr}' not found")
    out = {}
    for line in hdr.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    for key in ("d", "n"):
        if key not in out:
            raise ConfigurationError(f"sample header '{hdr}' lacks '{key}'")
    return out


def read_samples(path):
    """Read a sample file written by :func:`write_samples`.

    Returns:
        (points, header dict).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"sample file '{path}' not found")
    hdr = read_header(path)
    d, n = int(hdr["d"]), int(hdr["n"])
    data = np.fromfile(path, dtype="<f8")
    if data.size != d * n:
        raise DomainError(f"sample file '{path}' holds {data.size} values, header says {n} x {d}")
    return data.reshape(n, d).astype(float), hdr


# ---------------------------------------------------------------------------
# Tables and documents
# ---------------------------------------------------------------------------


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, rows, columns=None):
    """Write a list of dicts as CSV (columns default to the first row's keys)."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return Path(path)


def write_json(path, obj):
    """Write canonical (key-sorted, indented) JSON."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=json_default) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# SVG line plots
# ---------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, log):
    if log:
        return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    step = 10.0 ** math.floor(math.log10(max(hi - lo, 1e-300)))
    if (hi - lo) / step < 4:
        step /= 2.0
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def line_plot_svg(series, title="", xlabel="", ylabel="", logx=False, logy=False,
                  width=640, height=420):
    """Render line series as a standalone SVG document.

    Args:
        series: Iterable of (label, xs, ys) or (label, xs, ys, dashed). Points with
            non-finite or (on log axes) non-positive coordinates are skipped.
        title, xlabel, ylabel: Text labels.
        logx, logy: Logarithmic axes.

    Returns:
        The SVG document as a string.
    """
    ml, mr, mt, mb = 70, 150, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    clean = []
    for item in series:
        label, xs, ys = item[0], np.asarray(item[1], float), np.asarray(item[2], float)
        dashed = bool(item[3]) if len(item) > 3 else False
        ok = np.isfinite(xs) & np.isfinite(ys)
        if logx:
            ok &= xs > 0
        if logy:
            ok &= ys > 0
        clean.append((label, xs[ok], ys[ok], dashed))
    allx = np.concatenate([c[1] for c in clean]) if clean else np.array([])
    ally = np.concatenate([c[2] for c in clean]) if clean else np.array([])
    if allx.size == 0:
        allx, ally = np.array([1.0, 2.0]), np.array([1.0, 2.0])
    fx = np.log10 if logx else (lambda v: v)
    fy = np.log10 if logy else (lambda v: v)
    x0, x1 = float(np.min(fx(allx))), float(np.max(fx(allx)))
    y0, y1 = float(np.min(fy(ally))), float(np.max(fy(ally)))
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ml + (fx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (fy(v) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for v in _ticks(x0, x1, logx):
        pos = ml + ((math.log10(v) if logx else v) - x0) / (x1 - x0) * pw
        if ml - 1e-9 <= pos <= ml + pw + 1e-9:
            out.append(f'<line x1="{pos:.2f}" y1="{mt + ph}" x2="{pos:.2f}" y2="{mt + ph + 5}" '
                       'stroke="#333"/>')
            out.append(f'<text x="{pos:.2f}" y="{mt + ph + 18}" text-anchor="middle">{v:g}</text>')
    for tv in _ticks(y0, y1, logy):
        pos = mt + ph - ((math.log10(tv) if logy else tv) - y0) / (y1 - y0) * ph
        if mt - 1e-9 <= pos <= mt + ph + 1e-9:
            out.append(f'<line x1="{ml - 5}" y1="{pos:.2f}" x2="{ml}" y2="{pos:.2f}" stroke="#333"/>')
            out.append(f'<text x="{ml - 8}" y="{pos + 4:.2f}" text-anchor="end">{tv:.3g}</text>')
    for i, (label, xs, ys, dashed) in enumerate(clean):
        color = _COLORS[i % len(_COLORS)]
        if xs.size:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ys))
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="2"{dash}/>')
            for a, b in zip(xs, ys):
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 38}" y="{ly + 4}">{_escape(label)}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
               f'{_escape(title)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">'
               f'{_escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def write_plot(path, series, **kwargs):
    Path(path).write_text(line_plot_svg(series, **kwargs))
    return Path(path)
