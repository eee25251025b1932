"""Deterministic writers for tables, reports and plots, plus the run manifest.

Floats are written with ``repr`` so identical inputs give byte-identical
CSV files. Plots are plain SVG polylines generated here, with no plotting
library involved.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from html import escape
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .. import __version__


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# --- SVG -------------------------------------------------------------------

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def svg_line_plot(
    path,
    series: Mapping[str, tuple],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
    logy: bool = False,
    width: int = 640,
    height: int = 420,
    markers: bool = True,
) -> Path:
    """Write a line chart of ``{label: (x, y)}`` as a standalone SVG file.

    Log axes plot log10 of the data; non-positive values are dropped there.
    """
    left, right, top, bottom = 70, 20, 40, 55
    pw, ph = width - left - right, height - top - bottom
    prepared = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        x, y = x[keep], y[keep]
        prepared[label] = (np.log10(x) if logx else x, np.log10(y) if logy else y)
    allx = np.concatenate([v[0] for v in prepared.values()] or [np.zeros(1)])
    ally = np.concatenate([v[1] for v in prepared.values()] or [np.zeros(1)])
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">'
        f"{escape(('log10 ' if logx else '') + xlabel)}</text>",
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(("log10 " if logy else "") + ylabel)}</text>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{sx(v):.2f}" y1="{top + ph}" x2="{sx(v):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{sy(v):.2f}" x2="{left}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for i, (label, (x, y)) in enumerate(prepared.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        if pts:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        if markers:
            out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{colour}"/>' for a, b in zip(x, y))
        ly = top + 16 + 16 * i
        out.append(f'<line x1="{left + pw - 150}" y1="{ly - 4}" x2="{left + pw - 130}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 125}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


# --- artifacts and manifest ------------------------------------------------


class ArtifactWriter:
    """Writes files under ``root`` and remembers every path it produced."""

    def __init__(self, root, prefix: str = ""):
        self.root = Path(root)
        self.prefix = prefix
        self.paths: list = []

    def _target(self, name: str) -> Path:
        p = self.root / (self.prefix + name)
        self.paths.append(p)
        return p

    def csv(self, name: str, header, rows) -> Path:
        return write_csv(self._target(name), header, rows)

    def json(self, name: str, obj) -> Path:
        return write_json(self._target(name), obj)

    def svg(self, name: str, series, **kwargs) -> Path:
        return svg_line_plot(self._target(name), series, **kwargs)

    def adopt(self, path) -> Path:
        """Record a file written by another routine (e.g. ``Trajectory.to_csv``)."""
        p = Path(path)
        self.paths.append(p)
        return p


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Config hash, tool version, timestamps, pipeline outcomes and checksums."""

    config_hash: str
    scenario: str
    seed: int
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    pipelines: dict = field(default_factory=dict)  # name -> status
    artifacts: list = field(default_factory=list)  # {"path", "sha256", "bytes"}

    def record(self, root, paths: Iterable) -> None:
        root = Path(root)
        for p in paths:
            p = Path(p)
            try:
                rel = p.resolve().relative_to(root.resolve())
            except ValueError:
                rel = p
            self.artifacts.append({"path": str(rel), "sha256": sha256_file(p), "bytes": p.stat().st_size})

    def finish(self) -> None:
        self.finished = _now()

    def write(self, path) -> Path:
        return write_json(path, asdict(self))

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, root) -> list:
        """List problems: missing files or checksum mismatches (empty if sound)."""
        root = Path(root)
        problems = []
        for entry in self.artifacts:
            p = root / entry["path"]
            if not p.exists():
                problems.append(f"missing: {entry['path']}")
            elif sha256_file(p) != entry["sha256"]:
                problems.append(f"checksum mismatch: {entry['path']}")
        return problems
