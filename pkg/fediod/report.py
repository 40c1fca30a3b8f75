"""
Run results: per-seed reports, the joined run report, and the files the
runner writes (report.json, losses.csv, ledger.csv, accuracy.svg).

report.json is deterministic for a fixed config: keys are sorted, floats
are written by ``repr`` and the only non-reproducible field is
``wall_clock_seconds``.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class SeedReport:
    """Outcome of one mode on one seed."""

    seed: int
    mode: str
    series: List[Tuple[int, float]]         # (step | round | epoch | node, acc)
    final_accuracy: float
    losses: List[Tuple[int, str, float]] = field(default_factory=list)
    ledger: Any = None                      # services.channel.CommLedger
    model: Any = None                       # nets.Network, not serialized
    extras: Dict[str, Any] = field(default_factory=dict)

    def ledger_totals(self) -> Dict[str, int]:
        return self.ledger.totals_by_kind() if self.ledger is not None else {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "accuracy_series": [[x, float(a)] for x, a in self.series],
            "final_accuracy": float(self.final_accuracy),
            "ledger_totals": self.ledger_totals(),
            "ledger_messages": len(self.ledger) if self.ledger is not None else 0,
            "extras": _plain(self.extras),
        }


@dataclass
class RunReport:
    config: Dict[str, Any]
    mode: str
    seeds: List[SeedReport]
    wall_clock_seconds: float = 0.0
    loss_csv: str = "losses.csv"

    @property
    def finals(self) -> List[float]:
        return [s.final_accuracy for s in self.seeds]

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.finals))

    @property
    def final_std(self) -> float:
        """Population standard deviation over the seeds."""
        return float(np.std(self.finals))

    def ledger_totals(self) -> Dict[str, int]:
        """Bytes per payload kind summed over all seeds."""
        totals: Dict[str, int] = {}
        for s in self.seeds:
            for kind, n in s.ledger_totals().items():
                totals[kind] = totals.get(kind, 0) + n
        return totals

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "mode": self.mode,
            "seeds": [s.to_dict() for s in self.seeds],
            "final_accuracy_mean": self.final_mean,
            "final_accuracy_std": self.final_std,
            "ledger_totals": self.ledger_totals(),
            "loss_csv": self.loss_csv,
            "wall_clock_seconds": round(self.wall_clock_seconds, 3),
        }

    def write_json(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("Report written: %s (%.4f +- %.4f over %d seed(s))",
                    path, self.final_mean, self.final_std, len(self.seeds))


def _plain(value: Any) -> Any:
    """numpy scalars/arrays to JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


# ======================================================================
# CSV
# ======================================================================

def write_losses_csv(reports: Sequence[SeedReport], path: str):
    """Long format: seed, step, loss, value."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "step", "loss", "value"])
        for r in reports:
            for step, name, value in r.losses:
                writer.writerow([r.seed, step, name, repr(float(value))])


def write_ledger_csv(reports: Sequence[SeedReport], path: str):
    first = True
    for r in reports:
        if r.ledger is None:
            continue
        r.ledger.to_csv(path, seed=r.seed, append=not first)
        first = False
    if first:
        with open(path, "w", encoding="utf-8", newline="") as f:
            csv.writer(f).writerow(["seed", "sender", "receiver",
                                    "payload_kind", "bytes", "round",
                                    "sanitized"])


# ======================================================================
# SVG chart
# ======================================================================

_WIDTH, _HEIGHT = 640, 400
_MARGIN = {"left": 60, "right": 150, "top": 30, "bottom": 50}
_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _points(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        return np.column_stack([np.arange(arr.size, dtype=np.float64), arr])
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr
    raise ValueError("series values must be floats or (x, y) pairs")


def _span(lo: float, hi: float) -> Tuple[float, float]:
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    return lo, hi


def emit_svg(series: Mapping[str, Sequence], path: str,
             title: str = "", x_label: str = "step",
             y_label: str = "accuracy"):
    """Line chart: axes, one polyline per labelled series, legend.

    Series values are plain floats (x = index) or (x, y) pairs.
    """
    if not series or any(len(v) == 0 for v in series.values()):
        raise ValueError("emit_svg needs at least one non-empty series")
    pts = {label: _points(v) for label, v in series.items()}
    allp = np.concatenate(list(pts.values()))
    x0, x1 = _span(allp[:, 0].min(), allp[:, 0].max())
    y0, y1 = _span(allp[:, 1].min(), allp[:, 1].max())
    left, top = _MARGIN["left"], _MARGIN["top"]
    pw = _WIDTH - left - _MARGIN["right"]
    ph = _HEIGHT - top - _MARGIN["bottom"]

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" '
        f'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" '
        f'stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{xv:g}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 3:.1f}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{yv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{_HEIGHT - 10}" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(x_label)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">'
               f'{escape(y_label)}</text>')

    for i, (label, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
        out.append(f'<polyline fill="none" stroke="{color}" '
                   f'stroke-width="2" points="{coords}"/>')
        ly = top + 14 + 18 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{escape(str(label))}</text>')
    out.append("</svg>")

    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")
