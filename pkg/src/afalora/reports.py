"""CSV persistence, aligned text tables and dependency-free SVG line plots."""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence

from .checkpoint import atomic_write

__all__ = [
    "TRAIN_COLUMNS",
    "SWEEP_COLUMNS",
    "fmt_float",
    "train_csv",
    "write_train_csv",
    "read_csv",
    "sweep_csv",
    "write_sweep_csv",
    "render_table",
    "sweep_summary",
    "svg_line_plot",
    "train_plot",
]

TRAIN_COLUMNS = ("step", "beta", "train_loss")
SWEEP_COLUMNS = ("placement", "activation", "end_frac", "seed", "final_eval_loss", "score", "gain")


def fmt_float(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def train_csv(report) -> str:
    return _csv_text(TRAIN_COLUMNS, ((r.step, fmt_float(r.beta), fmt_float(r.train_loss))
                                     for r in report.records))


def write_train_csv(report, path) -> None:
    atomic_write(path, train_csv(report).encode("utf-8"))


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def sweep_csv(result) -> str:
    rows = []
    for r in result.rows():
        end = "" if r["placement"] in ("full", "none") else fmt_float(r["end_frac"])
        act = "" if r["placement"] in ("full", "none") else r["activation"]
        rows.append((r["placement"], act, end, r["seed"], fmt_float(r["final_eval_loss"]),
                     fmt_float(r["score"]), fmt_float(r["gain"])))
    return _csv_text(SWEEP_COLUMNS, rows)


def write_sweep_csv(result, path) -> None:
    atomic_write(path, sweep_csv(result).encode("utf-8"))


def render_table(header: Sequence[str], rows: Sequence[Sequence], align: str | None = None) -> str:
    """Monospace table; ``align`` has one ``l``/``r`` per column (default: left, then right)."""
    cells = [[str(c) for c in header]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    align = align or "l" + "r" * (len(header) - 1)

    def line(row):
        return "  ".join(c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(row, widths, align)).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(cells[0]), rule] + [line(r) for r in cells[1:]]) + "\n"


def _pct(g) -> str:
    return "n/a" if g is None else f"{g:.1f}%"


def sweep_summary(result) -> str:
    """One row per method/placement cell, baselines first, like a results table."""
    header = ("Method", "Placement", "Activation", "Decay", "Median loss", "Mean loss", "Std",
              "Median gain", "Mean gain")
    base_name = "DORA" if result.lora.kind == "dora" else "LORA"
    method = "AFA-DoRA" if result.lora.kind == "dora" else "AFA-LoRA"
    rows = []
    for name, cell in (("FULL", result.full), (base_name, result.lora)):
        rows.append((name, "--", "--", "--", f"{cell.median_loss:.6f}", f"{cell.mean_loss:.6f}",
                     f"{cell.std_loss:.6f}", _pct(cell.median_gain), _pct(cell.mean_gain)))
    from .adapters import Placement

    for cell in result.cells:
        rows.append((method, Placement.parse(cell.placement).label, cell.activation,
                     f"{cell.end_frac * 100:g}%", f"{cell.median_loss:.6f}", f"{cell.mean_loss:.6f}",
                     f"{cell.std_loss:.6f}", _pct(cell.median_gain), _pct(cell.mean_gain)))
    return render_table(header, rows, align="llll" + "r" * 5)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def svg_line_plot(series: dict, title: str = "", xlabel: str = "step", width: int = 640,
                  height: int = 360) -> str:
    """Self-contained SVG; each series is ``name -> (xs, ys)``, scaled to its own y-range.

    Every series is min-max normalised so curves with different units (loss
    and beta) share one plot; the legend lists each series' raw range.
    """
    pad_l, pad_r, pad_t, pad_b = 56, 16, 32, 40
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    all_x = [x for xs, _ in series.values() for x in xs]
    x0, x1 = (min(all_x), max(all_x)) if all_x else (0, 1)
    if x1 == x0:
        x1 = x0 + 1

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
           f'font-size="14">{_esc(title)}</text>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
           f'<text x="{pad_l + pw / 2}" y="{height - 8}" text-anchor="middle" font-family="sans-serif" '
           f'font-size="12">{_esc(xlabel)}</text>',
           f'<text x="{pad_l}" y="{height - 24}" font-family="sans-serif" font-size="10">{_num(x0)}</text>',
           f'<text x="{pad_l + pw}" y="{height - 24}" text-anchor="end" font-family="sans-serif" '
           f'font-size="10">{_num(x1)}</text>']
    for k, (name, (xs, ys)) in enumerate(series.items()):
        ys = [float(y) for y in ys]
        lo, hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
        span = hi - lo if hi > lo else 1.0
        pts = " ".join(
            f"{pad_l + (float(x) - x0) / (x1 - x0) * pw:.2f},{pad_t + ph - (y - lo) / span * ph:.2f}"
            for x, y in zip(xs, ys) if math.isfinite(y)
        )
        color = _PALETTE[k % len(_PALETTE)]
        out.append(f'<polyline class="series" data-name="{_esc(name)}" data-points="{len(ys)}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 16 + 14 * k}" fill="{color}" font-family="sans-serif" '
                   f'font-size="11">{_esc(name)} [{_num(lo)}, {_num(hi)}]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def train_plot(rows: Sequence[dict], title: str = "training") -> str:
    steps = [int(r["step"]) for r in rows]
    return svg_line_plot({
        "train_loss": (steps, [float(r["train_loss"]) for r in rows]),
        "beta": (steps, [float(r["beta"]) for r in rows]),
    }, title=title)


def _num(x: float) -> str:
    return f"{x:.4g}"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
