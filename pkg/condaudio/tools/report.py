# condaudio/tools/report.py
# Table rendering and artifact writers shared by the commands. Everything written
# here is deterministic: sorted JSON keys, fixed decimals, trailing newline.
from __future__ import annotations

import json
import pathlib
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from condaudio.core.metrics import EvalReport
from condaudio.errors import MetricError, ParameterError

MISSING = "−"

# key, header, direction marker, decimals
COLUMNS: List[Tuple[str, str, str, int]] = [
    ("eb", "Eb", "↑", 2),
    ("at", "At", "↑", 2),
    ("sigma", "σ", "", 2),
    ("gamma", "γ", "", 2),
    ("kappa", "κ", "", 2),
    ("dtw", "DTW", "↓", 2),
    ("mae", "MAE", "↓", 3),
]

KIND_COLUMNS = {
    "temporal": ("eb", "at"),
    "pitch": ("sigma", "gamma", "kappa", "dtw"),
    "energy": ("mae",),
    "all": tuple(key for key, *_ in COLUMNS),
}

# ----------------- helpers -----------------

def ensure_dir(p: pathlib.Path):
    p.mkdir(parents=True, exist_ok=True)


def write_text(path: pathlib.Path, text: str):
    path = pathlib.Path(path)
    ensure_dir(path.parent)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: pathlib.Path, data: Any):
    write_text(path, dumps(data))


def format_cell(value: Optional[float], decimals: int = 2) -> str:
    return MISSING if value is None else f"{value:.{decimals}f}"


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"

# ----------------- evaluation tables -----------------

def columns_for(kind: str) -> List[Tuple[str, str, str, int]]:
    if kind not in KIND_COLUMNS:
        raise ParameterError(f"unknown evaluation kind: {kind!r}")
    return [col for col in COLUMNS if col[0] in KIND_COLUMNS[kind]]


def render_table(rows: Sequence[Tuple[str, EvalReport]], kind: str = "all") -> str:
    """Settings | Eb | At | σ | γ | κ | DTW | MAE, missing metrics as "−"."""
    if not rows:
        raise MetricError("empty corpus: nothing to report")
    columns = columns_for(kind)
    header = ["Settings"] + [f"{title} {marker}".rstrip() for _, title, marker, _ in columns]
    body = [
        [name] + [format_cell(getattr(report, key), decimals) for key, _, _, decimals in columns]
        for name, report in rows
    ]
    return _align([header] + body)


def report_json(rows: Sequence[Tuple[str, EvalReport]], kind: str = "all") -> Dict[str, Any]:
    keys = [key for key, *_ in columns_for(kind)]
    out = []
    for name, report in rows:
        values = report.model_dump()
        row = {"settings": name, **{key: values[key] for key in keys}}
        if report.per_class:
            row["per_class"] = report.per_class
        out.append(row)
    return {"kind": kind, "rows": out}


def build_report(rows: Sequence[Tuple[str, EvalReport]], kind: str = "all") -> Tuple[str, Dict[str, Any]]:
    """Rendered table plus its machine-readable form."""
    return render_table(rows, kind), report_json(rows, kind)

# ----------------- toy model artifacts -----------------

def render_sweep(rows: Sequence[Dict[str, float]]) -> str:
    """Guidance x steps grid of matched and shuffled probe scores."""
    if not rows:
        raise ParameterError("empty sweep")
    header = ["Guidance", "Step", "Matched", "Shuffled", "Gap"]
    body = [
        [f"{r['omega']:g}", str(r["steps"]), f"{r['matched']:.3f}", f"{r['shuffled']:.3f}",
         f"{r['matched'] - r['shuffled']:.3f}"]
        for r in rows
    ]
    return _align([header] + body)


def write_loss_curve(path: pathlib.Path, history: Sequence[Dict[str, float]]):
    """CSV with one row per logged step."""
    path = pathlib.Path(path)
    ensure_dir(path.parent)
    extra = sorted({k for row in history for k in row} - {"step", "loss"})
    frame = pd.DataFrame(list(history), columns=["step", "loss"] + extra)
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
