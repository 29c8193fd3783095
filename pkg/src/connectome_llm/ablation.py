"""Ablation grids: named config deltas crossed with backbone and metric.

Every grid is backbone x value x metric, one single-metric model per cell,
matching the published table layouts (rows: value then diagnosis group;
columns: the seven metrics). ``table2`` is the compact GPT-2 / Wass-1 summary.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig, from_dict
from .errors import GridError
from .graph_distance import METRICS, DistanceSeries
from .model import cohort_distances
from .timeseries_io import Cohort
from .trainer import GROUPS, aggregate, format_mean_std, run_protocol, write_report

BACKBONES = ("llama", "gpt2", "bert")
METRIC_LABELS = {
    "chebyshev": "Chebyshev",
    "manhattan": "Manhattan",
    "frobenius": "Frobenius",
    "spectral": "Spectral",
    "nuclear": "Nuclear",
    "wass0": "Wass-0",
    "wass1": "Wass-1",
}
LAYER_VALUES = {"llama": (8, 16), "gpt2": (6, 12), "bert": (6, 12)}
HEAD_VALUES = (2, 4, 6, 8)
PROTOTYPE_VALUES = (50, 100, 500)
GRIDS = ("main", "table2", "ow_weight", "layers", "heads", "prototypes", "revrin")

# Shared by every cell unless the delta says otherwise.
CELL_DEFAULTS = {"reprogram.heads": 8, "reprogram.prototypes": 50, "revrin": True, "ow_mse.weight": 20.0}

TABLE2_CELLS = ("Default", "LL6", "AH4", "TP500", "No RevRIN")

_DELTA = re.compile(r"^(?:(LL|AH|TP)(\d+)|(layers|heads|prototypes|ow_weight)=(\d+(?:\.\d+)?)|revrin=(on|off|yes|no))$")


def parse_delta(name: str) -> dict:
    """Config overrides for a delta name.

    Accepts ``Default``, ``No RevRIN``, the short forms ``LL6``/``AH4``/``TP500``
    and ``axis=value`` forms (``layers=6``, ``heads=4``, ``prototypes=100``,
    ``ow_weight=10``, ``revrin=off``).
    """
    key = name.strip()
    if key.lower() == "default":
        return {}
    if key.replace(" ", "").lower() == "norevrin":
        return {"revrin": False}
    m = _DELTA.match(key)
    if not m:
        raise GridError(f"invalid ablation delta {name!r}")
    short, short_v, axis, axis_v, rev = m.groups()
    if rev is not None:
        return {"revrin": rev in ("on", "yes")}
    if short is not None:
        axis, axis_v = {"LL": "layers", "AH": "heads", "TP": "prototypes"}[short], short_v
    if axis == "ow_weight":
        return {"ow_mse.weight": float(axis_v)}
    if "." in axis_v:
        raise GridError(f"invalid ablation delta {name!r}: {axis} needs an integer")
    v = int(axis_v)
    if v < 1:
        raise GridError(f"invalid ablation delta {name!r}: {axis} must be >= 1")
    return {{"layers": "backbone.use_layers", "heads": "reprogram.heads", "prototypes": "reprogram.prototypes"}[axis]: v}


@dataclass(frozen=True)
class Cell:
    grid: str
    backbone: str
    axis: str | None  # row-block label, e.g. "Layers"; None for flat grids
    value: str  # row-block value or table2 column
    metric: str
    overrides: tuple = ()

    @property
    def name(self) -> str:
        return "/".join([self.grid, self.backbone, self.value, self.metric])

    def config(self, base: RunConfig) -> RunConfig:
        changes = {**CELL_DEFAULTS, "backbone.preset": self.backbone, "metrics": [self.metric]}
        changes.update(dict(self.overrides))
        return base.replace(**changes)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "grid": self.grid,
            "backbone": self.backbone,
            "axis": self.axis,
            "value": self.value,
            "metric": self.metric,
            "overrides": dict(self.overrides),
        }


def _cells(grid, axis, values, backbones, metrics, delta_of):
    out = []
    for b in backbones:
        vals = values(b) if callable(values) else values
        for v in vals:
            ov = tuple(sorted(parse_delta(delta_of(v)).items()))
            out.extend(Cell(grid, b, axis, str(v), m, ov) for m in metrics)
    return out


def ablation_grid(name: str, backbones=None, metrics=None) -> list[Cell]:
    """Cells of a named grid, optionally restricted to some backbones/metrics."""
    backbones = tuple(backbones or BACKBONES)
    metrics = tuple(metrics or METRICS)
    for b in backbones:
        if b not in BACKBONES:
            raise GridError(f"unknown backbone {b!r}; choose from {list(BACKBONES)}")
    for m in metrics:
        if m not in METRICS:
            raise GridError(f"unknown metric {m!r}; choose from {list(METRICS)}")
    if name == "main":
        return _cells(name, None, ["Default"], backbones, metrics, lambda v: v)
    if name == "table2":
        return [Cell(name, "gpt2", None, c, "wass1", tuple(sorted(parse_delta(c).items()))) for c in TABLE2_CELLS]
    if name == "ow_weight":
        return _cells(name, None, ["w=10"], backbones, metrics, lambda v: "ow_weight=10")
    if name == "layers":
        return _cells(name, "Layers", lambda b: LAYER_VALUES[b], backbones, metrics, lambda v: f"layers={v}")
    if name == "heads":
        return _cells(name, "K", HEAD_VALUES, backbones, metrics, lambda v: f"heads={v}")
    if name == "prototypes":
        return _cells(name, "V'", PROTOTYPE_VALUES, backbones, metrics, lambda v: f"prototypes={v}")
    if name == "revrin":
        return _cells(name, "RevRIN", ["No", "Yes"], backbones, metrics, lambda v: f"revrin={v.lower()}")
    raise GridError(f"unknown ablation grid {name!r}; choose from {list(GRIDS)}")


def custom_grid(deltas, backbone: str = "gpt2", metric: str = "wass1") -> list[Cell]:
    """One cell per named delta, for ad-hoc comparisons."""
    return [Cell("custom", backbone, None, d, metric, tuple(sorted(parse_delta(d).items()))) for d in deltas]


@dataclass
class AblationResult:
    cells: list[Cell]
    summaries: list[dict]  # aggregate() output per cell
    reports: list[list] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for cell, agg in zip(self.cells, self.summaries):
            for g in (*GROUPS, "Overall"):
                out.append({"repeat": "mean", "cell": cell.name, "group": g, "mae": agg[g]["mean"], "std": agg[g]["std"]})
        return out

    def table(self) -> str:
        """Plain-text tables in the published layout, one block per backbone."""
        blocks = []
        by_key = {(c.backbone, c.value, c.metric): a for c, a in zip(self.cells, self.summaries)}
        for b in dict.fromkeys(c.backbone for c in self.cells):
            cells = [c for c in self.cells if c.backbone == b]
            metrics = list(dict.fromkeys(c.metric for c in cells))
            values = list(dict.fromkeys(c.value for c in cells))
            axis = cells[0].axis
            if cells[0].grid in ("table2", "custom"):
                # values are columns, single metric
                head = ["Diagnosis", *values]
                lines = [" | ".join(head)]
                for g in GROUPS:
                    lines.append(" | ".join([g, *(_fmt(by_key[(b, v, metrics[0])][g]) for v in values)]))
            else:
                head = ([axis] if axis else []) + ["Diagnosis", *(METRIC_LABELS[m] for m in metrics)]
                lines = [" | ".join(head)]
                for v in values:
                    for g in GROUPS:
                        lead = [v] if axis else []
                        lines.append(" | ".join([*lead, g, *(_fmt(by_key[(b, v, m)][g]) for m in metrics)]))
            blocks.append(f"[{b}]\n" + "\n".join(lines))
        return "\n\n".join(blocks)

    def write(self, csv_path, json_path=None) -> None:
        extra = {"cells": [c.to_json() for c in self.cells], "summaries": self.summaries, "table": self.table()}
        write_report(self.rows(), csv_path, json_path, extra)


def _fmt(entry: dict) -> str:
    return format_mean_std(entry["mean"], entry["std"])


def _run_cell(args):
    cell, cohort, base_dict, series = args
    cfg = cell.config(from_dict(base_dict)).validate()
    result = run_protocol(cohort, cfg, series)
    return aggregate(result.reports), result.reports


def run_ablation(
    cells: list[Cell],
    cohort: Cohort,
    base: RunConfig,
    series: dict[str, DistanceSeries] | None = None,
    jobs: int = 1,
) -> AblationResult:
    """Run the full split protocol once per cell.

    Distances for every metric the grid needs are computed once and shared.
    """
    if not cells:
        raise GridError("empty ablation grid")
    needed = list(dict.fromkeys(c.metric for c in cells))
    if series is None or any(m not in s.metric_names for s in series.values() for m in needed):
        series = cohort_distances(cohort, base.replace(metrics=[m for m in METRICS if m in needed]), jobs=jobs)
    base_dict = base.to_dict()
    jobs_args = [(c, cohort, base_dict, series) for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, jobs_args))
    else:
        outcomes = [_run_cell(a) for a in jobs_args]
    return AblationResult(list(cells), [o[0] for o in outcomes], [o[1] for o in outcomes])


def save_grid(cells: list[Cell], path) -> None:
    Path(path).write_text(json.dumps([c.to_json() for c in cells], indent=2) + "\n")
