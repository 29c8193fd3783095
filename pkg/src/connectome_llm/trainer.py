"""Training loop, per-group evaluation and the repeated-split protocol."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, backward, get_tape, no_grad
from .backbone import FrozenWeights
from .config import RunConfig
from .graph_distance import DistanceSeries
from .losses import fit_quantile_threshold, mse, ow_mse
from .model import ModelState, PreparedInputs, build_model, forward, frozen_parts, prepare_inputs, save_checkpoint
from .optim import AdamState, adam_step, zero_grad
from .splits import Split, split_plan
from .timeseries_io import Cohort

log = logging.getLogger(__name__)

GROUPS = ("MCI+IMP", "Normal")
REPORT_COLUMNS = ("repeat", "cell", "group", "mae", "std")


@dataclass
class TrainResult:
    model: ModelState
    history: list[dict]
    best_epoch: int
    threshold: float
    checksums_before: dict[str, str]
    checksums_after: dict[str, str]


def _loss(model: ModelState, patches, targets, cfg: RunConfig, threshold: float):
    pred = forward(model, patches)
    if cfg.train.loss == "mse":
        return mse(pred, targets)
    return ow_mse(pred, targets, threshold, cfg.ow_mse.weight)


def _eval_loss(model, inputs: PreparedInputs, cfg, threshold) -> float | None:
    if not inputs.ids:
        return None
    with no_grad():
        return float(_loss(model, inputs.patches, inputs.targets, cfg, threshold).data[0])


def train(
    train_inputs: PreparedInputs,
    val_inputs: PreparedInputs,
    cfg: RunConfig,
    seed: int | None = None,
    frozen: tuple[FrozenWeights, Tensor] | None = None,
) -> TrainResult:
    """Adam on the task modules only; keeps the lowest-validation-loss epoch.

    ``history[0]`` holds the losses of the untrained model; epochs 1.. follow.
    Without validation subjects the last epoch is kept.
    """
    tc = cfg.train
    seed = tc.seed if seed is None else seed
    if not train_inputs.ids:
        raise ValueError("empty training set")
    threshold = fit_quantile_threshold(train_inputs.targets, cfg.ow_mse.tau)
    model = build_model(cfg, train_inputs.patches.shape[1], seed, frozen)
    params = model.trainable()
    before = model.module_checksums()
    get_tape().clear()
    state = AdamState()
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    n = len(train_inputs.ids)
    bs = n if tc.batch_size is None else min(tc.batch_size, n)

    history = [{
        "epoch": 0,
        "train_loss": _eval_loss(model, train_inputs, cfg, threshold),
        "val_loss": _eval_loss(model, val_inputs, cfg, threshold),
    }]  # fmt: skip
    best, best_epoch, best_snap = np.inf, tc.epochs, None
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            rows = order[start : start + bs]
            zero_grad(params)
            loss = _loss(model, train_inputs.patches[rows], train_inputs.targets[rows], cfg, threshold)
            backward(loss)
            adam_step(params, state, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
        zero_grad(params)
        rec = {
            "epoch": epoch,
            "train_loss": _eval_loss(model, train_inputs, cfg, threshold),
            "val_loss": _eval_loss(model, val_inputs, cfg, threshold),
        }
        history.append(rec)
        if rec["val_loss"] is not None and rec["val_loss"] < best:
            best, best_epoch, best_snap = rec["val_loss"], epoch, model.snapshot()
        log.debug("epoch %d train %.6g val %s", epoch, rec["train_loss"], rec["val_loss"])
    if best_snap is not None:
        model.restore(best_snap)
    return TrainResult(model, history, best_epoch, threshold, before, model.module_checksums())


@dataclass
class EvalReport:
    mae_normal: float | None
    mae_mci_imp: float | None
    mae_overall: float
    predictions: list[dict] = field(default_factory=list)

    def group_mae(self, group: str) -> float | None:
        return {"Normal": self.mae_normal, "MCI+IMP": self.mae_mci_imp, "Overall": self.mae_overall}[group]

    def to_json(self) -> dict:
        return {
            "mae_normal": self.mae_normal,
            "mae_mci_imp": self.mae_mci_imp,
            "mae_overall": self.mae_overall,
            "predictions": self.predictions,
        }


def group_report(ids, diagnoses, targets, preds) -> EvalReport:
    targets = np.asarray(targets, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("evaluation needs at least one subject")
    err = np.abs(preds - targets)
    impaired = np.array([dx != "Normal" for dx in diagnoses])

    def mae(mask):
        return float(err[mask].mean()) if mask.any() else None

    rows = [
        {"id": s, "diagnosis": dx, "target": float(t), "prediction": float(p)}
        for s, dx, t, p in zip(ids, diagnoses, targets, preds)
    ]
    return EvalReport(mae(~impaired), mae(impaired), float(err.mean()), rows)


def predict(model: ModelState, inputs: PreparedInputs) -> np.ndarray:
    with no_grad():
        return forward(model, inputs.patches).data.copy()


def evaluate(model: ModelState, inputs: PreparedInputs) -> EvalReport:
    """MAE for Normal, pooled MCI+IMP and all subjects; absent groups are None."""
    return group_report(inputs.ids, inputs.diagnoses, inputs.targets, predict(model, inputs))


def mean_baseline(train_inputs: PreparedInputs, test_inputs: PreparedInputs) -> EvalReport:
    """Predict the training-target mean for every test subject."""
    c = float(np.mean(train_inputs.targets))
    return group_report(test_inputs.ids, test_inputs.diagnoses, test_inputs.targets, np.full(len(test_inputs.ids), c))


def aggregate(reports: list[EvalReport]) -> dict[str, dict]:
    """Mean and sample std (ddof=1) of each group's MAE over repeats."""
    out = {}
    for g in (*GROUPS, "Overall"):
        vals = np.array([r.group_mae(g) for r in reports if r.group_mae(g) is not None])
        if vals.size == 0:
            out[g] = {"mean": None, "std": None, "n": 0}
        else:
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[g] = {"mean": float(vals.mean()), "std": std, "n": int(vals.size)}
    return out


def format_mean_std(mean: float | None, std: float | None) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.4f} ± {std:.4f}"


def table_layout(columns: dict[str, dict[str, dict]], row_label: str = "Diagnosis") -> str:
    """Render {column: aggregate()} as rows MCI+IMP / Normal of ``mean ± std``."""
    names = list(columns)
    lines = [" | ".join([row_label, *names])]
    for g in GROUPS:
        cells = [format_mean_std(columns[c][g]["mean"], columns[c][g]["std"]) for c in names]
        lines.append(" | ".join([g, *cells]))
    return "\n".join(lines)


@dataclass
class RepeatResult:
    split: Split
    train: TrainResult
    report: EvalReport
    baseline: EvalReport


@dataclass
class ProtocolResult:
    repeats: list[RepeatResult]

    @property
    def reports(self) -> list[EvalReport]:
        return [r.report for r in self.repeats]

    def aggregate(self) -> dict[str, dict]:
        return aggregate(self.reports)


def run_protocol(
    cohort: Cohort,
    cfg: RunConfig,
    series: dict[str, DistanceSeries] | None = None,
    checkpoint_dir=None,
    inputs: PreparedInputs | None = None,
) -> ProtocolResult:
    """Train and test once per split repeat (30/30/40 by default)."""
    if inputs is None:
        inputs = prepare_inputs(cohort, cfg, series)
    frozen = frozen_parts(cfg)
    repeats = []
    for split in split_plan(cohort, cfg.split):
        tr, va, te = inputs.subset(split.train), inputs.subset(split.val), inputs.subset(split.test)
        result = train(tr, va, cfg, seed=cfg.train.seed + split.repeat, frozen=frozen)
        report = evaluate(result.model, te)
        repeats.append(RepeatResult(split, result, report, mean_baseline(tr, te)))
        if checkpoint_dir is not None:
            meta = {
                "repeat": split.repeat,
                "split": {k: list(v) for k, v in split.parts().items()},
                "threshold": result.threshold,
                "best_epoch": result.best_epoch,
                "history": result.history,
                "T": inputs.T,
            }
            save_checkpoint(Path(checkpoint_dir) / f"repeat_{split.repeat}", result.model, cfg, meta, tr.states)
    return ProtocolResult(repeats)


def report_rows(cell: str, reports: list[EvalReport]) -> list[dict]:
    """Per-repeat rows (std blank) followed by ``repeat='mean'`` aggregate rows."""
    rows = []
    for i, rep in enumerate(reports):
        for g in (*GROUPS, "Overall"):
            rows.append({"repeat": i, "cell": cell, "group": g, "mae": rep.group_mae(g), "std": None})
    agg = aggregate(reports)
    for g in (*GROUPS, "Overall"):
        rows.append({"repeat": "mean", "cell": cell, "group": g, "mae": agg[g]["mean"], "std": agg[g]["std"]})
    return rows


def write_report(rows: list[dict], csv_path, json_path=None, extra: dict | None = None) -> None:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k])) for k in REPORT_COLUMNS})
    if json_path is not None:
        doc = {"rows": rows}
        if extra:
            doc.update(extra)
        Path(json_path).write_text(json.dumps(doc, indent=2) + "\n")
