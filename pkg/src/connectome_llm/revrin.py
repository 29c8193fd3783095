"""Reversible robust instance normalization: per-feature (x - median) / IQR."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateScaleError, SpecError, StateError


def quantile(x, q: float) -> float:
    """Linear interpolation between order statistics at 1 + q(n-1) (type 7)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise SpecError("quantile of an empty sample", module="revrin")
    return float(np.quantile(x, q, method="linear"))


@dataclass
class RevrinState:
    median: np.ndarray  # (d,)
    iqr: np.ndarray  # (d,)

    def to_json(self) -> list[dict]:
        return [{"median": float(m), "iqr": float(s)} for m, s in zip(self.median, self.iqr)]

    @classmethod
    def from_json(cls, items: list[dict]) -> "RevrinState":
        return cls(
            np.array([it["median"] for it in items], dtype=np.float64),
            np.array([it["iqr"] for it in items], dtype=np.float64),
        )


def revrin_forward(x, names=None) -> tuple[np.ndarray, RevrinState]:
    """Normalize each row of ``x`` (d x T). ``names`` label features in errors."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] < 2:
        raise SpecError(f"need T >= 2 per feature, got {x.shape[1]}", module="revrin")
    med = np.median(x, axis=1)
    q1, q3 = np.quantile(x, [0.25, 0.75], axis=1, method="linear")
    iqr = q3 - q1
    for f in range(x.shape[0]):
        if iqr[f] < 1e-12 * max(1.0, abs(med[f])):
            label = names[f] if names is not None else f
            raise DegenerateScaleError(f"feature {label!r} has zero interquartile range", label)
    return (x - med[:, None]) / iqr[:, None], RevrinState(med, iqr)


def revrin_inverse(xn, state: RevrinState) -> np.ndarray:
    xn = np.atleast_2d(np.asarray(xn, dtype=np.float64))
    if xn.shape[0] != state.median.size:
        raise StateError(f"state holds {state.median.size} features, input has {xn.shape[0]}")
    return xn * state.iqr[:, None] + state.median[:, None]


def save_states(states: dict[str, RevrinState], path) -> None:
    doc = {sid: st.to_json() for sid, st in states.items()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_states(path) -> dict[str, RevrinState]:
    doc = json.loads(Path(path).read_text())
    return {sid: RevrinState.from_json(items) for sid, items in doc.items()}
