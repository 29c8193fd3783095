"""Sliding-window Pearson connectivity."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateWindowError
from .timeseries_io import SubjectRecord, write_roi_csv


@dataclass
class ConnectomeSequence:
    windows: list[np.ndarray]
    window_length: int
    window_stride: int

    def __len__(self):
        return len(self.windows)

    @property
    def n_rois(self) -> int:
        return self.windows[0].shape[0]


def window_count(n_timepoints: int, length: int, stride: int) -> int:
    return (n_timepoints - length) // stride + 1


def pearson_matrix(block: np.ndarray, window: int = 0) -> np.ndarray:
    """Correlation matrix of the columns of ``block`` (time x ROI)."""
    const = np.flatnonzero(np.ptp(block, axis=0) == 0)
    if const.size:
        roi = int(const[0])
        raise DegenerateWindowError(f"window {window}: ROI {roi} is constant", window, roi)
    centered = block - block.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    c = (centered.T @ centered) / np.outer(norms, norms)
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def sliding_window_connectomes(record: SubjectRecord, length: int = 20, stride: int = 5) -> ConnectomeSequence:
    series = record.roi_series if isinstance(record, SubjectRecord) else np.asarray(record, dtype=np.float64)
    n_t = series.shape[0]
    if not 2 <= length <= n_t:
        raise ConfigError(f"window length must be in [2, {n_t}], got {length}", module="connectome")
    if stride < 1:
        raise ConfigError(f"window stride must be >= 1, got {stride}", module="connectome")
    windows = [
        pearson_matrix(series[s : s + length], window=w)
        for w, s in enumerate(range(0, n_t - length + 1, stride))
    ]
    return ConnectomeSequence(windows, length, stride)


def dump_connectomes(seq: ConnectomeSequence, directory) -> Path:
    """One CSV per window plus ``index.json`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for w, c in enumerate(seq.windows):
        name = f"window_{w:04d}.csv"
        write_roi_csv(directory / name, c, header=False)
        files.append(name)
    index = {
        "window_length": seq.window_length,
        "window_stride": seq.window_stride,
        "n_rois": seq.n_rois,
        "windows": files,
    }
    path = directory / "index.json"
    path.write_text(json.dumps(index, indent=2) + "\n")
    return path
