"""Per-subject ROI time series: manifest/CSV loading and synthetic cohorts.

Manifest schema::

    {"subjects": [{"id": "sub-01", "csv": "sub-01.csv",
                   "diagnosis": "Normal|MCI|IMP", "target": 0.5}]}

CSV paths are resolved relative to the manifest. Rows are timepoints,
columns are ROIs; a non-numeric first row is treated as a header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CohortError, LabelError, ManifestError, ParseError, SpecError

DIAGNOSES = ("Normal", "MCI", "IMP")
IMPAIRED = frozenset({"MCI", "IMP"})


@dataclass
class SubjectRecord:
    subject_id: str
    roi_series: np.ndarray  # (n_timepoints, n_rois)
    diagnosis: str
    target: float

    def __post_init__(self):
        self.roi_series = np.asarray(self.roi_series, dtype=np.float64)
        if self.roi_series.ndim != 2:
            raise CohortError(f"{self.subject_id}: roi_series must be 2-D, got {self.roi_series.shape}")
        t, n = self.roi_series.shape
        if t < 2 or n < 2:
            raise CohortError(f"{self.subject_id}: need >=2 timepoints and >=2 ROIs, got {t}x{n}")
        if not np.all(np.isfinite(self.roi_series)):
            raise CohortError(f"{self.subject_id}: roi_series contains NaN/Inf")
        if self.diagnosis not in DIAGNOSES:
            raise LabelError(f"{self.subject_id}: unknown diagnosis {self.diagnosis!r}")
        self.target = float(self.target)
        if not math.isfinite(self.target) or self.target < 0:
            raise CohortError(f"{self.subject_id}: target must be finite and >= 0, got {self.target}")

    @property
    def n_timepoints(self) -> int:
        return self.roi_series.shape[0]

    @property
    def n_rois(self) -> int:
        return self.roi_series.shape[1]

    @property
    def impaired(self) -> bool:
        return self.diagnosis in IMPAIRED


@dataclass
class Cohort:
    records: list[SubjectRecord] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.subject_id in seen:
                raise ManifestError(f"duplicate subject id {r.subject_id!r}")
            seen.add(r.subject_id)
        widths = {r.n_rois for r in self.records}
        if len(widths) > 1:
            raise CohortError(f"subjects disagree on ROI count: {sorted(widths)}")

    @property
    def rois(self) -> int | None:
        return self.records[0].n_rois if self.records else None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, subject_id: str) -> SubjectRecord:
        for r in self.records:
            if r.subject_id == subject_id:
                return r
        raise KeyError(subject_id)

    def counts(self) -> dict[str, int]:
        out = {d: 0 for d in DIAGNOSES}
        for r in self.records:
            out[r.diagnosis] += 1
        return out


def read_roi_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: empty CSV")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1  # header
    width = len(rows[0])
    values = []
    for i, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise ParseError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        parsed = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell at row {i}, column {j}: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value at row {i}, column {j}: {cell!r}")
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise ParseError(f"{path}: no data rows")
    return np.array(values, dtype=np.float64)


def write_roi_csv(path, series: np.ndarray, header: bool = True) -> None:
    series = np.asarray(series, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"roi{j}" for j in range(series.shape[1])])
        for row in series:
            w.writerow([repr(float(v)) for v in row])


def load_cohort(manifest_path) -> Cohort:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{manifest_path}: cannot read manifest ({exc})") from None
    subjects = doc.get("subjects") if isinstance(doc, dict) else None
    if not isinstance(subjects, list):
        raise ManifestError(f"{manifest_path}: missing 'subjects' list")
    records = []
    seen = set()
    for k, entry in enumerate(subjects):
        for key in ("id", "csv", "diagnosis", "target"):
            if key not in entry:
                raise ManifestError(f"{manifest_path}: subject #{k} lacks {key!r}")
        sid = str(entry["id"])
        if sid in seen:
            raise ManifestError(f"{manifest_path}: duplicate subject id {sid!r}")
        seen.add(sid)
        if entry["diagnosis"] not in DIAGNOSES:
            raise LabelError(f"{manifest_path}: subject {sid!r} has unknown diagnosis {entry['diagnosis']!r}")
        csv_path = Path(entry["csv"])
        if not csv_path.is_absolute():
            csv_path = manifest_path.parent / csv_path
        records.append(SubjectRecord(sid, read_roi_csv(csv_path), entry["diagnosis"], entry["target"]))
    return Cohort(records, provenance={"file": str(manifest_path)})


def save_cohort(cohort: Cohort, directory) -> Path:
    """Write one CSV per subject plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in cohort.records:
        name = f"{r.subject_id}.csv"
        write_roi_csv(directory / name, r.roi_series)
        entries.append({"id": r.subject_id, "csv": name, "diagnosis": r.diagnosis, "target": r.target})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"subjects": entries}, indent=2) + "\n")
    return manifest


@dataclass(frozen=True)
class SyntheticSpec:
    n_normal: int = 20
    n_mci: int = 2
    n_imp: int = 2
    n_rois: int = 8
    n_timepoints: int = 120
    seed: int = 0
    n_latent: int = 2
    noise: float = 0.1
    freq_range: tuple[float, float] = (0.1, 0.3)
    normal_range: tuple[float, float] = (0.0, 0.5)
    impaired_range: tuple[float, float] = (1.0, 4.0)


def generate_synthetic_cohort(spec: SyntheticSpec) -> Cohort:
    """Seeded cohort: ROI = latent sinusoid mix + Gaussian noise.

    Impaired subjects have the loadings of half the ROIs flipped and damped
    from T/2 onward, with the damping growing with the subject's target.
    """
    for name in ("n_normal", "n_mci", "n_imp"):
        if getattr(spec, name) < 0:
            raise SpecError(f"{name} must be >= 0")
    if spec.n_timepoints < 2:
        raise SpecError(f"n_timepoints must be >= 2, got {spec.n_timepoints}")
    if spec.n_rois < 2:
        raise SpecError(f"n_rois must be >= 2, got {spec.n_rois}")

    rng = np.random.default_rng(spec.seed & 0xFFFFFFFFFFFFFFFF)
    labels = ["Normal"] * spec.n_normal + ["MCI"] * spec.n_mci + ["IMP"] * spec.n_imp
    width = max(3, len(str(len(labels))))
    t = np.arange(spec.n_timepoints, dtype=np.float64)
    half = spec.n_timepoints // 2
    records = []
    for k, dx in enumerate(labels):
        lo, hi = spec.normal_range if dx == "Normal" else spec.impaired_range
        target = float(rng.uniform(lo, hi))
        freqs = rng.uniform(*spec.freq_range, size=spec.n_latent)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_latent)
        latent = np.sin(2.0 * np.pi * freqs[None, :] * t[:, None] + phases[None, :])  # (T, n_latent)
        loadings = rng.normal(0.0, 1.0, size=(spec.n_latent, spec.n_rois))
        coupling = np.ones((spec.n_timepoints, spec.n_rois))
        if dx != "Normal":
            affected = rng.permutation(spec.n_rois)[: max(1, spec.n_rois // 2)]
            strength = min(1.0, target / spec.impaired_range[1])
            coupling[half:, affected] = -(1.0 - 0.8 * strength)
        signal = (latent @ loadings) * coupling
        series = signal + rng.normal(0.0, spec.noise, size=signal.shape)
        records.append(SubjectRecord(f"sub-{k + 1:0{width}d}", series, dx, target))
    return Cohort(records, provenance={"synthetic": int(spec.seed)})
