"""Core datasets, design-matrix construction, and CSV ingestion.

The trial regression works on outcomes shifted by the average prognostic
score and on scores centered at that average, so the design matrix always
has columns (1, treatment, centered score).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NonFinite, ParseError, RankDeficient, ValidationError

CENTERING_RTOL = 1e-10


@dataclass(frozen=True)
class SubjectRecord:
    """One trial participant: outcome, treatment arm, prognostic score."""

    outcome: float
    treatment: int
    prognostic_score: float

    def __post_init__(self):
        if not (math.isfinite(self.outcome) and math.isfinite(self.prognostic_score)):
            raise NonFinite("subject outcome and prognostic score must be finite")
        if self.treatment not in (0, 1):
            raise ValidationError(f"treatment must be 0 or 1, got {self.treatment!r}")


@dataclass(frozen=True)
class TrialDataset:
    """Ordered collection of trial subjects.

    Invariants: at least 4 subjects, both arms occupied, and prognostic
    scores not all equal (the design matrix must have rank 3).
    """

    subjects: tuple[SubjectRecord, ...]

    def __post_init__(self):
        n = len(self.subjects)
        if n < 4:
            raise ValidationError(f"trial dataset needs at least 4 subjects, got {n}")
        treatments = {s.treatment for s in self.subjects}
        if treatments != {0, 1}:
            raise RankDeficient("trial dataset needs both treated and control subjects")
        scores = [s.prognostic_score for s in self.subjects]
        if max(scores) == min(scores):
            raise RankDeficient("prognostic scores are all equal")

    @classmethod
    def from_arrays(cls, y, w, m) -> "TrialDataset":
        y, w, m = (np.asarray(a, dtype=float) for a in (y, w, m))
        if not (y.shape == w.shape == m.shape) or y.ndim != 1:
            raise ValidationError("y, w, m must be 1-d arrays of equal length")
        return cls(tuple(SubjectRecord(float(yi), int(wi), float(mi))
                         for yi, wi, mi in zip(y, w, m)))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([s.outcome for s in self.subjects])

    @cached_property
    def w(self) -> np.ndarray:
        return np.array([float(s.treatment) for s in self.subjects])

    @cached_property
    def m(self) -> np.ndarray:
        return np.array([s.prognostic_score for s in self.subjects])


@dataclass(frozen=True)
class HistoricalDataset:
    """Control-only outcomes and prognostic scores used to fit the
    informative prior component.

    At least 4 records are required so the induced variance prior keeps
    2 or more degrees of freedom and stays proper.
    """

    outcomes: np.ndarray
    prognostic_scores: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        m = np.asarray(self.prognostic_scores, dtype=float)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "prognostic_scores", m)
        if y.ndim != 1 or y.shape != m.shape:
            raise ValidationError("outcomes and scores must be 1-d arrays of equal length")
        if not (np.isfinite(y).all() and np.isfinite(m).all()):
            raise NonFinite("historical data contains non-finite values")
        if len(y) < 4:
            raise ValidationError(f"historical dataset needs at least 4 records, got {len(y)}")
        if m.max() == m.min():
            raise RankDeficient("historical prognostic scores are all equal")

    @property
    def n(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class DesignMatrix:
    """Design matrix with columns (1, w, m - m_bar), plus the score mean
    and the shifted outcomes y - m_bar."""

    V: np.ndarray
    m_bar: float
    y_centered: np.ndarray

    def __post_init__(self):
        if not np.all(self.V[:, 0] == 1.0):
            raise ValidationError("first design column must be constant 1")
        scale = max(1.0, float(np.max(np.abs(self.V[:, 2]))), abs(self.m_bar))
        if abs(float(np.mean(self.V[:, 2]))) > CENTERING_RTOL * scale:
            raise ValidationError("centered score column does not have zero mean")
        if np.linalg.matrix_rank(self.V) != 3:
            raise RankDeficient("design matrix does not have rank 3")

    @property
    def n(self) -> int:
        return self.V.shape[0]


def design_from_arrays(y, w, m) -> DesignMatrix:
    """Build the design matrix directly from raw arrays.

    Used by :func:`build_design` and by the simulation harness; performs
    the same finiteness and rank checks but no dataset-level size checks.
    """
    y, w, m = (np.asarray(a, dtype=float) for a in (y, w, m))
    if not (np.isfinite(y).all() and np.isfinite(w).all() and np.isfinite(m).all()):
        raise NonFinite("design inputs contain non-finite values")
    if len(set(w.tolist())) == 1:
        raise RankDeficient("treatment column is collinear with the intercept")
    if m.max() == m.min():
        raise RankDeficient("prognostic scores are all equal")
    # fsum keeps the mean exactly invariant under subject reordering
    m_bar = math.fsum(m.tolist()) / len(m)
    V = np.column_stack([np.ones_like(m), w, m - m_bar])
    return DesignMatrix(V=V, m_bar=m_bar, y_centered=y - m_bar)


def build_design(trial: TrialDataset) -> DesignMatrix:
    """Construct the (1, w, centered score) design for a trial dataset."""
    return design_from_arrays(trial.y, trial.w, trial.m)


def _read_rows(path, required: tuple[str, ...], remap: dict[str, str] | None):
    """Yield (row_number, {name: float}) for each CSV data row."""
    remap = remap or {}
    columns = {name: remap.get(name, name) for name in required}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        missing = [c for c in columns.values() if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        row_number = 0
        for raw in reader:
            row_number += 1
            parsed = {}
            for name, col in columns.items():
                cell = raw.get(col)
                if cell is None or cell.strip() == "":
                    raise ParseError(f"{path}: row {row_number}: empty field {col!r}")
                try:
                    parsed[name] = float(cell)
                except ValueError as exc:
                    raise ParseError(
                        f"{path}: row {row_number}: cannot parse {col}={cell!r}"
                    ) from exc
            yield row_number, parsed
        if row_number == 0:
            raise ParseError(f"{path}: no data rows")


def load_trial_csv(path, *, y_col="y", w_col="w", m_col="m") -> TrialDataset:
    """Load a trial dataset from a CSV file with columns y, w, m.

    Column names can be remapped via the keyword flags. Missing values
    are rejected, not imputed.
    """
    subjects = []
    remap = {"y": y_col, "w": w_col, "m": m_col}
    for row_number, rec in _read_rows(path, ("y", "w", "m"), remap):
        w = rec["w"]
        if w not in (0.0, 1.0):
            raise ValidationError(f"{path}: row {row_number}: w must be 0 or 1, got {w}")
        try:
            subjects.append(SubjectRecord(rec["y"], int(w), rec["m"]))
        except ValidationError as exc:
            raise ValidationError(f"{path}: row {row_number}: {exc}") from exc
    return TrialDataset(tuple(subjects))


def load_historical_csv(path, *, y_col="y", m_col="m") -> HistoricalDataset:
    """Load a historical control dataset from a CSV file with columns y, m."""
    ys, ms = [], []
    for _, rec in _read_rows(path, ("y", "m"), {"y": y_col, "m": m_col}):
        ys.append(rec["y"])
        ms.append(rec["m"])
    return HistoricalDataset(np.array(ys), np.array(ms))
