"""Trajectory ingest, validation, cleaning, gap filling and differentiation."""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from error_handling import (
    ArtifactError, JoinError, ParseError, TrajectoryValidationError, ValidationError,
    log_operation,
)

logger = structlog.get_logger(__name__)

TRAJECTORY_COLUMNS = ("subject_id", "t_seconds", "value")

# Gaps within this relative slack of target_dt count as filled.
_GAP_SLACK = 1e-9


def _frozen_array(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One subject's irregularly sampled predictor on its own time domain."""

    subject_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _frozen_array(self.times)
        values = _frozen_array(self.values)
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

        if times.ndim != 1 or values.ndim != 1 or times.shape != values.shape:
            raise TrajectoryValidationError(
                f"Subject {self.subject_id}: times and values must be equal-length sequences",
                subject_id=self.subject_id)
        if times.size < 2:
            raise TrajectoryValidationError(
                f"Subject {self.subject_id}: at least 2 samples required, got {times.size}",
                subject_id=self.subject_id)
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise TrajectoryValidationError(
                f"Subject {self.subject_id}: non-finite time or value", subject_id=self.subject_id)
        steps = np.diff(times)
        if np.any(steps <= 0):
            k = int(np.argmax(steps <= 0))
            raise TrajectoryValidationError(
                f"Subject {self.subject_id}: times not strictly increasing at t={times[k + 1]}",
                subject_id=self.subject_id, index=k + 1)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def n_samples(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Trajectories joined to covariates z and binary outcomes y, indexed by subject."""

    trajectories: tuple
    covariates: np.ndarray
    outcomes: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        trajectories = tuple(self.trajectories)
        n = len(trajectories)
        covariates = np.array(self.covariates, dtype=float)
        covariates = covariates.reshape(n, -1) if covariates.size else np.zeros((n, 0))
        outcomes = np.array(self.outcomes, dtype=int).reshape(-1)
        names = tuple(self.covariate_names) or tuple(f"z{j + 1}" for j in range(covariates.shape[1]))
        covariates.flags.writeable = False
        outcomes.flags.writeable = False

        object.__setattr__(self, "trajectories", trajectories)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariate_names", names)

        if n < 1:
            raise ValidationError("Dataset needs at least one subject")
        if outcomes.shape[0] != n:
            raise ValidationError(f"{outcomes.shape[0]} outcomes for {n} trajectories")
        if len(names) != covariates.shape[1]:
            raise ValidationError(f"{len(names)} covariate names for {covariates.shape[1]} columns")
        if not np.all(np.isin(outcomes, (0, 1))):
            raise ValidationError("Outcomes must be binary 0/1")
        ids = self.subject_ids
        if len(set(ids)) != n:
            raise ValidationError("Duplicate subject identifiers in dataset")

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def q(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def subject_ids(self) -> list[str]:
        return [traj.subject_id for traj in self.trajectories]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            trajectories=tuple(self.trajectories[i] for i in indices),
            covariates=self.covariates[indices],
            outcomes=self.outcomes[indices],
            covariate_names=self.covariate_names,
        )

    def with_outcomes(self, outcomes: np.ndarray) -> "Dataset":
        return Dataset(self.trajectories, self.covariates, outcomes, self.covariate_names)

    def with_trajectories(self, trajectories: Iterable[Trajectory]) -> "Dataset":
        return Dataset(tuple(trajectories), self.covariates, self.outcomes, self.covariate_names)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.trajectories == other.trajectories
                and self.covariate_names == other.covariate_names
                and np.array_equal(self.covariates, other.covariates)
                and np.array_equal(self.outcomes, other.outcomes))

    __hash__ = None


class CleaningPolicy(BaseModel):
    """Value bounds, gap limit and minimum duration applied on ingest."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    value_min: float = Field(10.0, description="Lowest admissible value")
    value_max: float = Field(250.0, description="Highest admissible value")
    max_gap: float = Field(300.0, description="Largest admissible gap in seconds", gt=0)
    min_duration: float = Field(1800.0, description="Shortest admissible duration in seconds", gt=0)

    @model_validator(mode='after')
    def validate_bounds(self) -> 'CleaningPolicy':
        if self.value_min >= self.value_max:
            raise ValueError("value_min must be below value_max")
        return self


class CleaningStatus(str, Enum):
    KEPT = "kept"
    REJECTED = "rejected"


class RejectionReason(str, Enum):
    GAP = "gap"
    SHORT = "short"
    EMPTY = "empty"


@dataclass(frozen=True)
class CleaningResult:
    subject_id: str
    status: CleaningStatus
    reason: Optional[RejectionReason] = None
    trajectory: Optional[Trajectory] = None

    @property
    def kept(self) -> bool:
        return self.status is CleaningStatus.KEPT


@dataclass(frozen=True)
class CleaningOutcome:
    """Dataset-level cleaning: surviving subjects plus the auditable report."""

    dataset: Dataset
    records: tuple
    raw_durations: dict = field(default_factory=dict)

    @property
    def rejected(self) -> list[CleaningResult]:
        return [r for r in self.records if not r.kept]


def clean(traj: Trajectory, policy: CleaningPolicy) -> CleaningResult:
    """Drop out-of-range samples, then reject on gaps, short duration or emptiness."""
    keep = (traj.values >= policy.value_min) & (traj.values <= policy.value_max)
    times = traj.times[keep]
    values = traj.values[keep]

    def rejected(reason: RejectionReason) -> CleaningResult:
        return CleaningResult(traj.subject_id, CleaningStatus.REJECTED, reason)

    if times.size < 2:
        return rejected(RejectionReason.EMPTY)
    if np.any(np.diff(times) > policy.max_gap):
        return rejected(RejectionReason.GAP)
    if times[-1] - times[0] < policy.min_duration:
        return rejected(RejectionReason.SHORT)

    cleaned = traj if bool(np.all(keep)) else Trajectory(traj.subject_id, times, values)
    return CleaningResult(traj.subject_id, CleaningStatus.KEPT, None, cleaned)


def clean_dataset(dataset: Dataset, policy: CleaningPolicy) -> CleaningOutcome:
    """Clean every subject and drop rejected ones consistently from z and y."""
    with log_operation("clean_dataset", logger_name=__name__, n_subjects=dataset.n):
        records = tuple(clean(traj, policy) for traj in dataset.trajectories)
        kept = [i for i, record in enumerate(records) if record.kept]
        if not kept:
            raise ValidationError("Every trajectory was rejected by the cleaning policy",
                                  n_subjects=dataset.n)

        cleaned = Dataset(
            trajectories=tuple(records[i].trajectory for i in kept),
            covariates=dataset.covariates[kept],
            outcomes=dataset.outcomes[kept],
            covariate_names=dataset.covariate_names,
        )
        raw_durations = {traj.subject_id: traj.duration for traj in dataset.trajectories}

        reasons: dict[str, int] = {}
        for record in records:
            if not record.kept:
                reasons[record.reason.value] = reasons.get(record.reason.value, 0) + 1
        logger.info("Cleaning finished", kept=len(kept), rejected=dataset.n - len(kept), **reasons)

    return CleaningOutcome(cleaned, records, raw_durations)


def fill_gaps(traj: Trajectory, target_dt: float = 30.0) -> Trajectory:
    """Insert linearly interpolated points wherever a gap exceeds ``target_dt``."""
    if target_dt <= 0:
        raise ValidationError(f"target_dt must be positive, got {target_dt}")

    gaps = np.diff(traj.times)
    wide = np.flatnonzero(gaps > target_dt * (1.0 + _GAP_SLACK))
    if wide.size == 0:
        return traj

    inserted = []
    for k in wide:
        pieces = int(np.ceil(gaps[k] / target_dt - _GAP_SLACK))
        inserted.append(np.linspace(traj.times[k], traj.times[k + 1], pieces + 1)[1:-1])
    new_times = np.concatenate(inserted)
    new_values = np.interp(new_times, traj.times, traj.values)

    times = np.concatenate([traj.times, new_times])
    values = np.concatenate([traj.values, new_values])
    order = np.argsort(times, kind="mergesort")
    return Trajectory(traj.subject_id, times[order], values[order])


def derivative(traj: Trajectory) -> np.ndarray:
    """Central divided differences inside, one-sided differences at both ends."""
    t, x = traj.times, traj.values
    slope = np.empty_like(x)
    slope[0] = (x[1] - x[0]) / (t[1] - t[0])
    slope[-1] = (x[-1] - x[-2]) / (t[-1] - t[-2])
    if x.size > 2:
        slope[1:-1] = (x[2:] - x[:-2]) / (t[2:] - t[:-2])
    return slope


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    """Per-sample trapezoid weights: half the gap to each neighbour. They sum to the duration."""
    gaps = np.diff(times)
    weights = np.empty_like(times, dtype=float)
    weights[0] = gaps[0] / 2.0
    weights[-1] = gaps[-1] / 2.0
    weights[1:-1] = (gaps[:-1] + gaps[1:]) / 2.0
    return weights


def fill_dataset(dataset: Dataset, target_dt: float) -> Dataset:
    return dataset.with_trajectories(fill_gaps(traj, target_dt) for traj in dataset.trajectories)


def add_duration_covariate(dataset: Dataset, durations: Optional[dict] = None) -> Dataset:
    """Append T_i as a covariate; defaults to each trajectory's current duration."""
    if durations is None:
        column = np.array([traj.duration for traj in dataset.trajectories])
    else:
        column = np.array([durations[sid] for sid in dataset.subject_ids], dtype=float)
    return Dataset(
        trajectories=dataset.trajectories,
        covariates=np.column_stack([dataset.covariates, column]),
        outcomes=dataset.outcomes,
        covariate_names=dataset.covariate_names + ("duration",),
    )


def median_sampling_interval(trajectories: Iterable[Trajectory]) -> float:
    return float(np.median(np.concatenate([np.diff(traj.times) for traj in trajectories])))


def _data_line_numbers(path: Path) -> list[int]:
    """File line numbers of the header and data rows (comments and blanks skipped)."""
    lines = path.read_text(encoding="utf-8").splitlines()
    return [i for i, line in enumerate(lines, start=1)
            if line.strip() and not line.lstrip().startswith("#")]


def _read_table(path: Path) -> tuple[pd.DataFrame, list[int]]:
    try:
        line_numbers = _data_line_numbers(path)
        frame = pd.read_csv(path, comment="#", dtype=str, skipinitialspace=True,
                            keep_default_na=False)
    except FileNotFoundError as e:
        raise ArtifactError(f"Input file not found: {path}", path=str(path)) from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path}: file is empty", path=str(path), line=1) from e
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}", path=str(path)) from e
    except OSError as e:
        raise ArtifactError(f"Cannot read {path}: {e}", path=str(path)) from e
    return frame, line_numbers


def _numeric_column(frame: pd.DataFrame, column: str, path: Path, line_numbers: list[int]) -> np.ndarray:
    raw = frame[column].str.strip()
    numbers = pd.to_numeric(raw.where(raw != ""), errors="coerce")
    bad = numbers.isna().to_numpy() | ~np.isfinite(numbers.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        row = int(np.argmax(bad))
        line = line_numbers[row + 1] if row + 1 < len(line_numbers) else None
        raise ParseError(f"{path}:{line}: invalid {column} '{frame[column].iloc[row]}'",
                         path=str(path), line=line)
    # Re-parse through float() so values round-trip exactly.
    return np.array([float(v) for v in raw], dtype=float)


def _check_subject_ids(frame: pd.DataFrame, path: Path, line_numbers: list[int]) -> None:
    empty = (frame["subject_id"].str.strip() == "").to_numpy()
    if empty.any():
        row = int(np.argmax(empty))
        line = line_numbers[row + 1] if row + 1 < len(line_numbers) else None
        raise ParseError(f"{path}:{line}: missing subject_id", path=str(path), line=line)


def load_trajectories(path: Path) -> dict[str, Trajectory]:
    path = Path(path)
    frame, line_numbers = _read_table(path)
    if set(frame.columns) != set(TRAJECTORY_COLUMNS):
        raise ParseError(f"{path}:1: expected header {','.join(TRAJECTORY_COLUMNS)}, got {','.join(frame.columns)}",
                         path=str(path), line=line_numbers[0] if line_numbers else 1)
    _check_subject_ids(frame, path, line_numbers)

    ids = frame["subject_id"].str.strip().to_numpy()
    times = _numeric_column(frame, "t_seconds", path, line_numbers)
    values = _numeric_column(frame, "value", path, line_numbers)

    trajectories: dict[str, Trajectory] = {}
    for subject_id in pd.unique(ids):
        rows = np.flatnonzero(ids == subject_id)
        order = rows[np.argsort(times[rows], kind="mergesort")]
        trajectories[subject_id] = Trajectory(subject_id, times[order], values[order])
    return trajectories


def load_dataset(trajectory_path: Path, table_path: Path) -> Dataset:
    """Read the trajectory and table CSVs and join them on subject_id."""
    trajectory_path, table_path = Path(trajectory_path), Path(table_path)

    with log_operation("load_dataset", logger_name=__name__,
                       trajectories=str(trajectory_path), table=str(table_path)):
        trajectories = load_trajectories(trajectory_path)

        frame, line_numbers = _read_table(table_path)
        columns = list(frame.columns)
        if columns[:2] != ["subject_id", "y"]:
            raise ParseError(f"{table_path}:1: header must start with subject_id,y",
                             path=str(table_path), line=line_numbers[0] if line_numbers else 1)
        _check_subject_ids(frame, table_path, line_numbers)

        ids = frame["subject_id"].str.strip().tolist()
        duplicated = pd.Series(ids).duplicated().to_numpy()
        if duplicated.any():
            row = int(np.argmax(duplicated))
            raise ParseError(f"{table_path}:{line_numbers[row + 1]}: duplicate subject_id {ids[row]}",
                             path=str(table_path), line=line_numbers[row + 1])

        y = _numeric_column(frame, "y", table_path, line_numbers)
        not_binary = ~np.isin(y, (0.0, 1.0))
        if not_binary.any():
            row = int(np.argmax(not_binary))
            raise ParseError(f"{table_path}:{line_numbers[row + 1]}: y must be 0 or 1",
                             path=str(table_path), line=line_numbers[row + 1])

        covariate_names = tuple(columns[2:])
        z = np.column_stack([_numeric_column(frame, c, table_path, line_numbers) for c in covariate_names]) \
            if covariate_names else np.zeros((len(ids), 0))

        missing_trajectory = [sid for sid in ids if sid not in trajectories]
        missing_table = sorted(set(trajectories) - set(ids))
        if missing_trajectory or missing_table:
            raise JoinError(
                f"Subjects not present in both files: {len(missing_trajectory)} table-only, "
                f"{len(missing_table)} trajectory-only",
                table_only=missing_trajectory[:10], trajectory_only=missing_table[:10])

        dataset = Dataset(
            trajectories=tuple(trajectories[sid] for sid in ids),
            covariates=z,
            outcomes=y.astype(int),
            covariate_names=covariate_names,
        )
        logger.info("Dataset loaded", n=dataset.n, q=dataset.q, positives=int(dataset.outcomes.sum()))
    return dataset
