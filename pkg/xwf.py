"""Weight functions, local features and extrema-weighted feature integrals."""
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np
import structlog
from scipy import integrate

from density import MarginalModel, cdf_eval
from error_handling import ValidationError
from funcdata import Dataset, Trajectory, derivative, trapezoid_weights

logger = structlog.get_logger(__name__)

SIDES = ("L", "R")


class LocalFeatureKind(IntEnum):
    CONSTANT = 1
    LEVEL = 2
    RISE = 3
    FALL = 4


ALL_KINDS = tuple(LocalFeatureKind)


def normalize_kinds(kinds: Iterable) -> tuple[LocalFeatureKind, ...]:
    kinds = tuple(LocalFeatureKind(int(k)) for k in kinds)
    if not kinds:
        raise ValidationError("At least one local feature is required")
    if len(set(kinds)) != len(kinds):
        raise ValidationError(f"Duplicate local features in {list(map(int, kinds))}")
    return kinds


def feature_columns(kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> list[str]:
    """Column order used everywhere: wL for every kind, then wR."""
    return [f"w{side}{int(kind)}" for side in SIDES for kind in kinds]


def term_names(kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> list[str]:
    return [f"beta_{side}{int(kind)}" for side in SIDES for kind in kinds]


def _check_left(b) -> None:
    b = np.asarray(b, dtype=float)
    if np.any((b <= 0.0) | (b > 0.5)):
        raise ValidationError(f"b_left must lie in (0, 1/2], got {b}")


def _check_right(b) -> None:
    b = np.asarray(b, dtype=float)
    if np.any((b < 0.5) | (b >= 1.0)):
        raise ValidationError(f"b_right must lie in [1/2, 1), got {b}")


@dataclass(frozen=True)
class WeightParams:
    """Tail-weight parameters b_L (per feature) and b_R (per feature)."""

    b_left: tuple
    b_right: tuple

    def __post_init__(self):
        b_left = tuple(float(b) for b in self.b_left)
        b_right = tuple(float(b) for b in self.b_right)
        if len(b_left) != len(b_right) or not b_left:
            raise ValidationError("b_left and b_right must be non-empty and of equal length")
        _check_left(b_left)
        _check_right(b_right)
        object.__setattr__(self, "b_left", b_left)
        object.__setattr__(self, "b_right", b_right)

    @classmethod
    def initial(cls, p: int = 4) -> "WeightParams":
        return cls(b_left=(0.25,) * p, b_right=(0.75,) * p)

    @property
    def p(self) -> int:
        return len(self.b_left)

    def get(self, side: str, j: int) -> float:
        return self.b_left[j] if side == "L" else self.b_right[j]

    def replace(self, side: str, j: int, value: float) -> "WeightParams":
        if side == "L":
            b_left = list(self.b_left)
            b_left[j] = value
            return WeightParams(tuple(b_left), self.b_right)
        if side == "R":
            b_right = list(self.b_right)
            b_right[j] = value
            return WeightParams(self.b_left, tuple(b_right))
        raise ValidationError(f"Unknown side '{side}'")

    def as_dict(self, kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> dict[str, float]:
        values = {f"b_L{int(k)}": b for k, b in zip(kinds, self.b_left)}
        values.update({f"b_R{int(k)}": b for k, b in zip(kinds, self.b_right)})
        return values


def omega_left(u, b: float):
    """1 for u <= b, falling linearly to 0 at u = 1."""
    _check_left(b)
    u = np.asarray(u, dtype=float)
    weight = np.where(u <= b, 1.0, (1.0 - u) / (1.0 - b))
    return float(weight) if weight.ndim == 0 else weight


def omega_right(u, b: float):
    """1 for u >= b, rising linearly from 0 at u = 0."""
    _check_right(b)
    u = np.asarray(u, dtype=float)
    weight = np.where(u >= b, 1.0, u / b)
    return float(weight) if weight.ndim == 0 else weight


def omega(side: str, u, b: float):
    return omega_left(u, b) if side == "L" else omega_right(u, b)


def local_feature_series(kind: LocalFeatureKind, traj: Trajectory, deriv: np.ndarray) -> np.ndarray:
    kind = LocalFeatureKind(kind)
    if kind is LocalFeatureKind.CONSTANT:
        return np.ones_like(traj.values)
    if kind is LocalFeatureKind.LEVEL:
        return np.array(traj.values)
    if kind is LocalFeatureKind.RISE:
        return np.maximum(0.0, deriv)
    return np.maximum(0.0, -np.asarray(deriv))


def local_feature(kind: LocalFeatureKind, traj: Trajectory, deriv: np.ndarray, k: int) -> float:
    return float(local_feature_series(kind, traj, deriv)[k])


@dataclass(frozen=True, eq=False)
class XwfFeatures:
    subject_id: str
    w_left: np.ndarray
    w_right: np.ndarray

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.w_left, self.w_right])


def compute_xwf(traj: Trajectory, marginal: MarginalModel, params: WeightParams,
                kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> XwfFeatures:
    """(1/T) * integral of omega(F(x(t))) * psi_j(t) dt by the trapezoidal rule."""
    kinds = normalize_kinds(kinds)
    if params.p != len(kinds):
        raise ValidationError(f"{params.p} weight pairs for {len(kinds)} local features")

    u = cdf_eval(marginal, traj.values)
    deriv = derivative(traj)
    w_left = np.empty(len(kinds))
    w_right = np.empty(len(kinds))
    for j, kind in enumerate(kinds):
        psi = local_feature_series(kind, traj, deriv)
        w_left[j] = integrate.trapezoid(omega_left(u, params.b_left[j]) * psi, traj.times) / traj.duration
        w_right[j] = integrate.trapezoid(omega_right(u, params.b_right[j]) * psi, traj.times) / traj.duration
    return XwfFeatures(traj.subject_id, w_left, w_right)


class FeatureExtractor:
    """Quantiles, local features and quadrature weights prepared once per dataset.

    A single feature column for new weight parameters then costs one weighted
    sum over the pooled samples, which is what the grid search needs.
    """

    def __init__(self, trajectories: Sequence[Trajectory], marginal: MarginalModel,
                 kinds: Sequence[LocalFeatureKind] = ALL_KINDS):
        self.kinds = normalize_kinds(kinds)
        self.subject_ids = [traj.subject_id for traj in trajectories]
        self.n = len(trajectories)

        u, psi, quad, owner = [], [], [], []
        for i, traj in enumerate(trajectories):
            deriv = derivative(traj)
            u.append(cdf_eval(marginal, traj.values))
            psi.append(np.vstack([local_feature_series(k, traj, deriv) for k in self.kinds]))
            quad.append(trapezoid_weights(traj.times) / traj.duration)
            owner.append(np.full(traj.n_samples, i))

        self._u = np.concatenate(u)
        self._psi = np.hstack(psi)
        self._quad = np.concatenate(quad)
        self._owner = np.concatenate(owner)

    @classmethod
    def from_dataset(cls, dataset: Dataset, marginal: MarginalModel,
                     kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> "FeatureExtractor":
        return cls(dataset.trajectories, marginal, kinds)

    @property
    def p(self) -> int:
        return len(self.kinds)

    @property
    def columns(self) -> list[str]:
        return feature_columns(self.kinds)

    def column(self, j: int, side: str, b: float) -> np.ndarray:
        weighted = omega(side, self._u, b) * self._psi[j] * self._quad
        return np.bincount(self._owner, weights=weighted, minlength=self.n)

    def matrix(self, params: WeightParams) -> np.ndarray:
        if params.p != self.p:
            raise ValidationError(f"{params.p} weight pairs for {self.p} local features")
        left = [self.column(j, "L", b) for j, b in enumerate(params.b_left)]
        right = [self.column(j, "R", b) for j, b in enumerate(params.b_right)]
        return np.column_stack(left + right)

    def features(self, params: WeightParams) -> list[XwfFeatures]:
        matrix = self.matrix(params)
        return [XwfFeatures(sid, row[:self.p].copy(), row[self.p:].copy())
                for sid, row in zip(self.subject_ids, matrix)]


def extract_features(dataset: Dataset, marginal: MarginalModel, params: WeightParams,
                     kinds: Sequence[LocalFeatureKind] = ALL_KINDS) -> np.ndarray:
    """n x 2p feature matrix in ``feature_columns`` order."""
    extractor = FeatureExtractor.from_dataset(dataset, marginal, kinds)
    matrix = extractor.matrix(params)
    logger.debug("Features extracted", n=dataset.n, p=extractor.p)
    return matrix
