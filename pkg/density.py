"""Duration-weighted marginal density of predictor values and the quantile transform."""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import structlog
from scipy import integrate, signal

from error_handling import DegenerateDataError, InsufficientDataError, ValidationError
from funcdata import Trajectory, trapezoid_weights

logger = structlog.get_logger(__name__)

# Kernel support in bandwidths; beyond this the Gaussian is below 4e-6.
_KERNEL_REACH = 5.0
_GRID_PAD = 3.0


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Tabulated marginal density and CDF on an equally spaced grid."""

    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    bandwidth: float

    def __post_init__(self):
        for name in ("grid", "pdf", "cdf"):
            array = np.array(getattr(self, name), dtype=float)
            array.flags.writeable = False
            object.__setattr__(self, name, array)
        if not (self.grid.shape == self.pdf.shape == self.cdf.shape) or self.grid.ndim != 1:
            raise ValidationError("grid, pdf and cdf must be equal-length vectors")
        if np.any(np.diff(self.grid) <= 0):
            raise ValidationError("Marginal grid must be strictly increasing")
        if self.bandwidth <= 0:
            raise ValidationError(f"Bandwidth must be positive, got {self.bandwidth}")

    @property
    def grid_size(self) -> int:
        return int(self.grid.size)

    def cdf_eval(self, x):
        return cdf_eval(self, x)


def sample_weights(trajectories: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Pool every sample with weight (half-gap to its neighbours) / (T_i * n).

    Each subject's weights sum to 1/n, so every subject contributes equally
    whatever its sample count or duration.
    """
    n = len(trajectories)
    values, weights = [], []
    for traj in trajectories:
        values.append(traj.values)
        weights.append(trapezoid_weights(traj.times) / traj.duration / n)
    return np.concatenate(values), np.concatenate(weights)


def silverman_bandwidth(values: np.ndarray, weights: np.ndarray) -> float:
    weights = weights / weights.sum()
    mean = float(np.dot(weights, values))
    sigma = float(np.sqrt(np.dot(weights, (values - mean) ** 2)))
    n_eff = 1.0 / float(np.sum(weights ** 2))
    return 1.06 * sigma * n_eff ** (-0.2)


def _linear_binning(values: np.ndarray, weights: np.ndarray, lo: float, dx: float, size: int) -> np.ndarray:
    position = (values - lo) / dx
    left = np.clip(np.floor(position).astype(int), 0, size - 2)
    frac = np.clip(position - left, 0.0, 1.0)
    binned = np.bincount(left, weights=weights * (1.0 - frac), minlength=size)
    binned += np.bincount(left + 1, weights=weights * frac, minlength=size)
    return binned


def fit_marginal(trajectories: Sequence[Trajectory], grid_size: int = 1024,
                 bandwidth: Optional[float] = None) -> MarginalModel:
    """Gaussian-kernel estimate of the population marginal of predictor values."""
    if len(trajectories) == 0:
        raise InsufficientDataError("fit_marginal needs at least one trajectory")
    if grid_size < 64:
        raise ValidationError(f"grid_size must be at least 64, got {grid_size}")

    values, weights = sample_weights(trajectories)
    v_min, v_max = float(values.min()), float(values.max())
    if v_max <= v_min:
        raise DegenerateDataError(f"All {values.size} predictor values equal {v_min}; bandwidth would be 0")

    h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(values, weights)
    if not np.isfinite(h) or h <= 0:
        raise DegenerateDataError(f"Degenerate bandwidth {h}")

    grid = np.linspace(v_min - _GRID_PAD * h, v_max + _GRID_PAD * h, grid_size)
    dx = float(grid[1] - grid[0])
    binned = _linear_binning(values, weights, float(grid[0]), dx, grid_size)

    reach = int(min(grid_size - 1, np.ceil(_KERNEL_REACH * h / dx)))
    offsets = np.arange(-reach, reach + 1) * dx
    kernel = np.exp(-0.5 * (offsets / h) ** 2) / (h * np.sqrt(2.0 * np.pi))

    pdf = np.clip(signal.fftconvolve(binned, kernel, mode="same"), 0.0, None)
    pdf /= integrate.trapezoid(pdf, grid)

    cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
    cdf = np.maximum.accumulate(np.clip(cdf / cdf[-1], 0.0, 1.0))
    cdf[-1] = 1.0

    logger.info("Marginal fitted", n_subjects=len(trajectories), n_samples=int(values.size),
                bandwidth=round(h, 6), grid_size=grid_size)
    return MarginalModel(grid=grid, pdf=pdf, cdf=cdf, bandwidth=h)


def cdf_eval(model: MarginalModel, x):
    """F(x) by linear interpolation of the CDF table; 0 below the grid, 1 above."""
    u = np.interp(x, model.grid, model.cdf, left=0.0, right=1.0)
    return float(u) if np.ndim(u) == 0 else u
