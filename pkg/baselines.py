"""Comparison features: average real variability and supervised PCs of the power spectrum."""
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import structlog
from scipy import signal
from sklearn.decomposition import PCA

from error_handling import (
    DegenerateScreeningError, InsufficientDataError, TooShortError, ValidationError, log_operation,
)
from funcdata import Dataset, Trajectory
from gam import GamFit, GamSpec, fit_gam

logger = structlog.get_logger(__name__)

MIN_PCA_SUBJECTS = 50


def arv(traj: Trajectory) -> float:
    """Gap-weighted sum of absolute successive differences over the duration."""
    gaps = np.diff(traj.times)
    jumps = np.abs(np.diff(traj.values))
    return float(np.sum(gaps * jumps) / traj.duration)


def arv_features(dataset: Dataset) -> np.ndarray:
    """ARV for every subject, in dataset order."""
    return np.array([arv(traj) for traj in dataset.trajectories])


def resample(traj: Trajectory, common_dt: float) -> np.ndarray:
    """Linear interpolation onto t_0, t_0 + dt, ... up to the last sample.

    Raises TooShortError when the trajectory spans fewer than four steps.
    """
    if traj.duration < 4.0 * common_dt:
        raise TooShortError(
            f"Subject {traj.subject_id}: duration {traj.duration} s is shorter than 4 x {common_dt} s",
            subject_id=traj.subject_id)
    count = int(np.floor(traj.duration / common_dt + 1e-9)) + 1
    grid = traj.times[0] + common_dt * np.arange(count)
    return np.interp(grid, traj.times, traj.values)


def native_periodogram(traj: Trajectory, common_dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram of the mean-removed, uniformly resampled signal.

    Scaled so the powers sum to the population variance of the resampled signal.
    """
    samples = resample(traj, common_dt)
    samples = samples - samples.mean()
    return signal.periodogram(samples, fs=1.0 / common_dt, window="boxcar",
                              detrend=False, scaling="spectrum")


def common_frequency_grid(max_length: int, common_dt: float, max_bins: int) -> np.ndarray:
    """Non-zero frequencies of the longest resampled signal, truncated at ``max_bins``."""
    bins = min(max_bins, max_length // 2)
    return np.arange(1, bins + 1) / (max_length * common_dt)


def power_spectrum(traj: Trajectory, common_dt: float, max_bins: int = 1000,
                   freq_grid: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Periodogram mapped onto ``freq_grid`` (default: the trajectory's own grid)."""
    freqs, power = native_periodogram(traj, common_dt)
    if freq_grid is None:
        freq_grid = freqs[1:max_bins + 1]
    mapped = np.interp(freq_grid, freqs, power, right=0.0)
    return np.asarray(freq_grid, dtype=float), np.clip(mapped, 0.0, None)


@dataclass(frozen=True, eq=False)
class SpectrumFeatures:
    """Per-subject power on one shared frequency grid (rows follow ``subject_ids``)."""

    subject_ids: tuple
    freq_grid: np.ndarray
    power: np.ndarray
    common_dt: float

    @property
    def n(self) -> int:
        return int(self.power.shape[0])

    def subset(self, indices: Sequence[int]) -> "SpectrumFeatures":
        indices = np.asarray(indices, dtype=int)
        return SpectrumFeatures(tuple(self.subject_ids[i] for i in indices), self.freq_grid,
                                self.power[indices], self.common_dt)


def spectrum_features(trajectories: Sequence[Trajectory], common_dt: float,
                      max_bins: int = 1000) -> SpectrumFeatures:
    """Periodograms of every trajectory mapped onto the grid of the longest one."""
    if common_dt <= 0:
        raise ValidationError(f"common_dt must be positive, got {common_dt}")
    with log_operation("spectrum_features", logger_name=__name__, n=len(trajectories), common_dt=common_dt):
        periodograms = [native_periodogram(traj, common_dt) for traj in trajectories]
        max_length = max(int(np.floor(t.duration / common_dt + 1e-9)) + 1 for t in trajectories)
        grid = common_frequency_grid(max_length, common_dt, max_bins)
        power = np.vstack([np.clip(np.interp(grid, f, p, right=0.0), 0.0, None) for f, p in periodograms])
    return SpectrumFeatures(tuple(t.subject_id for t in trajectories), grid, power, float(common_dt))


def screening_statistics(matrix: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Univariate logistic score statistic per column, sqrt(n) * corr(x, y)."""
    y = np.asarray(y, dtype=float)
    centered = matrix - matrix.mean(axis=0)
    sum_sq = np.sum(centered ** 2, axis=0)
    ybar = y.mean()
    score = centered.T @ (y - ybar)
    variance = ybar * (1.0 - ybar) * sum_sq
    statistics = np.zeros(matrix.shape[1])
    ok = variance > 0
    statistics[ok] = score[ok] / np.sqrt(variance[ok])
    return statistics


@dataclass(frozen=True, eq=False)
class SupervisedPcs:
    """Screened, standardized spectrum PCA fitted on training subjects."""

    freq_grid: np.ndarray
    selected_mask: np.ndarray
    statistics: np.ndarray
    threshold: float
    means: np.ndarray
    scales: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    log_spectrum: bool
    pca: PCA

    @property
    def k(self) -> int:
        return int(self.loadings.shape[0])

    def _prepare(self, power: np.ndarray) -> np.ndarray:
        matrix = np.log1p(power) if self.log_spectrum else np.asarray(power, dtype=float)
        return (matrix[:, self.selected_mask] - self.means) / self.scales

    def transform(self, spectra: SpectrumFeatures) -> np.ndarray:
        """Scores for new subjects with the screening and standardization fixed."""
        return self.pca.transform(self._prepare(spectra.power))

    def full_loadings(self) -> np.ndarray:
        """k x frequencies, zero at screened-out frequencies."""
        full = np.zeros((self.k, self.freq_grid.size))
        full[:, self.selected_mask] = self.loadings
        return full


def supervised_pca(spectra: SpectrumFeatures, y: np.ndarray, k: int = 3, log_spectrum: bool = True,
                   screening_z: float = 1.96) -> SupervisedPcs:
    """Screen frequencies by association with y, then PCA on the standardized survivors.

    Frequencies whose |score statistic| reaches the threshold are retained; the
    threshold is ``screening_z`` lowered as far as needed for max(10, 5k)
    frequencies to survive.
    """
    y = np.asarray(y).astype(int)
    n = spectra.n
    if n < MIN_PCA_SUBJECTS:
        raise InsufficientDataError(f"supervised_pca needs at least {MIN_PCA_SUBJECTS} subjects, got {n}")
    if y.size != n or y.min() == y.max():
        raise InsufficientDataError("supervised_pca needs labels with both classes for every subject")

    matrix = np.log1p(spectra.power) if log_spectrum else np.asarray(spectra.power, dtype=float)
    statistics = screening_statistics(matrix, y)
    usable = matrix.std(axis=0) > 0
    magnitude = np.where(usable, np.abs(statistics), -np.inf)

    floor = max(10, 5 * k)
    ranked = np.sort(magnitude[usable])[::-1]
    threshold = float(min(screening_z, ranked[floor - 1])) if ranked.size >= floor else 0.0
    selected = usable & (magnitude >= threshold)
    if selected.sum() < k:
        raise DegenerateScreeningError(f"Only {int(selected.sum())} frequencies retained for k = {k}",
                                       retained=int(selected.sum()), k=k)

    retained = matrix[:, selected]
    means = retained.mean(axis=0)
    scales = retained.std(axis=0)
    pca = PCA(n_components=k, svd_solver="full")
    scores = pca.fit_transform((retained - means) / scales)

    logger.debug("Supervised PCA fitted", retained=int(selected.sum()), threshold=round(threshold, 4),
                 explained=np.round(pca.explained_variance_ratio_, 4).tolist())
    return SupervisedPcs(freq_grid=spectra.freq_grid, selected_mask=selected, statistics=statistics,
                         threshold=threshold, means=means, scales=scales, loadings=pca.components_,
                         scores=scores, log_spectrum=log_spectrum, pca=pca)


def fit_baseline_gam(which: Literal["arv", "spectrum"], dataset: Dataset, features: np.ndarray,
                     spec: Optional[GamSpec] = None) -> GamFit:
    """GAM with ARV (one smooth) or PC scores (k smooths) in place of the XWFs."""
    features = np.asarray(features, dtype=float)
    if which == "arv":
        features = features.reshape(-1, 1)
        names = ["ARV"]
    elif which == "spectrum":
        features = features.reshape(dataset.n, -1)
        names = [f"PC{j + 1}" for j in range(features.shape[1])]
    else:
        raise ValidationError(f"Unknown baseline '{which}'")
    if features.shape[0] != dataset.n:
        raise ValidationError(f"{features.shape[0]} feature rows for {dataset.n} subjects")
    return fit_gam(features, dataset.covariates, dataset.outcomes, spec, names, dataset.covariate_names)
