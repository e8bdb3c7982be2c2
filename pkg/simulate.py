"""Synthetic datasets: the frequency simulation and the autoregressive simulation."""
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal
from scipy.special import expit

from data_export import DataExporter
from funcdata import Dataset, Trajectory

logger = structlog.get_logger(__name__)


class FreqSimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    n: int = Field(1000, description="Subjects", ge=1)
    n_i: int = Field(500, description="Samples per subject, at t = 1..n_i", ge=2)
    q: int = Field(2, description="Standard-normal covariates", ge=0)
    seed: int = Field(..., description="Base seed", ge=0)


class ArSimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    n: int = Field(1000, description="Subjects", ge=1)
    n_i: int = Field(500, description="Samples per subject, at t = 1..n_i", ge=2)
    q: int = Field(2, description="Standard-normal covariates", ge=0)
    variance_min: float = Field(1.0, description="Lower bound of the marginal variance", gt=0)
    variance_max: float = Field(10.0, description="Upper bound of the marginal variance", gt=0)
    persistence_threshold: float = Field(0.2, description="phi above which risk rises", gt=0, lt=1)
    exceedance_level: float = Field(2.0, description="Level counted by w_i")
    floor_probability: float = Field(0.01, description="Baseline outcome probability", ge=0, le=1)
    seed: int = Field(..., description="Base seed", ge=0)

    @model_validator(mode='after')
    def validate_variance(self) -> 'ArSimConfig':
        if self.variance_min > self.variance_max:
            raise ValueError("variance_min must not exceed variance_max")
        return self


def subject_ids(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"S{i + 1:0{width}d}" for i in range(n)]


def _subject_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, i])


def frequency_sim(config: FreqSimConfig) -> tuple[Dataset, pd.DataFrame]:
    """x_i(k) = sin(pi phi_i k / 25) + 10 m_i; risk rises with theta_i = 20 phi_i min(10 m_i, 7)."""
    ids = subject_ids(config.n)
    times = np.arange(1, config.n_i + 1, dtype=float)
    phi, m, draws = np.empty(config.n), np.empty(config.n), np.empty(config.n)
    z = np.empty((config.n, config.q))
    trajectories = []

    for i in range(config.n):
        rng = _subject_rng(config.seed, i)
        phi[i], m[i] = rng.uniform(size=2)
        z[i] = rng.standard_normal(config.q)
        draws[i] = rng.uniform()
        values = np.sin(np.pi * phi[i] * times / 25.0) + 10.0 * m[i]
        trajectories.append(Trajectory(ids[i], times, values))

    theta = 20.0 * phi * np.minimum(10.0 * m, 7.0)
    probability = expit(theta - np.median(theta))
    y = (draws < probability).astype(int)

    dataset = Dataset(tuple(trajectories), z, y, tuple(f"z{k + 1}" for k in range(config.q)))
    latents = pd.DataFrame({"subject_id": ids, "phi": phi, "m": m, "theta": theta, "p": probability})
    logger.info("Frequency simulation generated", n=config.n, n_i=config.n_i, positives=int(y.sum()))
    return dataset, latents


def ar_sim(config: ArSimConfig) -> tuple[Dataset, pd.DataFrame]:
    """Stationary AR(1) with marginal variance v_i; risk driven by persistence and exceedances."""
    ids = subject_ids(config.n)
    times = np.arange(1, config.n_i + 1, dtype=float)
    phi, v, draws = np.empty(config.n), np.empty(config.n), np.empty(config.n)
    w = np.empty(config.n, dtype=int)
    z = np.empty((config.n, config.q))
    trajectories = []

    for i in range(config.n):
        rng = _subject_rng(config.seed, i)
        phi[i] = rng.uniform()
        v[i] = rng.uniform(config.variance_min, config.variance_max)
        z[i] = rng.standard_normal(config.q)
        draws[i] = rng.uniform()
        innovations = rng.standard_normal(config.n_i)
        innovations[0] *= np.sqrt(v[i])
        innovations[1:] *= np.sqrt((1.0 - phi[i] ** 2) * v[i])
        values = signal.lfilter([1.0], [1.0, -phi[i]], innovations)
        w[i] = int(np.sum(values > config.exceedance_level))
        trajectories.append(Trajectory(ids[i], times, values))

    max_w = int(w.max())
    persistent = phi > config.persistence_threshold
    share = w / max_w if max_w > 0 else np.zeros(config.n)
    probability = config.floor_probability + (1.0 - config.floor_probability) * persistent * share
    y = (draws < probability).astype(int)

    dataset = Dataset(tuple(trajectories), z, y, tuple(f"z{k + 1}" for k in range(config.q)))
    latents = pd.DataFrame({"subject_id": ids, "phi": phi, "v": v, "w": w, "p": probability})
    logger.info("AR simulation generated", n=config.n, n_i=config.n_i, positives=int(y.sum()),
                max_exceedances=max_w)
    return dataset, latents


def export(dataset: Dataset, output_dir: Path, latents: Optional[pd.DataFrame] = None,
           config_hash: str = "none", seed: Optional[int] = None,
           exporter: Optional[DataExporter] = None) -> list[Path]:
    """Write trajectories.csv and table.csv (and latents.csv when given)."""
    exporter = exporter or DataExporter(output_dir, config_hash, seed)
    return exporter.export_dataset(dataset, latents)
