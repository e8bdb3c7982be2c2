"""Test fixtures and utilities for the extrema-weighted feature toolkit tests."""
import numpy as np
import pytest

from config import RunConfig
from data_export import DataExporter
from density import fit_marginal
from funcdata import Dataset, Trajectory
from metrics import metrics
from simulate import ArSimConfig, FreqSimConfig, ar_sim, frequency_sim


@pytest.fixture(autouse=True)
def reset_metrics():
    """Start every test with zeroed counters."""
    metrics.reset()
    yield
    metrics.reset()


@pytest.fixture(scope="session")
def freq_data():
    """Small frequency-simulation dataset with its latents."""
    return frequency_sim(FreqSimConfig(n=160, n_i=120, q=2, seed=11))


@pytest.fixture(scope="session")
def freq_dataset(freq_data):
    return freq_data[0]


@pytest.fixture(scope="session")
def ar_data():
    """Small autoregressive-simulation dataset with its latents."""
    return ar_sim(ArSimConfig(n=160, n_i=120, q=2, seed=5))


@pytest.fixture(scope="session")
def freq_marginal(freq_dataset):
    return fit_marginal(freq_dataset.trajectories, grid_size=512)


@pytest.fixture
def run_config(tmp_path):
    """Config writing into a temporary directory with cleaning off."""
    return RunConfig(output_dir=tmp_path / "out", seed=3, apply_cleaning=False, common_dt=1.0)


@pytest.fixture
def exporter(tmp_path):
    return DataExporter(tmp_path / "artifacts", config_hash="abc123", seed=7)


@pytest.fixture
def written_dataset(tmp_path, freq_dataset):
    """The frequency-simulation dataset written as trajectories.csv and table.csv."""
    directory = tmp_path / "data"
    DataExporter(directory, config_hash="fixture", seed=11).export_dataset(freq_dataset)
    return directory / "trajectories.csv", directory / "table.csv"


def _make_trajectory(subject_id="S1", times=(0.0, 30.0, 60.0), values=(100.0, 110.0, 105.0)):
    """Helper function to create a trajectory."""
    return Trajectory(subject_id, np.asarray(times, dtype=float), np.asarray(values, dtype=float))


def _make_dataset(n=4, q=1, seed=0):
    """Helper function to create a small dataset with alternating outcomes."""
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, 3600.0, 30.0)
    trajectories = tuple(
        Trajectory(f"S{i + 1}", times, 80.0 + 10.0 * rng.standard_normal(times.size))
        for i in range(n)
    )
    return Dataset(trajectories, rng.standard_normal((n, q)), np.arange(n) % 2)


@pytest.fixture
def make_trajectory():
    return _make_trajectory


@pytest.fixture
def make_dataset():
    return _make_dataset


@pytest.fixture
def write_csv(tmp_path):
    """Write raw CSV text under tmp_path and return the path."""
    def write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return write
