"""Unit tests for the simulation generators."""
import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from funcdata import load_dataset
from simulate import ArSimConfig, FreqSimConfig, ar_sim, export, frequency_sim, subject_ids


class TestFrequencySim:
    """Test class for the sinusoid simulation."""

    @pytest.mark.unit
    def test_trajectories_follow_latents(self, freq_data):
        """Test every trajectory is sin(pi phi k / 25) + 10 m."""
        dataset, latents = freq_data

        for i in (0, 50, 159):
            traj = dataset.trajectories[i]
            expected = np.sin(np.pi * latents.phi[i] * traj.times / 25.0) + 10.0 * latents.m[i]
            np.testing.assert_allclose(traj.values, expected, atol=1e-12)

    @pytest.mark.unit
    def test_shapes_and_names(self, freq_data):
        """Test sizes, identifiers and latent columns."""
        dataset, latents = freq_data

        assert dataset.n == 160
        assert dataset.trajectories[0].times[0] == 1.0
        assert dataset.trajectories[0].n_samples == 120
        assert dataset.covariate_names == ("z1", "z2")
        assert dataset.subject_ids[:2] == ["S0001", "S0002"]
        assert list(latents.columns) == ["subject_id", "phi", "m", "theta", "p"]

    @pytest.mark.unit
    def test_risk_increases_with_theta(self, freq_data):
        """Test outcome probabilities are monotone in theta and centred at its median."""
        _, latents = freq_data
        order = np.argsort(latents.theta.to_numpy())

        assert np.all(np.diff(latents.p.to_numpy()[order]) >= 0.0)
        assert np.median(latents.p) == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.unit
    def test_outcomes_balanced_across_seeds(self):
        """Test the positive rate averaged over 20 seeds is 0.5 within 0.02."""
        rates = [frequency_sim(FreqSimConfig(n=1000, n_i=10, q=0, seed=seed))[0].outcomes.mean()
                 for seed in range(20)]

        assert float(np.mean(rates)) == pytest.approx(0.5, abs=0.02)

    @pytest.mark.unit
    def test_deterministic_for_seed(self):
        """Test the same seed gives the same dataset and another seed does not."""
        first, _ = frequency_sim(FreqSimConfig(n=20, n_i=50, seed=3))
        second, _ = frequency_sim(FreqSimConfig(n=20, n_i=50, seed=3))
        other, _ = frequency_sim(FreqSimConfig(n=20, n_i=50, seed=4))

        assert first == second
        assert first != other

    @pytest.mark.unit
    def test_seed_required(self):
        """Test the simulation config has no default seed."""
        with pytest.raises(PydanticValidationError):
            FreqSimConfig(n=10)


class TestArSim:
    """Test class for the autoregressive simulation."""

    @pytest.mark.unit
    def test_floor_probability_for_weak_persistence(self, ar_data):
        """Test phi at or below 0.2 leaves only the baseline risk."""
        _, latents = ar_data
        weak = latents.phi <= 0.2

        assert weak.any()
        np.testing.assert_allclose(latents.p[weak], 0.01)
        assert np.all(latents.p >= 0.01) and np.all(latents.p <= 1.0)

    @pytest.mark.unit
    def test_exceedance_counts(self, ar_data):
        """Test w counts samples above 2."""
        dataset, latents = ar_data

        for i in (0, 1, 2):
            assert latents.w[i] == int(np.sum(dataset.trajectories[i].values > 2.0))

    @pytest.mark.slow
    def test_stationary_variance_and_persistence(self):
        """Test long series have variance v and lag-one autocorrelation phi."""
        dataset, latents = ar_sim(ArSimConfig(n=20, n_i=20_000, q=0, seed=17))

        for traj, phi, v in zip(dataset.trajectories, latents.phi, latents.v):
            if phi >= 0.8:
                continue
            x = traj.values
            assert x.var() == pytest.approx(v, rel=0.15)
            assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(phi, abs=0.05)

    @pytest.mark.unit
    def test_variance_bounds_checked(self):
        """Test the variance range must be ordered."""
        with pytest.raises(PydanticValidationError):
            ArSimConfig(seed=1, variance_min=5.0, variance_max=2.0)

    @pytest.mark.unit
    def test_no_covariates(self):
        """Test q = 0 gives an empty covariate matrix."""
        dataset, _ = ar_sim(ArSimConfig(n=5, n_i=20, q=0, seed=1))

        assert dataset.covariates.shape == (5, 0)


class TestExport:
    """Test class for writing simulated data."""

    @pytest.mark.unit
    def test_round_trip(self, tmp_path, freq_data):
        """Test exported files load back to the same dataset."""
        dataset, latents = freq_data

        paths = export(dataset, tmp_path, latents, config_hash="h", seed=11)
        loaded = load_dataset(tmp_path / "trajectories.csv", tmp_path / "table.csv")

        assert [p.name for p in paths] == ["trajectories.csv", "table.csv", "latents.csv"]
        assert loaded == dataset

    @pytest.mark.unit
    def test_identical_bytes_for_seed(self, tmp_path):
        """Test two runs with one seed write byte-identical files."""
        for name in ("a", "b"):
            dataset, latents = ar_sim(ArSimConfig(n=10, n_i=40, seed=2))
            export(dataset, tmp_path / name, latents, config_hash="h", seed=2)

        for file in ("trajectories.csv", "table.csv", "latents.csv"):
            assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()

    @pytest.mark.unit
    def test_subject_ids_widen(self):
        """Test identifiers stay zero-padded and unique past four digits."""
        ids = subject_ids(12_000)

        assert ids[0] == "S00001"
        assert len(set(ids)) == 12_000
