"""Unit tests for the ARV and spectrum comparison features."""
import numpy as np
import pytest

from baselines import (
    SpectrumFeatures, arv, arv_features, fit_baseline_gam, native_periodogram, power_spectrum,
    resample, screening_statistics, spectrum_features, supervised_pca,
)
from error_handling import DegenerateScreeningError, InsufficientDataError, TooShortError, ValidationError
from funcdata import Trajectory


def exponential_spectra(n=200, bins=100, informative=5, seed=0):
    """Exponential powers with one frequency four times stronger for the positives."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    power = rng.exponential(size=(n, bins))
    power[:, informative] *= np.where(y == 1, 4.0, 1.0)
    ids = tuple(f"S{i}" for i in range(n))
    return SpectrumFeatures(ids, np.arange(1, bins + 1) / 200.0, power, 1.0), y


class TestArv:
    """Test class for average real variability."""

    @pytest.mark.unit
    def test_constant_trajectory(self, make_trajectory):
        """Test a flat signal has no variability."""
        assert arv(make_trajectory(values=(100.0, 100.0, 100.0))) == 0.0

    @pytest.mark.unit
    def test_documented_example(self):
        """Test (0, 10, 0) at (0, 60, 120) gives 10."""
        assert arv(Trajectory("A", [0.0, 60.0, 120.0], [0.0, 10.0, 0.0])) == pytest.approx(10.0)

    @pytest.mark.unit
    def test_invariant_to_time_dilation(self):
        """Test stretching time leaves ARV unchanged."""
        rng = np.random.default_rng(4)
        times = np.cumsum(rng.uniform(10.0, 60.0, 50))
        values = rng.normal(100.0, 10.0, 50)

        assert arv(Trajectory("A", 3.0 * times, values)) == pytest.approx(arv(Trajectory("A", times, values)))

    @pytest.mark.unit
    def test_scales_with_values(self):
        """Test multiplying values by c multiplies ARV by c."""
        times = np.arange(0.0, 300.0, 30.0)
        values = 100.0 + np.sin(times / 50.0)

        assert arv(Trajectory("A", times, 2.5 * values)) == pytest.approx(2.5 * arv(Trajectory("A", times, values)))

    @pytest.mark.unit
    def test_monotone_with_unit_spacing(self):
        """Test a monotone trajectory sampled every second gives its net change over the duration."""
        times = np.arange(0.0, 11.0)
        values = np.cumsum(np.random.default_rng(6).uniform(0.0, 3.0, 11))

        expected = (values[-1] - values[0]) / 10.0
        assert arv(Trajectory("A", times, values)) == pytest.approx(expected)

    @pytest.mark.unit
    def test_one_value_per_subject(self, make_dataset):
        """Test the feature vector follows subject order."""
        dataset = make_dataset(n=6)

        values = arv_features(dataset)

        assert values.shape == (6,)
        assert values[2] == pytest.approx(arv(dataset.trajectories[2]))


class TestPeriodogram:
    """Test class for resampling and power spectra."""

    @pytest.mark.unit
    def test_power_sums_to_variance(self):
        """Test the powers add up to the variance of the resampled signal."""
        rng = np.random.default_rng(8)
        times = np.sort(np.concatenate([[0.0, 1000.0], rng.uniform(0.0, 1000.0, 300)]))
        traj = Trajectory("A", times, rng.standard_normal(times.size))

        _, power = native_periodogram(traj, 2.0)

        assert power.sum() == pytest.approx(resample(traj, 2.0).var(), rel=1e-10)

    @pytest.mark.unit
    def test_sinusoid_concentrates_in_its_bin(self):
        """Test a pure sinusoid puts at least 80% of its power in one bin."""
        times = np.arange(0.0, 512.0)
        traj = Trajectory("A", times, np.sin(2 * np.pi * 32 * times / 512.0))

        freqs, power = native_periodogram(traj, 1.0)

        assert freqs[np.argmax(power)] == pytest.approx(32 / 512.0)
        assert power.max() >= 0.8 * power.sum()

    @pytest.mark.unit
    def test_constant_signal_has_no_power(self):
        """Test a flat signal gives an all-zero spectrum."""
        traj = Trajectory("A", np.arange(0.0, 64.0), np.full(64, 7.0))

        _, power = power_spectrum(traj, 1.0)

        assert np.all(power == 0.0)

    @pytest.mark.unit
    def test_white_noise_is_flat(self):
        """Test no bin holds more than 10% of the power of long white noise."""
        times = np.arange(0.0, 4096.0)
        for seed in range(10):
            traj = Trajectory("A", times, np.random.default_rng(seed).standard_normal(times.size))

            _, power = power_spectrum(traj, 1.0)

            assert power.max() <= 0.1 * power.sum()

    @pytest.mark.unit
    def test_too_short_for_resampling(self):
        """Test a duration under four intervals is refused."""
        with pytest.raises(TooShortError):
            resample(Trajectory("A", [0.0, 1.0, 2.0, 3.0], [1.0, 2.0, 1.0, 2.0]), 1.0)

    @pytest.mark.unit
    def test_resample_interpolates(self):
        """Test resampling a line onto a finer grid."""
        samples = resample(Trajectory("A", [0.0, 10.0], [0.0, 10.0]), 2.0)

        np.testing.assert_allclose(samples, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])


class TestSpectrumFeatures:
    """Test class for the common-grid spectrum matrix."""

    @pytest.mark.unit
    def test_common_grid(self, freq_dataset):
        """Test every subject is mapped onto one grid without the zero frequency."""
        spectra = spectrum_features(freq_dataset.trajectories, 1.0, max_bins=40)

        assert spectra.power.shape == (freq_dataset.n, 40)
        assert spectra.freq_grid[0] > 0.0
        assert np.all(np.diff(spectra.freq_grid) > 0.0)
        assert np.all(spectra.power >= 0.0)
        assert spectra.subject_ids[0] == freq_dataset.subject_ids[0]

    @pytest.mark.unit
    def test_subset(self, freq_dataset):
        """Test subsetting keeps the grid and picks rows."""
        spectra = spectrum_features(freq_dataset.trajectories, 1.0, max_bins=20)

        part = spectra.subset([3, 1])

        assert part.n == 2
        assert part.subject_ids == (spectra.subject_ids[3], spectra.subject_ids[1])
        np.testing.assert_array_equal(part.power[0], spectra.power[3])

    @pytest.mark.unit
    def test_non_positive_interval(self, freq_dataset):
        """Test the resampling interval must be positive."""
        with pytest.raises(ValidationError):
            spectrum_features(freq_dataset.trajectories, 0.0)


class TestSupervisedPca:
    """Test class for screening and principal components."""

    @pytest.mark.unit
    def test_informative_frequency_retained(self):
        """Test the frequency with stronger power for positives passes screening."""
        spectra, y = exponential_spectra()

        pcs = supervised_pca(spectra, y, k=3)

        assert pcs.selected_mask[5]
        assert pcs.statistics[5] > pcs.threshold
        assert pcs.scores.shape == (200, 3)

    @pytest.mark.unit
    def test_scores_uncorrelated(self):
        """Test PC scores are mutually uncorrelated and reproduced by transform."""
        spectra, y = exponential_spectra(seed=1)

        pcs = supervised_pca(spectra, y, k=3)
        correlation = np.corrcoef(pcs.scores.T)

        assert np.max(np.abs(correlation - np.eye(3))) < 1e-8
        np.testing.assert_allclose(pcs.transform(spectra), pcs.scores, atol=1e-8)

    @pytest.mark.unit
    def test_full_loadings_zero_outside_selection(self):
        """Test screened-out frequencies carry no loading."""
        spectra, y = exponential_spectra(seed=2)

        pcs = supervised_pca(spectra, y, k=2)
        full = pcs.full_loadings()

        assert full.shape == (2, 100)
        assert np.all(full[:, ~pcs.selected_mask] == 0.0)
        assert pcs.selected_mask.sum() >= 10

    @pytest.mark.unit
    def test_rank_one_spectra(self):
        """Test powers proportional to one profile need a single component."""
        rng = np.random.default_rng(3)
        n = 80
        amplitude = rng.uniform(1.0, 2.0, n)
        y = (amplitude > np.median(amplitude)).astype(int)
        power = np.outer(amplitude, np.linspace(1.0, 5.0, 30))
        spectra = SpectrumFeatures(tuple(map(str, range(n))), np.arange(1, 31) / 60.0, power, 1.0)

        pcs = supervised_pca(spectra, y, k=1, log_spectrum=False)

        assert pcs.k == 1
        assert pcs.pca.explained_variance_ratio_[0] == pytest.approx(1.0, abs=1e-10)
        assert abs(np.corrcoef(pcs.scores[:, 0], amplitude)[0, 1]) > 0.999

    @pytest.mark.unit
    def test_too_few_subjects(self):
        """Test fewer than 50 subjects is refused."""
        spectra, y = exponential_spectra(n=40)

        with pytest.raises(InsufficientDataError):
            supervised_pca(spectra, y)

    @pytest.mark.unit
    def test_too_few_usable_frequencies(self):
        """Test fewer usable frequencies than components is degenerate."""
        spectra, y = exponential_spectra()
        power = np.ones_like(spectra.power)
        power[:, :2] = spectra.power[:, :2]
        flat = SpectrumFeatures(spectra.subject_ids, spectra.freq_grid, power, 1.0)

        with pytest.raises(DegenerateScreeningError):
            supervised_pca(flat, y, k=3)

    @pytest.mark.unit
    def test_screening_statistic_sign(self):
        """Test a column rising with y has a positive statistic and a constant one zero."""
        y = np.array([0, 0, 1, 1])
        matrix = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])

        statistics = screening_statistics(matrix, y)

        assert statistics[0] > 0.0
        assert statistics[1] == 0.0


class TestBaselineGam:
    """Test class for the comparison models."""

    @pytest.mark.unit
    def test_arv_model_terms(self, freq_dataset):
        """Test the ARV model has one smooth named ARV followed by the covariates."""
        fit = fit_baseline_gam("arv", freq_dataset, arv_features(freq_dataset))

        assert fit.term_names == ["ARV", "z1", "z2"]

    @pytest.mark.unit
    def test_spectrum_model_terms(self, freq_dataset):
        """Test the spectrum model has one smooth per PC."""
        spectra = spectrum_features(freq_dataset.trajectories, 1.0)
        pcs = supervised_pca(spectra, freq_dataset.outcomes, k=3)

        fit = fit_baseline_gam("spectrum", freq_dataset, pcs.scores)

        assert fit.term_names == ["PC1", "PC2", "PC3", "z1", "z2"]

    @pytest.mark.unit
    def test_unknown_baseline(self, freq_dataset):
        """Test only arv and spectrum are known."""
        with pytest.raises(ValidationError):
            fit_baseline_gam("wavelet", freq_dataset, arv_features(freq_dataset))
