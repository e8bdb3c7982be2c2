"""Randomization-test calibration of term p-values, and the predictive comparison study."""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence, Union

import numpy as np
import structlog
from scipy import stats

from baselines import arv_features, fit_baseline_gam, spectrum_features, supervised_pca
from config import RunConfig
from density import MarginalModel, fit_marginal
from error_handling import (
    ConvergenceError, DegenerateDataError, DegenerateScreeningError, SearchError, SplitError,
    UndefinedAucError, ValidationError, log_operation,
)
from funcdata import Dataset, median_sampling_interval
from gam import GamSpec, fit_gam
from metrics import metrics
from optimize import adaptive_grid_search
from performance import WorkerPool
from xwf import ALL_KINDS, FeatureExtractor, LocalFeatureKind, WeightParams, normalize_kinds, term_names

logger = structlog.get_logger(__name__)

MIN_REPLICATES = 19

# Failures that make one replicate unusable without invalidating the test.
REPLICATE_FAILURES = (ConvergenceError, SearchError, DegenerateScreeningError, DegenerateDataError,
                      np.linalg.LinAlgError)

PREDICTION_MODELS = ("xwf", "xwf+arv", "xwf+spectrum")


class XwfPipeline:
    """Weight search plus GAM; the marginal and local features are fixed across outcomes."""

    method = "Extrema-weighted features"

    def __init__(self, dataset: Dataset, spec: GamSpec, marginal: Optional[MarginalModel] = None,
                 levels: int = 3, kinds: Sequence[LocalFeatureKind] = ALL_KINDS,
                 refit_weights: bool = True, grid_size: int = 1024, bandwidth: Optional[float] = None):
        self.dataset = dataset
        self.spec = spec
        self.levels = levels
        self.kinds = normalize_kinds(kinds)
        self.refit_weights = refit_weights
        self.marginal = marginal or fit_marginal(dataset.trajectories, grid_size, bandwidth)
        self.extractor = FeatureExtractor.from_dataset(dataset, self.marginal, self.kinds)
        self.term_names = term_names(self.kinds) + list(dataset.covariate_names)
        self.observed_params: Optional[WeightParams] = None

    def run(self, y: np.ndarray) -> np.ndarray:
        """Internal p-values for outcome vector y. Weights are re-searched unless refit_weights is off."""
        data = self.dataset.with_outcomes(y)
        if self.refit_weights or self.observed_params is None:
            params, fit, _ = adaptive_grid_search(data, self.marginal, self.spec, self.levels,
                                                  self.kinds, workers=1, extractor=self.extractor)
            if fit is None:
                raise ConvergenceError("GAM fit failed at the selected weight parameters")
            if self.observed_params is None:
                self.observed_params = params
        else:
            fit = fit_gam(self.extractor.matrix(self.observed_params), data.covariates, data.outcomes,
                          self.spec, term_names(self.kinds), data.covariate_names)
        return fit.term_pvalues


class ArvPipeline:
    """ARV as a single smooth term next to the covariates."""

    method = "Average real variability"

    def __init__(self, dataset: Dataset, spec: GamSpec):
        self.dataset = dataset
        self.spec = spec
        self.features = arv_features(dataset)
        self.term_names = ["ARV"] + list(dataset.covariate_names)

    def run(self, y: np.ndarray) -> np.ndarray:
        return fit_baseline_gam("arv", self.dataset.with_outcomes(y), self.features, self.spec).term_pvalues


class SpectrumPipeline:
    """Spectra are computed once; screening and PCA are redone for every outcome vector."""

    method = "Power spectrum"

    def __init__(self, dataset: Dataset, spec: GamSpec, common_dt: Optional[float] = None,
                 max_bins: int = 1000, n_components: int = 3, log_spectrum: bool = True,
                 screening_z: float = 1.96):
        self.dataset = dataset
        self.spec = spec
        self.n_components = n_components
        self.log_spectrum = log_spectrum
        self.screening_z = screening_z
        common_dt = common_dt or median_sampling_interval(dataset.trajectories)
        self.spectra = spectrum_features(dataset.trajectories, common_dt, max_bins)
        self.term_names = [f"PC{j + 1}" for j in range(n_components)] + list(dataset.covariate_names)

    def run(self, y: np.ndarray) -> np.ndarray:
        pcs = supervised_pca(self.spectra, y, self.n_components, self.log_spectrum, self.screening_z)
        return fit_baseline_gam("spectrum", self.dataset.with_outcomes(y), pcs.scores, self.spec).term_pvalues


Pipeline = Union[XwfPipeline, ArvPipeline, SpectrumPipeline]


def build_pipeline(name: str, dataset: Dataset, config: RunConfig,
                   marginal: Optional[MarginalModel] = None) -> Pipeline:
    """Pipeline for "xwf", "arv" or "spectrum" configured from the run settings."""
    spec = config.gam_spec()
    if name == "xwf":
        return XwfPipeline(dataset, spec, marginal, config.levels, ALL_KINDS, config.refit_weights,
                           config.grid_size, config.bandwidth)
    if name == "arv":
        return ArvPipeline(dataset, spec)
    if name == "spectrum":
        return SpectrumPipeline(dataset, spec, config.common_dt, config.max_bins, config.n_components,
                                config.log_spectrum, config.screening_z)
    raise ValidationError(f"Unknown pipeline '{name}'", pipeline=name)


def calibrate(observed: np.ndarray, null: np.ndarray) -> np.ndarray:
    """(1 + #{r : null[r, t] <= observed[t]}) / (R + 1) per term."""
    null = np.atleast_2d(null)
    count = np.sum(null <= np.asarray(observed)[None, :], axis=0)
    return (1.0 + count) / (null.shape[0] + 1.0)


@dataclass
class PermutationResult:
    """Observed and null internal p-values with their calibrated counterparts."""

    method: str
    term_names: list
    observed_internal_pvalues: np.ndarray
    null_internal_pvalues: np.ndarray
    calibrated_pvalues: np.ndarray
    R: int
    seed: int
    refit_weights: bool = True
    failed_replicates: list = field(default_factory=list)
    retries: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "replicates": self.R,
            "seed": self.seed,
            "refit_weights": self.refit_weights,
            "failed_replicates": self.failed_replicates,
            "retries": self.retries,
            "terms": {
                name: {"observed_internal_p": float(obs), "calibrated_p": float(cal)}
                for name, obs, cal in zip(self.term_names, self.observed_internal_pvalues,
                                          self.calibrated_pvalues)
            },
        }


def randomization_test(pipeline: Pipeline, dataset: Dataset, R: int = 99, seed: int = 0,
                       retries: int = 3, workers: int = 1) -> PermutationResult:
    """Calibrate the pipeline's internal p-values against R outcome permutations.

    Replicate r permutes y with the stream (seed, r); a failed replicate is
    retried with (seed, r, attempt). A replicate that still fails enters the
    null as p = 0 for every term, which can only raise the calibrated values.
    """
    if R < MIN_REPLICATES:
        raise ValidationError(f"At least {MIN_REPLICATES} replicates are required, got {R}", R=R)

    with log_operation("randomization_test", logger_name=__name__, method=pipeline.method, R=R, seed=seed):
        observed = np.asarray(pipeline.run(dataset.outcomes), dtype=float)

        def replicate(r: int) -> tuple[np.ndarray, int, bool]:
            for attempt in range(retries + 1):
                stream = [seed, r] if attempt == 0 else [seed, r, attempt]
                permuted = np.random.default_rng(stream).permutation(dataset.outcomes)
                try:
                    return np.asarray(pipeline.run(permuted), dtype=float), attempt, False
                except REPLICATE_FAILURES as e:
                    logger.debug("Replicate failed", replicate=r, attempt=attempt, error=str(e))
                    if attempt < retries:
                        metrics.increment_counter("permutation_retries_total")
            metrics.increment_counter("permutation_failures_total")
            return np.zeros_like(observed), retries, True

        outcomes = WorkerPool(workers).map(replicate, range(1, R + 1))
        metrics.increment_counter("permutation_replicates_total", R)

        null = np.vstack([values for values, _, _ in outcomes])
        failed = [r for r, (_, _, bad) in zip(range(1, R + 1), outcomes) if bad]
        result = PermutationResult(
            method=pipeline.method,
            term_names=list(pipeline.term_names),
            observed_internal_pvalues=observed,
            null_internal_pvalues=null,
            calibrated_pvalues=calibrate(observed, null),
            R=R,
            seed=seed,
            refit_weights=getattr(pipeline, "refit_weights", True),
            failed_replicates=failed,
            retries=int(sum(attempts for _, attempts, _ in outcomes)),
        )
        if failed:
            logger.warning("Replicates failed after retries", count=len(failed), replicates=failed)
    return result


@dataclass
class DatasetSplit:
    """Disjoint train and test parts; ``test`` is None for an empty test set."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    train: Dataset
    test: Optional[Dataset]


def stratified_split(dataset: Dataset, n_pos_test: int, n_neg_test: int, seed) -> DatasetSplit:
    """Draw the test cases per class without replacement; the rest is training data."""
    positives = np.flatnonzero(dataset.outcomes == 1)
    negatives = np.flatnonzero(dataset.outcomes == 0)
    if positives.size < n_pos_test or negatives.size < n_neg_test:
        raise SplitError(
            f"Requested {n_pos_test} positives and {n_neg_test} negatives; dataset has "
            f"{positives.size} and {negatives.size}",
            positive_deficit=max(0, n_pos_test - positives.size),
            negative_deficit=max(0, n_neg_test - negatives.size))

    rng = np.random.default_rng(seed)
    test = np.sort(np.concatenate([
        rng.choice(positives, size=n_pos_test, replace=False),
        rng.choice(negatives, size=n_neg_test, replace=False),
    ])).astype(int)
    train = np.setdiff1d(np.arange(dataset.n), test)
    if train.size == 0:
        raise SplitError("Test split leaves no training data")
    return DatasetSplit(train, test, dataset.subset(train), dataset.subset(test) if test.size else None)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC needs both classes", positives=n_pos, negatives=n_neg)
    ranks = stats.rankdata(scores)
    u = np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class PredictionStudy:
    """One (split, model, auc) row per split and model, plus the weights chosen per split."""

    rows: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def aucs(self, model: str) -> np.ndarray:
        return np.array([value for _, name, value in self.rows if name == model])


def _predictive_split(split: DatasetSplit, spectra, config: RunConfig, spec: GamSpec) -> tuple[dict, WeightParams]:
    """Test AUC of each prediction model on one split, and the weights searched on its training part."""
    train, test = split.train, split.test
    marginal = fit_marginal(train.trajectories, config.grid_size, config.bandwidth)
    params, xwf_fit, _ = adaptive_grid_search(train, marginal, spec, config.levels)
    if xwf_fit is None:
        raise ConvergenceError("XWF model failed to fit on the training split")

    names = term_names(ALL_KINDS)
    f_train = FeatureExtractor.from_dataset(train, marginal).matrix(params)
    f_test = FeatureExtractor.from_dataset(test, marginal).matrix(params)

    arv_train, arv_test = arv_features(train), arv_features(test)
    arv_fit = fit_gam(np.column_stack([f_train, arv_train]), train.covariates, train.outcomes, spec,
                      names + ["ARV"], train.covariate_names)

    spectra_train = spectra.subset(split.train_indices)
    spectra_test = spectra.subset(split.test_indices)
    pcs = supervised_pca(spectra_train, train.outcomes, config.n_components, config.log_spectrum,
                         config.screening_z)
    pc_names = [f"PC{j + 1}" for j in range(pcs.k)]
    spectrum_fit = fit_gam(np.column_stack([f_train, pcs.scores]), train.covariates, train.outcomes,
                           spec, names + pc_names, train.covariate_names)

    scores = {
        "xwf": xwf_fit.predict_proba(f_test, test.covariates),
        "xwf+arv": arv_fit.predict_proba(np.column_stack([f_test, arv_test]), test.covariates),
        "xwf+spectrum": spectrum_fit.predict_proba(
            np.column_stack([f_test, pcs.transform(spectra_test)]), test.covariates),
    }
    return {model: auc(values, test.outcomes) for model, values in scores.items()}, params


def prediction_study(dataset: Dataset, config: RunConfig, workers: int = 1) -> PredictionStudy:
    """Repeated stratified splits; XWF, XWF + ARV and XWF + spectrum PCs scored by test AUC.

    Everything that sees outcomes (marginal, weights, screening, GAMs) is fit on
    the training part only; spectra depend on trajectories alone and are
    computed once.
    """
    seed = config.require_seed("predict-study")
    if config.n_pos_test < 1 or config.n_neg_test < 1:
        raise SplitError("The prediction study needs at least one test case per class")
    spec = config.gam_spec()
    common_dt = config.common_dt or median_sampling_interval(dataset.trajectories)

    with log_operation("prediction_study", logger_name=__name__, splits=config.n_splits, seed=seed):
        spectra = spectrum_features(dataset.trajectories, common_dt, config.max_bins)
        splits = [stratified_split(dataset, config.n_pos_test, config.n_neg_test, [seed, s])
                  for s in range(1, config.n_splits + 1)]
        results = WorkerPool(workers).map(lambda split: _predictive_split(split, spectra, config, spec), splits)

    study = PredictionStudy()
    for s, (aucs, params) in enumerate(results, start=1):
        study.params.append(params)
        for model in PREDICTION_MODELS:
            study.rows.append((s, model, aucs[model]))
    return study


def summarize_auc(study: PredictionStudy) -> dict:
    """Per-model mean AUC and paired comparisons over the shared splits."""
    summary = {"models": {}, "comparisons": []}
    for model in PREDICTION_MODELS:
        values = study.aucs(model)
        summary["models"][model] = {
            "mean_auc": float(np.mean(values)),
            "sd_auc": float(np.std(values, ddof=1)) if values.size > 1 else None,
            "splits": int(values.size),
        }
    for first, second in combinations(PREDICTION_MODELS, 2):
        a, b = study.aucs(first), study.aucs(second)
        difference = a - b
        p_value = None
        if a.size > 1 and np.any(difference != difference[0]):
            p_value = float(stats.ttest_rel(a, b).pvalue)
        summary["comparisons"].append({
            "models": [first, second],
            "mean_difference": float(np.mean(difference)),
            "paired_t_pvalue": p_value,
        })
    return summary
