"""Adaptive coordinate grid search over the weight parameters b_L, b_R."""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import structlog

from density import MarginalModel
from error_handling import ConvergenceError, SearchError, log_operation
from funcdata import Dataset
from gam import GamFit, GamSpec, fit_gam
from metrics import metrics
from performance import ResultCache, WorkerPool
from xwf import ALL_KINDS, SIDES, FeatureExtractor, LocalFeatureKind, WeightParams, normalize_kinds, term_names

logger = structlog.get_logger(__name__)

CANDIDATE_LABELS = ("minus", "current", "plus")


@dataclass(frozen=True)
class TraceRow:
    """One evaluated candidate; ``chosen`` marks the one the step accepted."""

    level: int
    feature: int
    side: str
    candidate: str
    b_value: float
    loglik: float
    chosen: bool


@dataclass
class SearchTrace:
    """Every evaluated candidate, in evaluation order, plus the endpoints of the search."""

    rows: list = field(default_factory=list)
    initial_params: Optional[WeightParams] = None
    initial_likelihood: float = -np.inf
    final_params: Optional[WeightParams] = None
    final_likelihood: float = -np.inf
    n_fits: int = 0


def in_domain(side: str, b: float) -> bool:
    """Whether b is admissible for that side: (0, 1/2] on the left, [1/2, 1) on the right."""
    if side == "L":
        return 0.0 < b <= 0.5
    return 0.5 <= b < 1.0


def coordinate_grid_search(score: Callable[[WeightParams], float], p: int, levels: int,
                           kinds: Optional[Sequence[LocalFeatureKind]] = None,
                           initial: Optional[WeightParams] = None,
                           pool: Optional[WorkerPool] = None) -> tuple[WeightParams, float, SearchTrace]:
    """Maximize ``score`` one coordinate at a time on a dyadic grid.

    At level l every b moves by at most 2^(-1-l). A score of -inf marks a
    failed candidate. Ties keep the current value; among strictly better
    candidates the first in (minus, current, plus) order wins.
    """
    if levels < 1:
        raise SearchError(f"levels must be at least 1, got {levels}")
    kinds = normalize_kinds(kinds or ALL_KINDS[:p])
    pool = pool or WorkerPool(1)
    cache = ResultCache()

    def evaluate(params: WeightParams) -> float:
        def compute() -> float:
            metrics.increment_counter("search_candidates_total")
            value = score(params)
            return float(value) if np.isfinite(value) else -np.inf
        return cache.get_or_compute(params, compute)

    params = initial or WeightParams.initial(p)
    current_value = evaluate(params)
    trace = SearchTrace(initial_params=params, initial_likelihood=current_value)

    for level in range(1, levels + 1):
        step = 2.0 ** (-1 - level)
        for j in range(p):
            for side in SIDES:
                b = params.get(side, j)
                offered = [(label, value) for label, value in zip(CANDIDATE_LABELS, (b - step, b, b + step))
                           if in_domain(side, value)]
                candidates = [params.replace(side, j, value) for _, value in offered]
                scores = pool.map(evaluate, candidates)

                best = max(scores)
                if best == -np.inf:
                    raise SearchError(f"Every candidate failed at level {level}, feature {int(kinds[j])}{side}",
                                      level=level, feature=int(kinds[j]), side=side)
                labels = [label for label, _ in offered]
                current_index = labels.index("current")
                chosen = current_index if scores[current_index] == best else scores.index(best)

                for k, ((label, value), s) in enumerate(zip(offered, scores)):
                    trace.rows.append(TraceRow(level, int(kinds[j]), side, label, value, s, k == chosen))
                params, current_value = candidates[chosen], scores[chosen]

    trace.final_params = params
    trace.final_likelihood = current_value
    trace.n_fits = len(cache)
    logger.debug("Coordinate search finished", levels=levels, **cache.get_cache_stats())
    return params, current_value, trace


class XwfModelSearch:
    """Feature extraction plus GAM fitting for arbitrary weight parameters.

    Feature columns are cached per (feature, side, b), so a candidate step
    only extracts the one column that changes.
    """

    def __init__(self, dataset: Dataset, marginal: MarginalModel, spec: GamSpec,
                 kinds: Sequence[LocalFeatureKind] = ALL_KINDS,
                 extractor: Optional[FeatureExtractor] = None):
        self.dataset = dataset
        self.spec = spec
        self.kinds = normalize_kinds(kinds)
        self.extractor = extractor or FeatureExtractor.from_dataset(dataset, marginal, self.kinds)
        self.terms = term_names(self.kinds)
        self._columns = ResultCache()
        self._fits = ResultCache()

    def column(self, j: int, side: str, b: float) -> np.ndarray:
        return self._columns.get_or_compute((j, side, b), lambda: self.extractor.column(j, side, b))

    def matrix(self, params: WeightParams) -> np.ndarray:
        left = [self.column(j, "L", b) for j, b in enumerate(params.b_left)]
        right = [self.column(j, "R", b) for j, b in enumerate(params.b_right)]
        return np.column_stack(left + right)

    def fit(self, params: WeightParams) -> Optional[GamFit]:
        """Cached GAM fit at these weights, or None when PIRLS fails."""
        def compute() -> Optional[GamFit]:
            try:
                return fit_gam(self.matrix(params), self.dataset.covariates, self.dataset.outcomes,
                               self.spec, self.terms, self.dataset.covariate_names)
            except (ConvergenceError, np.linalg.LinAlgError) as e:
                logger.debug("Candidate fit failed", params=params.as_dict(self.kinds), error=str(e))
                return None
        return self._fits.get_or_compute(params, compute)

    def score(self, params: WeightParams) -> float:
        """Log-likelihood of the fit; -inf for a failed candidate so it is never chosen."""
        fit = self.fit(params)
        return fit.loglik if fit is not None else -np.inf


def adaptive_grid_search(dataset: Dataset, marginal: MarginalModel, spec: GamSpec, levels: int = 3,
                         kinds: Sequence[LocalFeatureKind] = ALL_KINDS, workers: int = 1,
                         extractor: Optional[FeatureExtractor] = None) -> tuple[WeightParams, GamFit, SearchTrace]:
    """Weight search maximizing the GAM log-likelihood; returns params, fit and trace."""
    search = XwfModelSearch(dataset, marginal, spec, kinds, extractor)
    with log_operation("adaptive_grid_search", logger_name=__name__, n=dataset.n, levels=levels):
        params, loglik, trace = coordinate_grid_search(search.score, len(search.kinds), levels,
                                                       kinds=search.kinds, pool=WorkerPool(workers))
        fit = search.fit(params)
        logger.info("Weight search finished", loglik=round(loglik, 6), fits=trace.n_fits,
                    **params.as_dict(search.kinds))
    return params, fit, trace
