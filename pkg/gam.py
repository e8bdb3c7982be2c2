"""Additive logistic model: penalized cubic B-spline smooths plus linear covariates.

Smoothing parameters are chosen per term by GCV on the IRLS working model,
then the coefficients are refit by penalized IRLS with step-halving at the
chosen lambdas. Smooths carry a sum-to-zero constraint over the training
points so the intercept absorbs the level.

Term p-values are Wald tests on the Bayesian covariance. When the fit is close
to separation they are taken from a refit with an extra ridge, grown until no
fitted |eta| exceeds STABLE_ETA; coefficients, likelihood and EDFs always come
from the unshrunk fit.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg, stats
from scipy.interpolate import BSpline
from scipy.special import expit

from config import DEFAULT_LAMBDA_GRID
from error_handling import ConvergenceError, InsufficientDataError, ValidationError
from metrics import TimingContext, metrics

logger = structlog.get_logger(__name__)

SPLINE_DEGREE = 3
RIDGE = 1.5e-8
ETA_CLIP = 35.0
SEPARATION_ETA = 30.0
PROB_CLAMP = 1e-12
MAX_GCV_SWEEPS = 50
MAX_HALVINGS = 30
GRADIENT_TOLERANCE = 1e-7
# Consecutive sub-tolerance iterations accepted as convergence when the gradient
# cannot reach GRADIENT_TOLERANCE in floating point (very large penalties).
STALL_ITERATIONS = 5
MIN_WEIGHT = 1e-10
ZERO_SMOOTH = 1e-8
# Term tests use a ridge-shrunk refit once any fitted |eta| exceeds this.
STABLE_ETA = 10.0
STABILIZING_GROWTH = 4.0
MAX_STABILIZING_STEPS = 40


class GamSpec(BaseModel):
    """Basis, penalty and convergence settings for one GAM fit."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    basis_size: int = Field(8, description="B-spline basis functions per smooth", ge=4, le=40)
    penalty_order: int = Field(2, description="Difference penalty order", ge=1, le=3)
    lambda_grid: tuple[float, ...] = Field(DEFAULT_LAMBDA_GRID, description="GCV smoothing grid")
    max_iterations: int = Field(100, description="PIRLS iteration cap", ge=1)
    tolerance: float = Field(1e-8, description="Relative objective change at convergence", gt=0)

    @field_validator('lambda_grid')
    @classmethod
    def validate_lambda_grid(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v or any(lam <= 0 for lam in v):
            raise ValueError("lambda_grid must be non-empty and positive")
        return tuple(sorted(v))

    @model_validator(mode='after')
    def validate_order(self) -> 'GamSpec':
        if self.penalty_order >= self.basis_size - 1:
            raise ValueError("penalty_order must be smaller than basis_size - 1")
        return self


def bernoulli_log_likelihood(y, p) -> float:
    """Sum of y log p + (1 - y) log(1 - p), with p clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


class PenalizedObjective:
    """Bernoulli log-likelihood minus half the quadratic penalty, with derivatives."""

    def __init__(self, design: np.ndarray, y: np.ndarray, penalty: np.ndarray):
        self.design = design
        self.y = np.asarray(y, dtype=float)
        self.penalty = penalty

    def log_likelihood(self, beta: np.ndarray) -> float:
        eta = self.design @ beta
        return float(np.sum(self.y * eta - np.logaddexp(0.0, eta)))

    def value(self, beta: np.ndarray) -> float:
        return self.log_likelihood(beta) - 0.5 * float(beta @ self.penalty @ beta)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        mu = expit(self.design @ beta)
        return self.design.T @ (self.y - mu) - self.penalty @ beta

    def information(self, beta: np.ndarray) -> np.ndarray:
        """Negative Hessian of ``value``."""
        mu = expit(self.design @ beta)
        w = mu * (1.0 - mu)
        return (self.design.T * w) @ self.design + self.penalty


@dataclass(frozen=True, eq=False)
class SmoothBasis:
    """Cubic B-spline basis on equally spaced knots, reparameterized to sum to zero."""

    knots: np.ndarray
    constraint: np.ndarray
    penalty: np.ndarray
    degenerate: bool

    @property
    def lo(self) -> float:
        return float(self.knots[SPLINE_DEGREE])

    @property
    def hi(self) -> float:
        return float(self.knots[-SPLINE_DEGREE - 1])

    @property
    def size(self) -> int:
        return int(self.constraint.shape[1])

    @classmethod
    def build(cls, values: np.ndarray, spec: GamSpec) -> "SmoothBasis":
        """Knots over the observed range plus the sum-to-zero constraint; the difference penalty is scaled to the data."""
        lo, hi = float(np.min(values)), float(np.max(values))
        degenerate = hi - lo < 1e-12
        if degenerate:
            lo, hi = -1.0, 1.0
        segments = spec.basis_size - SPLINE_DEGREE
        dx = (hi - lo) / segments
        knots = lo + dx * np.arange(-SPLINE_DEGREE, segments + SPLINE_DEGREE + 1)

        raw = _bspline_design(values, knots)
        column_means = raw.mean(axis=0)
        q, _ = np.linalg.qr(column_means.reshape(-1, 1), mode="complete")
        constraint = q[:, 1:]

        difference = np.diff(np.eye(spec.basis_size), n=spec.penalty_order, axis=0)
        penalty = constraint.T @ (difference.T @ difference) @ constraint

        constrained = raw @ constraint
        data_norm = np.linalg.norm(constrained.T @ constrained)
        penalty_norm = np.linalg.norm(penalty)
        if data_norm > 0 and penalty_norm > 0:
            penalty = penalty * (data_norm / penalty_norm)
        return cls(knots=knots, constraint=constraint, penalty=penalty, degenerate=degenerate)

    def design(self, values: np.ndarray) -> np.ndarray:
        return _bspline_design(values, self.knots) @ self.constraint


def _bspline_design(values: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Dense B-spline design; values outside the knot range take the boundary row."""
    lo, hi = knots[SPLINE_DEGREE], knots[-SPLINE_DEGREE - 1]
    clamped = np.clip(np.asarray(values, dtype=float), lo, hi)
    return BSpline.design_matrix(clamped, knots, SPLINE_DEGREE).toarray()


@dataclass(frozen=True)
class SmoothTerm:
    name: str
    columns: slice
    basis: SmoothBasis
    mean: float
    scale: float
    lam: float
    edf: float
    p_value: float
    degenerate: bool


@dataclass(frozen=True)
class LinearTerm:
    name: str
    column: int
    mean: float
    scale: float
    p_value: float
    degenerate: bool


@dataclass(frozen=True, eq=False)
class GamFit:
    """A fitted additive logistic model. Coefficients live on the standardized scale."""

    spec: GamSpec
    coefficients: np.ndarray
    covariance: np.ndarray
    smooths: tuple
    linear: tuple
    loglik: float
    penalized_history: tuple
    iterations: int
    separation: bool
    n: int
    test_ridge: float = 0.0

    @property
    def stabilized_tests(self) -> bool:
        """Whether the term p-values come from the ridge-shrunk refit."""
        return self.test_ridge > 0.0

    @property
    def n_smooths(self) -> int:
        return len(self.smooths)

    @property
    def q(self) -> int:
        return len(self.linear)

    @property
    def gamma(self) -> np.ndarray:
        return np.array([self.coefficients[t.column] / t.scale for t in self.linear])

    @property
    def gamma_std_errors(self) -> np.ndarray:
        return np.array([np.sqrt(max(self.covariance[t.column, t.column], 0.0)) / t.scale
                         for t in self.linear])

    @property
    def intercept(self) -> float:
        """Raw-scale intercept: the standardized intercept less the covariate centring."""
        shift = sum(self.coefficients[t.column] * t.mean / t.scale for t in self.linear)
        return float(self.coefficients[0] - shift)

    @property
    def lambdas(self) -> list[float]:
        return [t.lam for t in self.smooths]

    @property
    def edf(self) -> list[float]:
        return [t.edf for t in self.smooths]

    @property
    def term_names(self) -> list[str]:
        return [t.name for t in self.smooths] + [t.name for t in self.linear]

    @property
    def term_pvalues(self) -> np.ndarray:
        return np.array([t.p_value for t in self.smooths] + [t.p_value for t in self.linear])

    @property
    def degenerate_terms(self) -> list[str]:
        return [t.name for t in (*self.smooths, *self.linear) if t.degenerate]

    @property
    def feature_standardization(self) -> dict[str, np.ndarray]:
        return {"mean": np.array([t.mean for t in self.smooths]),
                "scale": np.array([t.scale for t in self.smooths])}

    def design(self, features, z) -> np.ndarray:
        """Model matrix for new rows, in the column order of the fit."""
        features = _as_2d(features, self.n_smooths)
        z = _as_2d(z, self.q) if self.q else np.zeros((features.shape[0], 0))
        if features.shape[0] != z.shape[0]:
            raise ValidationError(f"{features.shape[0]} feature rows for {z.shape[0]} covariate rows")
        blocks = [np.ones((features.shape[0], 1))]
        if self.linear:
            means = np.array([t.mean for t in self.linear])
            scales = np.array([t.scale for t in self.linear])
            blocks.append((z - means) / scales)
        for j, term in enumerate(self.smooths):
            blocks.append(term.basis.design((features[:, j] - term.mean) / term.scale))
        return np.hstack(blocks)

    def linear_predictor(self, features, z) -> np.ndarray:
        """Clipped to +-ETA_CLIP."""
        return np.clip(self.design(features, z) @ self.coefficients, -ETA_CLIP, ETA_CLIP)

    def predict_proba(self, features, z) -> np.ndarray:
        return expit(self.linear_predictor(features, z))

    def log_likelihood(self, features, z, y) -> float:
        return bernoulli_log_likelihood(y, self.predict_proba(features, z))

    def objective(self, features, z, y) -> PenalizedObjective:
        """The penalized objective this fit maximized, rebuilt on the given data."""
        return PenalizedObjective(self.design(features, z), y, self.penalty_matrix())

    def penalty_matrix(self) -> np.ndarray:
        """Block-diagonal S at the selected lambdas plus the small ridge."""
        size = self.coefficients.size
        penalty = RIDGE * np.eye(size)
        for term in self.smooths:
            penalty[term.columns, term.columns] += term.lam * term.basis.penalty
        return penalty

    def smooth_grid(self, j: int, points: int = 100) -> dict[str, np.ndarray]:
        """Fitted smooth and pointwise standard error over the term's training range."""
        term = self.smooths[j]
        standardized = np.linspace(term.basis.lo, term.basis.hi, points)
        basis = term.basis.design(standardized)
        coef = self.coefficients[term.columns]
        cov = self.covariance[term.columns, term.columns]
        fitted = basis @ coef
        se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", basis, cov, basis), 0.0, None))
        return {"value": standardized * term.scale + term.mean, "fitted": fitted, "se": se}

    def summary(self) -> dict:
        return {
            "n": self.n,
            "intercept": self.intercept,
            "gamma": {t.name: float(g) for t, g in zip(self.linear, self.gamma)},
            "gamma_se": {t.name: float(s) for t, s in zip(self.linear, self.gamma_std_errors)},
            "edf": {t.name: t.edf for t in self.smooths},
            "lambda": {t.name: t.lam for t in self.smooths},
            "internal_pvalues": dict(zip(self.term_names, map(float, self.term_pvalues))),
            "log_likelihood": self.loglik,
            "iterations": self.iterations,
            "separation_warning": self.separation,
            "test_ridge": self.test_ridge,
            "degenerate_terms": self.degenerate_terms,
            "feature_standardization": {
                t.name: {"mean": t.mean, "scale": t.scale} for t in self.smooths
            },
        }


def _as_2d(values, width: int) -> np.ndarray:
    if isinstance(values, (list, tuple)) and values and hasattr(values[0], "as_row"):
        values = np.vstack([v.as_row() for v in values])
    array = np.asarray(values, dtype=float)
    if array.ndim <= 1:
        array = array.reshape(-1, width) if width else np.zeros((max(1, array.size), 0))
    return array


def _standardize(column: np.ndarray) -> tuple[float, float]:
    """Mean and standard deviation; a constant column keeps scale 1."""
    mean = float(np.mean(column))
    scale = float(np.std(column))
    return mean, (scale if scale > 1e-12 * max(1.0, abs(mean)) else 1.0)


def _cholesky_solve(matrix: np.ndarray, rhs: np.ndarray):
    """Solve via Cholesky. Returns (None, None) when the matrix is not positive definite."""
    try:
        factor = linalg.cho_factor(matrix, lower=True)
        return factor, linalg.cho_solve(factor, rhs)
    except (linalg.LinAlgError, ValueError):
        return None, None


class _GamFitter:
    """One fit: design assembly, GCV lambda selection, PIRLS and term statistics."""

    def __init__(self, features: np.ndarray, z: np.ndarray, y: np.ndarray, spec: GamSpec,
                 term_names: Sequence[str], covariate_names: Sequence[str]):
        self.spec = spec
        self.y = y.astype(float)
        self.n = y.size
        self.term_names = list(term_names)
        self.covariate_names = list(covariate_names)

        blocks = [np.ones((self.n, 1))]
        self.linear_std = [_standardize(z[:, k]) for k in range(z.shape[1])]
        for k, (mean, scale) in enumerate(self.linear_std):
            blocks.append(((z[:, k] - mean) / scale).reshape(-1, 1))

        self.feature_std = [_standardize(features[:, j]) for j in range(features.shape[1])]
        self.bases, self.slices = [], []
        start = 1 + z.shape[1]
        for j, (mean, scale) in enumerate(self.feature_std):
            standardized = (features[:, j] - mean) / scale
            basis = SmoothBasis.build(standardized, spec)
            block = basis.design(standardized)
            self.bases.append(basis)
            self.slices.append(slice(start, start + block.shape[1]))
            blocks.append(block)
            start += block.shape[1]

        self.design = np.hstack(blocks)
        self.size = self.design.shape[1]

    def penalty(self, lambdas: Sequence[float]) -> np.ndarray:
        """Block-diagonal smoothing penalty plus the tiny ridge that keeps it definite."""
        penalty = RIDGE * np.eye(self.size)
        for sl, basis, lam in zip(self.slices, self.bases, lambdas):
            penalty[sl, sl] += lam * basis.penalty
        return penalty

    def initial_beta(self) -> np.ndarray:
        """Intercept at the logit of the outcome rate, everything else zero."""
        beta = np.zeros(self.size)
        ybar = float(np.clip(self.y.mean(), 1e-3, 1 - 1e-3))
        beta[0] = np.log(ybar / (1.0 - ybar))
        return beta

    def working_model(self, beta: np.ndarray):
        """IRLS weights, pseudo-response and the weighted cross products at ``beta``."""
        eta = np.clip(self.design @ beta, -ETA_CLIP, ETA_CLIP)
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), MIN_WEIGHT)
        pseudo = eta + (self.y - mu) / w
        xtw = self.design.T * w
        return w, pseudo, xtw @ self.design, xtw @ pseudo

    def gcv(self, w, pseudo, xtwx, xtwz, lambdas) -> tuple[float, Optional[np.ndarray]]:
        """GCV score n * RSS / (n - tr A)^2 of the working model and its solution."""
        factor, beta = _cholesky_solve(xtwx + self.penalty(lambdas), xtwz)
        if factor is None:
            return np.inf, None
        trace = float(np.trace(linalg.cho_solve(factor, xtwx)))
        residual = pseudo - self.design @ beta
        rss = float(np.sum(w * residual ** 2))
        denominator = (self.n - trace) ** 2
        if self.n - trace <= 0:
            return np.inf, beta
        return self.n * rss / denominator, beta

    def select_lambdas(self) -> tuple[list[float], np.ndarray]:
        """Sweep each term's lambda over the grid, holding the others, until nothing moves.

        The working model is rebuilt after every sweep from the latest
        coefficients; the last coefficients warm-start PIRLS.
        """
        grid = self.spec.lambda_grid
        index = [len(grid) // 2] * len(self.bases)
        beta = self.initial_beta()

        for sweep in range(MAX_GCV_SWEEPS):
            w, pseudo, xtwx, xtwz = self.working_model(beta)
            previous = list(index)
            for j in range(len(self.bases)):
                scores = []
                for k in range(len(grid)):
                    trial = list(index)
                    trial[j] = k
                    scores.append(self.gcv(w, pseudo, xtwx, xtwz, [grid[i] for i in trial])[0])
                best = int(np.argmin(scores))
                if np.isfinite(scores[best]):
                    index[j] = best

            _, updated = _cholesky_solve(xtwx + self.penalty([grid[i] for i in index]), xtwz)
            if updated is None or not np.all(np.isfinite(updated)):
                break
            step = float(np.max(np.abs(updated - beta)))
            beta = updated
            if index == previous and step < 1e-6 * (1.0 + float(np.max(np.abs(beta)))):
                break

        return [grid[i] for i in index], beta

    def pirls(self, beta: np.ndarray, penalty: np.ndarray) -> tuple[np.ndarray, list[float], int]:
        """Newton steps on the penalized objective with step-halving.

        The objective never decreases; returns the coefficients, the objective
        history and the iteration count, or raises ConvergenceError.
        """
        objective = PenalizedObjective(self.design, self.y, penalty)
        value = objective.value(beta)
        if not np.isfinite(value):
            beta = self.initial_beta()
            value = objective.value(beta)
        history = [value]
        stalled = 0

        for iteration in range(1, self.spec.max_iterations + 1):
            gradient = objective.gradient(beta)
            _, step = _cholesky_solve(objective.information(beta), gradient)
            if step is None:
                raise ConvergenceError("Penalized information matrix is not positive definite",
                                       deviance=-2.0 * objective.log_likelihood(beta), iterations=iteration)

            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                candidate = beta + scale * step
                candidate_value = objective.value(candidate)
                if np.isfinite(candidate_value) and candidate_value >= value:
                    break
                scale /= 2.0
            else:
                logger.debug("Step-halving exhausted; objective at numerical optimum",
                             iteration=iteration, gradient=float(np.max(np.abs(gradient))))
                return beta, history, iteration

            change = abs(candidate_value - value) / (abs(value) + 0.1)
            beta, value = candidate, candidate_value
            history.append(value)
            stalled = stalled + 1 if change < self.spec.tolerance else 0
            if stalled and (np.max(np.abs(objective.gradient(beta))) < GRADIENT_TOLERANCE
                            or stalled >= STALL_ITERATIONS):
                return beta, history, iteration

        raise ConvergenceError(
            f"PIRLS did not converge in {self.spec.max_iterations} iterations",
            deviance=-2.0 * objective.log_likelihood(beta), iterations=self.spec.max_iterations)

    def posterior(self, beta: np.ndarray, penalty: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bayesian covariance (X'WX + S)^-1 and the per-coefficient effective degrees of freedom."""
        information = PenalizedObjective(self.design, self.y, penalty).information(beta)
        factor, covariance = _cholesky_solve(information, np.eye(self.size))
        if factor is None:
            covariance = np.linalg.pinv(information)
        return covariance, np.einsum("ij,ji->i", covariance, information - penalty)

    def stabilize(self, beta: np.ndarray, penalty: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Refit with a growing ridge on every non-intercept coefficient until max |eta| <= STABLE_ETA.

        Returns the coefficients and penalty the term tests are computed on, and
        the ridge used (0 when the fit is already inside the bound).
        """
        if float(np.max(np.abs(self.design @ beta))) <= STABLE_ETA:
            return beta, penalty, 0.0
        shrink = np.ones(self.size)
        shrink[0] = 0.0
        ridge = 1e-4 * float(np.mean(np.sum(self.design[:, 1:] ** 2, axis=0))) / STABILIZING_GROWTH
        for _ in range(MAX_STABILIZING_STEPS):
            ridge *= STABILIZING_GROWTH
            stable_penalty = penalty + np.diag(ridge * shrink)
            beta, _, _ = self.pirls(beta, stable_penalty)
            if float(np.max(np.abs(self.design @ beta))) <= STABLE_ETA:
                break
        logger.debug("Term tests on stabilized fit", ridge=ridge, max_eta=float(np.max(np.abs(self.design @ beta))))
        return beta, stable_penalty, ridge

    def fit(self) -> GamFit:
        """Select lambdas, run PIRLS at them, then assemble per-term EDFs and Wald p-values."""
        lambdas, beta = self.select_lambdas()
        penalty = self.penalty(lambdas)
        beta, history, iterations = self.pirls(beta, penalty)
        covariance, edf_per_coef = self.posterior(beta, penalty)

        eta = self.design @ beta
        separation = bool(np.all(np.abs(eta) > SEPARATION_ETA))
        if separation:
            logger.warning("Complete separation detected", n=self.n)

        test_beta, test_penalty, ridge = self.stabilize(beta, penalty)
        if ridge > 0.0:
            test_covariance, test_edf = self.posterior(test_beta, test_penalty)
        else:
            test_covariance, test_edf = covariance, edf_per_coef

        smooths = []
        for j, (sl, basis) in enumerate(zip(self.slices, self.bases)):
            edf = float(np.sum(edf_per_coef[sl]))
            fitted = self.design[:, sl] @ beta[sl]
            zero = basis.degenerate or float(np.max(np.abs(fitted))) < ZERO_SMOOTH
            if zero:
                p_value, degenerate = 1.0, True
            else:
                p_value, degenerate = _smooth_pvalue(test_beta[sl], test_covariance[sl, sl],
                                                     float(np.sum(test_edf[sl])))
            mean, scale = self.feature_std[j]
            smooths.append(SmoothTerm(self.term_names[j], sl, basis, mean, scale, lambdas[j],
                                      edf, p_value, degenerate))

        linear = []
        for k, (mean, scale) in enumerate(self.linear_std):
            column = 1 + k
            variance = test_covariance[column, column]
            if variance > 0 and np.isfinite(variance):
                p_value = float(2.0 * stats.norm.sf(abs(test_beta[column]) / np.sqrt(variance)))
                degenerate = False
            else:
                p_value, degenerate = 1.0, True
            linear.append(LinearTerm(self.covariate_names[k], column, mean, scale, p_value, degenerate))

        loglik = bernoulli_log_likelihood(self.y, expit(np.clip(eta, -ETA_CLIP, ETA_CLIP)))
        return GamFit(spec=self.spec, coefficients=beta, covariance=covariance,
                      smooths=tuple(smooths), linear=tuple(linear), loglik=loglik,
                      penalized_history=tuple(history), iterations=iterations,
                      separation=separation, n=self.n, test_ridge=ridge)


def _smooth_pvalue(coef: np.ndarray, cov: np.ndarray, edf: float) -> tuple[float, bool]:
    """Wald chi-square on the rank-round(edf) pseudo-inverse of the term covariance."""
    eigenvalues, eigenvectors = np.linalg.eigh((cov + cov.T) / 2.0)
    order = np.argsort(eigenvalues)[::-1]
    rank = int(min(max(1, round(edf)), coef.size))
    kept = order[:rank]
    values = eigenvalues[kept]
    if not np.all(np.isfinite(values)) or values[-1] <= 1e-14 * max(values[0], 1e-300):
        return 1.0, True
    projected = eigenvectors[:, kept].T @ coef
    statistic = float(np.sum(projected ** 2 / values))
    return float(stats.chi2.sf(statistic, rank)), False


def fit_gam(features, z, y, spec: Optional[GamSpec] = None,
            term_names: Optional[Sequence[str]] = None,
            covariate_names: Optional[Sequence[str]] = None) -> GamFit:
    """Penalized maximum-likelihood fit of the additive logistic model.

    features: n x m smooth-term inputs (or a list of XwfFeatures); z: n x q
    covariates; y: binary labels. Term p-values come back smooths first,
    then covariates.
    """
    spec = spec or GamSpec()
    y = np.asarray(y).astype(int).reshape(-1)
    n = y.size
    features = _as_2d(features, 1)
    z = np.zeros((n, 0)) if z is None else np.asarray(z, dtype=float)
    z = z.reshape(n, -1) if z.size else np.zeros((n, 0))
    if features.shape[0] != n:
        raise ValidationError(f"{features.shape[0]} feature rows for {n} outcomes")
    m, q = features.shape[1], z.shape[1]

    if n < 10 * (q + m):
        raise InsufficientDataError(f"n = {n} is below 10 x (q + terms) = {10 * (q + m)}",
                                    n=n, q=q, terms=m)
    if not np.all(np.isin(y, (0, 1))) or y.min() == y.max():
        raise InsufficientDataError("Outcome must contain both classes", positives=int(y.sum()), n=n)
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(z))):
        raise ValidationError("Non-finite feature or covariate values")

    term_names = list(term_names) if term_names else [f"s{j + 1}" for j in range(m)]
    covariate_names = list(covariate_names) if covariate_names else [f"z{k + 1}" for k in range(q)]
    if len(term_names) != m or len(covariate_names) != q:
        raise ValidationError("Term or covariate names do not match the inputs")

    metrics.increment_counter("gam_fits_total")
    with TimingContext(metrics, "gam_fit_seconds"):
        try:
            fit = _GamFitter(features, z, y, spec, term_names, covariate_names).fit()
        except ConvergenceError as e:
            metrics.increment_counter("gam_fit_failures_total")
            logger.debug("GAM fit failed", error=e.message, deviance=e.deviance)
            raise
    logger.debug("GAM fitted", n=n, terms=m, q=q, loglik=round(fit.loglik, 6), iterations=fit.iterations)
    return fit


def predict(fit: GamFit, features, z):
    """Fitted probability for one row (scalar) or many rows (array)."""
    features = np.asarray(features.as_row() if hasattr(features, "as_row") else features, dtype=float)
    single = features.ndim == 1
    probabilities = fit.predict_proba(features, z)
    return float(probabilities[0]) if single else probabilities


def log_likelihood(fit: GamFit, features, z, y) -> float:
    return fit.log_likelihood(features, z, y)


def term_pvalues(fit: GamFit) -> dict[str, float]:
    """Internal (uncalibrated) Wald p-value per term name."""
    return dict(zip(fit.term_names, map(float, fit.term_pvalues)))


def with_coefficients(fit: GamFit, coefficients: np.ndarray) -> GamFit:
    """Same model structure with different coefficients (used to pin predictions)."""
    return replace(fit, coefficients=np.asarray(coefficients, dtype=float))
