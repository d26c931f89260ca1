from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np
import pandas as pd
from scipy import special, stats

from .errors import FitError
from .model import CoefficientTable, CovarianceBlock, DataTable, canonical_terms

logger = logging.getLogger(__name__)

INTERCEPT = "(intercept)"
MIN_STEP = 2.0**-30
# |linear predictor| beyond this means fitted probabilities of exactly 0 or 1.
SEPARATION_ETA = 30.0


@dataclass(frozen=True)
class WaldTest:
    estimate: float
    standard_error: float
    z: float
    p_value: float


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: CoefficientTable
    covariance: CovarianceBlock
    intercept: float
    confounders: dict[str, float]
    wald: dict[str, WaldTest]
    log_likelihood: float
    log_likelihood_path: tuple[float, ...]
    iterations: int
    converged: bool
    max_score: float


@dataclass(frozen=True, eq=False)
class _Design:
    matrix: np.ndarray
    columns: tuple[str, ...]
    exposure_terms: tuple[int, ...]


def fit_logistic(
    data: DataTable,
    saturated: bool = True,
    *,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
    min_cell_events: int = 5,
) -> FitResult:
    y = data.outcomes().astype(float)
    events = int(y.sum())
    if events == 0 or events == len(y):
        raise FitError("The outcome needs at least one event and one non-event.")
    design = _build_design(data, saturated)
    _check_rank(design)
    if saturated:
        _check_cells(data, design, min_cell_events)

    x = design.matrix
    beta = np.zeros(x.shape[1])
    eta = x @ beta
    log_likelihood = _log_likelihood(y, eta)
    path = [log_likelihood]
    converged = False
    max_score = math.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        mu = special.expit(eta)
        score = x.T @ (y - mu)
        max_score = float(np.max(np.abs(score)))
        if max_score < tolerance:
            converged = True
            iterations -= 1
            break
        information = x.T @ (x * (mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(information, score)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"Information matrix is singular: {exc}") from exc
        t = 1.0
        while True:
            candidate = beta + t * step
            candidate_eta = x @ candidate
            candidate_ll = _log_likelihood(y, candidate_eta)
            # Slack covers rounding in the summed log-likelihood near the optimum.
            if candidate_ll >= log_likelihood - 1e-12 * max(1.0, abs(log_likelihood)):
                break
            t /= 2.0
            logger.debug("step halved to %g at iteration %d", t, iterations)
            if t < MIN_STEP:
                break
        if t < MIN_STEP:
            logger.warning("IRLS step-halving stalled at iteration %d", iterations)
            break
        beta, eta, log_likelihood = candidate, candidate_eta, candidate_ll
        path.append(log_likelihood)
        logger.debug(
            "iteration %d: log-likelihood %.10g, max |score| %.3g",
            iterations,
            log_likelihood,
            max_score,
        )
    else:
        mu = special.expit(eta)
        max_score = float(np.max(np.abs(x.T @ (y - mu))))
        converged = max_score < tolerance

    if not converged:
        if np.max(np.abs(eta)) > SEPARATION_ETA:
            worst = int(np.argmax(np.abs(beta)))
            column = design.columns[worst]
            raise FitError(
                f"Outcome is separated by the design; column {column} diverges.",
                column=column,
            )
        logger.warning(
            "IRLS did not converge after %d iterations (max |score| %.3g)",
            iterations,
            max_score,
        )

    mu = special.expit(eta)
    information = x.T @ (x * (mu * (1.0 - mu))[:, None])
    covariance = _invert_information(information)
    return _assemble(
        data, design, beta, covariance, log_likelihood, path, iterations, converged, max_score
    )


def main_effects_ratios(
    data: DataTable, *, max_iterations: int = 50, tolerance: float = 1e-8
) -> dict[str, float]:
    """exp(beta) per factor from a main-effects-only logistic model."""
    result = fit_logistic(
        data, saturated=False, max_iterations=max_iterations, tolerance=tolerance
    )
    names = data.factor_set.names
    return {name: math.exp(result.coefficients.coefficient(1 << i)) for i, name in enumerate(names)}


def _assemble(
    data: DataTable,
    design: _Design,
    beta: np.ndarray,
    covariance: np.ndarray,
    log_likelihood: float,
    path: list[float],
    iterations: int,
    converged: bool,
    max_score: float,
) -> FitResult:
    factor_set = data.factor_set
    k = len(design.exposure_terms)
    exposure = slice(1, 1 + k)
    coefficients = CoefficientTable(
        factor_set, {m: float(b) for m, b in zip(design.exposure_terms, beta[exposure])}
    )
    block = CovarianceBlock(design.exposure_terms, covariance[exposure, exposure])
    confounders = {
        name: float(b) for name, b in zip(design.columns[1 + k :], beta[1 + k :])
    }
    wald: dict[str, WaldTest] = {}
    for j, name in enumerate(design.columns):
        se = math.sqrt(max(float(covariance[j, j]), 0.0))
        z = float(beta[j]) / se if se > 0 else math.inf
        wald[name] = WaldTest(float(beta[j]), se, z, float(2.0 * stats.norm.sf(abs(z))))
    return FitResult(
        coefficients=coefficients,
        covariance=block,
        intercept=float(beta[0]),
        confounders=confounders,
        wald=wald,
        log_likelihood=log_likelihood,
        log_likelihood_path=tuple(path),
        iterations=iterations,
        converged=converged,
        max_score=max_score,
    )


def _build_design(data: DataTable, saturated: bool) -> _Design:
    factor_set = data.factor_set
    patterns = data.patterns()
    if saturated:
        terms = canonical_terms(factor_set.n)
    else:
        terms = tuple(1 << i for i in range(factor_set.n))
    columns: list[np.ndarray] = [np.ones(data.n_rows)]
    names = [INTERCEPT]
    for mask in terms:
        columns.append(((patterns & mask) == mask).astype(float))
        names.append(factor_set.label(mask))
    for name in data.confounders:
        series = data.frame[name]
        if pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
            columns.append(series.to_numpy(dtype=float))
            names.append(name)
            continue
        dummies = pd.get_dummies(series.astype(str), prefix=name, prefix_sep="=", drop_first=True)
        for dummy in dummies.columns:
            columns.append(dummies[dummy].to_numpy(dtype=float))
            names.append(str(dummy))
    return _Design(np.column_stack(columns), tuple(names), terms)


def _check_rank(design: _Design) -> None:
    rank = np.linalg.matrix_rank(design.matrix)
    if rank == design.matrix.shape[1]:
        return
    for j in range(1, design.matrix.shape[1] + 1):
        if np.linalg.matrix_rank(design.matrix[:, :j]) < j:
            column = design.columns[j - 1]
            raise FitError(f"Design matrix is rank deficient at column {column}.", column=column)


def _check_cells(data: DataTable, design: _Design, min_cell_events: int) -> None:
    factor_set = data.factor_set
    patterns = data.patterns()
    y = data.outcomes()
    size = 1 << factor_set.n
    subjects = np.bincount(patterns, minlength=size)
    events = np.bincount(patterns, weights=y, minlength=size).astype(np.int64)
    sparse: list[str] = []
    for pattern in range(size):
        label = factor_set.label(pattern) or "reference"
        if events[pattern] == 0 or events[pattern] == subjects[pattern]:
            column = factor_set.label(pattern) if pattern else INTERCEPT
            raise FitError(
                f"Exposure cell {label} has {'no' if events[pattern] == 0 else 'only'} events; "
                f"the saturated model is separated at column {column}.",
                column=column,
            )
        if events[pattern] < min_cell_events:
            sparse.append(f"{label} ({events[pattern]})")
    if sparse:
        logger.warning(
            "Exposure cells with fewer than %d events: %s", min_cell_events, ", ".join(sparse)
        )


def _log_likelihood(y: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _invert_information(information: np.ndarray) -> np.ndarray:
    try:
        covariance = np.linalg.inv(information)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"Information matrix is singular at the fitted values: {exc}") from exc
    if not np.all(np.isfinite(covariance)):
        raise FitError("Information matrix is too ill-conditioned to invert.")
    return (covariance + covariance.T) / 2.0
