from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
import math
from typing import Callable

import numpy as np
from scipy import stats

from . import additive, multiplicative
from .additive import Conditioning
from .errors import UserError, VarianceError
from .lattice import RiskSurface, pattern_sizes, submasks, surface_from_coefficients
from .model import SYMMETRY_TOLERANCE, CoefficientTable, CovarianceBlock, FactorSet, canonical_terms

# Expressions carry a dense weight row per term; 2**12 x 2**12 is the practical ceiling.
MAX_EXPRESSION_FACTORS = 12
NEGATIVE_VARIANCE_TOLERANCE = 1e-12


class IndexKind(StrEnum):
    TOT_RERI = "tot_reri"
    RERI = "reri"
    RERI_CONDITIONAL = "reri_conditional"
    TOT_RERI_CONDITIONAL = "tot_reri_conditional"
    TOT_I = "tot_i"
    I_TOP = "i_top"
    I_CONDITIONAL = "i_conditional"
    TOT_I_CONDITIONAL = "tot_i_conditional"
    HAZARD_RATIO = "hazard_ratio"


CONDITIONAL_KINDS = frozenset(
    {
        IndexKind.RERI_CONDITIONAL,
        IndexKind.TOT_RERI_CONDITIONAL,
        IndexKind.I_CONDITIONAL,
        IndexKind.TOT_I_CONDITIONAL,
    }
)


@dataclass(frozen=True, eq=False)
class IndexExpression:
    """(sum_k s_k * exp(<w_k, beta>) + c) / exp(<w_0, beta>) over ``terms``-ordered beta."""

    terms: tuple[int, ...]
    signs: np.ndarray
    weights: np.ndarray
    constant: float
    denominator: np.ndarray

    def evaluate(self, beta: np.ndarray) -> float:
        exponents = self.weights @ beta
        numerator = float(np.dot(self.signs, np.exp(exponents))) + self.constant
        return numerator / math.exp(float(self.denominator @ beta))

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        scaled = self.signs * np.exp(self.weights @ beta)
        denominator = math.exp(float(self.denominator @ beta))
        value = (float(scaled.sum()) + self.constant) / denominator
        return (scaled @ self.weights) / denominator - value * self.denominator


def build_expression(
    kind: IndexKind,
    factor_set: FactorSet,
    cond: Conditioning | None = None,
    term: int | None = None,
) -> IndexExpression:
    n = factor_set.n
    if n > MAX_EXPRESSION_FACTORS:
        raise UserError(
            f"Delta-method expressions support at most {MAX_EXPRESSION_FACTORS} factors."
        )
    kind = _coerce_kind(kind)
    if kind in CONDITIONAL_KINDS:
        if cond is None:
            raise UserError(f"{kind.value} needs a conditioning.")
        if cond.n != n:
            raise UserError("Conditioning and factor set disagree on the factor count.")
    terms = canonical_terms(n)
    full = factor_set.full_mask
    singles = [1 << i for i in range(n)]

    if kind is IndexKind.TOT_RERI:
        return _linear_in_rr(terms, {full: 1, **{b: -1 for b in singles}}, n - 1, 0)
    if kind is IndexKind.RERI:
        counts = {int(s): _sign(n - int(pattern_sizes(n)[s])) for s in range(1 << n)}
        return _linear_in_rr(terms, counts, 0.0, 0)
    if kind is IndexKind.RERI_CONDITIONAL:
        assert cond is not None
        k = cond.active.bit_count()
        counts = {
            int(sub) | cond.present: _sign(k - int(sub).bit_count())
            for sub in submasks(cond.active)
        }
        return _linear_in_rr(terms, counts, 0.0, cond.present)
    if kind is IndexKind.TOT_RERI_CONDITIONAL:
        assert cond is not None
        p = cond.present
        k = cond.active.bit_count()
        counts = {p | cond.active: 1, p: k - 1}
        for i in range(n):
            if cond.active >> i & 1:
                counts[p | (1 << i)] = -1
        return _linear_in_rr(terms, counts, 0.0, p)
    if kind is IndexKind.TOT_I:
        log_weights = _rr_weights(terms, full) - sum(_rr_weights(terms, b) for b in singles)
        return _single_exponential(terms, log_weights)
    if kind is IndexKind.I_TOP:
        return _single_exponential(terms, _unit(terms, full))
    if kind is IndexKind.I_CONDITIONAL:
        assert cond is not None
        log_weights = sum(
            (_unit(terms, cond.active | int(extra)) for extra in submasks(cond.present)),
            start=np.zeros(len(terms)),
        )
        return _single_exponential(terms, log_weights)
    if kind is IndexKind.TOT_I_CONDITIONAL:
        assert cond is not None
        p = cond.present
        k = cond.active.bit_count()
        log_weights = _rr_weights(terms, p | cond.active) + (k - 1) * _rr_weights(terms, p)
        for i in range(n):
            if cond.active >> i & 1:
                log_weights = log_weights - _rr_weights(terms, p | (1 << i))
        return _single_exponential(terms, log_weights)
    if kind is IndexKind.HAZARD_RATIO:
        if term is None or not 0 < term <= full:
            raise UserError("A hazard-ratio expression needs a nonempty term.")
        return _single_exponential(terms, _unit(terms, term))
    raise UserError(f"Unsupported index kind: {kind}")


def lattice_value(
    kind: IndexKind,
    coeffs: CoefficientTable,
    cond: Conditioning | None = None,
    term: int | None = None,
    surface: RiskSurface | None = None,
) -> float:
    """The same index computed through the risk surface instead of an expression."""
    kind = _coerce_kind(kind)
    surface = surface or surface_from_coefficients(coeffs)
    compute: dict[IndexKind, Callable[[], float]] = {
        IndexKind.TOT_RERI: lambda: additive.tot_reri(surface, policy="ignore"),
        IndexKind.RERI: lambda: additive.reri_n(surface, policy="ignore"),
        IndexKind.RERI_CONDITIONAL: lambda: additive.reri_conditional(
            surface, _need(cond), policy="ignore"
        ),
        IndexKind.TOT_RERI_CONDITIONAL: lambda: additive.tot_reri_conditional(
            surface, _need(cond), policy="ignore"
        ),
        IndexKind.TOT_I: lambda: multiplicative.tot_i(surface),
        IndexKind.I_TOP: lambda: multiplicative.i_top(coeffs),
        IndexKind.I_CONDITIONAL: lambda: multiplicative.i_conditional(coeffs, _need(cond)),
        IndexKind.TOT_I_CONDITIONAL: lambda: multiplicative.tot_i_conditional(
            surface, _need(cond)
        ),
        IndexKind.HAZARD_RATIO: lambda: math.exp(coeffs.coefficient(_need_term(term))),
    }
    return compute[kind]()


def delta_variance(
    expr: IndexExpression, coeffs: CoefficientTable, cov: CovarianceBlock
) -> tuple[float, float]:
    beta = np.array([coeffs.coefficient(m) for m in expr.terms])
    sigma = cov.aligned(expr.terms)
    scale = max(1.0, float(np.max(np.abs(sigma)))) if sigma.size else 1.0
    if sigma.size and np.max(np.abs(sigma - sigma.T)) > SYMMETRY_TOLERANCE * scale:
        raise VarianceError("Covariance matrix is not symmetric.")
    estimate = expr.evaluate(beta)
    gradient = expr.gradient(beta)
    variance = float(gradient @ sigma @ gradient)
    if variance < -NEGATIVE_VARIANCE_TOLERANCE:
        raise VarianceError(
            f"Propagated variance {variance:.3g} is negative; the covariance is not PSD."
        )
    return estimate, max(variance, 0.0)


def finite_difference_gradient(
    expr: IndexExpression, beta: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    gradient = np.zeros(len(beta))
    for j in range(len(beta)):
        step = np.zeros(len(beta))
        step[j] = h
        gradient[j] = (expr.evaluate(beta + step) - expr.evaluate(beta - step)) / (2 * h)
    return gradient


def critical_value(level: float = 0.95) -> float:
    if not 0.0 < level < 1.0:
        raise UserError("Confidence level must lie strictly between 0 and 1.")
    return float(stats.norm.ppf(0.5 + level / 2.0))


def confidence_interval(
    estimate: float, variance: float, level: float = 0.95
) -> tuple[float, float]:
    if variance < 0:
        raise VarianceError("Variance must be non-negative.")
    half_width = critical_value(level) * math.sqrt(variance)
    return estimate - half_width, estimate + half_width


def ratio_interval(
    log_estimate: float, log_variance: float, level: float = 0.95
) -> tuple[float, float]:
    """Wald interval on the log scale, mapped back with exp (used for HR rows)."""
    lower, upper = confidence_interval(log_estimate, log_variance, level)
    return math.exp(lower), math.exp(upper)


def _coerce_kind(kind: IndexKind | str) -> IndexKind:
    try:
        return IndexKind(kind)
    except ValueError as exc:
        raise UserError(f"Unsupported index kind: {kind}") from exc


def _sign(exponent: int) -> int:
    return 1 if exponent % 2 == 0 else -1


def _unit(terms: tuple[int, ...], mask: int) -> np.ndarray:
    out = np.zeros(len(terms))
    out[terms.index(mask)] = 1.0
    return out


def _rr_weights(terms: tuple[int, ...], pattern: int) -> np.ndarray:
    """ln rr(pattern) as weights over ``terms``: every nonempty term inside the pattern."""
    return np.array([1.0 if t & ~pattern == 0 else 0.0 for t in terms])


def _linear_in_rr(
    terms: tuple[int, ...], counts: dict[int, int], constant: float, reference: int
) -> IndexExpression:
    """Expression for (sum_S counts[S] * rr(S) + constant) / rr(reference)."""
    signs: list[float] = []
    rows: list[np.ndarray] = []
    for pattern, count in counts.items():
        if count == 0:
            continue
        if pattern == 0:
            constant += count
            continue
        row = _rr_weights(terms, pattern)
        for _ in range(abs(count)):
            signs.append(1.0 if count > 0 else -1.0)
            rows.append(row)
    weights = np.array(rows) if rows else np.zeros((0, len(terms)))
    denominator = _rr_weights(terms, reference) if reference else np.zeros(len(terms))
    return IndexExpression(
        terms=terms,
        signs=np.array(signs),
        weights=weights,
        constant=float(constant),
        denominator=denominator,
    )


def _single_exponential(terms: tuple[int, ...], log_weights: np.ndarray) -> IndexExpression:
    return IndexExpression(
        terms=terms,
        signs=np.array([1.0]),
        weights=np.asarray(log_weights, dtype=float).reshape(1, -1),
        constant=0.0,
        denominator=np.zeros(len(terms)),
    )


def _need(cond: Conditioning | None) -> Conditioning:
    if cond is None:
        raise UserError("This index needs a conditioning.")
    return cond


def _need_term(term: int | None) -> int:
    if term is None:
        raise UserError("A hazard-ratio index needs a term.")
    return term
