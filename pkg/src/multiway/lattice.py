from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .errors import NumericalError, UserError
from .model import MAX_FACTORS, CoefficientTable, FactorSet, canonical_terms

# Bit i set means factor i is present.
ExposurePattern = int


@dataclass(frozen=True, eq=False)
class RiskSurface:
    factor_set: FactorSet
    rr: np.ndarray

    def __post_init__(self) -> None:
        rr = np.array(self.rr, dtype=float)
        size = 1 << self.factor_set.n
        if rr.shape != (size,):
            raise UserError(f"A surface over {self.factor_set.n} factors needs {size} entries.")
        if not np.all(np.isfinite(rr)):
            raise NumericalError("Relative risks must be finite.")
        if np.any(rr <= 0):
            raise NumericalError("Relative risks must be positive.")
        if rr[0] != 1.0:
            raise UserError("The all-absent reference pattern must have RR = 1.")
        rr.setflags(write=False)
        object.__setattr__(self, "rr", rr)

    @property
    def n(self) -> int:
        return self.factor_set.n

    def __getitem__(self, pattern: ExposurePattern) -> float:
        return float(self.rr[pattern])

    def singletons(self) -> np.ndarray:
        return self.rr[[1 << i for i in range(self.n)]]

    def err(self) -> np.ndarray:
        return self.rr - 1.0

    def relabeled(self, factor_set: FactorSet) -> "RiskSurface":
        if factor_set.n != self.n:
            raise UserError("Relabeling must keep the factor count.")
        return RiskSurface(factor_set, self.rr)


def enumerate_patterns(n: int) -> list[ExposurePattern]:
    _check_factor_count(n)
    return list(range(1 << n))


@lru_cache(maxsize=32)
def pattern_sizes(n: int) -> np.ndarray:
    """Number of present factors for every pattern 0 .. 2**n - 1."""
    sizes = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        sizes[1 << i : 1 << (i + 1)] = sizes[: 1 << i] + 1
    sizes.setflags(write=False)
    return sizes


@lru_cache(maxsize=4096)
def submasks(mask: int) -> np.ndarray:
    """All subsets of ``mask``, ascending."""
    subs = []
    sub = mask
    while True:
        subs.append(sub)
        if sub == 0:
            break
        sub = (sub - 1) & mask
    out = np.array(subs[::-1], dtype=np.int64)
    out.setflags(write=False)
    return out


def zeta(values: np.ndarray, n: int) -> np.ndarray:
    """Subset-sum transform: out[S] = sum of values[T] over all T contained in S."""
    out = np.array(values, dtype=float)
    for i in range(n):
        view = out.reshape(-1, 2, 1 << i)
        view[:, 1, :] += view[:, 0, :]
    return out


def moebius(values: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`zeta`."""
    out = np.array(values, dtype=float)
    for i in range(n):
        view = out.reshape(-1, 2, 1 << i)
        view[:, 1, :] -= view[:, 0, :]
    return out


def surface_from_coefficients(coeffs: CoefficientTable) -> RiskSurface:
    n = coeffs.factor_set.n
    _check_factor_count(n)
    beta = np.zeros(1 << n)
    for mask, value in coeffs.entries.items():
        beta[mask] = value
    log_rr = zeta(beta, n)
    with np.errstate(over="ignore"):
        rr = np.exp(log_rr)
    if not np.all(np.isfinite(rr)) or np.any(rr <= 0):
        raise NumericalError("Coefficients overflow to a non-finite relative risk.")
    rr[0] = 1.0
    return RiskSurface(coeffs.factor_set, rr)


def coefficients_from_surface(surface: RiskSurface) -> CoefficientTable:
    n = surface.n
    beta = moebius(np.log(surface.rr), n)
    return CoefficientTable(
        surface.factor_set, {mask: float(beta[mask]) for mask in canonical_terms(n)}
    )


def flip_factor(surface: RiskSurface, i: int) -> RiskSurface:
    """Recode factor ``i`` as 1 - Z and re-reference to the new all-absent pattern."""
    if not 0 <= i < surface.n:
        raise UserError(f"Factor index {i} out of range.")
    bit = 1 << i
    flipped = surface.rr[np.arange(surface.rr.size) ^ bit] / surface.rr[bit]
    flipped[0] = 1.0
    return RiskSurface(surface.factor_set, flipped)


def recode_jacobian(n: int, i: int) -> np.ndarray:
    """Linear map J with beta' = J @ beta for the recoding done by :func:`flip_factor`.

    Rows and columns follow ``canonical_terms(n)``.
    """
    _check_factor_count(n)
    terms = canonical_terms(n)
    bit = 1 << i
    source = np.arange(1 << n) ^ bit
    jacobian = np.zeros((len(terms), len(terms)))
    for col, mask in enumerate(terms):
        beta = np.zeros(1 << n)
        beta[mask] = 1.0
        log_rr = zeta(beta, n)
        shifted = log_rr[source] - log_rr[bit]
        recoded = moebius(shifted, n)
        jacobian[:, col] = recoded[list(terms)]
    return jacobian


def is_multiplicative(coeffs: CoefficientTable, tol: float = 0.0) -> bool:
    return all(
        abs(value) <= tol for mask, value in coeffs.entries.items() if mask.bit_count() > 1
    )


def log_additive_over_disjoint(surface: RiskSurface, rel_tol: float = 1e-12) -> bool:
    """True when ln rr(S | T) = ln rr(S) + ln rr(T) for every disjoint S, T."""
    log_rr = np.log(surface.rr)
    full = (1 << surface.n) - 1
    for s in range(1, full + 1):
        for t in submasks(full & ~s):
            if t == 0:
                continue
            lhs = log_rr[s | int(t)]
            rhs = log_rr[s] + log_rr[t]
            if not math.isclose(lhs, rhs, rel_tol=rel_tol, abs_tol=rel_tol):
                return False
    return True


def _check_factor_count(n: int) -> None:
    if not 2 <= n <= MAX_FACTORS:
        raise UserError(f"Factor count must be between 2 and {MAX_FACTORS}, got {n}.")
