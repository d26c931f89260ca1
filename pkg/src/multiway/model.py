from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ParseError, UserError, VarianceError

Orientation = Literal["risk", "protective", "unknown"]
ORIENTATIONS: tuple[Orientation, ...] = ("risk", "protective", "unknown")

# Lattice size is 2**n; beyond this a surface no longer fits comfortably in memory.
MAX_FACTORS = 20
PRODUCT_SEPARATOR = "*"
SYMMETRY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class FactorSet:
    names: tuple[str, ...]
    risk_orientation: tuple[Orientation, ...] = ()

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise UserError("At least two factors are required.")
        if len(names) > MAX_FACTORS:
            raise UserError(f"At most {MAX_FACTORS} factors are supported.")
        for name in names:
            if not isinstance(name, str) or not name.strip():
                raise UserError("Factor labels must be non-empty strings.")
            if PRODUCT_SEPARATOR in name:
                raise UserError(f"Factor label {name!r} may not contain '*'.")
        if len(set(names)) != len(names):
            raise UserError(f"Factor labels must be unique: {', '.join(names)}")
        orientation = tuple(self.risk_orientation) or ("unknown",) * len(names)
        if len(orientation) != len(names):
            raise UserError("Orientation must list one entry per factor.")
        for value in orientation:
            if value not in ORIENTATIONS:
                raise UserError(f"Unknown orientation {value!r}.")
        object.__setattr__(self, "risk_orientation", orientation)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError as exc:
            raise UserError(f"Unknown factor label: {name!r}") from exc

    def mask_of(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            mask |= 1 << self.index(name)
        return mask

    def names_of(self, mask: int) -> tuple[str, ...]:
        return tuple(name for i, name in enumerate(self.names) if mask >> i & 1)

    def label(self, mask: int) -> str:
        return PRODUCT_SEPARATOR.join(self.names_of(mask))

    def parse_label(self, label: str) -> int:
        parts = [part.strip() for part in label.split(PRODUCT_SEPARATOR)]
        if not parts or any(not part for part in parts):
            raise ParseError(f"Malformed term label: {label!r}")
        mask = 0
        for part in parts:
            if part not in self.names:
                raise ParseError(f"Unknown factor label {part!r} in term {label!r}")
            bit = 1 << self.names.index(part)
            if mask & bit:
                raise ParseError(f"Factor {part!r} repeated in term {label!r}")
            mask |= bit
        return mask

    def with_orientation(self, index: int, orientation: Orientation) -> "FactorSet":
        values = list(self.risk_orientation)
        values[index] = orientation
        return FactorSet(self.names, tuple(values))

    def renamed(self, index: int, name: str) -> "FactorSet":
        names = list(self.names)
        names[index] = name
        return FactorSet(tuple(names), self.risk_orientation)


@lru_cache(maxsize=32)
def canonical_terms(n: int) -> tuple[int, ...]:
    """Nonempty subsets ordered by size, then by factor position (x1, x2, x1*x2, ...)."""
    masks = range(1, 1 << n)
    return tuple(
        sorted(masks, key=lambda m: (m.bit_count(), [i for i in range(n) if m >> i & 1]))
    )


@dataclass(frozen=True)
class CoefficientTable:
    factor_set: FactorSet
    entries: Mapping[int, float]
    saturated: bool = field(init=False)

    def __post_init__(self) -> None:
        full = self.factor_set.full_mask
        clean: dict[int, float] = {}
        for mask, value in self.entries.items():
            if mask <= 0 or mask & ~full:
                raise UserError(f"Coefficient key {mask} is not a nonempty factor subset.")
            number = float(value)
            if not math.isfinite(number):
                label = self.factor_set.label(mask)
                raise UserError(f"Coefficient for {label} is not finite.")
            clean[mask] = number
        ordered = {m: clean[m] for m in canonical_terms(self.factor_set.n) if m in clean}
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "saturated", len(ordered) == full)

    def coefficient(self, mask: int) -> float:
        # Missing terms only exist on tables built with an explicit opt-in.
        return self.entries.get(mask, 0.0)

    def terms(self) -> tuple[int, ...]:
        return canonical_terms(self.factor_set.n)

    def vector(self) -> np.ndarray:
        return np.array([self.coefficient(m) for m in self.terms()], dtype=float)

    def labels(self) -> dict[str, float]:
        return {self.factor_set.label(m): v for m, v in self.entries.items()}

    @classmethod
    def from_vector(cls, factor_set: FactorSet, values: Sequence[float]) -> "CoefficientTable":
        terms = canonical_terms(factor_set.n)
        if len(values) != len(terms):
            raise UserError(f"Expected {len(terms)} coefficients, got {len(values)}.")
        return cls(factor_set, {m: float(v) for m, v in zip(terms, values)})


@dataclass(frozen=True, eq=False)
class CovarianceBlock:
    terms: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float)
        k = len(self.terms)
        if matrix.shape != (k, k):
            raise VarianceError(
                f"Covariance must be {k}x{k} to match the coefficients, got {matrix.shape}."
            )
        if len(set(self.terms)) != k:
            raise VarianceError("Covariance terms must be unique.")
        if not np.all(np.isfinite(matrix)):
            raise VarianceError("Covariance contains non-finite entries.")
        scale = max(1.0, float(np.max(np.abs(matrix)))) if k else 1.0
        if k and np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOLERANCE * scale:
            raise VarianceError("Covariance matrix is not symmetric.")
        if k and np.any(np.diag(matrix) < 0):
            raise VarianceError("Covariance matrix has a negative variance.")
        matrix = (matrix + matrix.T) / 2.0
        matrix.setflags(write=False)
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "matrix", matrix)

    def aligned(self, terms: Sequence[int]) -> np.ndarray:
        """Matrix reordered to ``terms``; terms without a row get zero variance."""
        position = {m: i for i, m in enumerate(self.terms)}
        out = np.zeros((len(terms), len(terms)))
        rows = [(i, position[m]) for i, m in enumerate(terms) if m in position]
        if rows:
            dst = np.array([r[0] for r in rows])
            src = np.array([r[1] for r in rows])
            out[np.ix_(dst, dst)] = self.matrix[np.ix_(src, src)]
        return out

    def standard_error(self, mask: int) -> float:
        if mask not in self.terms:
            return 0.0
        i = self.terms.index(mask)
        return math.sqrt(self.matrix[i, i])


@dataclass(frozen=True, eq=False)
class DataTable:
    factor_set: FactorSet
    outcome: str
    frame: pd.DataFrame
    confounders: tuple[str, ...] = ()

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def outcomes(self) -> np.ndarray:
        return self.frame[self.outcome].to_numpy(dtype=np.int64)

    def exposures(self) -> np.ndarray:
        return self.frame[list(self.factor_set.names)].to_numpy(dtype=np.int64)

    def patterns(self) -> np.ndarray:
        weights = 1 << np.arange(self.factor_set.n, dtype=np.int64)
        return self.exposures() @ weights

    def columns(self) -> list[str]:
        return [*self.factor_set.names, self.outcome, *self.confounders]
