from __future__ import annotations

import numpy as np
import pandas as pd

from multiway.lattice import RiskSurface, surface_from_coefficients
from multiway.model import CoefficientTable, DataTable, FactorSet, canonical_terms


def factor_set(n: int) -> FactorSet:
    return FactorSet(tuple(f"x{i + 1}" for i in range(n)))


def random_coefficients(
    rng: np.random.Generator, n: int, scale: float = 0.5
) -> CoefficientTable:
    values = rng.normal(0.0, scale, size=len(canonical_terms(n)))
    return CoefficientTable.from_vector(factor_set(n), values)


def random_surface(rng: np.random.Generator, n: int, scale: float = 0.5) -> RiskSurface:
    return surface_from_coefficients(random_coefficients(rng, n, scale))


def risk_factor_surface(rng: np.random.Generator, n: int) -> RiskSurface:
    """Random surface whose singleton RRs all exceed 1."""
    coeffs = random_coefficients(rng, n)
    entries = dict(coeffs.entries)
    for i in range(n):
        entries[1 << i] = abs(entries[1 << i]) + 1e-3
    return surface_from_coefficients(CoefficientTable(coeffs.factor_set, entries))


def random_psd(rng: np.random.Generator, size: int, scale: float = 0.05) -> np.ndarray:
    root = rng.normal(0.0, scale, size=(size, size))
    return root @ root.T


def cohort_from_counts(
    names: tuple[str, ...],
    cells: dict[int, tuple[int, int]],
    outcome: str = "outcome",
) -> DataTable:
    """Expand {pattern: (events, subjects)} into one row per subject."""
    patterns = np.repeat(np.array(list(cells), dtype=np.int64), [s for _, s in cells.values()])
    y = np.concatenate(
        [np.r_[np.ones(e, dtype=np.int64), np.zeros(s - e, dtype=np.int64)] for e, s in cells.values()]
    )
    columns = {name: (patterns >> i) & 1 for i, name in enumerate(names)}
    columns[outcome] = y
    return DataTable(factor_set=FactorSet(names), outcome=outcome, frame=pd.DataFrame(columns))
