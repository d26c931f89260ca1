from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import UserError
from .lattice import RiskSurface
from .model import DataTable

PREVALENCE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class SimulationSpec:
    truth: RiskSurface
    baseline_risk: float
    size: int
    prevalence: np.ndarray
    seed: int = 0
    outcome: str = "outcome"

    def __post_init__(self) -> None:
        if not 0.0 < self.baseline_risk < 1.0:
            raise UserError("Baseline risk must lie strictly between 0 and 1.")
        if self.baseline_risk * float(self.truth.rr.max()) > 1.0:
            raise UserError(
                "Baseline risk times the largest relative risk exceeds 1; "
                "lower the baseline risk."
            )
        if self.size < 1:
            raise UserError("Cohort size must be at least 1.")
        prevalence = np.array(self.prevalence, dtype=float)
        if prevalence.shape != self.truth.rr.shape:
            raise UserError(
                f"Prevalence needs one entry per exposure pattern ({self.truth.rr.size})."
            )
        if np.any(prevalence < 0) or abs(prevalence.sum() - 1.0) > PREVALENCE_TOLERANCE:
            raise UserError("Pattern prevalences must be non-negative and sum to 1.")
        prevalence = prevalence / prevalence.sum()
        prevalence.setflags(write=False)
        object.__setattr__(self, "prevalence", prevalence)


def uniform_prevalence(n: int) -> np.ndarray:
    return np.full(1 << n, 1.0 / (1 << n))


def independent_prevalence(factor_prevalence: Sequence[float]) -> np.ndarray:
    """Pattern distribution for factors present independently with the given probabilities."""
    probs = np.array(factor_prevalence, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise UserError("Factor prevalences must lie in [0, 1].")
    patterns = np.arange(1 << len(probs))
    out = np.ones(patterns.size)
    for i, p in enumerate(probs):
        present = (patterns >> i) & 1
        out *= np.where(present == 1, p, 1.0 - p)
    return out


def simulate_cohort(spec: SimulationSpec) -> DataTable:
    factor_set = spec.truth.factor_set
    rng = np.random.default_rng(spec.seed)
    patterns = rng.choice(spec.prevalence.size, size=spec.size, p=spec.prevalence)
    risk = spec.baseline_risk * spec.truth.rr[patterns]
    outcome = (rng.random(spec.size) < risk).astype(np.int64)
    columns = {name: (patterns >> i) & 1 for i, name in enumerate(factor_set.names)}
    columns[spec.outcome] = outcome
    frame = pd.DataFrame(columns).astype(np.int64)
    return DataTable(factor_set=factor_set, outcome=spec.outcome, frame=frame)


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds; replicate k always gets the same stream."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def simulate_replicates(spec: SimulationSpec, count: int) -> Iterator[DataTable]:
    for seed in replicate_seeds(spec.seed, count):
        yield simulate_cohort(replace(spec, seed=seed))
