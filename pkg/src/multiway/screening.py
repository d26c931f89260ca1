from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal

from .errors import UserError
from .fitting import main_effects_ratios
from .lattice import RiskSurface, submasks
from .model import DataTable

DetectionMode = Literal["surface", "data", "declared"]


@dataclass(frozen=True)
class QualitativeContrast:
    factor: str
    context: tuple[str, ...]
    rr_with: float
    rr_without: float

    @property
    def difference(self) -> float:
        return self.rr_with - self.rr_without


@dataclass(frozen=True)
class OrientationFlag:
    factor: str
    protective: bool
    ratio: float
    mode: DetectionMode
    recoded: bool = False


def qualitative_contrasts(surface: RiskSurface) -> Iterator[QualitativeContrast]:
    """rr with vs. without each factor, in every stratum of the other factors."""
    factor_set = surface.factor_set
    full = factor_set.full_mask
    for i, name in enumerate(factor_set.names):
        bit = 1 << i
        for context in submasks(full & ~bit):
            context = int(context)
            yield QualitativeContrast(
                factor=name,
                context=factor_set.names_of(context),
                rr_with=float(surface.rr[context | bit]),
                rr_without=float(surface.rr[context]),
            )


def qualitative_violations(
    surface: RiskSurface, epsilon: float = 0.0
) -> list[QualitativeContrast]:
    if epsilon < 0:
        raise UserError("Screening tolerance must be non-negative.")
    return [c for c in qualitative_contrasts(surface) if c.difference <= epsilon]


def detect_protective(
    source: RiskSurface | DataTable,
    *,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
) -> list[OrientationFlag]:
    if isinstance(source, DataTable):
        ratios = main_effects_ratios(
            source, max_iterations=max_iterations, tolerance=tolerance
        )
        return [
            OrientationFlag(name, ratio < 1.0, ratio, "data") for name, ratio in ratios.items()
        ]
    return [
        OrientationFlag(name, float(rr) < 1.0, float(rr), "surface")
        for name, rr in zip(source.factor_set.names, source.singletons())
    ]
