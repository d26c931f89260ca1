from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .additive import Conditioning, tot_reri
from .errors import UserError
from .lattice import RiskSurface, pattern_sizes, submasks
from .model import CoefficientTable


def tot_i(surface: RiskSurface) -> float:
    return float(surface.rr[-1] / np.prod(surface.singletons()))


def tot_i_conditional(surface: RiskSurface, cond: Conditioning) -> float:
    p = cond.present
    base = float(surface.rr[p])
    k = cond.active.bit_count()
    singles = [float(surface.rr[p | (1 << i)]) for i in range(surface.n) if cond.active >> i & 1]
    return float(surface.rr[p | cond.active]) * base ** (k - 1) / math.prod(singles)


def i_top(coeffs: CoefficientTable) -> float:
    return math.exp(coeffs.coefficient(coeffs.factor_set.full_mask))


def i_conditional(coeffs: CoefficientTable, cond: Conditioning) -> float:
    """exp of every coefficient whose term contains A and otherwise only factors in P."""
    if cond.n != coeffs.factor_set.n:
        raise UserError("Conditioning and coefficients disagree on the factor count.")
    total = sum(coeffs.coefficient(cond.active | int(extra)) for extra in submasks(cond.present))
    return math.exp(total)


def i_conditional_surface(surface: RiskSurface, cond: Conditioning) -> float:
    subs = submasks(cond.active)
    k = cond.active.bit_count()
    signs = np.where((k - pattern_sizes(surface.n)[subs]) % 2 == 0, 1.0, -1.0)
    return float(np.exp(np.dot(signs, np.log(surface.rr[subs | cond.present]))))


@dataclass(frozen=True)
class ScaleRelation:
    tot_i: float
    tot_reri: float
    lower_bound: float
    applicable: bool
    violations: tuple[str, ...] = field(default=())

    @property
    def consistent(self) -> bool:
        return not self.violations


def scale_relation_check(surface: RiskSurface) -> ScaleRelation:
    """Check the additive/multiplicative implications that hold when every factor raises risk.

    TotI >= 1 implies TotRERI > 0, TotRERI <= 0 implies TotI < 1, and under
    TotI >= 1 TotRERI is at least prod(rr_i) - sum(rr_i) + (n - 1).
    """
    singles = surface.singletons()
    ratio = tot_i(surface)
    excess = tot_reri(surface, policy="ignore")
    bound = float(np.prod(singles) - singles.sum() + (surface.n - 1))
    if np.any(singles <= 1.0):
        return ScaleRelation(ratio, excess, bound, applicable=False)
    violations: list[str] = []
    if ratio >= 1.0 and not excess > 0.0:
        violations.append("TotI >= 1 but TotRERI <= 0")
    if excess <= 0.0 and not ratio < 1.0:
        violations.append("TotRERI <= 0 but TotI >= 1")
    # Relative slack for the rounding in rr_full versus the product of singletons.
    if ratio >= 1.0 and excess < bound - 1e-12 * max(1.0, abs(bound)):
        violations.append("TotI >= 1 but TotRERI is below prod(rr_i) - sum(rr_i) + (n - 1)")
    return ScaleRelation(ratio, excess, bound, applicable=True, violations=tuple(violations))
