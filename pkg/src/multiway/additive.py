from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Literal
import warnings

import numpy as np

from .errors import ProtectiveFactorError, ProtectiveFactorWarning, UserError
from .lattice import RiskSurface, pattern_sizes, submasks
from .model import FactorSet

ProtectivePolicy = Literal["warn", "error", "ignore"]

# The recursive oracle visits every chain of subsets; past this it stops being quick.
MAX_ORACLE_FACTORS = 8


@dataclass(frozen=True)
class Conditioning:
    """Active factors A interact; factors in P are held present, factors in Z absent."""

    n: int
    active: int
    present: int = 0

    def __post_init__(self) -> None:
        full = (1 << self.n) - 1
        if self.active & ~full or self.present & ~full:
            raise UserError("Conditioning refers to factors outside the factor set.")
        if self.active & self.present:
            raise UserError("Active and present factors must be disjoint.")
        if self.active.bit_count() < 2:
            raise UserError("A conditional index needs at least two active factors.")

    @property
    def absent(self) -> int:
        return ((1 << self.n) - 1) & ~(self.active | self.present)

    @classmethod
    def of(
        cls,
        factor_set: FactorSet,
        active: Iterable[str],
        present: Iterable[str] = (),
        absent: Iterable[str] | None = None,
    ) -> "Conditioning":
        active_mask = factor_set.mask_of(active)
        present_mask = factor_set.mask_of(present)
        if absent is not None:
            absent_mask = factor_set.mask_of(absent)
            if absent_mask & (active_mask | present_mask):
                raise UserError("Absent factors must be disjoint from active and present.")
            if active_mask | present_mask | absent_mask != factor_set.full_mask:
                raise UserError("Active, present and absent factors must cover all factors.")
        return cls(factor_set.n, active_mask, present_mask)

    def describe(self, factor_set: FactorSet) -> str:
        held = [f"{name}=1" for name in factor_set.names_of(self.present)]
        held += [f"{name}=0" for name in factor_set.names_of(self.absent)]
        return ",".join(held)


def guard_orientation(surface: RiskSurface, policy: ProtectivePolicy = "warn") -> None:
    if policy == "ignore":
        return
    protective = tuple(
        name for name, rr in zip(surface.factor_set.names, surface.singletons()) if rr < 1.0
    )
    if not protective:
        return
    if policy == "error":
        raise ProtectiveFactorError(protective)
    warnings.warn(ProtectiveFactorWarning(protective), stacklevel=3)


def tot_reri(surface: RiskSurface, policy: ProtectivePolicy = "warn") -> float:
    guard_orientation(surface, policy)
    n = surface.n
    return float(surface.rr[-1] - surface.singletons().sum() + (n - 1))


def reri_n(surface: RiskSurface, policy: ProtectivePolicy = "warn") -> float:
    guard_orientation(surface, policy)
    n = surface.n
    signs = np.where((n - pattern_sizes(n)) % 2 == 0, 1.0, -1.0)
    return float(np.dot(signs, surface.rr))


def reri_conditional(
    surface: RiskSurface, cond: Conditioning, policy: ProtectivePolicy = "warn"
) -> float:
    guard_orientation(surface, policy)
    _check_conditioning(surface, cond)
    subs = submasks(cond.active)
    k = cond.active.bit_count()
    signs = np.where((k - pattern_sizes(surface.n)[subs]) % 2 == 0, 1.0, -1.0)
    numerator = float(np.dot(signs, surface.rr[subs | cond.present]))
    return numerator / float(surface.rr[cond.present])


def tot_reri_conditional(
    surface: RiskSurface, cond: Conditioning, policy: ProtectivePolicy = "warn"
) -> float:
    guard_orientation(surface, policy)
    _check_conditioning(surface, cond)
    p = cond.present
    singles = sum(float(surface.rr[p | bit]) for bit in _bits(cond.active))
    k = cond.active.bit_count()
    numerator = float(surface.rr[p | cond.active]) - singles + (k - 1) * float(surface.rr[p])
    return numerator / float(surface.rr[p])


def reri_recursive_oracle(surface: RiskSurface) -> float:
    """RERI of all factors by subtracting every lower-order RERI from TotRERI.

    Each lower-order RERI is itself resolved the same way, bottoming out at
    pairs where RERI and TotRERI coincide.
    """
    n = surface.n
    if n > MAX_ORACLE_FACTORS:
        raise UserError(f"The recursive oracle supports at most {MAX_ORACLE_FACTORS} factors.")
    rr = surface.rr
    memo: dict[int, float] = {}

    def solve(active: int) -> float:
        if active in memo:
            return memo[active]
        total = float(rr[active]) - sum(float(rr[bit]) for bit in _bits(active))
        total += active.bit_count() - 1
        for lower in submasks(active):
            lower = int(lower)
            if lower != active and lower.bit_count() >= 2:
                total -= solve(lower)
        memo[active] = total
        return total

    return solve((1 << n) - 1)


def absent_conditionings(n: int) -> Iterator[Conditioning]:
    """Every proper subset of two or more factors, all remaining factors absent."""
    for size in range(2, n):
        for combo in combinations(range(n), size):
            yield Conditioning(n, sum(1 << i for i in combo))


def present_conditionings(n: int) -> Iterator[Conditioning]:
    """Every proper subset of two or more factors, all remaining factors present."""
    full = (1 << n) - 1
    for size in range(2, n):
        for combo in combinations(range(n), size):
            active = sum(1 << i for i in combo)
            yield Conditioning(n, active, full & ~active)


def _check_conditioning(surface: RiskSurface, cond: Conditioning) -> None:
    if cond.n != surface.n:
        raise UserError(
            f"Conditioning is over {cond.n} factors but the surface has {surface.n}."
        )


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low
        mask ^= low
