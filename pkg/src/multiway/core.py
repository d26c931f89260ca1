from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
import logging
import math
from typing import Iterator

from . import additive, multiplicative
from .additive import Conditioning, ProtectivePolicy, absent_conditionings, present_conditionings
from .config import Config
from .errors import MultiwayError, PipelineError
from .fitting import FitResult, fit_logistic
from .inference import (
    MAX_EXPRESSION_FACTORS,
    IndexKind,
    build_expression,
    confidence_interval,
    delta_variance,
    ratio_interval,
)
from .lattice import (
    RiskSurface,
    coefficients_from_surface,
    recode_jacobian,
    surface_from_coefficients,
)
from .model import CoefficientTable, CovarianceBlock, DataTable, FactorSet, canonical_terms
from .report import (
    SECTION_ABSENT,
    SECTION_COEFFICIENTS,
    SECTION_HAZARD_RATIOS,
    SECTION_MULTIPLICATIVE,
    SECTION_PRESENT,
    SECTION_RERI,
    SECTION_TOT_RERI,
    InteractionReport,
    input_digest,
    tool_version,
)
from .screening import OrientationFlag, detect_protective, qualitative_violations

logger = logging.getLogger(__name__)

RECODED_PREFIX = "not_"
MULTIPLICATIVE_KINDS = frozenset(
    {IndexKind.TOT_I, IndexKind.I_TOP, IndexKind.I_CONDITIONAL, IndexKind.TOT_I_CONDITIONAL}
)

Source = CoefficientTable | DataTable | RiskSurface


@dataclass(frozen=True)
class PipelineOptions:
    tolerance: float = 0.0
    ci_level: float = 0.95
    protective_policy: ProtectivePolicy = "warn"
    recode_protective: bool = True
    max_iterations: int = 50
    score_tolerance: float = 1e-8
    min_cell_events: int = 5

    @classmethod
    def from_config(cls, config: Config) -> "PipelineOptions":
        policy = config.protective_policy
        if policy not in ("warn", "error", "ignore"):
            policy = "warn"
        return cls(
            tolerance=config.tolerance,
            ci_level=config.ci_level,
            protective_policy=policy,
            recode_protective=config.recode_protective,
            max_iterations=config.max_iterations,
            score_tolerance=config.score_tolerance,
            min_cell_events=config.min_cell_events,
        )


@dataclass
class _State:
    """What the pipeline knows after orienting (and possibly fitting) the input."""

    surface: RiskSurface
    coeffs: CoefficientTable
    covariance: CovarianceBlock | None
    flags: list[OrientationFlag]
    notes: list[str] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)
    fit: FitResult | None = None


@dataclass
class _Collector:
    estimates: dict[str, float] = field(default_factory=dict)
    standard_errors: dict[str, float] = field(default_factory=dict)
    cis: dict[str, tuple[float, float]] = field(default_factory=dict)
    sections: dict[str, list[str]] = field(default_factory=dict)

    def add(self, section: str, name: str, value: float) -> None:
        self.estimates[name] = value
        self.sections.setdefault(section, []).append(name)


def run_pipeline(
    source: Source,
    options: PipelineOptions | None = None,
    covariance: CovarianceBlock | None = None,
) -> InteractionReport:
    options = options or PipelineOptions()
    return _analyze(_prepare(source, options, covariance), options)


def run_data_pipeline(
    data: DataTable, options: PipelineOptions | None = None
) -> tuple[InteractionReport, FitResult]:
    """Like :func:`run_pipeline` on raw data, also handing back the saturated fit."""
    options = options or PipelineOptions()
    state = _prepare(data, options, None)
    assert state.fit is not None
    return _analyze(state, options), state.fit


def _analyze(state: _State, options: PipelineOptions) -> InteractionReport:
    surface = state.surface
    coeffs = state.coeffs
    factor_set = surface.factor_set
    n = factor_set.n
    out = _Collector()
    intervals = _IntervalBuilder(state, options)

    with _step("coefficients"):
        for mask in canonical_terms(n):
            if mask not in coeffs.entries:
                continue
            label = factor_set.label(mask)
            hr_name = f"HR({label})"
            beta = coeffs.coefficient(mask)
            out.add(SECTION_COEFFICIENTS, label, beta)
            out.add(SECTION_HAZARD_RATIOS, hr_name, math.exp(beta))
            if state.covariance is not None:
                se = state.covariance.standard_error(mask)
                out.standard_errors[label] = se
                out.cis[label] = confidence_interval(beta, se * se, options.ci_level)
                out.standard_errors[hr_name] = math.exp(beta) * se
                out.cis[hr_name] = ratio_interval(beta, se * se, options.ci_level)

    with _step("tot_reri"):
        name = _index_name("TotRERI", factor_set, factor_set.full_mask)
        value = additive.tot_reri(surface, policy="ignore")
        out.add(SECTION_TOT_RERI, name, value)
        intervals.attach(out, name, value, IndexKind.TOT_RERI)

    with _step("reri"):
        name = _index_name("RERI", factor_set, factor_set.full_mask)
        value = additive.reri_n(surface, policy="ignore")
        out.add(SECTION_RERI, name, value)
        intervals.attach(out, name, value, IndexKind.RERI)

    for step, section, conditionings in (
        ("conditional_absent", SECTION_ABSENT, absent_conditionings(n)),
        ("conditional_present", SECTION_PRESENT, present_conditionings(n)),
    ):
        with _step(step):
            for cond in conditionings:
                _conditional_additive(out, intervals, surface, section, cond)

    with _step("qualitative"):
        qualitative = qualitative_violations(surface, options.tolerance)
        comparisons = n * (1 << (n - 1))
        logger.info(
            "qualitative screen: %d of %d comparisons at or below %g",
            len(qualitative),
            comparisons,
            options.tolerance,
        )

    with _step("multiplicative"):
        _multiplicative(out, intervals, surface, coeffs)
        relation = multiplicative.scale_relation_check(surface)
        if relation.applicable and not relation.consistent:
            logger.warning("scale relation violated: %s", "; ".join(relation.violations))

    state.notes.extend(intervals.notes)
    return InteractionReport(
        factors=factor_set.names,
        estimates=out.estimates,
        standard_errors=out.standard_errors,
        cis=out.cis,
        sections={key: tuple(names) for key, names in out.sections.items()},
        qualitative=tuple(qualitative),
        qualitative_comparisons=comparisons,
        flags=tuple(state.flags),
        scale_relation=relation,
        notes=tuple(state.notes),
        provenance=state.provenance,
    )


def run_screening(
    source: Source,
    options: PipelineOptions | None = None,
    covariance: CovarianceBlock | None = None,
) -> InteractionReport:
    """Orientation and qualitative screens only; no indices."""
    options = options or PipelineOptions()
    state = _prepare(source, options, covariance)
    with _step("qualitative"):
        qualitative = qualitative_violations(state.surface, options.tolerance)
    n = state.surface.n
    return InteractionReport(
        factors=state.surface.factor_set.names,
        qualitative=tuple(qualitative),
        qualitative_comparisons=n * (1 << (n - 1)),
        flags=tuple(state.flags),
        notes=tuple(state.notes),
        provenance=state.provenance,
    )


def recode_coefficients(
    coeffs: CoefficientTable,
    covariance: CovarianceBlock | None,
    factors: list[int],
) -> tuple[CoefficientTable, CovarianceBlock | None]:
    """Recode ``factors`` as 1 - Z in coefficient space, carrying the covariance along."""
    n = coeffs.factor_set.n
    terms = canonical_terms(n)
    beta = coeffs.vector()
    sigma = covariance.aligned(terms) if covariance is not None else None
    factor_set = coeffs.factor_set
    for i in factors:
        jacobian = recode_jacobian(n, i)
        beta = jacobian @ beta
        if sigma is not None:
            sigma = jacobian @ sigma @ jacobian.T
        factor_set = _recoded_factor_set(factor_set, i)
    recoded = CoefficientTable.from_vector(factor_set, beta)
    if sigma is None:
        return recoded, None
    return recoded, CovarianceBlock(terms, sigma)


def _prepare(
    source: Source, options: PipelineOptions, covariance: CovarianceBlock | None
) -> _State:
    provenance = {
        "input_digest": input_digest(source, covariance),
        "tool_version": tool_version(),
        "input_kind": _input_kind(source),
    }
    with _step("orientation"):
        if isinstance(source, DataTable):
            state = _orient_data(source, options)
        else:
            state = _orient_lattice(source, options, covariance)
        state.provenance = {**provenance, **state.provenance}
        _recheck(state, options)
    return state


def _orient_lattice(
    source: CoefficientTable | RiskSurface,
    options: PipelineOptions,
    covariance: CovarianceBlock | None,
) -> _State:
    if isinstance(source, CoefficientTable):
        coeffs = source
        surface = surface_from_coefficients(coeffs)
    else:
        surface = source
        coeffs = coefficients_from_surface(surface)
        covariance = None
    detected = detect_protective(surface)
    targets, flags, notes = _plan_recoding(surface.factor_set, detected, options)
    if targets:
        coeffs, covariance = recode_coefficients(coeffs, covariance, targets)
        surface = surface_from_coefficients(coeffs)
        for i in targets:
            logger.info(
                "recoded %s as %s", source.factor_set.names[i], coeffs.factor_set.names[i]
            )
    return _State(surface, coeffs, covariance, flags, notes)


def _orient_data(data: DataTable, options: PipelineOptions) -> _State:
    detected = detect_protective(
        data, max_iterations=options.max_iterations, tolerance=options.score_tolerance
    )
    targets, flags, notes = _plan_recoding(data.factor_set, detected, options)
    if targets:
        data = _recode_data(data, targets)
    with _step("fit"):
        result = fit_logistic(
            data,
            saturated=True,
            max_iterations=options.max_iterations,
            tolerance=options.score_tolerance,
            min_cell_events=options.min_cell_events,
        )
    if not result.converged:
        notes.append(
            f"Logistic fit did not converge after {result.iterations} iterations "
            f"(max |score| {result.max_score:.3g})."
        )
    state = _State(
        surface=surface_from_coefficients(result.coefficients),
        coeffs=result.coefficients,
        covariance=result.covariance,
        flags=flags,
        notes=notes,
        fit=result,
    )
    state.provenance = {
        "fit_iterations": str(result.iterations),
        "fit_converged": str(result.converged).lower(),
        "fit_log_likelihood": f"{result.log_likelihood:.10g}",
    }
    return state


def _plan_recoding(
    factor_set: FactorSet, detected: list[OrientationFlag], options: PipelineOptions
) -> tuple[list[int], list[OrientationFlag], list[str]]:
    targets: list[int] = []
    flags: list[OrientationFlag] = []
    notes: list[str] = []
    for i, flag in enumerate(detected):
        declared = factor_set.risk_orientation[i]
        if declared == "protective":
            targets.append(i)
            flags.append(OrientationFlag(flag.factor, True, flag.ratio, "declared", recoded=True))
            continue
        recode = flag.protective and declared == "unknown" and options.recode_protective
        if recode:
            targets.append(i)
        elif flag.protective:
            notes.append(
                f"{flag.factor} lowers risk (ratio {flag.ratio:.3g}) but was not recoded."
            )
        flags.append(OrientationFlag(flag.factor, flag.protective, flag.ratio, flag.mode, recode))
    return targets, flags, notes


def _recheck(state: _State, options: PipelineOptions) -> None:
    still = [flag.factor for flag in detect_protective(state.surface) if flag.protective]
    if not still:
        return
    if any(flag.recoded for flag in state.flags):
        state.notes.append(
            f"After recoding, singleton RR < 1 remains for {', '.join(still)}."
        )
    additive.guard_orientation(state.surface, options.protective_policy)


def _recode_data(data: DataTable, targets: list[int]) -> DataTable:
    factor_set = data.factor_set
    frame = data.frame.copy()
    renames: dict[str, str] = {}
    for i in targets:
        name = factor_set.names[i]
        frame[name] = 1 - frame[name]
        factor_set = _recoded_factor_set(factor_set, i)
        renames[name] = factor_set.names[i]
        logger.info("recoded data column %s as %s", name, renames[name])
    return DataTable(
        factor_set=factor_set,
        outcome=data.outcome,
        frame=frame.rename(columns=renames),
        confounders=data.confounders,
    )


def _recoded_factor_set(factor_set: FactorSet, i: int) -> FactorSet:
    name = factor_set.names[i]
    if name.startswith(RECODED_PREFIX):
        renamed = name[len(RECODED_PREFIX) :]
    else:
        renamed = f"{RECODED_PREFIX}{name}"
    return factor_set.renamed(i, renamed).with_orientation(i, "risk")


def _conditional_additive(
    out: _Collector,
    intervals: "_IntervalBuilder",
    surface: RiskSurface,
    section: str,
    cond: Conditioning,
) -> None:
    factor_set = surface.factor_set
    name = _index_name("RERI", factor_set, cond.active, cond)
    value = additive.reri_conditional(surface, cond, policy="ignore")
    out.add(section, name, value)
    intervals.attach(out, name, value, IndexKind.RERI_CONDITIONAL, cond)
    if cond.active.bit_count() >= 3:
        name = _index_name("TotRERI", factor_set, cond.active, cond)
        value = additive.tot_reri_conditional(surface, cond, policy="ignore")
        out.add(section, name, value)
        intervals.attach(out, name, value, IndexKind.TOT_RERI_CONDITIONAL, cond)


def _multiplicative(
    out: _Collector,
    intervals: "_IntervalBuilder",
    surface: RiskSurface,
    coeffs: CoefficientTable,
) -> None:
    factor_set = surface.factor_set
    full = factor_set.full_mask
    name = _index_name("TotI", factor_set, full)
    value = multiplicative.tot_i(surface)
    out.add(SECTION_MULTIPLICATIVE, name, value)
    intervals.attach(out, name, value, IndexKind.TOT_I)

    name = _index_name("I", factor_set, full)
    value = multiplicative.i_top(coeffs)
    out.add(SECTION_MULTIPLICATIVE, name, value)
    intervals.attach(out, name, value, IndexKind.I_TOP)

    n = factor_set.n
    for cond in [*absent_conditionings(n), *present_conditionings(n)]:
        name = _index_name("I", factor_set, cond.active, cond)
        value = multiplicative.i_conditional(coeffs, cond)
        out.add(SECTION_MULTIPLICATIVE, name, value)
        intervals.attach(out, name, value, IndexKind.I_CONDITIONAL, cond)
        if cond.active.bit_count() >= 3:
            name = _index_name("TotI", factor_set, cond.active, cond)
            value = multiplicative.tot_i_conditional(surface, cond)
            out.add(SECTION_MULTIPLICATIVE, name, value)
            intervals.attach(out, name, value, IndexKind.TOT_I_CONDITIONAL, cond)


class _IntervalBuilder:
    def __init__(self, state: _State, options: PipelineOptions) -> None:
        self._coeffs = state.coeffs
        self._covariance = state.covariance
        self._factor_set = state.coeffs.factor_set
        self._level = options.ci_level
        self.notes: list[str] = []
        if self._covariance is not None and self._factor_set.n > MAX_EXPRESSION_FACTORS:
            self.notes.append(
                f"Confidence intervals skipped: more than {MAX_EXPRESSION_FACTORS} factors."
            )
            self._covariance = None

    def attach(
        self,
        out: _Collector,
        name: str,
        estimate: float,
        kind: IndexKind,
        cond: Conditioning | None = None,
    ) -> None:
        if self._covariance is None:
            return
        expr = build_expression(kind, self._factor_set, cond)
        _, variance = delta_variance(expr, self._coeffs, self._covariance)
        out.standard_errors[name] = math.sqrt(variance)
        if kind in MULTIPLICATIVE_KINDS:
            # Multiplicative indices are exp of a linear form; the interval is built on that form.
            out.cis[name] = ratio_interval(
                math.log(estimate), variance / estimate**2, self._level
            )
        else:
            out.cis[name] = confidence_interval(estimate, variance, self._level)


def _index_name(
    prefix: str, factor_set: FactorSet, active: int, cond: Conditioning | None = None
) -> str:
    names = ",".join(factor_set.names_of(active))
    base = f"{prefix}{active.bit_count()}({names}"
    if cond is None:
        return base + ")"
    return f"{base} | {cond.describe(factor_set)})"


def _input_kind(source: Source) -> str:
    if isinstance(source, CoefficientTable):
        return "coefficients"
    if isinstance(source, DataTable):
        return "data"
    return "surface"


@contextmanager
def _step(name: str) -> Iterator[None]:
    logger.debug("pipeline step: %s", name)
    try:
        yield
    except PipelineError:
        raise
    except MultiwayError as exc:
        raise PipelineError(name, exc) from exc
