from __future__ import annotations

from dataclasses import asdict, dataclass, field
import hashlib
import importlib.metadata
import io
import json
import math
from typing import Any, Literal

from rich import box
from rich.console import Console
from rich.table import Table
from rich.text import Text

from .errors import NumericalError, ParseError
from .lattice import RiskSurface
from .model import CoefficientTable, CovarianceBlock, DataTable
from .multiplicative import ScaleRelation
from .screening import OrientationFlag, QualitativeContrast

ReportFormat = Literal["json", "table"]

SECTION_COEFFICIENTS = "coefficients"
SECTION_HAZARD_RATIOS = "hazard_ratios"
SECTION_TOT_RERI = "tot_reri"
SECTION_RERI = "reri"
SECTION_ABSENT = "conditional_absent"
SECTION_PRESENT = "conditional_present"
SECTION_MULTIPLICATIVE = "multiplicative"
SECTIONS = (
    SECTION_COEFFICIENTS,
    SECTION_HAZARD_RATIOS,
    SECTION_TOT_RERI,
    SECTION_RERI,
    SECTION_ABSENT,
    SECTION_PRESENT,
    SECTION_MULTIPLICATIVE,
)
# Lower-order rows first, then the top-order RERI, then TotRERI.
ADDITIVE_TABLE_ORDER = (SECTION_ABSENT, SECTION_PRESENT, SECTION_RERI, SECTION_TOT_RERI)
CI_SLACK = 1e-12


@dataclass(frozen=True)
class InteractionReport:
    factors: tuple[str, ...]
    estimates: dict[str, float] = field(default_factory=dict)
    standard_errors: dict[str, float] = field(default_factory=dict)
    cis: dict[str, tuple[float, float]] = field(default_factory=dict)
    sections: dict[str, tuple[str, ...]] = field(default_factory=dict)
    qualitative: tuple[QualitativeContrast, ...] = ()
    qualitative_comparisons: int = 0
    flags: tuple[OrientationFlag, ...] = ()
    scale_relation: ScaleRelation | None = None
    notes: tuple[str, ...] = ()
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, (lower, upper) in self.cis.items():
            estimate = self.estimates.get(name)
            if estimate is None:
                raise NumericalError(f"Confidence interval for unknown estimate {name!r}.")
            slack = CI_SLACK * max(1.0, abs(estimate))
            if not lower - slack <= estimate <= upper + slack:
                raise NumericalError(
                    f"Interval ({lower}, {upper}) does not contain the estimate of {name}."
                )

    def section(self, key: str) -> tuple[str, ...]:
        return self.sections.get(key, ())


def tool_version() -> str:
    try:
        return importlib.metadata.version("multiway")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def input_digest(
    source: CoefficientTable | DataTable | RiskSurface,
    covariance: CovarianceBlock | None = None,
) -> str:
    digest = hashlib.sha256()
    if isinstance(source, CoefficientTable):
        payload = {
            "factors": list(source.factor_set.names),
            "orientation": list(source.factor_set.risk_orientation),
            "coefficients": source.labels(),
        }
        digest.update(json.dumps(payload, sort_keys=True).encode("utf-8"))
        if covariance is not None:
            digest.update(repr(covariance.terms).encode("utf-8"))
            digest.update(covariance.matrix.tobytes())
    elif isinstance(source, DataTable):
        digest.update(source.frame[source.columns()].to_csv(index=False).encode("utf-8"))
    else:
        digest.update("\0".join(source.factor_set.names).encode("utf-8"))
        digest.update(source.rr.tobytes())
    return digest.hexdigest()


def emit_report(report: InteractionReport, fmt: ReportFormat = "json") -> str:
    if fmt == "json":
        return json.dumps(_to_document(report), indent=2) + "\n"
    if fmt == "table":
        return _render_table(report)
    raise ParseError(f"Unknown report format {fmt!r}; use json or table.")


def parse_report(text: str) -> InteractionReport:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"Invalid report JSON: {exc}") from exc
    try:
        relation = document.get("scale_relation")
        return InteractionReport(
            factors=tuple(document["factors"]),
            estimates={k: float(v) for k, v in document["estimates"].items()},
            standard_errors={k: float(v) for k, v in document["standard_errors"].items()},
            cis={k: (float(v[0]), float(v[1])) for k, v in document["cis"].items()},
            sections={k: tuple(v) for k, v in document["sections"].items()},
            qualitative=tuple(
                QualitativeContrast(
                    factor=item["factor"],
                    context=tuple(item["context"]),
                    rr_with=float(item["rr_with"]),
                    rr_without=float(item["rr_without"]),
                )
                for item in document["qualitative"]
            ),
            qualitative_comparisons=int(document["qualitative_comparisons"]),
            flags=tuple(OrientationFlag(**item) for item in document["flags"]),
            scale_relation=(
                None
                if relation is None
                else ScaleRelation(
                    tot_i=float(relation["tot_i"]),
                    tot_reri=float(relation["tot_reri"]),
                    lower_bound=float(relation["lower_bound"]),
                    applicable=bool(relation["applicable"]),
                    violations=tuple(relation["violations"]),
                )
            ),
            notes=tuple(document["notes"]),
            provenance=dict(document["provenance"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"Report JSON does not match the report schema: {exc}") from exc


def _to_document(report: InteractionReport) -> dict[str, Any]:
    return {
        "factors": list(report.factors),
        "estimates": dict(report.estimates),
        "standard_errors": dict(report.standard_errors),
        "cis": {k: list(v) for k, v in report.cis.items()},
        "sections": {k: list(v) for k, v in report.sections.items()},
        "qualitative": [
            {**asdict(item), "context": list(item.context)} for item in report.qualitative
        ],
        "qualitative_comparisons": report.qualitative_comparisons,
        "flags": [asdict(flag) for flag in report.flags],
        "scale_relation": (
            None
            if report.scale_relation is None
            else {
                **asdict(report.scale_relation),
                "violations": list(report.scale_relation.violations),
            }
        ),
        "notes": list(report.notes),
        "provenance": dict(report.provenance),
    }


def _render_table(report: InteractionReport) -> str:
    buffer = io.StringIO()
    console = Console(file=buffer, width=110, no_color=True, highlight=False, emoji=False)

    coefficients = Table(title="Regression coefficients", box=box.SIMPLE_HEAD)
    for header in ("Term", "b", "se(b)", "HR", "95% CI for HR"):
        coefficients.add_column(header, justify="left" if header == "Term" else "right")
    hazard_names = report.section(SECTION_HAZARD_RATIOS)
    for name, hr_name in zip(report.section(SECTION_COEFFICIENTS), hazard_names):
        coefficients.add_row(
            Text(name),
            _fmt(report.estimates.get(name)),
            _fmt(report.standard_errors.get(name)),
            _fmt(report.estimates.get(hr_name)),
            _fmt_ci(report.cis.get(hr_name)),
        )
    console.print(coefficients)

    additive = Table(
        title="Relative excess risk due to interaction (RERI)", box=box.SIMPLE_HEAD
    )
    for header in ("Index", "RERI", "se(RERI)", "95% CI for RERI"):
        additive.add_column(header, justify="left" if header == "Index" else "right")
    for key in ADDITIVE_TABLE_ORDER:
        for name in report.section(key):
            additive.add_row(*_index_row(report, name))
    console.print(additive)

    multiplicative = Table(title="Multiplicative interaction", box=box.SIMPLE_HEAD)
    for header in ("Index", "Value", "se", "95% CI"):
        multiplicative.add_column(header, justify="left" if header == "Index" else "right")
    for name in report.section(SECTION_MULTIPLICATIVE):
        multiplicative.add_row(*_index_row(report, name))
    console.print(multiplicative)

    qualitative = Table(title="Qualitative interaction", box=box.SIMPLE_HEAD)
    for header in ("Factor", "Stratum", "RR with", "RR without"):
        qualitative.add_column(header, justify="left" if header in ("Factor", "Stratum") else "right")
    for item in report.qualitative:
        qualitative.add_row(
            Text(item.factor),
            Text(",".join(item.context) or "reference"),
            _fmt(item.rr_with),
            _fmt(item.rr_without),
        )
    console.print(qualitative)
    if report.qualitative_comparisons and not report.qualitative:
        console.print(
            f"No qualitative interaction ({report.qualitative_comparisons} comparisons).",
            markup=False,
        )

    flags = Table(title="Factor orientation", box=box.SIMPLE_HEAD)
    for header in ("Factor", "Orientation", "Ratio", "Mode", "Recoded"):
        flags.add_column(header)
    for flag in report.flags:
        flags.add_row(
            Text(flag.factor),
            "protective" if flag.protective else "risk",
            _fmt(flag.ratio),
            flag.mode,
            "yes" if flag.recoded else "no",
        )
    console.print(flags)

    if report.scale_relation is not None:
        relation = report.scale_relation
        if not relation.applicable:
            status = "not applicable (some singleton RR <= 1)"
        elif relation.consistent:
            status = "consistent"
        else:
            status = "VIOLATED: " + "; ".join(relation.violations)
        console.print(
            f"Scale relation: TotI={relation.tot_i:.2f}, TotRERI={relation.tot_reri:.2f}, "
            f"{status}",
            markup=False,
        )
    for note in report.notes:
        console.print(f"Note: {note}", markup=False)
    if report.provenance:
        details = ", ".join(f"{k}={v}" for k, v in report.provenance.items())
        console.print(f"Provenance: {details}", markup=False)
    return buffer.getvalue()


def _index_row(report: InteractionReport, name: str) -> tuple[Text, str, str, str]:
    return (
        Text(name),
        _fmt(report.estimates.get(name)),
        _fmt(report.standard_errors.get(name)),
        _fmt_ci(report.cis.get(name)),
    )


def _fmt(value: float | None) -> str:
    if value is None or not math.isfinite(value):
        return ""
    return f"{value:.2f}"


def _fmt_ci(interval: tuple[float, float] | None) -> str:
    if interval is None:
        return ""
    return f"{interval[0]:.2f} , {interval[1]:.2f}"
