from __future__ import annotations

import io
import json
import math
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .errors import NumericalError, ParseError, UserError, VarianceError
from .lattice import surface_from_coefficients
from .model import (
    ORIENTATIONS,
    CoefficientTable,
    CovarianceBlock,
    DataTable,
    FactorSet,
    canonical_terms,
)
from .simulation import SimulationSpec, independent_prevalence, uniform_prevalence

BINARY_VALUES = {"0": 0, "1": 1}


def parse_coefficient_spec(
    text: str, *, allow_missing_terms: bool = False
) -> tuple[CoefficientTable, CovarianceBlock | None]:
    document = _load_json(text, "coefficient document")
    factor_set = _parse_factor_set(document)
    coeffs = _parse_coefficients(document, factor_set, allow_missing_terms)
    raw = document.get("covariance")
    covariance = None if raw is None else _covariance_from_document(raw, coeffs)
    return coeffs, covariance


def parse_covariance_spec(text: str, coeffs: CoefficientTable) -> CovarianceBlock:
    """Standalone covariance: a bare list of rows, or {"terms": [...], "covariance": [...]}."""
    try:
        document = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ParseError(f"Invalid JSON in covariance document: {exc}") from exc
    return _covariance_from_document(document, coeffs)


def _covariance_from_document(document: Any, coeffs: CoefficientTable) -> CovarianceBlock:
    # Bare rows follow the canonical term order (x1, x2, x1*x2, ...) whatever the
    # key order of the coefficient document; "terms" names any other order.
    order = list(coeffs.entries)
    if isinstance(document, dict):
        labels = document.get("terms")
        if labels is not None:
            if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
                raise ParseError("'terms' must be a list of term labels.")
            order = [coeffs.factor_set.parse_label(label) for label in labels]
            if len(set(order)) != len(order):
                raise ParseError("'terms' lists the same factor subset twice.")
        document = document.get("covariance")
        if document is None:
            raise ParseError("Covariance document has no 'covariance' rows.")
    return _parse_covariance(document, order)


def dump_coefficient_spec(
    coeffs: CoefficientTable, covariance: CovarianceBlock | None = None
) -> str:
    factor_set = coeffs.factor_set
    document: dict[str, Any] = {
        "factors": list(factor_set.names),
        "orientation": dict(zip(factor_set.names, factor_set.risk_orientation)),
        "saturated": coeffs.saturated,
        "coefficients": coeffs.labels(),
    }
    if covariance is not None:
        document["covariance"] = covariance.aligned(tuple(coeffs.entries)).tolist()
    return json.dumps(document, indent=2) + "\n"


def parse_data_table(
    text: str,
    factors: Sequence[str],
    outcome: str,
    confounders: Sequence[str] = (),
) -> DataTable:
    factor_set = FactorSet(tuple(factors))
    binary_columns = [*factor_set.names, outcome]
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            dtype={name: str for name in binary_columns},
            keep_default_na=False,
            float_precision="round_trip",
        )
    except pd.errors.EmptyDataError as exc:
        raise ParseError("Data table is empty.") from exc
    except (pd.errors.ParserError, ValueError) as exc:
        raise ParseError(f"Malformed data table: {exc}") from exc
    if outcome not in frame.columns:
        raise ParseError(f"Data table has no outcome column {outcome!r}.")
    for name in [*factor_set.names, *confounders]:
        if name not in frame.columns:
            raise ParseError(f"Data table has no column {name!r}.")
    if frame.empty:
        raise ParseError("Data table has a header but no rows.")
    for name in binary_columns:
        raw = frame[name].astype(str).str.strip()
        bad = ~raw.isin(list(BINARY_VALUES))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                f"Row {row + 1}, column {name!r}: value {raw.iloc[row]!r} is not 0 or 1."
            )
        frame[name] = raw.map(BINARY_VALUES).astype(np.int64)
    columns = [*binary_columns, *confounders]
    return DataTable(
        factor_set=factor_set,
        outcome=outcome,
        frame=frame[columns].reset_index(drop=True),
        confounders=tuple(confounders),
    )


def write_data_table(table: DataTable) -> str:
    return table.frame[table.columns()].to_csv(index=False, lineterminator="\n")


def parse_simulation_spec(text: str, *, seed: int | None = None) -> SimulationSpec:
    document = _load_json(text, "simulation document")
    factor_set = _parse_factor_set(document)
    coeffs = _parse_coefficients(document, factor_set, allow_missing_terms=True)
    try:
        truth = surface_from_coefficients(coeffs)
    except (UserError, NumericalError) as exc:
        raise ParseError(str(exc)) from exc
    prevalence = _parse_prevalence(document.get("prevalence"), factor_set)
    baseline = _number(document, "baseline_risk")
    size = document.get("size")
    if not isinstance(size, int) or isinstance(size, bool):
        raise ParseError("Simulation document needs an integer 'size'.")
    doc_seed = document.get("seed", 0)
    if not isinstance(doc_seed, int) or isinstance(doc_seed, bool):
        raise ParseError("'seed' must be an integer.")
    outcome = document.get("outcome", "outcome")
    if not isinstance(outcome, str) or not outcome:
        raise ParseError("'outcome' must be a non-empty column name.")
    try:
        return SimulationSpec(
            truth=truth,
            baseline_risk=baseline,
            size=size,
            prevalence=prevalence,
            seed=doc_seed if seed is None else seed,
            outcome=outcome,
        )
    except UserError as exc:
        raise ParseError(str(exc)) from exc


def _load_json(text: str, what: str) -> dict[str, Any]:
    try:
        document = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ParseError(f"Invalid JSON in {what}: {exc}") from exc
    if not isinstance(document, dict):
        raise ParseError(f"The {what} must be a JSON object.")
    return document


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise ParseError(f"Duplicate key {key!r}.")
        out[key] = value
    return out


def _parse_factor_set(document: dict[str, Any]) -> FactorSet:
    names = document.get("factors")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ParseError("'factors' must be a list of factor labels.")
    orientation_doc = document.get("orientation") or {}
    if not isinstance(orientation_doc, dict):
        raise ParseError("'orientation' must map factor labels to risk|protective|unknown.")
    for name, value in orientation_doc.items():
        if name not in names:
            raise ParseError(f"Unknown factor label {name!r} in orientation.")
        if value not in ORIENTATIONS:
            raise ParseError(f"Orientation of {name!r} must be one of {', '.join(ORIENTATIONS)}.")
    orientation = tuple(orientation_doc.get(name, "unknown") for name in names)
    try:
        return FactorSet(tuple(names), orientation)
    except UserError as exc:
        raise ParseError(str(exc)) from exc


def _parse_coefficients(
    document: dict[str, Any], factor_set: FactorSet, allow_missing_terms: bool
) -> CoefficientTable:
    raw = document.get("coefficients")
    if not isinstance(raw, dict) or not raw:
        raise ParseError("'coefficients' must map term labels to numbers.")
    entries: dict[int, float] = {}
    for label, value in raw.items():
        mask = factor_set.parse_label(label)
        if mask in entries:
            raise ParseError(
                f"Term {label!r} duplicates {factor_set.label(mask)!r} (same factor subset)."
            )
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"Coefficient for {label!r} must be a number.")
        if not math.isfinite(value):
            raise ParseError(f"Coefficient for {label!r} is not finite.")
        entries[mask] = float(value)
    saturated = document.get("saturated", True)
    if not isinstance(saturated, bool):
        raise ParseError("'saturated' must be true or false.")
    missing = [m for m in canonical_terms(factor_set.n) if m not in entries]
    if missing:
        labels = ", ".join(factor_set.label(m) for m in missing)
        if saturated:
            raise ParseError(
                f"Saturated model is missing terms: {labels}. "
                "Declare \"saturated\": false to treat them as zero."
            )
        if not allow_missing_terms:
            raise ParseError(
                f"Missing terms {labels} would default to 0; "
                "enable allow_missing_terms to accept that."
            )
    return CoefficientTable(factor_set, entries)


def _parse_covariance(raw: Any, order: list[int]) -> CovarianceBlock:
    if not isinstance(raw, list) or not all(isinstance(row, list) for row in raw):
        raise ParseError("'covariance' must be a list of rows.")
    if len(raw) != len(order) or any(len(row) != len(order) for row in raw):
        raise ParseError(
            f"Covariance must be {len(order)}x{len(order)}, in canonical term order "
            "unless 'terms' lists the rows."
        )
    try:
        matrix = np.array(raw, dtype=float)
        return CovarianceBlock(tuple(order), matrix)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"Covariance entries must be numbers: {exc}") from exc
    except VarianceError as exc:
        raise ParseError(f"Invalid covariance: {exc}") from exc


def _parse_prevalence(raw: Any, factor_set: FactorSet) -> np.ndarray:
    if raw is None:
        return uniform_prevalence(factor_set.n)
    if isinstance(raw, dict):
        unknown = set(raw) - set(factor_set.names)
        if unknown:
            raise ParseError(f"Unknown factor label(s) in prevalence: {', '.join(sorted(unknown))}")
        try:
            return independent_prevalence([float(raw.get(name, 0.5)) for name in factor_set.names])
        except (TypeError, ValueError, UserError) as exc:
            raise ParseError(f"Invalid factor prevalence: {exc}") from exc
    if isinstance(raw, list):
        if len(raw) != 1 << factor_set.n:
            raise ParseError(f"'prevalence' list needs {1 << factor_set.n} pattern entries.")
        try:
            return np.array(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"Invalid pattern prevalence: {exc}") from exc
    raise ParseError("'prevalence' must be a per-pattern list or a per-factor object.")


def _number(document: dict[str, Any], key: str) -> float:
    value = document.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"'{key}' must be a number.")
    return float(value)
