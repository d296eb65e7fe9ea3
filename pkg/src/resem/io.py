"""CSV ingestion and report writing.

A schema maps column roles to header names::

    {"y1": "y1", "y0": "y0",
     "sampling_covariates": ["w1"], "assignment_covariates": ["x1", "x2"],
     "population_covariates": ["w1"], "sample_covariates": ["x1", "x2", "x3"],
     "strata": "stratum", "clusters": "cluster", "outcome": "y"}

Every role is optional except where a loader needs it.  Row numbers in
error messages count the header as row 1.

JSON reports have the layout ``{"config": {...}, "population": {...},
"rows": [{column: value, ...}, ...]}`` with NaN written as ``null``.  CSV
reports hold the rows only; the config echo goes to a sibling file named
``<report>.config.json``.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .errors import DomainError
from .estimation import Experiment
from .population import BLOCKS, FinitePopulation

ROLES = ("y1", "y0", "outcome", *BLOCKS, "strata", "clusters")
_LIST_ROLES = set(BLOCKS)


class SchemaError(DomainError):
    """Input file does not match its declared schema."""


def _columns(schema: dict, role: str) -> list[str]:
    value = schema.get(role)
    if value is None:
        return []
    if role in _LIST_ROLES:
        if isinstance(value, str):
            return [value]
        return list(value)
    if not isinstance(value, str):
        raise SchemaError(f"role {role!r} takes a single column name")
    return [value]


def _check_schema(schema: dict) -> None:
    unknown = set(schema) - set(ROLES)
    if unknown:
        raise SchemaError(f"unknown schema roles {sorted(unknown)}; known roles are {ROLES}")


def read_columns(path, columns, blank_allowed=()) -> dict[str, np.ndarray]:
    """Parse the named columns of a headed CSV file as floats.

    Blank cells become NaN in ``blank_allowed`` columns and are errors
    elsewhere, as are non-numeric and non-finite cells.
    """
    columns = list(dict.fromkeys(columns))
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        missing = [name for name in columns if name not in header]
        if missing:
            raise SchemaError(f"{path} lacks columns {missing}")
        where = {name: header.index(name) for name in columns}
        values = {name: [] for name in columns}
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"row {row_number}: expected {len(header)} cells, found {len(row)}")
            for name, index in where.items():
                cell = row[index].strip()
                if not cell:
                    if name in blank_allowed:
                        values[name].append(math.nan)
                        continue
                    raise SchemaError(f"row {row_number}: missing value in column {name!r}")
                try:
                    number = float(cell)
                except ValueError:
                    raise SchemaError(f"row {row_number}: non-numeric value {cell!r} in column {name!r}") from None
                if not math.isfinite(number) and name not in blank_allowed:
                    raise SchemaError(f"row {row_number}: non-finite value {cell!r} in column {name!r}")
                values[name].append(number)
    return {name: np.array(column, dtype=float) for name, column in values.items()}


def _block(table, schema, role):
    names = _columns(schema, role)
    if not names:
        return None
    return np.column_stack([table[name] for name in names])


def _labels(table, schema, role):
    names = _columns(schema, role)
    if not names:
        return None
    labels = table[names[0]]
    as_int = labels.astype(np.int64)
    return as_int if np.array_equal(as_int, labels) else labels


def load_population(path, schema: dict) -> FinitePopulation:
    """Population from a CSV file with both potential outcomes."""
    _check_schema(schema)
    for role in ("y1", "y0"):
        if role not in schema:
            raise SchemaError(f"schema needs a {role!r} column")
    needed = [name for role in ROLES if role != "outcome" for name in _columns(schema, role)]
    table = read_columns(path, needed)
    return FinitePopulation(
        y1=table[schema["y1"]],
        y0=table[schema["y0"]],
        **{role: _block(table, schema, role) for role in BLOCKS},
        strata=_labels(table, schema, "strata"),
        clusters=_labels(table, schema, "clusters"),
    )


def load_covariates(path, schema: dict) -> FinitePopulation:
    """Covariate-only population (outcomes set to zero) for drawing a design."""
    _check_schema(schema)
    needed = [name for role in (*BLOCKS, "strata", "clusters") for name in _columns(schema, role)]
    table = read_columns(path, needed)
    size = _row_count(path)
    zeros = np.zeros(size)
    return FinitePopulation(
        y1=zeros,
        y0=zeros,
        **{role: _block(table, schema, role) for role in BLOCKS},
        strata=_labels(table, schema, "strata"),
        clusters=_labels(table, schema, "clusters"),
    )


def _row_count(path) -> int:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        return sum(1 for row in reader if row and any(cell.strip() for cell in row))


def load_experiment(path, schema: dict, realization) -> Experiment:
    """Observed experiment from a population-wide CSV and a realized design.

    The file has one row per population unit.  The ``outcome`` column must be
    filled for sampled units; cells of unsampled units may be blank.
    """
    _check_schema(schema)
    if "outcome" not in schema:
        raise SchemaError("schema needs an 'outcome' column")
    needed = [name for role in ("outcome", *BLOCKS) for name in _columns(schema, role)]
    table = read_columns(path, needed, blank_allowed={schema["outcome"]})
    outcome = table[schema["outcome"]]
    if outcome.size != realization.N:
        raise SchemaError(f"{path} has {outcome.size} rows but the design covers {realization.N} units")
    z = realization.sampled
    bad = np.flatnonzero(z & ~np.isfinite(outcome))
    if bad.size:
        raise SchemaError(f"row {int(bad[0]) + 2}: sampled unit has no outcome")
    blocks = {role: _block(table, schema, role) for role in BLOCKS}
    size = outcome.size

    def rows(role, subset):
        block = blocks[role]
        if block is None:
            return np.empty((int(subset.sum()) if subset is not None else size, 0))
        return block[subset] if subset is not None else block

    population_block = rows("population_covariates", None)
    return Experiment(
        outcomes=outcome[z],
        treated=realization.treated,
        population_size=size,
        sample_covariates=rows("sample_covariates", z),
        population_covariates=population_block[z],
        population_covariate_mean=population_block.mean(axis=0),
        sampling_covariates=rows("sampling_covariates", z),
        assignment_covariates=rows("assignment_covariates", z),
    )


_PREFIX = {
    "sampling_covariates": "w",
    "assignment_covariates": "x",
    "population_covariates": "e",
    "sample_covariates": "c",
}


def save_population(pop: FinitePopulation, path) -> dict:
    """Write ``pop`` as CSV with round-trip float formatting; returns the schema used."""
    schema: dict = {"y1": "y1", "y0": "y0"}
    header, columns = ["y1", "y0"], [pop.y1, pop.y0]
    for role in BLOCKS:
        block = getattr(pop, role)
        if block.shape[1]:
            names = [f"{_PREFIX[role]}{j + 1}" for j in range(block.shape[1])]
            schema[role] = names
            header += names
            columns += [block[:, j] for j in range(block.shape[1])]
    for role, name in (("strata", "stratum"), ("clusters", "cluster")):
        labels = getattr(pop, role)
        if labels is not None:
            schema[role] = name
            header.append(name)
            columns.append(np.asarray(labels, dtype=float))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(value)) for value in row])
    return schema


def _format(value) -> str:
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


def write_report(summary, path, fmt: str = "json", include_runtime: bool = False) -> None:
    """Write a :class:`~resem.simulation.ReplicationSummary` as CSV or JSON.

    Output is a pure function of the summary, so identical runs give
    byte-identical files; runtimes are left out unless requested.
    """
    from .simulation import ScenarioSummary

    if fmt not in ("csv", "json"):
        raise DomainError("report format must be 'csv' or 'json'")
    columns = list(ScenarioSummary.COLUMNS) + (["runtime_seconds"] if include_runtime else [])
    records = [row.record(include_runtime) for row in summary.rows]
    config = summary.config.to_dict()
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(columns)
                for record in records:
                    writer.writerow([_format(record[name]) for name in columns])
            with open(f"{os.fspath(path)}.config.json", "w") as handle:
                json.dump(_jsonable({"config": config, "population": summary.population}), handle, indent=2)
                handle.write("\n")
        else:
            payload = {"config": config, "population": summary.population, "rows": records}
            with open(path, "w") as handle:
                json.dump(_jsonable(payload), handle, indent=2)
                handle.write("\n")
    except OSError as exc:
        raise DomainError(f"cannot write report to {path}: {exc}") from exc


def read_report_csv(path) -> list[dict]:
    """Rows of a CSV report with numeric cells parsed back to numbers."""
    from .simulation import ScenarioSummary

    integers = {"n", "n1", "replicates"}
    text = {"scenario", "status"}
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    out = []
    for row in rows:
        parsed = {}
        for key, value in row.items():
            if key in text:
                parsed[key] = value
            elif key in integers:
                parsed[key] = int(value)
            else:
                parsed[key] = float(value)
        out.append(parsed)
    missing = set(ScenarioSummary.COLUMNS) - set(rows[0] if rows else ScenarioSummary.COLUMNS)
    if missing:
        raise SchemaError(f"{path} lacks report columns {sorted(missing)}")
    return out
