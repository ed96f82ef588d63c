"""
Tables IO - Versioned JSON for solved policy tables
Floats are written with Python's shortest round-trip repr, so a reloaded table is bit-identical.
Infinite branch values (sampling without a right) are stored as null.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from errors import ConfigError, DomainError
from limited_policy import LimitedPolicyTable, PolicyGrid, ValueRow
from model import EnergyModel, pair_from_description
from quadrature import QuadratureConfig
from stochastic_policy import StochasticValueTable

_log = logging.getLogger(__name__)

TABLE_FORMAT = 1

Table = Union[LimitedPolicyTable, StochasticValueTable]


def _encode(array: np.ndarray) -> Any:
    return np.where(np.isinf(array), None, array.astype(object)).tolist()


def _decode(data: Any) -> np.ndarray:
    return np.array(data, dtype=float)


def _decode_branch(data: Any) -> np.ndarray:
    """null decodes to nan; those entries are the infeasible sampled branch"""
    values = _decode(data)
    return np.where(np.isnan(values), np.inf, values)


def _header(kind: str, table: Table) -> Dict[str, Any]:
    return {
        "format": TABLE_FORMAT,
        "kind": kind,
        "rho": table.rho,
        "c": table.c,
        "pair": table.pair.describe(),
        "grid_size": table.grid.resolution,
        "quadrature": table.quadrature.describe(),
    }


def table_to_dict(table: Table) -> Dict[str, Any]:
    if isinstance(table, LimitedPolicyTable):
        doc = _header("limited", table)
        doc["rows"] = [
            {"values": row.values.tolist(), "intervals": row.intervals.tolist(), "threshold": row.threshold}
            for row in table.rows
        ]
        return doc
    if isinstance(table, StochasticValueTable):
        doc = _header("stochastic", table)
        doc["energy"] = {"capacity": table.energy.capacity, "pmf": list(table.energy.pmf),
                         "initial": table.energy.initial}
        doc["iterations"] = table.iterations
        doc["achieved_tol"] = table.achieved_tol
        doc["v"] = table.v.tolist()
        doc["w_silent"] = _encode(table.w_silent)
        doc["w_sample"] = _encode(table.w_sample)
        return doc
    raise DomainError(f"cannot serialize {type(table).__name__}")


def table_from_dict(doc: Dict[str, Any]) -> Table:
    if doc.get("format") != TABLE_FORMAT:
        raise ConfigError(f"unsupported table format {doc.get('format')!r}, expected {TABLE_FORMAT}")
    try:
        common = {
            "rho": float(doc["rho"]),
            "c": float(doc["c"]),
            "pair": pair_from_description(doc["pair"]),
            "grid": PolicyGrid(int(doc["grid_size"])),
            "quadrature": QuadratureConfig(**doc["quadrature"]),
        }
        kind = doc["kind"]
        if kind == "limited":
            rows = [ValueRow(values=_decode(r["values"]), intervals=np.array(r["intervals"], dtype=int),
                             threshold=float(r["threshold"])) for r in doc["rows"]]
            return LimitedPolicyTable(rows=rows, **common)
        if kind == "stochastic":
            energy = doc["energy"]
            return StochasticValueTable(
                energy=EnergyModel(int(energy["capacity"]), tuple(energy["pmf"]), int(energy.get("initial", 0))),
                v=_decode(doc["v"]),
                w_silent=_decode(doc["w_silent"]),
                w_sample=_decode_branch(doc["w_sample"]),
                iterations=int(doc["iterations"]),
                achieved_tol=float(doc["achieved_tol"]),
                **common,
            )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed table document: {exc}") from exc
    raise ConfigError(f"unknown table kind {kind!r}")


def save_table(table: Table, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(table_to_dict(table), fh, allow_nan=False)
        fh.write("\n")
    _log.info("table written to %s", path)
    return path


def load_table(path: Union[str, Path]) -> Table:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"table file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"table file {path} is not valid JSON: {exc}") from exc
    return table_from_dict(doc)
