"""Readers and writers for network configs and hourly CSV series.

Series files are either ``step,value`` (one series per file) or the wide
per-region form ``step,P_L,P_U,P_PV``. Column names are fixed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from .errors import DataError
from .grid import BidBlock, Generator, Line, NetworkModel, Region

SERIES_HEADER = ["step", "value"]
WIDE_HEADER = ["step", "P_L", "P_U", "P_PV"]
UNIT_SCALE = {"MW": 1.0, "MWh": 1.0, "GW": 1000.0, "GWh": 1000.0}


def unit_scale(units: str) -> float:
    try:
        return UNIT_SCALE[units]
    except KeyError:
        raise DataError(f"unknown unit {units!r}; expected one of {sorted(UNIT_SCALE)}") from None


def _read_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        got = [c.strip() for c in got]
        if got != header:
            raise DataError(f"{path}: header {','.join(got)!r}, expected {','.join(header)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if values[0] != len(rows):
                raise DataError(f"{path}:{lineno}: column 'step' is {row[0]}, expected {len(rows)}")
            rows.append(values[1:])
    return np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def _check(path, arr, expected_len, allow_negative):
    if expected_len is not None and len(arr) != expected_len:
        raise DataError(f"{path}: length mismatch, got {len(arr)} rows, expected {expected_len}")
    if not allow_negative and np.any(arr < 0):
        lineno = int(np.flatnonzero(np.any(arr.reshape(len(arr), -1) < 0, axis=1))[0]) + 2
        raise DataError(f"{path}:{lineno}: negative value")


def read_series(path, expected_len=None, scale=1.0, allow_negative=False) -> np.ndarray:
    arr = _read_rows(path, SERIES_HEADER)[:, 0]
    _check(path, arr, expected_len, allow_negative)
    return arr * scale


def read_wide(path, expected_len=None, scale=1.0) -> dict[str, np.ndarray]:
    arr = _read_rows(path, WIDE_HEADER)
    _check(path, arr, expected_len, False)
    return {name: arr[:, i] * scale for i, name in enumerate(WIDE_HEADER[1:])}


def write_series(path, values, fmt="{:.6f}") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for t, v in enumerate(values):
            w.writerow([t, fmt.format(v)])


def read_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a mapping at top level")
    return data


def generator_from_dict(d: dict, scale: float = 1.0) -> Generator:
    try:
        p_max = float(d["p_max"]) * scale
        kind = d.get("kind", "coal")
        p_min = float(d.get("p_min", 0.0)) * scale
        if "blocks" in d:
            blocks = tuple(BidBlock(float(b["price"]), float(b["capacity"]) * scale) for b in d["blocks"])
            return Generator(d["id"], d["region"], p_max, blocks, kind, p_min)
        prices = d.get("prices", [0.0])
        return Generator.from_prices(d["id"], d["region"], p_max, prices, kind, p_min=p_min)
    except KeyError as exc:
        raise DataError(f"generator entry missing field {exc}") from None


def network_from_dict(data: dict) -> NetworkModel:
    scale = unit_scale(data.get("units", "MW"))
    try:
        regions = [Region(r["id"], r.get("name", r["id"])) for r in data["regions"]]
        lines = [
            Line(
                ln["from"],
                ln["to"],
                float(ln["susceptance"]),
                float(ln.get("flow_min", -np.inf)) * scale,
                float(ln.get("flow_max", np.inf)) * scale,
            )
            for ln in data.get("lines", [])
        ]
    except KeyError as exc:
        raise DataError(f"network entry missing field {exc}") from None
    gens = [generator_from_dict(g, scale) for g in data.get("generators", [])]
    return NetworkModel(
        regions=regions,
        lines=lines,
        generators=gens,
        reference_region=data.get("reference_region", ""),
        base_mva=float(data.get("base_mva", 100.0)),
    )


def load_network(path) -> NetworkModel:
    return network_from_dict(read_yaml(path))
