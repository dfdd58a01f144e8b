"""Reading and writing the on-disk formats: JSONL corpora, gate sets, CSV tables.

Every writer goes through :func:`atomic_write`, so a crashed or interrupted
run never leaves a truncated file behind.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from collections.abc import Iterable, Mapping
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .circuits import (
    Circuit,
    GateSet,
    Sample,
    parse_circuit,
    parse_sample,
    serialize_circuit,
    serialize_sample,
)
from .metrics import CalibrationMatrix, CurveRow, DistanceReport, DistanceRow, ErrorRates


@contextmanager
def atomic_write(path: str | Path, mode: str = "w"):
    """Write to a temporary sibling file and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _lines(path: str | Path) -> Iterable[tuple[int, str]]:
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                yield n, line


# ---- circuits and samples ------------------------------------------------


def write_circuits(path: str | Path, circuits: Iterable[Circuit]) -> None:
    with atomic_write(path) as fh:
        for c in circuits:
            fh.write(serialize_circuit(c) + "\n")


def read_circuits(path: str | Path) -> list[Circuit]:
    out = []
    for n, line in _lines(path):
        try:
            out.append(parse_circuit(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


def write_samples(path: str | Path, samples: Iterable[Sample]) -> None:
    with atomic_write(path) as fh:
        for j, s in enumerate(samples):
            fh.write(serialize_sample(s, j) + "\n")


def read_samples(path: str | Path) -> list[Sample]:
    """Samples ordered by ``circuit_id`` (line order when ids are absent)."""
    pairs = []
    for n, line in _lines(path):
        try:
            cid, s = parse_sample(line)
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
        pairs.append((len(pairs) if cid is None else int(cid), s))
    ids = [cid for cid, _ in pairs]
    if sorted(ids) != list(range(len(ids))):
        raise ValueError(f"{path}: circuit ids are not a permutation of 0..{len(ids) - 1}")
    return [s for _, s in sorted(pairs, key=lambda x: x[0])]


# ---- gate sets -----------------------------------------------------------


def write_gateset(path: str | Path, g: GateSet, meta: Mapping | None = None) -> None:
    doc = g.to_dict()
    if meta is not None:
        doc["meta"] = dict(meta)
    with atomic_write(path) as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_gateset(path: str | Path) -> tuple[GateSet, dict]:
    """Gate set and its metadata block (empty if absent)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed JSON: {exc}") from exc
    try:
        return GateSet.from_dict(doc), dict(doc.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed gate set: {exc}") from exc


# ---- CSV tables ----------------------------------------------------------


def format_target(t) -> str:
    return f"({t[0]},{t[1]})" if isinstance(t, tuple) else str(t)


def parse_target(text: str):
    parts = [int(x) for x in text.strip().strip("()").replace("-", ",").split(",") if x.strip()]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return tuple(parts)
    raise ValueError(f"bad target {text!r}")


def _write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _read_csv(path: str | Path, header: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise ValueError(f"{path}: expected columns {header}, got {reader.fieldnames}")
        return list(reader)


CURVE_COLUMNS = ["i", "n_layers", "split", "mean_delta", "count"]
DISTANCE_COLUMNS = ["i", "label", "target", "metric", "value"]
RATE_COLUMNS = ["qubit", "metric", "value"]
LOSS_COLUMNS = ["i", "iteration", "loss"]


def write_curves(path, rows: Iterable[CurveRow]) -> None:
    _write_csv(path, CURVE_COLUMNS,
               ([r.i, r.n_layers, r.split, repr(r.mean_delta), r.count] for r in rows))


def read_curves(path) -> list[CurveRow]:
    return [CurveRow(int(r["i"]), int(r["n_layers"]), r["split"], float(r["mean_delta"]), int(r["count"]))
            for r in _read_csv(path, CURVE_COLUMNS)]


def write_distances(path, report: DistanceReport) -> None:
    _write_csv(path, DISTANCE_COLUMNS,
               ([r.i, r.label, format_target(r.target), r.metric, repr(r.value)] for r in report.rows))


def read_distances(path) -> DistanceReport:
    return DistanceReport(
        DistanceRow(int(r["i"]), r["label"], parse_target(r["target"]), r["metric"], float(r["value"]))
        for r in _read_csv(path, DISTANCE_COLUMNS)
    )


def write_rates(path, rates: ErrorRates) -> None:
    _write_csv(path, RATE_COLUMNS, ([q, name, repr(v)] for q, name, v in rates.rows()))


def read_rates(path) -> ErrorRates:
    rates = ErrorRates()
    for r in _read_csv(path, RATE_COLUMNS):
        getattr(rates, r["metric"])[int(r["qubit"])] = float(r["value"])
    return rates


def write_calibration(path, cm: CalibrationMatrix) -> None:
    _write_csv(path, cm.labels, ([repr(float(x)) for x in row] for row in cm.matrix))


def read_calibration(path) -> CalibrationMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = len(header[0])
    if header != [format(x, f"0{n}b") for x in range(2**n)]:
        raise ValueError(f"{path}: header is not the ordered list of {n}-bit strings")
    return CalibrationMatrix(np.array([[float(x) for x in r] for r in body]), n)


def write_loss_trace(path, traces: Mapping[int, list[float]]) -> None:
    _write_csv(path, LOSS_COLUMNS,
               ([i, k, repr(float(v))] for i in sorted(traces) for k, v in enumerate(traces[i], 1)))


def read_loss_trace(path) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for r in _read_csv(path, LOSS_COLUMNS):
        out.setdefault(int(r["i"]), []).append(float(r["loss"]))
    return out

