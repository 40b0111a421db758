"""Readers and writers for supports, overlap tables, data, draws,
predictions and metric reports.

Floats are written with ``%.17g`` so that files round-trip exactly and
identical inputs give byte-identical outputs.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .evaluate import MetricReport
from .model import Dataset
from .predict import PredictionResult
from .sampler import PosteriorDraws
from .supports import ArealSupport, OverlapTable

OVERLAP_HEADER = ["fine_id", "coarse_id", "overlap_area"]
DATA_HEADER = ["unit_id", "value"]
TRUTH_HEADER = ["unit_id", "variable", "value"]
PREDICTION_HEADER = ["unit_id", "variable", "mean", "sd", "lo95", "hi95"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else "%.17g" % x
    return str(x)


def parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InvalidArgument(f"{where}: {text!r} is not a number") from None
    return value


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path, header) -> list[list[str]]:
    """Rows of a CSV whose header must equal ``header`` exactly."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != list(header):
        raise InvalidArgument(f"{path}: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InvalidArgument(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append([c.strip() for c in row])
    return out


# -- supports -----------------------------------------------------------------

def support_to_json(support: ArealSupport) -> dict:
    units = []
    for i, u in enumerate(support.ids):
        unit = {"id": u, "area": float(support.areas[i]),
                "centroid": [float(c) for c in support.centroids[i]]}
        if support.rectangles is not None:
            unit["rect"] = [float(c) for c in support.rectangles[i]]
        units.append(unit)
    return {"units": units, "edges": [list(e) for e in support.edges()]}


def write_support(path, support: ArealSupport) -> None:
    with open(path, "w") as fh:
        json.dump(support_to_json(support), fh, indent=1)
        fh.write("\n")


def read_support(path) -> ArealSupport:
    """Support JSON: ``{"units": [{"id", "area", "centroid"}], "edges": [[a, b]]}``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("units"), list):
        raise InvalidArgument(f"{path}: expected an object with a 'units' list")
    units = doc["units"]
    try:
        ids = [str(u["id"]) for u in units]
        areas = [float(u["area"]) for u in units]
        cents = [[float(c) for c in u["centroid"]] for u in units]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"{path}: malformed unit entry ({exc})") from None
    if any(len(c) != 2 for c in cents):
        raise InvalidArgument(f"{path}: every centroid needs two coordinates")
    rects = None
    if units and all("rect" in u for u in units):
        rects = np.array([[float(c) for c in u["rect"]] for u in units])
    index = {u: i for i, u in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=bool)
    for e in doc.get("edges", []):
        if not isinstance(e, list) or len(e) != 2:
            raise InvalidArgument(f"{path}: edge {e!r} must be a pair of ids")
        try:
            a, b = index[str(e[0])], index[str(e[1])]
        except KeyError as exc:
            raise InvalidArgument(f"{path}: edge references unknown unit {exc}") from None
        if a == b:
            raise InvalidArgument(f"{path}: self-loop on unit {e[0]!r}")
        adj[a, b] = adj[b, a] = True
    return ArealSupport(ids, np.array(areas), np.array(cents).reshape(-1, 2), adj, rectangles=rects)


def write_overlaps(path, table: OverlapTable) -> None:
    write_csv(path, OVERLAP_HEADER, table.rows())


def read_overlaps(path) -> OverlapTable:
    rows = read_csv(path, OVERLAP_HEADER)
    return OverlapTable.from_rows(
        (f, c, parse_float(a, f"{path}: overlap_area")) for f, c, a in rows)


# -- data ---------------------------------------------------------------------

def write_data(path, support: ArealSupport, values) -> None:
    write_csv(path, DATA_HEADER, zip(support.ids, np.asarray(values, dtype=float)))


def read_data(path, support: ArealSupport) -> np.ndarray:
    """Values in support order; every unit must appear exactly once."""
    rows = read_csv(path, DATA_HEADER)
    y = np.full(support.n, np.nan)
    seen = np.zeros(support.n, dtype=bool)
    for uid, val in rows:
        try:
            i = support.index(uid)
        except InvalidArgument:
            raise InvalidArgument(f"{path}: unit {uid!r} is not in the support") from None
        if seen[i]:
            raise InvalidArgument(f"{path}: unit {uid!r} appears twice")
        seen[i] = True
        y[i] = np.nan if val == "" else parse_float(val, f"{path}: unit {uid}")
    if not seen.all():
        raise InvalidArgument(f"{path}: {int((~seen).sum())} of {support.n} support units "
                              f"have no row (first: {support.ids[int(np.argmin(seen))]!r})")
    return y


def read_dataset(path1: Optional[str], path2: Optional[str],
                 support1: Optional[ArealSupport], support2: Optional[ArealSupport]) -> Dataset:
    y1 = read_data(path1, support1) if path1 else None
    y2 = read_data(path2, support2) if path2 else None
    return Dataset(y1, y2)


def write_truth(path, unit_ids, surfaces: dict) -> None:
    write_csv(path, TRUTH_HEADER,
              ((u, k, v) for k in sorted(surfaces) for u, v in zip(unit_ids, surfaces[k])))


def read_truth(path) -> dict:
    """``{variable: {unit_id: value}}`` from a truth or prediction file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="") as fh:
        first = next(csv.reader(fh), [])
    header = PREDICTION_HEADER if [h.strip() for h in first] == PREDICTION_HEADER else TRUTH_HEADER
    out: dict = {}
    for row in read_csv(path, header):
        uid, var, val = row[0], row[1], row[2]
        try:
            k = int(var)
        except ValueError:
            raise InvalidArgument(f"{path}: variable {var!r} is not an integer") from None
        values = out.setdefault(k, {})
        if uid in values:
            raise InvalidArgument(f"{path}: unit {uid!r} appears twice for variable {k}")
        values[uid] = np.nan if val == "" else parse_float(val, f"{path}: unit {uid}")
    return out


# -- draws and predictions ----------------------------------------------------

def write_draws(path, chains: list[PosteriorDraws]) -> None:
    names = None
    rows = []
    for d in chains:
        cols, mat = d.columns()
        if names is None:
            names = cols
        elif cols != names:
            raise InvalidArgument("chains have different parameters")
        for i, row in enumerate(mat):
            rows.append([d.chain, i] + row.tolist())
    write_csv(path, ["chain", "draw"] + names, rows)


def read_draws(path, kind: str, variables) -> list[PosteriorDraws]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[:2] != ["chain", "draw"]:
        raise InvalidArgument(f"{path}: not a draws file")
    rows = read_csv(path, header)
    if not rows:
        raise InvalidArgument(f"{path}: no draws")
    mat = np.array([[parse_float(c, str(path)) for c in r] for r in rows])
    out = []
    for c in np.unique(mat[:, 0]):
        sub = mat[mat[:, 0] == c]
        out.append(PosteriorDraws.from_columns(kind, variables, header[2:], sub[:, 2:],
                                               chain=int(c)))
    return out


def write_predictions(path, result: PredictionResult) -> None:
    write_csv(path, PREDICTION_HEADER, result.rows())


# -- metrics --------------------------------------------------------------------

def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _clean(node):
    if isinstance(node, dict):
        return {str(k): _clean(v) for k, v in node.items()}
    if isinstance(node, float) and not math.isfinite(node):
        return str(node)
    return node


def write_report(json_path, csv_path, report: MetricReport) -> None:
    with open(json_path, "w") as fh:
        json.dump(_clean(report.to_dict()), fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    write_csv(csv_path, ["key", "value"], sorted(report.flatten().items()))


def read_report_csv(path) -> MetricReport:
    flat = {}
    for key, val in read_csv(path, ["key", "value"]):
        try:
            flat[key] = float(val) if val not in ("true", "false") else val == "true"
        except ValueError:
            flat[key] = val
    return MetricReport.unflatten(flat)
