"""CSV ingestion with strict header validation.

Formats:
  probit      header ``y,v1,...,vM``; y binary, v real
  betabin     header ``n,y``; integer pairs with 0 <= y <= n
  sv          header ``y``; one real return per row

The canonical datasets (the city-level cancer mortality pairs and the
GBP/USD returns) are not shipped; callers supply them as CSV files and the
models fall back to simulated data otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataFormatError

__all__ = ["ProbitData", "BetaBinData", "SVData",
           "read_probit_csv", "read_betabin_csv", "read_sv_csv"]


@dataclass
class ProbitData:
    y: np.ndarray                 # (N,) in {0, 1}
    v: np.ndarray                 # (N, M) design
    true_x: np.ndarray | None = None

    def __post_init__(self):
        if self.v.ndim != 2 or self.y.shape[0] != self.v.shape[0]:
            raise DataFormatError("design matrix and labels disagree")
        if self.y.shape[0] < self.v.shape[1]:
            raise DataFormatError("need at least as many rows as features")
        if not np.all(np.isfinite(self.v)):
            raise DataFormatError("non-finite design entries")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise DataFormatError("labels must be binary")


@dataclass
class BetaBinData:
    n: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.n.shape != self.y.shape:
            raise DataFormatError("count vectors disagree")
        if np.any(self.y < 0) or np.any(self.y > self.n):
            raise DataFormatError("need 0 <= y <= n")


@dataclass
class SVData:
    y: np.ndarray

    def __post_init__(self):
        if self.y.shape[0] < 2 or not np.all(np.isfinite(self.y)):
            raise DataFormatError("need at least two finite returns")


def _read_rows(path: str | Path, expected_header: list[str] | None = None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if expected_header is not None and header != expected_header:
            raise DataFormatError(f"{path}: expected header {expected_header}, got {header}")
        rows = [row for row in reader if row]
    return header, rows


def read_probit_csv(path: str | Path) -> ProbitData:
    header, rows = _read_rows(path)
    if len(header) < 2 or header[0] != "y" or header[1:] != [f"v{i}" for i in range(1, len(header))]:
        raise DataFormatError(f"{path}: expected header y,v1,...,vM, got {header}")
    try:
        data = np.array([[float(c) for c in row] for row in rows])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric entry") from exc
    if data.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    return ProbitData(y=data[:, 0].astype(int), v=data[:, 1:])


def read_betabin_csv(path: str | Path) -> BetaBinData:
    _, rows = _read_rows(path, ["n", "y"])
    try:
        data = np.array([[int(c) for c in row] for row in rows])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-integer entry") from exc
    if data.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    return BetaBinData(n=data[:, 0], y=data[:, 1])


def read_sv_csv(path: str | Path) -> SVData:
    _, rows = _read_rows(path, ["y"])
    try:
        y = np.array([float(row[0]) for row in rows])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: non-numeric entry") from exc
    return SVData(y=y)
