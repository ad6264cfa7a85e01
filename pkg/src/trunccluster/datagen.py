"""BIRCH-style grid data and numeric matrix files."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, InvalidArgument

BIRCH_SPACING = 4.0 * math.sqrt(2.0)


class MatrixParseError(ValueError):
    """A matrix file is ragged, non-numeric or non-finite at (row, column)."""

    def __init__(self, message: str, row: int, column: int | None = None):
        where = f"row {row}" if column is None else f"row {row}, column {column}"
        super().__init__(f"{where}: {message}")
        self.row = row
        self.column = column


@dataclass(frozen=True)
class BirchSpec:
    grid_side: int = 5
    samples_per_cluster: int = 100
    cluster_sigma_sq: float = 1.0
    spacing: float = BIRCH_SPACING
    rng_seed: int = 0

    def __post_init__(self):
        if self.grid_side < 1:
            raise InvalidArgument(f"grid_side must be >= 1, got {self.grid_side}")
        if self.samples_per_cluster < 1:
            raise InvalidArgument("samples_per_cluster must be >= 1")
        if not self.cluster_sigma_sq > 0 or not self.spacing > 0:
            raise InvalidArgument("cluster_sigma_sq and spacing must be positive")

    @property
    def n_clusters(self) -> int:
        return self.grid_side ** 2

    @property
    def n_points(self) -> int:
        return self.n_clusters * self.samples_per_cluster

    def to_dict(self) -> dict:
        return asdict(self)


def birch_centers(side: int, spacing: float) -> np.ndarray:
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return np.stack([i.ravel() * spacing, j.ravel() * spacing], axis=1).astype(np.float64)


def generate_birch(spec: BirchSpec) -> tuple[Dataset, np.ndarray]:
    """Isotropic Gaussians on a side x side grid; points are grouped by cluster.

    Each cluster draws from its own PCG64 substream spawned from the master
    seed (numpy's ziggurat normal sampler), so output is bit-reproducible.
    """
    centers = birch_centers(spec.grid_side, spec.spacing)
    streams = np.random.SeedSequence(spec.rng_seed).spawn(spec.n_clusters)
    scale = math.sqrt(spec.cluster_sigma_sq)
    k = spec.samples_per_cluster
    points = np.empty((spec.n_points, 2))
    for idx, (center, ss) in enumerate(zip(centers, streams)):
        rng = np.random.default_rng(ss)
        points[idx * k:(idx + 1) * k] = center + scale * rng.standard_normal((k, 2))
    return Dataset(points), centers


def _parse_rows(lines: list[list[str]]) -> np.ndarray:
    width = None
    out = []
    for r, fields in enumerate(lines, start=1):
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise MatrixParseError(f"expected {width} fields, found {len(fields)}", r)
        row = []
        for col, field in enumerate(fields, start=1):
            try:
                v = float(field)
            except ValueError:
                raise MatrixParseError(f"non-numeric field {field!r}", r, col) from None
            if not math.isfinite(v):
                raise MatrixParseError(f"non-finite value {field!r}", r, col)
            row.append(v)
        out.append(row)
    if not out:
        raise MatrixParseError("no data rows", 1)
    return np.array(out, dtype=np.float64)


def _is_numeric_row(fields: list[str]) -> bool:
    try:
        [float(f) for f in fields]
    except ValueError:
        return False
    return True


def load_matrix(path, fmt: str = "csv") -> Dataset:
    """Read an N x D numeric matrix.

    ``csv``: comma-separated, '.' decimal, a non-numeric first row is a header.
    ``whitespace``: one point per line. Row numbers in errors are 1-based data
    rows (the header, if any, is not counted).
    """
    text = Path(path).read_text()
    if fmt == "csv":
        rows = [r for r in csv.reader(text.splitlines()) if r and any(f.strip() for f in r)]
        rows = [[f.strip() for f in r] for r in rows]
    elif fmt == "whitespace":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    else:
        raise InvalidArgument(f"unknown matrix format {fmt!r}")
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]
    return Dataset(_parse_rows(rows))


def write_matrix(path, points: np.ndarray) -> None:
    """Write points as CSV with round-trip precision."""
    with open(path, "w", newline="") as fh:
        for row in np.asarray(points, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def standardize(data: Dataset) -> Dataset:
    """Per-dimension z-scoring; constant dimensions are only centered."""
    y = data.points
    sd = y.std(axis=0)
    sd[sd == 0] = 1.0
    return Dataset((y - y.mean(axis=0)) / sd)
