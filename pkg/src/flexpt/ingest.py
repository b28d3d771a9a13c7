"""CSV ingestion and margin-wise scaling onto the unit cube (0,1]^d.

Two scaling modes: ``affine`` maps each column by its observed range with a
small epsilon so the minimum lands strictly inside (0,1], and ``rank`` maps
to average-rank quantiles (rank - 0.5)/n.  The fitted metadata is retained
so cuts and node boxes can be reported in original units and new points can
be mapped consistently; mode ``none`` passes data through and only checks
the domain.  Two-group data is always scaled on the pooled sample so both
groups share one partition space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class IngestError(ValueError):
    pass


@dataclass
class ScalingInfo:
    mode: str
    n_rows: int
    columns: list[str]
    lo: np.ndarray | None = None
    ranges: np.ndarray | None = None
    eps: np.ndarray | None = None
    sorted_values: list[np.ndarray] | None = None

    def transform(self, X: np.ndarray) -> tuple[np.ndarray, int]:
        """Map points with the fitted scaling; returns (scaled, n_clamped).

        Points outside the training range are clamped into (0,1] and
        counted, so callers can flag extrapolated test points.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.mode == "none":
            out = X.copy()
        elif self.mode == "affine":
            out = (X - self.lo + self.eps) / (self.ranges + self.eps)
        else:
            out = np.empty_like(X)
            n = self.n_rows
            for j, col in enumerate(self.sorted_values):
                left = np.searchsorted(col, X[:, j], side="left")
                right = np.searchsorted(col, X[:, j], side="right")
                out[:, j] = (left + right) / (2.0 * n)
        floor = 0.5 / max(self.n_rows, 1) if self.mode == "rank" else 1e-12
        clipped = np.clip(out, floor, 1.0)
        n_clamped = int(np.sum((out <= 0.0) | (out > 1.0)))
        return clipped, n_clamped

    def inverse(self, col: int, values) -> np.ndarray:
        """Map scaled coordinates of one column back to original units."""
        values = np.asarray(values, dtype=float)
        if self.mode == "none":
            return values.copy()
        if self.mode == "affine":
            return values * (self.ranges[col] + self.eps[col]) + self.lo[col] - self.eps[col]
        srt = self.sorted_values[col]
        pos = np.clip(values * self.n_rows - 0.5, 0, len(srt) - 1)
        return np.interp(pos, np.arange(len(srt)), srt)

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "n_rows": self.n_rows, "columns": self.columns}
        if self.mode == "affine":
            out["lo"] = [float(x) for x in self.lo]
            out["ranges"] = [float(x) for x in self.ranges]
            out["eps"] = [float(x) for x in self.eps]
        elif self.mode == "rank":
            out["sorted_values"] = [[float(x) for x in col] for col in self.sorted_values]
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ScalingInfo":
        info = cls(payload["mode"], int(payload["n_rows"]), list(payload["columns"]))
        if info.mode == "affine":
            info.lo = np.array(payload["lo"])
            info.ranges = np.array(payload["ranges"])
            info.eps = np.array(payload["eps"])
        elif info.mode == "rank":
            info.sorted_values = [np.array(col) for col in payload["sorted_values"]]
        return info


def fit_scaling(X: np.ndarray, mode: str, columns: list[str] | None = None) -> ScalingInfo:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if n < 2:
        raise IngestError("need at least 2 rows")
    columns = columns or [f"x{j + 1}" for j in range(d)]
    if mode == "none":
        if X.min() <= 0.0 or X.max() > 1.0:
            raise IngestError("scaling 'none' requires data already in (0,1]")
        return ScalingInfo("none", n, columns)
    if mode == "affine":
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        ranges = hi - lo
        if np.any(ranges <= 0.0):
            bad = columns[int(np.argmax(ranges <= 0.0))]
            raise IngestError(
                f"column {bad!r} is constant; affine scaling is undefined, use --scaling rank"
            )
        return ScalingInfo("affine", n, columns, lo=lo, ranges=ranges, eps=1e-9 * ranges)
    if mode == "rank":
        return ScalingInfo(
            "rank", n, columns, sorted_values=[np.sort(X[:, j]) for j in range(d)]
        )
    raise IngestError(f"unknown scaling mode {mode!r}")


def scale_training(X: np.ndarray, mode: str, columns=None) -> tuple[np.ndarray, ScalingInfo]:
    """Fit the scaling on X and return the scaled training matrix.

    In rank mode the training points get their exact average ranks (ties
    share the mean rank), which the searchsorted transform reproduces.
    """
    info = fit_scaling(X, mode, columns)
    if mode == "rank":
        scaled = np.column_stack(
            [(rankdata(X[:, j], method="average") - 0.5) / len(X) for j in range(X.shape[1])]
        )
        return scaled, info
    scaled, _ = info.transform(X)
    return scaled, info


def load_table(path, group_column: str | int | None = None):
    """Read a numeric CSV; returns (matrix, group labels or None, columns).

    The header row is optional and detected by trying to parse the first
    row as numbers.  Any other non-numeric cell is an error.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise IngestError(f"{path}: empty file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise IngestError(f"{path}: ragged rows")

    def parse_row(row):
        out = []
        for cell in row:
            out.append(float(cell))
        return out

    header = None
    try:
        parse_row(rows[0])
        body = rows
    except ValueError:
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
    if group_column is not None:
        if isinstance(group_column, str):
            if header is None or group_column not in header:
                raise IngestError(f"group column {group_column!r} not found in header")
            gidx = header.index(group_column)
        else:
            gidx = int(group_column)
            if not 0 <= gidx < width:
                raise IngestError(f"group column index {gidx} out of range")
    else:
        gidx = None
    data = []
    groups = []
    for i, row in enumerate(body):
        cells = list(row)
        if gidx is not None:
            groups.append(cells.pop(gidx).strip())
        try:
            data.append([float(c) for c in cells])
        except ValueError as exc:
            raise IngestError(f"{path}: non-numeric cell in data row {i + 1}: {exc}") from None
    if len(data) < 2:
        raise IngestError(f"{path}: fewer than 2 data rows")
    columns = None
    if header is not None:
        columns = [h for k, h in enumerate(header) if k != gidx]
    matrix = np.asarray(data, dtype=float)
    return matrix, (groups if gidx is not None else None), columns


def ingest_single(path, scaling: str = "affine"):
    """One-group ingestion; returns (scaled matrix, ScalingInfo)."""
    X, _, columns = load_table(path)
    return scale_training(X, scaling, columns)


def ingest_twosample(
    paths,
    scaling: str = "affine",
    group_column: str | int | None = None,
):
    """Two-group ingestion from two files or one file with a label column.

    Scaling is fitted on the pooled rows so both groups live on the same
    unit cube; returns (scaled group 1, scaled group 2, ScalingInfo).
    """
    if isinstance(paths, (list, tuple)) and len(paths) == 2:
        X1, _, cols1 = load_table(paths[0])
        X2, _, cols2 = load_table(paths[1])
        if X1.shape[1] != X2.shape[1]:
            raise IngestError("the two files have different numbers of columns")
        pooled = np.vstack([X1, X2])
        scaled, info = scale_training(pooled, scaling, cols1 or cols2)
        return scaled[: len(X1)], scaled[len(X1) :], info
    path = paths[0] if isinstance(paths, (list, tuple)) else paths
    if group_column is None:
        raise IngestError("two-sample ingestion needs two files or a group column")
    X, labels, columns = load_table(path, group_column=group_column)
    uniq = sorted(set(labels))
    if len(uniq) != 2:
        raise IngestError(f"group column must have exactly 2 labels, found {uniq}")
    scaled, info = scale_training(X, scaling, columns)
    mask = np.array([lab == uniq[0] for lab in labels])
    return scaled[mask], scaled[~mask], info
