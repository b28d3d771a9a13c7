"""Axis-aligned boxes on the unit cube, split decisions, and point counting.

The sample space is the half-open unit cube (0,1]^d.  Every tree node is a
box of the form (a_1,b_1] x ... x (a_d,b_d]; membership is strictly greater
than the lower bound and less than or equal to the upper bound in every
coordinate.  Ties at a cut therefore go to the LEFT child, which keeps
counting deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Decision:
    """A split choice: cut dimension, grid location and optional refix flag.

    ``loc`` indexes the uniform grid: the cut sits at relative position
    ``loc / n_grid`` inside the node, with ``1 <= loc <= n_grid - 1``.
    ``refix=True`` marks a spike draw, which forces the midpoint.
    """

    dim: int
    loc: int
    n_grid: int
    refix: bool = False

    def __post_init__(self):
        if not 0 < self.loc < self.n_grid:
            raise GeometryError(f"loc {self.loc} outside 1..{self.n_grid - 1}")
        if self.refix and 2 * self.loc != self.n_grid:
            raise GeometryError("refixed decisions must cut at the midpoint")

    @property
    def frac(self) -> float:
        """Relative volume of the left child."""
        return self.loc / self.n_grid


@dataclass(frozen=True)
class Hyperrectangle:
    """Box (lower_1, upper_1] x ... x (lower_d, upper_d] inside (0,1]^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise GeometryError("bounds must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise GeometryError("degenerate rectangle: lower must be < upper")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.upper - self.lower)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership mask for an (n, d) array of points."""
        points = np.atleast_2d(points)
        return np.all((points > self.lower) & (points <= self.upper), axis=1)


def unit_cube(dim: int) -> Hyperrectangle:
    return Hyperrectangle(np.zeros(dim), np.ones(dim))


_REL_GRID_CACHE: dict[int, np.ndarray] = {}


def relative_grid(n_grid: int) -> np.ndarray:
    """The candidate relative cut positions l/n_grid, l = 1..n_grid-1."""
    rel = _REL_GRID_CACHE.get(n_grid)
    if rel is None:
        rel = np.arange(1, n_grid) / n_grid
        rel.setflags(write=False)
        _REL_GRID_CACHE[n_grid] = rel
    return rel


def grid_cuts(lower: np.ndarray, upper: np.ndarray, n_grid: int) -> np.ndarray:
    """Cut coordinates for every (dimension, grid location) pair.

    Returns a (d, n_grid - 1) array whose [j, l-1] entry is the cut for
    ``Decision(j, l, n_grid)``.  All cut computations in the package go
    through this single expression so that float comparisons agree exactly
    everywhere.
    """
    rel = relative_grid(n_grid)
    width = upper - lower
    return lower[:, None] + rel[None, :] * width[:, None]


def cut_point(rect: Hyperrectangle, dec: Decision) -> float:
    if not 0 <= dec.dim < rect.dim:
        raise GeometryError(f"invalid dimension index {dec.dim}")
    return float(grid_cuts(rect.lower, rect.upper, dec.n_grid)[dec.dim, dec.loc - 1])


def split(rect: Hyperrectangle, dec: Decision) -> tuple[Hyperrectangle, Hyperrectangle]:
    """Split a box at the decision's cut; returns (left, right) children.

    The children partition the parent under the (.,.] membership rule and
    their volumes are in proportion loc/n_grid : 1 - loc/n_grid.
    """
    cut = cut_point(rect, dec)
    if not rect.lower[dec.dim] < cut < rect.upper[dec.dim]:
        raise GeometryError("cut does not fall strictly inside the rectangle")
    left_upper = rect.upper.copy()
    left_upper[dec.dim] = cut
    right_lower = rect.lower.copy()
    right_lower[dec.dim] = cut
    return (
        Hyperrectangle(rect.lower, left_upper),
        Hyperrectangle(right_lower, rect.upper),
    )


class GroupedDataset:
    """One or more groups of points inside (0,1]^d.

    Each group is an (n_g, d) float array.  Groups share the sample space;
    node membership and counting are always per group.
    """

    def __init__(self, groups):
        if len(groups) < 1:
            raise GeometryError("need at least one group")
        arrays = []
        for g in groups:
            arr = np.ascontiguousarray(g, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            if arr.ndim != 2:
                raise GeometryError("each group must be an (n, d) array")
            arrays.append(arr)
        self.groups = arrays
        self._transposed: list[np.ndarray | None] = [None] * len(arrays)
        dims = {g.shape[1] for g in self.groups}
        if len(dims) != 1:
            raise GeometryError("all groups must share the same dimension")
        (self.dim,) = dims
        for g in self.groups:
            if g.size and (g.min() <= 0.0 or g.max() > 1.0):
                raise GeometryError("coordinates must lie in (0,1]")

    @classmethod
    def single(cls, points: np.ndarray) -> "GroupedDataset":
        return cls([points])

    def transposed(self, g: int) -> np.ndarray:
        """Cached (d, n_g) transposed copy of one group, for column gathers."""
        if self._transposed[g] is None:
            self._transposed[g] = np.ascontiguousarray(self.groups[g].T)
        return self._transposed[g]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def total(self) -> int:
        return sum(self.sizes)


def count_in(rect: Hyperrectangle, data: GroupedDataset) -> np.ndarray:
    """Per-group number of points inside a box (left-open, right-closed)."""
    return np.array(
        [int(rect.contains(g).sum()) if len(g) else 0 for g in data.groups],
        dtype=np.int64,
    )
