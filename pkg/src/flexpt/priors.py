"""Priors over split decisions: dimension weights, grid-location weights
with a sample-size-dependent balance penalty, and the spike-and-slab
midpoint refixing process.

Location weights follow a discretized Laplace-type law: the weight of grid
location l is proportional to exp(-eta * n * f(|l/n_grid - 1/2|)), so the
prior concentrates on balanced cuts as the node's sample size grows.  All
weights are produced in log space; linear views are derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def _identity(x: np.ndarray) -> np.ndarray:
    return x


@dataclass
class TreePriorConfig:
    """Configuration of the partition prior.

    n_grid: number of grid cells per axis (n_grid - 1 candidate cuts).
    eta: balance penalty rate; 0 gives uniform location weights.
    penalty: increasing function with penalty(0) = 0 applied to the
        distance of the relative cut from 1/2.
    dim_weights: prior over cut dimensions; None means uniform.
    spike: enable the absorbing spike at the midpoint.
    """

    n_grid: int = 32
    eta: float = 0.01
    penalty: Callable[[np.ndarray], np.ndarray] = _identity
    dim_weights: np.ndarray | None = None
    spike: bool = False

    def __post_init__(self):
        if self.n_grid < 2:
            raise ValueError("n_grid must be at least 2")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.spike and self.n_grid % 2:
            raise ValueError("spike requires an even n_grid so 1/2 is on the grid")
        if self.dim_weights is not None:
            w = np.asarray(self.dim_weights, dtype=float)
            if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise ValueError("dim_weights must be a probability vector")
            self.dim_weights = w
        # distances |l/n_grid - 1/2| for l = 1..n_grid-1, fixed per config
        rel = np.arange(1, self.n_grid) / self.n_grid
        self._penalties = np.asarray(self.penalty(np.abs(rel - 0.5)), dtype=float)
        self._log_fracs = np.log(rel)
        self._log_cofracs = np.log1p(-rel)
        self._locw_cache: dict[int, np.ndarray] = {}

    def log_dim_weights(self, dim: int) -> np.ndarray:
        if self.dim_weights is None:
            return np.full(dim, -np.log(dim))
        if self.dim_weights.size != dim:
            raise ValueError("dim_weights length does not match data dimension")
        return np.log(self.dim_weights)


def log_location_weights(n_in_node: int, cfg: TreePriorConfig) -> np.ndarray:
    """Log prior weights of the n_grid - 1 candidate cut locations.

    Computed with max subtraction so the normalization is stable even when
    eta * n reaches 1e6 or beyond.  Results are cached per sample size (the
    weights depend on the node only through its count).
    """
    if n_in_node < 0:
        raise ValueError("negative count")
    cached = cfg._locw_cache.get(n_in_node)
    if cached is not None:
        return cached
    logits = -cfg.eta * n_in_node * cfg._penalties
    logits -= logits.max()
    out = logits - np.log(np.exp(logits).sum())
    out.setflags(write=False)
    cfg._locw_cache[n_in_node] = out
    return out


def location_weights(n_in_node: int, cfg: TreePriorConfig) -> np.ndarray:
    return np.exp(log_location_weights(n_in_node, cfg))


def spike_weights(n_in_node: int, cfg: TreePriorConfig) -> tuple[float, np.ndarray]:
    """Spike probability and log slab weights at a node.

    Returns ``(log_refix_prob, log_slab)`` where the refix probability is
    the plain location weight of the midpoint and the slab renormalizes the
    remaining locations (midpoint entry is -inf).  Marginalizing the two
    branches reproduces the plain location weights exactly: once a parent
    is refixed the child location is deterministically the midpoint, and a
    non-refixed parent leaves the original law untouched.
    """
    if not cfg.spike:
        raise ValueError("spike weights requested but spike is disabled")
    logw = log_location_weights(n_in_node, cfg)
    mid = cfg.n_grid // 2 - 1  # 0-based index of l = n_grid/2
    log_r = float(logw[mid])
    log_slab = logw.copy()
    log_slab[mid] = -np.inf
    rest = np.delete(logw, mid)
    if rest.size == 0:
        # n_grid = 2: the midpoint is the only location and the slab is empty
        return 0.0, log_slab
    top = rest.max()
    norm = top + np.log(np.exp(rest - top).sum())  # log(1 - r), summed directly
    log_slab -= norm
    return log_r, log_slab
