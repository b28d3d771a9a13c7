"""Synthetic data generators for the benchmark scenarios.

Density scenarios (single group): three 2-d shapes (uniform blocks, beta
clusters, one smooth beta bump) plus a paired-margin beta mixture of
arbitrary even dimension.  Two-sample scenarios (two groups): 50-d Gaussian
designs whose groups differ only on the first five coordinate pairs, by a
location shift, a dispersion change or an induced correlation.

Gaussian scenarios return raw coordinates; map them into (0,1] with the
affine ingestion path.  Beta/uniform scenarios already live in the cube.
"""

from __future__ import annotations

import numpy as np

_BLOCKS = [
    (0.10, 0.45, 0.35, 0.90),
    (0.20, 0.80, 0.45, 0.50),
    (0.70, 0.90, 0.05, 0.60),
]

_CLUSTER_WEIGHTS = [0.1, 0.3, 0.3, 0.3]
_CLUSTER_PARAMS = [
    ((1.0, 1.0), (1.0, 1.0)),
    ((15.0, 45.0), (15.0, 45.0)),
    ((45.0, 15.0), (22.5, 37.5)),
    ((37.5, 22.5), (45.0, 15.0)),
]

_SHIFT_MEANS = np.array([[-2.5, 1.0], [1.0, -2.0], [2.0, 2.5]])
_SHIFT_COV_DIAG = np.array([0.5, 0.7])


def blocks(n: int, rng: np.random.Generator) -> np.ndarray:
    """Equal-weight mixture of three uniform rectangles in (0,1]^2."""
    comp = rng.integers(0, 3, size=n)
    u = rng.random((n, 2))
    out = np.empty((n, 2))
    for k, (x0, x1, y0, y1) in enumerate(_BLOCKS):
        m = comp == k
        out[m, 0] = x0 + u[m, 0] * (x1 - x0)
        out[m, 1] = y0 + u[m, 1] * (y1 - y0)
    return out


def clusters(n: int, rng: np.random.Generator) -> np.ndarray:
    """A diffuse uniform floor plus three tight beta clusters in 2-d."""
    comp = rng.choice(4, size=n, p=_CLUSTER_WEIGHTS)
    out = np.empty((n, 2))
    for k, (p1, p2) in enumerate(_CLUSTER_PARAMS):
        m = comp == k
        cnt = int(m.sum())
        out[m, 0] = rng.beta(p1[0], p1[1], size=cnt)
        out[m, 1] = rng.beta(p2[0], p2[1], size=cnt)
    return out


def smooth(n: int, rng: np.random.Generator) -> np.ndarray:
    """A single smooth Beta(10,20) x Beta(10,20) bump."""
    return np.column_stack([rng.beta(10, 20, size=n), rng.beta(10, 20, size=n)])


def mixture_pairs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Independent coordinate pairs, each a two-component beta mixture.

    Pair j mixes a corner-spiked component with a centered one at weight
    p_j = 0.25 + 0.7/j; later pairs are closer to uniform.
    """
    if d % 2:
        raise ValueError("mixture_pairs needs an even dimension")
    out = np.empty((n, d))
    for j in range(1, d // 2 + 1):
        p = 0.25 + 0.7 / j
        spiky = rng.random(n) < p
        a = 50.0 / j
        x1 = np.where(spiky, rng.beta(0.25, 1.0, n), rng.beta(a, a, n))
        x2 = np.where(spiky, rng.beta(0.25, 1.0, n), rng.beta(a, a, n))
        out[:, 2 * (j - 1)] = x1
        out[:, 2 * j - 1] = x2
    return out


def _gaussian_pairs(n, rng, pair_sampler, d=50):
    if d % 2:
        raise ValueError("two-sample scenarios need an even dimension")
    out = np.empty((n, d))
    for j in range(1, d // 2 + 1):
        out[:, 2 * (j - 1) : 2 * j] = pair_sampler(j, n)
    return out


def _mixture_normal(n, rng, means, cov_diag):
    comp = rng.integers(0, 3, size=n)
    return means[comp] + rng.standard_normal((n, 2)) * np.sqrt(cov_diag)


def local_shift(n1: int, n2: int, rng: np.random.Generator, d: int = 50):
    """Group 2's first mixture component is shifted by -0.5 on pairs 1..5."""

    def base(j, n):
        return _mixture_normal(n, rng, _SHIFT_MEANS, _SHIFT_COV_DIAG)

    def shifted(j, n):
        delta = -0.5 if j <= 5 else 0.0
        means = _SHIFT_MEANS.copy()
        means[0] = means[0] + delta
        return _mixture_normal(n, rng, means, _SHIFT_COV_DIAG)

    return _gaussian_pairs(n1, rng, base, d), _gaussian_pairs(n2, rng, shifted, d)


def local_dispersion(n1: int, n2: int, rng: np.random.Generator, d: int = 50):
    """Group 2's first component loses 0.4 of variance on pairs 1..5."""

    def base(j, n):
        return _mixture_normal(n, rng, _SHIFT_MEANS, _SHIFT_COV_DIAG)

    def squeezed(j, n):
        comp = rng.integers(0, 3, size=n)
        diag = np.where(
            (comp == 0)[:, None] & (j <= 5), _SHIFT_COV_DIAG - 0.4, _SHIFT_COV_DIAG
        )
        return _SHIFT_MEANS[comp] + rng.standard_normal((n, 2)) * np.sqrt(diag)

    return _gaussian_pairs(n1, rng, base, d), _gaussian_pairs(n2, rng, squeezed, d)


def correlation(n1: int, n2: int, rng: np.random.Generator, d: int = 50):
    """Group 2's pairs 1..5 are correlated at 0.75; group 1 is independent."""

    def base(j, n):
        return rng.standard_normal((n, 2))

    def correlated(j, n):
        z = rng.standard_normal((n, 2))
        if j > 5:
            return z
        rho = 0.75
        return np.column_stack([z[:, 0], rho * z[:, 0] + np.sqrt(1 - rho * rho) * z[:, 1]])

    return _gaussian_pairs(n1, rng, base, d), _gaussian_pairs(n2, rng, correlated, d)


DENSITY_SCENARIOS = {
    "blocks": blocks,
    "clusters": clusters,
    "smooth": smooth,
    "mixture_pairs": mixture_pairs,
}

TWOSAMPLE_SCENARIOS = {
    "local_shift": local_shift,
    "local_dispersion": local_dispersion,
    "correlation": correlation,
}


def simulate(scenario: str, *, n=None, n1=None, n2=None, d=None, seed=0):
    """Draw a dataset by scenario name.

    Density scenarios return {"data": ...}; two-sample scenarios return
    {"group1": ..., "group2": ...}.  ``needs_scaling`` marks the Gaussian
    designs that must go through affine ingestion before fitting.
    """
    rng = np.random.default_rng(seed)
    if scenario in DENSITY_SCENARIOS:
        if n is None:
            raise ValueError("density scenarios need n")
        fn = DENSITY_SCENARIOS[scenario]
        if scenario == "mixture_pairs":
            if d is None:
                raise ValueError("mixture_pairs needs d")
            data = fn(n, d, rng)
        else:
            data = fn(n, rng)
        return {"data": data, "needs_scaling": False}
    if scenario in TWOSAMPLE_SCENARIOS:
        if n1 is None or n2 is None:
            raise ValueError("two-sample scenarios need n1 and n2")
        kwargs = {} if d is None else {"d": d}
        g1, g2 = TWOSAMPLE_SCENARIOS[scenario](n1, n2, rng, **kwargs)
        return {"group1": g1, "group2": g2, "needs_scaling": True}
    raise ValueError(
        f"unknown scenario {scenario!r}; choose from "
        f"{sorted(DENSITY_SCENARIOS) + sorted(TWOSAMPLE_SCENARIOS)}"
    )
