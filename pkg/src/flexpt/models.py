"""Latent-state specifications for the split probabilities at tree nodes.

A state model supplies, per node: the number of hidden states, the Markov
transition matrix between a parent's state and the node's state, and the
marginal likelihood of the observed left/right split counts under each
state with the split probabilities integrated out.  Three models ship:

* ``PlainPTModel``  -- single state, independent conjugate beta splits.
* ``AdaptiveSmoothnessModel`` -- states encode local smoothness through
  the beta precision, with an absorbing "perfectly smooth" top state.
* ``TwoSampleCouplingModel`` -- three states encoding whether two groups
  share the split probability, with an absorbing fully-coupled state.

All marginals are returned in log space.
"""

from __future__ import annotations

import numpy as np
from scipy.special import betaln, gammaln


def beta_binomial_log_marginal(alpha_left, alpha_right, n_left, n_right):
    """log Beta(a+nl, b+nr) - log Beta(a, b), vectorized over any argument."""
    return betaln(
        np.asarray(alpha_left) + n_left, np.asarray(alpha_right) + n_right
    ) - betaln(alpha_left, alpha_right)


def _log_rows(matrix: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(matrix)


class StateModel:
    """Shared interface of the latent-state specifications."""

    n_states: int
    n_groups: int | None  # required group count, None = any
    kind: str

    def log_transition(self, depth: int) -> np.ndarray:
        raise NotImplementedError

    def transition(self, depth: int) -> np.ndarray:
        return np.exp(self.log_transition(depth))

    def initial_log(self) -> np.ndarray:
        """Log initial state distribution at the root (first transition row)."""
        return self.log_transition(0)[0]

    def log_marginal_grid(self, n_left, n_node, fracs, depth):
        """Log split marginals for every candidate decision.

        n_left: (G, d, L) per-group left counts, one entry per (dim, loc).
        n_node: (G,) per-group counts in the node.
        fracs:  (L,) relative left volumes loc/n_grid.
        Returns (I, d, L).
        """
        raise NotImplementedError

    def log_marginal(self, n_left, n_right, frac, depth):
        """Log split marginals of a single decision; returns (I,)."""
        n_left = np.asarray(n_left, dtype=np.int64)
        n_right = np.asarray(n_right, dtype=np.int64)
        grid = self.log_marginal_grid(
            n_left[:, None, None],
            n_left + n_right,
            np.array([frac]),
            depth,
        )
        return grid[:, 0, 0]

    def expected_theta(self, state, n_left, n_right, frac, depth):
        raise NotImplementedError

    def sample_theta(self, state, n_left, n_right, frac, depth, rng):
        raise NotImplementedError

    def complexity(self, state: int) -> int:
        raise NotImplementedError

    def check_groups(self, n_groups: int):
        if self.n_groups is not None and n_groups != self.n_groups:
            raise ValueError(
                f"{type(self).__name__} requires {self.n_groups} group(s), got {n_groups}"
            )


class PlainPTModel(StateModel):
    """Single-state model: independent Beta(a_k, a_k) priors per group.

    The beta parameter may depend on the depth of the node being split;
    the default grows quadratically in the (1-based) level of the split,
    the classical choice that yields absolutely continuous densities.
    """

    kind = "pt"
    n_states = 1
    n_groups = None

    def __init__(self, alpha_scale: float = 0.1, alpha_fn=None):
        self.alpha_scale = alpha_scale
        self.alpha_fn = alpha_fn  # optional depth -> (alpha_left, alpha_right)
        self._log_t = np.zeros((1, 1))

    def log_transition(self, depth: int) -> np.ndarray:
        return self._log_t

    def _alphas(self, depth: int) -> tuple[float, float]:
        if self.alpha_fn is None:
            a = self.alpha_scale * (depth + 1) ** 2
            al = ar = a
        else:
            al, ar = self.alpha_fn(depth)
        if al <= 0 or ar <= 0:
            raise ValueError("beta parameters must be positive")
        return float(al), float(ar)

    def log_marginal_grid(self, n_left, n_node, fracs, depth):
        al, ar = self._alphas(depth)
        n_left = np.asarray(n_left)
        total = 0.0
        for g, n_g in enumerate(np.asarray(n_node).ravel()):
            nl = n_left[g]
            # log B(al+nl, ar+nr) - log B(al, ar) with the (al+ar) terms
            # factored out as scalars; two gammaln passes per group
            total = total + (
                gammaln(al + nl)
                - gammaln(al)
                + gammaln(ar + (n_g - nl))
                - gammaln(ar)
                - (gammaln(al + ar + n_g) - gammaln(al + ar))
            )
        return np.asarray(total)[None, :, :]

    def expected_theta(self, state, n_left, n_right, frac, depth):
        al, ar = self._alphas(depth)
        n_left = np.asarray(n_left, dtype=float)
        n_right = np.asarray(n_right, dtype=float)
        return (al + n_left) / (al + ar + n_left + n_right)

    def sample_theta(self, state, n_left, n_right, frac, depth, rng):
        al, ar = self._alphas(depth)
        return rng.beta(al + np.asarray(n_left), ar + np.asarray(n_right))

    def complexity(self, state: int) -> int:
        return 1


class AdaptiveSmoothnessModel(StateModel):
    """Latent smoothness states for single-group density estimation.

    Under state i < I the split probability is Beta(m*nu, (1-m)*nu) where
    m is the left child's volume fraction and log10(nu) is uniform on the
    i-th cell of an increasing grid over [low, high]; the uniform law is
    approximated by ``grid_points`` evenly spaced values placed at the
    right endpoints of equal subintervals.  The top state pins the split
    probability to m itself, i.e. the node is locally uniform, and is
    absorbing under the upper-triangular transition law
    xi[i, i'] proportional to exp(beta * (i - i')) for i <= i'.
    """

    kind = "apt"
    n_groups = 1

    def __init__(
        self,
        n_states: int = 5,
        beta: float = 0.1,
        log10_nu_range: tuple[float, float] = (-1.0, 4.0),
        grid_points: int = 5,
    ):
        if n_states < 2:
            raise ValueError("need at least two states")
        self.n_states = n_states
        self.beta = beta
        self.grid_points = grid_points
        low, high = log10_nu_range
        edges = low + np.arange(n_states) * (high - low) / (n_states - 1)
        grids = []
        for i in range(n_states - 1):
            step = (edges[i + 1] - edges[i]) / grid_points
            grids.append(10.0 ** (edges[i] + step * np.arange(1, grid_points + 1)))
        self.nu_grid = np.array(grids)  # (I-1, grid_points)
        idx = np.arange(n_states)
        logits = np.where(idx[:, None] <= idx[None, :], beta * (idx[:, None] - idx[None, :]), -np.inf)
        weights = np.exp(logits)
        self._log_t = _log_rows(weights / weights.sum(axis=1, keepdims=True))

    def log_transition(self, depth: int) -> np.ndarray:
        return self._log_t

    def log_marginal_grid(self, n_left, n_node, fracs, depth):
        nl = np.asarray(n_left)[0]
        n = int(np.asarray(n_node).ravel()[0])
        nr = n - nl
        fracs = np.asarray(fracs, dtype=float)
        nu = self.nu_grid.ravel()  # (S*K,)
        a = fracs[:, None] * nu[None, :]  # (L, S*K)
        b = (1.0 - fracs)[:, None] * nu[None, :]
        s = a + b
        # log B(a+nl, b+nr) - log B(a, b), with all count-free terms folded
        # into one (L, S*K) correction shared across dimensions
        log_corr = gammaln(s) - gammaln(s + n) - gammaln(a) - gammaln(b)
        mix = (
            gammaln(a[None] + nl[..., None])
            + gammaln(b[None] + nr[..., None])
            + log_corr[None]
        )  # (d, L, S*K)
        mix = mix.reshape(nl.shape + (self.n_states - 1, self.grid_points))
        top = mix.max(axis=-1)
        finite = np.logaddexp.reduce(mix - top[..., None], axis=-1) + top - np.log(self.grid_points)
        pinned = nl * np.log(fracs)[None, :] + nr * np.log1p(-fracs)[None, :]
        return np.concatenate(
            [np.moveaxis(finite, -1, 0), pinned[None]], axis=0
        )  # (I, d, L)

    def _grid_posterior(self, state, n_left, n_right, frac):
        nu = self.nu_grid[state]
        a = frac * nu
        b = (1.0 - frac) * nu
        logw = beta_binomial_log_marginal(a, b, n_left, n_right)
        logw -= logw.max()
        w = np.exp(logw)
        return a, b, w / w.sum()

    def expected_theta(self, state, n_left, n_right, frac, depth):
        nl = float(np.asarray(n_left).ravel()[0])
        nr = float(np.asarray(n_right).ravel()[0])
        if state == self.n_states - 1:
            return np.array([frac])
        a, b, w = self._grid_posterior(state, nl, nr, frac)
        return np.array([float(np.sum(w * (a + nl) / (a + b + nl + nr)))])

    def sample_theta(self, state, n_left, n_right, frac, depth, rng):
        nl = float(np.asarray(n_left).ravel()[0])
        nr = float(np.asarray(n_right).ravel()[0])
        if state == self.n_states - 1:
            return np.array([frac])
        a, b, w = self._grid_posterior(state, nl, nr, frac)
        k = rng.choice(len(w), p=w)
        return np.array([rng.beta(a[k] + nl, b[k] + nr)])

    def complexity(self, state: int) -> int:
        return 0 if state == self.n_states - 1 else 1


class TwoSampleCouplingModel(StateModel):
    """Three-state coupling model for two-group comparison.

    State 1 gives the two groups independent split probabilities, state 2
    couples them under a single shared beta prior, and state 3 is coupled
    and absorbing: once entered, the two conditional distributions agree
    on the whole subtree.  The transition law depends on the node depth k
    so that the chance of fresh decoupling decays like 2^-k below nodes
    that were already coupled.
    """

    kind = "mrs"
    n_states = 3
    n_groups = 2

    def __init__(self, gamma: float = 0.3, rho: float = 0.3, nu0: float = 1.0):
        if not (0 < gamma < 1 and 0 < rho <= 1):
            raise ValueError("gamma in (0,1), rho in (0,1] required")
        if nu0 <= 0:
            raise ValueError("nu0 must be positive")
        self.gamma = gamma
        self.rho = rho
        self.nu0 = nu0
        self._cache: dict[int, np.ndarray] = {}

    def log_transition(self, depth: int) -> np.ndarray:
        if depth not in self._cache:
            g, r = self.gamma, self.rho
            gk = g * 2.0 ** (-depth)
            t = np.array(
                [
                    [(1 - r) * g, (1 - r) * (1 - g), r],
                    [(1 - r) * gk, (1 - r) * (1 - gk), r],
                    [0.0, 0.0, 1.0],
                ]
            )
            self._cache[depth] = _log_rows(t)
        return self._cache[depth]

    def _alphas(self, fracs):
        fracs = np.asarray(fracs, dtype=float)
        return self.nu0 * fracs, self.nu0 * (1.0 - fracs)

    def log_marginal_grid(self, n_left, n_node, fracs, depth):
        n_left = np.asarray(n_left)
        n_node = np.asarray(n_node).ravel()
        al, ar = self._alphas(fracs)  # (L,), (L,)
        s = al + ar

        def bb(nl, n):
            return (
                gammaln(al[None, :] + nl)
                - gammaln(al)[None, :]
                + gammaln(ar[None, :] + (n - nl))
                - gammaln(ar)[None, :]
                - (gammaln(s[None, :] + n) - gammaln(s)[None, :])
            )

        decoupled = bb(n_left[0], n_node[0]) + bb(n_left[1], n_node[1])
        coupled = bb(n_left[0] + n_left[1], n_node[0] + n_node[1])
        return np.stack([decoupled, coupled, coupled])

    def expected_theta(self, state, n_left, n_right, frac, depth):
        al, ar = self.nu0 * frac, self.nu0 * (1.0 - frac)
        nl = np.asarray(n_left, dtype=float)
        nr = np.asarray(n_right, dtype=float)
        if state == 0:
            return (al + nl) / (al + ar + nl + nr)
        pooled = (al + nl.sum()) / (al + ar + nl.sum() + nr.sum())
        return np.full(2, pooled)

    def sample_theta(self, state, n_left, n_right, frac, depth, rng):
        al, ar = self.nu0 * frac, self.nu0 * (1.0 - frac)
        nl = np.asarray(n_left, dtype=float)
        nr = np.asarray(n_right, dtype=float)
        if state == 0:
            return rng.beta(al + nl, ar + nr)
        return np.full(2, rng.beta(al + nl.sum(), ar + nr.sum()))

    def complexity(self, state: int) -> int:
        return 2 if state == 0 else 1


def plain_pt_model(alpha_scale: float = 0.1, alpha_fn=None) -> PlainPTModel:
    return PlainPTModel(alpha_scale=alpha_scale, alpha_fn=alpha_fn)


def apt_model(**kwargs) -> AdaptiveSmoothnessModel:
    return AdaptiveSmoothnessModel(**kwargs)


def mrs_model(**kwargs) -> TwoSampleCouplingModel:
    return TwoSampleCouplingModel(**kwargs)


def make_model(name: str, params: dict | None = None) -> StateModel:
    """Build a state model from its config name ("pt", "apt" or "mrs")."""
    params = dict(params or {})
    if name == "pt":
        return PlainPTModel(**params)
    if name == "apt":
        if "states" in params:
            params["n_states"] = params.pop("states")
        if "log10nu" in params:
            params["log10_nu_range"] = tuple(params.pop("log10nu"))
        return AdaptiveSmoothnessModel(**params)
    if name == "mrs":
        return TwoSampleCouplingModel(**params)
    raise ValueError(f"unknown model {name!r} (expected pt, apt or mrs)")
