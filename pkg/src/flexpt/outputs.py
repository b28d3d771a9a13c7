"""User-facing inference: predictive densities, scores and two-sample reports.

Everything here consumes a fitted particle population.  Per tree, a single
top-down recursion turns the posterior messages into expected leaf masses
E[Q(leaf) | data, tree]; the predictive density at a point is the particle
mixture of leaf mass over leaf volume.  Two-sample fits additionally
aggregate the global null probability across particles and tabulate
per-node decoupling probabilities and log-odds effect sizes on the MAP
tree.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import GroupedDataset
from .message_passing import (
    MessageSet,
    compute_messages,
    global_null_probability,
    map_tree_index,
)
from .models import StateModel, TwoSampleCouplingModel, make_model
from .priors import TreePriorConfig
from .smc import SMCConfig, SMCResult, run
from .tree import PartitionTree


@dataclass
class FitResult:
    """A fitted population: trees, weights, messages and config snapshot."""

    data: GroupedDataset | None
    model: StateModel
    prior_cfg: TreePriorConfig
    smc_cfg: SMCConfig
    smc: SMCResult
    message_sets: list[MessageSet]
    map_index: int

    @property
    def weights(self) -> np.ndarray:
        return self.smc.weights

    @property
    def trees(self) -> list[PartitionTree]:
        return self.smc.trees

    @property
    def map_tree(self) -> PartitionTree:
        return self.trees[self.map_index]


def _compute_message_sets(trees, model, jobs: int | None):
    if jobs is None:
        import os

        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(trees) < 4:
        return [compute_messages(t, model) for t in trees]
    stripped = []
    for t in trees:
        c = t.clone()
        c.data = None
        c.indices = {}
        stripped.append(c)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunk = max(1, len(trees) // (jobs * 4))
        return list(pool.map(_message_worker, stripped, [model] * len(trees), chunksize=chunk))


def _message_worker(tree, model):
    return compute_messages(tree, model)


def finish_fit(
    data: GroupedDataset | None,
    model: StateModel,
    prior_cfg: TreePriorConfig,
    smc_cfg: SMCConfig,
    smc_result: SMCResult,
    jobs: int | None = 1,
) -> FitResult:
    """Attach exact conditional posteriors and the MAP index to an SMC run."""
    message_sets = _compute_message_sets(smc_result.trees, model, jobs)
    map_idx = map_tree_index(smc_result.trees, message_sets, prior_cfg)
    return FitResult(data, model, prior_cfg, smc_cfg, smc_result, message_sets, map_idx)


def fit_density(
    points,
    model: StateModel | str = "apt",
    prior_cfg: TreePriorConfig | None = None,
    smc_cfg: SMCConfig | None = None,
    jobs: int | None = 1,
) -> FitResult:
    """Fit the density model to a single group of points in (0,1]^d."""
    data = points if isinstance(points, GroupedDataset) else GroupedDataset.single(points)
    if isinstance(model, str):
        model = make_model(model)
    prior_cfg = prior_cfg or TreePriorConfig(eta=0.01)
    smc_cfg = smc_cfg or SMCConfig()
    result = run(data, model, prior_cfg, smc_cfg)
    return finish_fit(data, model, prior_cfg, smc_cfg, result, jobs)


def fit_twosample(
    group1,
    group2,
    model: StateModel | str = "mrs",
    prior_cfg: TreePriorConfig | None = None,
    smc_cfg: SMCConfig | None = None,
    jobs: int | None = 1,
) -> FitResult:
    """Fit the two-sample coupling model to two groups of points."""
    data = GroupedDataset([group1, group2])
    if isinstance(model, str):
        model = make_model(model)
    prior_cfg = prior_cfg or TreePriorConfig(eta=0.1)
    smc_cfg = smc_cfg or SMCConfig()
    result = run(data, model, prior_cfg, smc_cfg)
    return finish_fit(data, model, prior_cfg, smc_cfg, result, jobs)


# -- predictive masses and densities --------------------------------------


def predictive_masses(tree: PartitionTree, messages: MessageSet, model: StateModel) -> np.ndarray:
    """Expected measure of every node jointly with its state, (N, I).

    Root rows start from the posterior initial distribution; a child's
    row reweights the parent's by the posterior mean of the parent's split
    probability (or its complement on the right) and one posterior
    transition.  Summing a leaf's row gives E[Q(leaf) | data, tree]; leaf
    masses sum to one by construction.
    """
    if tree.n_groups != 1:
        raise ValueError("predictive masses are defined for single-group fits")
    e = np.zeros_like(messages.state_marginals)
    e[0] = messages.state_marginals[0]
    n_states = e.shape[1]
    for nid in range(tree.n_nodes):
        if tree._dec_dim[nid] < 0:
            continue
        left = int(tree._first_child[nid])
        frac = int(tree._dec_loc[nid]) / int(tree._dec_grid[nid])
        depth = int(tree._depth[nid])
        nl, nr = tree._counts[left], tree._counts[left + 1]
        mean_theta = np.array(
            [model.expected_theta(i, nl, nr, frac, depth)[0] for i in range(n_states)]
        )
        e[left] = (e[nid] * mean_theta) @ messages.trans_post[left]
        e[left + 1] = (e[nid] * (1.0 - mean_theta)) @ messages.trans_post[left + 1]
    return e


def leaf_masses(tree: PartitionTree, masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(leaf ids, expected leaf measures) for one tree."""
    leaves = tree.leaf_ids()
    return leaves, masses[leaves].sum(axis=1)


def assign_leaves(tree: PartitionTree, points: np.ndarray) -> np.ndarray:
    """Leaf id containing each point, by descending the stored cuts."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(points), dtype=np.intp)
    stack = [(0, np.arange(len(points), dtype=np.intp))]
    while stack:
        nid, idx = stack.pop()
        if tree._dec_dim[nid] < 0:
            out[idx] = nid
            continue
        dim = int(tree._dec_dim[nid])
        cut = float(tree._dec_cut[nid])
        left = int(tree._first_child[nid])
        mask = points[idx, dim] <= cut
        stack.append((left, idx[mask]))
        stack.append((left + 1, idx[~mask]))
    return out


def predictive_density_at(points, fit: FitResult) -> np.ndarray:
    """Posterior mean density at the given points, mixed over particles."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != fit.trees[0].dim:
        raise ValueError("point dimension does not match the fitted space")
    if np.any(points <= 0.0) or np.any(points > 1.0):
        raise ValueError("points must lie in (0,1]^d")
    total = np.zeros(len(points))
    weights = fit.weights
    for w, tree, ms in zip(weights, fit.trees, fit.message_sets):
        if w == 0.0:
            continue
        masses = predictive_masses(tree, ms, fit.model)
        node_mass = masses.sum(axis=1)
        with np.errstate(divide="ignore"):
            log_density = np.log(node_mass) - tree._log_volume[: tree.n_nodes]
        leaves = assign_leaves(tree, points)
        total += w * np.exp(log_density[leaves])
    return total


def predictive_score(points, fit: FitResult) -> float:
    """Average log predictive density over a test set."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise ValueError("empty test set")
    dens = predictive_density_at(points, fit)
    if np.any(dens <= 0.0):
        raise FloatingPointError("zero predictive density at a test point")
    return float(np.mean(np.log(dens)))


# -- two-sample summaries --------------------------------------------------


def population_null_probability(fit: FitResult) -> float:
    """P(global null | data): particle-weighted null probabilities."""
    psi = np.array(
        [
            global_null_probability(tree, ms, fit.model)
            for tree, ms in zip(fit.trees, fit.message_sets)
        ]
    )
    return float(np.sum(fit.weights * psi))


def effect_size(
    tree: PartitionTree,
    messages: MessageSet,
    model: TwoSampleCouplingModel,
    nid: int,
    n_draws: int = 1000,
    seed: int = 0,
    conditional: bool = False,
) -> float:
    """Posterior expected absolute log-odds ratio between the two groups.

    Monte Carlo over the decoupled conjugate posteriors at the node; under
    the coupled states the effect is identically zero, so the marginalized
    estimate is the decoupling probability times the conditional mean.
    Pass ``conditional=True`` for the mean given decoupling alone.
    """
    if getattr(model, "kind", None) != "mrs":
        raise ValueError("effect sizes are defined for the two-sample coupling model")
    if tree._dec_dim[nid] < 0:
        raise ValueError("effect size needs a divided node")
    if n_draws < 1:
        raise ValueError("need at least one draw")
    left = int(tree._first_child[nid])
    nl, nr = tree._counts[left], tree._counts[left + 1]
    frac = int(tree._dec_loc[nid]) / int(tree._dec_grid[nid])
    al, ar = model.nu0 * frac, model.nu0 * (1.0 - frac)
    rng = np.random.default_rng((seed, nid))
    theta = rng.beta(
        np.broadcast_to(al + nl, (n_draws, 2)),
        np.broadcast_to(ar + nr, (n_draws, 2)),
    )
    # tiny beta parameters can round draws to exactly 0 or 1
    theta = np.clip(theta, 1e-12, 1.0 - 1e-12)
    logits = np.log(theta) - np.log1p(-theta)
    mean_eff = float(np.mean(np.abs(logits[:, 0] - logits[:, 1])))
    if conditional:
        return mean_eff
    pmap = float(messages.state_marginals[nid, 0])
    return pmap * mean_eff


@dataclass
class TwoSampleReport:
    p_h0: float
    map_index: int
    rows: list[dict]
    n_high_pmap: int
    pmap_threshold: float

    def summary_dict(self, top_k: int = 10) -> dict:
        return {
            "p_h0": self.p_h0,
            "map_index": self.map_index,
            "n_high_pmap": self.n_high_pmap,
            "pmap_threshold": self.pmap_threshold,
            "top_nodes": self.rows[:top_k],
        }


def two_sample_report(
    fit: FitResult,
    min_node_size: int = 0,
    top_k: int | None = None,
    pmap_threshold: float = 0.95,
    n_draws: int = 1000,
    seed: int = 0,
) -> TwoSampleReport:
    """Global null probability plus a per-node table along the MAP tree.

    Rows cover the MAP tree's internal nodes with at least ``min_node_size``
    observations, sorted by decreasing effect size.
    """
    p_h0 = population_null_probability(fit)
    tree = fit.map_tree
    messages = fit.message_sets[fit.map_index]
    rows = []
    n_high = 0
    for nid in tree.internal_ids():
        nid = int(nid)
        pmap = float(messages.state_marginals[nid, 0])
        if pmap >= pmap_threshold:
            n_high += 1
        total = tree.total_count(nid)
        if total < min_node_size:
            continue
        eff = effect_size(tree, messages, fit.model, nid, n_draws=n_draws, seed=seed)
        lower, upper = tree.node_bounds(nid)
        rows.append(
            {
                "node": nid,
                "depth": int(tree._depth[nid]),
                "split_dim": int(tree._dec_dim[nid]),
                "cut": float(tree._dec_cut[nid]),
                "n_group1": int(tree._counts[nid, 0]),
                "n_group2": int(tree._counts[nid, 1]),
                "pmap": pmap,
                "effect_size": eff,
                "lower": [float(x) for x in lower],
                "upper": [float(x) for x in upper],
            }
        )
    rows.sort(key=lambda r: (-r["effect_size"], r["node"]))
    if top_k is not None:
        rows = rows[:top_k]
    return TwoSampleReport(
        p_h0=p_h0,
        map_index=fit.map_index,
        rows=rows,
        n_high_pmap=n_high,
        pmap_threshold=pmap_threshold,
    )
