"""Particle filter over partition trees with one-step look-ahead proposals.

Each particle grows its own tree breadth first.  At every step the oldest
active leaf of each tree is divided: the proposal over (dimension, location)
weighs every candidate cut by the prior times a look-ahead score, the score
being the marginal likelihood gain of the split mixed over the latent states
reachable from the parent.  The resulting incremental importance weight has
a closed form (the prior-weighted sum of the scores), so weights never
depend on which decision was drawn, and the product of incremental weights
along a lineage is exactly prior times marginal likelihood over proposal.

For multi-state models that exactness needs care: by the time a node is
divided, its already-divided sibling (and older subtrees) carry evidence
about the parent's latent state.  The sampler therefore refreshes the
parent's state posterior from running messages (current subtree likelihoods
plus an outside pass along the path from the root), an O(depth * I^2)
bookkeeping step that keeps the per-division cost linear.  The cached
per-node state vector remains the plain path recursion: the state posterior
given the splits from the root down to the node only.

Weights are tracked in log space and renormalized each step; when the
effective sample size falls below a fraction of the population, particles
are resampled systematically on tempered weights W^kappa and reweighted by
W/a, which avoids discarding promising young trees too eagerly.

Randomness is organized as one persistent stream per particle slot plus a
dedicated resampling stream, all keyed off the master seed, so results do
not depend on processing order or parallelism degree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import Decision, GroupedDataset, grid_cuts
from .models import StateModel
from .priors import TreePriorConfig, log_location_weights
from .tree import PartitionTree, StopConfig


@dataclass
class SMCConfig:
    n_particles: int = 1000
    max_depth: int = 15
    min_count: int = 5
    kappa: float = 0.5
    ess_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")

    @property
    def stop(self) -> StopConfig:
        return StopConfig(self.max_depth, self.min_count)


@dataclass
class Particle:
    """One weighted tree plus running per-lineage identities.

    cum_log_incr accumulates the log incremental weights, cum_log_proposal
    the log proposal probability of every decision actually drawn, and
    cum_log_h the log look-ahead scores of those decisions; together they
    satisfy  cum_log_incr = log prior + log marginal - cum_log_proposal
    and  cum_log_h = log marginal likelihood of the final tree.
    """

    tree: PartitionTree
    log_weight: float = 0.0
    cum_log_incr: float = 0.0
    cum_log_proposal: float = 0.0
    cum_log_h: float = 0.0

    def clone(self) -> "Particle":
        return Particle(
            self.tree.clone(),
            self.log_weight,
            self.cum_log_incr,
            self.cum_log_proposal,
            self.cum_log_h,
        )


@dataclass
class ProposalTable:
    """Full look-ahead table over candidate decisions at one node."""

    log_h: np.ndarray  # (d, L) look-ahead scores
    log_joint: np.ndarray  # (d, L) log prior + log score, unnormalized
    log_incr: float  # log sum over the table = log incremental weight
    log_dim_marginal: np.ndarray  # (d,) normalized
    log_loc_conditional: np.ndarray  # (d, L) rows normalized
    counts_left: np.ndarray  # (G, d, L) left counts per candidate
    state_mix: np.ndarray  # (I,) state mixture reaching this node
    log_marginals: np.ndarray  # (I, d, L) per-state split marginals


@dataclass
class StepRecord:
    step: int
    ess: float
    resampled: bool
    n_active: int
    log_w_min: float
    log_w_max: float


@dataclass
class SMCResult:
    particles: list[Particle]
    log_weights: np.ndarray
    diagnostics: list[StepRecord]
    wall_time: float
    peak_nodes: int
    seed: int

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def trees(self) -> list[PartitionTree]:
        return [p.tree for p in self.particles]


def particle_stream(seed: int, slot: int) -> np.random.Generator:
    """Counter-based stream for one particle slot."""
    return np.random.Generator(np.random.Philox(key=[seed, (1 << 62) | slot]))


def resample_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, 2 << 62]))


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum of squared normalized weights."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))


def _logsumexp(a: np.ndarray) -> float:
    top = a.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(a - top).sum()))


def state_mixture(tree: PartitionTree, nid: int, model: StateModel) -> np.ndarray:
    """Probability of each latent state at a node given the splits observed
    along the path from the root (the parent's stored state posterior pushed
    through one transition); the initial distribution at the root."""
    depth = int(tree._depth[nid])
    trans = model.transition(depth)
    parent = int(tree._parent[nid])
    if parent < 0:
        return np.exp(model.initial_log())
    probs = tree._state_probs[parent] if tree._state_probs is not None else np.ones(1)
    return probs @ trans


def _lse_axis(a: np.ndarray, axis: int) -> np.ndarray:
    top = a.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis) + np.log(np.exp(a - top).sum(axis=axis))


def refreshed_mixture(tree: PartitionTree, nid: int, model: StateModel) -> np.ndarray:
    """State distribution reaching a node given everything divided so far.

    The parent's posterior is assembled from its running subtree message
    and an outside message built by one walk down the path from the root,
    which at every level folds in that ancestor's split marginals and the
    off-path sibling's current subtree message.  Pushing the result through
    one transition gives the exact mixture the look-ahead scores need; with
    a single state this is trivially (1,).
    """
    if model.n_states == 1:
        return np.ones(1)
    parent = int(tree._parent[nid])
    if parent < 0:
        return np.exp(model.initial_log())
    if tree._own_log is None:
        # tree grown outside the sampler: fall back to a full message pass
        from .message_passing import compute_messages

        marginals = compute_messages(tree, model).state_marginals
        return marginals[parent] @ model.transition(int(tree._depth[nid]))
    chain = []
    cur = parent
    while cur >= 0:
        chain.append(cur)
        cur = int(tree._parent[cur])
    chain.reverse()  # root .. parent
    out = model.initial_log().copy()
    own = tree._own_log
    for b_par, b in zip(chain[:-1], chain[1:]):
        first = int(tree._first_child[b_par])
        sib = first + 1 if b == first else first
        depth = int(tree._depth[b])
        log_t = model.log_transition(depth)
        phi_sib = _lse_axis(log_t + own[sib][None, :], 1)
        carry = out + tree._log_m_sel[b_par] + phi_sib
        out = _lse_axis(carry[:, None] + log_t, 0)
    g = out + own[parent]
    g -= g.max()
    g = np.exp(g)
    g /= g.sum()
    return g @ model.transition(int(tree._depth[nid]))


def _grid_counts(tree: PartitionTree, nid: int, cuts: np.ndarray, n_grid: int):
    """Left counts for every candidate cut, plus per-point bucket indices.

    Buckets come from searchsorted against the exact cut coordinates, so
    "bucket < l" agrees bitwise with "x <= cut_l"; the proposal counts and
    the eventual index partition can never disagree.
    """
    d = tree.dim
    idx = tree.indices[nid]
    offsets = (np.arange(d) * n_grid)[:, None]
    counts = np.empty((len(idx), d, n_grid - 1), dtype=np.int64)
    buckets = []
    for g, ix in enumerate(idx):
        if len(ix) == 0:
            counts[g] = 0
            buckets.append(None)
            continue
        cols = tree.data.transposed(g)[:, ix]  # (d, n) gather
        bk = np.empty((d, len(ix)), dtype=np.intp)
        for j in range(d):
            bk[j] = cuts[j].searchsorted(cols[j], side="left")
        flat = (bk + offsets).ravel()
        per_bucket = np.bincount(flat, minlength=d * n_grid).reshape(d, n_grid)
        np.cumsum(per_bucket[:, :-1], axis=1, out=counts[g])
        buckets.append(bk)
    return counts, buckets


def lookahead_log_score(
    tree: PartitionTree,
    nid: int,
    dec: Decision,
    model: StateModel,
    mixture: np.ndarray | None = None,
) -> float:
    """Log look-ahead score of a single candidate decision at a node.

    This is the ratio by which the tree's marginal likelihood grows if the
    node is divided by ``dec``: the state-mixture average of the split
    marginals times the volume-concentration factor of the two children.
    ``mixture`` overrides the state distribution reaching the node (it must
    sum to one); by default the exact refreshed mixture is used.
    """
    lower, upper = tree.node_bounds(nid)
    cuts = grid_cuts(lower, upper, dec.n_grid)
    cut = cuts[dec.dim, dec.loc - 1]
    n_node = tree._counts[nid]
    idx = tree.indices.get(nid)
    if idx is not None:
        n_left = np.array(
            [int((tree.data.groups[g][ix, dec.dim] <= cut).sum()) for g, ix in enumerate(idx)],
            dtype=np.int64,
        )
    elif int(n_node.sum()) == 0:
        n_left = np.zeros_like(n_node)
    else:
        # terminated leaf: recover membership from the node's box
        n_left = np.empty_like(n_node)
        for g, pts in enumerate(tree.data.groups):
            inside = np.all((pts > lower) & (pts <= upper), axis=1)
            n_left[g] = int((pts[inside][:, dec.dim] <= cut).sum())
    n_right = n_node - n_left
    log_m = model.log_marginal(n_left, n_right, dec.frac, int(tree._depth[nid]))
    mix = refreshed_mixture(tree, nid, model) if mixture is None else mixture
    with np.errstate(divide="ignore"):
        log_mix = np.log(mix)
    nl, nr = int(n_left.sum()), int(n_right.sum())
    vol = -nl * np.log(dec.frac) - nr * np.log1p(-dec.frac)
    return _logsumexp(log_mix + log_m) + vol


def build_proposal(
    tree: PartitionTree,
    nid: int,
    model: StateModel,
    prior_cfg: TreePriorConfig,
    mixture: np.ndarray | None = None,
) -> ProposalTable:
    """Look-ahead proposal over all (dimension, location) candidates."""
    d = tree.dim
    n_grid = prior_cfg.n_grid
    lower, upper = tree.node_bounds(nid)
    cuts = grid_cuts(lower, upper, n_grid)
    counts, _ = _grid_counts(tree, nid, cuts, n_grid)
    n_node = tree._counts[nid]
    depth = int(tree._depth[nid])
    log_m = model.log_marginal_grid(counts, n_node, np.arange(1, n_grid) / n_grid, depth)
    mix = refreshed_mixture(tree, nid, model) if mixture is None else mixture
    log_h = _combine_scores(log_m, mix, counts, int(n_node.sum()), prior_cfg)
    log_lambda = prior_cfg.log_dim_weights(d)
    log_beta = log_location_weights(int(n_node.sum()), prior_cfg)
    log_joint = log_lambda[:, None] + log_beta[None, :] + log_h
    log_incr = _logsumexp(log_joint.ravel())
    by_dim = np.array([_logsumexp(row) for row in log_joint])
    return ProposalTable(
        log_h=log_h,
        log_joint=log_joint,
        log_incr=log_incr,
        log_dim_marginal=by_dim - _logsumexp(by_dim),
        log_loc_conditional=log_joint - by_dim[:, None],
        counts_left=counts,
        state_mix=mix,
        log_marginals=log_m,
    )


def _combine_scores(log_m, mix, counts, n_total, prior_cfg) -> np.ndarray:
    """Mix per-state split marginals and add the volume factor: (d, L)."""
    if log_m.shape[0] == 1:
        mixed = log_m[0]  # a single state always has mixture weight one
    else:
        with np.errstate(divide="ignore"):
            log_mix = np.log(mix)
        a = log_m + log_mix[:, None, None]
        top = a.max(axis=0)
        mixed = np.log(np.exp(a - top[None]).sum(axis=0)) + top
    nl = counts.sum(axis=0) if counts.shape[0] > 1 else counts[0]
    nr = n_total - nl
    return mixed - nl * prior_cfg._log_fracs[None, :] - nr * prior_cfg._log_cofracs[None, :]


def propagate_state_probs(log_m_sel: np.ndarray, mix: np.ndarray) -> np.ndarray:
    """Posterior state distribution at a freshly divided node: the reaching
    mixture reweighted by the chosen decision's split marginals."""
    with np.errstate(divide="ignore"):
        a = np.log(mix) + log_m_sel
    a -= a.max()
    p = np.exp(a)
    return p / p.sum()


def _sample_flat(log_joint: np.ndarray, rng: np.random.Generator):
    """Draw an index proportional to exp(log_joint); returns (k, log_total).

    The cumulative-sum draw shares its normalizer with the incremental
    weight, so the proposal probability of the chosen entry is exactly
    log_joint[k] - log_total.
    """
    a = log_joint.ravel()
    top = a.max()
    cum = np.cumsum(np.exp(a - top))
    total = cum[-1]
    u = rng.random() * total
    k = int(np.searchsorted(cum, u, side="right"))
    k = min(k, a.size - 1)
    return k, float(top + np.log(total))


def _divide_once(
    particle: Particle,
    model: StateModel,
    prior_cfg: TreePriorConfig,
    stop: StopConfig,
    rng: np.random.Generator,
) -> float:
    """Divide the oldest active leaf of one particle; returns log w_t."""
    tree = particle.tree
    nid = tree.next_to_divide()
    if nid is None:
        return 0.0
    d = tree.dim
    n_grid = prior_cfg.n_grid
    lower, upper = tree.node_bounds(nid)
    cuts = grid_cuts(lower, upper, n_grid)
    counts, buckets = _grid_counts(tree, nid, cuts, n_grid)
    n_node = tree._counts[nid]
    n_total = int(n_node.sum())
    depth = int(tree._depth[nid])
    fracs = np.arange(1, n_grid) / n_grid
    log_m = model.log_marginal_grid(counts, n_node, fracs, depth)
    mix = refreshed_mixture(tree, nid, model)
    log_h = _combine_scores(log_m, mix, counts, n_total, prior_cfg)
    log_lambda = prior_cfg.log_dim_weights(d)

    if not prior_cfg.spike:
        log_beta = log_location_weights(n_total, prior_cfg)
        log_joint = log_lambda[:, None] + log_beta[None, :] + log_h
        k, log_incr = _sample_flat(log_joint, rng)
        j, li = divmod(k, n_grid - 1)
        log_prop = float(log_joint.ravel()[k]) - log_incr
        refix = False
    else:
        j, li, log_incr, log_prop, refix = _sample_spike(
            tree, nid, log_h, log_lambda, n_total, prior_cfg, rng
        )

    loc = li + 1
    dec = Decision(int(j), int(loc), n_grid, refix=refix)
    left_idx, right_idx = [], []
    for g, ix in enumerate(tree.indices[nid]):
        if buckets[g] is None:
            left_idx.append(ix)
            right_idx.append(ix)
            continue
        mask = buckets[g][j] < loc
        left_idx.append(ix[mask])
        right_idx.append(ix[~mask])
    if model.n_states == 1:
        probs = _SINGLE_STATE
    else:
        # cached per-node state vector: plain path recursion from the root
        probs = propagate_state_probs(log_m[:, j, li], state_mixture(tree, nid, model))
    tree.apply_decision(
        nid,
        dec,
        stop,
        partition=(tuple(left_idx), tuple(right_idx)),
        state_probs=probs,
        cut=float(cuts[j, li]),
    )
    if model.n_states > 1:
        _update_running_messages(tree, nid, log_m[:, j, li], model)
    particle.cum_log_incr += log_incr
    particle.cum_log_proposal += log_prop
    particle.cum_log_h += float(log_h[j, li])
    return log_incr


def _update_running_messages(tree: PartitionTree, nid: int, log_m_sel: np.ndarray, model: StateModel):
    """Record the chosen split marginals and refresh subtree messages.

    The divided node's subtree message is just its split marginals (its
    children are fresh leaves, which contribute state-free factors); every
    ancestor's message is then recomputed from its two children, one walk
    up the path.
    """
    n_states = model.n_states
    if tree._own_log is None:
        tree._own_log = np.zeros((tree._parent.size, n_states))
        tree._log_m_sel = np.zeros((tree._parent.size, n_states))
    tree._log_m_sel[nid] = log_m_sel
    tree._own_log[nid] = log_m_sel
    cur = int(tree._parent[nid])
    while cur >= 0:
        first = int(tree._first_child[cur])
        depth = int(tree._depth[first])
        log_t = model.log_transition(depth)
        phi = _lse_axis(
            log_t[None, :, :] + tree._own_log[[first, first + 1]][:, None, :], 2
        )
        tree._own_log[cur] = tree._log_m_sel[cur] + phi[0] + phi[1]
        cur = int(tree._parent[cur])


def _sample_spike(tree, nid, log_h, log_lambda, n_total, prior_cfg, rng):
    """Draw (refix, dimension, location) under the spike-and-slab process.

    A refixed parent forces the midpoint; otherwise the refix indicator is
    drawn from its look-ahead posterior and the location from the matching
    branch.  Marginally over the indicator the proposal coincides with the
    plain one, and so does the incremental weight.
    """
    n_grid = prior_cfg.n_grid
    mid_li = n_grid // 2 - 1
    parent = int(tree._parent[nid])
    parent_refixed = parent >= 0 and bool(tree._refix[parent])
    log_mid = log_lambda + log_h[:, mid_li]  # (d,)
    if parent_refixed:
        log_incr = _logsumexp(log_mid)
        a = log_mid - log_incr
        cum = np.cumsum(np.exp(a))
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        j = min(j, a.size - 1)
        return j, mid_li, log_incr, float(a[j]), True

    logw = log_location_weights(n_total, prior_cfg)
    log_r = float(logw[mid_li])
    rest = np.delete(logw, mid_li)
    if rest.size == 0:
        # n_grid = 2: the midpoint is the only location, refixing is certain
        log_incr = _logsumexp(log_mid)
        a = log_mid - log_incr
        cum = np.cumsum(np.exp(a))
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        j = min(j, a.size - 1)
        return j, mid_li, log_incr, float(a[j]), True
    top = rest.max()
    log_co_r = float(top + np.log(np.exp(rest - top).sum()))  # log(1 - r)
    log_slab = logw - log_co_r
    log_slab[mid_li] = -np.inf

    log_w1 = log_r + _logsumexp(log_mid)
    slab_joint = log_lambda[:, None] + log_slab[None, :] + log_h
    log_w0 = log_co_r + _logsumexp(slab_joint.ravel())
    log_incr = float(np.logaddexp(log_w1, log_w0))
    refix_prob = np.exp(log_w1 - log_incr)
    if rng.random() < refix_prob:
        a = log_mid - _logsumexp(log_mid)
        cum = np.cumsum(np.exp(a))
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        j = min(j, a.size - 1)
        log_prop = float(np.log(refix_prob) + a[j])
        return j, mid_li, log_incr, log_prop, True
    k, log_slab_total = _sample_flat(slab_joint, rng)
    j, li = divmod(k, n_grid - 1)
    log_prop = float(np.log1p(-refix_prob) + slab_joint.ravel()[k] - log_slab_total)
    return j, li, log_incr, log_prop, False


def resample_tempered(
    particles: list[Particle], kappa: float, rng: np.random.Generator
) -> list[Particle]:
    """Systematic resampling on tempered weights a ~ W^kappa; the survivors
    carry weights proportional to W/a so the population stays unbiased."""
    log_w = np.array([p.log_weight for p in particles])
    if not np.isfinite(log_w.max()):
        raise RuntimeError("particle weights collapsed to zero; cannot resample")
    log_a = kappa * log_w
    log_a -= _logsumexp(log_a)
    a = np.exp(log_a)
    m = len(particles)
    positions = (np.arange(m) + rng.random()) / m
    idx = np.searchsorted(np.cumsum(a), positions, side="left")
    idx = np.minimum(idx, m - 1)
    new_log_w = log_w[idx] - log_a[idx]
    new_log_w -= _logsumexp(new_log_w)
    out = []
    for rank, i in enumerate(idx):
        p = particles[int(i)].clone()
        p.log_weight = float(new_log_w[rank])
        out.append(p)
    return out


def smc_step(
    particles: list[Particle],
    model: StateModel,
    prior_cfg: TreePriorConfig,
    cfg: SMCConfig,
    rngs: list[np.random.Generator],
    resample_rng: np.random.Generator,
    step: int,
) -> tuple[list[Particle], StepRecord]:
    """Advance every particle by one division and manage the weights."""
    n_active = 0
    for slot, particle in enumerate(particles):
        if particle.tree.queue:
            n_active += 1
            log_incr = _divide_once(particle, model, prior_cfg, cfg.stop, rngs[slot])
            particle.log_weight += log_incr
    log_w = np.array([p.log_weight for p in particles])
    norm = _logsumexp(log_w)
    if not np.isfinite(norm):
        raise RuntimeError("particle weights collapsed to zero")
    log_w -= norm
    for p, lw in zip(particles, log_w):
        p.log_weight = float(lw)
    current_ess = ess(np.exp(log_w))
    resampled = False
    if n_active and current_ess < cfg.ess_frac * len(particles):
        particles = resample_tempered(particles, cfg.kappa, resample_rng)
        resampled = True
        log_w = np.array([p.log_weight for p in particles])
    record = StepRecord(
        step=step,
        ess=current_ess,
        resampled=resampled,
        n_active=n_active,
        log_w_min=float(log_w.min()),
        log_w_max=float(log_w.max()),
    )
    return particles, record


def run(
    data: GroupedDataset,
    model: StateModel,
    prior_cfg: TreePriorConfig,
    cfg: SMCConfig,
) -> SMCResult:
    """Run the particle filter until every tree has stopped growing."""
    model.check_groups(data.n_groups)
    start = time.perf_counter()
    template = PartitionTree(data, cfg.stop)
    particles = [Particle(template.clone()) for _ in range(cfg.n_particles)]
    log_uniform = -np.log(cfg.n_particles)
    for p in particles:
        p.log_weight = log_uniform
    rngs = [particle_stream(cfg.seed, slot) for slot in range(cfg.n_particles)]
    resample_rng = resample_stream(cfg.seed)
    diagnostics: list[StepRecord] = []
    peak_nodes = sum(p.tree.n_nodes for p in particles)
    step = 0
    while any(p.tree.queue for p in particles):
        step += 1
        particles, record = smc_step(
            particles, model, prior_cfg, cfg, rngs, resample_rng, step
        )
        diagnostics.append(record)
        peak_nodes = max(peak_nodes, sum(p.tree.n_nodes for p in particles))
    log_w = np.array([p.log_weight for p in particles])
    log_w -= _logsumexp(log_w)
    return SMCResult(
        particles=particles,
        log_weights=log_w,
        diagnostics=diagnostics,
        wall_time=time.perf_counter() - start,
        peak_nodes=peak_nodes,
        seed=cfg.seed,
    )
