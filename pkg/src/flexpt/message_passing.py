"""Exact conditional inference on a sampled tree.

Two passes of dynamic programming over the node arena: an upward pass
accumulates, for every node and latent state, the marginal likelihood of
the data in the node's subtree (given the node's own state, and given the
parent's state); a downward pass turns those into posterior transition
matrices and marginal state posteriors.  The root's likelihood mixture is
the tree's overall marginal likelihood, which scores trees for MAP
selection.  For the two-sample coupling model a further bottom-up recursion
yields the posterior probability that no node in the tree is decoupled,
i.e. the global null.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .models import StateModel
from .priors import TreePriorConfig
from .tree import PartitionTree


@dataclass
class MessageSet:
    """Per-node messages of one tree, all aligned with node ids.

    log_lik_own[n, i]: log marginal likelihood of node n's subtree data
        given the node is in state i.
    log_lik_parent[n, i]: the same given the node's parent is in state i
        (state mixed out through one transition).
    trans_post[n, i, i']: posterior transition matrix, rows sum to one.
    state_marginals[n, i]: posterior probability of state i at node n;
        the first entry is the PMAP under the two-sample model.
    log_marginal: log marginal likelihood of the whole tree.
    """

    log_lik_own: np.ndarray
    log_lik_parent: np.ndarray
    trans_post: np.ndarray
    state_marginals: np.ndarray
    log_marginal: float

    def to_dict(self, tree: PartitionTree) -> dict:
        nodes = {}
        for nid in range(tree.n_nodes):
            nodes[str(nid)] = {
                "state_marginals": [float(x) for x in self.state_marginals[nid]],
                "log_lik_own": [float(x) for x in self.log_lik_own[nid]],
                "pmap": float(self.state_marginals[nid, 0]),
            }
        return {"log_marginal": float(self.log_marginal), "nodes": nodes}

    def to_json(self, tree: PartitionTree, **kwargs) -> str:
        return json.dumps(self.to_dict(tree), sort_keys=True, **kwargs)


def _lse_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=-1)
    safe = np.where(np.isfinite(top), top, 0.0)
    return safe + np.log(np.exp(a - safe[..., None]).sum(axis=-1))


def upward_pass(tree: PartitionTree, model: StateModel) -> MessageSet:
    """Bottom-up likelihood pass; fills the own/parent-state likelihoods.

    Leaves contribute the uniform baseline density of their points, i.e.
    volume^-count, identically over states; an internal node multiplies its
    children's parent-state messages by the split marginals of its own
    decision.  Node ids increase from parents to children, so one reverse
    sweep is a valid bottom-up order.
    """
    n_nodes = tree.n_nodes
    n_states = model.n_states
    log_own = np.zeros((n_nodes, n_states))
    log_par = np.zeros((n_nodes, n_states))
    counts = tree._counts
    for nid in range(n_nodes - 1, -1, -1):
        depth = int(tree._depth[nid])
        if tree._dec_dim[nid] < 0:
            total = int(counts[nid].sum())
            log_own[nid] = -total * float(tree._log_volume[nid])
        else:
            left = int(tree._first_child[nid])
            frac = int(tree._dec_loc[nid]) / int(tree._dec_grid[nid])
            log_m = model.log_marginal(
                counts[left], counts[left + 1], frac, depth
            )
            log_own[nid] = log_m + log_par[left] + log_par[left + 1]
        log_t = model.log_transition(depth)
        log_par[nid] = _lse_rows(log_t + log_own[nid][None, :])
    log_marginal = float(_lse_rows(model.initial_log() + log_own[0]))
    return MessageSet(
        log_lik_own=log_own,
        log_lik_parent=log_par,
        trans_post=np.zeros((n_nodes, n_states, n_states)),
        state_marginals=np.zeros((n_nodes, n_states)),
        log_marginal=log_marginal,
    )


def posterior_transitions(tree: PartitionTree, model: StateModel, messages: MessageSet) -> np.ndarray:
    """Posterior transition matrices given the tree, by Bayes' rule per row."""
    n_nodes = tree.n_nodes
    for nid in range(n_nodes):
        log_t = model.log_transition(int(tree._depth[nid]))
        raw = log_t + messages.log_lik_own[nid][None, :] - messages.log_lik_parent[nid][:, None]
        rows = np.exp(raw)
        sums = rows.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise FloatingPointError("posterior transition row lost all mass")
        messages.trans_post[nid] = rows / sums
    return messages.trans_post


def downward_pass(tree: PartitionTree, model: StateModel, messages: MessageSet) -> np.ndarray:
    """Top-down accumulation of the marginal state posteriors.

    The root marginal is the posterior version of the initial distribution;
    every other node left-multiplies its posterior transition matrix by the
    parent's marginal.
    """
    init = np.exp(
        model.initial_log()
        + messages.log_lik_own[0]
        - messages.log_marginal
    )
    messages.state_marginals[0] = init / init.sum()
    for nid in range(1, tree.n_nodes):
        parent = int(tree._parent[nid])
        messages.state_marginals[nid] = (
            messages.state_marginals[parent] @ messages.trans_post[nid]
        )
    return messages.state_marginals


def compute_messages(tree: PartitionTree, model: StateModel) -> MessageSet:
    """Run all passes and return the complete message set."""
    messages = upward_pass(tree, model)
    posterior_transitions(tree, model, messages)
    downward_pass(tree, model, messages)
    return messages


def map_tree_index(
    trees: list[PartitionTree],
    message_sets: list[MessageSet],
    prior_cfg: TreePriorConfig,
) -> int:
    """Index of the sampled tree maximizing prior times marginal likelihood.

    Ties break toward the lowest index, so duplicated particles after a
    resampling step pick the first copy.
    """
    if not trees:
        raise ValueError("empty tree population")
    best, best_score = 0, -np.inf
    for i, (tree, ms) in enumerate(zip(trees, message_sets)):
        score = tree.log_prior(prior_cfg) + ms.log_marginal
        if score > best_score:
            best, best_score = i, score
    return best


def global_null_probability(tree: PartitionTree, messages: MessageSet, model: StateModel) -> float:
    """Posterior probability that no internal node is in the decoupled state.

    Runs the bottom-up product recursion over the posterior transitions of
    the two-sample coupling model: conditioned on a parent in the plain
    coupled state, a subtree stays fully coupled if the node either absorbs
    or stays plainly coupled while both child subtrees do the same.  Leaves
    carry no split probabilities and contribute a factor of one.  The root
    row is the posterior initial distribution.
    """
    if getattr(model, "kind", None) != "mrs" or model.n_states != 3:
        raise ValueError("the global null is defined for the two-sample coupling model")
    n_nodes = tree.n_nodes
    psi = np.ones(n_nodes)
    for nid in range(n_nodes - 1, -1, -1):
        if tree._dec_dim[nid] < 0:
            continue
        left = int(tree._first_child[nid])
        prod = psi[left] * psi[left + 1]
        if nid == 0:
            row = messages.state_marginals[0]
        else:
            row = messages.trans_post[nid][1]
        psi[nid] = row[1] * prod + row[2]
    return float(psi[0])
