"""Arena-backed binary partition trees grown breadth first.

A tree stores its nodes in struct-of-arrays form (one numpy buffer per
field) addressed by integer ids; ids are assigned in creation order, so a
forward sweep is top-down and a reverse sweep is bottom-up.  Node records
are never mutated except through ``apply_decision``, and cloning a tree for
particle resampling is a handful of buffer copies.

Division follows the oldest-active-leaf rule: a FIFO queue holds exactly
the active leaves, children are enqueued left before right, and a leaf
leaves the queue forever once it is divided or terminated (too deep or too
few observations).  Terminated leaves remain part of the tree.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import Decision, GroupedDataset, Hyperrectangle
from .priors import TreePriorConfig, log_location_weights, spike_weights


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class StopConfig:
    """Division stopping rule: maximum depth and minimum observation count."""

    max_depth: int = 15
    min_count: int = 5


def should_terminate(depth: int, total_count: int, cfg: StopConfig) -> bool:
    """A node stops dividing at the depth cap or strictly below min_count."""
    return depth >= cfg.max_depth or total_count < cfg.min_count


@dataclass
class NodeView:
    """Materialized snapshot of one node, for inspection and export."""

    id: int
    parent: int | None
    depth: int
    counts: np.ndarray
    log_volume: float
    terminated: bool
    decision: Decision | None
    children: tuple[int, int] | None
    lower: np.ndarray
    upper: np.ndarray
    state_probs: np.ndarray | None

    @property
    def rect(self) -> Hyperrectangle:
        return Hyperrectangle(self.lower, self.upper)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class PartitionTree:
    """A finite recursive binary partition of (0,1]^d with per-node counts."""

    __slots__ = (
        "data",
        "dim",
        "n_groups",
        "n_nodes",
        "step",
        "queue",
        "indices",
        "_parent",
        "_depth",
        "_first_child",
        "_dec_dim",
        "_dec_loc",
        "_dec_grid",
        "_dec_cut",
        "_refix",
        "_terminated",
        "_counts",
        "_log_volume",
        "_state_probs",
        "_own_log",
        "_log_m_sel",
    )

    def __init__(self, data: GroupedDataset | None, stop: StopConfig | None = None, dim: int | None = None):
        if data is None and dim is None:
            raise TreeError("need either data or an explicit dimension")
        self.data = data
        self.dim = data.dim if data is not None else int(dim)
        self.n_groups = data.n_groups if data is not None else 1
        cap = 64
        self._parent = np.full(cap, -1, dtype=np.int32)
        self._depth = np.zeros(cap, dtype=np.int32)
        self._first_child = np.full(cap, -1, dtype=np.int32)
        self._dec_dim = np.full(cap, -1, dtype=np.int32)
        self._dec_loc = np.zeros(cap, dtype=np.int32)
        self._dec_grid = np.zeros(cap, dtype=np.int32)
        self._dec_cut = np.zeros(cap, dtype=np.float64)
        self._refix = np.zeros(cap, dtype=bool)
        self._terminated = np.zeros(cap, dtype=bool)
        self._counts = np.zeros((cap, self.n_groups), dtype=np.int64)
        self._log_volume = np.zeros(cap, dtype=np.float64)
        self._state_probs: np.ndarray | None = None
        # sampler-owned running messages (multi-state models only):
        # current subtree log likelihood per own state, and the chosen
        # decision's per-state split marginals
        self._own_log: np.ndarray | None = None
        self._log_m_sel: np.ndarray | None = None
        self.n_nodes = 0
        self.step = 0
        self.queue: deque[int] = deque()
        self.indices: dict[int, tuple[np.ndarray, ...]] = {}
        if data is not None:
            root = self._append(parent=-1, depth=0, counts=np.array(data.sizes, dtype=np.int64), log_volume=0.0)
            stop = stop or StopConfig()
            if should_terminate(0, data.total, stop):
                self._terminated[root] = True
            else:
                self.indices[root] = tuple(np.arange(n, dtype=np.intp) for n in data.sizes)
                self.queue.append(root)

    # -- storage ---------------------------------------------------------

    def _grow(self):
        cap = self._parent.size
        new = max(2 * cap, 64)

        def enlarge(arr, fill=0):
            out = np.empty((new,) + arr.shape[1:], dtype=arr.dtype)
            out[:cap] = arr
            out[cap:] = fill
            return out

        self._parent = enlarge(self._parent, -1)
        self._depth = enlarge(self._depth)
        self._first_child = enlarge(self._first_child, -1)
        self._dec_dim = enlarge(self._dec_dim, -1)
        self._dec_loc = enlarge(self._dec_loc)
        self._dec_grid = enlarge(self._dec_grid)
        self._dec_cut = enlarge(self._dec_cut)
        self._refix = enlarge(self._refix, False)
        self._terminated = enlarge(self._terminated, False)
        self._counts = enlarge(self._counts)
        self._log_volume = enlarge(self._log_volume)
        if self._state_probs is not None:
            self._state_probs = enlarge(self._state_probs)
        if self._own_log is not None:
            self._own_log = enlarge(self._own_log)
        if self._log_m_sel is not None:
            self._log_m_sel = enlarge(self._log_m_sel)

    def _append(self, parent: int, depth: int, counts: np.ndarray, log_volume: float) -> int:
        nid = self.n_nodes
        if nid >= self._parent.size:
            self._grow()
        self._parent[nid] = parent
        self._depth[nid] = depth
        self._counts[nid] = counts
        self._log_volume[nid] = log_volume
        self.n_nodes = nid + 1
        return nid

    def clone(self) -> "PartitionTree":
        out = PartitionTree.__new__(PartitionTree)
        out.data = self.data
        out.dim = self.dim
        out.n_groups = self.n_groups
        out.n_nodes = self.n_nodes
        out.step = self.step
        out.queue = deque(self.queue)
        out.indices = dict(self.indices)
        for name in (
            "_parent",
            "_depth",
            "_first_child",
            "_dec_dim",
            "_dec_loc",
            "_dec_grid",
            "_dec_cut",
            "_refix",
            "_terminated",
            "_counts",
            "_log_volume",
        ):
            setattr(out, name, getattr(self, name).copy())
        for name in ("_state_probs", "_own_log", "_log_m_sel"):
            arr = getattr(self, name)
            setattr(out, name, None if arr is None else arr.copy())
        return out

    # -- node access -----------------------------------------------------

    def node_bounds(self, nid: int) -> tuple[np.ndarray, np.ndarray]:
        """Reconstruct a node's box by replaying the cuts along its path."""
        chain = []
        cur = nid
        while True:
            par = int(self._parent[cur])
            if par < 0:
                break
            chain.append((par, cur))
            cur = par
        lower = np.zeros(self.dim)
        upper = np.ones(self.dim)
        for par, child in reversed(chain):
            d = int(self._dec_dim[par])
            cut = float(self._dec_cut[par])
            if child == int(self._first_child[par]):
                upper[d] = cut
            else:
                lower[d] = cut
        return lower, upper

    def node(self, nid: int) -> NodeView:
        if not 0 <= nid < self.n_nodes:
            raise TreeError(f"no node {nid}")
        lower, upper = self.node_bounds(nid)
        dec = None
        children = None
        if self._dec_dim[nid] >= 0:
            dec = Decision(
                int(self._dec_dim[nid]),
                int(self._dec_loc[nid]),
                int(self._dec_grid[nid]),
                bool(self._refix[nid]),
            )
            fc = int(self._first_child[nid])
            children = (fc, fc + 1)
        probs = None
        if self._state_probs is not None and dec is not None:
            probs = self._state_probs[nid].copy()
        par = int(self._parent[nid])
        return NodeView(
            id=nid,
            parent=par if par >= 0 else None,
            depth=int(self._depth[nid]),
            counts=self._counts[nid].copy(),
            log_volume=float(self._log_volume[nid]),
            terminated=bool(self._terminated[nid]),
            decision=dec,
            children=children,
            lower=lower,
            upper=upper,
            state_probs=probs,
        )

    def is_internal(self, nid: int) -> bool:
        return self._dec_dim[nid] >= 0

    def children(self, nid: int) -> tuple[int, int] | None:
        fc = int(self._first_child[nid])
        return None if fc < 0 else (fc, fc + 1)

    def internal_ids(self) -> np.ndarray:
        return np.flatnonzero(self._dec_dim[: self.n_nodes] >= 0)

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self._dec_dim[: self.n_nodes] < 0)

    def total_count(self, nid: int) -> int:
        return int(self._counts[nid].sum())

    # -- growth ----------------------------------------------------------

    def next_to_divide(self) -> int | None:
        """Front of the FIFO queue: the oldest leaf still active."""
        return self.queue[0] if self.queue else None

    def apply_decision(
        self,
        nid: int,
        dec: Decision,
        stop: StopConfig,
        partition: tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]] | None = None,
        state_probs: np.ndarray | None = None,
        cut: float | None = None,
    ) -> tuple[int, int]:
        """Divide an active leaf; returns the (left, right) child ids.

        ``partition`` may carry precomputed (left, right) per-group index
        tuples (the SMC proposal already bucketed the points); otherwise
        points are split by comparing against the cut, ties going left.
        Children that hit the stopping rule are terminated immediately and
        never enqueued.
        """
        if self._dec_dim[nid] >= 0:
            raise TreeError(f"node {nid} is already divided")
        if self._terminated[nid]:
            raise TreeError(f"node {nid} is terminated")
        if not 0 <= dec.dim < self.dim:
            raise TreeError(f"invalid dimension {dec.dim}")
        idx = self.indices.pop(nid, None)
        if idx is None:
            raise TreeError(f"node {nid} has no point indices (not an active leaf)")
        if cut is None:
            lower, upper = self.node_bounds(nid)
            rel = np.arange(1, dec.n_grid) / dec.n_grid
            cut = float(lower[dec.dim] + rel[dec.loc - 1] * (upper[dec.dim] - lower[dec.dim]))
            if not lower[dec.dim] < cut < upper[dec.dim]:
                raise TreeError("cut does not fall inside the node")
        if partition is None:
            masks = [self.data.groups[g][ix, dec.dim] <= cut for g, ix in enumerate(idx)]
            left_indices = tuple(ix[m] for ix, m in zip(idx, masks))
            right_indices = tuple(ix[~m] for ix, m in zip(idx, masks))
        else:
            left_indices, right_indices = partition
        frac = dec.frac
        lv = float(self._log_volume[nid])
        depth = int(self._depth[nid]) + 1
        left_counts = np.array([len(ix) for ix in left_indices], dtype=np.int64)
        right_counts = self._counts[nid] - left_counts
        lid = self._append(nid, depth, left_counts, lv + np.log(frac))
        rid = self._append(nid, depth, right_counts, lv + np.log1p(-frac))
        self._dec_dim[nid] = dec.dim
        self._dec_loc[nid] = dec.loc
        self._dec_grid[nid] = dec.n_grid
        self._dec_cut[nid] = cut
        self._refix[nid] = dec.refix
        self._first_child[nid] = lid
        if state_probs is not None:
            if self._state_probs is None:
                buf = np.zeros((self._parent.size, len(state_probs)))
                self._state_probs = buf
            self._state_probs[nid] = state_probs
        if self.queue and self.queue[0] == nid:
            self.queue.popleft()
        else:
            self.queue.remove(nid)
        for cid, ind in ((lid, left_indices), (rid, right_indices)):
            if should_terminate(depth, self.total_count(cid), stop):
                self._terminated[cid] = True
            else:
                self.indices[cid] = tuple(ind)
                self.queue.append(cid)
        self.step += 1
        return lid, rid

    # -- priors ----------------------------------------------------------

    def log_prior(self, cfg: TreePriorConfig) -> float:
        """Joint log prior of all split decisions in the tree.

        Sums the dimension weight and the location weight (evaluated at the
        node's own sample size) over internal nodes; with the spike process
        enabled, the refix transitions replace the location term.
        """
        log_dim = cfg.log_dim_weights(self.dim)
        total = 0.0
        for nid in self.internal_ids():
            loc = int(self._dec_loc[nid])
            if int(self._dec_grid[nid]) != cfg.n_grid:
                raise TreeError("tree was grown with a different cut grid")
            total += float(log_dim[self._dec_dim[nid]])
            n_here = self.total_count(int(nid))
            par = int(self._parent[nid])
            parent_refixed = par >= 0 and bool(self._refix[par])
            if not cfg.spike:
                total += float(log_location_weights(n_here, cfg)[loc - 1])
                continue
            if parent_refixed:
                if not self._refix[nid]:
                    raise TreeError("invalid tree: refixing is absorbing")
                continue  # forced refix and midpoint: probability one
            log_r, log_slab = spike_weights(n_here, cfg)
            if self._refix[nid]:
                total += log_r
            else:
                contrib = np.log1p(-np.exp(log_r)) + log_slab[loc - 1]
                if not np.isfinite(contrib):
                    raise TreeError("zero-prior decision: location outside support")
                total += float(contrib)
        return total

    # -- export ----------------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for nid in range(self.n_nodes):
            view = self.node(nid)
            rec = {
                "id": view.id,
                "parent": view.parent,
                "depth": view.depth,
                "counts": [int(c) for c in view.counts],
                "log_volume": view.log_volume,
                "terminated": view.terminated,
                "lower": [float(x) for x in view.lower],
                "upper": [float(x) for x in view.upper],
            }
            if view.decision is not None:
                rec["decision"] = {
                    "dim": view.decision.dim,
                    "loc": view.decision.loc,
                    "n_grid": view.decision.n_grid,
                    "refix": view.decision.refix,
                    "cut": float(self._dec_cut[nid]),
                }
                rec["children"] = list(view.children)
            if view.state_probs is not None:
                rec["state_probs"] = [float(p) for p in view.state_probs]
            nodes.append(rec)
        return {"dim": self.dim, "n_groups": self.n_groups, "nodes": nodes}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, payload: dict) -> "PartitionTree":
        out = cls(None, dim=int(payload["dim"]))
        out.n_groups = int(payload["n_groups"])
        nodes = payload["nodes"]
        out._counts = np.zeros((max(len(nodes), 64), out.n_groups), dtype=np.int64)
        n_states = None
        for rec in nodes:
            if "state_probs" in rec:
                n_states = len(rec["state_probs"])
        if n_states:
            out._state_probs = np.zeros((max(len(nodes), 64), n_states))
        for rec in sorted(nodes, key=lambda r: r["id"]):
            nid = out._append(
                parent=-1 if rec["parent"] is None else int(rec["parent"]),
                depth=int(rec["depth"]),
                counts=np.array(rec["counts"], dtype=np.int64),
                log_volume=float(rec["log_volume"]),
            )
            if nid != rec["id"]:
                raise TreeError("node ids must be dense and in creation order")
            out._terminated[nid] = bool(rec["terminated"])
            dec = rec.get("decision")
            if dec is not None:
                out._dec_dim[nid] = int(dec["dim"])
                out._dec_loc[nid] = int(dec["loc"])
                out._dec_grid[nid] = int(dec["n_grid"])
                out._dec_cut[nid] = float(dec["cut"])
                out._refix[nid] = bool(dec.get("refix", False))
                out._first_child[nid] = int(rec["children"][0])
            if "state_probs" in rec:
                out._state_probs[nid] = np.array(rec["state_probs"])
        internal = out._dec_dim[: out.n_nodes] >= 0
        out.step = int(internal.sum())
        return out

    @classmethod
    def from_json(cls, text: str) -> "PartitionTree":
        return cls.from_dict(json.loads(text))

    def to_dot(self) -> str:
        lines = ["digraph partition_tree {", '  node [shape=box, fontsize=10];']
        for nid in range(self.n_nodes):
            view = self.node(nid)
            counts = ",".join(str(int(c)) for c in view.counts)
            if view.decision is not None:
                label = f"#{nid} depth {view.depth}\\nn=({counts})\\nx{view.decision.dim} <= {self._dec_cut[nid]:.4g}"
            else:
                state = "stopped" if view.terminated else "leaf"
                label = f"#{nid} depth {view.depth}\\nn=({counts})\\n{state}"
            lines.append(f'  n{nid} [label="{label}"];')
            if view.children is not None:
                lines.append(f"  n{nid} -> n{view.children[0]};")
                lines.append(f"  n{nid} -> n{view.children[1]};")
        lines.append("}")
        return "\n".join(lines)
