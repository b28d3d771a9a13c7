import json

import numpy as np
import pytest

from flexpt.geometry import Decision, GroupedDataset
from flexpt.priors import TreePriorConfig, log_location_weights
from flexpt.tree import PartitionTree, StopConfig, TreeError, should_terminate


def grid_data(n=16, d=1, seed=0):
    rng = np.random.default_rng(seed)
    return GroupedDataset.single(rng.random((n, d)) * 0.98 + 0.01)


def test_fresh_tree_offers_root():
    tree = PartitionTree(grid_data(), StopConfig(max_depth=3, min_count=2))
    assert tree.next_to_divide() == 0


def test_stop_rules():
    cfg = StopConfig(max_depth=15, min_count=5)
    assert should_terminate(15, 1000, cfg)
    assert should_terminate(3, 4, cfg)
    assert not should_terminate(0, 1000, cfg)
    # exactly min_count observations still divides
    assert not should_terminate(3, 5, cfg)


def test_root_only_when_tiny_sample():
    data = GroupedDataset.single(np.array([[0.3], [0.6]]))
    tree = PartitionTree(data, StopConfig(max_depth=15, min_count=5))
    assert tree.next_to_divide() is None
    assert tree.n_nodes == 1


def test_left_child_divided_before_right():
    tree = PartitionTree(grid_data(32), StopConfig(max_depth=4, min_count=1))
    stop = StopConfig(max_depth=4, min_count=1)
    left, right = tree.apply_decision(0, Decision(0, 1, 2), stop)
    assert tree.next_to_divide() == left
    tree.apply_decision(left, Decision(0, 1, 2), stop)
    assert tree.next_to_divide() == right


def test_breadth_first_three_step_replay():
    # after three divisions the queue holds exactly the two depth-2 children
    # of the first divided child, in creation order
    stop = StopConfig(max_depth=5, min_count=1)
    tree = PartitionTree(grid_data(64), stop)
    tree.apply_decision(0, Decision(0, 1, 2), stop)  # step 1: root -> 1, 2
    tree.apply_decision(1, Decision(0, 1, 2), stop)  # step 2: left child -> 3, 4
    tree.apply_decision(2, Decision(0, 1, 2), stop)  # step 3: right child -> 5, 6
    assert list(tree.queue) == [3, 4, 5, 6]
    assert tree.next_to_divide() == 3
    assert tree._depth[3] == 2
    leaves = tree.leaf_ids()
    assert len(leaves) == 4


def test_counts_partition_on_division():
    data = GroupedDataset.single(np.linspace(0.05, 0.95, 10).reshape(-1, 1))
    stop = StopConfig(max_depth=3, min_count=1)
    tree = PartitionTree(data, stop)
    left, right = tree.apply_decision(0, Decision(0, 1, 2), stop)
    assert tree.total_count(left) + tree.total_count(right) == 10
    assert tree.total_count(left) == 5


def test_all_points_one_side_terminates_empty_child():
    data = GroupedDataset.single(np.full((10, 1), 0.25))
    stop = StopConfig(max_depth=5, min_count=5)
    tree = PartitionTree(data, stop)
    left, right = tree.apply_decision(0, Decision(0, 1, 2), stop)
    assert tree.total_count(right) == 0
    assert bool(tree._terminated[right])
    assert right not in tree.indices


def test_double_division_rejected():
    stop = StopConfig(max_depth=3, min_count=1)
    tree = PartitionTree(grid_data(), stop)
    tree.apply_decision(0, Decision(0, 1, 2), stop)
    with pytest.raises(TreeError):
        tree.apply_decision(0, Decision(0, 1, 2), stop)


def test_leaf_tiling_and_count_conservation():
    rng = np.random.default_rng(2)
    data = GroupedDataset(
        [rng.random((30, 2)) * 0.98 + 0.01, rng.random((20, 2)) * 0.98 + 0.01]
    )
    stop = StopConfig(max_depth=4, min_count=2)
    tree = PartitionTree(data, stop)
    while (nid := tree.next_to_divide()) is not None:
        dim = int(rng.integers(0, 2))
        loc = int(rng.integers(1, 4))
        tree.apply_decision(nid, Decision(dim, loc, 4), stop)
        leaves = tree.leaf_ids()
        vol = np.exp(tree._log_volume[leaves]).sum()
        assert abs(vol - 1.0) < 1e-10
        counts = tree._counts[leaves].sum(axis=0)
        assert counts.tolist() == [30, 20]


def test_replay_from_decision_log_reproduces_tree():
    rng = np.random.default_rng(9)
    data = grid_data(64, d=2, seed=3)
    stop = StopConfig(max_depth=3, min_count=2)
    tree = PartitionTree(data, stop)
    log = []
    while (nid := tree.next_to_divide()) is not None:
        dec = Decision(int(rng.integers(0, 2)), int(rng.integers(1, 4)), 4)
        log.append(dec)
        tree.apply_decision(nid, dec, stop)
    replay = PartitionTree(data, stop)
    for dec in log:
        replay.apply_decision(replay.next_to_divide(), dec, stop)
    assert replay.to_json() == tree.to_json()


def test_log_prior_empty_tree_root_only():
    data = GroupedDataset.single(np.array([[0.3], [0.6]]))
    tree = PartitionTree(data, StopConfig(min_count=5))
    assert tree.log_prior(TreePriorConfig(n_grid=4)) == 0.0


def test_log_prior_single_split_uniform():
    data = grid_data(16, d=2)
    stop = StopConfig(max_depth=1, min_count=1)
    tree = PartitionTree(data, stop)
    tree.apply_decision(0, Decision(0, 2, 4), stop)
    cfg = TreePriorConfig(n_grid=4, eta=0.0)
    assert tree.log_prior(cfg) == pytest.approx(np.log(0.5) + np.log(1 / 3))


def test_log_prior_prefers_balanced_cut_under_penalty():
    data = grid_data(16, d=1)
    stop = StopConfig(max_depth=1, min_count=1)
    cfg = TreePriorConfig(n_grid=4, eta=0.1)
    mid = PartitionTree(data, stop)
    mid.apply_decision(0, Decision(0, 2, 4), stop)
    off = PartitionTree(data, stop)
    off.apply_decision(0, Decision(0, 1, 4), stop)
    assert mid.log_prior(cfg) > off.log_prior(cfg)


def test_log_prior_spike_chain():
    data = grid_data(64, d=1, seed=4)
    stop = StopConfig(max_depth=2, min_count=1)
    cfg = TreePriorConfig(n_grid=4, eta=0.0, spike=True)
    tree = PartitionTree(data, stop)
    tree.apply_decision(0, Decision(0, 2, 4, refix=True), stop)
    # children of a refixed node must refix; probability-one transitions
    tree.apply_decision(1, Decision(0, 2, 4, refix=True), stop)
    tree.apply_decision(2, Decision(0, 2, 4, refix=True), stop)
    # root refix prob is r(n=64) = 1/3 under eta=0; dims contribute log 1
    assert tree.log_prior(cfg) == pytest.approx(np.log(1 / 3))
    bad = PartitionTree(data, stop)
    bad.apply_decision(0, Decision(0, 2, 4, refix=True), stop)
    with pytest.raises(TreeError):
        bad.apply_decision(1, Decision(0, 1, 4), stop)
        bad.log_prior(cfg)


def test_json_round_trip_preserves_structure():
    rng = np.random.default_rng(12)
    data = grid_data(64, d=2, seed=5)
    stop = StopConfig(max_depth=3, min_count=2)
    tree = PartitionTree(data, stop)
    while (nid := tree.next_to_divide()) is not None:
        tree.apply_decision(
            nid, Decision(int(rng.integers(0, 2)), int(rng.integers(1, 4)), 4), stop
        )
    payload = tree.to_json()
    loaded = PartitionTree.from_json(payload)
    assert loaded.n_nodes == tree.n_nodes
    assert loaded.to_json() == payload


def test_dot_export_mentions_every_node():
    data = grid_data(32, d=1, seed=6)
    stop = StopConfig(max_depth=2, min_count=1)
    tree = PartitionTree(data, stop)
    while (nid := tree.next_to_divide()) is not None:
        tree.apply_decision(nid, Decision(0, 1, 2), stop)
    dot = tree.to_dot()
    for nid in range(tree.n_nodes):
        assert f"n{nid} " in dot or f"n{nid};" in dot
    assert dot.count("->") == tree.n_nodes - 1


def test_clone_isolation():
    data = grid_data(64, d=1, seed=8)
    stop = StopConfig(max_depth=3, min_count=1)
    tree = PartitionTree(data, stop)
    tree.apply_decision(0, Decision(0, 1, 2), stop)
    other = tree.clone()
    other.apply_decision(other.next_to_divide(), Decision(0, 1, 2), stop)
    assert other.n_nodes == tree.n_nodes + 2
    assert tree.next_to_divide() == 1
